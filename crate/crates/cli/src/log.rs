//! Line-delimited JSON events on stderr.

use serde_json::{Map, Value};

pub fn event(name: &str, fields: Value) {
    let mut line = Map::new();
    line.insert("event".into(), Value::String(name.into()));
    if let Value::Object(f) = fields {
        line.extend(f);
    }
    eprintln!("{}", Value::Object(line));
}
