use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::linguistic::{AliasTable, DependencyTree, Span};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One drawn object together with the story facts about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntity {
    pub id: String,
    pub name: String,
    pub color: String,
    pub shape: String,
    pub profession: String,
    pub bbox: BBox,
}

/// `target` is `anchor`'s `kind` (e.g. Mia is Jake's colleague).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub kind: String,
    pub anchor: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub entities: Vec<SceneEntity>,
    pub relations: Vec<Relation>,
}

impl SceneGraph {
    pub fn entity(&self, id: &str) -> Option<&SceneEntity> {
        self.entities.iter().find(|e| e.id == id)
    }
}

/// Generator-emitted linguistic structure for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub tree: DependencyTree,
    /// Head-entity span in the query.
    pub head: Span,
    /// Mentions of the referent in the knowledge, in textual order.
    pub mentions: Vec<Span>,
    pub aliases: AliasTable,
    pub referent: String,
}

/// One (image, knowledge, query, box) record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingSample {
    pub id: String,
    pub image_id: String,
    pub image_path: String,
    pub knowledge: String,
    pub query: String,
    /// Pixel corners `[x1, y1, x2, y2]`.
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<GoldAnnotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneGraph>,
}
