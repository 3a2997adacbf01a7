use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use skvg::attention::{grad_check, GradCheckOptions, GradCheckReport};
use skvg::checkpoint::{Checkpoint, ModelConfig};
use skvg::config::{ModelKind, RunConfig};
use skvg::dataio::{compute_stats, generate, split_dataset, Corpus, GroundingSample, Split, RECORDS_FILE};
use skvg::eval::{emit_report, evaluate_kevili, evaluate_probs, levilm_probs, EvalReport, ReportFormat};
use skvg::kevili::{Kevili, KeviliInput};
use skvg::levilm::{Levilm, Prepared, Regime, Strategy, TextVariant};
use skvg::{Error, Result};

use crate::log::event;

const CONFIG_ECHO: &str = "config.toml";

/// Creates `out_dir/name` and stores the resolved config in it.
fn artifact_dir(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    let dir = cfg.out_dir.join(name);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(CONFIG_ECHO), cfg.to_toml()?)?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    event("wrote", json!({ "path": path.display().to_string() }));
    Ok(())
}

fn generated(cfg: &RunConfig) -> Result<Corpus> {
    let mut g = generate(&cfg.generator, cfg.data.samples)?;
    g.samples = split_dataset(g.samples, cfg.seed)?;
    Ok(g.into())
}

/// The configured corpus, then `out_dir/data`, then a fresh in-memory one.
fn corpus(cfg: &RunConfig) -> Result<Corpus> {
    let dir = match &cfg.data.dir {
        Some(d) => Some(d.clone()),
        None => Some(cfg.out_dir.join("data")).filter(|d| d.join(RECORDS_FILE).exists()),
    };
    let mut c = match dir {
        Some(d) => {
            event("load_corpus", json!({ "dir": d.display().to_string() }));
            Corpus::load(&d)?
        }
        None => {
            event(
                "generate_corpus",
                json!({ "samples": cfg.data.samples, "seed": cfg.seed }),
            );
            generated(cfg)?
        }
    };
    if c.samples.iter().any(|s| s.split.is_none()) {
        c.samples = split_dataset(c.samples, cfg.seed)?;
    }
    Ok(c)
}

fn of_split(c: &Corpus, split: Split) -> Result<Vec<GroundingSample>> {
    let out: Vec<GroundingSample> = c.samples.iter().filter(|s| s.split == Some(split)).cloned().collect();
    if out.is_empty() {
        return Err(Error::Empty("split"));
    }
    Ok(out)
}

pub fn generate_cmd(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.data.dir.clone().unwrap_or_else(|| cfg.out_dir.join("data"));
    let c = generated(cfg)?;
    c.save(&dir)?;
    fs::write(dir.join(CONFIG_ECHO), cfg.to_toml()?)?;
    event(
        "generated",
        json!({ "dir": dir.display().to_string(), "samples": c.samples.len(), "images": c.images.len() }),
    );
    Ok(())
}

pub fn stats_cmd(cfg: &RunConfig) -> Result<()> {
    let c = corpus(cfg)?;
    let stats = compute_stats(&c.samples, &cfg.generator.lexicon())?;
    if let Some(m) = &c.manifest {
        if m.difficulty_counts != stats.difficulty_counts || m.area_counts != stats.area_counts {
            return Err(Error::Check("corpus statistics disagree with its manifest".into()));
        }
    }
    let dir = artifact_dir(cfg, "stats")?;
    write(&dir.join("stats.json"), &(serde_json::to_string_pretty(&stats)? + "\n"))?;
    let table = stats.table();
    write(&dir.join("stats.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn swap_groups(cfg: &RunConfig) -> Vec<Vec<String>> {
    let g = &cfg.generator;
    vec![g.names.clone(), g.relation_kinds.clone(), g.professions.clone()]
}

fn new_levilm(cfg: &RunConfig, train: &[GroundingSample]) -> Result<Levilm> {
    let vocab = Levilm::vocab_for(train, cfg.levilm())?;
    let mut m = Levilm::new(cfg.levilm().clone(), vocab, cfg.seed)?;
    if cfg.levilm().swap_words {
        m.set_swap_groups(&swap_groups(cfg));
    }
    Ok(m)
}

fn prepare_levilm(
    m: &Levilm,
    c: &Corpus,
    samples: &[GroundingSample],
    text: TextVariant,
    cfg: &RunConfig,
) -> Result<Vec<Prepared>> {
    m.prepare_all(samples, |s| c.image(s), text, &cfg.generator.lexicon())
}

fn fit_levilm(
    cfg: &RunConfig,
    c: &Corpus,
    train: &[GroundingSample],
    text: TextVariant,
    regime: Regime,
) -> Result<Levilm> {
    let mut m = new_levilm(cfg, train)?;
    let prepared = prepare_levilm(&m, c, train, text, cfg)?;
    event(
        "train_start",
        json!({ "model": "levilm", "text": text.name(), "regime": regime.name(), "samples": prepared.len() }),
    );
    m.train(&prepared, regime, cfg.seed, |l| {
        event(
            "epoch",
            json!({ "text": text.name(), "regime": regime.name(), "epoch": l.epoch, "steps": l.steps, "loss": l.loss, "lr_factor": l.lr_factor }),
        );
    })?;
    Ok(m)
}

fn kevili_inputs(m: &Kevili, c: &Corpus, samples: &[GroundingSample], text: TextVariant) -> Result<Vec<KeviliInput>> {
    m.prepare_all(samples, |s| c.image(s), text.uses_knowledge())
}

fn fit_kevili(cfg: &RunConfig, c: &Corpus, train: &[GroundingSample], text: TextVariant) -> Result<Kevili> {
    let mut m = Kevili::new(cfg.kevili().clone(), Kevili::vocab_for(train), cfg.seed)?;
    let inputs = kevili_inputs(&m, c, train, text)?;
    event(
        "train_start",
        json!({ "model": "kevili", "text": text.name(), "samples": inputs.len() }),
    );
    m.train(&inputs, cfg.seed, |l, _| {
        event(
            "epoch",
            json!({ "text": text.name(), "epoch": l.epoch, "steps": l.steps, "loss": l.loss, "lr_factor": l.lr_factor }),
        );
        Ok(true)
    })?;
    Ok(m)
}

fn method(regime: Regime) -> String {
    format!("LeViLM ({regime})")
}

fn check_kevili_text(text: TextVariant) -> Result<()> {
    if text == TextVariant::QKS {
        return Err(Error::Config("KeViLI takes Q or Q+K text only".into()));
    }
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let c = corpus(cfg)?;
    let train = of_split(&c, Split::Train)?;
    let t = &cfg.train;
    let dir = artifact_dir(cfg, "train")?;
    let (checkpoint, logs) = match t.model {
        ModelKind::Levilm => {
            let mut m = new_levilm(cfg, &train)?;
            let prepared = prepare_levilm(&m, &c, &train, t.text, cfg)?;
            let logs = m.train(&prepared, t.regime, cfg.seed, |l| event("epoch", json!(l)))?;
            let lines: Vec<String> = logs
                .iter()
                .map(serde_json::to_string)
                .collect::<serde_json::Result<_>>()?;
            (Checkpoint::of_levilm(&m), lines)
        }
        ModelKind::Kevili => {
            check_kevili_text(t.text)?;
            let mut m = Kevili::new(cfg.kevili().clone(), Kevili::vocab_for(&train), cfg.seed)?;
            let inputs = kevili_inputs(&m, &c, &train, t.text)?;
            let logs = m.train(&inputs, cfg.seed, |l, _| {
                event("epoch", json!(l));
                Ok(true)
            })?;
            let lines: Vec<String> = logs
                .iter()
                .map(serde_json::to_string)
                .collect::<serde_json::Result<_>>()?;
            (Checkpoint::of_kevili(&m), lines)
        }
    };
    write(&dir.join("loss.jsonl"), &lines_text(&logs))?;
    checkpoint.save(&dir.join("checkpoint.json"))?;
    event(
        "checkpoint",
        json!({ "path": dir.join("checkpoint.json").display().to_string() }),
    );
    Ok(())
}

fn lines_text(lines: &[String]) -> String {
    lines.iter().map(|l| format!("{l}\n")).collect()
}

fn levilm_reports(
    cfg: &RunConfig,
    m: &Levilm,
    c: &Corpus,
    samples: &[GroundingSample],
    text: TextVariant,
    regime: Regime,
    strategies: &[Strategy],
) -> Result<Vec<EvalReport>> {
    let prepared = prepare_levilm(m, c, samples, text, cfg)?;
    let probs = levilm_probs(m, &prepared)?;
    strategies
        .iter()
        .map(|&s| {
            evaluate_probs(
                samples,
                &prepared,
                &probs,
                s,
                cfg.seed,
                cfg.eval.r_draws,
                &method(regime),
                text,
            )
        })
        .collect()
}

fn publish(cfg: &RunConfig, name: &str, reports: &[EvalReport]) -> Result<()> {
    let dir = artifact_dir(cfg, name)?;
    write(&dir.join("reports.json"), &emit_report(reports, ReportFormat::Json)?)?;
    let table = emit_report(reports, ReportFormat::Table)?;
    write(&dir.join("table.txt"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn eval_cmd(cfg: &RunConfig) -> Result<()> {
    let c = corpus(cfg)?;
    let samples = of_split(&c, cfg.eval.split)?;
    let path = cfg
        .eval
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("train").join("checkpoint.json"));
    let ck = Checkpoint::load(&path)?;
    let text = cfg.train.text;
    let reports = match ck.model {
        ModelConfig::Levilm(_) => {
            let m = ck.into_levilm()?;
            levilm_reports(cfg, &m, &c, &samples, text, cfg.train.regime, &cfg.eval.strategies)?
        }
        ModelConfig::Kevili(_) => {
            check_kevili_text(text)?;
            let m = ck.into_kevili()?;
            let inputs = kevili_inputs(&m, &c, &samples, text)?;
            vec![evaluate_kevili(&m, &samples, &inputs, text)?]
        }
    };
    check_dominance(&reports)?;
    publish(cfg, "eval", &reports)
}

/// Fails unless U is at least H and R in every cell of each run.
pub fn check_dominance(reports: &[EvalReport]) -> Result<()> {
    let find = |r: &EvalReport, s: Strategy| {
        reports
            .iter()
            .find(|o| o.method == r.method && o.text == r.text && o.criteria == s.name())
    };
    for u in reports.iter().filter(|r| r.criteria == Strategy::U.name()) {
        for other in [Strategy::H, Strategy::R].iter().filter_map(|&s| find(u, s)) {
            let cells = std::iter::once((&u.overall, &other.overall))
                .chain(u.difficulty.iter().map(|(k, c)| (c, &other.difficulty[k])))
                .chain(u.area.iter().map(|(k, c)| (c, &other.area[k])));
            for (a, b) in cells {
                if a.accuracy < b.accuracy {
                    return Err(Error::Check(format!(
                        "strategy dominance violated for {} {}: U {} < {} {}",
                        u.method, u.text, a.accuracy, other.criteria, b.accuracy
                    )));
                }
            }
        }
    }
    Ok(())
}

pub fn matrix_cmd(cfg: &RunConfig) -> Result<()> {
    let c = corpus(cfg)?;
    let train = of_split(&c, Split::Train)?;
    let test = of_split(&c, cfg.eval.split)?;
    let mut reports = Vec::new();
    for &text in &cfg.matrix.kevili {
        check_kevili_text(text)?;
        let m = fit_kevili(cfg, &c, &train, text)?;
        let inputs = kevili_inputs(&m, &c, &test, text)?;
        let r = evaluate_kevili(&m, &test, &inputs, text)?;
        event(
            "row",
            json!({ "method": r.method, "text": text.name(), "criteria": r.criteria, "overall": r.overall.accuracy }),
        );
        reports.push(r);
    }
    for cell in &cfg.matrix.levilm {
        let m = fit_levilm(cfg, &c, &train, cell.text, cell.regime)?;
        let rows = levilm_reports(cfg, &m, &c, &test, cell.text, cell.regime, &cfg.matrix.strategies)?;
        check_dominance(&rows)?;
        for r in &rows {
            event(
                "row",
                json!({ "method": r.method, "text": r.text.name(), "criteria": r.criteria, "overall": r.overall.accuracy }),
            );
        }
        reports.extend(rows);
    }
    check_dominance(&reports)?;
    event("dominance", json!({ "ok": true }));
    publish(cfg, "matrix", &reports)
}

pub fn gradcheck_cmd(cfg: &RunConfig) -> Result<()> {
    let g = &cfg.gradcheck;
    let options = GradCheckOptions {
        epsilon: g.epsilon,
        max_entries_per_param: g.max_entries_per_param,
        ..GradCheckOptions::default()
    };
    let c = generate(
        &cfg.generator,
        cfg.generator.stories_per_image * cfg.generator.queries_per_story,
    )?;
    let c: Corpus = c.into();
    let sample = &c.samples[0];
    let raster = c.image(sample)?;

    let k = Kevili::new(cfg.kevili().clone(), Kevili::vocab_for(&c.samples), cfg.seed)?;
    let kx = k.prepare(sample, raster, true)?;
    let kr = grad_check(k.loss_fn(&kx), &k.store, options)?;

    let l = Levilm::new(
        cfg.levilm().clone(),
        Levilm::vocab_for(&c.samples, cfg.levilm())?,
        cfg.seed,
    )?;
    let lx = l.prepare(sample, raster, TextVariant::QKS, &cfg.generator.lexicon())?;
    let lr = grad_check(l.loss_fn(&lx), &l.store, options)?;

    let entry = |name: &str, r: &GradCheckReport| {
        json!({
            "model": name,
            "max_relative_error": r.max_relative_error,
            "worst_param": r.worst_param,
            "checked": r.checked,
            "pass": r.max_relative_error < g.tolerance,
        })
    };
    let out = json!({
        "epsilon": g.epsilon,
        "tolerance": g.tolerance,
        "results": [entry("kevili", &kr), entry("levilm", &lr)],
    });
    let dir = artifact_dir(cfg, "gradcheck")?;
    write(
        &dir.join("gradcheck.json"),
        &(serde_json::to_string_pretty(&out)? + "\n"),
    )?;
    for (name, r) in [("kevili", &kr), ("levilm", &lr)] {
        println!(
            "{name:<8} max relative error {:.3e} over {} entries",
            r.max_relative_error, r.checked
        );
    }
    if kr.max_relative_error >= g.tolerance || lr.max_relative_error >= g.tolerance {
        return Err(Error::Check(format!(
            "gradient check exceeded tolerance {}",
            g.tolerance
        )));
    }
    Ok(())
}
