use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::prompt::{build_prompt, spans_to_tokens, Source};
use super::regions::{anchors, build_target};
use super::scoring::matching_loss_with_grad;
use crate::attention::{cross_layer_on, self_layer_on, LayerParams};
use crate::autograd::{check_finite, sigmoid, Init, ParamGrads, ParamGroup, ParamId, ParamStore, Tape, Var};
use crate::dataio::GroundingSample;
use crate::encoders::{ImageEncoder, PatchGrid, Raster, TextEncoder};
use crate::error::{shape_err, Error, Result};
use crate::geometry::BBox;
use crate::linguistic::{extract_head, resolve_corefs, CorefHints, Lexicon, Span};
use crate::optim::{multi_step_decay, AdamW, AdamWConfig, LEVILM_MILESTONES};
use crate::tokenizer::{Vocab, UNK_ID};

/// Text fed to the prompt and the entity columns trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TextVariant {
    #[serde(rename = "Q")]
    Q,
    #[serde(rename = "Q+K")]
    QK,
    #[serde(rename = "Q+K+S")]
    QKS,
}

impl TextVariant {
    pub const ALL: [TextVariant; 3] = [TextVariant::Q, TextVariant::QK, TextVariant::QKS];

    pub fn name(self) -> &'static str {
        match self {
            TextVariant::Q => "Q",
            TextVariant::QK => "Q+K",
            TextVariant::QKS => "Q+K+S",
        }
    }

    pub fn uses_knowledge(self) -> bool {
        self != TextVariant::Q
    }
}

impl fmt::Display for TextVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TextVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TextVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown text variant {s:?}")))
    }
}

/// Which parameters are trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Regime {
    /// No training.
    ZS,
    /// Scoring projections only.
    LP,
    /// Everything.
    FT,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::ZS, Regime::LP, Regime::FT];

    pub fn name(self) -> &'static str {
        match self {
            Regime::ZS => "ZS",
            Regime::LP => "LP",
            Regime::FT => "FT",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevilmConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub max_knowledge_tokens: usize,
    /// Position table size; longer prompts are rejected.
    pub max_prompt_tokens: usize,
    pub width: usize,
    pub heads: usize,
    pub image_layers: usize,
    pub text_layers: usize,
    pub fusion_layers: usize,
    /// Anchor side lengths in patch cells.
    pub anchor_scales: Vec<f64>,
    pub lr_head: f64,
    pub lr_encoder: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Permute person names, relation words and professions within each
    /// training example.
    #[serde(default)]
    pub swap_words: bool,
}

impl LevilmConfig {
    pub fn toy() -> Self {
        LevilmConfig {
            image_size: 320,
            patch_size: 64,
            max_knowledge_tokens: 256,
            max_prompt_tokens: 320,
            width: 64,
            heads: 4,
            image_layers: 1,
            text_layers: 2,
            fusion_layers: 1,
            anchor_scales: vec![1.0, 2.0],
            lr_head: 1e-3,
            lr_encoder: 1e-3,
            weight_decay: 1e-4,
            epochs: 20,
            batch_size: 16,
            swap_words: false,
        }
    }

    pub fn paper() -> Self {
        LevilmConfig {
            image_size: 640,
            patch_size: 32,
            max_knowledge_tokens: 256,
            max_prompt_tokens: 320,
            width: 256,
            heads: 8,
            image_layers: 6,
            text_layers: 12,
            fusion_layers: 6,
            anchor_scales: vec![1.0, 2.0],
            lr_head: 1e-4,
            lr_encoder: 1e-5,
            weight_decay: 1e-4,
            epochs: 12,
            batch_size: 32,
            swap_words: false,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "paper" => Ok(Self::paper()),
            _ => Err(Error::Config(format!("unknown preset {name:?}"))),
        }
    }

    pub fn grid(&self) -> Result<PatchGrid> {
        PatchGrid::new(self.image_size, self.patch_size)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.anchor_scales.is_empty() || self.anchor_scales.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("anchor scales must be positive and non-empty".into()));
        }
        if self.max_prompt_tokens == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "max_prompt_tokens and batch_size must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr_head: self.lr_head,
            lr_encoder: self.lr_encoder,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct FusionBlock {
    pub text_self: LayerParams,
    pub image_self: LayerParams,
    pub text_cross: LayerParams,
    pub image_cross: LayerParams,
}

/// A sample turned into model inputs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub id: String,
    pub ids: Vec<usize>,
    pub pooled: Arc<Array2<f64>>,
    /// Prompt token ranges: head entity first, then retained mentions.
    pub entities: Vec<Range<usize>>,
    /// Anchors in the sample's own image coordinates.
    pub regions: Arc<Vec<BBox>>,
    /// `N x entities.len()`.
    pub target: Array2<f64>,
    pub gt: BBox,
}

impl Prepared {
    pub fn mentions(&self) -> usize {
        self.entities.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub loss: f64,
    pub lr_factor: f64,
}

#[derive(Debug, Clone)]
pub struct Levilm {
    pub config: LevilmConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    pub grid: PatchGrid,
    image: ImageEncoder,
    text: TextEncoder,
    fusion: Vec<FusionBlock>,
    norms: [ParamId; 4],
    region_proj: Vec<ParamId>,
    entity_proj: ParamId,
    anchors: Vec<BBox>,
    swaps: Vec<Vec<usize>>,
}

impl Levilm {
    pub fn new(config: LevilmConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (d, h) = (config.width, config.heads);
        let image = ImageEncoder::new(&mut store, "image", grid, d, h, config.image_layers, &mut rng)?;
        for id in image_ids(&image) {
            store.set_group(id, ParamGroup::Head);
        }
        let text = TextEncoder::new(
            &mut store,
            "text",
            vocab.len(),
            config.max_prompt_tokens,
            d,
            h,
            config.text_layers,
            &mut rng,
        )?;
        let g = ParamGroup::Head;
        let mut layer = |store: &mut ParamStore, name: String| LayerParams::new(store, &name, d, h, 2 * d, g, &mut rng);
        let mut fusion = Vec::with_capacity(config.fusion_layers);
        for i in 0..config.fusion_layers {
            fusion.push(FusionBlock {
                text_self: layer(&mut store, format!("fusion{i}.text_self"))?,
                image_self: layer(&mut store, format!("fusion{i}.image_self"))?,
                text_cross: layer(&mut store, format!("fusion{i}.text_cross"))?,
                image_cross: layer(&mut store, format!("fusion{i}.image_cross"))?,
            });
        }
        let norms = [
            store.add("norm.text.gain", (1, d), Init::Ones, g, &mut rng),
            store.add("norm.text.bias", (1, d), Init::Zeros, g, &mut rng),
            store.add("norm.image.gain", (1, d), Init::Ones, g, &mut rng),
            store.add("norm.image.bias", (1, d), Init::Zeros, g, &mut rng),
        ];
        let region_proj = (0..config.anchor_scales.len())
            .map(|i| store.add(format!("score.region{i}"), (d, d), Init::FanIn, g, &mut rng))
            .collect();
        let entity_proj = store.add("score.entity", (d, d), Init::Normal(1.0 / d as f64), g, &mut rng);
        let anchors = anchors(grid, &config.anchor_scales)?;
        Ok(Levilm {
            config,
            vocab,
            store,
            grid,
            image,
            text,
            fusion,
            norms,
            region_proj,
            entity_proj,
            anchors,
            swaps: Vec::new(),
        })
    }

    /// Anchors in model input coordinates.
    pub fn anchors(&self) -> &[BBox] {
        &self.anchors
    }

    /// Parameters trained under linear probing.
    pub fn scoring_ids(&self) -> Vec<ParamId> {
        let mut ids = self.region_proj.clone();
        ids.push(self.entity_proj);
        ids
    }

    /// Word groups whose tokens are randomly permuted within each training
    /// example (e.g. person names). Words outside the vocabulary are ignored.
    pub fn set_swap_groups(&mut self, groups: &[Vec<String>]) {
        self.swaps = groups
            .iter()
            .map(|g| {
                let mut ids: Vec<usize> = g.iter().map(|w| self.vocab.id(w)).filter(|&i| i != UNK_ID).collect();
                ids.sort_unstable();
                ids.dedup();
                ids
            })
            .filter(|g| g.len() > 1)
            .collect();
    }

    fn swapped(&self, ex: &Prepared, rng: &mut ChaCha8Rng) -> Prepared {
        let mut map: HashMap<usize, usize> = HashMap::new();
        for g in &self.swaps {
            let mut to = g.clone();
            to.shuffle(rng);
            map.extend(g.iter().copied().zip(to));
        }
        let mut out = ex.clone();
        for id in &mut out.ids {
            if let Some(&t) = map.get(id) {
                *id = t;
            }
        }
        out
    }

    /// Vocabulary over the prompts of `samples`.
    pub fn vocab_for(samples: &[GroundingSample], config: &LevilmConfig) -> Result<Vocab> {
        let prompts = samples
            .iter()
            .map(|s| build_prompt(&s.query, Some(&s.knowledge), config.max_knowledge_tokens).map(|p| p.text))
            .collect::<Result<Vec<_>>>()?;
        Ok(Vocab::build(prompts.iter().map(String::as_str)))
    }

    /// Pooled patches of `raster` after resizing to the model input size.
    pub fn pool(&self, raster: &Raster) -> Result<Array2<f64>> {
        self.grid.pool(&raster.resized(self.config.image_size)?)
    }

    fn regions_for(&self, width: usize, height: usize) -> Result<Vec<BBox>> {
        let size = self.config.image_size as f64;
        let (sx, sy) = (width as f64 / size, height as f64 / size);
        self.anchors
            .iter()
            .map(|a| BBox::new(a.x1() * sx, a.y1() * sy, a.x2() * sx, a.y2() * sy))
            .collect()
    }

    pub fn prepare(
        &self,
        sample: &GroundingSample,
        raster: &Raster,
        variant: TextVariant,
        lexicon: &Lexicon,
    ) -> Result<Prepared> {
        let pooled = Arc::new(self.pool(raster)?);
        let regions = Arc::new(self.regions_for(raster.width, raster.height)?);
        self.prepare_with(sample, pooled, regions, variant, lexicon)
    }

    fn prepare_with(
        &self,
        sample: &GroundingSample,
        pooled: Arc<Array2<f64>>,
        regions: Arc<Vec<BBox>>,
        variant: TextVariant,
        lexicon: &Lexicon,
    ) -> Result<Prepared> {
        let knowledge = variant.uses_knowledge().then_some(sample.knowledge.as_str());
        let prompt = build_prompt(&sample.query, knowledge, self.config.max_knowledge_tokens)?;
        if prompt.len() > self.config.max_prompt_tokens {
            return Err(shape_err(
                "prepare",
                format!(
                    "{} prompt tokens exceed {}",
                    prompt.len(),
                    self.config.max_prompt_tokens
                ),
            ));
        }
        let tree = sample.gold.as_ref().map(|g| &g.tree);
        let head = extract_head(&sample.query, tree, lexicon);
        let head_span = match &head {
            Ok(h) => h.span,
            Err(_) => Span::new(0, sample.query.len()),
        };
        let head_range = prompt
            .map_span(Source::Query, head_span)?
            .ok_or_else(|| shape_err("prepare", "head entity missing from prompt"))?;
        let mut entities = vec![head_range];
        if variant == TextVariant::QKS {
            if let Ok(h) = &head {
                let hints = sample.gold.as_ref().map(|g| CorefHints {
                    aliases: &g.aliases,
                    referent: &g.referent,
                });
                let spans = resolve_corefs(h, &sample.knowledge, hints, lexicon);
                entities.extend(
                    spans_to_tokens(&spans, Source::Knowledge, &prompt)?
                        .into_iter()
                        .flatten(),
                );
            }
        }
        let target = build_target(&regions, &sample.bbox, entities.len() - 1);
        Ok(Prepared {
            id: sample.id.clone(),
            ids: prompt.token_ids(&self.vocab),
            pooled,
            entities,
            regions,
            target,
            gt: sample.bbox,
        })
    }

    /// Prepares many samples, pooling each distinct image once.
    pub fn prepare_all<'a>(
        &self,
        samples: &[GroundingSample],
        image: impl Fn(&GroundingSample) -> Result<&'a Raster>,
        variant: TextVariant,
        lexicon: &Lexicon,
    ) -> Result<Vec<Prepared>> {
        let mut cache: HashMap<&str, (Arc<Array2<f64>>, Arc<Vec<BBox>>)> = HashMap::new();
        let mut out = Vec::with_capacity(samples.len());
        for s in samples {
            let (pooled, regions) = match cache.get(s.image_id.as_str()) {
                Some(v) => v.clone(),
                None => {
                    let r = image(s)?;
                    let v = (Arc::new(self.pool(r)?), Arc::new(self.regions_for(r.width, r.height)?));
                    cache.insert(&s.image_id, v.clone());
                    v
                }
            };
            out.push(self.prepare_with(s, pooled, regions, variant, lexicon)?);
        }
        Ok(out)
    }

    /// Cross-modal fusion stack on encoded streams; `text_mask` hides padded
    /// prompt rows from the image stream.
    pub fn fuse_on(&self, tape: &mut Tape, image: Var, text: Var, text_mask: Option<&[bool]>) -> Result<(Var, Var)> {
        let (mut hi, mut hp) = (image, text);
        for b in &self.fusion {
            hp = self_layer_on(tape, &b.text_self, hp, text_mask)?;
            hi = self_layer_on(tape, &b.image_self, hi, None)?;
            hp = cross_layer_on(tape, &b.text_cross, hp, hi, None)?;
            hi = cross_layer_on(tape, &b.image_cross, hi, hp, text_mask)?;
        }
        Ok((hi, hp))
    }

    fn norm(&self, tape: &mut Tape, x: Var, gain: ParamId, bias: ParamId) -> Var {
        let g = tape.param(gain);
        let b = tape.param(bias);
        tape.layer_norm(x, g, b)
    }

    /// Region features `Z_I` (scale-major, matching the anchors).
    pub fn regions_on(&self, tape: &mut Tape, hi: Var) -> Result<Var> {
        let parts: Vec<Var> = self
            .region_proj
            .iter()
            .map(|&w| {
                let wv = tape.param(w);
                tape.matmul(hi, wv)
            })
            .collect();
        if parts.len() == 1 {
            Ok(parts[0])
        } else {
            tape.concat_rows(&parts)
        }
    }

    /// Alignment logits `N x (E + 1)` for a prepared sample.
    pub fn forward_on(&self, tape: &mut Tape, ex: &Prepared) -> Result<Var> {
        let hi = self.image.forward_on(tape, &ex.pooled)?;
        let hp = self.text.forward_on(tape, &ex.ids, None)?;
        let (hi, hp) = self.fuse_on(tape, hi, hp, None)?;
        let [tg, tb, ig, ib] = self.norms;
        let zp = self.norm(tape, hp, tg, tb);
        let hi = self.norm(tape, hi, ig, ib);
        let zi = self.regions_on(tape, hi)?;
        let pooled = tape.span_mean(zp, &ex.entities)?;
        let we = tape.param(self.entity_proj);
        let ze = tape.matmul(pooled, we);
        Ok(tape.matmul_bt(zi, ze))
    }

    pub fn scores(&self, ex: &Prepared) -> Result<Array2<f64>> {
        self.scores_with(&self.store, ex)
    }

    fn scores_with(&self, store: &ParamStore, ex: &Prepared) -> Result<Array2<f64>> {
        let mut tape = Tape::with_store(store);
        let out = self.forward_on(&mut tape, ex)?;
        Ok(tape.value(out).clone())
    }

    /// Sigmoid of the head-entity column.
    pub fn head_probs(&self, ex: &Prepared) -> Result<Vec<f64>> {
        Ok(self.scores(ex)?.column(0).iter().map(|&v| sigmoid(v)).collect())
    }

    /// Matching loss and gradients against `store` (which must share this
    /// model's layout).
    pub fn loss_and_grads(&self, store: &ParamStore, ex: &Prepared) -> Result<(f64, ParamGrads)> {
        let mut tape = Tape::with_store(store);
        let scores = self.forward_on(&mut tape, ex)?;
        let (value, grad) = matching_loss_with_grad(tape.value(scores), &ex.target)?;
        let loss = tape.loss(scores, value, grad)?;
        Ok((value, tape.backward(loss)?))
    }

    /// Mean loss and gradient over a batch, reduced in batch order.
    pub fn batch_grads(&self, batch: &[&Prepared]) -> Result<(f64, ParamGrads)> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let parts: Vec<Result<(f64, ParamGrads)>> = batch
            .par_iter()
            .map(|ex| self.loss_and_grads(&self.store, ex))
            .collect();
        let mut total = ParamGrads::zeros_like(&self.store);
        let mut loss = 0.0;
        for p in parts {
            let (l, g) = p?;
            loss += l;
            total.accumulate(&g);
        }
        let n = batch.len() as f64;
        total.scale(1.0 / n);
        Ok((loss / n, total))
    }

    /// Trains under `regime`; ZS leaves the weights untouched. Returns one
    /// log entry per epoch.
    pub fn train(
        &mut self,
        examples: &[Prepared],
        regime: Regime,
        seed: u64,
        mut on_epoch: impl FnMut(&EpochLog),
    ) -> Result<Vec<EpochLog>> {
        if regime == Regime::ZS || self.config.epochs == 0 {
            return Ok(Vec::new());
        }
        if examples.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let mut opt = AdamW::new(self.config.optimizer(), &self.store);
        if regime == Regime::LP {
            opt.train_only(&self.scoring_ids());
        }
        let bs = self.config.batch_size;
        let per_epoch = examples.len().div_ceil(bs);
        let total = per_epoch * self.config.epochs;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut logs = Vec::with_capacity(self.config.epochs);
        let mut step = 0;
        for epoch in 0..self.config.epochs {
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            let mut factor = 1.0;
            for chunk in order.chunks(bs) {
                let swapped: Vec<Prepared> = if self.swaps.is_empty() {
                    Vec::new()
                } else {
                    chunk.iter().map(|&i| self.swapped(&examples[i], &mut rng)).collect()
                };
                let batch: Vec<&Prepared> = if swapped.is_empty() {
                    chunk.iter().map(|&i| &examples[i]).collect()
                } else {
                    swapped.iter().collect()
                };
                let (loss, grads) = self.batch_grads(&batch)?;
                check_finite(loss, step)?;
                factor = multi_step_decay(step, total, &LEVILM_MILESTONES);
                opt.step(&mut self.store, &grads, factor)?;
                sum += loss * batch.len() as f64;
                step += 1;
            }
            let log = EpochLog {
                epoch,
                steps: step,
                loss: sum / examples.len() as f64,
                lr_factor: factor,
            };
            on_epoch(&log);
            logs.push(log);
        }
        Ok(logs)
    }

    /// Loss closure for gradient checking over a copy of the parameters.
    pub fn loss_fn<'a>(&'a self, ex: &'a Prepared) -> impl Fn(&ParamStore) -> Result<(f64, ParamGrads)> + 'a {
        move |store| self.loss_and_grads(store, ex)
    }
}

fn image_ids(e: &ImageEncoder) -> Vec<ParamId> {
    let mut ids = vec![e.proj_w, e.proj_b, e.pos];
    for l in &e.layers {
        ids.extend(l.all_ids());
    }
    ids
}
