//! One-stage grounding: knowledge is embedded into the image features, the
//! result is fused with the query and a learnable `[REG]` token, and one box
//! is regressed directly.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{cross_layer_on, self_layer_on, FeatureArray, FeatureRole, LayerParams};
use crate::autograd::{check_finite, Init, ParamGrads, ParamGroup, ParamId, ParamStore, Tape, Var};
use crate::dataio::GroundingSample;
use crate::encoders::{ImageEncoder, PatchGrid, Raster, TextEncoder};
use crate::error::{shape_err, Error, Result};
use crate::geometry::{grounding_loss_with_grad, BBox, CenterBox, ImageSize, SMOOTH_L1_BETA};
use crate::optim::{step_decay, AdamW, AdamWConfig};
use crate::tokenizer::{tokenize, PaddedIds, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeviliConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub max_query_tokens: usize,
    pub max_knowledge_tokens: usize,
    pub width: usize,
    pub heads: usize,
    pub image_layers: usize,
    pub text_layers: usize,
    pub embed_layers: usize,
    pub interaction_layers: usize,
    pub mlp_hidden: usize,
    pub lr_head: f64,
    pub lr_encoder: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub decay_epoch: usize,
    pub batch_size: usize,
}

impl KeviliConfig {
    pub fn toy() -> Self {
        KeviliConfig {
            image_size: 320,
            patch_size: 64,
            max_query_tokens: 16,
            max_knowledge_tokens: 192,
            width: 64,
            heads: 4,
            image_layers: 1,
            text_layers: 1,
            embed_layers: 2,
            interaction_layers: 2,
            mlp_hidden: 64,
            lr_head: 1e-3,
            lr_encoder: 1e-3,
            weight_decay: 1e-4,
            epochs: 30,
            decay_epoch: 20,
            batch_size: 8,
        }
    }

    pub fn paper() -> Self {
        KeviliConfig {
            image_size: 640,
            patch_size: 32,
            max_query_tokens: 32,
            max_knowledge_tokens: 256,
            width: 256,
            heads: 8,
            image_layers: 6,
            text_layers: 12,
            embed_layers: 2,
            interaction_layers: 6,
            mlp_hidden: 256,
            lr_head: 1e-4,
            lr_encoder: 1e-5,
            weight_decay: 1e-4,
            epochs: 90,
            decay_epoch: 60,
            batch_size: 64,
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
        if self.max_query_tokens == 0 || self.max_knowledge_tokens == 0 {
            return Err(Error::Config("token limits must be positive".into()));
        }
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.mlp_hidden == 0 || self.batch_size == 0 {
            return Err(Error::Config("mlp_hidden and batch_size must be positive".into()));
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

/// A sample turned into model inputs.
#[derive(Debug, Clone)]
pub struct KeviliInput {
    pub id: String,
    pub pooled: Arc<Array2<f64>>,
    pub query: PaddedIds,
    /// `None` runs the query-only path.
    pub knowledge: Option<PaddedIds>,
    /// Ground truth in normalized center-size form.
    pub target: CenterBox,
    pub gt: BBox,
    pub image: ImageSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeviliEpoch {
    pub epoch: usize,
    pub steps: usize,
    pub loss: f64,
    pub lr_factor: f64,
}

#[derive(Debug, Clone)]
pub struct Kevili {
    pub config: KeviliConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    pub grid: PatchGrid,
    image: ImageEncoder,
    text: TextEncoder,
    embed: Vec<(LayerParams, LayerParams)>,
    interaction: Vec<LayerParams>,
    reg: ParamId,
    mlp: [ParamId; 4],
}

/// Keeps the earliest whole sentences that fit in `max` tokens, or the first
/// `max` tokens when no sentence ends in time.
fn head_truncate(text: &str, max: usize) -> Vec<String> {
    let toks: Vec<String> = tokenize(text).into_iter().map(|t| t.text).collect();
    if toks.len() <= max {
        return toks;
    }
    let cut = toks[..max]
        .iter()
        .rposition(|t| matches!(t.as_str(), "." | "!" | "?"))
        .map_or(max, |i| i + 1);
    toks[..cut].to_vec()
}

impl Kevili {
    pub fn new(config: KeviliConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (d, h) = (config.width, config.heads);
        let image = ImageEncoder::new(&mut store, "image", grid, d, h, config.image_layers, &mut rng)?;
        let positions = config.max_query_tokens.max(config.max_knowledge_tokens);
        let text = TextEncoder::new(
            &mut store,
            "text",
            vocab.len(),
            positions,
            d,
            h,
            config.text_layers,
            &mut rng,
        )?;
        let g = ParamGroup::Head;
        let mut embed = Vec::with_capacity(config.embed_layers);
        for i in 0..config.embed_layers {
            let s = LayerParams::new(&mut store, &format!("embed{i}.self"), d, h, 2 * d, g, &mut rng)?;
            let c = LayerParams::new(&mut store, &format!("embed{i}.cross"), d, h, 2 * d, g, &mut rng)?;
            embed.push((s, c));
        }
        let interaction = (0..config.interaction_layers)
            .map(|i| LayerParams::new(&mut store, &format!("interaction{i}"), d, h, 2 * d, g, &mut rng))
            .collect::<Result<_>>()?;
        let reg = store.add("reg", (1, d), Init::Normal(1.0), g, &mut rng);
        let m = config.mlp_hidden;
        let mlp = [
            store.add("mlp.w1", (d, m), Init::FanIn, g, &mut rng),
            store.add("mlp.b1", (1, m), Init::Zeros, g, &mut rng),
            store.add("mlp.w2", (m, 4), Init::FanIn, g, &mut rng),
            store.add("mlp.b2", (1, 4), Init::Zeros, g, &mut rng),
        ];
        Ok(Kevili {
            config,
            vocab,
            store,
            grid,
            image,
            text,
            embed,
            interaction,
            reg,
            mlp,
        })
    }

    pub fn reg_id(&self) -> ParamId {
        self.reg
    }

    /// Vocabulary over the queries and knowledge of `samples`.
    pub fn vocab_for(samples: &[GroundingSample]) -> Vocab {
        Vocab::build(samples.iter().flat_map(|s| [s.query.as_str(), s.knowledge.as_str()]))
    }

    fn encode_ids(&self, text: &str, max: usize) -> Result<PaddedIds> {
        let ids = head_truncate(text, max).iter().map(|t| self.vocab.id(t)).collect();
        PaddedIds::new(ids, max)
    }

    pub fn prepare(&self, sample: &GroundingSample, raster: &Raster, with_knowledge: bool) -> Result<KeviliInput> {
        let pooled = Arc::new(self.grid.pool(&raster.resized(self.config.image_size)?)?);
        self.prepare_with(sample, pooled, raster, with_knowledge)
    }

    fn prepare_with(
        &self,
        sample: &GroundingSample,
        pooled: Arc<Array2<f64>>,
        raster: &Raster,
        with_knowledge: bool,
    ) -> Result<KeviliInput> {
        let image = ImageSize {
            width: raster.width as u32,
            height: raster.height as u32,
        };
        let query = self.encode_ids(&sample.query, self.config.max_query_tokens)?;
        let knowledge = if with_knowledge && !sample.knowledge.trim().is_empty() {
            Some(self.encode_ids(&sample.knowledge, self.config.max_knowledge_tokens)?)
        } else {
            None
        };
        Ok(KeviliInput {
            id: sample.id.clone(),
            pooled,
            query,
            knowledge,
            target: sample.bbox.normalize(image)?.to_center(),
            gt: sample.bbox,
            image,
        })
    }

    /// Prepares many samples, pooling each distinct image once.
    pub fn prepare_all<'a>(
        &self,
        samples: &[GroundingSample],
        image: impl Fn(&GroundingSample) -> Result<&'a Raster>,
        with_knowledge: bool,
    ) -> Result<Vec<KeviliInput>> {
        let mut cache: HashMap<&str, Arc<Array2<f64>>> = HashMap::new();
        samples
            .iter()
            .map(|s| {
                let r = image(s)?;
                let pooled = match cache.get(s.image_id.as_str()) {
                    Some(p) => p.clone(),
                    None => {
                        let p = Arc::new(self.grid.pool(&r.resized(self.config.image_size)?)?);
                        cache.insert(&s.image_id, p.clone());
                        p
                    }
                };
                self.prepare_with(s, pooled, r, with_knowledge)
            })
            .collect()
    }

    pub fn encode_image_on(&self, tape: &mut Tape, pooled: &Array2<f64>) -> Result<Var> {
        self.image.forward_on(tape, pooled)
    }

    /// `max_len x d` features; padded rows are zero and must stay masked.
    pub fn encode_text_on(&self, tape: &mut Tape, ids: &PaddedIds) -> Result<Var> {
        let valid = ids.valid_len();
        if valid == 0 {
            return Err(Error::Empty("token sequence"));
        }
        if ids.mask[..valid].iter().any(|&m| !m) {
            return Err(shape_err("encode_text", "mask must be a valid prefix"));
        }
        let h = self.text.forward_on(tape, &ids.ids[..valid], None)?;
        if valid == ids.ids.len() {
            return Ok(h);
        }
        let pad = tape.constant(Array2::zeros((ids.ids.len() - valid, self.config.width)));
        tape.concat_rows(&[h, pad])
    }

    /// Self layer on the image stream, then cross layer against `h_k`, per
    /// block.
    pub fn embed_knowledge_on(&self, tape: &mut Tape, h_i: Var, h_k: Var, k_mask: Option<&[bool]>) -> Result<Var> {
        let mut h = h_i;
        for (s, c) in &self.embed {
            h = self_layer_on(tape, s, h, None)?;
            h = cross_layer_on(tape, c, h, h_k, k_mask)?;
        }
        Ok(h)
    }

    /// `[REG] ⊕ H_I' ⊕ H_T` through the interaction stack, then the MLP on
    /// the `[REG]` output; returns the sigmoid `(cx, cy, w, h)` row.
    pub fn fuse_and_regress_on(&self, tape: &mut Tape, h_i: Var, h_t: Var, t_mask: &[bool]) -> Result<Var> {
        let reg = tape.param(self.reg);
        let rows_i = tape.shape(h_i).0;
        let mut x = tape.concat_rows(&[reg, h_i, h_t])?;
        let mask: Vec<bool> = std::iter::repeat_n(true, 1 + rows_i)
            .chain(t_mask.iter().copied())
            .collect();
        for layer in &self.interaction {
            x = self_layer_on(tape, layer, x, Some(&mask))?;
        }
        let r = tape.slice_rows(x, 0..1);
        let [w1, b1, w2, b2] = self.mlp.map(|id| tape.param(id));
        let hidden = tape.matmul(r, w1);
        let hidden = tape.add_row(hidden, b1);
        let hidden = tape.gelu(hidden);
        let out = tape.matmul(hidden, w2);
        let out = tape.add_row(out, b2);
        Ok(tape.sigmoid(out))
    }

    /// Full forward pass to the `1 x 4` normalized center-size box.
    pub fn forward_on(&self, tape: &mut Tape, x: &KeviliInput) -> Result<Var> {
        let h_i = self.encode_image_on(tape, &x.pooled)?;
        let h_i = match &x.knowledge {
            Some(k) => {
                let h_k = self.encode_text_on(tape, k)?;
                self.embed_knowledge_on(tape, h_i, h_k, Some(&k.mask))?
            }
            None => {
                let zeros = tape.constant(Array2::zeros((1, self.config.width)));
                self.embed_knowledge_on(tape, h_i, zeros, None)?
            }
        };
        let h_t = self.encode_text_on(tape, &x.query)?;
        self.fuse_and_regress_on(tape, h_i, h_t, &x.query.mask)
    }

    /// Normalized center-size prediction.
    pub fn predict_normalized(&self, x: &KeviliInput) -> Result<CenterBox> {
        let mut tape = Tape::with_store(&self.store);
        let out = self.forward_on(&mut tape, x)?;
        let v = tape.value(out);
        Ok(CenterBox::new(v[[0, 0]], v[[0, 1]], v[[0, 2]], v[[0, 3]]))
    }

    /// Predicted box in the sample's image coordinates.
    pub fn predict(&self, x: &KeviliInput) -> Result<BBox> {
        self.predict_normalized(x)?.to_corner()?.denormalize(x.image)
    }

    /// Image features with position embeddings, for inspection.
    pub fn encode_image(&self, raster: &Raster) -> Result<FeatureArray> {
        let pooled = self.grid.pool(&raster.resized(self.config.image_size)?)?;
        let mut tape = Tape::with_store(&self.store);
        let h = self.encode_image_on(&mut tape, &pooled)?;
        FeatureArray::new(tape.value(h).clone(), FeatureRole::ImagePatch)
    }

    pub fn loss_and_grads(&self, store: &ParamStore, x: &KeviliInput) -> Result<(f64, ParamGrads)> {
        let mut tape = Tape::with_store(store);
        let out = self.forward_on(&mut tape, x)?;
        let v = tape.value(out);
        let pred = CenterBox::new(v[[0, 0]], v[[0, 1]], v[[0, 2]], v[[0, 3]]);
        let (value, g) = grounding_loss_with_grad(pred, x.target, SMOOTH_L1_BETA)?;
        let grad = Array2::from_shape_vec((1, 4), g.to_vec()).expect("1 x 4");
        let loss = tape.loss(out, value, grad)?;
        Ok((value, tape.backward(loss)?))
    }

    pub fn loss_fn<'a>(&'a self, x: &'a KeviliInput) -> impl Fn(&ParamStore) -> Result<(f64, ParamGrads)> + 'a {
        move |store| self.loss_and_grads(store, x)
    }

    /// One optimizer step on the mean loss of `batch`; returns that loss.
    pub fn train_step(&mut self, opt: &mut AdamW, batch: &[&KeviliInput], lr_factor: f64) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let parts: Vec<Result<(f64, ParamGrads)>> =
            batch.par_iter().map(|x| self.loss_and_grads(&self.store, x)).collect();
        let mut total = ParamGrads::zeros_like(&self.store);
        let mut loss = 0.0;
        for p in parts {
            let (l, g) = p?;
            loss += l;
            total.accumulate(&g);
        }
        let n = batch.len() as f64;
        total.scale(1.0 / n);
        let loss = check_finite(loss / n, opt.steps() as usize)?;
        opt.step(&mut self.store, &total, lr_factor)?;
        Ok(loss)
    }

    /// Trains for `config.epochs` with the step decay at `decay_epoch`.
    /// `on_epoch` sees the model after each epoch and stops training by
    /// returning `false`.
    pub fn train(
        &mut self,
        inputs: &[KeviliInput],
        seed: u64,
        mut on_epoch: impl FnMut(&KeviliEpoch, &Kevili) -> Result<bool>,
    ) -> Result<Vec<KeviliEpoch>> {
        if inputs.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let mut opt = AdamW::new(self.config.optimizer(), &self.store);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        let mut logs = Vec::with_capacity(self.config.epochs);
        for epoch in 0..self.config.epochs {
            order.shuffle(&mut rng);
            let factor = step_decay(epoch, self.config.decay_epoch);
            let mut sum = 0.0;
            for chunk in order.chunks(self.config.batch_size) {
                let batch: Vec<&KeviliInput> = chunk.iter().map(|&i| &inputs[i]).collect();
                sum += self.train_step(&mut opt, &batch, factor)? * batch.len() as f64;
            }
            let log = KeviliEpoch {
                epoch,
                steps: opt.steps() as usize,
                loss: sum / inputs.len() as f64,
                lr_factor: factor,
            };
            logs.push(log);
            if !on_epoch(&log, self)? {
                break;
            }
        }
        Ok(logs)
    }
}
