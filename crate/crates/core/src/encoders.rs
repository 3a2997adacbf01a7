//! Raster input, pooled patch features, and the from-scratch image and text
//! encoders shared by both models.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{self_layer_on, LayerParams};
use crate::autograd::{Init, ParamGroup, ParamId, ParamStore, Tape, Var};
use crate::error::{shape_err, Error, Result};

/// Sub-blocks per patch side used for pooling.
pub const POOL: usize = 4;

/// Row-major interleaved 8-bit pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(shape_err(
                "raster",
                format!("{} bytes for {width}x{height}x{channels}", data.len()),
            ));
        }
        Ok(Raster {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Raster {
            width,
            height,
            channels: 3,
            data,
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, value: &[u8]) {
        let i = (y * self.width + x) * self.channels;
        self.data[i..i + self.channels].copy_from_slice(value);
    }

    pub fn from_rgb(img: &image::RgbImage) -> Self {
        Raster {
            width: img.width() as usize,
            height: img.height() as usize,
            channels: 3,
            data: img.as_raw().clone(),
        }
    }

    pub fn to_rgb(&self) -> Result<image::RgbImage> {
        if self.channels != 3 {
            return Err(shape_err("raster", format!("{} channels, expected 3", self.channels)));
        }
        image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .ok_or_else(|| shape_err("raster", "buffer does not match dimensions"))
    }

    /// Bilinear resize to `size x size`; a raster already that size is cloned.
    pub fn resized(&self, size: usize) -> Result<Raster> {
        if self.width == size && self.height == size {
            return Ok(self.clone());
        }
        let img = self.to_rgb()?;
        let out = image::imageops::resize(&img, size as u32, size as u32, image::imageops::FilterType::Triangle);
        Ok(Raster::from_rgb(&out))
    }
}

/// Square image split into square patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub image_size: usize,
    pub patch_size: usize,
}

impl PatchGrid {
    pub fn new(image_size: usize, patch_size: usize) -> Result<Self> {
        if patch_size == 0 || !patch_size.is_multiple_of(POOL) || !image_size.is_multiple_of(patch_size) {
            return Err(Error::Config(format!(
                "patch size {patch_size} must be a positive multiple of {POOL} dividing image size {image_size}"
            )));
        }
        Ok(PatchGrid { image_size, patch_size })
    }

    pub fn side(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.side() * self.side()
    }

    /// Length of one pooled patch vector.
    pub fn patch_dim() -> usize {
        POOL * POOL * 3
    }

    /// Mean of every `POOL x POOL` sub-block of every patch, per channel,
    /// scaled to `[-0.5, 0.5]`. Rows are patches in row-major order.
    pub fn pool(&self, raster: &Raster) -> Result<Array2<f64>> {
        if raster.channels != 3 {
            return Err(shape_err(
                "encode_image",
                format!("{} channels, expected 3", raster.channels),
            ));
        }
        if raster.width != self.image_size || raster.height != self.image_size {
            return Err(shape_err(
                "encode_image",
                format!(
                    "image {}x{}, expected {}x{}",
                    raster.width, raster.height, self.image_size, self.image_size
                ),
            ));
        }
        let side = self.side();
        let block = self.patch_size / POOL;
        let norm = 1.0 / (255.0 * (block * block) as f64);
        let mut out = Array2::zeros((self.num_patches(), Self::patch_dim()));
        for y in 0..self.image_size {
            let (py, by) = (y / self.patch_size, (y % self.patch_size) / block);
            for x in 0..self.image_size {
                let (px, bx) = (x / self.patch_size, (x % self.patch_size) / block);
                let row = py * side + px;
                let base = (by * POOL + bx) * 3;
                for (c, &v) in raster.pixel(x, y).iter().enumerate() {
                    out[[row, base + c]] += v as f64 * norm;
                }
            }
        }
        out.mapv_inplace(|v| v - 0.5);
        Ok(out)
    }
}

/// Fixed sine/cosine position table.
pub fn sinusoidal(len: usize, width: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, width), |(pos, i)| {
        let freq = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / width as f64);
        let angle = pos as f64 * freq;
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Linear patch embedding plus learned positions, then self layers.
#[derive(Debug, Clone)]
pub struct ImageEncoder {
    pub grid: PatchGrid,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub pos: ParamId,
    pub layers: Vec<LayerParams>,
}

impl ImageEncoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        grid: PatchGrid,
        width: usize,
        heads: usize,
        layers: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let g = ParamGroup::Encoder;
        let proj_w = store.add(
            format!("{prefix}.proj.w"),
            (PatchGrid::patch_dim(), width),
            Init::FanIn,
            g,
            rng,
        );
        let proj_b = store.add(format!("{prefix}.proj.b"), (1, width), Init::Zeros, g, rng);
        let pos = store.add(
            format!("{prefix}.pos"),
            (grid.num_patches(), width),
            Init::Zeros,
            g,
            rng,
        );
        *store.value_mut(pos) = sinusoidal(grid.num_patches(), width) * 0.5;
        let layers = (0..layers)
            .map(|i| LayerParams::new(store, &format!("{prefix}.layer{i}"), width, heads, 2 * width, g, rng))
            .collect::<Result<_>>()?;
        Ok(ImageEncoder {
            grid,
            proj_w,
            proj_b,
            pos,
            layers,
        })
    }

    /// `pooled` comes from [`PatchGrid::pool`].
    pub fn forward_on(&self, tape: &mut Tape, pooled: &Array2<f64>) -> Result<Var> {
        if pooled.dim() != (self.grid.num_patches(), PatchGrid::patch_dim()) {
            return Err(shape_err("encode_image", format!("pooled patches {:?}", pooled.dim())));
        }
        let x = tape.constant(pooled.clone());
        let w = tape.param(self.proj_w);
        let b = tape.param(self.proj_b);
        let pos = tape.param(self.pos);
        let h = tape.matmul(x, w);
        let h = tape.add_row(h, b);
        let mut h = tape.add(h, pos);
        for layer in &self.layers {
            h = self_layer_on(tape, layer, h, None)?;
        }
        Ok(h)
    }
}

/// Token embeddings plus learned positions, then masked self layers.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub max_len: usize,
    pub embed: ParamId,
    pub pos: ParamId,
    pub layers: Vec<LayerParams>,
}

impl TextEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        vocab_size: usize,
        max_len: usize,
        width: usize,
        heads: usize,
        layers: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let g = ParamGroup::Encoder;
        let embed = store.add(
            format!("{prefix}.embed"),
            (vocab_size, width),
            Init::Normal(1.0),
            g,
            rng,
        );
        let pos = store.add(format!("{prefix}.pos"), (max_len, width), Init::Zeros, g, rng);
        *store.value_mut(pos) = sinusoidal(max_len, width);
        let layers = (0..layers)
            .map(|i| LayerParams::new(store, &format!("{prefix}.layer{i}"), width, heads, 2 * width, g, rng))
            .collect::<Result<_>>()?;
        Ok(TextEncoder {
            max_len,
            embed,
            pos,
            layers,
        })
    }

    pub fn forward_on(&self, tape: &mut Tape, ids: &[usize], mask: Option<&[bool]>) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        if ids.len() > self.max_len {
            return Err(shape_err(
                "encode_text",
                format!("{} tokens exceed {} positions", ids.len(), self.max_len),
            ));
        }
        let table = tape.param(self.embed);
        let tok = tape.gather(table, ids)?;
        let pos_all = tape.param(self.pos);
        let pos = tape.slice_rows(pos_all, 0..ids.len());
        let mut h = tape.add(tok, pos);
        for layer in &self.layers {
            h = self_layer_on(tape, layer, h, mask)?;
        }
        Ok(h)
    }
}
