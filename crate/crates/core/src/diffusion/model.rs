use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::schedule::time_embedding;
use crate::image::ImageShape;
use crate::numerics::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::rng::{derive_seed, rng_from_seed};
use crate::Error;

/// Layout of the noise-prediction network.
///
/// Four SiLU conv blocks: block 1 at full resolution, blocks 2–3 after a 2×2
/// mean-pool, block 4 back at full resolution on the upsampled block-3
/// output concatenated with block 1. Each block adds a learned per-channel
/// affine projection of the shared time features before its nonlinearity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub widths: [usize; 4],
    pub time_dim: usize,
}

impl Architecture {
    pub fn for_shape((channels, height, width): ImageShape) -> Self {
        Self {
            channels,
            height,
            width,
            widths: [16, 32, 32, 16],
            time_dim: 32,
        }
    }

    pub fn image_shape(&self) -> ImageShape {
        (self.channels, self.height, self.width)
    }

    fn validate(&self) -> Result<(), Error> {
        if self.channels == 0 || self.widths.contains(&0) {
            return Err(Error::InvalidInput(format!("degenerate architecture {self:?}")));
        }
        if self.height < 2 || self.width < 2 || !self.height.is_multiple_of(2) || !self.width.is_multiple_of(2) {
            return Err(Error::InvalidInput(format!(
                "image sides must be even and at least 2, got {}x{}",
                self.height, self.width
            )));
        }
        if self.time_dim == 0 || !self.time_dim.is_multiple_of(2) {
            return Err(Error::InvalidInput(format!(
                "time_dim must be even, got {}",
                self.time_dim
            )));
        }
        Ok(())
    }

    /// `(name, shape)` of every parameter, in checkpoint order.
    pub fn parameter_layout(&self) -> Vec<(String, Vec<usize>)> {
        let [w1, w2, w3, w4] = self.widths;
        let d = self.time_dim;
        let mut out = vec![("time.w".to_owned(), vec![d, d]), ("time.b".to_owned(), vec![d])];
        let convs = [(1, self.channels, w1), (2, w1, w2), (3, w2, w3), (4, w3 + w1, w4)];
        for (i, cin, cout) in convs {
            out.push((format!("block{i}.conv.w"), vec![cout, cin, 3, 3]));
            out.push((format!("block{i}.conv.b"), vec![cout]));
            out.push((format!("block{i}.time.w"), vec![cout, d]));
            out.push((format!("block{i}.time.b"), vec![cout]));
        }
        out.push(("out.conv.w".to_owned(), vec![self.channels, w4, 3, 3]));
        out.push(("out.conv.b".to_owned(), vec![self.channels]));
        out
    }
}

/// Trained (or freshly initialised) ε_θ(x_t, t).
#[derive(Clone, Debug, PartialEq)]
pub struct EpsilonModel {
    arch: Architecture,
    params: ParamStore,
    seed: u64,
}

impl EpsilonModel {
    /// He-normal initialisation from `seed`; the output convolution starts
    /// at a tenth of that scale.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self, Error> {
        arch.validate()?;
        let mut rng = rng_from_seed(derive_seed(seed, &[0x1A17]));
        let mut params = ParamStore::new();
        for (name, shape) in arch.parameter_layout() {
            let numel: usize = shape.iter().product();
            let data = if name.ends_with(".b") {
                vec![0.0; numel]
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let mut std = (2.0 / fan_in as f64).sqrt();
                if name.starts_with("out.") {
                    std *= 0.1;
                }
                (0..numel)
                    .map(|_| (rng.sample::<f64, _>(StandardNormal) * std) as f32)
                    .collect()
            };
            params.insert(&name, Tensor::new(shape, data)?);
        }
        Ok(Self { arch, params, seed })
    }

    /// Rebuilds a model from parameter tensors given in checkpoint order.
    pub fn from_parameters(arch: Architecture, seed: u64, values: Vec<Vec<f32>>) -> Result<Self, Error> {
        arch.validate()?;
        let layout = arch.parameter_layout();
        if layout.len() != values.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                values.len()
            )));
        }
        let mut params = ParamStore::new();
        for ((name, shape), data) in layout.into_iter().zip(values) {
            params.insert(&name, Tensor::new(shape, data)?);
        }
        Ok(Self { arch, params, seed })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn id(&self, idx: usize) -> ParamId {
        debug_assert!(idx < self.params.len());
        ParamId(idx)
    }

    /// Records the network on `g`. `x` is `[C, B, H, W]`, `emb` is `[B, time_dim]`.
    pub fn forward(&self, g: &mut Graph, x: Var, emb: Var) -> Result<Var, Error> {
        let p = |g: &mut Graph, idx: usize| g.param(&self.params, self.id(idx));
        let (tw, tb) = (p(g, 0), p(g, 1));
        let te = g.affine(emb, tw, tb)?;
        let te = g.silu(te);

        let block = |g: &mut Graph, i: usize, input: Var| -> Result<Var, Error> {
            let base = 2 + 4 * i;
            let (cw, cb) = (p(g, base), p(g, base + 1));
            let (ew, eb) = (p(g, base + 2), p(g, base + 3));
            let h = g.conv2d(input, cw, cb)?;
            let e = g.affine(te, ew, eb)?;
            let h = g.channel_bias(h, e)?;
            Ok(g.silu(h))
        };

        let h1 = block(g, 0, x)?;
        let pooled = g.avg_pool2(h1)?;
        let h2 = block(g, 1, pooled)?;
        let h3 = block(g, 2, h2)?;
        let up = g.upsample2(h3)?;
        let joined = g.concat_channels(up, h1)?;
        let h4 = block(g, 3, joined)?;
        let (ow, ob) = (p(g, 18), p(g, 19));
        Ok(g.conv2d(h4, ow, ob)?)
    }

    /// Time-embedding rows for a batch of steps: `[B, time_dim]`.
    pub(crate) fn embedding_batch(&self, steps: &[usize]) -> Result<Tensor, Error> {
        let mut data = Vec::with_capacity(steps.len() * self.arch.time_dim);
        for &t in steps {
            data.extend(time_embedding(t, self.arch.time_dim)?);
        }
        Ok(Tensor::new(vec![steps.len(), self.arch.time_dim], data)?)
    }

    /// Predicts noise for a batch. `images` holds `B` channel-planar images
    /// back to back; the result uses the same layout.
    pub fn predict(&self, images: &[f32], steps: &[usize]) -> Result<Vec<f32>, Error> {
        let (c, h, w) = self.arch.image_shape();
        let per = c * h * w;
        let batch = steps.len();
        if batch == 0 || images.len() != batch * per {
            return Err(Error::ShapeMismatch {
                op: "predict".into(),
                left: format!("{} values", images.len()),
                right: format!("{batch} images of {c}x{h}x{w}"),
            });
        }
        let input = to_channel_major(images, batch, c, h * w);
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![c, batch, h, w], input)?);
        let emb = g.input(self.embedding_batch(steps)?);
        let y = self.forward(&mut g, x, emb)?;
        Ok(to_batch_major(g.value(y).data(), batch, c, h * w))
    }
}

/// `[B, C, hw]` → `[C, B, hw]`.
pub(crate) fn to_channel_major(x: &[f32], batch: usize, channels: usize, hw: usize) -> Vec<f32> {
    if channels == 1 {
        return x.to_vec();
    }
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..channels {
            out[(c * batch + b) * hw..][..hw].copy_from_slice(&x[(b * channels + c) * hw..][..hw]);
        }
    }
    out
}

/// `[C, B, hw]` → `[B, C, hw]`.
pub(crate) fn to_batch_major(x: &[f32], batch: usize, channels: usize, hw: usize) -> Vec<f32> {
    if channels == 1 {
        return x.to_vec();
    }
    let mut out = vec![0.0; x.len()];
    for c in 0..channels {
        for b in 0..batch {
            out[(b * channels + c) * hw..][..hw].copy_from_slice(&x[(c * batch + b) * hw..][..hw]);
        }
    }
    out
}
