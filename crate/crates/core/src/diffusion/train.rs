use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::{to_channel_major, EpsilonModel};
use super::schedule::ScheduleSpec;
use crate::image::Image;
use crate::numerics::{Adam, AdamConfig, Graph, Tensor};
use crate::rng::{derive_seed, rng_from_seed};
use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub schedule: ScheduleSpec,
    pub grad_clip: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 16,
            learning_rate: 2e-3,
            schedule: ScheduleSpec::default(),
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), Error> {
        let positive = |x: f32| x.is_finite() && x > 0.0;
        if self.batch_size == 0 || !positive(self.learning_rate) || !positive(self.grad_clip) {
            return Err(Error::InvalidInput(format!("invalid training config {self:?}")));
        }
        self.schedule.build().map(|_| ())
    }
}

/// Fits ε_θ with the simplified objective `E‖ε − ε_θ(√ᾱ_t x₀ + √(1−ᾱ_t) ε, t)‖²`
/// over uniformly drawn t. Returns the mean loss of each epoch.
pub fn train(model: &mut EpsilonModel, dataset: &[Image], config: &TrainConfig) -> Result<Vec<f32>, Error> {
    config.validate()?;
    let first = dataset
        .first()
        .ok_or_else(|| Error::InvalidInput("training set is empty".into()))?;
    for img in dataset {
        first.check_same_shape(img, "train")?;
    }
    let shape = model.architecture().image_shape();
    if first.shape() != shape {
        return Err(Error::ShapeMismatch {
            op: "train".into(),
            left: format!("{:?}", first.shape()),
            right: format!("{shape:?}"),
        });
    }
    let schedule = config.schedule.build()?;
    let (c, h, w) = shape;
    let per = c * h * w;
    let mut rng = rng_from_seed(derive_seed(config.seed, &[0x7EA1]));
    let mut adam = Adam::new(AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    });
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for (batch_idx, idx) in order.chunks(config.batch_size).enumerate() {
            let b = idx.len();
            let steps: Vec<usize> = (0..b).map(|_| rng.random_range(1..=schedule.steps())).collect();
            let noise: Vec<f32> = (0..b * per).map(|_| rng.sample(StandardNormal)).collect();
            let mut noisy = Vec::with_capacity(b * per);
            for (k, (&i, &t)) in idx.iter().zip(&steps).enumerate() {
                let ab = schedule.alpha_bar(t);
                let (sa, sn) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
                let n = &noise[k * per..][..per];
                noisy.extend(dataset[i].data().iter().zip(n).map(|(&x, &e)| sa * x + sn * e));
            }

            let mut g = Graph::new();
            let x = g.input(Tensor::new(vec![c, b, h, w], to_channel_major(&noisy, b, c, h * w))?);
            let emb = g.input(model.embedding_batch(&steps)?);
            let target = g.input(Tensor::new(vec![c, b, h, w], to_channel_major(&noise, b, c, h * w))?);
            let pred = model.forward(&mut g, x, emb)?;
            let diff = g.sub(pred, target)?;
            let sq = g.sum_of_squares(diff);
            let loss = g.scale(sq, 1.0 / (b * per) as f32);
            let value = g.value(loss).item().expect("scalar loss");
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            total += value as f64 * b as f64;
            let mut grads = g.backward(loss, model.params())?;
            grads.clip_global_norm(config.grad_clip);
            adam.step(model.params_mut(), &grads)?;
        }
        trace.push((total / dataset.len() as f64) as f32);
    }
    Ok(trace)
}
