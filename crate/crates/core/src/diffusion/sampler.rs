use rand::Rng;
use rand_distr::StandardNormal;

use super::model::EpsilonModel;
use super::schedule::NoiseSchedule;
use crate::image::{Image, ImageShape};
use crate::masking::Mask;
use crate::rng::{side_stream, SeededRng};
use crate::Error;

/// Lane of the side stream that noises the observed image during inpainting.
const KNOWN_REGION_LANE: u64 = 1;
/// Lane of the side stream that noises the input of a diffuse/denoise lift.
const LIFT_LANE: u64 = 2;

fn normal_vec(rng: &mut SeededRng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Closed-form forward marginal `√ᾱ_t·x₀ + √(1−ᾱ_t)·noise`; `t = 0` returns `x₀`.
pub fn diffuse_to(x0: &Image, t: usize, noise: &Image, schedule: &NoiseSchedule) -> Result<Image, Error> {
    x0.check_same_shape(noise, "diffuse_to")?;
    schedule.check_step(t, true)?;
    let mut out = x0.clone();
    diffuse_in_place(out.data_mut(), t, noise.data(), schedule);
    Ok(out)
}

fn diffuse_in_place(x: &mut [f32], t: usize, noise: &[f32], schedule: &NoiseSchedule) {
    if t == 0 {
        return;
    }
    let ab = schedule.alpha_bar(t);
    let (sa, sn) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
    for (v, &e) in x.iter_mut().zip(noise) {
        *v = sa * *v + sn * e;
    }
}

struct Observed {
    original: Vec<f32>,
    keep: Vec<bool>,
    rng: SeededRng,
}

/// One reverse-diffusion trajectory.
struct Chain {
    x: Vec<f32>,
    rng: SeededRng,
    observed: Option<Observed>,
}

fn check_model_shape(model: &EpsilonModel, shape: ImageShape) -> Result<(), Error> {
    let expected = model.architecture().image_shape();
    if shape != expected {
        return Err(Error::ShapeMismatch {
            op: "diffusion model input".into(),
            left: format!("{shape:?}"),
            right: format!("{expected:?}"),
        });
    }
    Ok(())
}

/// Posterior mean update plus σ_t·z for one chain, given its noise prediction.
fn reverse_update(x: &mut [f32], eps: &[f32], t: usize, schedule: &NoiseSchedule, rng: &mut SeededRng) {
    let (cx, ce) = schedule.mean_coefficients(t);
    for (v, &e) in x.iter_mut().zip(eps) {
        *v = cx * *v - ce * e;
    }
    let sigma = schedule.sigma(t) as f32;
    if sigma > 0.0 {
        for v in x.iter_mut() {
            let z: f32 = rng.sample(StandardNormal);
            *v += sigma * z;
        }
    }
}

/// Runs every chain from `t_start` down to step 0 in lockstep, batching the
/// network evaluations, then clamps generated pixels to `[-1, 1]`.
fn run_chains(
    model: &EpsilonModel,
    schedule: &NoiseSchedule,
    chains: &mut [Chain],
    t_start: usize,
) -> Result<(), Error> {
    if chains.is_empty() {
        return Ok(());
    }
    let per = chains[0].x.len();
    let mut batch = Vec::with_capacity(chains.len() * per);
    for t in (1..=t_start).rev() {
        batch.clear();
        for ch in chains.iter() {
            batch.extend_from_slice(&ch.x);
        }
        let steps = vec![t; chains.len()];
        let eps = model.predict(&batch, &steps)?;
        for (ch, e) in chains.iter_mut().zip(eps.chunks_exact(per)) {
            reverse_update(&mut ch.x, e, t, schedule, &mut ch.rng);
            if let Some(obs) = ch.observed.as_mut() {
                let mut known = obs.original.clone();
                if t > 1 {
                    let noise = normal_vec(&mut obs.rng, per);
                    diffuse_in_place(&mut known, t - 1, &noise, schedule);
                }
                for ((v, &k), &keep) in ch.x.iter_mut().zip(&known).zip(&obs.keep) {
                    if keep {
                        *v = k;
                    }
                }
            }
        }
    }
    for ch in chains.iter_mut() {
        match &ch.observed {
            Some(obs) => {
                for (v, &keep) in ch.x.iter_mut().zip(&obs.keep) {
                    if !keep {
                        *v = v.clamp(-1.0, 1.0);
                    }
                }
            }
            None => ch.x.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0)),
        }
    }
    Ok(())
}

fn into_image(shape: ImageShape, data: Vec<f32>) -> Image {
    Image::new(shape.0, shape.1, shape.2, data).expect("chain keeps its shape")
}

/// One ancestral step `x_t → x_{t−1}`: `μ = (x_t − β_t/√(1−ᾱ_t)·ε_θ)/√α_t`
/// plus `σ_t·z`, with σ₁ = 0. No clamping.
pub fn denoise_step(
    x_t: &Image,
    t: usize,
    model: &EpsilonModel,
    schedule: &NoiseSchedule,
    rng: &mut SeededRng,
) -> Result<Image, Error> {
    check_model_shape(model, x_t.shape())?;
    schedule.check_step(t, false)?;
    let eps = model.predict(x_t.data(), &[t])?;
    let mut out = x_t.clone();
    reverse_update(out.data_mut(), &eps, t, schedule, rng);
    Ok(out)
}

/// Unconditional ancestral sampling from `x_T ~ N(0, I)`, clamped to `[-1, 1]`.
pub fn sample(model: &EpsilonModel, schedule: &NoiseSchedule, rng: SeededRng) -> Result<Image, Error> {
    Ok(sample_batch(model, schedule, vec![rng])?.pop().expect("one chain"))
}

pub fn sample_batch(model: &EpsilonModel, schedule: &NoiseSchedule, rngs: Vec<SeededRng>) -> Result<Vec<Image>, Error> {
    let shape = model.architecture().image_shape();
    let per = shape.0 * shape.1 * shape.2;
    let mut chains: Vec<Chain> = rngs
        .into_iter()
        .map(|mut rng| Chain {
            x: normal_vec(&mut rng, per),
            rng,
            observed: None,
        })
        .collect();
    run_chains(model, schedule, &mut chains, schedule.steps())?;
    Ok(chains.into_iter().map(|c| into_image(shape, c.x)).collect())
}

/// An image, its mask, and the random stream for one inpainting run.
pub struct InpaintJob<'a> {
    pub image: &'a Image,
    pub mask: &'a Mask,
    pub rng: SeededRng,
}

/// Diffusion inpainting: at every step the observed pixels (mask = 1) are
/// replaced by the original diffused to step t−1 with fresh noise, and the
/// rest is denoised by the model. The last composite uses the undiffused
/// original, so observed pixels come back bit-exact.
///
/// The denoising chain draws from `rng` itself, exactly as [`sample`] does;
/// the observed-region noise comes from a side stream of the same key.
pub fn inpaint(
    original: &Image,
    mask: &Mask,
    model: &EpsilonModel,
    schedule: &NoiseSchedule,
    rng: SeededRng,
) -> Result<Image, Error> {
    let job = InpaintJob {
        image: original,
        mask,
        rng,
    };
    Ok(inpaint_batch(model, schedule, vec![job])?.pop().expect("one job"))
}

pub fn inpaint_batch(
    model: &EpsilonModel,
    schedule: &NoiseSchedule,
    jobs: Vec<InpaintJob<'_>>,
) -> Result<Vec<Image>, Error> {
    let mut chains = Vec::with_capacity(jobs.len());
    let mut shape = None;
    for job in jobs {
        check_model_shape(model, job.image.shape())?;
        let (c, h, w) = job.image.shape();
        if (job.mask.height(), job.mask.width()) != (h, w) {
            return Err(Error::ShapeMismatch {
                op: "inpaint mask".into(),
                left: format!("{}x{}", job.mask.height(), job.mask.width()),
                right: format!("{h}x{w}"),
            });
        }
        shape = Some(job.image.shape());
        let keep: Vec<bool> = (0..c).flat_map(|_| job.mask.values().iter().map(|&m| m == 1)).collect();
        let mut rng = job.rng;
        let side = side_stream(&rng, KNOWN_REGION_LANE);
        chains.push(Chain {
            x: normal_vec(&mut rng, c * h * w),
            rng,
            observed: Some(Observed {
                original: job.image.data().to_vec(),
                keep,
                rng: side,
            }),
        });
    }
    let Some(shape) = shape else { return Ok(Vec::new()) };
    run_chains(model, schedule, &mut chains, schedule.steps())?;
    Ok(chains.into_iter().map(|c| into_image(shape, c.x)).collect())
}

/// Diffuse/denoise lift: noises `x₀` to step `t_star` in closed form (noise
/// from a side stream of `rng`), then denoises back to step 0.
pub fn regenerate(
    x0: &Image,
    t_star: usize,
    model: &EpsilonModel,
    schedule: &NoiseSchedule,
    rng: SeededRng,
) -> Result<Image, Error> {
    Ok(regenerate_batch(model, schedule, t_star, vec![(x0, rng)])?
        .pop()
        .expect("one job"))
}

pub fn regenerate_batch(
    model: &EpsilonModel,
    schedule: &NoiseSchedule,
    t_star: usize,
    jobs: Vec<(&Image, SeededRng)>,
) -> Result<Vec<Image>, Error> {
    if t_star == 0 {
        return Err(Error::InvalidInput("diffuse/denoise lift needs t* ≥ 1".into()));
    }
    schedule.check_step(t_star, false)?;
    let mut chains = Vec::with_capacity(jobs.len());
    let mut shape = None;
    for (image, rng) in jobs {
        check_model_shape(model, image.shape())?;
        shape = Some(image.shape());
        let mut side = side_stream(&rng, LIFT_LANE);
        let noise = normal_vec(&mut side, image.data().len());
        let mut x = image.data().to_vec();
        diffuse_in_place(&mut x, t_star, &noise, schedule);
        chains.push(Chain { x, rng, observed: None });
    }
    let Some(shape) = shape else { return Ok(Vec::new()) };
    run_chains(model, schedule, &mut chains, t_star)?;
    Ok(chains.into_iter().map(|c| into_image(shape, c.x)).collect())
}
