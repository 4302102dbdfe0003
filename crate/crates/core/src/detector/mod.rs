//! Repeated lift/map attempts and their aggregation into an OOD score.
//!
//! Attempt `i` of an image with seed `s` draws everything (mask, sampler
//! noise) from a stream keyed by `derive_seed(s, [i])`, and dataset scoring
//! gives image `k` the seed `derive_seed(seed, [k])`. Network calls batch
//! many attempts together, which never changes a result, so reports do not
//! depend on chunking or worker count.

mod report;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{parse_reports_csv, reports_to_csv, CsvError, Label, ScoreReport};

use crate::diffusion::{inpaint_batch, regenerate_batch, EpsilonModel, InpaintJob, NoiseSchedule};
use crate::image::Image;
use crate::masking::{get_mask, Mask, MaskSpec};
use crate::metrics::{roc_auc, DistanceMetric, Distances, DEFAULT_FEATURE_SEED};
use crate::rng::{derive_seed, rng_from_seed, SeededRng};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Even counts average the two middle values.
    #[default]
    Median,
}

impl Aggregation {
    pub fn apply(self, distances: &[f64]) -> f64 {
        match self {
            Aggregation::Median => median(distances),
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// How an image is pushed off its manifold before being mapped back.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Lift {
    /// Mask, then inpaint.
    #[default]
    MaskInpaint,
    /// Diffuse to `t_star` in closed form, then denoise to step 0.
    /// `None` means half the schedule length.
    DiffuseDenoise { t_star: Option<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub attempts: usize,
    pub mask: MaskSpec,
    pub metric: DistanceMetric,
    pub aggregation: Aggregation,
    pub lift: Lift,
    pub feature_seed: u64,
    /// Threads used by dataset scoring.
    pub workers: usize,
    /// Attempts sharing one batched network call.
    pub batch_size: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            attempts: 10,
            mask: MaskSpec::default(),
            metric: DistanceMetric::default(),
            aggregation: Aggregation::default(),
            lift: Lift::default(),
            feature_seed: DEFAULT_FEATURE_SEED,
            workers: 1,
            batch_size: 64,
        }
    }
}

impl DetectorConfig {
    /// Step a diffuse/denoise lift starts from, validated against `schedule`.
    pub fn resolved_t_star(&self, schedule: &NoiseSchedule) -> Result<Option<usize>, Error> {
        match self.lift {
            Lift::MaskInpaint => Ok(None),
            Lift::DiffuseDenoise { t_star } => {
                let t = t_star.unwrap_or(schedule.steps() / 2);
                if t == 0 || t > schedule.steps() {
                    return Err(Error::InvalidInput(format!(
                        "t* must lie in 1..={}, got {t}",
                        schedule.steps()
                    )));
                }
                Ok(Some(t))
            }
        }
    }

    fn validate(&self, schedule: &NoiseSchedule) -> Result<(), Error> {
        if self.attempts == 0 {
            return Err(Error::InvalidInput("attempts must be at least 1".into()));
        }
        if self.workers == 0 || self.batch_size == 0 {
            return Err(Error::InvalidInput("workers and batch_size must be at least 1".into()));
        }
        self.resolved_t_star(schedule)?;
        Ok(())
    }
}

/// Seed of image `index` in a dataset scored with `seed`.
pub fn image_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, &[index as u64])
}

/// Random stream of one attempt.
pub fn attempt_rng(image_seed: u64, attempt: usize) -> SeededRng {
    rng_from_seed(derive_seed(image_seed, &[attempt as u64]))
}

/// The mask attempt `attempt` uses, or `None` for the diffuse/denoise lift.
pub fn attempt_mask(
    config: &DetectorConfig,
    image_seed: u64,
    attempt: usize,
    image: &Image,
) -> Result<Option<Mask>, Error> {
    if config.lift != Lift::MaskInpaint {
        return Ok(None);
    }
    let mut rng = attempt_rng(image_seed, attempt);
    get_mask(&config.mask, attempt, image.height(), image.width(), &mut rng).map(Some)
}

fn attach_attempt(attempt: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        e @ Error::Attempt { .. } => e,
        e => Error::Attempt {
            attempt,
            error: Box::new(e),
        },
    }
}

/// Runs one batch of `(image, attempt)` lift/map jobs.
fn map_jobs(
    jobs: &[(usize, usize)],
    images: &[Image],
    seeds: &[u64],
    model: &EpsilonModel,
    schedule: &NoiseSchedule,
    config: &DetectorConfig,
) -> Result<Vec<Image>, Error> {
    let first_attempt = jobs.first().map_or(0, |j| j.1);
    let wrap = attach_attempt(first_attempt);
    match config.resolved_t_star(schedule)? {
        None => {
            let mut masks = Vec::with_capacity(jobs.len());
            let mut rngs = Vec::with_capacity(jobs.len());
            for &(i, a) in jobs {
                let mut rng = attempt_rng(seeds[i], a);
                let (h, w) = (images[i].height(), images[i].width());
                masks.push(get_mask(&config.mask, a, h, w, &mut rng).map_err(attach_attempt(a))?);
                rngs.push(rng);
            }
            let batch = jobs
                .iter()
                .zip(&masks)
                .zip(rngs)
                .map(|((&(i, _), mask), rng)| InpaintJob {
                    image: &images[i],
                    mask,
                    rng,
                })
                .collect();
            inpaint_batch(model, schedule, batch).map_err(wrap)
        }
        Some(t_star) => {
            let batch = jobs
                .iter()
                .map(|&(i, a)| (&images[i], attempt_rng(seeds[i], a)))
                .collect();
            regenerate_batch(model, schedule, t_star, batch).map_err(wrap)
        }
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, Error> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start {workers} worker threads: {e}")))
}

/// Mapped images for every image and attempt: `result[k][i]` is attempt `i`
/// of image `k`, which uses seed `seeds[k]`.
pub fn reconstruct(
    images: &[Image],
    seeds: &[u64],
    model: &EpsilonModel,
    schedule: &NoiseSchedule,
    config: &DetectorConfig,
) -> Result<Vec<Vec<Image>>, Error> {
    config.validate(schedule)?;
    if images.len() != seeds.len() {
        return Err(Error::InvalidInput(format!(
            "{} images but {} seeds",
            images.len(),
            seeds.len()
        )));
    }
    let r = config.attempts;
    let jobs: Vec<(usize, usize)> = (0..images.len()).flat_map(|k| (0..r).map(move |a| (k, a))).collect();
    let chunks: Vec<&[(usize, usize)]> = jobs.chunks(config.batch_size).collect();
    let mapped: Vec<Vec<Image>> = pool(config.workers)?.install(|| {
        chunks
            .par_iter()
            .map(|chunk| map_jobs(chunk, images, seeds, model, schedule, config))
            .collect::<Result<_, _>>()
    })?;
    let mut flat = mapped.into_iter().flatten();
    Ok((0..images.len()).map(|_| flat.by_ref().take(r).collect()).collect())
}

/// Distances of every image to each of its reconstructions.
pub fn reconstruction_distances(
    images: &[Image],
    reconstructions: &[Vec<Image>],
    metric: DistanceMetric,
    distances: &Distances,
    workers: usize,
) -> Result<Vec<Vec<f64>>, Error> {
    pool(workers.max(1))?.install(|| {
        images
            .par_iter()
            .zip(reconstructions)
            .map(|(x, recon)| {
                let original = match metric {
                    DistanceMetric::FeatureDistance => Some(distances.extractor().features(x)?),
                    _ => None,
                };
                recon
                    .iter()
                    .enumerate()
                    .map(|(a, y)| {
                        let d = match &original {
                            Some(fx) => {
                                x.check_same_shape(y, "feature_distance")?;
                                crate::metrics::cosine_distance(fx, &distances.extractor().features(y)?)
                            }
                            None => distances.distance(metric, x, y),
                        };
                        d.map_err(attach_attempt(a))
                    })
                    .collect()
            })
            .collect()
    })
}

/// Builds reports from per-attempt distances, keeping the first `attempts`.
pub fn build_reports(
    labels: &[Label],
    distances: &[Vec<f64>],
    attempts: usize,
    aggregation: Aggregation,
) -> Vec<ScoreReport> {
    distances
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(k, (d, &label))| {
            let d = d[..attempts.min(d.len())].to_vec();
            ScoreReport {
                image_index: k,
                label,
                score: aggregation.apply(&d),
                distances: d,
            }
        })
        .collect()
}

fn distances_for(channels: usize, config: &DetectorConfig) -> Distances {
    Distances::new(channels, config.feature_seed)
}

/// OOD score of one image; `image_seed` keys every attempt's randomness.
pub fn ood_score(
    x: &Image,
    model: &EpsilonModel,
    schedule: &NoiseSchedule,
    config: &DetectorConfig,
    image_seed: u64,
) -> Result<ScoreReport, Error> {
    let single = DetectorConfig {
        workers: 1,
        ..config.clone()
    };
    let recon = reconstruct(std::slice::from_ref(x), &[image_seed], model, schedule, &single)?;
    let d = reconstruction_distances(
        std::slice::from_ref(x),
        &recon,
        config.metric,
        &distances_for(x.channels(), config),
        1,
    )?;
    Ok(build_reports(&[Label::Unknown], &d, config.attempts, config.aggregation).remove(0))
}

/// [`ood_score`] with the lift forced to diffuse/denoise. A mask-inpaint
/// config is switched to `t* = T/2`.
pub fn denoise_lift_score(
    x: &Image,
    model: &EpsilonModel,
    schedule: &NoiseSchedule,
    config: &DetectorConfig,
    image_seed: u64,
) -> Result<ScoreReport, Error> {
    let mut config = config.clone();
    if config.lift == Lift::MaskInpaint {
        config.lift = Lift::DiffuseDenoise { t_star: None };
    }
    ood_score(x, model, schedule, &config, image_seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetScores {
    pub reports: Vec<ScoreReport>,
    /// Present when both in- and out-of-domain labels occur.
    pub auc: Option<f64>,
    pub notice: Option<String>,
}

/// AUC of out- vs in-domain reports, or a notice explaining its absence.
pub fn label_auc(reports: &[ScoreReport]) -> Result<(Option<f64>, Option<String>), Error> {
    let pick = |l: Label| -> Vec<f64> { reports.iter().filter(|r| r.label == l).map(|r| r.score).collect() };
    let (ins, outs) = (pick(Label::In), pick(Label::Out));
    if ins.is_empty() || outs.is_empty() {
        let notice = format!(
            "AUC omitted: need both in- and out-of-domain labels, got {} in, {} out, {} unknown",
            ins.len(),
            outs.len(),
            reports.len() - ins.len() - outs.len()
        );
        return Ok((None, Some(notice)));
    }
    Ok((Some(roc_auc(&ins, &outs)?), None))
}

/// Scores every image with seeds derived from `(seed, index)`.
pub fn score_dataset(
    images: &[Image],
    labels: &[Label],
    model: &EpsilonModel,
    schedule: &NoiseSchedule,
    config: &DetectorConfig,
    seed: u64,
) -> Result<DatasetScores, Error> {
    let seeds: Vec<u64> = (0..images.len()).map(|k| image_seed(seed, k)).collect();
    score_dataset_with_seeds(images, labels, &seeds, model, schedule, config)
}

/// [`score_dataset`] with an explicit seed per image.
pub fn score_dataset_with_seeds(
    images: &[Image],
    labels: &[Label],
    seeds: &[u64],
    model: &EpsilonModel,
    schedule: &NoiseSchedule,
    config: &DetectorConfig,
) -> Result<DatasetScores, Error> {
    if images.is_empty() {
        return Err(Error::InvalidInput("nothing to score".into()));
    }
    if labels.len() != images.len() {
        return Err(Error::InvalidInput(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let recon = reconstruct(images, seeds, model, schedule, config)?;
    let d = reconstruction_distances(
        images,
        &recon,
        config.metric,
        &distances_for(images[0].channels(), config),
        config.workers,
    )?;
    let reports = build_reports(labels, &d, config.attempts, config.aggregation);
    let (auc, notice) = label_auc(&reports)?;
    Ok(DatasetScores { reports, auc, notice })
}
