use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lmd_core::data::{write_pgm_grid, Dataset};
use lmd_core::detector::{
    attempt_mask, build_reports, image_seed, label_auc, parse_reports_csv, reconstruct, reconstruction_distances,
    reports_to_csv, DetectorConfig, Label, Lift, ScoreReport,
};
use lmd_core::diffusion::{
    load_checkpoint, sample_batch, save_checkpoint, train, Architecture, Checkpoint, EpsilonModel,
};
use lmd_core::masking::{get_mask, MaskSpec};
use lmd_core::metrics::{roc_auc, DistanceMetric, Distances};
use lmd_core::rng::{derive_seed, rng_from_seed};
use lmd_core::Image;

use crate::config::{write_run_record, ExperimentConfig};

fn prepare_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn cmd_train(config: &ExperimentConfig, out: &Path) -> Result<()> {
    prepare_out(out)?;
    write_run_record(out, "train", config)?;
    let data = config.in_train.load().context("loading in_train")?;
    let mut model = EpsilonModel::new(Architecture::for_shape(data.shape()), config.seed)?;
    let losses = train(&mut model, data.images(), &config.train)?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        writeln!(csv, "{},{:.5e}", i + 1, l).unwrap();
    }
    write_text(&out.join("loss.csv"), &csv)?;
    save_checkpoint(&out.join("checkpoint.ckpt"), &model, &config.train.schedule)?;
    match (losses.first(), losses.last()) {
        (Some(first), Some(last)) => println!("trained {} epochs: loss {first:.4} -> {last:.4}", losses.len()),
        _ => println!("wrote untrained checkpoint (0 epochs)"),
    }
    Ok(())
}

fn checkpoint_path(config: &ExperimentConfig) -> Result<&PathBuf> {
    config
        .checkpoint
        .as_ref()
        .context("no checkpoint given; pass --checkpoint or set `checkpoint` in the config")
}

fn load_model(config: &ExperimentConfig) -> Result<Checkpoint> {
    let path = checkpoint_path(config)?;
    Ok(load_checkpoint(path)?)
}

fn check_shape(ckpt: &Checkpoint, data: &Dataset, name: &str) -> Result<()> {
    let (c, h, w) = ckpt.model.architecture().image_shape();
    let (dc, dh, dw) = data.shape();
    if (c, h, w) != (dc, dh, dw) {
        bail!("shape mismatch: checkpoint expects {c}x{h}x{w} images but {name} has {dc}x{dh}x{dw}");
    }
    Ok(())
}

/// In- and out-of-domain test images scored as one labelled list.
struct Scored {
    images: Vec<Image>,
    labels: Vec<Label>,
    seeds: Vec<u64>,
    n_in: usize,
    reconstructions: Vec<Vec<Image>>,
}

fn reconstruct_test_sets(config: &ExperimentConfig, detector: &DetectorConfig, ckpt: &Checkpoint) -> Result<Scored> {
    let ins = config.in_test.load().context("loading in_test")?;
    let outs = config.out_test.load().context("loading out_test")?;
    check_shape(ckpt, &ins, "in_test")?;
    check_shape(ckpt, &outs, "out_test")?;
    let n_in = ins.len();
    let mut images = ins.into_images();
    images.extend(outs.into_images());
    let labels: Vec<Label> = (0..images.len())
        .map(|k| if k < n_in { Label::In } else { Label::Out })
        .collect();
    let seeds: Vec<u64> = (0..images.len()).map(|k| image_seed(config.seed, k)).collect();
    let schedule = ckpt.schedule.build()?;
    let reconstructions = reconstruct(&images, &seeds, &ckpt.model, &schedule, detector)?;
    Ok(Scored {
        images,
        labels,
        seeds,
        n_in,
        reconstructions,
    })
}

impl Scored {
    fn reports(&self, metric: DistanceMetric, detector: &DetectorConfig, attempts: usize) -> Result<Vec<ScoreReport>> {
        let distances = Distances::new(self.images[0].channels(), detector.feature_seed);
        let d = reconstruction_distances(
            &self.images,
            &self.reconstructions,
            metric,
            &distances,
            detector.workers,
        )?;
        Ok(build_reports(&self.labels, &d, attempts, detector.aggregation))
    }
}

/// Splits combined reports into the two per-file lists, each indexed from 0.
fn split_reports(mut reports: Vec<ScoreReport>, n_in: usize) -> (Vec<ScoreReport>, Vec<ScoreReport>) {
    let mut outs = reports.split_off(n_in);
    for (k, r) in outs.iter_mut().enumerate() {
        r.image_index = k;
    }
    (reports, outs)
}

fn auc_of(reports: &[ScoreReport]) -> Result<Option<f64>> {
    let (auc, notice) = label_auc(reports)?;
    if let Some(n) = notice {
        eprintln!("{n}");
    }
    Ok(auc)
}

/// Rows of (original, masked, mapped) panels; masked pixels drawn mid-gray.
/// Diffuse/denoise runs have no mask, so rows are (original, mapped).
fn grid_panels(
    scored: &Scored,
    range: std::ops::Range<usize>,
    detector: &DetectorConfig,
) -> Result<(Vec<Image>, usize)> {
    let mut panels = Vec::new();
    let columns = if detector.lift == Lift::MaskInpaint { 3 } else { 2 };
    for k in range {
        let original = &scored.images[k];
        panels.push(original.clone());
        if let Some(mask) = attempt_mask(detector, scored.seeds[k], 0, original)? {
            let mut masked = original.clone();
            let hw = original.height() * original.width();
            for (i, v) in masked.data_mut().iter_mut().enumerate() {
                if mask.values()[i % hw] == 0 {
                    *v = 0.0;
                }
            }
            panels.push(masked);
        }
        panels.push(scored.reconstructions[k][0].clone());
    }
    Ok((panels, columns))
}

pub fn cmd_score(config: &ExperimentConfig, out: &Path) -> Result<()> {
    prepare_out(out)?;
    write_run_record(out, "score", config)?;
    let ckpt = load_model(config)?;
    let detector = &config.detector;
    let scored = reconstruct_test_sets(config, detector, &ckpt)?;
    let reports = scored.reports(detector.metric, detector, detector.attempts)?;
    let auc = auc_of(&reports)?;
    let (ins, outs) = split_reports(reports, scored.n_in);
    write_text(&out.join("scores_in.csv"), &reports_to_csv(&ins))?;
    write_text(&out.join("scores_out.csv"), &reports_to_csv(&outs))?;

    let total = scored.images.len();
    for (name, range) in [
        ("recon_in.pgm", 0..scored.n_in.min(config.grid_images)),
        (
            "recon_out.pgm",
            scored.n_in..(scored.n_in + config.grid_images).min(total),
        ),
    ] {
        if range.is_empty() {
            continue;
        }
        let (panels, columns) = grid_panels(&scored, range, detector)?;
        if panels[0].channels() == 1 {
            write_pgm_grid(&panels, columns, &out.join(name))?;
        } else {
            eprintln!("skipping {name}: grids are grayscale only");
        }
    }
    if let Some(auc) = auc {
        println!("AUC ({}): {auc:.3}", detector.metric);
    }
    Ok(())
}

fn read_reports(path: &Path) -> Result<Vec<ScoreReport>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let reports = parse_reports_csv(&text).with_context(|| format!("malformed CSV {}", path.display()))?;
    if reports.is_empty() {
        bail!("{}: no score rows", path.display());
    }
    Ok(reports)
}

pub fn cmd_eval(in_csv: &Path, out_csv: &Path, out: &Path) -> Result<f64> {
    let ins: Vec<f64> = read_reports(in_csv)?.iter().map(|r| r.score).collect();
    let outs: Vec<f64> = read_reports(out_csv)?.iter().map(|r| r.score).collect();
    let auc = roc_auc(&ins, &outs)?;
    prepare_out(out)?;
    write_text(&out.join("auc.txt"), &format!("{auc:.3}\n"))?;
    println!("{auc:.3}");
    Ok(auc)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Axis {
    Mask,
    Metric,
    Attempts,
}

const PROXY_NOTE: &str = "random-feature proxy for LPIPS/SimCLRv2";

pub fn cmd_ablate(config: &ExperimentConfig, axis: Axis, out: &Path) -> Result<()> {
    prepare_out(out)?;
    write_run_record(out, "ablate", config)?;
    let ckpt = load_model(config)?;
    let base = &config.detector;
    let mut rows: Vec<(String, String, f64, String)> = Vec::new();
    let auc_or_nan = |reports: &[ScoreReport]| -> Result<f64> { Ok(auc_of(reports)?.unwrap_or(f64::NAN)) };
    match axis {
        Axis::Mask => {
            let (_, h, w) = ckpt.model.architecture().image_shape();
            for spec in MaskSpec::ablation_set() {
                // Settings that cannot tile this image size are listed, not run.
                if let Err(e) = get_mask(&spec, 0, h, w, &mut rng_from_seed(0)) {
                    rows.push((
                        "mask".into(),
                        spec.to_string(),
                        f64::NAN,
                        format!("skipped: {e}").replace(',', ";"),
                    ));
                    continue;
                }
                let detector = DetectorConfig {
                    mask: spec,
                    lift: Lift::MaskInpaint,
                    ..base.clone()
                };
                let scored = reconstruct_test_sets(config, &detector, &ckpt)?;
                let auc = auc_or_nan(&scored.reports(detector.metric, &detector, detector.attempts)?)?;
                rows.push(("mask".into(), spec.to_string(), auc, String::new()));
            }
        }
        Axis::Metric => {
            let scored = reconstruct_test_sets(config, base, &ckpt)?;
            for metric in DistanceMetric::ALL {
                let auc = auc_or_nan(&scored.reports(metric, base, base.attempts)?)?;
                let note = if metric == DistanceMetric::FeatureDistance {
                    PROXY_NOTE
                } else {
                    ""
                };
                rows.push(("metric".into(), metric.to_string(), auc, note.into()));
            }
        }
        Axis::Attempts => {
            let scored = reconstruct_test_sets(config, base, &ckpt)?;
            for r in 1..=base.attempts {
                let auc = auc_or_nan(&scored.reports(base.metric, base, r)?)?;
                rows.push(("attempts".into(), r.to_string(), auc, String::new()));
            }
        }
    }
    let mut csv = String::from("axis,setting,auc,note\n");
    for (axis, setting, auc, note) in &rows {
        writeln!(csv, "{axis},{setting},{auc:.5e},{note}").unwrap();
        println!("{setting:>16}  {auc:.3}");
    }
    let name = format!("ablation_{}.csv", rows[0].0);
    write_text(&out.join(name), &csv)
}

pub fn cmd_sample(config: &ExperimentConfig, out: &Path) -> Result<()> {
    prepare_out(out)?;
    write_run_record(out, "sample", config)?;
    if config.samples == 0 {
        bail!("samples must be at least 1");
    }
    let ckpt = load_model(config)?;
    let schedule = ckpt.schedule.build()?;
    let rngs = (0..config.samples)
        .map(|k| rng_from_seed(derive_seed(config.seed, &[0x5A, k as u64])))
        .collect();
    let images = sample_batch(&ckpt.model, &schedule, rngs)?;
    let columns = (config.samples as f64).sqrt().ceil() as usize;
    write_pgm_grid(&images, columns, &out.join("samples.pgm"))?;
    println!("wrote {} samples", images.len());
    Ok(())
}
