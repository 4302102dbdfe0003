use lmd_core::diffusion::{
    denoise_step, diffuse_to, inpaint, regenerate, sample, Architecture, EpsilonModel, NoiseSchedule,
};
use lmd_core::masking::Mask;
use lmd_core::rng::rng_from_seed;
use lmd_core::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arch() -> Architecture {
    Architecture {
        channels: 1,
        height: 8,
        width: 8,
        widths: [4, 6, 6, 4],
        time_dim: 8,
    }
}

fn schedule() -> NoiseSchedule {
    NoiseSchedule::linear(12, 1e-3, 0.2).unwrap()
}

fn random_image(rng: &mut ChaCha8Rng) -> Image {
    Image::grayscale(8, 8, (0..64).map(|_| rng.random_range(-1.0..=1.0)).collect()).unwrap()
}

#[test]
fn observed_pixels_survive_inpainting_bit_exactly() {
    let model = EpsilonModel::new(arch(), 1).unwrap();
    let s = schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..50 {
        let x = random_image(&mut rng);
        let values: Vec<f32> = (0..64).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let mask = Mask::from_values(8, 8, &values).unwrap();
        let out = inpaint(&x, &mask, &model, &s, rng_from_seed(case)).unwrap();
        for (i, (&o, &v)) in out.data().iter().zip(x.data()).enumerate() {
            if mask.values()[i] == 1 {
                assert_eq!(o.to_bits(), v.to_bits(), "case {case}, pixel {i}");
            } else {
                assert!((-1.0..=1.0).contains(&o));
            }
        }
    }
}

#[test]
fn full_mask_returns_original_and_empty_mask_equals_sampling() {
    let model = EpsilonModel::new(arch(), 2).unwrap();
    let s = schedule();
    let x = random_image(&mut ChaCha8Rng::seed_from_u64(1));
    let keep_all = Mask::filled(8, 8, true);
    assert_eq!(inpaint(&x, &keep_all, &model, &s, rng_from_seed(3)).unwrap(), x);
    let keep_none = Mask::filled(8, 8, false);
    let inpainted = inpaint(&x, &keep_none, &model, &s, rng_from_seed(4)).unwrap();
    let sampled = sample(&model, &s, rng_from_seed(4)).unwrap();
    assert_eq!(inpainted, sampled);
}

#[test]
fn same_stream_same_result() {
    let model = EpsilonModel::new(arch(), 2).unwrap();
    let s = schedule();
    let x = random_image(&mut ChaCha8Rng::seed_from_u64(9));
    let mask = lmd_core::masking::get_mask(
        &lmd_core::masking::MaskSpec::AlternatingCheckerboard { grid: 4 },
        0,
        8,
        8,
        &mut rng_from_seed(0),
    )
    .unwrap();
    let a = inpaint(&x, &mask, &model, &s, rng_from_seed(10)).unwrap();
    let b = inpaint(&x, &mask, &model, &s, rng_from_seed(10)).unwrap();
    let c = inpaint(&x, &mask, &model, &s, rng_from_seed(11)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(
        regenerate(&x, 6, &model, &s, rng_from_seed(1)).unwrap(),
        regenerate(&x, 6, &model, &s, rng_from_seed(1)).unwrap()
    );
    assert!(regenerate(&x, 0, &model, &s, rng_from_seed(1)).is_err());
}

fn zero_model() -> EpsilonModel {
    let layout = arch().parameter_layout();
    let zeros = layout.iter().map(|(_, s)| vec![0.0; s.iter().product()]).collect();
    EpsilonModel::from_parameters(arch(), 0, zeros).unwrap()
}

#[test]
fn zero_noise_prediction_rescales_by_inverse_sqrt_alpha() {
    let model = zero_model();
    let s = schedule();
    let x = random_image(&mut ChaCha8Rng::seed_from_u64(2));
    // σ₁ = 0, so the last step is deterministic.
    let out = denoise_step(&x, 1, &model, &s, &mut rng_from_seed(0)).unwrap();
    let k = 1.0 / s.alpha(1).sqrt();
    for (&o, &v) in out.data().iter().zip(x.data()) {
        assert!((o as f64 - v as f64 * k).abs() < 1e-6);
    }
    assert!(denoise_step(&x, 0, &model, &s, &mut rng_from_seed(0)).is_err());
}

#[test]
fn tiny_beta_step_is_nearly_identity() {
    let model = zero_model();
    let s = NoiseSchedule::linear(4, 1e-9, 1e-9).unwrap();
    let x = random_image(&mut ChaCha8Rng::seed_from_u64(8));
    let out = denoise_step(&x, 3, &model, &s, &mut rng_from_seed(0)).unwrap();
    for (&o, &v) in out.data().iter().zip(x.data()) {
        assert!((o - v).abs() < 1e-3);
    }
}

#[test]
fn closed_form_diffusion_examples() {
    let s = NoiseSchedule::linear(3, 0.1, 0.3).unwrap();
    let x0 = Image::filled(1, 2, 2, 1.0);
    let noise = Image::filled(1, 2, 2, 0.5);
    assert_eq!(diffuse_to(&x0, 0, &noise, &s).unwrap(), x0);
    let x1 = diffuse_to(&x0, 1, &noise, &s).unwrap();
    assert!(x1.data().iter().all(|&v| (v - 1.10679).abs() < 1e-5));
    let zero = Image::filled(1, 2, 2, 0.0);
    let two = NoiseSchedule::linear(2, 0.5, 0.5).unwrap();
    let half = diffuse_to(&x0, 2, &zero, &two).unwrap();
    assert!(half.data().iter().all(|&v| (v - 0.5).abs() < 1e-7));
    assert!(diffuse_to(&x0, 4, &noise, &s).is_err());
}

#[test]
fn samples_are_clamped() {
    let model = EpsilonModel::new(arch(), 6).unwrap();
    let img = sample(&model, &schedule(), rng_from_seed(1)).unwrap();
    assert!(img.data().iter().all(|v| (-1.0..=1.0).contains(v)));
}
