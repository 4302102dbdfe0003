use serde::{Deserialize, Serialize};

use crate::Error;

/// Parameters of a linear β schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSpec {
    /// 200 steps with the 1000-step range `1e-4..0.02` stretched by 1000/200,
    /// so the total injected noise matches the long schedule.
    fn default() -> Self {
        Self {
            steps: 200,
            beta_start: 5e-4,
            beta_end: 0.1,
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule, Error> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

/// Fixed forward-process variances and the quantities derived from them,
/// indexed by step `t ∈ 1..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    spec: ScheduleSpec,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, Error> {
        if steps < 2 {
            return Err(Error::Schedule(format!("need at least 2 steps, got {steps}")));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Schedule(format!(
                "β range must satisfy 0 < start ≤ end < 1, got ({beta_start}, {beta_end})"
            )));
        }
        let span = (steps - 1) as f64;
        let betas: Vec<f64> = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / span)
            .collect();
        let alpha_bars = betas
            .iter()
            .scan(1.0f64, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            spec: ScheduleSpec {
                steps,
                beta_start,
                beta_end,
            },
            betas,
            alpha_bars,
        })
    }

    pub fn spec(&self) -> ScheduleSpec {
        self.spec
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    /// ᾱ_t, with ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Sampling noise scale √β_t. The final step (t = 1) uses zero.
    pub fn sigma(&self, t: usize) -> f64 {
        if t <= 1 {
            0.0
        } else {
            self.beta(t).sqrt()
        }
    }

    /// `(1/√α_t, β_t / (√(1−ᾱ_t)·√α_t))`: coefficients of x_t and ε in the
    /// posterior mean.
    pub(crate) fn mean_coefficients(&self, t: usize) -> (f32, f32) {
        let inv_sqrt_alpha = 1.0 / self.alpha(t).sqrt();
        let eps_coef = self.beta(t) / (1.0 - self.alpha_bar(t)).sqrt() * inv_sqrt_alpha;
        (inv_sqrt_alpha as f32, eps_coef as f32)
    }

    pub(crate) fn check_step(&self, t: usize, allow_zero: bool) -> Result<(), Error> {
        let lo = usize::from(!allow_zero);
        if t < lo || t > self.steps() {
            return Err(Error::InvalidInput(format!(
                "diffusion step {t} outside {lo}..={}",
                self.steps()
            )));
        }
        Ok(())
    }
}

/// Sinusoidal embedding `[sin(tω₀), cos(tω₀), sin(tω₁), …]` with
/// `ω_i = 10000^(−2i/dim)`.
pub fn time_embedding(t: usize, dim: usize) -> Result<Vec<f32>, Error> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "time embedding dimension must be even, got {dim}"
        )));
    }
    if t == 0 {
        return Err(Error::InvalidInput("time embedding is defined for t ≥ 1".into()));
    }
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let omega = 10000f64.powf(-2.0 * i as f64 / dim as f64);
        let a = t as f64 * omega;
        out.push(a.sin() as f32);
        out.push(a.cos() as f32);
    }
    Ok(out)
}
