use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
}

/// Serialized form of a schedule: enough to rebuild it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Linear,
            steps: 1000,
            beta_min: 1e-4,
            beta_max: 0.02,
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.kind, self.steps, self.beta_min, self.beta_max)
    }
}

/// Per-step noise coefficients for a discrete forward process with `T` steps.
///
/// Steps are 1-based. Index 0 is the clean data: `alpha_bar(0) == 1` and
/// `snr(0) == +inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ScheduleSpec", try_from = "ScheduleSpec")]
pub struct NoiseSchedule {
    spec: ScheduleSpec,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl From<NoiseSchedule> for ScheduleSpec {
    fn from(s: NoiseSchedule) -> Self {
        s.spec
    }
}

impl TryFrom<ScheduleSpec> for NoiseSchedule {
    type Error = Error;

    fn try_from(spec: ScheduleSpec) -> Result<Self> {
        spec.build()
    }
}

pub fn make_schedule(
    kind: ScheduleKind,
    steps: usize,
    beta_min: f64,
    beta_max: f64,
) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::InvalidSchedule("T must be at least 1".into()));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )));
    }
    let beta: Vec<f64> = match kind {
        ScheduleKind::Linear if steps == 1 => vec![beta_min],
        ScheduleKind::Linear => {
            let span = beta_max - beta_min;
            let denom = (steps - 1) as f64;
            (0..steps)
                .map(|i| beta_min + i as f64 / denom * span)
                .collect()
        }
    };
    let mut alpha_bar = Vec::with_capacity(steps + 1);
    let mut acc = 1.0;
    alpha_bar.push(acc);
    for b in &beta {
        acc *= 1.0 - b;
        alpha_bar.push(acc);
    }
    Ok(NoiseSchedule {
        spec: ScheduleSpec {
            kind,
            steps,
            beta_min,
            beta_max,
        },
        beta,
        alpha_bar,
    })
}

impl NoiseSchedule {
    pub fn spec(&self) -> &ScheduleSpec {
        &self.spec
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        assert!((1..=self.steps()).contains(&t), "step {t} out of range");
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta(t)
    }

    /// Cumulative signal fraction; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bar_final(&self) -> f64 {
        self.alpha_bar[self.steps()]
    }

    pub fn snr(&self, t: usize) -> f64 {
        if t == 0 {
            return f64::INFINITY;
        }
        let ab = self.alpha_bar[t];
        ab / (1.0 - ab)
    }

    /// Variance of the fixed reverse step: the forward-posterior variance
    /// for `t >= 2`, and `beta_1` at `t == 1`.
    pub fn reverse_variance(&self, t: usize) -> f64 {
        if t == 1 {
            return self.beta(1);
        }
        self.beta(t) * (1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t])
    }

    /// Weight `½·(SNR(t−1)/SNR(t) − 1)` of the squared noise-prediction error
    /// in the step-`t` KL term, for `t >= 2`.
    ///
    /// Evaluated as `β_t / (2·α_t·(1 − ᾱ_{t−1}))`, which is algebraically the
    /// same quantity without the cancellation in the SNR ratio.
    pub fn diffusion_weight(&self, t: usize) -> f64 {
        assert!(t >= 2 && t <= self.steps(), "step {t} has no diffusion weight");
        self.beta(t) / (2.0 * self.alpha(t) * (1.0 - self.alpha_bar[t - 1]))
    }

    pub(crate) fn check_step(&self, t: usize, lo: usize) -> Result<()> {
        if t < lo || t > self.steps() {
            return Err(Error::StepOutOfRange {
                t,
                lo,
                hi: self.steps(),
            });
        }
        Ok(())
    }
}
