use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Rating, RatingTable};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// `(c0, c1, c2)` of the true liking curve `q(s) = c0 + c1·s + c2·s²`.
    pub coeffs: [f64; 3],
    pub sigma_b: f64,
    pub sigma_e: f64,
    pub n_subjects: usize,
    pub n_clips: usize,
    /// Surprisal values are drawn uniformly from this range.
    pub s_range: (f64, f64),
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            coeffs: [0.0, 4.0, -1.0],
            sigma_b: 1.0,
            sigma_e: 1.0,
            n_subjects: 44,
            n_clips: 57,
            s_range: (0.0, 4.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedStudy {
    pub table: RatingTable,
    /// `(clip_id, s)` in clip order.
    pub surprisal: Vec<(String, f64)>,
    /// True random intercept per subject.
    pub subject_effects: Vec<(String, f64)>,
}

pub fn subject_id(i: usize) -> String {
    format!("s{i:03}")
}

pub fn clip_id(j: usize) -> String {
    format!("clip{j:03}")
}

/// Ratings `y_ij = q(s_j) + b_i + ε_ij` for every subject/clip pair.
pub fn simulate_study(cfg: &SimulationConfig) -> Result<SimulatedStudy> {
    if cfg.n_subjects < 2 || cfg.n_clips < 2 {
        return Err(Error::InvalidArgument("need at least two subjects and two clips".into()));
    }
    let (lo, hi) = cfg.s_range;
    if !(lo < hi) || cfg.sigma_b < 0.0 || cfg.sigma_e < 0.0 {
        return Err(Error::InvalidArgument("bad simulation ranges".into()));
    }
    let mut clip_rng = rng::stream(cfg.seed, &[rng::name_tag("clips")]);
    let surprisal: Vec<(String, f64)> = (0..cfg.n_clips)
        .map(|j| (clip_id(j), clip_rng.random_range(lo..hi)))
        .collect();
    let mut subj_rng = rng::stream(cfg.seed, &[rng::name_tag("subjects")]);
    let subject_effects: Vec<(String, f64)> = (0..cfg.n_subjects)
        .map(|i| {
            let z: f64 = subj_rng.sample(StandardNormal);
            (subject_id(i), cfg.sigma_b * z)
        })
        .collect();
    let [c0, c1, c2] = cfg.coeffs;
    let mut noise = rng::stream(cfg.seed, &[rng::name_tag("noise")]);
    let mut rows = Vec::with_capacity(cfg.n_subjects * cfg.n_clips);
    for (sid, b) in &subject_effects {
        for (cid, s) in &surprisal {
            let e: f64 = noise.sample(StandardNormal);
            rows.push(Rating {
                subject_id: sid.clone(),
                clip_id: cid.clone(),
                rating: c0 + c1 * s + c2 * s * s + b + cfg.sigma_e * e,
            });
        }
    }
    Ok(SimulatedStudy {
        table: RatingTable::new(rows)?,
        surprisal,
        subject_effects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_given_seed() {
        let cfg = SimulationConfig {
            seed: 3,
            ..SimulationConfig::default()
        };
        assert_eq!(simulate_study(&cfg).unwrap(), simulate_study(&cfg).unwrap());
        let other = SimulationConfig { seed: 4, ..cfg };
        assert_ne!(simulate_study(&other).unwrap().table, simulate_study(&cfg).unwrap().table);
    }

    #[test]
    fn shape_and_noise_free_values() {
        let cfg = SimulationConfig {
            sigma_b: 0.0,
            sigma_e: 0.0,
            n_subjects: 3,
            n_clips: 5,
            ..SimulationConfig::default()
        };
        let st = simulate_study(&cfg).unwrap();
        assert_eq!(st.table.rows().len(), 15);
        for r in st.table.rows() {
            let s = st.surprisal.iter().find(|(c, _)| *c == r.clip_id).unwrap().1;
            assert_eq!(r.rating, 4.0 * s - s * s);
        }
    }

    #[test]
    fn rejects_tiny_designs() {
        let cfg = SimulationConfig {
            n_subjects: 1,
            ..SimulationConfig::default()
        };
        assert!(simulate_study(&cfg).is_err());
    }
}
