//! Random-intercept model `y_ij = β0 + b_i + ε_ij` fitted by maximum
//! likelihood, with the variance ratio found by a 1-D search on the profiled
//! log-likelihood.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{AdjustedRating, RatingTable};
use crate::error::{Error, Result};

// The ICC ρ = σ_b²/(σ_b²+σ_e²) is searched on [0, RHO_MAX].
pub const RHO_MAX: f64 = 1.0 - 1e-9;
const GRID: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedFit {
    pub beta0: f64,
    pub sigma_b2: f64,
    pub sigma_e2: f64,
    pub blup: BTreeMap<String, f64>,
    pub loglik: f64,
    pub n_obs: usize,
    pub n_subjects: usize,
    /// Set when the likelihood has no interior optimum: all ratings equal,
    /// or no within-subject variation.
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct GroupStats {
    pub id: String,
    pub n: f64,
    pub mean: f64,
    pub ss: f64,
}

pub(crate) fn group_stats(table: &RatingTable) -> Vec<GroupStats> {
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in table.rows() {
        groups.entry(r.subject_id.as_str()).or_default().push(r.rating);
    }
    groups
        .into_iter()
        .map(|(id, ys)| {
            let n = ys.len() as f64;
            let mean = ys.iter().sum::<f64>() / n;
            let ss = ys.iter().map(|y| (y - mean) * (y - mean)).sum();
            GroupStats {
                id: id.to_string(),
                n,
                mean,
                ss,
            }
        })
        .collect()
}

/// Quantities of the profiled likelihood at variance ratio `λ = σ_b²/σ_e²`.
pub(crate) struct Profile {
    pub beta0: f64,
    pub q: f64,
    pub loglik: f64,
}

pub(crate) fn profile(groups: &[GroupStats], lambda: f64) -> Profile {
    let n_obs: f64 = groups.iter().map(|g| g.n).sum();
    let (num, den) = groups.iter().fold((0.0, 0.0), |(a, b), g| {
        let w = g.n / (1.0 + g.n * lambda);
        (a + w * g.mean, b + w)
    });
    let beta0 = num / den;
    let q: f64 = groups
        .iter()
        .map(|g| g.ss + g.n * (g.mean - beta0).powi(2) / (1.0 + g.n * lambda))
        .sum();
    let log_det: f64 = groups.iter().map(|g| (g.n * lambda).ln_1p()).sum();
    let loglik = -0.5 * (n_obs * (2.0 * PI).ln() + n_obs * (q / n_obs).ln() + log_det + n_obs);
    Profile { beta0, q, loglik }
}

// d loglik / d λ; β0 is profiled out so its own derivative drops.
fn score(groups: &[GroupStats], lambda: f64) -> f64 {
    let n_obs: f64 = groups.iter().map(|g| g.n).sum();
    let p = profile(groups, lambda);
    let dq: f64 = groups
        .iter()
        .map(|g| -(g.n * (g.mean - p.beta0)).powi(2) / (1.0 + g.n * lambda).powi(2))
        .sum();
    let dlogdet: f64 = groups.iter().map(|g| g.n / (1.0 + g.n * lambda)).sum();
    -0.5 * (n_obs * dq / p.q + dlogdet)
}

/// Bisection on the score inside `[lo, hi]`; `None` without a sign change.
fn score_root(groups: &[GroupStats], mut lo: f64, mut hi: f64) -> Option<f64> {
    let s = |rho: f64| score(groups, lambda_of(rho));
    if !(s(lo) > 0.0 && s(hi) < 0.0) {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if s(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

fn lambda_of(rho: f64) -> f64 {
    rho / (1.0 - rho)
}

/// Profiled log-likelihood as a function of the intraclass correlation.
pub fn profiled_loglik(table: &RatingTable, rho: f64) -> f64 {
    profile(&group_stats(table), lambda_of(rho)).loglik
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-14 {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

pub fn fit_random_intercept(table: &RatingTable) -> Result<MixedFit> {
    let groups = group_stats(table);
    if groups.len() < 2 {
        return Err(Error::InsufficientData("need at least two subjects".into()));
    }
    if groups.iter().all(|g| g.n < 2.0) {
        return Err(Error::InsufficientData(
            "need a subject with at least two ratings".into(),
        ));
    }
    let n_obs = table.rows().len();
    let first = table.rows()[0].rating;
    if table.rows().iter().all(|r| r.rating == first) {
        let sigma_e2 = f64::EPSILON;
        let loglik = -0.5 * n_obs as f64 * ((2.0 * PI * sigma_e2).ln() + 1.0);
        return Ok(MixedFit {
            beta0: first,
            sigma_b2: 0.0,
            sigma_e2,
            blup: groups.iter().map(|g| (g.id.clone(), 0.0)).collect(),
            loglik,
            n_obs,
            n_subjects: groups.len(),
            degenerate: true,
        });
    }

    let ll = |rho: f64| profile(&groups, lambda_of(rho)).loglik;
    let grid: Vec<f64> = (0..=GRID).map(|i| RHO_MAX * i as f64 / GRID as f64).collect();
    let best = (0..grid.len())
        .max_by(|&a, &b| ll(grid[a]).total_cmp(&ll(grid[b])))
        .unwrap();
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(GRID)];
    let mut rho = golden_max(ll, lo, hi);
    // The likelihood is flat at its peak; its derivative pins the root far
    // more precisely than comparing function values.
    if let Some(r) = score_root(&groups, lo, hi) {
        if ll(r) >= ll(rho) - 1e-9 {
            rho = r;
        }
    }
    for cand in [0.0, RHO_MAX] {
        if ll(cand) >= ll(rho) {
            rho = cand;
        }
    }
    if ll(grid[best]) > ll(rho) {
        rho = grid[best];
    }

    let lambda = lambda_of(rho);
    let prof = profile(&groups, lambda);
    let sigma_e2 = prof.q / n_obs as f64;
    let sigma_b2 = lambda * sigma_e2;
    let blup = groups
        .iter()
        .map(|g| {
            let shrink = g.n * lambda / (1.0 + g.n * lambda);
            (g.id.clone(), shrink * (g.mean - prof.beta0))
        })
        .collect();
    Ok(MixedFit {
        beta0: prof.beta0,
        sigma_b2,
        sigma_e2,
        blup,
        loglik: prof.loglik,
        n_obs,
        n_subjects: groups.len(),
        degenerate: rho >= RHO_MAX,
    })
}

impl MixedFit {
    /// `σ_b² / (σ_b² + σ_e²/n)` for a subject with `n` ratings.
    pub fn shrinkage(&self, n: usize) -> f64 {
        if self.sigma_b2 == 0.0 {
            return 0.0;
        }
        self.sigma_b2 / (self.sigma_b2 + self.sigma_e2 / n as f64)
    }
}

/// `rating − b̂_subject` for every row.
pub fn adjust_ratings(table: &RatingTable, fit: &MixedFit) -> Result<Vec<AdjustedRating>> {
    table
        .rows()
        .iter()
        .map(|r| {
            let b = fit
                .blup
                .get(&r.subject_id)
                .ok_or_else(|| Error::UnknownSubject(r.subject_id.clone()))?;
            Ok(AdjustedRating {
                subject_id: r.subject_id.clone(),
                clip_id: r.clip_id.clone(),
                adjusted: r.rating - b,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::Rating;

    fn table(rows: &[(&str, &str, f64)]) -> RatingTable {
        RatingTable::new(
            rows.iter()
                .map(|(s, c, r)| Rating {
                    subject_id: s.to_string(),
                    clip_id: c.to_string(),
                    rating: *r,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_subject_means_give_zero_variance() {
        let t = table(&[
            ("a", "1", 2.0),
            ("a", "2", 5.0),
            ("a", "3", 3.0),
            ("b", "1", 2.0),
            ("b", "2", 5.0),
            ("b", "3", 3.0),
        ]);
        let fit = fit_random_intercept(&t).unwrap();
        assert_eq!(fit.sigma_b2, 0.0);
        assert!(fit.blup.values().all(|&b| b == 0.0));
        assert!(!fit.degenerate);
        let adj = adjust_ratings(&t, &fit).unwrap();
        for (a, r) in adj.iter().zip(t.rows()) {
            assert_eq!(a.adjusted, r.rating);
        }
    }

    #[test]
    fn balanced_two_subject_closed_form() {
        // Means 1 and 3, within-subject spread ±0.5. Balanced ML closed form:
        // σ_e² = SSW/(N−m) = 1/2, σ_b² = SSB/(m·n) − σ_e²/n = 1 − 1/4 = 3/4.
        let t = table(&[("A", "1", 0.5), ("A", "2", 1.5), ("B", "1", 2.5), ("B", "2", 3.5)]);
        let fit = fit_random_intercept(&t).unwrap();
        assert!((fit.beta0 - 2.0).abs() < 1e-12);
        assert!((fit.sigma_e2 - 0.5).abs() < 1e-8, "{}", fit.sigma_e2);
        assert!((fit.sigma_b2 - 0.75).abs() < 1e-8, "{}", fit.sigma_b2);
        let shrink = 0.75 / (0.75 + 0.5 / 2.0);
        assert!((fit.blup["A"] - -shrink).abs() < 1e-8);
        assert!((fit.blup["B"] - shrink * 1.0).abs() < 1e-8);
    }

    #[test]
    fn no_within_variation_is_degenerate() {
        let t = table(&[("A", "1", 1.0), ("A", "2", 1.0), ("B", "1", 3.0), ("B", "2", 3.0)]);
        let fit = fit_random_intercept(&t).unwrap();
        assert!((fit.beta0 - 2.0).abs() < 1e-9);
        let s = fit.shrinkage(2);
        assert!(s > 0.0 && s <= 1.0);
        assert!((fit.blup["A"] - -s).abs() < 1e-9);
        assert!(fit.degenerate);
    }

    #[test]
    fn constant_ratings_flagged() {
        let t = table(&[("A", "1", 4.0), ("A", "2", 4.0), ("B", "1", 4.0)]);
        let fit = fit_random_intercept(&t).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.sigma_b2, 0.0);
        assert!(fit.sigma_e2 > 0.0);
    }

    #[test]
    fn too_little_data_rejected() {
        assert!(fit_random_intercept(&table(&[("A", "1", 1.0), ("A", "2", 2.0)])).is_err());
        assert!(fit_random_intercept(&table(&[("A", "1", 1.0), ("B", "1", 2.0)])).is_err());
    }

    #[test]
    fn adjustment_subtracts_blup_and_rejects_unknown() {
        let t = table(&[("A", "1", 6.0)]);
        let fit = MixedFit {
            beta0: 5.0,
            sigma_b2: 1.0,
            sigma_e2: 1.0,
            blup: [("A".to_string(), 0.8)].into(),
            loglik: 0.0,
            n_obs: 1,
            n_subjects: 1,
            degenerate: false,
        };
        let adj = adjust_ratings(&t, &fit).unwrap();
        assert!((adj[0].adjusted - 5.2).abs() < 1e-12);
        let other = table(&[("Z", "1", 6.0)]);
        assert!(matches!(adjust_ratings(&other, &fit), Err(Error::UnknownSubject(_))));
    }
}
