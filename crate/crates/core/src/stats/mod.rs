//! Mixed-model rating adjustment, quadratic fit and the liking-curve verdict.

mod mixed;
mod ols;
mod simulate;
mod verdict;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use mixed::{adjust_ratings, fit_random_intercept, profiled_loglik, MixedFit, RHO_MAX};
pub use ols::{aic, bic, quadratic_fit, QuadraticFitReport, QUADRATIC_K};
pub use simulate::{simulate_study, SimulatedStudy, SimulationConfig};
pub use verdict::{
    compare_metrics, compare_models, wundt_verdict, ComparisonRow, ModelMetrics, VerdictKind,
    WundtVerdict,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub subject_id: String,
    pub clip_id: String,
    pub rating: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustedRating {
    pub subject_id: String,
    pub clip_id: String,
    pub adjusted: f64,
}

/// Liking ratings with unique `(subject, clip)` pairs and finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingTable {
    rows: Vec<Rating>,
    baseline: Option<BTreeMap<String, f64>>,
}

impl RatingTable {
    pub fn new(rows: Vec<Rating>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InsufficientData("rating table is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for r in &rows {
            if !r.rating.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite rating for ({}, {})",
                    r.subject_id, r.clip_id
                )));
            }
            if !seen.insert((r.subject_id.as_str(), r.clip_id.as_str())) {
                return Err(Error::Duplicate(format!("({}, {})", r.subject_id, r.clip_id)));
            }
        }
        Ok(Self { rows, baseline: None })
    }

    pub fn with_baseline(mut self, baseline: BTreeMap<String, f64>) -> Result<Self> {
        if let Some((c, _)) = baseline.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite baseline for {c}")));
        }
        self.baseline = Some(baseline);
        Ok(self)
    }

    pub fn rows(&self) -> &[Rating] {
        &self.rows
    }

    pub fn baseline(&self) -> Option<&BTreeMap<String, f64>> {
        self.baseline.as_ref()
    }

    pub fn clip_ids(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.clip_id.as_str()).collect()
    }
}

pub fn read_ratings(path: &Path) -> Result<RatingTable> {
    let mut rdr = csv::Reader::from_path(path)?;
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<Rating>, _>>()?;
    RatingTable::new(rows)
}

pub fn write_ratings(path: &Path, table: &RatingTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in table.rows() {
        w.serialize(r)?;
    }
    crate::io::write_atomic(path, &w.into_inner().map_err(|e| e.into_error())?)
}

#[derive(Debug, Serialize, Deserialize)]
struct CovariateRow {
    clip_id: String,
    value: f64,
}

/// Per-clip covariate CSV with header `clip_id,value`.
pub fn read_covariate(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for row in rdr.deserialize() {
        let row: CovariateRow = row?;
        if out.insert(row.clip_id.clone(), row.value).is_some() {
            return Err(Error::Duplicate(row.clip_id));
        }
    }
    Ok(out)
}

pub fn write_covariate(path: &Path, values: &BTreeMap<String, f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (clip_id, value) in values {
        w.serialize(CovariateRow {
            clip_id: clip_id.clone(),
            value: *value,
        })?;
    }
    crate::io::write_atomic(path, &w.into_inner().map_err(|e| e.into_error())?)
}

/// Summary of the random-intercept fit without the per-subject map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedSummary {
    pub beta0: f64,
    pub sigma_b2: f64,
    pub sigma_e2: f64,
    pub loglik: f64,
    pub n_obs: usize,
    pub n_subjects: usize,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub mixed: MixedSummary,
    pub fit: QuadraticFitReport,
    pub verdict: WundtVerdict,
    pub baseline_fit: Option<QuadraticFitReport>,
    pub comparison: Option<Vec<ComparisonRow>>,
    /// Joined `(s, adjusted rating)` points in table order.
    #[serde(skip)]
    pub points: Vec<(f64, f64)>,
}

fn covariate_column(table: &RatingTable, cov: &BTreeMap<String, f64>, what: &str) -> Result<Vec<f64>> {
    let missing: Vec<&str> = table
        .clip_ids()
        .into_iter()
        .filter(|c| !cov.contains_key(*c))
        .collect();
    if !missing.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{} rated clip(s) lack a {what} value: {}",
            missing.len(),
            missing.join(", ")
        )));
    }
    Ok(table.rows().iter().map(|r| cov[&r.clip_id]).collect())
}

/// Mixed-model adjustment, quadratic fit on `surprisal`, and, when the table
/// carries a baseline covariate, a side-by-side comparison.
pub fn run_analysis(table: &RatingTable, surprisal: &BTreeMap<String, f64>, alpha: f64) -> Result<AnalysisReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let s = covariate_column(table, surprisal, "surprisal")?;
    let base = table
        .baseline()
        .map(|b| covariate_column(table, b, "baseline"))
        .transpose()?;
    let mixed = fit_random_intercept(table)?;
    let adjusted: Vec<f64> = adjust_ratings(table, &mixed)?.into_iter().map(|a| a.adjusted).collect();
    let fit = quadratic_fit(&s, &adjusted)?;
    let verdict = wundt_verdict(&fit, alpha);
    let (baseline_fit, comparison) = match base {
        Some(b) => {
            let bf = quadratic_fit(&b, &adjusted)?;
            let cmp = compare_models(&[("baseline".to_string(), bf.clone()), ("diffusion".to_string(), fit.clone())])?;
            (Some(bf), Some(cmp))
        }
        None => (None, None),
    };
    Ok(AnalysisReport {
        mixed: MixedSummary {
            beta0: mixed.beta0,
            sigma_b2: mixed.sigma_b2,
            sigma_e2: mixed.sigma_e2,
            loglik: mixed.loglik,
            n_obs: mixed.n_obs,
            n_subjects: mixed.n_subjects,
            degenerate: mixed.degenerate,
        },
        fit,
        verdict,
        baseline_fit,
        comparison,
        points: s.into_iter().zip(adjusted).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(s: &str, c: &str, v: f64) -> Rating {
        Rating {
            subject_id: s.into(),
            clip_id: c.into(),
            rating: v,
        }
    }

    #[test]
    fn table_rejects_duplicates_and_nan() {
        assert!(matches!(
            RatingTable::new(vec![r("a", "x", 1.0), r("a", "x", 2.0)]),
            Err(Error::Duplicate(_))
        ));
        assert!(RatingTable::new(vec![r("a", "x", f64::NAN)]).is_err());
        assert!(RatingTable::new(vec![]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let t = RatingTable::new(vec![r("a", "x", 1.5), r("b", "x", -2.0)]).unwrap();
        write_ratings(&p, &t).unwrap();
        assert_eq!(read_ratings(&p).unwrap(), t);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("subject_id,clip_id,rating\n"));
        let c = dir.path().join("c.csv");
        let m: BTreeMap<String, f64> = [("x".to_string(), 0.25)].into();
        write_covariate(&c, &m).unwrap();
        assert_eq!(read_covariate(&c).unwrap(), m);
    }

    #[test]
    fn missing_covariate_lists_clips() {
        let t = RatingTable::new(vec![r("a", "x", 1.0), r("a", "y", 2.0), r("b", "zz", 0.0)]).unwrap();
        let s: BTreeMap<String, f64> = [("x".to_string(), 0.0)].into();
        let err = run_analysis(&t, &s, 0.05).unwrap_err().to_string();
        assert!(err.contains("y") && err.contains("zz"), "{err}");
    }
}
