use serde::{Deserialize, Serialize};

use super::QuadraticFitReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    InvertedU,
    U,
    Flat,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WundtVerdict {
    pub verdict: VerdictKind,
    pub alpha: f64,
    pub quadratic_coeff: f64,
    pub quadratic_p: f64,
    pub linear_p: f64,
    /// Covariate value of peak liking, reported for an inverted U.
    pub vertex_s: Option<f64>,
}

pub fn wundt_verdict(report: &QuadraticFitReport, alpha: f64) -> WundtVerdict {
    let c2 = report.coeffs[2];
    let (p1, p2) = (report.p_values[1], report.p_values[2]);
    let verdict = if p2 < alpha && c2 < 0.0 {
        VerdictKind::InvertedU
    } else if p2 < alpha && c2 > 0.0 {
        VerdictKind::U
    } else if p2 >= alpha && p1 >= alpha {
        VerdictKind::Flat
    } else {
        VerdictKind::Inconclusive
    };
    WundtVerdict {
        verdict,
        alpha,
        quadratic_coeff: c2,
        quadratic_p: p2,
        linear_p: p1,
        vertex_s: (verdict == VerdictKind::InvertedU).then_some(report.vertex_s).flatten(),
    }
}

/// Goodness-of-fit figures for one covariate model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: String,
    pub n: usize,
    pub r2: f64,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
}

impl ModelMetrics {
    pub fn from_report(model: impl Into<String>, r: &QuadraticFitReport) -> Self {
        Self {
            model: model.into(),
            n: r.n,
            r2: r.r2,
            loglik: r.loglik,
            aic: r.aic,
            bic: r.bic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub r2: f64,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub best_r2: bool,
    pub best_loglik: bool,
    pub best_aic: bool,
    pub best_bic: bool,
}

/// Tabulates metrics and flags the best model per column (ties all flagged).
pub fn compare_metrics(models: &[ModelMetrics]) -> Result<Vec<ComparisonRow>> {
    if models.len() < 2 {
        return Err(Error::InvalidArgument("need at least two models to compare".into()));
    }
    let n = models[0].n;
    if let Some(m) = models.iter().find(|m| m.n != n) {
        return Err(Error::InvalidArgument(format!(
            "model {} has n = {}, expected {n}",
            m.model, m.n
        )));
    }
    let max = |f: fn(&ModelMetrics) -> f64| models.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let min = |f: fn(&ModelMetrics) -> f64| models.iter().map(f).fold(f64::INFINITY, f64::min);
    let (r2, ll, aic, bic) = (max(|m| m.r2), max(|m| m.loglik), min(|m| m.aic), min(|m| m.bic));
    Ok(models
        .iter()
        .map(|m| ComparisonRow {
            model: m.model.clone(),
            r2: m.r2,
            loglik: m.loglik,
            aic: m.aic,
            bic: m.bic,
            best_r2: m.r2 == r2,
            best_loglik: m.loglik == ll,
            best_aic: m.aic == aic,
            best_bic: m.bic == bic,
        })
        .collect())
}

pub fn compare_models(reports: &[(String, QuadraticFitReport)]) -> Result<Vec<ComparisonRow>> {
    let metrics: Vec<ModelMetrics> = reports
        .iter()
        .map(|(name, r)| ModelMetrics::from_report(name.clone(), r))
        .collect();
    compare_metrics(&metrics)
}
