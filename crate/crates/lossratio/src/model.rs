//! Data model, priors and unnormalized log-density evaluation.
//!
//! The observable is a loss ratio `R_j = L_j / E_j` per year, modelled as
//!
//! ```text
//! R_j     ~ N(alpha_j, (sigma E_j)^-1)
//! alpha_j ~ N(rho alpha_{j-1} + (1 - rho) eta, tau^-1)
//! ```
//!
//! with standard-normal priors on `alpha_0`, `rho`, `eta` and gamma priors on
//! the precisions `sigma` and `tau`. Three nested models are supported: the
//! full model M1, M2 with `rho` fixed at 1 (no `eta`) and M3 with `rho` fixed
//! at 0 (no `alpha_0`). Note that `sigma` and `tau` are precisions, not
//! variances, throughout.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Log-density of a standard normal at `x`.
pub fn std_normal_lpdf(x: f64) -> f64 {
    -0.5 * (LN_2PI + x * x)
}

/// Log-density of Gamma(shape, rate) at `x` (rate parameterization,
/// density proportional to `x^{shape-1} e^{-rate x}`).
pub fn gamma_lpdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Log-density of N(mean, variance) at `x`.
pub fn normal_lpdf(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + variance.ln() + d * d / variance)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelId {
    M1,
    M2,
    M3,
}

impl ModelId {
    pub const ALL: [ModelId; 3] = [ModelId::M1, ModelId::M2, ModelId::M3];

    pub fn index(self) -> usize {
        match self {
            ModelId::M1 => 0,
            ModelId::M2 => 1,
            ModelId::M3 => 2,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(ModelId::M1),
            1 => Ok(ModelId::M2),
            2 => Ok(ModelId::M3),
            _ => Err(Error::InvalidState(format!("model index {i} out of range"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelId::M1 => "m1",
            ModelId::M2 => "m2",
            ModelId::M3 => "m3",
        }
    }

    /// `rho` is a free parameter only under M1; M2 pins it at 1, M3 at 0.
    pub fn fixed_rho(self) -> Option<f64> {
        match self {
            ModelId::M1 => None,
            ModelId::M2 => Some(1.0),
            ModelId::M3 => Some(0.0),
        }
    }

    pub fn has_alpha0(self) -> bool {
        !matches!(self, ModelId::M3)
    }

    pub fn has_eta(self) -> bool {
        !matches!(self, ModelId::M2)
    }
}

impl std::fmt::Display for ModelId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// A time-ordered series of yearly loss counts, exposures and the derived
/// loss ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSeries {
    years: Vec<i64>,
    losses: Vec<f64>,
    exposures: Vec<f64>,
    ratios: Vec<f64>,
}

impl ObservationSeries {
    /// Ingest raw `(year, loss, exposure)` rows. Requires at least two rows
    /// (the process model needs at least one transition) and strictly
    /// positive exposures.
    pub fn load_series(rows: &[(i64, f64, f64)]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InvalidData(format!(
                "need at least 2 rows, got {}",
                rows.len()
            )));
        }
        let years = rows.iter().map(|r| r.0).collect();
        let losses = rows.iter().map(|r| r.1).collect();
        let exposures = rows.iter().map(|r| r.2).collect();
        Self::from_parts(years, losses, exposures)
    }

    /// Build a series directly from its columns. Accepts a single row so
    /// closed-form conditionals can be exercised at n = 1; the ingestion path
    /// (`load_series`, CSV) enforces n >= 2.
    pub fn from_parts(years: Vec<i64>, losses: Vec<f64>, exposures: Vec<f64>) -> Result<Self> {
        if years.is_empty() || years.len() != losses.len() || years.len() != exposures.len() {
            return Err(Error::InvalidData("column lengths inconsistent".into()));
        }
        for (i, (&l, &e)) in losses.iter().zip(&exposures).enumerate() {
            if !(e > 0.0) || !e.is_finite() {
                return Err(Error::InvalidData(format!(
                    "row {i}: exposure must be positive, got {e}"
                )));
            }
            // The observation model is an untruncated normal, so simulated
            // losses can legitimately dip below zero; only non-finite values
            // are rejected.
            if !l.is_finite() {
                return Err(Error::InvalidData(format!(
                    "row {i}: loss must be a finite real, got {l}"
                )));
            }
        }
        let ratios = losses.iter().zip(&exposures).map(|(&l, &e)| l / e).collect();
        Ok(Self {
            years,
            losses,
            exposures,
            ratios,
        })
    }

    /// Read the `year,loss,exposure` CSV format.
    pub fn from_csv_path(path: &std::path::Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let expected = ["year", "loss", "exposure"];
        let got: Vec<&str> = headers.iter().map(|h| h.trim()).collect();
        if got != expected {
            return Err(Error::InvalidData(format!(
                "expected header year,loss,exposure, got {}",
                got.join(",")
            )));
        }
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let parse = |field: usize, name: &str| -> Result<f64> {
                record
                    .get(field)
                    .ok_or_else(|| Error::InvalidData(format!("row {i}: missing {name}")))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidData(format!("row {i}: bad {name}")))
            };
            let year = parse(0, "year")? as i64;
            rows.push((year, parse(1, "loss")?, parse(2, "exposure")?));
        }
        Self::load_series(&rows)
    }

    pub fn n(&self) -> usize {
        self.ratios.len()
    }

    pub fn years(&self) -> &[i64] {
        &self.years
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn exposures(&self) -> &[f64] {
        &self.exposures
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn mean_ratio(&self) -> f64 {
        self.ratios.iter().sum::<f64>() / self.n() as f64
    }
}

/// Gamma hyperparameters for the precision priors and the discrete model
/// prior. The standard-normal priors on `alpha_0`, `rho` and `eta` are fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
    pub model_prior: [f64; 3],
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            a1: 0.001,
            b1: 0.001,
            a2: 0.001,
            b2: 0.001,
            model_prior: [1.0 / 3.0; 3],
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("a1", self.a1),
            ("b1", self.b1),
            ("a2", self.a2),
            ("b2", self.b2),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        let sum: f64 = self.model_prior.iter().sum();
        if self.model_prior.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "model_prior must be nonnegative and sum to 1, got {:?}",
                self.model_prior
            )));
        }
        Ok(())
    }

    pub fn log_model_prior(&self, model: ModelId) -> f64 {
        self.model_prior[model.index()].ln()
    }
}

/// Per-model parameter vector. `alpha0` is absent under M3, `eta` under M2;
/// `rho` stores the pinned value 1 (M2) or 0 (M3) for the reduced models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamState {
    pub model: ModelId,
    pub alpha0: Option<f64>,
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub eta: Option<f64>,
    pub sigma: f64,
    pub tau: f64,
}

impl ParamState {
    pub fn new_m1(alpha0: f64, alpha: Vec<f64>, rho: f64, eta: f64, sigma: f64, tau: f64) -> Self {
        Self {
            model: ModelId::M1,
            alpha0: Some(alpha0),
            alpha,
            rho,
            eta: Some(eta),
            sigma,
            tau,
        }
    }

    pub fn new_m2(alpha0: f64, alpha: Vec<f64>, sigma: f64, tau: f64) -> Self {
        Self {
            model: ModelId::M2,
            alpha0: Some(alpha0),
            alpha,
            rho: 1.0,
            eta: None,
            sigma,
            tau,
        }
    }

    pub fn new_m3(alpha: Vec<f64>, eta: f64, sigma: f64, tau: f64) -> Self {
        Self {
            model: ModelId::M3,
            alpha0: None,
            alpha,
            rho: 0.0,
            eta: Some(eta),
            sigma,
            tau,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_empty() {
            return Err(Error::InvalidState("empty alpha vector".into()));
        }
        if self.alpha0.is_some() != self.model.has_alpha0() {
            return Err(Error::InvalidState(format!(
                "alpha0 presence inconsistent with {}",
                self.model
            )));
        }
        if self.eta.is_some() != self.model.has_eta() {
            return Err(Error::InvalidState(format!(
                "eta presence inconsistent with {}",
                self.model
            )));
        }
        if let Some(fixed) = self.model.fixed_rho() {
            if self.rho != fixed {
                return Err(Error::InvalidState(format!(
                    "rho must be {fixed} under {}, got {}",
                    self.model, self.rho
                )));
            }
        }
        Ok(())
    }

    /// Dimension of the free-parameter vector: n+5 (M1), n+3 (M2/M3).
    pub fn dim(&self) -> usize {
        let n = self.alpha.len();
        match self.model {
            ModelId::M1 => n + 5,
            ModelId::M2 | ModelId::M3 => n + 3,
        }
    }

    /// `eta` where defined, 0 otherwise (only ever multiplied by `1 - rho`,
    /// which is 0 exactly when `eta` is absent).
    pub(crate) fn eta_or_zero(&self) -> f64 {
        self.eta.unwrap_or(0.0)
    }

    /// Value occupying the alpha_0 slot in process sums; 0 for M3 where it is
    /// only ever multiplied by `rho = 0`.
    pub(crate) fn alpha0_or_zero(&self) -> f64 {
        self.alpha0.unwrap_or(0.0)
    }

    /// Previous process value for the transition into `alpha[j]` (0-based).
    pub(crate) fn alpha_prev(&self, j: usize) -> f64 {
        if j == 0 {
            self.alpha0_or_zero()
        } else {
            self.alpha[j - 1]
        }
    }

    /// Conditional mean of `alpha[j]` (0-based) given its predecessor.
    pub(crate) fn process_mean(&self, j: usize) -> f64 {
        self.rho * self.alpha_prev(j) + (1.0 - self.rho) * self.eta_or_zero()
    }
}

/// Unnormalized log posterior density of `state` under its model, including
/// the log model prior. Out-of-support precisions yield `-inf`.
pub fn log_joint(state: &ParamState, data: &ObservationSeries, priors: &PriorConfig) -> f64 {
    debug_assert_eq!(state.alpha.len(), data.n());
    if !(state.sigma > 0.0) || !(state.tau > 0.0) {
        return f64::NEG_INFINITY;
    }
    let mut lp = priors.log_model_prior(state.model);
    for (j, (&r, &e)) in data.ratios().iter().zip(data.exposures()).enumerate() {
        let d = r - state.alpha[j];
        lp += 0.5 * ((state.sigma * e).ln() - LN_2PI) - 0.5 * state.sigma * e * d * d;
    }
    for j in 0..state.alpha.len() {
        let d = state.alpha[j] - state.process_mean(j);
        lp += 0.5 * (state.tau.ln() - LN_2PI) - 0.5 * state.tau * d * d;
    }
    lp += gamma_lpdf(state.sigma, priors.a1, priors.b1);
    lp += gamma_lpdf(state.tau, priors.a2, priors.b2);
    if let Some(a0) = state.alpha0 {
        lp += std_normal_lpdf(a0);
    }
    if state.model == ModelId::M1 {
        lp += std_normal_lpdf(state.rho);
    }
    if let Some(eta) = state.eta {
        lp += std_normal_lpdf(eta);
    }
    lp
}

/// Log of the marginalized M1 posterior with `sigma` and `tau` integrated
/// out analytically, up to an additive constant:
///
/// ```text
/// log p(rho) + log p(eta) + log p(alpha0)
///   - (a1 + n/2) log(b1 + 1/2 sum E_j (alpha_j - R_j)^2)
///   - (a2 + n/2) log(b2 + 1/2 sum (alpha_j - rho alpha_{j-1} - (1-rho) eta)^2)
/// ```
pub fn log_marginal_target(
    alpha0: f64,
    alpha: &[f64],
    rho: f64,
    eta: f64,
    data: &ObservationSeries,
    priors: &PriorConfig,
) -> f64 {
    debug_assert_eq!(alpha.len(), data.n());
    let n = data.n() as f64;
    let mut obs_ss = 0.0;
    for ((&a, &r), &e) in alpha.iter().zip(data.ratios()).zip(data.exposures()) {
        obs_ss += e * (a - r) * (a - r);
    }
    let mut proc_ss = 0.0;
    let mut prev = alpha0;
    for &a in alpha {
        let d = a - rho * prev - (1.0 - rho) * eta;
        proc_ss += d * d;
        prev = a;
    }
    std_normal_lpdf(rho) + std_normal_lpdf(eta) + std_normal_lpdf(alpha0)
        - (priors.a1 + 0.5 * n) * (priors.b1 + 0.5 * obs_ss).ln()
        - (priors.a2 + 0.5 * n) * (priors.b2 + 0.5 * proc_ss).ln()
}
