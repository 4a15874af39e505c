//! Closed-form full conditional distributions for every parameter under
//! every model. M2 conditionals are the M1 forms with `rho = 1` substituted,
//! M3 with `rho = 0`; the substitution happens through the values stored in
//! `ParamState`.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{normal_lpdf, ModelId, ObservationSeries, ParamState, PriorConfig};

/// Gamma in the rate parameterization: density proportional to
/// `x^{shape-1} e^{-rate x}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn logpdf(&self, x: f64) -> f64 {
        crate::model::gamma_lpdf(x, self.shape, self.rate)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // rand_distr's Gamma handles shape < 1 (the a = 0.001 regime that
        // arises when residuals vanish) via the boosting transformation.
        let g = Gamma::new(self.shape, 1.0 / self.rate).expect("valid gamma parameters");
        g.sample(rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalParams {
    pub mean: f64,
    pub variance: f64,
}

impl NormalParams {
    pub fn logpdf(&self, x: f64) -> f64 {
        normal_lpdf(x, self.mean, self.variance)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.mean + self.variance.sqrt() * z
    }
}

/// sigma | rest ~ Gamma(a1 + n/2, b1 + 1/2 sum E_j (R_j - alpha_j)^2).
pub fn sigma_conditional(
    state: &ParamState,
    data: &ObservationSeries,
    priors: &PriorConfig,
) -> GammaParams {
    let n = data.n() as f64;
    let mut ss = 0.0;
    for ((&r, &e), &a) in data.ratios().iter().zip(data.exposures()).zip(&state.alpha) {
        ss += e * (r - a) * (r - a);
    }
    GammaParams {
        shape: priors.a1 + 0.5 * n,
        rate: priors.b1 + 0.5 * ss,
    }
}

/// tau | rest ~ Gamma(a2 + n/2, b2 + 1/2 sum (alpha_j - rho alpha_{j-1} - (1-rho) eta)^2).
pub fn tau_conditional(
    state: &ParamState,
    data: &ObservationSeries,
    priors: &PriorConfig,
) -> GammaParams {
    let n = data.n() as f64;
    let mut ss = 0.0;
    for j in 0..state.alpha.len() {
        let d = state.alpha[j] - state.process_mean(j);
        ss += d * d;
    }
    GammaParams {
        shape: priors.a2 + 0.5 * n,
        rate: priors.b2 + 0.5 * ss,
    }
}

/// rho | rest under M1. Variance `(1 + tau sum (eta - alpha_{j-1})^2)^-1`,
/// mean `variance * tau sum (eta - alpha_j)(eta - alpha_{j-1})`; the j = 1
/// term uses alpha_0.
pub fn rho_conditional(
    state: &ParamState,
    _data: &ObservationSeries,
    _priors: &PriorConfig,
) -> Result<NormalParams> {
    if state.model != ModelId::M1 {
        return Err(Error::InvalidState(format!(
            "rho is fixed under {}",
            state.model
        )));
    }
    let eta = state.eta_or_zero();
    let tau = state.tau;
    let mut s_prev2 = 0.0;
    let mut s_cross = 0.0;
    for j in 0..state.alpha.len() {
        let prev = eta - state.alpha_prev(j);
        let cur = eta - state.alpha[j];
        s_prev2 += prev * prev;
        s_cross += cur * prev;
    }
    let variance = 1.0 / (1.0 + tau * s_prev2);
    Ok(NormalParams {
        mean: variance * tau * s_cross,
        variance,
    })
}

/// eta | rest under M1 or M3. Variance `(1 + n tau (1-rho)^2)^-1`,
/// mean `variance * tau (1-rho) sum (alpha_j - rho alpha_{j-1})`.
pub fn eta_conditional(
    state: &ParamState,
    data: &ObservationSeries,
    _priors: &PriorConfig,
) -> Result<NormalParams> {
    if !state.model.has_eta() {
        return Err(Error::InvalidState(format!(
            "eta is absent under {}",
            state.model
        )));
    }
    let n = data.n() as f64;
    let rho = state.rho;
    let tau = state.tau;
    let mut s = 0.0;
    for j in 0..state.alpha.len() {
        s += state.alpha[j] - rho * state.alpha_prev(j);
    }
    let variance = 1.0 / (1.0 + n * tau * (1.0 - rho) * (1.0 - rho));
    Ok(NormalParams {
        mean: variance * tau * (1.0 - rho) * s,
        variance,
    })
}

/// alpha_j | rest for j = 0..=n (paper indexing: j = 0 is alpha_0, which is
/// invalid under M3). Implements the three-case mean/variance split.
pub fn alpha_conditional(
    j: usize,
    state: &ParamState,
    data: &ObservationSeries,
    _priors: &PriorConfig,
) -> Result<NormalParams> {
    let n = state.alpha.len();
    if j > n {
        return Err(Error::InvalidState(format!(
            "alpha index {j} out of range 0..={n}"
        )));
    }
    let rho = state.rho;
    let eta = state.eta_or_zero();
    let tau = state.tau;
    let sigma = state.sigma;
    if j == 0 {
        if !state.model.has_alpha0() {
            return Err(Error::InvalidState("alpha0 is absent under M3".into()));
        }
        let variance = 1.0 / (1.0 + rho * rho * tau);
        let mean = variance * rho * tau * (state.alpha[0] - (1.0 - rho) * eta);
        return Ok(NormalParams { mean, variance });
    }
    // 0-based position of alpha_j within the alpha vector.
    let k = j - 1;
    let e = data.exposures()[k];
    let r = data.ratios()[k];
    let from_prev = tau * (rho * state.alpha_prev(k) + (1.0 - rho) * eta);
    if j < n {
        let variance = 1.0 / (rho * rho * tau + tau + sigma * e);
        let from_next = rho * tau * (state.alpha[k + 1] - (1.0 - rho) * eta);
        let mean = variance * (from_next + from_prev + sigma * e * r);
        Ok(NormalParams { mean, variance })
    } else {
        let variance = 1.0 / (tau + sigma * e);
        let mean = variance * (from_prev + sigma * e * r);
        Ok(NormalParams { mean, variance })
    }
}
