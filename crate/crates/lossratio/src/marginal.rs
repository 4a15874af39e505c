//! Random-walk Metropolis sampler targeting the marginalized posterior with
//! sigma and tau integrated out. Scalars (`rho`, `eta`, `alpha0`) use uniform
//! proposals centred at the current value; the alpha-block uses a
//! multivariate normal proposal whose covariance comes from a pilot Gibbs
//! run. All proposals are symmetric so the acceptance ratio carries no
//! proposal-density correction.
//!
//! Width tuning is a Robbins-Monro loop run strictly before the measurement
//! phase; the tuning handed to `run_marginal` is immutable, so the final
//! chain is a time-homogeneous Metropolis sampler.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{run_gibbs, ChainConfig};
use crate::model::{log_marginal_target, ModelId, ObservationSeries, PriorConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarParam {
    Rho,
    Eta,
    Alpha0,
}

/// State of the marginalized chain (sigma, tau integrated out).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalState {
    pub alpha0: f64,
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub eta: f64,
}

impl MarginalState {
    pub fn log_target(&self, data: &ObservationSeries, priors: &PriorConfig) -> f64 {
        log_marginal_target(self.alpha0, &self.alpha, self.rho, self.eta, data, priors)
    }
}

/// Frozen proposal tuning: uniform half-widths for the scalars and the
/// alpha-block proposal covariance (stored with its Cholesky factor).
#[derive(Debug, Clone)]
pub struct RwTuning {
    pub width_rho: f64,
    pub width_eta: f64,
    pub width_alpha0: f64,
    alpha_cov: DMatrix<f64>,
    alpha_chol: DMatrix<f64>,
}

impl RwTuning {
    pub fn new(
        width_rho: f64,
        width_eta: f64,
        width_alpha0: f64,
        alpha_cov: DMatrix<f64>,
    ) -> Result<Self> {
        for (name, w) in [
            ("width_rho", width_rho),
            ("width_eta", width_eta),
            ("width_alpha0", width_alpha0),
        ] {
            if !(w > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        if alpha_cov.nrows() != alpha_cov.ncols() {
            return Err(Error::InvalidConfig("alpha_cov must be square".into()));
        }
        let chol = nalgebra::Cholesky::new(alpha_cov.clone())
            .ok_or_else(|| Error::InvalidConfig("alpha_cov is not positive definite".into()))?;
        Ok(Self {
            width_rho,
            width_eta,
            width_alpha0,
            alpha_cov,
            alpha_chol: chol.l(),
        })
    }

    pub fn alpha_cov(&self) -> &DMatrix<f64> {
        &self.alpha_cov
    }

    pub fn alpha_chol(&self) -> &DMatrix<f64> {
        &self.alpha_chol
    }
}

/// Pilot-phase configuration for `tune_widths`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PilotConfig {
    pub gibbs_iterations: u64,
    pub gibbs_burn_in: u64,
    pub batches: u64,
    pub batch_size: u64,
    pub seed: u64,
    pub initial_width: f64,
    /// Robbins-Monro gain, decayed as gain / sqrt(batch).
    pub gain: f64,
    pub target_rho: f64,
    pub target_eta: f64,
    pub target_alpha0: f64,
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self {
            gibbs_iterations: 6000,
            gibbs_burn_in: 1000,
            batches: 200,
            batch_size: 100,
            seed: 1,
            initial_width: 0.5,
            gain: 0.5,
            target_rho: 0.27,
            target_eta: 0.15,
            target_alpha0: 0.29,
        }
    }
}

fn metropolis_accept<R: Rng + ?Sized>(delta_log: f64, rng: &mut R) -> bool {
    delta_log >= 0.0 || rng.gen::<f64>() < delta_log.exp()
}

/// One uniform random-walk update of a single scalar. Returns the accept flag.
pub fn rw_scalar_update<R: Rng + ?Sized>(
    which: ScalarParam,
    state: &mut MarginalState,
    tuning: &RwTuning,
    data: &ObservationSeries,
    priors: &PriorConfig,
    rng: &mut R,
) -> bool {
    let (current, width) = match which {
        ScalarParam::Rho => (state.rho, tuning.width_rho),
        ScalarParam::Eta => (state.eta, tuning.width_eta),
        ScalarParam::Alpha0 => (state.alpha0, tuning.width_alpha0),
    };
    let proposal = current + width * (2.0 * rng.gen::<f64>() - 1.0);
    let before = state.log_target(data, priors);
    fn field(s: &mut MarginalState, which: ScalarParam) -> &mut f64 {
        match which {
            ScalarParam::Rho => &mut s.rho,
            ScalarParam::Eta => &mut s.eta,
            ScalarParam::Alpha0 => &mut s.alpha0,
        }
    }
    *field(state, which) = proposal;
    let after = state.log_target(data, priors);
    if metropolis_accept(after - before, rng) {
        true
    } else {
        *field(state, which) = current;
        false
    }
}

/// One multivariate-normal random-walk update of the whole alpha block.
pub fn rw_block_update_alpha<R: Rng + ?Sized>(
    state: &mut MarginalState,
    tuning: &RwTuning,
    data: &ObservationSeries,
    priors: &PriorConfig,
    rng: &mut R,
) -> bool {
    let n = state.alpha.len();
    debug_assert_eq!(tuning.alpha_chol.nrows(), n);
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let mut proposal = state.alpha.clone();
    let l = &tuning.alpha_chol;
    for i in 0..n {
        let mut step = 0.0;
        for (k, &zk) in z.iter().enumerate().take(i + 1) {
            step += l[(i, k)] * zk;
        }
        proposal[i] += step;
    }
    let before = state.log_target(data, priors);
    let saved = std::mem::replace(&mut state.alpha, proposal);
    let after = state.log_target(data, priors);
    if metropolis_accept(after - before, rng) {
        true
    } else {
        state.alpha = saved;
        false
    }
}

fn default_marginal_init(data: &ObservationSeries) -> MarginalState {
    let m = data.mean_ratio();
    MarginalState {
        alpha0: m,
        alpha: vec![m; data.n()],
        rho: 0.5,
        eta: m,
    }
}

/// Empirical covariance of the alpha-block from a pilot Gibbs run of M1,
/// with a diagonal fallback when the sample covariance is rank deficient.
fn pilot_alpha_cov(
    data: &ObservationSeries,
    priors: &PriorConfig,
    pilot: &PilotConfig,
) -> Result<DMatrix<f64>> {
    let cfg = ChainConfig::new(pilot.gibbs_iterations, pilot.gibbs_burn_in, 1, pilot.seed)?;
    let record = run_gibbs(ModelId::M1, data, priors, &cfg, None)?;
    let n = data.n();
    let m = record.len();
    let mut means = vec![0.0; n];
    for s in &record.snapshots {
        for (j, &a) in s.state.alpha.iter().enumerate() {
            means[j] += a;
        }
    }
    for v in &mut means {
        *v /= m as f64;
    }
    let mut cov = DMatrix::zeros(n, n);
    for s in &record.snapshots {
        for i in 0..n {
            let di = s.state.alpha[i] - means[i];
            for j in 0..n {
                cov[(i, j)] += di * (s.state.alpha[j] - means[j]);
            }
        }
    }
    cov /= (m - 1) as f64;
    if nalgebra::Cholesky::new(cov.clone()).is_some() {
        return Ok(cov);
    }
    // Rank-deficient pilot: fall back to the diagonal of sample variances.
    let mut diag = DMatrix::zeros(n, n);
    for i in 0..n {
        diag[(i, i)] = cov[(i, i)].max(1e-8);
    }
    Ok(diag)
}

/// Pilot phase: estimate the alpha-block covariance from a Gibbs run, then
/// adapt the scalar widths in batches toward the target acceptance rates.
/// The returned tuning is frozen.
pub fn tune_widths(
    data: &ObservationSeries,
    priors: &PriorConfig,
    pilot: &PilotConfig,
) -> Result<RwTuning> {
    let cov = pilot_alpha_cov(data, priors, pilot)?;
    let mut tuning = RwTuning::new(
        pilot.initial_width,
        pilot.initial_width,
        pilot.initial_width,
        cov,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(pilot.seed.wrapping_add(1));
    let mut state = default_marginal_init(data);
    for batch in 1..=pilot.batches {
        let mut accepts = [0u64; 3];
        for _ in 0..pilot.batch_size {
            if rw_scalar_update(ScalarParam::Alpha0, &mut state, &tuning, data, priors, &mut rng) {
                accepts[0] += 1;
            }
            rw_block_update_alpha(&mut state, &tuning, data, priors, &mut rng);
            if rw_scalar_update(ScalarParam::Rho, &mut state, &tuning, data, priors, &mut rng) {
                accepts[1] += 1;
            }
            if rw_scalar_update(ScalarParam::Eta, &mut state, &tuning, data, priors, &mut rng) {
                accepts[2] += 1;
            }
        }
        let gain = pilot.gain / (batch as f64).sqrt();
        let rate = |a: u64| a as f64 / pilot.batch_size as f64;
        tuning.width_alpha0 *= (gain * (rate(accepts[0]) - pilot.target_alpha0)).exp();
        tuning.width_rho *= (gain * (rate(accepts[1]) - pilot.target_rho)).exp();
        tuning.width_eta *= (gain * (rate(accepts[2]) - pilot.target_eta)).exp();
    }
    Ok(tuning)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MarginalAcceptance {
    pub alpha0: f64,
    pub rho: f64,
    pub eta: f64,
    pub alpha_block: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalSnapshot {
    pub iteration: u64,
    pub state: MarginalState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginalRecord {
    pub snapshots: Vec<MarginalSnapshot>,
    pub acceptance: MarginalAcceptance,
}

impl MarginalRecord {
    pub fn param_trace(&self, name: &str) -> Vec<f64> {
        self.snapshots
            .iter()
            .filter_map(|s| match name {
                "alpha0" => Some(s.state.alpha0),
                "rho" => Some(s.state.rho),
                "eta" => Some(s.state.eta),
                _ => {
                    let k: usize = name.strip_prefix("alpha")?.parse().ok()?;
                    (k >= 1 && k <= s.state.alpha.len()).then(|| s.state.alpha[k - 1])
                }
            })
            .collect()
    }
}

/// Run the marginalized sampler with frozen tuning. Acceptance rates are
/// measured over the post-burn-in phase.
pub fn run_marginal(
    data: &ObservationSeries,
    priors: &PriorConfig,
    config: &ChainConfig,
    tuning: &RwTuning,
) -> Result<MarginalRecord> {
    config.validate()?;
    priors.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = default_marginal_init(data);
    let mut snapshots = Vec::with_capacity(config.retained() as usize);
    let mut attempts = 0u64;
    let mut accepts = [0u64; 4];
    for it in 0..config.iterations {
        let measuring = it >= config.burn_in;
        let a0 = rw_scalar_update(ScalarParam::Alpha0, &mut state, tuning, data, priors, &mut rng);
        let ab = rw_block_update_alpha(&mut state, tuning, data, priors, &mut rng);
        let ar = rw_scalar_update(ScalarParam::Rho, &mut state, tuning, data, priors, &mut rng);
        let ae = rw_scalar_update(ScalarParam::Eta, &mut state, tuning, data, priors, &mut rng);
        if measuring {
            attempts += 1;
            accepts[0] += a0 as u64;
            accepts[1] += ar as u64;
            accepts[2] += ae as u64;
            accepts[3] += ab as u64;
            if (it - config.burn_in) % config.thin == 0 {
                snapshots.push(MarginalSnapshot {
                    iteration: it,
                    state: state.clone(),
                });
            }
        }
    }
    let rate = |a: u64| a as f64 / attempts.max(1) as f64;
    Ok(MarginalRecord {
        snapshots,
        acceptance: MarginalAcceptance {
            alpha0: rate(accepts[0]),
            rho: rate(accepts[1]),
            eta: rate(accepts[2]),
            alpha_block: rate(accepts[3]),
        },
    })
}
