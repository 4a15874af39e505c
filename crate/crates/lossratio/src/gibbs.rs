//! Systematic-scan Gibbs sampler for each of M1, M2, M3. The scan order is
//! fixed (alpha_0, alpha-block ascending, rho, eta, sigma, tau) so runs are
//! reproducible for a given seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditionals::{
    alpha_conditional, eta_conditional, rho_conditional, sigma_conditional, tau_conditional,
};
use crate::error::{Error, Result};
use crate::model::{ModelId, ObservationSeries, ParamState, PriorConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub iterations: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub seed: u64,
}

impl ChainConfig {
    pub fn new(iterations: u64, burn_in: u64, thin: u64, seed: u64) -> Result<Self> {
        let cfg = Self {
            iterations,
            burn_in,
            thin,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig(format!(
                "burn_in {} must be < iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidConfig("thin must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of retained snapshots: ceil((iterations - burn_in) / thin),
    /// retaining the first post-burn-in iteration and every thin-th after.
    pub fn retained(&self) -> u64 {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub iteration: u64,
    pub state: ParamState,
}

/// Iteration-indexed trace of (model, parameter vector) snapshots.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub snapshots: Vec<Snapshot>,
}

impl ChainRecord {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn model_indices(&self) -> Vec<usize> {
        self.snapshots.iter().map(|s| s.state.model.index()).collect()
    }

    /// Fraction of retained iterations spent in each model.
    pub fn model_probabilities(&self) -> [f64; 3] {
        let mut counts = [0u64; 3];
        for s in &self.snapshots {
            counts[s.state.model.index()] += 1;
        }
        let total = self.len().max(1) as f64;
        [
            counts[0] as f64 / total,
            counts[1] as f64 / total,
            counts[2] as f64 / total,
        ]
    }

    /// Trace of a named scalar parameter, restricted to snapshots where the
    /// parameter exists. `alphaK` uses 1-based K as in the chain CSV schema.
    pub fn param_trace(&self, name: &str) -> Vec<f64> {
        self.snapshots
            .iter()
            .filter_map(|s| param_value(&s.state, name))
            .collect()
    }
}

/// Look up a scalar parameter by column name; `None` when absent under the
/// snapshot's model.
pub fn param_value(state: &ParamState, name: &str) -> Option<f64> {
    match name {
        "alpha0" => state.alpha0,
        "rho" => (state.model == ModelId::M1).then_some(state.rho),
        "eta" => state.eta,
        "sigma" => Some(state.sigma),
        "tau" => Some(state.tau),
        _ => {
            let k: usize = name.strip_prefix("alpha")?.parse().ok()?;
            (k >= 1 && k <= state.alpha.len()).then(|| state.alpha[k - 1])
        }
    }
}

/// Column names of the free parameters of `model` for an n-point series.
pub fn param_names(model: ModelId, n: usize) -> Vec<String> {
    let mut names = Vec::new();
    if model.has_alpha0() {
        names.push("alpha0".to_string());
    }
    for k in 1..=n {
        names.push(format!("alpha{k}"));
    }
    if model == ModelId::M1 {
        names.push("rho".to_string());
    }
    if model.has_eta() {
        names.push("eta".to_string());
    }
    names.push("sigma".to_string());
    names.push("tau".to_string());
    names
}

/// Default initialization from data moments: all alpha at mean(R),
/// rho = 0.5 (M1), eta = mean(R), sigma = tau = 1.
pub fn default_init(model: ModelId, data: &ObservationSeries) -> ParamState {
    let m = data.mean_ratio();
    let alpha = vec![m; data.n()];
    match model {
        ModelId::M1 => ParamState::new_m1(m, alpha, 0.5, m, 1.0, 1.0),
        ModelId::M2 => ParamState::new_m2(m, alpha, 1.0, 1.0),
        ModelId::M3 => ParamState::new_m3(alpha, m, 1.0, 1.0),
    }
}

/// One full systematic scan drawing each parameter from its exact full
/// conditional.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    mut state: ParamState,
    data: &ObservationSeries,
    priors: &PriorConfig,
    rng: &mut R,
) -> ParamState {
    let n = state.alpha.len();
    if state.model.has_alpha0() {
        let p = alpha_conditional(0, &state, data, priors).expect("alpha0 conditional");
        state.alpha0 = Some(p.sample(rng));
    }
    for j in 1..=n {
        let p = alpha_conditional(j, &state, data, priors).expect("alpha conditional");
        state.alpha[j - 1] = p.sample(rng);
    }
    if state.model == ModelId::M1 {
        let p = rho_conditional(&state, data, priors).expect("rho conditional");
        state.rho = p.sample(rng);
    }
    if state.model.has_eta() {
        let p = eta_conditional(&state, data, priors).expect("eta conditional");
        state.eta = Some(p.sample(rng));
    }
    state.sigma = sigma_conditional(&state, data, priors).sample(rng);
    state.tau = tau_conditional(&state, data, priors).sample(rng);
    state
}

/// Run a single chain, discarding `burn_in` sweeps and thinning the rest.
pub fn run_gibbs(
    model: ModelId,
    data: &ObservationSeries,
    priors: &PriorConfig,
    config: &ChainConfig,
    init: Option<ParamState>,
) -> Result<ChainRecord> {
    config.validate()?;
    priors.validate()?;
    let mut state = match init {
        Some(s) => {
            s.validate()?;
            if s.model != model {
                return Err(Error::InvalidState(format!(
                    "init state is for {}, requested {model}",
                    s.model
                )));
            }
            if s.alpha.len() != data.n() {
                return Err(Error::InvalidState("init alpha length mismatch".into()));
            }
            s
        }
        None => default_init(model, data),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut record = ChainRecord::default();
    for it in 0..config.iterations {
        state = gibbs_sweep(state, data, priors, &mut rng);
        if it >= config.burn_in && (it - config.burn_in) % config.thin == 0 {
            record.snapshots.push(Snapshot {
                iteration: it,
                state: state.clone(),
            });
        }
    }
    Ok(record)
}
