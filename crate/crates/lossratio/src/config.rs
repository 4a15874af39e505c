//! Run configuration: a single JSON file whose fields the CLI can override
//! flag-by-flag. Defaults mirror the reference analysis (vague Gamma priors
//! a = b = 0.001, equal model priors, symmetric jump probabilities 1/2,
//! one million iterations, three chains).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::ChainConfig;
use crate::marginal::PilotConfig;
use crate::model::PriorConfig;
use crate::rjmcmc::{MoveSpec, Scheme};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub iterations: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub seed: u64,
    pub chains: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: 1_000_000,
            burn_in: 100_000,
            thin: 10,
            seed: 20260825,
            chains: 3,
        }
    }
}

impl SamplerConfig {
    /// Chain-k configuration with a deterministically derived seed.
    pub fn chain_config(&self, chain: u64) -> Result<ChainConfig> {
        ChainConfig::new(
            self.iterations,
            self.burn_in,
            self.thin,
            self.seed.wrapping_add(chain.wrapping_mul(0x9e3779b97f4a7c15)),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::InvalidConfig("chains must be >= 1".into()));
        }
        self.chain_config(0)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RjConfig {
    pub scheme: Scheme,
    pub between_move_prob: f64,
    pub r: [[f64; 3]; 3],
    /// Gibbs pilot length used to tune the vanilla proposals.
    pub pilot_iterations: u64,
    pub pilot_burn_in: u64,
}

impl Default for RjConfig {
    fn default() -> Self {
        let moves = MoveSpec::default();
        Self {
            scheme: Scheme::Efficient,
            between_move_prob: moves.between_move_prob,
            r: moves.r,
            pilot_iterations: 20_000,
            pilot_burn_in: 5_000,
        }
    }
}

impl RjConfig {
    pub fn move_spec(&self) -> MoveSpec {
        MoveSpec {
            between_move_prob: self.between_move_prob,
            r: self.r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarginalConfig {
    pub target_rho: f64,
    pub target_eta: f64,
    pub target_alpha0: f64,
    pub pilot_seed_offset: u64,
}

impl Default for MarginalConfig {
    fn default() -> Self {
        let p = PilotConfig::default();
        Self {
            target_rho: p.target_rho,
            target_eta: p.target_eta,
            target_alpha0: p.target_alpha0,
            pilot_seed_offset: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub priors: PriorConfig,
    pub sampler: SamplerConfig,
    pub rj: RjConfig,
    pub marginal: MarginalConfig,
    pub output_dir: PathBuf,
    /// Worker threads for multi-chain runs; 0 means one per chain.
    pub threads: usize,
    /// Diagnostic checkpoint spacing in retained iterations.
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            priors: PriorConfig::default(),
            sampler: SamplerConfig::default(),
            rj: RjConfig::default(),
            marginal: MarginalConfig::default(),
            output_dir: PathBuf::from("out"),
            threads: 0,
            checkpoint_every: 1000,
        }
    }
}

impl RunConfig {
    pub fn from_json_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidConfig(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("bad config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.priors.validate()?;
        self.sampler.validate()?;
        self.rj.move_spec().validate()?;
        for (name, t) in [
            ("target_rho", self.marginal.target_rho),
            ("target_eta", self.marginal.target_eta),
            ("target_alpha0", self.marginal.target_alpha0),
        ] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must lie in (0, 1), got {t}"
                )));
            }
        }
        if self.checkpoint_every == 0 {
            return Err(Error::InvalidConfig("checkpoint_every must be >= 1".into()));
        }
        Ok(())
    }

    pub fn pilot_config(&self) -> PilotConfig {
        PilotConfig {
            seed: self
                .sampler
                .seed
                .wrapping_add(self.marginal.pilot_seed_offset),
            target_rho: self.marginal.target_rho,
            target_eta: self.marginal.target_eta,
            target_alpha0: self.marginal.target_alpha0,
            ..PilotConfig::default()
        }
    }
}
