//! Command-line entry point: configuration, command dispatch, multi-chain
//! orchestration, and all file I/O. Runs compute everything first and only
//! then write the output directory, so failures leave no partial artifacts.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use lossratio::config::RunConfig;
use lossratio::diagnostics::{
    acf, acf_significance_bound, chisq_convergence, kde_density, kde_grid, ks_convergence,
    model_averaged_summary, silverman_bandwidth, DiagnosticTrace, ModelAveragedSummary,
};
use lossratio::error::{Error, Result};
use lossratio::gibbs::{param_names, run_gibbs, ChainConfig, ChainRecord};
use lossratio::marginal::{run_marginal, tune_widths, MarginalRecord};
use lossratio::model::{ModelId, ObservationSeries, ParamState};
use lossratio::output::{
    transition_matrix_json, write_acf_csv, write_chain_csv, write_dataset_csv, write_density_csv,
    write_diag_csv, write_json, write_manifest, write_marginal_chain_csv, read_chain_csv,
};
use lossratio::rjmcmc::{pilot_tune, run_rj, JumpStats, RjRun, Scheme, VanillaProposalSpec};
use lossratio::synthetic::{
    default_exposures, recovery_study, simulate_dataset, SimulationSpec,
};

const ACF_MAX_LAG: usize = 50;
const HPD_LEVEL: f64 = 0.95;

#[derive(Parser)]
#[command(
    name = "lossratio",
    about = "Bayesian state-space analysis of insurance loss ratios with trans-dimensional MCMC",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// JSON configuration file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input dataset CSV with header `year,loss,exposure`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    burn_in: Option<u64>,
    #[arg(long)]
    thin: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<u64>,
    /// Worker threads for multi-chain runs; 0 means one per chain.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    a1: Option<f64>,
    #[arg(long)]
    b1: Option<f64>,
    #[arg(long)]
    a2: Option<f64>,
    #[arg(long)]
    b2: Option<f64>,
}

impl CommonOpts {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_json_path(path)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.data {
            cfg.data = Some(d.clone());
        }
        if let Some(o) = &self.output_dir {
            cfg.output_dir = o.clone();
        }
        if let Some(v) = self.iterations {
            cfg.sampler.iterations = v;
        }
        if let Some(v) = self.burn_in {
            cfg.sampler.burn_in = v;
        }
        if let Some(v) = self.thin {
            cfg.sampler.thin = v;
        }
        if let Some(v) = self.seed {
            cfg.sampler.seed = v;
        }
        if let Some(v) = self.chains {
            cfg.sampler.chains = v;
        }
        if let Some(v) = self.threads {
            cfg.threads = v;
        }
        if let Some(v) = self.a1 {
            cfg.priors.a1 = v;
        }
        if let Some(v) = self.b1 {
            cfg.priors.b1 = v;
        }
        if let Some(v) = self.a2 {
            cfg.priors.a2 = v;
        }
        if let Some(v) = self.b2 {
            cfg.priors.b2 = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimOpts {
    #[arg(long, default_value = "m1")]
    model: String,
    #[arg(long, default_value_t = 7)]
    n: usize,
    #[arg(long, default_value_t = 1000.0)]
    sigma: f64,
    #[arg(long, default_value_t = 1000.0)]
    tau: f64,
    #[arg(long, default_value_t = 0.2)]
    rho: f64,
    #[arg(long, default_value_t = 0.03)]
    eta: f64,
    #[arg(long, default_value_t = 0.03)]
    alpha0: f64,
    /// Center of the log-uniform exposure distribution.
    #[arg(long, default_value_t = 100.0)]
    exposure_scale: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model with the exact-conditional Gibbs sampler.
    FitGibbs {
        #[arg(long)]
        model: String,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Fit the marginalized model (variance parameters integrated out) with
    /// tuned random-walk Metropolis.
    FitMarginal {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Trans-dimensional run over all three models.
    Rj {
        #[arg(long)]
        scheme: Option<Scheme>,
        #[arg(long)]
        between_move_prob: Option<f64>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Simulate a dataset and write it with its ground truth.
    Simulate {
        #[command(flatten)]
        sim: SimOpts,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Repeated simulate-then-refit study of model selection and coverage.
    Recovery {
        #[command(flatten)]
        sim: SimOpts,
        #[arg(long, default_value_t = 20)]
        replications: u64,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Convergence diagnostics over previously written chain CSVs.
    Diagnose {
        /// Two or more chain CSV paths.
        #[arg(long, num_args = 2.., required = true)]
        chain: Vec<PathBuf>,
        /// Scalar parameter for the KS functional (default: sigma).
        #[arg(long, default_value = "sigma")]
        parameter: String,
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::FitGibbs { model, common } => cmd_fit_gibbs(&model, &common),
        Command::FitMarginal { common } => cmd_fit_marginal(&common),
        Command::Rj {
            scheme,
            between_move_prob,
            common,
        } => cmd_rj(scheme, between_move_prob, &common),
        Command::Simulate { sim, common } => cmd_simulate(&sim, &common),
        Command::Recovery {
            sim,
            replications,
            common,
        } => cmd_recovery(&sim, replications, &common),
        Command::Diagnose {
            chain,
            parameter,
            common,
        } => cmd_diagnose(&chain, &parameter, &common),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e}");
        let code = match e {
            Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::InvalidConfig(_)
            | Error::InvalidData(_) => 2,
            _ => 1,
        };
        std::process::exit(code);
    }
}

fn parse_model(label: &str) -> Result<ModelId> {
    match label {
        "m1" => Ok(ModelId::M1),
        "m2" => Ok(ModelId::M2),
        "m3" => Ok(ModelId::M3),
        other => Err(Error::InvalidConfig(format!(
            "unknown model {other} (expected m1, m2 or m3)"
        ))),
    }
}

fn load_data(cfg: &RunConfig) -> Result<ObservationSeries> {
    let path = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("no input dataset: pass --data or set it in the config".into()))?;
    ObservationSeries::from_csv_path(path)
}

/// Run `jobs` closures on up to `threads` workers (0 = one per job).
fn run_parallel<T, F>(jobs: Vec<F>, threads: usize) -> Result<Vec<T>>
where
    T: Send,
    F: FnOnce() -> Result<T> + Send,
{
    let workers = if threads == 0 { jobs.len() } else { threads.max(1) };
    let mut results: Vec<Option<Result<T>>> = jobs.iter().map(|_| None).collect();
    let mut pending: Vec<(usize, F)> = jobs.into_iter().enumerate().collect();
    while !pending.is_empty() {
        let batch: Vec<(usize, F)> = pending
            .drain(..pending.len().min(workers))
            .collect();
        let batch_results: Vec<(usize, Result<T>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .into_iter()
                .map(|(idx, job)| scope.spawn(move || (idx, job())))
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        for (idx, r) in batch_results {
            results[idx] = Some(r);
        }
    }
    results.into_iter().map(|r| r.unwrap()).collect()
}

fn pooled(records: &[ChainRecord]) -> ChainRecord {
    ChainRecord {
        snapshots: records
            .iter()
            .flat_map(|r| r.snapshots.iter().cloned())
            .collect(),
    }
}

/// ACF rows for each named parameter of the first chain; parameters whose
/// trace is empty or constant are skipped (their ACF is undefined).
fn acf_entries(record: &ChainRecord, names: &[String]) -> Vec<(String, Vec<f64>, f64)> {
    let mut entries = Vec::new();
    for name in names {
        let trace = record.param_trace(name);
        if trace.len() < 2 {
            continue;
        }
        let max_lag = ACF_MAX_LAG.min(trace.len() - 1);
        if let Ok(r) = acf(&trace, max_lag) {
            entries.push((name.clone(), r, acf_significance_bound(trace.len())));
        }
    }
    entries
}

/// KDE of the rho trace for the density artifact; `None` when rho was never
/// sampled or never moved.
fn rho_density(record: &ChainRecord) -> Option<(Vec<f64>, Vec<f64>)> {
    let trace = record.param_trace("rho");
    if trace.len() < 2 || trace.iter().all(|&x| x == trace[0]) {
        return None;
    }
    let bw = silverman_bandwidth(&trace);
    let grid = kde_grid(&trace, bw);
    let density = kde_density(&trace, &grid, bw);
    Some((grid, density))
}

fn checkpoints_for(len: usize, every: usize) -> Vec<usize> {
    let mut cps: Vec<usize> = (1..=len / every).map(|k| k * every).collect();
    if cps.last() != Some(&len) {
        cps.push(len);
    }
    cps
}

fn summary_value(summary: &ModelAveragedSummary) -> serde_json::Value {
    serde_json::to_value(summary).expect("summary serializes")
}

fn cmd_fit_gibbs(model: &str, common: &CommonOpts) -> Result<()> {
    let model = parse_model(model)?;
    let cfg = common.resolve()?;
    let data = load_data(&cfg)?;

    let jobs: Vec<_> = (0..cfg.sampler.chains)
        .map(|k| {
            let chain_cfg = cfg.sampler.chain_config(k)?;
            Ok((k, chain_cfg))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .map(|(_, chain_cfg)| {
            let data = &data;
            let priors = &cfg.priors;
            move || run_gibbs(model, data, priors, &chain_cfg, None)
        })
        .collect();
    let records = run_parallel(jobs, cfg.threads)?;

    let pool = pooled(&records);
    let summary = model_averaged_summary(&pool, HPD_LEVEL)?;
    let names = param_names(model, data.n());
    let acfs = acf_entries(&records[0], &names);
    let density = rho_density(&pool);

    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir)?;
    for (k, record) in records.iter().enumerate() {
        write_chain_csv(&dir.join(format!("chain_{k}.csv")), record)?;
    }
    write_json(
        &dir.join("summary.json"),
        &json!({
            "command": "fit-gibbs",
            "model": model.label(),
            "parameters": summary_value(&summary),
        }),
    )?;
    write_acf_csv(&dir.join("acf.csv"), &acfs)?;
    if let Some((grid, dens)) = density {
        write_density_csv(&dir.join("density_rho.csv"), &grid, &dens)?;
    }
    write_manifest(dir, &format!("fit-gibbs --model {}", model.label()), &cfg)?;
    Ok(())
}

fn marginal_summary_value(records: &[MarginalRecord], level: f64) -> Result<serde_json::Value> {
    let n = records[0].snapshots[0].state.alpha.len();
    let mut names = vec!["alpha0".to_string()];
    for k in 1..=n {
        names.push(format!("alpha{k}"));
    }
    names.push("rho".to_string());
    names.push("eta".to_string());
    let mut params = BTreeMap::new();
    for name in &names {
        let mut trace = Vec::new();
        for r in records {
            trace.extend(r.param_trace(name));
        }
        let mean = trace.iter().sum::<f64>() / trace.len() as f64;
        let hpd = lossratio::diagnostics::hpd_shortest(&trace, level)?;
        params.insert(
            name.clone(),
            json!({"mean": mean, "hpd": hpd}),
        );
    }
    Ok(serde_json::to_value(params)?)
}

fn cmd_fit_marginal(common: &CommonOpts) -> Result<()> {
    let cfg = common.resolve()?;
    let data = load_data(&cfg)?;
    let tuning = tune_widths(&data, &cfg.priors, &cfg.pilot_config())?;

    let chain_cfgs: Vec<ChainConfig> = (0..cfg.sampler.chains)
        .map(|k| cfg.sampler.chain_config(k))
        .collect::<Result<_>>()?;
    let jobs: Vec<_> = chain_cfgs
        .into_iter()
        .map(|chain_cfg| {
            let (data, priors, tuning) = (&data, &cfg.priors, &tuning);
            move || run_marginal(data, priors, &chain_cfg, tuning)
        })
        .collect();
    let records = run_parallel(jobs, cfg.threads)?;

    let params = marginal_summary_value(&records, HPD_LEVEL)?;
    let mut rho_trace = Vec::new();
    for r in &records {
        rho_trace.extend(r.param_trace("rho"));
    }
    let bw = silverman_bandwidth(&rho_trace);
    let grid = kde_grid(&rho_trace, bw);
    let dens = kde_density(&rho_trace, &grid, bw);
    let n = data.n();
    let names: Vec<String> = std::iter::once("alpha0".to_string())
        .chain((1..=n).map(|k| format!("alpha{k}")))
        .chain(["rho".to_string(), "eta".to_string()])
        .collect();
    let mut acfs = Vec::new();
    for name in &names {
        let trace = records[0].param_trace(name);
        if let Ok(r) = acf(&trace, ACF_MAX_LAG.min(trace.len() - 1)) {
            acfs.push((name.clone(), r, acf_significance_bound(trace.len())));
        }
    }

    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir)?;
    for (k, record) in records.iter().enumerate() {
        write_marginal_chain_csv(&dir.join(format!("chain_{k}.csv")), record)?;
    }
    write_json(
        &dir.join("summary.json"),
        &json!({
            "command": "fit-marginal",
            "parameters": params,
            "tuning": {
                "width_alpha0": tuning.width_alpha0,
                "width_rho": tuning.width_rho,
                "width_eta": tuning.width_eta,
                "targets": {
                    "alpha0": cfg.marginal.target_alpha0,
                    "rho": cfg.marginal.target_rho,
                    "eta": cfg.marginal.target_eta,
                },
                "achieved_acceptance": records
                    .iter()
                    .map(|r| serde_json::to_value(&r.acceptance))
                    .collect::<std::result::Result<Vec<_>, _>>()?,
            },
        }),
    )?;
    write_acf_csv(&dir.join("acf.csv"), &acfs)?;
    write_density_csv(&dir.join("density_rho.csv"), &grid, &dens)?;
    write_manifest(dir, "fit-marginal", &cfg)?;
    Ok(())
}

fn combined_transitions(records: &[ChainRecord]) -> [Option<[f64; 3]>; 3] {
    let mut counts = [[0u64; 3]; 3];
    for r in records {
        for w in r.model_indices().windows(2) {
            counts[w[0]][w[1]] += 1;
        }
    }
    let mut rows = [None; 3];
    for i in 0..3 {
        let total: u64 = counts[i].iter().sum();
        if total > 0 {
            rows[i] = Some([0, 1, 2].map(|j| counts[i][j] as f64 / total as f64));
        }
    }
    rows
}

fn merge_stats(stats: &[JumpStats]) -> JumpStats {
    let mut out = JumpStats::default();
    for s in stats {
        for i in 0..3 {
            for j in 0..3 {
                out.attempts[i][j] += s.attempts[i][j];
                out.accepts[i][j] += s.accepts[i][j];
            }
        }
        out.proposal_builds += s.proposal_builds;
        out.fallback_count += s.fallback_count;
    }
    out
}

fn rj_diagnostics(records: &[ChainRecord], every: usize) -> Result<DiagnosticTrace> {
    let indicator: Vec<Vec<usize>> = records.iter().map(|r| r.model_indices()).collect();
    let sigma: Vec<Vec<f64>> = records.iter().map(|r| r.param_trace("sigma")).collect();
    let min_len = indicator.iter().map(Vec::len).min().unwrap();
    let cps = checkpoints_for(min_len, every);
    let chisq = chisq_convergence(&indicator, &cps)?;
    let ks = ks_convergence(&sigma, &cps)?;
    DiagnosticTrace::merge(chisq, ks)
}

fn cmd_rj(
    scheme: Option<Scheme>,
    between_move_prob: Option<f64>,
    common: &CommonOpts,
) -> Result<()> {
    let mut cfg = common.resolve()?;
    if let Some(s) = scheme {
        cfg.rj.scheme = s;
    }
    if let Some(p) = between_move_prob {
        cfg.rj.between_move_prob = p;
    }
    cfg.validate()?;
    let data = load_data(&cfg)?;
    let move_spec = cfg.rj.move_spec();

    let mut vanilla: Option<VanillaProposalSpec> = None;
    let mut pilot_records: Option<[ChainRecord; 3]> = None;
    if cfg.rj.scheme == Scheme::Vanilla {
        let pilot_cfg = ChainConfig::new(
            cfg.rj.pilot_iterations,
            cfg.rj.pilot_burn_in,
            1,
            cfg.sampler.seed.wrapping_add(0xB10C),
        )?;
        let (spec, records) = pilot_tune(&data, &cfg.priors, &pilot_cfg)?;
        vanilla = Some(spec);
        pilot_records = Some(records);
    }

    let chain_cfgs: Vec<ChainConfig> = (0..cfg.sampler.chains)
        .map(|k| cfg.sampler.chain_config(k))
        .collect::<Result<_>>()?;
    let jobs: Vec<_> = chain_cfgs
        .into_iter()
        .map(|chain_cfg| {
            let (data, priors, move_spec) = (&data, &cfg.priors, &move_spec);
            let scheme = cfg.rj.scheme;
            let vanilla = vanilla.as_ref();
            move || run_rj(data, priors, &chain_cfg, move_spec, scheme, vanilla, None)
        })
        .collect();
    let runs: Vec<RjRun> = run_parallel(jobs, cfg.threads)?;

    let records: Vec<ChainRecord> = runs.iter().map(|r| r.record.clone()).collect();
    let pool = pooled(&records);
    let summary = model_averaged_summary(&pool, HPD_LEVEL)?;
    let stats = merge_stats(&runs.iter().map(|r| r.stats).collect::<Vec<_>>());
    let transitions = combined_transitions(&records);
    let diag = if records.len() >= 2 {
        Some(rj_diagnostics(&records, cfg.checkpoint_every)?)
    } else {
        None
    };
    let names = param_names(ModelId::M1, data.n());
    let acfs = acf_entries(&records[0], &names);
    let density = rho_density(&pool);

    let mut accept_rates = BTreeMap::new();
    for from in ModelId::ALL {
        for to in ModelId::ALL {
            if let Some(rate) = stats.acceptance_rate(from, to) {
                accept_rates.insert(format!("{}->{}", from.label(), to.label()), rate);
            }
        }
    }

    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir)?;
    for (k, record) in records.iter().enumerate() {
        write_chain_csv(&dir.join(format!("chain_{k}.csv")), record)?;
    }
    if let (Some(spec), Some(pilots)) = (&vanilla, &pilot_records) {
        write_json(&dir.join("pilot_proposals.json"), spec)?;
        for (model, record) in ModelId::ALL.iter().zip(pilots.iter()) {
            let s = model_averaged_summary(record, HPD_LEVEL)?;
            write_json(
                &dir.join(format!("pilot_summary_{}.json", model.label())),
                &summary_value(&s),
            )?;
        }
    }
    write_json(
        &dir.join("summary.json"),
        &json!({
            "command": "rj",
            "scheme": cfg.rj.scheme,
            "model_probabilities": {
                "pooled": pool.model_probabilities(),
                "per_chain": runs.iter().map(|r| r.model_probabilities).collect::<Vec<_>>(),
            },
            "jump_acceptance_rates": accept_rates,
            "fallback_frequency": stats.fallback_frequency(),
            "jump_stats": stats,
            "parameters": summary_value(&summary),
        }),
    )?;
    write_json(
        &dir.join("transition_matrix.json"),
        &transition_matrix_json(&transitions),
    )?;
    write_acf_csv(&dir.join("acf.csv"), &acfs)?;
    if let Some((grid, dens)) = density {
        write_density_csv(&dir.join("density_rho.csv"), &grid, &dens)?;
    }
    if let Some(diag) = diag {
        write_diag_csv(&dir.join("diag.csv"), &diag)?;
    }
    write_manifest(dir, "rj", &cfg)?;
    Ok(())
}

fn build_sim_spec(sim: &SimOpts, seed: u64) -> Result<SimulationSpec> {
    let model = parse_model(&sim.model)?;
    let alpha = vec![0.0; sim.n];
    let true_params = match model {
        ModelId::M1 => ParamState::new_m1(sim.alpha0, alpha, sim.rho, sim.eta, sim.sigma, sim.tau),
        ModelId::M2 => ParamState::new_m2(sim.alpha0, alpha, sim.sigma, sim.tau),
        ModelId::M3 => ParamState::new_m3(alpha, sim.eta, sim.sigma, sim.tau),
    };
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xE5D0));
    let exposures = default_exposures(sim.n, sim.exposure_scale, &mut rng);
    let spec = SimulationSpec {
        model,
        true_params,
        exposures,
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

fn cmd_simulate(sim: &SimOpts, common: &CommonOpts) -> Result<()> {
    let cfg = common.resolve()?;
    let spec = build_sim_spec(sim, cfg.sampler.seed)?;
    let dataset = simulate_dataset(&spec)?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir)?;
    write_dataset_csv(&dir.join("data.csv"), &dataset.series)?;
    write_json(
        &dir.join("truth.json"),
        &json!({"spec": spec, "realized": dataset.realized}),
    )?;
    write_manifest(dir, "simulate", &cfg)?;
    Ok(())
}

fn cmd_recovery(sim: &SimOpts, replications: u64, common: &CommonOpts) -> Result<()> {
    let cfg = common.resolve()?;
    let spec = build_sim_spec(sim, cfg.sampler.seed)?;
    let fit = cfg.sampler.chain_config(0)?;
    let report = recovery_study(&spec, replications, &cfg.priors, &fit)?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join("recovery.json"), &report)?;
    write_manifest(dir, "recovery", &cfg)?;
    Ok(())
}

fn cmd_diagnose(chains: &[PathBuf], parameter: &str, common: &CommonOpts) -> Result<()> {
    let cfg = common.resolve()?;
    let records: Vec<ChainRecord> = chains
        .iter()
        .map(|p| read_chain_csv(p))
        .collect::<Result<_>>()?;
    let indicator: Vec<Vec<usize>> = records.iter().map(|r| r.model_indices()).collect();
    let traces: Vec<Vec<f64>> = records.iter().map(|r| r.param_trace(parameter)).collect();
    if traces.iter().any(Vec::is_empty) {
        return Err(Error::InvalidData(format!(
            "parameter {parameter} has an empty trace in at least one chain"
        )));
    }
    let min_len = indicator
        .iter()
        .map(Vec::len)
        .chain(traces.iter().map(Vec::len))
        .min()
        .unwrap();
    let cps = checkpoints_for(min_len, cfg.checkpoint_every);
    let chisq = chisq_convergence(&indicator, &cps)?;
    let ks = ks_convergence(&traces, &cps)?;
    let diag = DiagnosticTrace::merge(chisq, ks)?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir)?;
    write_diag_csv(&dir.join("diag.csv"), &diag)?;
    write_manifest(dir, "diagnose", &cfg)?;
    Ok(())
}
