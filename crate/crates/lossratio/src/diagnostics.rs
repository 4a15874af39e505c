//! Posterior summaries (means, HPD intervals and regions, kernel density
//! estimates, autocorrelations), model-averaged estimates, and the
//! multi-chain chi-square / Kolmogorov-Smirnov convergence diagnostics for
//! trans-dimensional runs.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::gibbs::{param_names, param_value, ChainRecord};
use crate::model::ModelId;

const KDE_GRID_POINTS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HpdMethod {
    ShortestInterval,
    KdeThreshold,
}

/// A highest-posterior-density region: one interval from the
/// shortest-interval method, possibly several disjoint ones from the KDE
/// superlevel method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpdResult {
    pub level: f64,
    pub intervals: Vec<(f64, f64)>,
    pub method: HpdMethod,
    /// Set when the request degenerated (for example too few samples for the
    /// level, forcing the whole-range interval).
    pub warning: Option<String>,
}

impl HpdResult {
    /// Fraction of `samples` covered by the region.
    pub fn contained_fraction(&self, samples: &[f64]) -> f64 {
        let inside = samples
            .iter()
            .filter(|&&x| self.intervals.iter().any(|&(lo, hi)| lo <= x && x <= hi))
            .count();
        inside as f64 / samples.len() as f64
    }
}

fn check_hpd_inputs(samples: &[f64], level: f64) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InvalidData("HPD needs a nonempty sample".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "HPD level must lie in (0, 1), got {level}"
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidData("HPD samples must be finite".into()));
    }
    Ok(())
}

/// Shortest single interval `[x_(k), x_(k+m)]`, `m = ceil(level * N)`, over
/// the sorted sample; ties broken by the leftmost window. When the sample is
/// too small for the level the whole range is returned with a warning.
pub fn hpd_shortest(samples: &[f64], level: f64) -> Result<HpdResult> {
    check_hpd_inputs(samples, level)?;
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    let m = (level * n as f64).ceil() as usize;
    if m + 1 > n {
        return Ok(HpdResult {
            level,
            intervals: vec![(xs[0], xs[n - 1])],
            method: HpdMethod::ShortestInterval,
            warning: Some(format!(
                "sample of size {n} cannot resolve level {level}; returning the whole range"
            )),
        });
    }
    let mut best = 0;
    let mut best_width = f64::INFINITY;
    for k in 0..n - m {
        let width = xs[k + m] - xs[k];
        if width < best_width {
            best_width = width;
            best = k;
        }
    }
    Ok(HpdResult {
        level,
        intervals: vec![(xs[best], xs[best + m])],
        method: HpdMethod::ShortestInterval,
        warning: None,
    })
}

/// Silverman's rule-of-thumb bandwidth.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0))
        .sqrt();
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| xs[(((xs.len() - 1) as f64) * p).round() as usize];
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    (0.9 * spread * n.powf(-0.2)).max(f64::MIN_POSITIVE)
}

/// Gaussian-kernel density estimate of `samples` at each grid point.
pub fn kde_density(samples: &[f64], grid: &[f64], bandwidth: f64) -> Vec<f64> {
    let n = samples.len() as f64;
    let norm = 1.0 / (n * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&g| {
            samples
                .iter()
                .map(|&x| {
                    let z = (g - x) / bandwidth;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect()
}

/// Evenly spaced evaluation grid padded by three bandwidths past the sample
/// range.
pub fn kde_grid(samples: &[f64], bandwidth: f64) -> Vec<f64> {
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0 * bandwidth;
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * bandwidth;
    let step = (hi - lo) / (KDE_GRID_POINTS - 1) as f64;
    (0..KDE_GRID_POINTS).map(|i| lo + step * i as f64).collect()
}

fn superlevel_intervals(grid: &[f64], density: &[f64], threshold: f64) -> Vec<(f64, f64)> {
    let half = (grid[1] - grid[0]) / 2.0;
    let mut intervals: Vec<(f64, f64)> = Vec::new();
    let mut open: Option<(f64, f64)> = None;
    for (&g, &d) in grid.iter().zip(density) {
        if d >= threshold {
            match open {
                Some((lo, _)) => open = Some((lo, g + half)),
                None => open = Some((g - half, g + half)),
            }
        } else if let Some(iv) = open.take() {
            intervals.push(iv);
        }
    }
    if let Some(iv) = open {
        intervals.push(iv);
    }
    intervals
}

fn fraction_in(samples: &[f64], intervals: &[(f64, f64)]) -> f64 {
    let inside = samples
        .iter()
        .filter(|&&x| intervals.iter().any(|&(lo, hi)| lo <= x && x <= hi))
        .count();
    inside as f64 / samples.len() as f64
}

/// Density-threshold HPD region: the superlevel set of a Gaussian KDE whose
/// sample mass reaches `level`, found by bisecting the threshold. Can return
/// several disjoint intervals for multimodal samples. A nonpositive
/// `bandwidth` selects Silverman's rule.
pub fn hpd_kde_region(samples: &[f64], level: f64, bandwidth: f64) -> Result<HpdResult> {
    check_hpd_inputs(samples, level)?;
    let bandwidth = if bandwidth > 0.0 {
        bandwidth
    } else {
        silverman_bandwidth(samples)
    };
    let grid = kde_grid(samples, bandwidth);
    let density = kde_density(samples, &grid, bandwidth);
    let peak = density.iter().cloned().fold(0.0f64, f64::max);
    // lo always keeps mass >= level (threshold 0 covers everything).
    let mut lo = 0.0;
    let mut hi = peak;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let mass = fraction_in(samples, &superlevel_intervals(&grid, &density, mid));
        if mass >= level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(HpdResult {
        level,
        intervals: superlevel_intervals(&grid, &density, lo),
        method: HpdMethod::KdeThreshold,
        warning: None,
    })
}

/// Biased-normalization sample autocorrelation function; `out[0] == 1`.
pub fn acf(samples: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = samples.len();
    if max_lag >= n {
        return Err(Error::InvalidConfig(format!(
            "max_lag {max_lag} must be < series length {n}"
        )));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let c0: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    if !(c0 > 0.0) {
        return Err(Error::InvalidData(
            "autocorrelation is undefined for a zero-variance series".into(),
        ));
    }
    let mut out = Vec::with_capacity(max_lag + 1);
    for k in 0..=max_lag {
        let ck: f64 = samples[..n - k]
            .iter()
            .zip(&samples[k..])
            .map(|(a, b)| (a - mean) * (b - mean))
            .sum::<f64>()
            / n as f64;
        out.push(ck / c0);
    }
    Ok(out)
}

/// Approximate two-sided significance bound for white-noise autocorrelations.
pub fn acf_significance_bound(n: usize) -> f64 {
    1.96 / (n as f64).sqrt()
}

/// Two-sample Kolmogorov-Smirnov test: returns (statistic, asymptotic
/// p-value) with the finite-sample adjustment of the effective sample size.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidData("KS needs two nonempty samples".into()));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|u, v| u.partial_cmp(v).unwrap());
    ys.sort_by(|u, v| u.partial_cmp(v).unwrap());
    let (n1, n2) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n1 && j < n2 {
        let x = xs[i].min(ys[j]);
        while i < n1 && xs[i] <= x {
            i += 1;
        }
        while j < n2 && ys[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n1 as f64 - j as f64 / n2 as f64).abs());
    }
    if d == 0.0 {
        return Ok((0.0, 1.0));
    }
    let ne = (n1 as f64 * n2 as f64) / (n1 + n2) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-1.0f64).powi(k - 1) * (-2.0 * (k as f64 * lambda).powi(2)).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    Ok((d, p.clamp(0.0, 1.0)))
}

/// Chi-square homogeneity test on an I x 3 table of per-chain model-visit
/// counts; returns (statistic, p-value). Columns with all-zero counts are
/// dropped; a table left with at most one column yields p = 1 by convention.
pub fn chisq_homogeneity(table: &[[u64; 3]]) -> Result<(f64, f64)> {
    if table.len() < 2 {
        return Err(Error::InvalidData(
            "homogeneity test needs at least 2 chains".into(),
        ));
    }
    if table.iter().any(|row| row.iter().sum::<u64>() == 0) {
        return Err(Error::InvalidData(
            "each chain needs at least one visit counted".into(),
        ));
    }
    let kept: Vec<usize> = (0..3)
        .filter(|&c| table.iter().any(|row| row[c] > 0))
        .collect();
    if kept.len() <= 1 {
        return Ok((0.0, 1.0));
    }
    let row_totals: Vec<f64> = table.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let col_totals: Vec<f64> = kept
        .iter()
        .map(|&c| table.iter().map(|r| r[c] as f64).sum())
        .collect();
    let grand: f64 = row_totals.iter().sum();
    let mut stat = 0.0;
    for (row, &rt) in table.iter().zip(&row_totals) {
        for (ci, &c) in kept.iter().enumerate() {
            let expected = rt * col_totals[ci] / grand;
            let observed = row[c] as f64;
            stat += (observed - expected) * (observed - expected) / expected;
        }
    }
    let df = ((table.len() - 1) * (kept.len() - 1)) as f64;
    let dist = ChiSquared::new(df).expect("positive degrees of freedom");
    Ok((stat, (1.0 - dist.cdf(stat)).clamp(0.0, 1.0)))
}

/// p-value trajectories of the multi-chain convergence tests at increasing
/// checkpoints. Each operation fills its own vector and leaves the other
/// empty; `merge` combines the two trajectories of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticTrace {
    pub checkpoints: Vec<usize>,
    pub chisq_pvalues: Vec<f64>,
    pub ks_pvalues: Vec<f64>,
    #[serde(default)]
    pub chisq_statistics: Vec<f64>,
    #[serde(default)]
    pub ks_statistics: Vec<f64>,
    pub num_chains: usize,
}

impl DiagnosticTrace {
    pub fn validate(&self) -> Result<()> {
        if self.num_chains < 2 {
            return Err(Error::InvalidData("diagnostics need >= 2 chains".into()));
        }
        if !self.checkpoints.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidData(
                "checkpoints must be strictly increasing".into(),
            ));
        }
        for p in self.chisq_pvalues.iter().chain(&self.ks_pvalues) {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::InvalidData(format!("p-value {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn merge(chisq: DiagnosticTrace, ks: DiagnosticTrace) -> Result<DiagnosticTrace> {
        if chisq.checkpoints != ks.checkpoints || chisq.num_chains != ks.num_chains {
            return Err(Error::InvalidData(
                "cannot merge diagnostics over different checkpoints or chain counts".into(),
            ));
        }
        Ok(DiagnosticTrace {
            checkpoints: chisq.checkpoints,
            chisq_pvalues: chisq.chisq_pvalues,
            ks_pvalues: ks.ks_pvalues,
            chisq_statistics: chisq.chisq_statistics,
            ks_statistics: ks.ks_statistics,
            num_chains: chisq.num_chains,
        })
    }
}

fn check_checkpoints(checkpoints: &[usize], min_len: usize) -> Result<()> {
    if checkpoints.is_empty() {
        return Err(Error::InvalidConfig("need at least one checkpoint".into()));
    }
    if !checkpoints.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidConfig(
            "checkpoints must be strictly increasing".into(),
        ));
    }
    if checkpoints[0] == 0 || *checkpoints.last().unwrap() > min_len {
        return Err(Error::InvalidConfig(format!(
            "checkpoints must lie in [1, {min_len}]"
        )));
    }
    Ok(())
}

/// Chi-square homogeneity of cumulative model-visit counts across chains at
/// each checkpoint.
pub fn chisq_convergence(
    chains: &[Vec<usize>],
    checkpoints: &[usize],
) -> Result<DiagnosticTrace> {
    if chains.len() < 2 {
        return Err(Error::InvalidData("diagnostics need >= 2 chains".into()));
    }
    let min_len = chains.iter().map(Vec::len).min().unwrap();
    check_checkpoints(checkpoints, min_len)?;
    let mut pvalues = Vec::with_capacity(checkpoints.len());
    let mut statistics = Vec::with_capacity(checkpoints.len());
    for &cp in checkpoints {
        let mut table = vec![[0u64; 3]; chains.len()];
        for (row, chain) in table.iter_mut().zip(chains) {
            for &m in &chain[..cp] {
                if m > 2 {
                    return Err(Error::InvalidData(format!("model index {m} out of range")));
                }
                row[m] += 1;
            }
        }
        let (stat, p) = chisq_homogeneity(&table)?;
        statistics.push(stat);
        pvalues.push(p);
    }
    let trace = DiagnosticTrace {
        checkpoints: checkpoints.to_vec(),
        chisq_pvalues: pvalues,
        ks_pvalues: Vec::new(),
        chisq_statistics: statistics,
        ks_statistics: Vec::new(),
        num_chains: chains.len(),
    };
    trace.validate()?;
    Ok(trace)
}

/// All-pairs two-sample KS on the cumulative traces of a chosen functional,
/// reporting the minimum pairwise p-value per checkpoint (conservative).
pub fn ks_convergence(traces: &[Vec<f64>], checkpoints: &[usize]) -> Result<DiagnosticTrace> {
    if traces.len() < 2 {
        return Err(Error::InvalidData("diagnostics need >= 2 chains".into()));
    }
    let min_len = traces.iter().map(Vec::len).min().unwrap();
    check_checkpoints(checkpoints, min_len)?;
    let mut pvalues = Vec::with_capacity(checkpoints.len());
    let mut statistics = Vec::with_capacity(checkpoints.len());
    for &cp in checkpoints {
        let mut min_p = 1.0f64;
        let mut worst_d = 0.0;
        for i in 0..traces.len() {
            for j in (i + 1)..traces.len() {
                let (d, p) = ks_two_sample(&traces[i][..cp], &traces[j][..cp])?;
                if p < min_p || (p == min_p && d > worst_d) {
                    min_p = p;
                    worst_d = d;
                }
            }
        }
        pvalues.push(min_p);
        statistics.push(worst_d);
    }
    let trace = DiagnosticTrace {
        checkpoints: checkpoints.to_vec(),
        chisq_pvalues: Vec::new(),
        ks_pvalues: pvalues,
        chisq_statistics: Vec::new(),
        ks_statistics: statistics,
        num_chains: traces.len(),
    };
    trace.validate()?;
    Ok(trace)
}

/// Model indicators of a trans-dimensional record as a real-valued trace for
/// the KS functional.
pub fn model_indicator_trace(record: &ChainRecord) -> Vec<f64> {
    record.model_indices().iter().map(|&m| m as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalSummary {
    pub model: String,
    pub count: usize,
    pub mean: f64,
    pub hpd: HpdResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub per_model: Vec<ConditionalSummary>,
    /// Across-model mixture summary, weighted by visit frequency through
    /// pooling; equals the single per-model entry when only one model holds
    /// the parameter.
    pub overall_mean: f64,
    pub overall_hpd: HpdResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAveragedSummary {
    pub model_probabilities: [f64; 3],
    pub parameters: Vec<ParameterSummary>,
    /// Parameters requested but present in no visited snapshot.
    pub omitted: Vec<String>,
}

fn mean_of(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Per-model conditional summaries and the across-model mixture summary of
/// every parameter present in at least one visited model.
pub fn model_averaged_summary(record: &ChainRecord, level: f64) -> Result<ModelAveragedSummary> {
    if record.is_empty() {
        return Err(Error::InvalidData("summary needs a nonempty chain".into()));
    }
    let n = record.snapshots[0].state.alpha.len();
    let mut names: Vec<String> = Vec::new();
    for model in ModelId::ALL {
        for name in param_names(model, n) {
            if !names.contains(&name) {
                names.push(name);
            }
        }
    }
    let mut parameters = Vec::new();
    let mut omitted = Vec::new();
    for name in names {
        let mut per_model = Vec::new();
        let mut pooled = Vec::new();
        for model in ModelId::ALL {
            let values: Vec<f64> = record
                .snapshots
                .iter()
                .filter(|s| s.state.model == model)
                .filter_map(|s| param_value(&s.state, &name))
                .collect();
            if values.is_empty() {
                continue;
            }
            per_model.push(ConditionalSummary {
                model: model.label().to_string(),
                count: values.len(),
                mean: mean_of(&values),
                hpd: hpd_shortest(&values, level)?,
            });
            pooled.extend_from_slice(&values);
        }
        if pooled.is_empty() {
            omitted.push(name);
            continue;
        }
        parameters.push(ParameterSummary {
            name,
            overall_mean: mean_of(&pooled),
            overall_hpd: hpd_shortest(&pooled, level)?,
            per_model,
        });
    }
    Ok(ModelAveragedSummary {
        model_probabilities: record.model_probabilities(),
        parameters,
        omitted,
    })
}
