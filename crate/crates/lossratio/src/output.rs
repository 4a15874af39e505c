//! Artifact writers: chain CSVs, summary/transition JSON, ACF and density
//! CSVs, diagnostic traces, and the run manifest with content hashes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::diagnostics::DiagnosticTrace;
use crate::error::{Error, Result};
use crate::gibbs::{param_value, ChainRecord, Snapshot};
use crate::marginal::MarginalRecord;
use crate::model::{ObservationSeries, ParamState};

/// Shortest round-trip decimal form; empty for absent parameters.
fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One schema serves every sampler: `iteration,model,alpha0,alpha1,...,
/// alphaN,rho,eta,sigma,tau`, with empty cells for parameters the current
/// model lacks.
pub fn write_chain_csv(path: &Path, record: &ChainRecord) -> Result<()> {
    let first = record
        .snapshots
        .first()
        .ok_or_else(|| Error::InvalidData("cannot write an empty chain".into()))?;
    let n = first.state.alpha.len();
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header = vec!["iteration".to_string(), "model".to_string(), "alpha0".to_string()];
    for k in 1..=n {
        header.push(format!("alpha{k}"));
    }
    header.extend(["rho", "eta", "sigma", "tau"].map(String::from));
    wtr.write_record(&header)?;
    for snap in &record.snapshots {
        let s = &snap.state;
        if s.alpha.len() != n {
            return Err(Error::InvalidData("inconsistent alpha length in chain".into()));
        }
        let mut row = vec![snap.iteration.to_string(), s.model.label().to_string()];
        row.push(cell(s.alpha0));
        for k in 0..n {
            row.push(cell(Some(s.alpha[k])));
        }
        row.push(cell(param_value(s, "rho")));
        row.push(cell(s.eta));
        row.push(cell(Some(s.sigma)));
        row.push(cell(Some(s.tau)));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Marginalized-sampler trace in the shared chain schema: model is always
/// `m1`, the integrated-out sigma and tau columns stay empty.
pub fn write_marginal_chain_csv(path: &Path, record: &MarginalRecord) -> Result<()> {
    let first = record
        .snapshots
        .first()
        .ok_or_else(|| Error::InvalidData("cannot write an empty chain".into()))?;
    let n = first.state.alpha.len();
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header = vec!["iteration".to_string(), "model".to_string(), "alpha0".to_string()];
    for k in 1..=n {
        header.push(format!("alpha{k}"));
    }
    header.extend(["rho", "eta", "sigma", "tau"].map(String::from));
    wtr.write_record(&header)?;
    for snap in &record.snapshots {
        let s = &snap.state;
        let mut row = vec![
            snap.iteration.to_string(),
            "m1".to_string(),
            s.alpha0.to_string(),
        ];
        for &a in &s.alpha {
            row.push(a.to_string());
        }
        row.push(s.rho.to_string());
        row.push(s.eta.to_string());
        row.push(String::new());
        row.push(String::new());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// `year,loss,exposure` dataset in the format the fitting commands consume.
pub fn write_dataset_csv(path: &Path, series: &ObservationSeries) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["year", "loss", "exposure"])?;
    for ((&y, &l), &e) in series
        .years()
        .iter()
        .zip(series.losses())
        .zip(series.exposures())
    {
        wtr.write_record([y.to_string(), l.to_string(), e.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Parse a chain CSV written by `write_chain_csv` back into a record.
/// Requires the sigma and tau columns to be populated (trans-dimensional and
/// Gibbs traces; marginalized traces cannot round-trip through `ParamState`).
pub fn read_chain_csv(path: &Path) -> Result<ChainRecord> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let n = header
        .iter()
        .filter(|h| {
            h.strip_prefix("alpha")
                .is_some_and(|k| k.parse::<usize>().map_or(false, |k| k >= 1))
        })
        .count();
    let expected_cols = n + 7;
    if header.len() != expected_cols
        || header[0] != "iteration"
        || header[1] != "model"
        || header[2] != "alpha0"
    {
        return Err(Error::InvalidData(format!(
            "{}: not a chain CSV (unexpected header)",
            path.display()
        )));
    }
    let field = |rec: &csv::StringRecord, idx: usize| -> Result<Option<f64>> {
        let raw = rec.get(idx).unwrap_or("");
        if raw.is_empty() {
            return Ok(None);
        }
        raw.parse::<f64>()
            .map(Some)
            .map_err(|e| Error::InvalidData(format!("{}: bad number {raw}: {e}", path.display())))
    };
    let mut record = ChainRecord::default();
    for row in rdr.records() {
        let row = row?;
        let iteration: u64 = row
            .get(0)
            .unwrap_or("")
            .parse()
            .map_err(|e| Error::InvalidData(format!("{}: bad iteration: {e}", path.display())))?;
        let model = row.get(1).unwrap_or("");
        let alpha0 = field(&row, 2)?;
        let mut alpha = Vec::with_capacity(n);
        for k in 0..n {
            alpha.push(field(&row, 3 + k)?.ok_or_else(|| {
                Error::InvalidData(format!("{}: missing alpha{}", path.display(), k + 1))
            })?);
        }
        let rho = field(&row, 3 + n)?;
        let eta = field(&row, 4 + n)?;
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::InvalidData(format!("{}: missing {name}", path.display())))
        };
        let sigma = need(field(&row, 5 + n)?, "sigma")?;
        let tau = need(field(&row, 6 + n)?, "tau")?;
        let state = match model {
            "m1" => ParamState::new_m1(
                need(alpha0, "alpha0")?,
                alpha,
                need(rho, "rho")?,
                need(eta, "eta")?,
                sigma,
                tau,
            ),
            "m2" => ParamState::new_m2(need(alpha0, "alpha0")?, alpha, sigma, tau),
            "m3" => ParamState::new_m3(alpha, need(eta, "eta")?, sigma, tau),
            other => {
                return Err(Error::InvalidData(format!(
                    "{}: unknown model label {other}",
                    path.display()
                )))
            }
        };
        record.snapshots.push(Snapshot { iteration, state });
    }
    if record.is_empty() {
        return Err(Error::InvalidData(format!(
            "{}: chain CSV has no rows",
            path.display()
        )));
    }
    Ok(record)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// `parameter,lag,autocorrelation,significance_bound` rows for each traced
/// parameter; entries pair the name with (autocorrelations, bound).
pub fn write_acf_csv(path: &Path, entries: &[(String, Vec<f64>, f64)]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["parameter", "lag", "autocorrelation", "significance_bound"])?;
    for (name, acf, bound) in entries {
        for (lag, r) in acf.iter().enumerate() {
            wtr.write_record([
                name.as_str(),
                &lag.to_string(),
                &r.to_string(),
                &bound.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// `value,density` grid of a kernel density estimate.
pub fn write_density_csv(path: &Path, grid: &[f64], density: &[f64]) -> Result<()> {
    if grid.len() != density.len() {
        return Err(Error::InvalidData("grid/density length mismatch".into()));
    }
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["value", "density"])?;
    for (g, d) in grid.iter().zip(density) {
        wtr.write_record([g.to_string(), d.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// `checkpoint,statistic,value,p_value` — one row per (checkpoint, test).
pub fn write_diag_csv(path: &Path, trace: &DiagnosticTrace) -> Result<()> {
    trace.validate()?;
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["checkpoint", "statistic", "value", "p_value"])?;
    for (i, &cp) in trace.checkpoints.iter().enumerate() {
        if let (Some(stat), Some(p)) = (trace.chisq_statistics.get(i), trace.chisq_pvalues.get(i))
        {
            wtr.write_record([cp.to_string(), "chisq".into(), stat.to_string(), p.to_string()])?;
        }
        if let (Some(stat), Some(p)) = (trace.ks_statistics.get(i), trace.ks_pvalues.get(i)) {
            wtr.write_record([cp.to_string(), "ks".into(), stat.to_string(), p.to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Labeled transition-matrix rows; never-visited models serialize as null.
pub fn transition_matrix_json(matrix: &[Option<[f64; 3]>; 3]) -> serde_json::Value {
    let mut map = serde_json::Map::new();
    for (i, label) in ["m1", "m2", "m3"].iter().enumerate() {
        map.insert(label.to_string(), serde_json::json!(matrix[i]));
    }
    serde_json::Value::Object(map)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<C: Serialize> {
    pub command: String,
    pub config: C,
    /// Artifact file name -> SHA-256 of its contents, sorted by name.
    pub artifacts: BTreeMap<String, String>,
}

/// Hash every regular file in `dir` except `manifest.json` itself and write
/// the manifest capturing the generating command and configuration.
pub fn write_manifest<C: Serialize>(dir: &Path, command: &str, config: &C) -> Result<PathBuf> {
    let mut artifacts = BTreeMap::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    for path in entries {
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name == "manifest.json" {
            continue;
        }
        artifacts.insert(name, sha256_file(&path)?);
    }
    let manifest = Manifest {
        command: command.to_string(),
        config,
        artifacts,
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::Snapshot;
    use crate::model::ParamState;

    fn mixed_record() -> ChainRecord {
        ChainRecord {
            snapshots: vec![
                Snapshot {
                    iteration: 0,
                    state: ParamState::new_m1(0.1, vec![0.2, 0.3], 0.4, 0.5, 1.5, 2.5),
                },
                Snapshot {
                    iteration: 1,
                    state: ParamState::new_m3(vec![0.2, 0.3], 0.5, 1.5, 2.5),
                },
            ],
        }
    }

    #[test]
    fn chain_csv_schema_and_empty_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain_0.csv");
        write_chain_csv(&path, &mixed_record()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "iteration,model,alpha0,alpha1,alpha2,rho,eta,sigma,tau"
        );
        assert_eq!(lines.next().unwrap(), "0,m1,0.1,0.2,0.3,0.4,0.5,1.5,2.5");
        // M3 row: alpha0 and rho empty, eta present.
        assert_eq!(lines.next().unwrap(), "1,m3,,0.2,0.3,,0.5,1.5,2.5");
    }

    #[test]
    fn empty_chain_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(write_chain_csv(&dir.path().join("c.csv"), &ChainRecord::default()).is_err());
    }

    #[test]
    fn transition_matrix_null_rows() {
        let m = [Some([0.5, 0.25, 0.25]), None, Some([0.0, 0.0, 1.0])];
        let v = transition_matrix_json(&m);
        assert_eq!(v["m1"][0], 0.5);
        assert!(v["m2"].is_null());
        assert_eq!(v["m3"][2], 1.0);
    }

    #[test]
    fn manifest_hashes_artifacts_but_not_itself() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "x,y\n1,2\n").unwrap();
        std::fs::write(dir.path().join("b.json"), "{}\n").unwrap();
        write_manifest(dir.path(), "test", &serde_json::json!({"seed": 1})).unwrap();
        let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let artifacts = v["artifacts"].as_object().unwrap();
        assert_eq!(artifacts.len(), 2);
        assert!(artifacts.contains_key("a.csv"));
        assert!(!artifacts.contains_key("manifest.json"));
        // Hash matches an independent recomputation.
        assert_eq!(
            artifacts["a.csv"].as_str().unwrap(),
            sha256_file(&dir.path().join("a.csv")).unwrap()
        );
    }

    #[test]
    fn chain_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain_0.csv");
        let record = mixed_record();
        write_chain_csv(&path, &record).unwrap();
        let back = read_chain_csv(&path).unwrap();
        assert_eq!(record, back);
    }

    #[test]
    fn diag_csv_rows() {
        let trace = DiagnosticTrace {
            checkpoints: vec![10, 20],
            chisq_pvalues: vec![0.5, 0.25],
            ks_pvalues: vec![1.0, 0.75],
            chisq_statistics: vec![1.0, 2.0],
            ks_statistics: vec![0.0, 0.1],
            num_chains: 2,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("diag.csv");
        write_diag_csv(&path, &trace).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1], "10,chisq,1,0.5");
        assert_eq!(lines[2], "10,ks,0,1");
    }
}
