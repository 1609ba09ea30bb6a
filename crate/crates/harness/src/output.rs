//! Run directories: writing, reading back and pairing.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::runner::{PrunedRecord, TrialOutput};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation over `√n`; 0 for a single trial.
    pub stderr: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Option<Self> {
        let n = xs.len();
        if n == 0 {
            return None;
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, stderr, n })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub domain: String,
    pub algorithm: String,
    pub trials: u64,
    pub seed: u64,
    pub k_cap: Option<u64>,
    /// Set when a `k_m` ceiling was configured; the PAC certificate does not hold.
    pub certificate_void: bool,
    pub metrics: BTreeMap<String, Stat>,
}

/// Per-trial metric table, one column per metric name.
pub fn metric_table(outputs: &[TrialOutput]) -> (Vec<String>, Vec<(u64, Vec<Option<f64>>)>) {
    let names: BTreeSet<String> = outputs.iter().flat_map(|o| o.metrics.keys().cloned()).collect();
    let names: Vec<String> = names.into_iter().collect();
    let rows = outputs
        .iter()
        .map(|o| (o.trial, names.iter().map(|n| o.metrics.get(n).copied()).collect()))
        .collect();
    (names, rows)
}

pub fn summarize(cfg: &ExperimentConfig, names: &[String], rows: &[(u64, Vec<Option<f64>>)]) -> Summary {
    let metrics = names
        .iter()
        .enumerate()
        .filter_map(|(i, n)| {
            let xs: Vec<f64> = rows.iter().filter_map(|(_, r)| r[i]).collect();
            Stat::of(&xs).map(|s| (n.clone(), s))
        })
        .collect();
    Summary {
        domain: cfg.domain.label(),
        algorithm: serde_json::to_value(cfg.algorithm).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
        trials: cfg.trials,
        seed: cfg.seed,
        k_cap: cfg.k_cap,
        certificate_void: cfg.certificate_void(),
        metrics,
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_default()
}

/// Writes `config.toml`, `trials.csv`, `metrics.csv`, `policies.csv`,
/// `summary.json`, `pruned.json` and `timing.json`. Everything except the
/// timing file is a function of (config, seed).
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, outputs: &[TrialOutput]) -> Result<Summary> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;

    let mut w = csv::Writer::from_path(dir.join("trials.csv"))?;
    w.write_record([
        "trial", "stage", "seq_id", "action", "samples", "k_m", "q_candidate", "q_incumbent", "oracle_value", "event",
    ])?;
    for o in outputs {
        for r in &o.rows {
            w.write_record([
                r.trial.to_string(),
                r.stage.to_string(),
                r.seq_id.clone(),
                r.action.clone(),
                r.samples.to_string(),
                r.k_m.to_string(),
                fmt_opt(r.q_candidate),
                fmt_opt(r.q_incumbent),
                fmt_opt(r.oracle_value),
                r.event.clone(),
            ])?;
        }
    }
    w.flush()?;

    let (names, rows) = metric_table(outputs);
    let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
    let mut header = vec!["trial".to_string(), "termination".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (o, (trial, vals)) in outputs.iter().zip(&rows) {
        let mut rec = vec![trial.to_string(), o.termination.clone()];
        rec.extend(vals.iter().map(|v| fmt_opt(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("policies.csv"))?;
    w.write_record(["trial", "agent", "table"])?;
    for o in outputs {
        for (agent, t) in o.policies.iter().enumerate() {
            w.write_record([o.trial.to_string(), agent.to_string(), t.clone()])?;
        }
    }
    w.flush()?;

    let summary = summarize(cfg, &names, &rows);
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    let pruned: Vec<&PrunedRecord> = outputs.iter().flat_map(|o| &o.pruned).collect();
    fs::write(dir.join("pruned.json"), serde_json::to_string_pretty(&pruned)?)?;
    let timing: BTreeMap<u64, f64> = outputs.iter().map(|o| (o.trial, o.wall_secs)).collect();
    fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&timing)?)?;
    Ok(summary)
}

/// Per-trial metrics read back from `metrics.csv`.
pub fn read_metrics(dir: &Path) -> Result<BTreeMap<u64, BTreeMap<String, f64>>> {
    let mut r = csv::Reader::from_path(dir.join("metrics.csv"))
        .with_context(|| format!("reading {}", dir.join("metrics.csv").display()))?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let trial: u64 = rec.get(0).context("empty row")?.parse()?;
        let mut m = BTreeMap::new();
        for (name, v) in header.iter().zip(rec.iter()).skip(2) {
            if !v.is_empty() {
                m.insert(name.clone(), v.parse::<f64>()?);
            }
        }
        out.insert(trial, m);
    }
    Ok(out)
}

fn read_policies(dir: &Path) -> Result<BTreeMap<(u64, usize), String>> {
    let mut r = csv::Reader::from_path(dir.join("policies.csv"))?;
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        out.insert((rec[0].parse()?, rec[1].parse()?), rec[2].to_string());
    }
    Ok(out)
}

/// Recompute the summary from the per-trial files of a run directory.
pub fn recompute_summary(dir: &Path) -> Result<Summary> {
    let cfg = ExperimentConfig::from_toml(&fs::read_to_string(dir.join("config.toml"))?)?;
    let metrics = read_metrics(dir)?;
    let names: BTreeSet<String> = metrics.values().flat_map(|m| m.keys().cloned()).collect();
    let names: Vec<String> = names.into_iter().collect();
    let rows: Vec<(u64, Vec<Option<f64>>)> =
        metrics.iter().map(|(t, m)| (*t, names.iter().map(|n| m.get(n).copied()).collect())).collect();
    Ok(summarize(&cfg, &names, &rows))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub mean_a: f64,
    pub mean_b: f64,
    /// Paired differences `b − a`.
    pub diff: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub domain: String,
    pub algorithm_a: String,
    pub algorithm_b: String,
    pub paired_trials: usize,
    pub metrics: BTreeMap<String, MetricComparison>,
    /// `mean(samples_per_transform of b) / mean(… of a)` over paired trials.
    pub sample_ratio: Option<f64>,
    /// Share of paired trials whose final policies are identical.
    pub same_final_policy: Option<f64>,
}

pub fn compare(a: &Path, b: &Path) -> Result<Comparison> {
    let ca = ExperimentConfig::from_toml(&fs::read_to_string(a.join("config.toml"))?)?;
    let cb = ExperimentConfig::from_toml(&fs::read_to_string(b.join("config.toml"))?)?;
    if ca.domain != cb.domain {
        bail!("runs are on different domains: {} vs {}", ca.domain.label(), cb.domain.label());
    }
    let ma = read_metrics(a)?;
    let mb = read_metrics(b)?;
    let trials: Vec<u64> = ma.keys().filter(|t| mb.contains_key(t)).copied().collect();
    let names: BTreeSet<&String> = trials.iter().flat_map(|t| ma[t].keys()).filter(|n| trials.iter().all(|t| mb[t].contains_key(*n))).collect();
    let mut metrics = BTreeMap::new();
    for n in names {
        let xa: Vec<f64> = trials.iter().filter_map(|t| ma[t].get(n).copied()).collect();
        let xb: Vec<f64> = trials.iter().filter_map(|t| mb[t].get(n).copied()).collect();
        if xa.len() != trials.len() || xb.len() != trials.len() {
            continue;
        }
        let d: Vec<f64> = xa.iter().zip(&xb).map(|(x, y)| y - x).collect();
        if let (Some(sa), Some(sb), Some(sd)) = (Stat::of(&xa), Stat::of(&xb), Stat::of(&d)) {
            metrics.insert(n.clone(), MetricComparison { mean_a: sa.mean, mean_b: sb.mean, diff: sd });
        }
    }
    let sample_ratio = metrics
        .get("samples_per_transform")
        .filter(|m| m.mean_a > 0.0)
        .map(|m| m.mean_b / m.mean_a);
    let same_final_policy = match (read_policies(a), read_policies(b)) {
        (Ok(pa), Ok(pb)) if !trials.is_empty() => {
            let same = trials
                .iter()
                .filter(|t| {
                    let ka: Vec<_> = pa.range((**t, 0)..(**t + 1, 0)).map(|(_, v)| v).collect();
                    let kb: Vec<_> = pb.range((**t, 0)..(**t + 1, 0)).map(|(_, v)| v).collect();
                    !ka.is_empty() && ka == kb
                })
                .count();
            Some(same as f64 / trials.len() as f64)
        }
        _ => None,
    };
    let name = |c: &ExperimentConfig| {
        serde_json::to_value(c.algorithm).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
    };
    Ok(Comparison {
        domain: ca.domain.label(),
        algorithm_a: name(&ca),
        algorithm_b: name(&cb),
        paired_trials: trials.len(),
        metrics,
        sample_ratio,
        same_final_policy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_uses_sample_deviation() {
        let s = Stat::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert!((s.stderr - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-12);
        assert_eq!(Stat::of(&[7.0]).unwrap().stderr, 0.0);
        assert!(Stat::of(&[]).is_none());
    }
}
