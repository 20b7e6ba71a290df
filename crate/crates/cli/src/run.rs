//! Execution of each subcommand.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use acmmd::estimator::{acmmd_sq, h_matrix, sigma_h_sq, Triplet};
use acmmd::hypothesis::{acmmd_test, TestReport};
use acmmd::reliability::{
    acmmd_rel_test, default_inner_samples, rel_h_matrix, ReliabilityRecord,
};
use acmmd::rng::{derive_seed, domain, stream};
use acmmd::toy::{self, ToyConfig};
use acmmd::{Bandwidth, KernelSpec};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::config::{ExperimentConfig, Mode};
use crate::dataset::{self, load_dataset, Dataset, Records, Shape};

/// Failure of a command, mapped to the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or configuration (exit code 1).
    #[error("{0}")]
    Usage(String),
    /// Unreadable, malformed or insufficient data (exit code 2).
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl From<dataset::DataError> for CliError {
    fn from(e: dataset::DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn data_err(e: acmmd::Error) -> CliError {
    CliError::Data(e.to_string())
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

type Result<T> = std::result::Result<T, CliError>;

/// Runs `mode` with a validated configuration.
pub fn run(mode: Mode, config: &ExperimentConfig) -> Result<()> {
    let work = || match mode {
        Mode::Estimate | Mode::Test | Mode::RelEstimate | Mode::RelTest => run_on_dataset(mode, config),
        Mode::Sweep => run_sweep(config),
        Mode::ToyGenerate => run_toy_generate(config),
        Mode::ToyExact => run_toy_exact(config),
    };
    match config.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {t} threads: {e}")))?
            .install(work),
        None => work(),
    }
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, bytes).map_err(io_err(p)),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| CliError::Data(format!("stdout: {e}"))),
    }
}

fn to_json_bytes(v: &impl Serialize) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(v).expect("reports serialize");
    bytes.push(b'\n');
    bytes
}

/// Point estimate without a test.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub statistic: f64,
    pub n: usize,
    pub kernel_x: String,
    pub kernel_y: String,
    pub sigma_h_sq: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Outcome {
    Estimate(EstimateReport),
    Test(TestReport),
}

/// Records of either shape, restricted to a subset.
enum Subset<'a> {
    Triplets(Vec<&'a Triplet>),
    Reliability(Vec<&'a ReliabilityRecord>),
}

fn subset<'a>(records: &'a Records, idx: &[usize]) -> Subset<'a> {
    match records {
        Records::Triplets(t) => Subset::Triplets(idx.iter().map(|&i| &t[i]).collect()),
        Records::Reliability(r) => Subset::Reliability(idx.iter().map(|&i| &r[i]).collect()),
    }
}

/// Runs the estimator (`seed = None`) or the test on a subset.
fn evaluate(
    sub: Subset<'_>,
    kx: &KernelSpec,
    ky: &KernelSpec,
    sigma: Bandwidth,
    config: &ExperimentConfig,
    seed: Option<u64>,
) -> Result<Outcome> {
    match sub {
        Subset::Triplets(t) => {
            let t: Vec<Triplet> = t.into_iter().cloned().collect();
            match seed {
                Some(s) => acmmd_test(&t, kx, ky, config.alpha, config.bootstrap, s)
                    .map(Outcome::Test)
                    .map_err(data_err),
                None => {
                    let hc = h_matrix(&t, kx, ky).map_err(data_err)?;
                    Ok(Outcome::Estimate(EstimateReport {
                        statistic: acmmd_sq(&hc.h),
                        n: hc.h.n(),
                        kernel_x: hc.kernel_x.to_string(),
                        kernel_y: hc.kernel_y.to_string(),
                        sigma_h_sq: sigma_h_sq(&hc.h).ok(),
                    }))
                }
            }
        }
        Subset::Reliability(r) => {
            let r: Vec<ReliabilityRecord> = r.into_iter().cloned().collect();
            match seed {
                Some(s) => acmmd_rel_test(&r, ky, sigma, config.alpha, config.bootstrap, s)
                    .map(Outcome::Test)
                    .map_err(data_err),
                None => {
                    let rc = rel_h_matrix(&r, ky, sigma).map_err(data_err)?;
                    Ok(Outcome::Estimate(EstimateReport {
                        statistic: acmmd_sq(&rc.h),
                        n: rc.h.n(),
                        kernel_x: rc.kernel_x().to_string(),
                        kernel_y: rc.kernel_y.to_string(),
                        sigma_h_sq: sigma_h_sq(&rc.h).ok(),
                    }))
                }
            }
        }
    }
}

/// Record indices per group label (a single `all` group without
/// `group_by`), in label order.
fn groups(data: &Dataset, key: Option<&str>) -> Result<BTreeMap<String, Vec<usize>>> {
    let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    match key {
        Some(k) => {
            for (i, label) in data.group_labels(k)?.into_iter().enumerate() {
                out.entry(label).or_default().push(i);
            }
        }
        None => {
            out.insert("all".into(), (0..data.len()).collect());
        }
    }
    Ok(out)
}

/// `n` of `members` drawn without replacement, in draw order.
fn subsample(members: &[usize], n: usize, seed: u64, index: u64, label: &str) -> Result<Vec<usize>> {
    if n > members.len() {
        return Err(CliError::Data(format!(
            "group {label:?} has {} records, fewer than the requested {n}",
            members.len()
        )));
    }
    let mut rng = stream(seed, domain::SUBSAMPLE, index);
    Ok(sample(&mut rng, members.len(), n).into_iter().map(|i| members[i]).collect())
}

/// The configuration as reported: kernels and bandwidth made explicit, and
/// the thread count dropped because it never changes results.
fn resolved_config(config: &ExperimentConfig, kx: &KernelSpec, ky: &KernelSpec, sigma: Bandwidth) -> ExperimentConfig {
    ExperimentConfig {
        kernel_x: Some(kx.clone()),
        kernel_y: Some(ky.clone()),
        sigma_p: Some(sigma),
        threads: None,
        ..config.clone()
    }
}

fn run_on_dataset(mode: Mode, config: &ExperimentConfig) -> Result<()> {
    let input = config.input.as_deref().expect("validated");
    let shape = if mode.is_reliability() { Shape::Reliability } else { Shape::Triplets };
    let data = load_dataset(input, shape)?;
    let (kx, ky) = config.data_kernels();
    let sigma = config.data_sigma();
    let testing = matches!(mode, Mode::Test | Mode::RelTest);
    let resolved = resolved_config(config, &kx, &ky, sigma);

    let report = if config.group_by.is_none() && config.subsample.is_none() {
        let all: Vec<usize> = (0..data.len()).collect();
        let outcome = evaluate(
            subset(&data.records, &all),
            &kx,
            &ky,
            sigma,
            config,
            testing.then(|| config.seed()),
        )?;
        json!({ "command": mode.name(), "config": resolved, "result": outcome })
    } else {
        let mut rows = Vec::new();
        for (gi, (label, members)) in groups(&data, config.group_by.as_deref())?.iter().enumerate() {
            let gi = gi as u64;
            let idx = match config.subsample {
                Some(n) => subsample(members, n, config.seed(), gi, label)?,
                None => members.clone(),
            };
            let seed = derive_seed(config.seed(), domain::SWEEP_CELL, gi);
            let outcome = evaluate(subset(&data.records, &idx), &kx, &ky, sigma, config, testing.then_some(seed))
                .map_err(|e| CliError::Data(format!("group {label:?}: {e}")))?;
            rows.push(json!({ "group": label, "n": idx.len(), "result": outcome }));
        }
        json!({ "command": mode.name(), "config": resolved, "groups": rows })
    };
    write_output(config.out.as_deref(), &to_json_bytes(&report))
}

/// One row of a sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    /// Perturbation (synthetic sweeps) or group label (dataset sweeps).
    pub point: String,
    pub seed: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
    pub runtime_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
enum GridPoint {
    Shift(f64),
    Group(String),
}

impl GridPoint {
    fn label(&self) -> String {
        match self {
            GridPoint::Shift(d) => d.to_string(),
            GridPoint::Group(g) => g.clone(),
        }
    }
}

/// Exact (Clopper–Pearson) 95% interval for a binomial proportion.
pub fn clopper_pearson(successes: usize, trials: usize) -> (f64, f64) {
    let (k, n) = (successes as f64, trials as f64);
    let lo = if successes == 0 {
        0.0
    } else {
        Beta::new(k, n - k + 1.0).expect("valid shape").inverse_cdf(0.025)
    };
    let hi = if successes == trials {
        1.0
    } else {
        Beta::new(k + 1.0, n - k).expect("valid shape").inverse_cdf(0.975)
    };
    (lo, hi)
}

fn run_sweep(config: &ExperimentConfig) -> Result<()> {
    let base_seed = config.seed();
    let data = match &config.input {
        Some(p) => Some(load_dataset(
            p,
            if config.reliability { Shape::Reliability } else { Shape::Triplets },
        )?),
        None => None,
    };
    let group_map = match &data {
        Some(d) => Some(groups(d, config.group_by.as_deref())?),
        None => None,
    };
    let points: Vec<GridPoint> = match &group_map {
        Some(g) => g.keys().cloned().map(GridPoint::Group).collect(),
        None => config.sweep.delta_p_values.iter().map(|&d| GridPoint::Shift(d)).collect(),
    };
    let (kx, ky, sigma) = match &data {
        Some(_) => {
            let (kx, ky) = config.data_kernels();
            (kx, ky, config.data_sigma())
        }
        None => {
            let (kx, ky) = config.toy_kernels();
            (kx, ky, config.toy_sigma())
        }
    };
    if let Some(g) = &group_map {
        for (label, members) in g {
            if let Some(&n) = config.sweep.n_values.iter().find(|&&n| n > members.len()) {
                return Err(CliError::Data(format!(
                    "group {label:?} has {} records, fewer than the requested {n}",
                    members.len()
                )));
            }
        }
    }

    let mut cells = Vec::new();
    for &n in &config.sweep.n_values {
        for point in &points {
            for rep in 0..config.sweep.n_seeds {
                cells.push((n, point.clone(), rep));
            }
        }
    }
    let run_cell = |(n, point, rep): &(usize, GridPoint, usize)| -> Result<SweepRow> {
        // common random numbers: replicate `rep` shares its seed across grid points
        let seed = derive_seed(base_seed, domain::SWEEP_CELL, *rep as u64);
        let start = Instant::now();
        let report = match (point, &data, &group_map) {
            (GridPoint::Shift(dp), _, _) => {
                let toy = config.toy.with_delta_p(*dp);
                let mut rng = stream(seed, domain::TOY_DATA, 0);
                if config.reliability {
                    let r = config.inner_samples.unwrap_or_else(|| default_inner_samples(*n));
                    let (recs, _) = toy.sample_reliability(*n, r, &mut rng).map_err(data_err)?;
                    acmmd_rel_test(&recs, &ky, sigma, config.alpha, config.bootstrap, seed)
                } else {
                    let t = toy.sample_triplets(*n, &mut rng).map_err(data_err)?;
                    acmmd_test(&t, &kx, &ky, config.alpha, config.bootstrap, seed)
                }
                .map_err(data_err)?
            }
            (GridPoint::Group(label), Some(d), Some(g)) => {
                let idx = subsample(&g[label], *n, seed, 0, label)?;
                match evaluate(subset(&d.records, &idx), &kx, &ky, sigma, config, Some(seed))? {
                    Outcome::Test(t) => t,
                    Outcome::Estimate(_) => unreachable!("seeded evaluation runs the test"),
                }
            }
            _ => unreachable!("group points come with a dataset"),
        };
        Ok(SweepRow {
            n: *n,
            point: point.label(),
            seed: *rep,
            statistic: report.statistic,
            p_value: report.p_value,
            reject: report.reject,
            runtime_ms: if config.timing { start.elapsed().as_millis() as u64 } else { 0 },
        })
    };
    let rows: Vec<SweepRow> = cells.par_iter().map(run_cell).collect::<Result<_>>()?;

    let point_name = if data.is_some() { "group" } else { "delta_p" };
    let mut csv_out = csv::Writer::from_writer(Vec::new());
    csv_out
        .write_record(["n", point_name, "seed", "statistic", "p_value", "reject", "runtime_ms"])
        .expect("in-memory write");
    for r in &rows {
        csv_out
            .write_record([
                r.n.to_string(),
                r.point.clone(),
                r.seed.to_string(),
                r.statistic.to_string(),
                r.p_value.to_string(),
                r.reject.to_string(),
                r.runtime_ms.to_string(),
            ])
            .expect("in-memory write");
    }
    let csv_bytes = csv_out.into_inner().expect("in-memory flush");

    let mut summary_points = Vec::new();
    for chunk in rows.chunks(config.sweep.n_seeds) {
        let runs = chunk.len();
        let rejections = chunk.iter().filter(|r| r.reject).count();
        let (lo, hi) = clopper_pearson(rejections, runs);
        let mut entry = Map::new();
        entry.insert("n".into(), json!(chunk[0].n));
        entry.insert(point_name.into(), match &points[0] {
            GridPoint::Shift(_) => json!(chunk[0].point.parse::<f64>().expect("shift label")),
            GridPoint::Group(_) => json!(chunk[0].point),
        });
        entry.insert("runs".into(), json!(runs));
        entry.insert("rejections".into(), json!(rejections));
        entry.insert("rejection_rate".into(), json!(rejections as f64 / runs as f64));
        entry.insert("ci95".into(), json!([lo, hi]));
        entry.insert(
            "mean_statistic".into(),
            json!(chunk.iter().map(|r| r.statistic).sum::<f64>() / runs as f64),
        );
        if data.is_none() {
            let toy = config.toy.with_delta_p(chunk[0].point.parse().expect("shift label"));
            let exact = if config.reliability {
                toy::acmmd_rel_sq_exact(&toy)
            } else {
                toy::acmmd_sq_exact(&ToyConfig { kx: kx.clone(), ..toy })
            };
            entry.insert("exact_statistic".into(), exact.map_or(Value::Null, |v| json!(v)));
        }
        log::info!("{}", Value::Object(entry.clone()));
        summary_points.push(Value::Object(entry));
    }
    let summary = json!({
        "command": "sweep",
        "statistic": if config.reliability { "acmmd-rel" } else { "acmmd" },
        "config": resolved_config(config, &kx, &ky, sigma),
        "points": summary_points,
    });
    match &config.out {
        Some(p) => {
            write_output(Some(p), &csv_bytes)?;
            write_output(Some(&summary_path(p)), &to_json_bytes(&summary))
        }
        None => write_output(None, &csv_bytes),
    }
}

/// Where a sweep writes its summary next to the CSV at `csv`.
pub fn summary_path(csv: &Path) -> PathBuf {
    csv.with_extension("summary.json")
}

/// Synthetic records for `toy-generate`: triplets, or reliability records
/// (with the input `p` kept as `x`) when `inner_samples` is set.
pub fn toy_records(config: &ExperimentConfig) -> Result<Vec<dataset::RecordJson>> {
    let n = config.n.expect("validated");
    let mut rng = stream(config.seed(), domain::TOY_DATA, 0);
    let toy = &config.toy;
    Ok(match config.inner_samples {
        Some(r) => {
            let (recs, ps) = toy.sample_reliability(n, r, &mut rng).map_err(data_err)?;
            recs.iter()
                .zip(ps)
                .map(|(rec, p)| dataset::reliability_json(Some(&acmmd::Item::Vector(vec![p])), rec))
                .collect()
        }
        None => toy
            .sample_triplets(n, &mut rng)
            .map_err(data_err)?
            .iter()
            .map(dataset::triplet_json)
            .collect(),
    })
}

fn run_toy_generate(config: &ExperimentConfig) -> Result<()> {
    let records = toy_records(config)?;
    let mut extra = Map::new();
    extra.insert("generator".into(), json!("toy"));
    extra.insert("seed".into(), json!(config.seed()));
    extra.insert("toy".into(), serde_json::to_value(&config.toy).expect("serializable"));
    let header = dataset::header_for(&toy::toy_alphabet(), extra);
    let mut bytes = Vec::new();
    dataset::write_header(&mut bytes, &header).expect("in-memory write");
    for r in &records {
        dataset::write_record(&mut bytes, r).expect("in-memory write");
    }
    write_output(config.out.as_deref(), &bytes)
}

fn run_toy_exact(config: &ExperimentConfig) -> Result<()> {
    let (kx, _) = config.toy_kernels();
    let sigma = match config.toy_sigma() {
        Bandwidth::Fixed(s) => s,
        Bandwidth::Median => {
            return Err(CliError::Usage("closed forms need a fixed --sigma-p".into()))
        }
    };
    let toy = ToyConfig {
        kx,
        sigma,
        ..config.toy.clone()
    };
    let usage = |e: acmmd::Error| CliError::Usage(e.to_string());
    let curve = config
        .sweep
        .delta_p_values
        .iter()
        .map(|&dp| {
            let c = toy.with_delta_p(dp);
            Ok(json!({
                "delta_p": dp,
                "acmmd_sq": toy::acmmd_sq_exact(&c).map_err(usage)?,
                "acmmd_rel_sq": toy::acmmd_rel_sq_exact(&c).map_err(usage)?,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = json!({
        "command": "toy-exact",
        "toy": toy,
        "acmmd_sq": toy::acmmd_sq_exact(&toy).map_err(usage)?,
        "acmmd_rel_sq": toy::acmmd_rel_sq_exact(&toy).map_err(usage)?,
        "constant": toy::acmmd_constant(&toy).map_err(usage)?,
        "rel_constant": toy::acmmd_rel_constant(&toy).map_err(usage)?,
        "curve": curve,
    });
    write_output(config.out.as_deref(), &to_json_bytes(&report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clopper_pearson_reference_values() {
        let (lo, hi) = clopper_pearson(0, 10);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.3084971).abs() < 1e-6);
        let (lo, hi) = clopper_pearson(5, 10);
        assert!((lo - 0.1870860).abs() < 1e-6, "{lo}");
        assert!((hi - 0.8129140).abs() < 1e-6, "{hi}");
        assert_eq!(clopper_pearson(10, 10).1, 1.0);
    }

    #[test]
    fn subsample_is_without_replacement_and_checked() {
        let members: Vec<usize> = (10..30).collect();
        let idx = subsample(&members, 20, 1, 0, "g").unwrap();
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, members);
        assert_eq!(idx, subsample(&members, 20, 1, 0, "g").unwrap());
        assert!(matches!(subsample(&members, 21, 1, 0, "g"), Err(CliError::Data(_))));
    }
}
