//! Experiment configuration: a JSON document whose fields the command-line
//! flags override.

use std::path::{Path, PathBuf};

use acmmd::toy::ToyConfig;
use acmmd::{Bandwidth, KernelSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Estimate,
    Test,
    RelEstimate,
    RelTest,
    Sweep,
    ToyGenerate,
    ToyExact,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Estimate => "estimate",
            Mode::Test => "test",
            Mode::RelEstimate => "rel-estimate",
            Mode::RelTest => "rel-test",
            Mode::Sweep => "sweep",
            Mode::ToyGenerate => "toy-generate",
            Mode::ToyExact => "toy-exact",
        }
    }

    pub fn is_reliability(self) -> bool {
        matches!(self, Mode::RelEstimate | Mode::RelTest)
    }
}

/// Grid of a simulation or subsampling sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub n_values: Vec<usize>,
    /// Perturbations of the synthetic model (ignored for dataset sweeps).
    pub delta_p_values: Vec<f64>,
    pub n_seeds: usize,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            n_values: vec![100, 1000],
            delta_p_values: vec![0.0, 0.25],
            n_seeds: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Option<Mode>,
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Input kernel; defaults to a median-bandwidth Gaussian for datasets and
    /// to the synthetic model's kernel otherwise.
    pub kernel_x: Option<KernelSpec>,
    /// Output kernel; defaults to `exp-hamming:lambda=1` for datasets and to
    /// the synthetic model's `lambda` otherwise.
    pub kernel_y: Option<KernelSpec>,
    /// Bandwidth of the distribution kernel of the reliability statistic.
    pub sigma_p: Option<Bandwidth>,
    pub alpha: f64,
    pub bootstrap: usize,
    /// Model samples per record for synthetic reliability data; defaults to
    /// `max(16, ⌈√N⌉)`.
    pub inner_samples: Option<usize>,
    pub seed: Option<u64>,
    pub group_by: Option<String>,
    /// Records drawn without replacement from each group before estimating.
    pub subsample: Option<usize>,
    /// Run the reliability statistic in sweeps.
    pub reliability: bool,
    pub sweep: SweepGrid,
    pub toy: ToyConfig,
    /// Number of records written by `toy-generate`.
    pub n: Option<usize>,
    pub threads: Option<usize>,
    /// Record wall-clock times in sweep rows (makes output irreproducible).
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: None,
            input: None,
            out: None,
            kernel_x: None,
            kernel_y: None,
            sigma_p: None,
            alpha: 0.05,
            bootstrap: 100,
            inner_samples: None,
            seed: None,
            group_by: None,
            subsample: None,
            reliability: false,
            sweep: SweepGrid::default(),
            toy: ToyConfig::default(),
            n: None,
            threads: None,
            timing: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Flags {
    /// JSON configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// JSON-lines dataset.
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Input kernel, e.g. `gaussian:sigma=median`.
    #[arg(long, value_name = "SPEC")]
    pub kernel_x: Option<KernelSpec>,
    /// Output kernel, e.g. `exp-hamming:lambda=1`.
    #[arg(long, value_name = "SPEC")]
    pub kernel_y: Option<KernelSpec>,
    /// Distribution-kernel bandwidth: a number or `median`.
    #[arg(long, value_name = "V|median")]
    pub sigma_p: Option<Bandwidth>,
    #[arg(long, value_name = "F")]
    pub alpha: Option<f64>,
    /// Number of wild-bootstrap replicates.
    #[arg(long, value_name = "B")]
    pub bootstrap: Option<usize>,
    /// Model samples per record for synthetic reliability data.
    #[arg(long, value_name = "R")]
    pub inner_samples: Option<usize>,
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output file (stdout when absent).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Record key whose values split the dataset into groups.
    #[arg(long, value_name = "KEY")]
    pub group_by: Option<String>,
    /// Records drawn without replacement from each group.
    #[arg(long, value_name = "N")]
    pub subsample: Option<usize>,
    /// Sweep sample sizes (comma separated).
    #[arg(long, value_name = "N,...", value_delimiter = ',')]
    pub n_values: Option<Vec<usize>>,
    /// Sweep perturbations (comma separated).
    #[arg(long, value_name = "F,...", value_delimiter = ',')]
    pub delta_p_values: Option<Vec<f64>>,
    /// Seeds per sweep grid point.
    #[arg(long, value_name = "N")]
    pub n_seeds: Option<usize>,
    /// Use the reliability statistic in sweeps.
    #[arg(long)]
    pub reliability: bool,
    /// Perturbation of the synthetic model.
    #[arg(long, value_name = "F")]
    pub delta_p: Option<f64>,
    /// Decay of the synthetic model's output kernel.
    #[arg(long, value_name = "F")]
    pub lambda: Option<f64>,
    /// Records written by `toy-generate`.
    #[arg(long, value_name = "N")]
    pub n: Option<usize>,
    /// Worker threads (defaults to all cores).
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
    /// Record wall-clock times in sweep rows.
    #[arg(long)]
    pub timing: bool,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| ConfigError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Loads the config file named by `flags` (if any), applies the flags and
    /// validates the result for `mode`.
    pub fn resolve(mode: Mode, flags: &Flags) -> Result<Self, ConfigError> {
        let mut c = match &flags.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(m) = c.mode {
            if m != mode {
                return Err(ConfigError::Invalid(format!(
                    "config file is for mode {:?} but the command is {:?}",
                    m.name(),
                    mode.name()
                )));
            }
        }
        c.mode = Some(mode);
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = &flags.$field {
                    c.$field = Some(v.clone());
                }
            )*};
        }
        take!(input, out, kernel_x, kernel_y, sigma_p, inner_samples, seed, group_by, subsample, n, threads);
        if let Some(v) = flags.alpha {
            c.alpha = v;
        }
        if let Some(v) = flags.bootstrap {
            c.bootstrap = v;
        }
        if let Some(v) = &flags.n_values {
            c.sweep.n_values = v.clone();
        }
        if let Some(v) = &flags.delta_p_values {
            c.sweep.delta_p_values = v.clone();
        }
        if let Some(v) = flags.n_seeds {
            c.sweep.n_seeds = v;
        }
        if let Some(v) = flags.delta_p {
            c.toy.delta_p = v;
        }
        if let Some(v) = flags.lambda {
            c.toy.lambda = v;
        }
        c.reliability |= flags.reliability;
        c.timing |= flags.timing;
        c.validate(mode)?;
        Ok(c)
    }

    pub fn validate(&self, mode: Mode) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.seed.is_none() && !matches!(mode, Mode::ToyExact | Mode::Estimate | Mode::RelEstimate) {
            return bad("a seed is required (--seed or \"seed\" in the config file)".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.bootstrap == 0 {
            return bad("bootstrap must be positive".into());
        }
        if matches!(self.inner_samples, Some(r) if r < 2) {
            return bad("inner_samples must be at least 2".into());
        }
        if matches!(self.subsample, Some(n) if n < 2) {
            return bad("subsample must be at least 2".into());
        }
        if matches!(self.threads, Some(0)) {
            return bad("threads must be positive".into());
        }
        for k in [&self.kernel_x, &self.kernel_y].into_iter().flatten() {
            k.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        let needs_input = matches!(mode, Mode::Estimate | Mode::Test | Mode::RelEstimate | Mode::RelTest);
        if needs_input && self.input.is_none() {
            return bad(format!("{} needs --input", mode.name()));
        }
        if self.group_by.is_some() && self.input.is_none() {
            return bad("--group-by needs --input".into());
        }
        if mode == Mode::Sweep {
            if self.sweep.n_values.is_empty() || self.sweep.n_seeds == 0 {
                return bad("sweep grids must be non-empty".into());
            }
            if self.input.is_none() && self.sweep.delta_p_values.is_empty() {
                return bad("sweep grids must be non-empty".into());
            }
            if let Some(&n) = self.sweep.n_values.iter().find(|&&n| n < 2) {
                return bad(format!("sweep sample sizes must be at least 2, got {n}"));
            }
        }
        if matches!(mode, Mode::Sweep | Mode::ToyGenerate | Mode::ToyExact) && self.input.is_none() {
            self.toy.validate().map_err(|e| ConfigError::Invalid(format!("toy: {e}")))?;
            for &dp in &self.sweep.delta_p_values {
                self.toy
                    .with_delta_p(dp)
                    .validate()
                    .map_err(|e| ConfigError::Invalid(format!("toy: {e}")))?;
            }
        }
        if mode == Mode::ToyGenerate && self.n.is_none() {
            return bad("toy-generate needs --n".into());
        }
        Ok(())
    }

    /// Kernels used on synthetic data.
    pub fn toy_kernels(&self) -> (KernelSpec, KernelSpec) {
        (
            self.kernel_x.clone().unwrap_or_else(|| self.toy.kx.clone()),
            self.kernel_y.clone().unwrap_or_else(|| self.toy.ky()),
        )
    }

    /// Kernels used on a dataset.
    pub fn data_kernels(&self) -> (KernelSpec, KernelSpec) {
        (
            self.kernel_x
                .clone()
                .unwrap_or(KernelSpec::Gaussian { sigma: Bandwidth::Median }),
            self.kernel_y.clone().unwrap_or_else(|| KernelSpec::exp_hamming(1.0)),
        )
    }

    pub fn toy_sigma(&self) -> Bandwidth {
        self.sigma_p.unwrap_or(Bandwidth::Fixed(self.toy.sigma))
    }

    pub fn data_sigma(&self) -> Bandwidth {
        self.sigma_p.unwrap_or(Bandwidth::Median)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}
