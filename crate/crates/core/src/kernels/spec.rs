//! Kernel specifications and their compact string form.
//!
//! ```text
//! exp-hamming:lambda=1.0:mode=padded
//! tilted-exp-hamming:lambda=0.5
//! gaussian:sigma=median
//! mean-gaussian:sigma=2.5
//! dist-expmmd:sigma=1.0:inner=exp-hamming:lambda=1.0
//! ```
//!
//! For `dist-expmmd` the `inner=` field must come last; everything after it
//! is parsed as the inner spec.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// How the Hamming distance treats sequences of different lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HammingMode {
    /// Both sequences are padded with the terminal symbol.
    #[default]
    TerminalPadded,
    /// Mismatches over the common prefix plus the length difference.
    LengthPenalty,
}

impl HammingMode {
    fn as_str(self) -> &'static str {
        match self {
            HammingMode::TerminalPadded => "padded",
            HammingMode::LengthPenalty => "length-penalty",
        }
    }
}

/// A kernel bandwidth, either fixed or chosen by the median heuristic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    Median,
}

impl Bandwidth {
    pub fn fixed(self) -> Option<f64> {
        match self {
            Bandwidth::Fixed(s) => Some(s),
            Bandwidth::Median => None,
        }
    }
}

impl fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bandwidth::Fixed(s) => write!(f, "{s:?}"),
            Bandwidth::Median => f.write_str("median"),
        }
    }
}

impl FromStr for Bandwidth {
    type Err = Error;

    /// `median` or a positive number.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "median" {
            return Ok(Bandwidth::Median);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(Bandwidth::Fixed(v)),
            _ => Err(Error::InvalidParameter(format!(
                "bandwidth must be a positive number or `median`, got {s:?}"
            ))),
        }
    }
}

impl Serialize for Bandwidth {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Bandwidth::Fixed(v) => serializer.serialize_f64(*v),
            Bandwidth::Median => serializer.serialize_str("median"),
        }
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct Visitor;
        impl serde::de::Visitor<'_> for Visitor {
            type Value = Bandwidth;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a positive number or \"median\"")
            }
            fn visit_f64<E: serde::de::Error>(self, v: f64) -> std::result::Result<Bandwidth, E> {
                v.to_string().parse().map_err(E::custom)
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> std::result::Result<Bandwidth, E> {
                self.visit_f64(v as f64)
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> std::result::Result<Bandwidth, E> {
                self.visit_f64(v as f64)
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> std::result::Result<Bandwidth, E> {
                v.parse().map_err(E::custom)
            }
        }
        deserializer.deserialize_any(Visitor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    /// `exp(-lambda * d_H(y, y'))` on sequences.
    ExpHamming { lambda: f64, mode: HammingMode },
    /// `exp(-lambda * d_H(y, y')) / (|y| |y'|)` on non-empty sequences.
    TiltedExpHamming { lambda: f64, mode: HammingMode },
    /// `exp(-|u - v|^2 / (2 sigma^2))` on vectors (scalars are 1-vectors).
    Gaussian { sigma: Bandwidth },
    /// Gaussian kernel on mean-pooled per-position embeddings.
    MeanEmbeddingGaussian { sigma: Bandwidth },
    /// `exp(-MMD^2(P, P') / (2 sigma^2))` on sample sets, with the MMD taken
    /// under `inner`.
    DistExpMmd { sigma: Bandwidth, inner: Box<KernelSpec> },
}

impl KernelSpec {
    pub fn exp_hamming(lambda: f64) -> Self {
        KernelSpec::ExpHamming {
            lambda,
            mode: HammingMode::TerminalPadded,
        }
    }

    pub fn gaussian(sigma: f64) -> Self {
        KernelSpec::Gaussian {
            sigma: Bandwidth::Fixed(sigma),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::ExpHamming { .. } => "exp-hamming",
            KernelSpec::TiltedExpHamming { .. } => "tilted-exp-hamming",
            KernelSpec::Gaussian { .. } => "gaussian",
            KernelSpec::MeanEmbeddingGaussian { .. } => "mean-gaussian",
            KernelSpec::DistExpMmd { .. } => "dist-expmmd",
        }
    }

    /// True for kernels taking token sequences.
    pub fn is_sequence_kernel(&self) -> bool {
        matches!(
            self,
            KernelSpec::ExpHamming { .. } | KernelSpec::TiltedExpHamming { .. }
        )
    }

    /// True for kernels taking real vectors.
    pub fn is_vector_kernel(&self) -> bool {
        matches!(
            self,
            KernelSpec::Gaussian { .. } | KernelSpec::MeanEmbeddingGaussian { .. }
        )
    }

    pub fn bandwidth(&self) -> Option<Bandwidth> {
        match self {
            KernelSpec::Gaussian { sigma }
            | KernelSpec::MeanEmbeddingGaussian { sigma }
            | KernelSpec::DistExpMmd { sigma, .. } => Some(*sigma),
            _ => None,
        }
    }

    /// Copy of this spec with its bandwidth replaced.
    pub fn with_bandwidth(&self, bw: Bandwidth) -> Self {
        match self {
            KernelSpec::Gaussian { .. } => KernelSpec::Gaussian { sigma: bw },
            KernelSpec::MeanEmbeddingGaussian { .. } => {
                KernelSpec::MeanEmbeddingGaussian { sigma: bw }
            }
            KernelSpec::DistExpMmd { inner, .. } => KernelSpec::DistExpMmd {
                sigma: bw,
                inner: inner.clone(),
            },
            other => other.clone(),
        }
    }

    /// Checks parameter ranges. `Median` bandwidths are accepted here; they
    /// must be resolved before evaluation.
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidKernelSpec {
            spec: self.to_string(),
            reason,
        };
        match self {
            KernelSpec::ExpHamming { lambda, .. } | KernelSpec::TiltedExpHamming { lambda, .. } => {
                if !(lambda.is_finite() && *lambda > 0.0) {
                    return Err(bad(format!("lambda must be positive, got {lambda}")));
                }
            }
            KernelSpec::Gaussian { sigma } | KernelSpec::MeanEmbeddingGaussian { sigma } => {
                check_bandwidth(*sigma).map_err(bad)?;
            }
            KernelSpec::DistExpMmd { sigma, inner } => {
                check_bandwidth(*sigma).map_err(bad)?;
                if !inner.is_sequence_kernel() {
                    return Err(bad("inner kernel must be a sequence kernel".into()));
                }
                inner.validate()?;
            }
        }
        Ok(())
    }
}

fn check_bandwidth(bw: Bandwidth) -> std::result::Result<(), String> {
    match bw {
        Bandwidth::Fixed(s) if !(s.is_finite() && s > 0.0) => {
            Err(format!("sigma must be positive, got {s}"))
        }
        _ => Ok(()),
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::ExpHamming { lambda, mode } | KernelSpec::TiltedExpHamming { lambda, mode } => {
                write!(f, "{}:lambda={lambda:?}:mode={}", self.name(), mode.as_str())
            }
            KernelSpec::Gaussian { sigma } | KernelSpec::MeanEmbeddingGaussian { sigma } => {
                write!(f, "{}:sigma={sigma}", self.name())
            }
            KernelSpec::DistExpMmd { sigma, inner } => {
                write!(f, "dist-expmmd:sigma={sigma}:inner={inner}")
            }
        }
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |reason: &str| Error::InvalidKernelSpec {
            spec: s.to_string(),
            reason: reason.to_string(),
        };
        let s = s.trim();
        let (kind, mut rest) = match s.split_once(':') {
            Some((k, r)) => (k, r),
            None => (s, ""),
        };

        let mut lambda = None;
        let mut mode = HammingMode::TerminalPadded;
        let mut sigma = None;
        let mut inner = None;
        while !rest.is_empty() {
            let (field, tail) = match rest.split_once(':') {
                Some((f, t)) => (f, t),
                None => (rest, ""),
            };
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| bad("expected key=value field"))?;
            match key {
                "lambda" => {
                    lambda = Some(value.parse::<f64>().map_err(|_| bad("lambda is not a number"))?)
                }
                "sigma" => {
                    sigma = Some(if value == "median" {
                        Bandwidth::Median
                    } else {
                        Bandwidth::Fixed(value.parse().map_err(|_| bad("sigma is not a number"))?)
                    })
                }
                "mode" => {
                    mode = match value {
                        "padded" | "terminal-padded" => HammingMode::TerminalPadded,
                        "length-penalty" | "penalty" => HammingMode::LengthPenalty,
                        _ => return Err(bad("mode must be padded or length-penalty")),
                    }
                }
                "inner" => {
                    let inner_str = if tail.is_empty() {
                        value.to_string()
                    } else {
                        format!("{value}:{tail}")
                    };
                    inner = Some(inner_str.parse::<KernelSpec>()?);
                    break;
                }
                _ => return Err(bad(&format!("unknown field {key:?}"))),
            }
            rest = tail;
        }

        let has_inner = inner.is_some();
        let spec = match kind {
            "exp-hamming" => KernelSpec::ExpHamming {
                lambda: lambda.unwrap_or(1.0),
                mode,
            },
            "tilted-exp-hamming" => KernelSpec::TiltedExpHamming {
                lambda: lambda.unwrap_or(1.0),
                mode,
            },
            "gaussian" => KernelSpec::Gaussian {
                sigma: sigma.unwrap_or(Bandwidth::Median),
            },
            "mean-gaussian" | "mean-embedding-gaussian" => KernelSpec::MeanEmbeddingGaussian {
                sigma: sigma.unwrap_or(Bandwidth::Median),
            },
            "dist-expmmd" => KernelSpec::DistExpMmd {
                sigma: sigma.unwrap_or(Bandwidth::Median),
                inner: Box::new(inner.ok_or_else(|| bad("dist-expmmd needs inner=<spec>"))?),
            },
            _ => return Err(bad("unknown kernel kind")),
        };
        if has_inner && !matches!(spec, KernelSpec::DistExpMmd { .. }) {
            return Err(bad("only dist-expmmd takes an inner kernel"));
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl Serialize for KernelSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for KernelSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
