//! Synthetic two-letter sequence model with closed-form population values.
//!
//! Given `p ∈ (0, 1/2)`, the data conditional emits `A` and `B` with
//! probability `p` each and stops with probability `1 - 2p`, independently at
//! every position. The model conditional perturbs only the first token:
//! `A` with `p - Δp`, `B` with `p + Δp`, stop with `1 - 2p`. Under the
//! terminal-padded exponentiated Hamming kernel the population ACMMD², the
//! MMD² between two model conditionals and the reliability ACMMD² all have
//! closed forms, used here as ground truth for the estimators.

use std::sync::{Arc, LazyLock};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{Outcome, Triplet};
use crate::kernels::{Item, ItemRef, KernelSpec};
use crate::reliability::ReliabilityRecord;
use crate::sequence::{Alphabet, Sequence};

const CODE_A: u16 = 1;
const CODE_B: u16 = 2;

static TOY_ALPHABET: LazyLock<Arc<Alphabet>> = LazyLock::new(|| {
    Arc::new(Alphabet::new(&["A", "B", "STOP"], Some("STOP")).expect("valid toy alphabet"))
});

/// `{A, B}` with terminal `STOP`.
pub fn toy_alphabet() -> Arc<Alphabet> {
    Arc::clone(&TOY_ALPHABET)
}

/// Discrete prior over the parameter `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct ToyPrior {
    atoms: Vec<(f64, f64)>,
}

impl ToyPrior {
    /// Atoms as `(p, weight)`; weights must be positive and sum to one.
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidParameter("prior needs at least one atom".into()));
        }
        for &(p, w) in &atoms {
            check_p(p)?;
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidParameter(format!("atom weight must be positive, got {w}")));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("atom weights sum to {total}, not 1")));
        }
        Ok(ToyPrior { atoms })
    }

    pub fn single(p: f64) -> Result<Self> {
        ToyPrior::new(vec![(p, 1.0)])
    }

    /// `m` evenly spaced atoms on `[low, high]` with equal weights.
    pub fn uniform_grid(m: usize, low: f64, high: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter("grid needs at least one atom".into()));
        }
        if m == 1 {
            return ToyPrior::single(low);
        }
        let step = (high - low) / (m - 1) as f64;
        let w = 1.0 / m as f64;
        ToyPrior::new((0..m).map(|i| (low + step * i as f64, w)).collect())
    }

    /// Five equally weighted atoms evenly spaced on `[0.3, 0.45]`.
    pub fn default_grid() -> Self {
        ToyPrior::uniform_grid(5, 0.3, 0.45).expect("valid default grid")
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn min_p(&self) -> f64 {
        self.atoms.iter().map(|a| a.0).fold(f64::INFINITY, f64::min)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for &(p, w) in &self.atoms {
            acc += w;
            if u < acc {
                return p;
            }
        }
        self.atoms[self.atoms.len() - 1].0
    }
}

impl TryFrom<Vec<(f64, f64)>> for ToyPrior {
    type Error = Error;
    fn try_from(atoms: Vec<(f64, f64)>) -> Result<Self> {
        ToyPrior::new(atoms)
    }
}

impl From<ToyPrior> for Vec<(f64, f64)> {
    fn from(p: ToyPrior) -> Self {
        p.atoms
    }
}

fn check_p(p: f64) -> Result<()> {
    if p > 0.0 && p < 0.5 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("p must lie in (0, 0.5), got {p}")))
    }
}

fn check_perturbation(p: f64, delta_p: f64) -> Result<()> {
    check_p(p)?;
    if !(delta_p >= 0.0 && p - delta_p >= 0.0 && p + delta_p <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "perturbation {delta_p} invalid for p = {p}"
        )));
    }
    Ok(())
}

/// Parameters of the synthetic experiment. Missing fields deserialize to
/// the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub prior: ToyPrior,
    pub lambda: f64,
    pub delta_p: f64,
    /// Bandwidth of the distribution kernel used by the reliability statistic.
    pub sigma: f64,
    /// Kernel on the scalar input `p`.
    pub kx: KernelSpec,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            prior: ToyPrior::default_grid(),
            lambda: 1.0,
            delta_p: 0.25,
            sigma: 1.0,
            kx: KernelSpec::gaussian(1.0),
        }
    }
}

impl ToyConfig {
    pub fn with_delta_p(&self, delta_p: f64) -> Self {
        ToyConfig {
            delta_p,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.delta_p >= 0.0 && self.delta_p <= self.prior.min_p()) {
            return Err(Error::InvalidParameter(format!(
                "delta_p must lie in [0, {}], got {}",
                self.prior.min_p(),
                self.delta_p
            )));
        }
        self.kx.validate()
    }

    /// Output kernel: the terminal-padded exponentiated Hamming kernel.
    pub fn ky(&self) -> KernelSpec {
        KernelSpec::exp_hamming(self.lambda)
    }

    /// `n` triplets `(p, y ~ P(·|p), ỹ ~ Q(·|p))` with `p` drawn from the prior.
    pub fn sample_triplets(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<Triplet>> {
        self.validate()?;
        let alpha = toy_alphabet();
        Ok((0..n)
            .map(|_| {
                let p = self.prior.sample(rng);
                let y = draw(&alpha, p, 0.0, rng);
                let m = draw(&alpha, p, self.delta_p, rng);
                Triplet::new(Item::Vector(vec![p]), y, m)
            })
            .collect())
    }

    /// `n` reliability records: `y ~ P(·|p)`, while `ỹ` and the `r` model
    /// samples come from `Q(·|p)`. Also returns each record's `p`.
    pub fn sample_reliability(
        &self,
        n: usize,
        r: usize,
        rng: &mut impl Rng,
    ) -> Result<(Vec<ReliabilityRecord>, Vec<f64>)> {
        self.validate()?;
        let alpha = toy_alphabet();
        let mut ps = Vec::with_capacity(n);
        let records = (0..n)
            .map(|_| {
                let p = self.prior.sample(rng);
                ps.push(p);
                let y = draw(&alpha, p, 0.0, rng);
                let m = draw(&alpha, p, self.delta_p, rng);
                let samples = (0..r)
                    .map(|_| Outcome::new(draw(&alpha, p, self.delta_p, rng)))
                    .collect();
                ReliabilityRecord::new(Outcome::new(y), Outcome::new(m), samples)
            })
            .collect();
        Ok((records, ps))
    }
}

fn draw(alpha: &Arc<Alphabet>, p: f64, delta_first: f64, rng: &mut impl Rng) -> Sequence {
    let mut codes = Vec::new();
    let mut p_a = p - delta_first;
    loop {
        let u: f64 = rng.gen();
        if u < p_a {
            codes.push(CODE_A);
        } else if u < 2.0 * p {
            codes.push(CODE_B);
        } else {
            break;
        }
        p_a = p;
    }
    Sequence::from_codes(alpha, codes).expect("toy codes are valid")
}

/// Draws from the data conditional: `A`, `B` with probability `p` each until
/// `STOP` (probability `1 - 2p`).
pub fn sample_data_seq(p: f64, rng: &mut impl Rng) -> Result<Sequence> {
    check_p(p)?;
    Ok(draw(&TOY_ALPHABET, p, 0.0, rng))
}

/// Draws from the model conditional, whose first token is `A` with
/// probability `p - Δp` and `B` with `p + Δp`.
pub fn sample_model_seq(p: f64, delta_p: f64, rng: &mut impl Rng) -> Result<Sequence> {
    check_perturbation(p, delta_p)?;
    Ok(draw(&TOY_ALPHABET, p, delta_p, rng))
}

fn denominators(p: f64, q: f64, lambda: f64) -> Result<(f64, f64, f64)> {
    let e = (-lambda).exp();
    let joint = 1.0 - 4.0 * p * q * (1.0 + e) / 2.0;
    let tail_p = 1.0 - 2.0 * p * e;
    let tail_q = 1.0 - 2.0 * q * e;
    if !(joint > 0.0 && tail_p > 0.0 && tail_q > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "closed form undefined at p = {p}, p' = {q}, lambda = {lambda}"
        )));
    }
    Ok((joint, tail_p, tail_q))
}

/// `2p'e/(1 - 2p'e) + 2pe/(1 - 2pe) + 1` with `e = exp(-lambda)`.
fn tail_bracket(p: f64, q: f64, lambda: f64, tail_p: f64, tail_q: f64) -> f64 {
    let e = (-lambda).exp();
    2.0 * q * e / tail_q + 2.0 * p * e / tail_p + 1.0
}

/// Contribution of the sequences that run past their first token:
/// `C(p, p') = (1-2p)(1-2p') 4pp' / (1 - 4pp'(1+e)/2) × bracket`.
pub fn continuation_factor(p: f64, q: f64, lambda: f64) -> Result<f64> {
    let (joint, tp, tq) = denominators(p, q, lambda)?;
    Ok((1.0 - 2.0 * p) * (1.0 - 2.0 * q) * 4.0 * p * q / joint * tail_bracket(p, q, lambda, tp, tq))
}

/// Contribution of pairs where at least one sequence is empty:
/// `T⁰(p, p') = (1-2p)(1-2p') × bracket`.
pub fn empty_prefix_term(p: f64, q: f64, lambda: f64) -> Result<f64> {
    let (_, tp, tq) = denominators(p, q, lambda)?;
    Ok((1.0 - 2.0 * p) * (1.0 - 2.0 * q) * tail_bracket(p, q, lambda, tp, tq))
}

/// Expected first-token kernel value between two model draws given both
/// are non-empty: `(2pp' + 2Δp²)/(4pp') (1 - e) + e`.
pub fn first_token_agreement(p: f64, q: f64, lambda: f64, delta_p: f64) -> f64 {
    let e = (-lambda).exp();
    (2.0 * p * q + 2.0 * delta_p * delta_p) / (4.0 * p * q) * (1.0 - e) + e
}

/// `E[k(Ỹ, Ỹ')]` for `Ỹ ~ Q(·|p)`, `Ỹ' ~ Q(·|p')`.
pub fn model_cross_expectation(p: f64, q: f64, lambda: f64, delta_p: f64) -> Result<f64> {
    Ok(continuation_factor(p, q, lambda)? * first_token_agreement(p, q, lambda, delta_p)
        + empty_prefix_term(p, q, lambda)?)
}

/// Exact MMD² between the model conditionals at `p` and `p'` under the
/// exponentiated Hamming kernel with decay `lambda`.
pub fn mmd_sq_models_exact(p: f64, q: f64, lambda: f64, delta_p: f64) -> Result<f64> {
    check_perturbation(p, delta_p)?;
    check_perturbation(q, delta_p)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    if p == q {
        return Ok(0.0);
    }
    Ok(model_cross_expectation(p, p, lambda, delta_p)?
        + model_cross_expectation(q, q, lambda, delta_p)?
        - 2.0 * model_cross_expectation(p, q, lambda, delta_p)?)
}

/// Per-pair factor multiplying `Δp²` in the population ACMMD², before the
/// input kernel: `2(1 - e)(1-2p)(1-2p') / (1 - 4pp'(1+e)/2) × bracket`.
fn pair_factor(p: f64, q: f64, lambda: f64) -> Result<f64> {
    let (joint, tp, tq) = denominators(p, q, lambda)?;
    let e = (-lambda).exp();
    Ok(2.0 * (1.0 - e) * (1.0 - 2.0 * p) * (1.0 - 2.0 * q) / joint * tail_bracket(p, q, lambda, tp, tq))
}

fn weighted_pair_sum(config: &ToyConfig, kernel: impl Fn(f64, f64) -> Result<f64>) -> Result<f64> {
    config.validate()?;
    let atoms = config.prior.atoms();
    let mut total = 0.0;
    for &(p, wp) in atoms {
        for &(q, wq) in atoms {
            total += wp * wq * kernel(p, q)? * pair_factor(p, q, config.lambda)?;
        }
    }
    Ok(total)
}

/// The constant `C` in `ACMMD² = C Δp²`.
pub fn acmmd_constant(config: &ToyConfig) -> Result<f64> {
    weighted_pair_sum(config, |p, q| {
        config.kx.eval(ItemRef::Vector(&[p]), ItemRef::Vector(&[q]))
    })
}

/// Population ACMMD² (squared scale; the unsquared value is its square root).
pub fn acmmd_sq_exact(config: &ToyConfig) -> Result<f64> {
    Ok(acmmd_constant(config)? * config.delta_p * config.delta_p)
}

/// The constant in `ACMMD-Rel² = C_rel Δp²` with the distribution kernel
/// `exp(-MMD²(q_p, q_p') / (2σ²))`.
pub fn acmmd_rel_constant(config: &ToyConfig) -> Result<f64> {
    let s2 = 2.0 * config.sigma * config.sigma;
    weighted_pair_sum(config, |p, q| {
        Ok((-mmd_sq_models_exact(p, q, config.lambda, config.delta_p)? / s2).exp())
    })
}

pub fn acmmd_rel_sq_exact(config: &ToyConfig) -> Result<f64> {
    Ok(acmmd_rel_constant(config)? * config.delta_p * config.delta_p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn prior_validation() {
        assert!(ToyPrior::new(vec![(0.5, 1.0)]).is_err());
        assert!(ToyPrior::new(vec![(0.0, 1.0)]).is_err());
        assert!(ToyPrior::new(vec![(0.3, 0.5)]).is_err());
        assert!(ToyPrior::new(vec![(0.3, 0.5), (0.4, -0.5)]).is_err());
        let g = ToyPrior::default_grid();
        let ps: Vec<f64> = g.atoms().iter().map(|a| a.0).collect();
        assert_eq!(ps.len(), 5);
        assert_relative_eq!(ps[0], 0.3);
        assert_relative_eq!(ps[4], 0.45, epsilon = 1e-15);
        assert_relative_eq!(ps[1], 0.3375, epsilon = 1e-15);
    }

    #[test]
    fn config_validation() {
        let c = ToyConfig::default();
        assert!(c.validate().is_ok());
        assert!(c.with_delta_p(0.31).validate().is_err());
        assert!(c.with_delta_p(-0.01).validate().is_err());
    }

    #[test]
    fn samplers_are_deterministic_and_validated() {
        let mut a = ChaCha8Rng::seed_from_u64(4);
        let mut b = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            assert_eq!(sample_data_seq(0.4, &mut a).unwrap(), sample_data_seq(0.4, &mut b).unwrap());
        }
        assert!(sample_data_seq(0.5, &mut a).is_err());
        assert!(sample_model_seq(0.2, 0.25, &mut a).is_err());
    }

    #[test]
    fn exact_values_vanish_without_perturbation() {
        let c = ToyConfig::default().with_delta_p(0.0);
        assert_eq!(acmmd_sq_exact(&c).unwrap(), 0.0);
        assert_eq!(acmmd_rel_sq_exact(&c).unwrap(), 0.0);
    }

    #[test]
    fn exact_values_scale_quadratically() {
        let c = ToyConfig::default();
        let r = acmmd_sq_exact(&c.with_delta_p(0.2)).unwrap() / acmmd_sq_exact(&c.with_delta_p(0.1)).unwrap();
        assert_relative_eq!(r, 4.0, max_relative = 1e-12);
        let r = acmmd_rel_sq_exact(&c.with_delta_p(0.2)).unwrap()
            / acmmd_rel_sq_exact(&c.with_delta_p(0.1)).unwrap();
        // the distribution kernel itself depends on Δp, so only the single-atom
        // case is exactly quadratic
        assert!(r > 0.0);
        let single = ToyConfig {
            prior: ToyPrior::single(0.4).unwrap(),
            ..ToyConfig::default()
        };
        let r = acmmd_rel_sq_exact(&single.with_delta_p(0.2)).unwrap()
            / acmmd_rel_sq_exact(&single.with_delta_p(0.1)).unwrap();
        assert_relative_eq!(r, 4.0, max_relative = 1e-12);
    }

    #[test]
    fn model_mmd_is_symmetric_and_zero_on_diagonal() {
        assert_eq!(mmd_sq_models_exact(0.4, 0.4, 1.0, 0.25).unwrap(), 0.0);
        let a = mmd_sq_models_exact(0.35, 0.45, 1.0, 0.25).unwrap();
        let b = mmd_sq_models_exact(0.45, 0.35, 1.0, 0.25).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-14);
        assert!(a > 0.0);
    }

    #[test]
    fn input_kernel_must_have_fixed_bandwidth() {
        let c = ToyConfig {
            kx: "gaussian:sigma=median".parse().unwrap(),
            ..ToyConfig::default()
        };
        assert!(acmmd_sq_exact(&c).is_err());
    }

    #[test]
    fn prior_converts_from_atom_list() {
        let p = ToyPrior::try_from(vec![(0.3, 0.25), (0.4, 0.75)]).unwrap();
        assert_eq!(Vec::<(f64, f64)>::from(p.clone()), vec![(0.3, 0.25), (0.4, 0.75)]);
        assert!(ToyPrior::try_from(vec![(0.3, 0.25)]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let draws: Vec<f64> = (0..4000).map(|_| p.sample(&mut rng)).collect();
        let frac = draws.iter().filter(|&&x| x == 0.4).count() as f64 / 4000.0;
        assert!((frac - 0.75).abs() < 0.03, "{frac}");
    }
}
