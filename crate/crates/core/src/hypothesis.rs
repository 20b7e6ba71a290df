//! Wild-bootstrap null sampling, the randomized quantile decision rule, and
//! the full ACMMD goodness-of-fit test.

use rand::{Rng, RngCore};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{acmmd_sq, h_matrix, pair_mean, sigma_h_sq, upper_sum, HMatrix, Triplet};
use crate::kernels::KernelSpec;
use crate::parallel::map_indexed;
use crate::rng::{domain, stream};

/// `B` wild-bootstrap replicates of the statistic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapDraws {
    pub stats: Vec<f64>,
    pub seed: u64,
}

impl BootstrapDraws {
    pub fn b(&self) -> usize {
        self.stats.len()
    }
}

/// `N` independent Rademacher signs as `±1.0`.
pub fn rademacher_signs(n: usize, rng: &mut impl RngCore) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let bits = rng.next_u64();
        let take = (n - out.len()).min(64);
        out.extend((0..take).map(|k| if (bits >> k) & 1 == 1 { 1.0 } else { -1.0 }));
    }
    out
}

/// `2/(N(N-1)) Σ_{i<j} W_i W_j H[i][j]` for one sign vector.
pub fn bootstrap_statistic(h: &HMatrix, signs: &[f64]) -> f64 {
    assert_eq!(signs.len(), h.n(), "one sign per observation");
    pair_mean(upper_sum(h, |i, j| signs[i] * signs[j]), h.n())
}

/// Draws `b_count` replicates. Replicate `b` uses its own stream derived from
/// `(seed, b)`, so the draws do not depend on the thread count.
pub fn wild_bootstrap(h: &HMatrix, b_count: usize, seed: u64) -> Result<BootstrapDraws> {
    if b_count == 0 {
        return Err(Error::InvalidParameter("bootstrap count must be at least 1".into()));
    }
    let stats = map_indexed(b_count, |b| {
        let signs = rademacher_signs(h.n(), &mut stream(seed, domain::BOOTSTRAP, b as u64));
        bootstrap_statistic(h, &signs)
    });
    Ok(BootstrapDraws { stats, seed })
}

/// Everything needed to replay a randomized decision.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionTrace {
    /// 1-based rank of the statistic in the pooled ascending sequence.
    pub position: usize,
    /// `ceil((1 - alpha)(B + 1))`.
    pub b_alpha: usize,
    /// Bootstrap draws equal to the statistic.
    pub ties: usize,
    pub tie_uniform: f64,
    /// Probability of rejecting when `position == b_alpha`.
    pub boundary_reject_prob: f64,
    pub reject_uniform: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decision {
    pub reject: bool,
    pub p_value: f64,
    /// The `b_alpha`-th smallest value of the pooled sequence.
    pub threshold: f64,
    pub trace: DecisionTrace,
}

/// `ceil((1 - alpha)(B + 1))` and the boundary rejection probability
/// `b_alpha - (1 - alpha)(B + 1)`, both robust to representation error in
/// `alpha`.
pub fn quantile_index(alpha: f64, b_count: usize) -> (usize, f64) {
    let v = (1.0 - alpha) * (b_count as f64 + 1.0);
    let b = (v - 1e-9).ceil().max(1.0);
    let frac = b - v;
    let p = if frac.abs() < 1e-9 { 0.0 } else { frac.clamp(0.0, 1.0) };
    (b as usize, p)
}

/// Smallest `B` for which the test can reject at level `alpha` without
/// relying on boundary randomization.
pub fn min_bootstrap(alpha: f64) -> usize {
    ((1.0 / alpha) - 1e-9).ceil() as usize - 1
}

/// Randomized quantile rule. The statistic is placed among the draws with
/// ties broken uniformly at random; the test rejects above position
/// `b_alpha`, accepts below it, and at `b_alpha` rejects with probability
/// `b_alpha - (1 - alpha)(B + 1)`. Rejects with probability exactly `alpha`
/// when the statistic is exchangeable with the draws.
pub fn randomized_decision(
    statistic: f64,
    draws: &BootstrapDraws,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<Decision> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if draws.stats.is_empty() {
        return Err(Error::InvalidParameter("no bootstrap draws".into()));
    }
    if statistic.is_nan() || draws.stats.iter().any(|d| d.is_nan()) {
        return Err(Error::InvalidInput("statistic or draws contain NaN".into()));
    }
    let b = draws.stats.len();
    let tie_uniform: f64 = rng.gen();
    let reject_uniform: f64 = rng.gen();

    let below = draws.stats.iter().filter(|&&d| d < statistic).count();
    let ties = draws.stats.iter().filter(|&&d| d == statistic).count();
    let above_or_equal = b - below;
    let tie_rank = ((tie_uniform * (ties + 1) as f64) as usize).min(ties);
    let position = 1 + below + tie_rank;

    let (b_alpha, boundary_reject_prob) = quantile_index(alpha, b);
    let reject = match position.cmp(&b_alpha) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => reject_uniform < boundary_reject_prob,
    };

    let mut pooled = draws.stats.clone();
    pooled.push(statistic);
    pooled.sort_by(|a, b| a.total_cmp(b));

    Ok(Decision {
        reject,
        p_value: (1 + above_or_equal) as f64 / (b + 1) as f64,
        threshold: pooled[b_alpha - 1],
        trace: DecisionTrace {
            position,
            b_alpha,
            ties,
            tie_uniform,
            boundary_reject_prob,
            reject_uniform,
        },
    })
}

/// Outcome of a bootstrap test with full provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub statistic: f64,
    pub threshold: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub b: usize,
    pub n: usize,
    pub seed: u64,
    pub kernel_x: String,
    pub kernel_y: String,
    /// Plug-in `σ²_h`, when `n >= 3`.
    pub sigma_h_sq: Option<f64>,
    pub decision: DecisionTrace,
    pub warnings: Vec<String>,
}

/// Statistic, bootstrap and decision on a precomputed `h` matrix.
pub(crate) fn test_on_h(
    h: &HMatrix,
    alpha: f64,
    b_count: usize,
    seed: u64,
    kernel_x: String,
    kernel_y: String,
) -> Result<TestReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let mut warnings = Vec::new();
    let min_b = min_bootstrap(alpha);
    if b_count < min_b {
        let msg = format!(
            "B = {b_count} < {min_b}: at alpha = {alpha} the test can only reject through boundary randomization"
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let statistic = acmmd_sq(h);
    let draws = wild_bootstrap(h, b_count, seed)?;
    let decision = randomized_decision(
        statistic,
        &draws,
        alpha,
        &mut stream(seed, domain::DECISION, 0),
    )?;
    Ok(TestReport {
        statistic,
        threshold: decision.threshold,
        p_value: decision.p_value,
        reject: decision.reject,
        alpha,
        b: b_count,
        n: h.n(),
        seed,
        kernel_x,
        kernel_y,
        sigma_h_sq: sigma_h_sq(h).ok(),
        decision: decision.trace,
        warnings,
    })
}

/// The ACMMD conditional goodness-of-fit test. Deterministic given `seed`.
pub fn acmmd_test(
    samples: &[Triplet],
    kx: &KernelSpec,
    ky: &KernelSpec,
    alpha: f64,
    b_count: usize,
    seed: u64,
) -> Result<TestReport> {
    let hc = h_matrix(samples, kx, ky)?;
    test_on_h(
        &hc.h,
        alpha,
        b_count,
        seed,
        hc.kernel_x.to_string(),
        hc.kernel_y.to_string(),
    )
}
