//! Reliability variant of ACMMD: the input is replaced by the model's own
//! predictive distribution, compared between records through an MMD-based
//! kernel estimated from `R` model samples per record.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::estimator::{combine_g, pair_mean, upper_sum, HMatrix, Outcome};
use crate::hypothesis::{test_on_h, TestReport};
use crate::kernels::{median_or_one, Bandwidth, FastKernel, HammingTable, ItemRef, KernelSpec, Prepared};
use crate::matrix::Matrix;
use crate::parallel::map_indexed;

pub use crate::kernels::mmd_sq_unbiased;

/// One record for the reliability statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityRecord {
    pub y: Outcome,
    /// The single model draw used inside `g`.
    pub y_model: Outcome,
    /// Independent model draws used only to compare predictive distributions.
    pub model_samples: Vec<Outcome>,
}

impl ReliabilityRecord {
    pub fn new(y: Outcome, y_model: Outcome, model_samples: Vec<Outcome>) -> Self {
        ReliabilityRecord {
            y,
            y_model,
            model_samples,
        }
    }

    /// Record with `y` and `y_model` exchanged; `model_samples` untouched.
    pub fn swapped(&self) -> Self {
        ReliabilityRecord {
            y: self.y_model.clone(),
            y_model: self.y.clone(),
            model_samples: self.model_samples.clone(),
        }
    }
}

/// Default number of model samples per record: `max(16, ⌈√N⌉)`.
pub fn default_inner_samples(n: usize) -> usize {
    let root = (n as f64).sqrt().ceil() as usize;
    root.max(16)
}

/// Estimated distribution kernel `k̂_ij = exp(-MMD̂²_ij / (2σ²))`.
#[derive(Debug, Clone)]
pub struct KhatMatrix {
    pub values: Matrix,
    /// Pairwise `MMD̂²` estimates; the diagonal holds the split-half values.
    pub mmd_sq: Matrix,
    pub sigma: f64,
}

/// Distinct model samples across all records, with per-record occurrence
/// counts. Ids are ordered by ascending total frequency so that the
/// triangular sweep in [`mmd_matrix`] touches frequent samples least.
struct Interned<'a> {
    items: Vec<ItemRef<'a>>,
    /// Per record: `(id, count)` sorted by id.
    occ: Vec<Vec<(u32, u32)>>,
    /// Per record: sample ids in their original order.
    ids: Vec<Vec<u32>>,
}

#[derive(PartialEq, Eq, Hash)]
enum Key<'a> {
    Codes(&'a [u16]),
    Bits(Vec<u64>),
}

fn key<'a>(item: &ItemRef<'a>) -> Key<'a> {
    match item {
        ItemRef::Tokens(s) => Key::Codes(s.codes()),
        ItemRef::Vector(v) => Key::Bits(v.iter().map(|x| x.to_bits()).collect()),
        ItemRef::Samples(_) => unreachable!("nested distribution kernels are rejected earlier"),
    }
}

fn intern<'a>(records: &'a [ReliabilityRecord], ky: &KernelSpec) -> Result<Interned<'a>> {
    let mut lookup: HashMap<Key<'a>, u32> = HashMap::new();
    let mut items: Vec<ItemRef<'a>> = Vec::new();
    let mut totals: Vec<u64> = Vec::new();
    let mut raw_ids = Vec::with_capacity(records.len());
    for r in records {
        let mut ids = Vec::with_capacity(r.model_samples.len());
        for o in &r.model_samples {
            let item = o.item(ky)?;
            let id = *lookup.entry(key(&item)).or_insert_with(|| {
                items.push(item);
                totals.push(0);
                (items.len() - 1) as u32
            });
            totals[id as usize] += 1;
            ids.push(id);
        }
        raw_ids.push(ids);
    }
    let mut order: Vec<u32> = (0..items.len() as u32).collect();
    order.sort_by_key(|&i| (totals[i as usize], i));
    let mut rank = vec![0u32; items.len()];
    for (new, &old) in order.iter().enumerate() {
        rank[old as usize] = new as u32;
    }
    let items = order.iter().map(|&old| items[old as usize]).collect();
    let ids: Vec<Vec<u32>> = raw_ids
        .into_iter()
        .map(|v| v.into_iter().map(|i| rank[i as usize]).collect())
        .collect();
    let occ = ids
        .iter()
        .map(|v| {
            let mut sorted = v.clone();
            sorted.sort_unstable();
            let mut out: Vec<(u32, u32)> = Vec::new();
            for id in sorted {
                match out.last_mut() {
                    Some((last, c)) if *last == id => *c += 1,
                    _ => out.push((id, 1)),
                }
            }
            out
        })
        .collect();
    Ok(Interned { items, occ, ids })
}

const SWEEP_BLOCK: usize = 512;

fn check_records(records: &[ReliabilityRecord], ky: &KernelSpec) -> Result<()> {
    if matches!(ky, KernelSpec::DistExpMmd { .. }) {
        return Err(Error::InvalidKernelSpec {
            spec: ky.to_string(),
            reason: "the inner kernel must act on sequences or embeddings".into(),
        });
    }
    if let Some(bad) = records.iter().find(|r| r.model_samples.len() < 2) {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: bad.model_samples.len(),
        });
    }
    Ok(())
}

/// Pairwise unbiased `MMD̂²` between the model-sample sets of all records
/// (off-diagonal), with the split-half estimate on the diagonal (1.0 when
/// fewer than four samples are available, i.e. `MMD̂² = 0`).
///
/// Agrees with [`mmd_sq_unbiased`] on every pair up to summation order;
/// identical sample lists give exactly zero.
pub fn mmd_matrix(records: &[ReliabilityRecord], ky: &KernelSpec) -> Result<Matrix> {
    check_records(records, ky)?;
    let n = records.len();
    let interned = intern(records, ky)?;
    let prepared = Prepared::new(ky, &interned.items).map_err(|e| match e {
        Error::AlphabetMismatch | Error::DimensionMismatch { .. } => {
            Error::Heterogeneous(format!("model_samples: {e}"))
        }
        other => other,
    })?;
    let fast = FastKernel::new(ky, &[&prepared])?;
    Ok(match HammingTable::new(&fast, &prepared) {
        Some(table) => assemble(&interned, n, |u, v| table.eval(u, v)),
        None => assemble(&interned, n, |u, v| fast.eval(&prepared, u, &prepared, v)),
    })
}

fn assemble(interned: &Interned<'_>, n: usize, k: impl Fn(usize, usize) -> f64 + Sync) -> Matrix {
    let d = interned.items.len();
    let diag_k: Vec<f64> = (0..d).map(|u| k(u, u)).collect();
    let occ = &interned.occ;
    let ids = &interned.ids;

    // P[i][j] = Σ_u c_i(u) M[u][j] with
    // M[u][j] = Σ_{v<u} c_j(v) K(u,v) + ½ c_j(u) K(u,u), so that
    // S = P + Pᵀ = C K Cᵀ holds the full cross sums.
    let mut p = vec![0.0f64; n * n];
    let mut block_start = 0;
    while block_start < d {
        let block_end = (block_start + SWEEP_BLOCK).min(d);
        let m: Vec<Vec<f64>> = map_indexed(block_end - block_start, |bu| {
            let u = block_start + bu;
            let krow: Vec<f64> = (0..u).map(|v| k(u, v)).collect();
            let half = 0.5 * diag_k[u];
            occ.iter()
                .map(|o| {
                    let mut s = 0.0;
                    for &(v, c) in o {
                        let v = v as usize;
                        if v >= u {
                            if v == u {
                                s += c as f64 * half;
                            }
                            break;
                        }
                        s += c as f64 * krow[v];
                    }
                    s
                })
                .collect()
        });
        let contrib: Vec<Vec<f64>> = map_indexed(n, |i| {
            let mut row = Vec::new();
            for &(u, c) in &occ[i] {
                let u = u as usize;
                if u < block_start || u >= block_end {
                    continue;
                }
                if row.is_empty() {
                    row = vec![0.0; n];
                }
                let mu = &m[u - block_start];
                for (r, &x) in row.iter_mut().zip(mu) {
                    *r += c as f64 * x;
                }
            }
            row
        });
        for (i, row) in contrib.into_iter().enumerate() {
            for (dst, x) in p[i * n..(i + 1) * n].iter_mut().zip(row) {
                *dst += x;
            }
        }
        block_start = block_end;
    }

    let s = |i: usize, j: usize| p[i * n + j] + p[j * n + i];
    let self_sum: Vec<f64> = ids
        .iter()
        .map(|v| v.iter().map(|&u| diag_k[u as usize]).sum())
        .collect();
    let within: Vec<f64> = (0..n).map(|i| s(i, i) - self_sum[i]).collect();

    let upper: Vec<Vec<f64>> = map_indexed(n, |i| {
        let ri = ids[i].len();
        (i + 1..n)
            .map(|j| {
                let rj = ids[j].len();
                if ri == rj {
                    let paired: f64 = ids[i]
                        .iter()
                        .zip(&ids[j])
                        .map(|(&a, &b)| k(a as usize, b as usize))
                        .sum();
                    (within[i] + within[j] - 2.0 * (s(i, j) - paired)) / (ri * (ri - 1)) as f64
                } else {
                    within[i] / (ri * (ri - 1)) as f64 + within[j] / (rj * (rj - 1)) as f64
                        - 2.0 * s(i, j) / (ri * rj) as f64
                }
            })
            .collect()
    });
    let diag: Vec<f64> = map_indexed(n, |i| split_half(&ids[i], &k));

    let mut out = Matrix::zeros(n, n);
    for (i, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + 1 + off;
            out.set(i, j, v);
            out.set(j, i, v);
        }
        out.set(i, i, diag[i]);
    }
    out
}

fn split_half(ids: &[u32], k: &impl Fn(usize, usize) -> f64) -> f64 {
    let half = ids.len() / 2;
    if half < 2 {
        return 0.0;
    }
    let (a, b) = (&ids[..half], &ids[half..2 * half]);
    let mut total = 0.0;
    for t in 0..half {
        for u in 0..half {
            if t != u {
                let (at, au, bt, bu) = (a[t] as usize, a[u] as usize, b[t] as usize, b[u] as usize);
                total += k(at, au) + k(bt, bu) - k(at, bu) - k(au, bt);
            }
        }
    }
    total / (half * (half - 1)) as f64
}

/// Median heuristic for the distribution kernel: the median over `i < j` of
/// `sqrt(max(MMD̂²_ij, 0))`, or 1.0 when that is not positive.
fn median_sigma(mmd: &Matrix) -> f64 {
    let n = mmd.rows();
    let mut vals: Vec<f64> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| mmd.get(i, j).max(0.0).sqrt())
        .collect();
    median_or_one(&mut vals)
}

/// Builds `k̂` from the records' model samples. A `median` bandwidth is
/// resolved from the pairwise MMD estimates.
pub fn khat_matrix(records: &[ReliabilityRecord], ky: &KernelSpec, sigma: Bandwidth) -> Result<KhatMatrix> {
    let mmd = mmd_matrix(records, ky)?;
    let sigma = match sigma {
        Bandwidth::Fixed(s) if s > 0.0 && s.is_finite() => s,
        Bandwidth::Fixed(s) => {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {s}")))
        }
        Bandwidth::Median => median_sigma(&mmd),
    };
    let n = records.len();
    let scale = 2.0 * sigma * sigma;
    let mut values = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            values.set(i, j, (-mmd.get(i, j) / scale).exp());
        }
    }
    Ok(KhatMatrix {
        values,
        mmd_sq: mmd,
        sigma,
    })
}

/// `Ĥ` matrix of the reliability statistic with the objects it was built from.
#[derive(Debug, Clone)]
pub struct RelComputation {
    pub h: HMatrix,
    pub khat: KhatMatrix,
    /// Output kernel with any median bandwidth resolved.
    pub kernel_y: KernelSpec,
}

impl RelComputation {
    /// The distribution kernel actually used, with its resolved bandwidth.
    pub fn kernel_x(&self) -> KernelSpec {
        KernelSpec::DistExpMmd {
            sigma: Bandwidth::Fixed(self.khat.sigma),
            inner: Box::new(self.kernel_y.clone()),
        }
    }
}

/// `Ĥ[i][j] = k̂_ij · g(y_i, ỹ_i, y_j, ỹ_j)`.
pub fn rel_h_matrix(records: &[ReliabilityRecord], ky: &KernelSpec, sigma: Bandwidth) -> Result<RelComputation> {
    let n = records.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let ky = crate::estimator::resolve_output_kernel(
        ky,
        records
            .iter()
            .flat_map(|r| [&r.y, &r.y_model].into_iter().chain(&r.model_samples)),
    )?;
    let khat = khat_matrix(records, &ky, sigma)?;
    let ys = records.iter().map(|r| r.y.item(&ky)).collect::<Result<Vec<_>>>()?;
    let ms = records.iter().map(|r| r.y_model.item(&ky)).collect::<Result<Vec<_>>>()?;
    let het = |field: &str| {
        let field = field.to_string();
        move |e: Error| match e {
            Error::AlphabetMismatch | Error::DimensionMismatch { .. } => {
                Error::Heterogeneous(format!("{field}: {e}"))
            }
            other => other,
        }
    };
    let py = Prepared::new(&ky, &ys).map_err(het("y"))?;
    let pm = Prepared::new(&ky, &ms).map_err(het("y_model"))?;
    let fy = FastKernel::new(&ky, &[&py, &pm]).map_err(het("y/y_model"))?;
    let entry = |i: usize, j: usize| {
        let g = combine_g(
            fy.eval(&pm, i, &pm, j),
            fy.eval(&py, i, &py, j),
            fy.eval(&pm, i, &py, j),
            fy.eval(&py, i, &pm, j),
        );
        khat.values.get(i, j) * g
    };
    let upper = map_indexed(n, |i| (i + 1..n).map(|j| entry(i, j)).collect::<Vec<_>>());
    let mut h = HMatrix::from_upper_rows(n, upper);
    let diag: Vec<f64> = (0..n).map(|i| entry(i, i)).collect();
    h.set_diagonal(&diag);
    Ok(RelComputation {
        h,
        khat,
        kernel_y: ky,
    })
}

/// Unbiased estimate of the squared reliability ACMMD.
pub fn acmmd_rel_sq(records: &[ReliabilityRecord], ky: &KernelSpec, sigma: Bandwidth) -> Result<f64> {
    let rc = rel_h_matrix(records, ky, sigma)?;
    Ok(pair_mean(upper_sum(&rc.h, |_, _| 1.0), rc.h.n()))
}

/// Wild-bootstrap test of reliability at exact level `alpha`.
pub fn acmmd_rel_test(
    records: &[ReliabilityRecord],
    ky: &KernelSpec,
    sigma: Bandwidth,
    alpha: f64,
    b_count: usize,
    seed: u64,
) -> Result<TestReport> {
    let rc = rel_h_matrix(records, ky, sigma)?;
    test_on_h(
        &rc.h,
        alpha,
        b_count,
        seed,
        rc.kernel_x().to_string(),
        rc.kernel_y.to_string(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypothesis::{bootstrap_statistic, rademacher_signs};
    use crate::kernels::HammingMode;
    use crate::rng::{domain, stream};
    use crate::sequence::{Alphabet, Sequence};
    use crate::toy::ToyConfig;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn ab() -> Arc<Alphabet> {
        Arc::new(Alphabet::new(&["A", "B", "STOP"], Some("STOP")).unwrap())
    }

    fn seq(a: &Arc<Alphabet>, s: &str) -> Sequence {
        let toks: Vec<&str> = s.split_whitespace().collect();
        Sequence::parse(a, &toks).unwrap()
    }

    fn random_seq(a: &Arc<Alphabet>, rng: &mut impl Rng) -> Sequence {
        let len = rng.gen_range(0..5);
        Sequence::from_codes(a, (0..len).map(|_| rng.gen_range(1..=2)).collect()).unwrap()
    }

    fn random_records(n: usize, r: impl Fn(usize) -> usize, seed: u64) -> Vec<ReliabilityRecord> {
        let a = ab();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let y = random_seq(&a, &mut rng).into();
                let m = random_seq(&a, &mut rng).into();
                let samples = (0..r(i)).map(|_| random_seq(&a, &mut rng).into()).collect();
                ReliabilityRecord::new(y, m, samples)
            })
            .collect()
    }

    fn tokens(rec: &ReliabilityRecord) -> Vec<Sequence> {
        rec.model_samples.iter().map(|o| o.tokens.clone()).collect()
    }

    #[test]
    fn mmd_matrix_matches_direct_estimator() {
        let ky = KernelSpec::exp_hamming(0.7);
        for (seed, sizes) in [(1u64, [6usize, 6, 6, 6, 6]), (2, [3, 5, 4, 2, 7])] {
            let recs = random_records(5, |i| sizes[i], seed);
            let m = mmd_matrix(&recs, &ky).unwrap();
            for i in 0..5 {
                for j in 0..5 {
                    if i == j {
                        continue;
                    }
                    let direct = mmd_sq_unbiased(&tokens(&recs[i]), &tokens(&recs[j]), &ky).unwrap();
                    assert_relative_eq!(m.get(i, j), direct, epsilon = 1e-12);
                }
                let t = tokens(&recs[i]);
                let h = t.len() / 2;
                let expected = if h >= 2 {
                    mmd_sq_unbiased(&t[..h], &t[h..2 * h], &ky).unwrap()
                } else {
                    0.0
                };
                assert_relative_eq!(m.get(i, i), expected, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn mmd_matrix_is_exactly_symmetric() {
        let recs = random_records(9, |_| 7, 5);
        let m = mmd_matrix(&recs, &KernelSpec::exp_hamming(1.0)).unwrap();
        assert!(m.is_symmetric());
    }

    #[test]
    fn identical_sample_lists_give_unit_khat() {
        let mut recs = random_records(4, |_| 8, 9);
        recs[2].model_samples = recs[0].model_samples.clone();
        let k = khat_matrix(&recs, &KernelSpec::exp_hamming(1.0), Bandwidth::Fixed(1.0)).unwrap();
        assert_eq!(k.mmd_sq.get(0, 2), 0.0);
        assert_eq!(k.values.get(0, 2), 1.0);
        assert_eq!(k.values.get(2, 0), 1.0);
    }

    #[test]
    fn khat_depends_only_on_model_samples() {
        let recs = random_records(6, |_| 5, 3);
        let mut other = recs.clone();
        let a = ab();
        for r in &mut other {
            r.y = seq(&a, "A A B").into();
            r.y_model = seq(&a, "").into();
        }
        let ky = KernelSpec::exp_hamming(1.0);
        let k1 = khat_matrix(&recs, &ky, Bandwidth::Median).unwrap();
        let k2 = khat_matrix(&other, &ky, Bandwidth::Median).unwrap();
        assert_eq!(k1.values, k2.values);
        assert_eq!(k1.sigma, k2.sigma);
    }

    #[test]
    fn statistic_vanishes_when_outputs_match() {
        let mut recs = random_records(6, |_| 4, 11);
        for r in &mut recs {
            r.y_model = r.y.clone();
        }
        let v = acmmd_rel_sq(&recs, &KernelSpec::exp_hamming(1.0), Bandwidth::Fixed(1.0)).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn two_records_give_the_single_entry() {
        let recs = random_records(2, |_| 4, 12);
        let ky = KernelSpec::exp_hamming(1.0);
        let k = khat_matrix(&recs, &ky, Bandwidth::Fixed(1.0)).unwrap();
        let t = ItemRef::Tokens;
        let g = crate::estimator::g_term(
            t(&recs[0].y.tokens),
            t(&recs[0].y_model.tokens),
            t(&recs[1].y.tokens),
            t(&recs[1].y_model.tokens),
            &ky,
        )
        .unwrap();
        let v = acmmd_rel_sq(&recs, &ky, Bandwidth::Fixed(1.0)).unwrap();
        assert_relative_eq!(v, k.values.get(0, 1) * g, max_relative = 1e-14);
    }

    #[test]
    fn bootstrap_replicate_equals_statistic_on_swapped_records() {
        let ky = KernelSpec::exp_hamming(0.8);
        for n in 2..=8 {
            let recs = random_records(n, |_| 4, 40 + n as u64);
            let rc = rel_h_matrix(&recs, &ky, Bandwidth::Fixed(1.0)).unwrap();
            let mut rng = stream(7, domain::BOOTSTRAP, n as u64);
            let signs = rademacher_signs(n, &mut rng);
            let swapped: Vec<ReliabilityRecord> = recs
                .iter()
                .zip(&signs)
                .map(|(r, &s)| if s < 0.0 { r.swapped() } else { r.clone() })
                .collect();
            let direct = acmmd_rel_sq(&swapped, &ky, Bandwidth::Fixed(1.0)).unwrap();
            assert_eq!(bootstrap_statistic(&rc.h, &signs), direct, "n = {n}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let ky = KernelSpec::exp_hamming(1.0);
        let recs = random_records(3, |i| if i == 1 { 1 } else { 4 }, 1);
        assert!(matches!(
            khat_matrix(&recs, &ky, Bandwidth::Fixed(1.0)),
            Err(Error::TooFewSamples { .. })
        ));
        let recs = random_records(3, |_| 4, 1);
        assert!(khat_matrix(&recs, &ky, Bandwidth::Fixed(0.0)).is_err());
        assert!(acmmd_rel_sq(&recs[..1], &ky, Bandwidth::Fixed(1.0)).is_err());
        let nested: KernelSpec = "dist-expmmd:sigma=1:inner=exp-hamming:lambda=1".parse().unwrap();
        assert!(khat_matrix(&recs, &nested, Bandwidth::Fixed(1.0)).is_err());
    }

    #[test]
    fn test_report_names_the_distribution_kernel() {
        let recs = random_records(10, |_| 4, 8);
        let ky = KernelSpec::ExpHamming {
            lambda: 1.0,
            mode: HammingMode::TerminalPadded,
        };
        let rep = acmmd_rel_test(&recs, &ky, Bandwidth::Median, 0.05, 50, 1).unwrap();
        assert!(rep.kernel_x.starts_with("dist-expmmd:sigma="));
        let again = acmmd_rel_test(&recs, &ky, Bandwidth::Median, 0.05, 50, 1).unwrap();
        assert_eq!(rep.statistic, again.statistic);
        assert_eq!(rep.p_value, again.p_value);
    }

    #[test]
    fn toy_records_are_reproducible() {
        let c = ToyConfig::default();
        let (a, pa) = c.sample_reliability(5, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (b, pb) = c.sample_reliability(5, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
    }
}
