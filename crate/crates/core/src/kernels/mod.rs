//! Kernels on token sequences, embedding vectors and sample sets, plus Gram
//! assembly.
//!
//! The scalar functions (`hamming_distance`, `exp_hamming`, `gaussian`, ...)
//! are the reference definitions. Gram construction and the estimators go
//! through [`Prepared`] sets, which validate inputs once and evaluate
//! sequence kernels on bit-packed tokens; both routes produce bit-identical
//! values.

mod packed;
mod spec;

pub use spec::{Bandwidth, HammingMode, KernelSpec};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::parallel::map_indexed;
use crate::sequence::{Sequence, TERMINAL_CODE};
use packed::{LaneWidth, PackedSeq};

/// Owned kernel input.
#[derive(Debug, Clone, PartialEq)]
pub enum Item {
    Tokens(Sequence),
    Vector(Vec<f64>),
    Samples(Vec<Sequence>),
}

impl Item {
    pub fn as_ref(&self) -> ItemRef<'_> {
        match self {
            Item::Tokens(s) => ItemRef::Tokens(s),
            Item::Vector(v) => ItemRef::Vector(v),
            Item::Samples(s) => ItemRef::Samples(s),
        }
    }
}

/// Borrowed kernel input.
#[derive(Debug, Clone, Copy)]
pub enum ItemRef<'a> {
    Tokens(&'a Sequence),
    Vector(&'a [f64]),
    Samples(&'a [Sequence]),
}

impl ItemRef<'_> {
    fn kind(&self) -> &'static str {
        match self {
            ItemRef::Tokens(_) => "a token sequence",
            ItemRef::Vector(_) => "a vector",
            ItemRef::Samples(_) => "a sample set",
        }
    }
}

pub fn hamming_distance(a: &Sequence, b: &Sequence, mode: HammingMode) -> Result<usize> {
    if !a.same_alphabet(b) {
        return Err(Error::AlphabetMismatch);
    }
    let (a, b) = (a.codes(), b.codes());
    Ok(match mode {
        HammingMode::TerminalPadded => {
            let n = a.len().max(b.len());
            (0..n)
                .filter(|&i| {
                    a.get(i).copied().unwrap_or(TERMINAL_CODE)
                        != b.get(i).copied().unwrap_or(TERMINAL_CODE)
                })
                .count()
        }
        HammingMode::LengthPenalty => {
            let common = a.iter().zip(b).filter(|(x, y)| x != y).count();
            common + a.len().abs_diff(b.len())
        }
    })
}

#[inline]
fn exp_decay(lambda: f64, d: usize) -> f64 {
    (-lambda * d as f64).exp()
}

pub fn exp_hamming(a: &Sequence, b: &Sequence, lambda: f64, mode: HammingMode) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(exp_decay(lambda, hamming_distance(a, b, mode)?))
}

/// Exponentiated Hamming kernel scaled by `1 / (|a| |b|)`. Empty sequences
/// are rejected.
pub fn tilted_exp_hamming(a: &Sequence, b: &Sequence, lambda: f64, mode: HammingMode) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput(
            "tilted kernel is undefined on empty sequences".into(),
        ));
    }
    let k = exp_hamming(a, b, lambda, mode)?;
    Ok(k / (a.len() * b.len()) as f64)
}

#[inline]
fn sq_dist(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
fn gaussian_of_sq(d2: f64, sigma: f64) -> f64 {
    (-d2 / (2.0 * sigma * sigma)).exp()
}

pub fn gaussian(u: &[f64], v: &[f64], sigma: f64) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    Ok(gaussian_of_sq(sq_dist(u, v), sigma))
}

/// Column-wise mean of a per-position embedding matrix.
pub fn mean_pool(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = rows
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot mean-pool an empty matrix".into()))?;
    let d = first.len();
    let mut acc = vec![0.0; d];
    for r in rows {
        if r.len() != d {
            return Err(Error::DimensionMismatch {
                left: d,
                right: r.len(),
            });
        }
        for (a, x) in acc.iter_mut().zip(r) {
            *a += x;
        }
    }
    let n = rows.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Unbiased MMD² U-statistic between two sample sets.
///
/// Equal-sized sets use the paired form
/// `1/(n(n-1)) Σ_{i≠j} [k(a_i,a_j) + k(b_i,b_j) - k(a_i,b_j) - k(a_j,b_i)]`,
/// which is exactly zero when `a` and `b` are the same list. Unequal sizes
/// use the general form with the full cross mean.
pub fn mmd_sq_unbiased(a: &[Sequence], b: &[Sequence], kernel: &KernelSpec) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: a.len().min(b.len()),
        });
    }
    if kernel.is_sequence_kernel() {
        kernel.validate()?;
    } else {
        return Err(incompatible(kernel, &ItemRef::Tokens(&a[0])));
    }
    let ia: Vec<ItemRef> = a.iter().map(ItemRef::Tokens).collect();
    let ib: Vec<ItemRef> = b.iter().map(ItemRef::Tokens).collect();
    let kaa = gram(kernel, &ia, &ia)?;
    let kbb = gram(kernel, &ib, &ib)?;
    let kab = gram(kernel, &ia, &ib)?;
    let off_diagonal_sum = |m: &Matrix| -> f64 {
        let mut t = 0.0;
        for i in 0..m.rows() {
            for (j, v) in m.row(i).iter().enumerate() {
                if i != j {
                    t += v;
                }
            }
        }
        t
    };
    if a.len() == b.len() {
        let n = a.len();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    total += kaa.get(i, j) + kbb.get(i, j) - kab.get(i, j) - kab.get(j, i);
                }
            }
        }
        return Ok(total / (n * (n - 1)) as f64);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let cross: f64 = kab.as_slice().iter().sum();
    Ok(off_diagonal_sum(&kaa) / (na * (na - 1.0)) + off_diagonal_sum(&kbb) / (nb * (nb - 1.0))
        - 2.0 * cross / (na * nb))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")))
    }
}

fn resolved_sigma(spec: &KernelSpec, bw: Bandwidth) -> Result<f64> {
    bw.fixed().ok_or_else(|| Error::InvalidKernelSpec {
        spec: spec.to_string(),
        reason: "median bandwidth must be resolved against data before evaluation".into(),
    })
}

fn incompatible(spec: &KernelSpec, item: &ItemRef<'_>) -> Error {
    Error::IncompatibleItem {
        kernel: spec.name().to_string(),
        item: item.kind(),
    }
}

impl KernelSpec {
    /// Evaluates the kernel on one pair of inputs.
    pub fn eval(&self, a: ItemRef<'_>, b: ItemRef<'_>) -> Result<f64> {
        match (self, a, b) {
            (KernelSpec::ExpHamming { lambda, mode }, ItemRef::Tokens(x), ItemRef::Tokens(y)) => {
                exp_hamming(x, y, *lambda, *mode)
            }
            (
                KernelSpec::TiltedExpHamming { lambda, mode },
                ItemRef::Tokens(x),
                ItemRef::Tokens(y),
            ) => tilted_exp_hamming(x, y, *lambda, *mode),
            (
                KernelSpec::Gaussian { sigma } | KernelSpec::MeanEmbeddingGaussian { sigma },
                ItemRef::Vector(u),
                ItemRef::Vector(v),
            ) => gaussian(u, v, resolved_sigma(self, *sigma)?),
            (KernelSpec::DistExpMmd { sigma, inner }, ItemRef::Samples(p), ItemRef::Samples(q)) => {
                let s = resolved_sigma(self, *sigma)?;
                let mmd = mmd_sq_unbiased(p, q, inner)?;
                Ok(gaussian_of_sq(mmd, s))
            }
            (_, a, b) => {
                let bad = if self.accepts(&a) { b } else { a };
                Err(incompatible(self, &bad))
            }
        }
    }

    fn accepts(&self, item: &ItemRef<'_>) -> bool {
        match item {
            ItemRef::Tokens(_) => self.is_sequence_kernel(),
            ItemRef::Vector(_) => self.is_vector_kernel(),
            ItemRef::Samples(_) => matches!(self, KernelSpec::DistExpMmd { .. }),
        }
    }
}

/// Median of pairwise Euclidean distances, or 1.0 when that median is zero
/// or there are fewer than two points.
pub fn median_pairwise_distance(points: &[&[f64]]) -> f64 {
    let mut d: Vec<f64> = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for i in 0..points.len() {
        for j in 0..i {
            d.push(sq_dist(points[i], points[j]).sqrt());
        }
    }
    median_or_one(&mut d)
}

pub(crate) fn median_or_one(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 1.0;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    let m = if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    };
    if m > 0.0 && m.is_finite() {
        m
    } else {
        1.0
    }
}

/// Replaces a `median` bandwidth on a vector kernel by the median pairwise
/// distance over `items`. Other specs are returned unchanged.
pub fn resolve_bandwidth(spec: &KernelSpec, items: &[ItemRef<'_>]) -> Result<KernelSpec> {
    if !spec.is_vector_kernel() || spec.bandwidth() != Some(Bandwidth::Median) {
        return Ok(spec.clone());
    }
    let points = items
        .iter()
        .map(|it| match it {
            ItemRef::Vector(v) => Ok(*v),
            other => Err(incompatible(spec, other)),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(spec.with_bandwidth(Bandwidth::Fixed(median_pairwise_distance(&points))))
}

/// Gram matrix `G[i][j] = k(a[i], b[j])`.
pub fn gram(spec: &KernelSpec, a: &[ItemRef<'_>], b: &[ItemRef<'_>]) -> Result<Matrix> {
    let pa = Prepared::new(spec, a)?;
    let pb = Prepared::new(spec, b)?;
    let fast = FastKernel::new(spec, &[&pa, &pb])?;
    let cols = b.len();
    let rows: Vec<Vec<f64>> = map_indexed(a.len(), |i| {
        (0..cols).map(|j| fast.eval(&pa, i, &pb, j)).collect()
    });
    Ok(Matrix::from_rows(a.len(), cols, rows.concat()))
}

/// Inputs validated and pre-processed for one kernel.
pub(crate) enum Prepared<'a> {
    Packed {
        seqs: Vec<PackedSeq>,
        width: LaneWidth,
        alphabet: Option<&'a Sequence>,
    },
    Vectors(Vec<&'a [f64]>),
    Samples(Vec<&'a [Sequence]>),
}

impl<'a> Prepared<'a> {
    pub(crate) fn new(spec: &KernelSpec, items: &[ItemRef<'a>]) -> Result<Self> {
        spec.validate()?;
        if spec.is_sequence_kernel() {
            let seqs = items
                .iter()
                .map(|it| match it {
                    ItemRef::Tokens(s) => Ok(*s),
                    other => Err(incompatible(spec, other)),
                })
                .collect::<Result<Vec<&Sequence>>>()?;
            return Self::from_sequences(spec, &seqs);
        }
        if spec.is_vector_kernel() {
            let vecs = items
                .iter()
                .map(|it| match it {
                    ItemRef::Vector(v) => Ok(*v),
                    other => Err(incompatible(spec, other)),
                })
                .collect::<Result<Vec<_>>>()?;
            if let Some(bad) = vecs.iter().find(|v| v.len() != vecs[0].len()) {
                return Err(Error::DimensionMismatch {
                    left: vecs[0].len(),
                    right: bad.len(),
                });
            }
            if vecs.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
                return Err(Error::InvalidInput("embedding contains non-finite values".into()));
            }
            return Ok(Prepared::Vectors(vecs));
        }
        let sets = items
            .iter()
            .map(|it| match it {
                ItemRef::Samples(s) => Ok(*s),
                other => Err(incompatible(spec, other)),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Prepared::Samples(sets))
    }

    pub(crate) fn from_sequences(spec: &KernelSpec, seqs: &[&'a Sequence]) -> Result<Self> {
        let first = seqs.first().copied();
        if let Some(f) = first {
            if seqs.iter().any(|s| !s.same_alphabet(f)) {
                return Err(Error::AlphabetMismatch);
            }
        }
        if matches!(spec, KernelSpec::TiltedExpHamming { .. }) && seqs.iter().any(|s| s.is_empty()) {
            return Err(Error::InvalidInput(
                "tilted kernel is undefined on empty sequences".into(),
            ));
        }
        let width = LaneWidth::for_alphabet(first.map_or(1, |s| s.alphabet().size()));
        Ok(Prepared::Packed {
            seqs: seqs.iter().map(|s| PackedSeq::new(s, width)).collect(),
            width,
            alphabet: first,
        })
    }
}

const DECAY_TABLE: usize = 512;

/// Infallible evaluator over [`Prepared`] sets that passed
/// [`FastKernel::new`]'s compatibility checks.
pub(crate) struct FastKernel<'s> {
    spec: &'s KernelSpec,
    kind: FastKind,
}

enum FastKind {
    Hamming { lambda: f64, tilted: bool, table: Vec<f64> },
    Gaussian { sigma: f64 },
    Dist,
}

impl<'s> FastKernel<'s> {
    pub(crate) fn new(spec: &'s KernelSpec, sets: &[&Prepared<'_>]) -> Result<Self> {
        let mut anchor: Option<&Sequence> = None;
        let mut dim: Option<usize> = None;
        for set in sets {
            match set {
                Prepared::Packed { alphabet: Some(a), .. } => match anchor {
                    Some(prev) if !prev.same_alphabet(a) => return Err(Error::AlphabetMismatch),
                    _ => anchor = Some(a),
                },
                Prepared::Vectors(v) if !v.is_empty() => match dim {
                    Some(d) if d != v[0].len() => {
                        return Err(Error::DimensionMismatch {
                            left: d,
                            right: v[0].len(),
                        })
                    }
                    _ => dim = Some(v[0].len()),
                },
                _ => {}
            }
        }
        let kind = match spec {
            KernelSpec::ExpHamming { lambda, .. } | KernelSpec::TiltedExpHamming { lambda, .. } => {
                FastKind::Hamming {
                    lambda: *lambda,
                    tilted: matches!(spec, KernelSpec::TiltedExpHamming { .. }),
                    table: (0..DECAY_TABLE).map(|d| exp_decay(*lambda, d)).collect(),
                }
            }
            KernelSpec::Gaussian { sigma } | KernelSpec::MeanEmbeddingGaussian { sigma } => {
                FastKind::Gaussian {
                    sigma: resolved_sigma(spec, *sigma)?,
                }
            }
            KernelSpec::DistExpMmd { sigma, inner } => {
                resolved_sigma(spec, *sigma)?;
                let sets: Vec<&[Sequence]> = sets
                    .iter()
                    .flat_map(|s| match s {
                        Prepared::Samples(v) => v.clone(),
                        _ => Vec::new(),
                    })
                    .collect();
                if let Some(f) = sets.iter().flat_map(|s| s.first()).next() {
                    if sets.iter().flat_map(|s| s.iter()).any(|s| !s.same_alphabet(f)) {
                        return Err(Error::AlphabetMismatch);
                    }
                }
                if let Some(bad) = sets.iter().find(|s| s.len() < 2) {
                    return Err(Error::TooFewSamples {
                        needed: 2,
                        got: bad.len(),
                    });
                }
                if matches!(**inner, KernelSpec::TiltedExpHamming { .. })
                    && sets.iter().flat_map(|s| s.iter()).any(|s| s.is_empty())
                {
                    return Err(Error::InvalidInput(
                        "tilted kernel is undefined on empty sequences".into(),
                    ));
                }
                FastKind::Dist
            }
        };
        Ok(FastKernel { spec, kind })
    }

    #[inline]
    pub(crate) fn decay(&self, d: u32) -> f64 {
        match &self.kind {
            FastKind::Hamming { lambda, table, .. } => table
                .get(d as usize)
                .copied()
                .unwrap_or_else(|| exp_decay(*lambda, d as usize)),
            _ => unreachable!("decay is only defined for Hamming kernels"),
        }
    }

    #[inline]
    pub(crate) fn eval(&self, a: &Prepared<'_>, i: usize, b: &Prepared<'_>, j: usize) -> f64 {
        match (&self.kind, a, b) {
            (
                FastKind::Hamming { tilted, .. },
                Prepared::Packed { seqs: sa, width, .. },
                Prepared::Packed { seqs: sb, .. },
            ) => {
                let (x, y) = (&sa[i], &sb[j]);
                let k = self.decay(x.hamming(y, *width));
                if *tilted {
                    k / (x.len() as usize * y.len() as usize) as f64
                } else {
                    k
                }
            }
            (FastKind::Gaussian { sigma }, Prepared::Vectors(va), Prepared::Vectors(vb)) => {
                gaussian_of_sq(sq_dist(va[i], vb[j]), *sigma)
            }
            (FastKind::Dist, Prepared::Samples(pa), Prepared::Samples(pb)) => self
                .spec
                .eval(ItemRef::Samples(pa[i]), ItemRef::Samples(pb[j]))
                .expect("sample sets validated by FastKernel::new"),
            _ => unreachable!("prepared sets built for a different kernel"),
        }
    }
}

/// Flat, dispatch-free evaluator for the Hamming kernels over a single
/// packed set. Produces bit-identical values to [`FastKernel::eval`].
pub(crate) struct HammingTable {
    /// First packed word of every sequence (zero when empty).
    heads: Vec<u64>,
    /// Remaining words, addressed through `tail_offsets`.
    tails: Vec<u64>,
    tail_offsets: Vec<u32>,
    lens: Vec<u32>,
    width: LaneWidth,
    table: Vec<f64>,
    lambda: f64,
    tilted: bool,
}

impl HammingTable {
    pub(crate) fn new(fast: &FastKernel<'_>, set: &Prepared<'_>) -> Option<Self> {
        let (FastKind::Hamming { lambda, tilted, table }, Prepared::Packed { seqs, width, .. }) =
            (&fast.kind, set)
        else {
            return None;
        };
        let mut tails = Vec::new();
        let mut tail_offsets = Vec::with_capacity(seqs.len() + 1);
        tail_offsets.push(0);
        for s in seqs {
            if let Some(rest) = s.words().get(1..) {
                tails.extend_from_slice(rest);
            }
            tail_offsets.push(tails.len() as u32);
        }
        Some(HammingTable {
            heads: seqs.iter().map(|s| s.words().first().copied().unwrap_or(0)).collect(),
            tails,
            tail_offsets,
            lens: seqs.iter().map(|s| s.len()).collect(),
            width: *width,
            table: table.clone(),
            lambda: *lambda,
            tilted: *tilted,
        })
    }

    #[inline]
    fn tail(&self, i: usize) -> &[u64] {
        &self.tails[self.tail_offsets[i] as usize..self.tail_offsets[i + 1] as usize]
    }

    #[inline]
    pub(crate) fn eval(&self, i: usize, j: usize) -> f64 {
        let mut d = self.width.nonzero_lanes(self.heads[i] ^ self.heads[j]);
        let (ti, tj) = (self.tail(i), self.tail(j));
        if !(ti.is_empty() && tj.is_empty()) {
            d += packed::hamming_words(ti, tj, self.width);
        }
        let d = d as usize;
        let k = match self.table.get(d) {
            Some(&v) => v,
            None => exp_decay(self.lambda, d),
        };
        if self.tilted {
            k / (self.lens[i] as usize * self.lens[j] as usize) as f64
        } else {
            k
        }
    }
}
