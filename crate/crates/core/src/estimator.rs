//! The pairwise `h` kernel, its symmetric matrix over a sample, and the
//! unbiased ACMMD² U-statistic.
//!
//! For triplets `Z_i = (x_i, y_i, ỹ_i)`:
//!
//! ```text
//! g(i, j) = k_Y(ỹ_i, ỹ_j) + k_Y(y_i, y_j) - k_Y(ỹ_i, y_j) - k_Y(y_i, ỹ_j)
//! h(i, j) = k_X(x_i, x_j) * g(i, j)
//! ACMMD²  = 2 / (N (N - 1)) * Σ_{i<j} h(i, j)
//! ```

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{resolve_bandwidth, FastKernel, Item, ItemRef, KernelSpec, Prepared};
use crate::matrix::Matrix;
use crate::parallel::map_indexed;
use crate::sequence::Sequence;

/// An output sequence together with an optional pre-pooled embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub tokens: Sequence,
    pub embedding: Option<Vec<f64>>,
}

impl Outcome {
    pub fn new(tokens: Sequence) -> Self {
        Outcome {
            tokens,
            embedding: None,
        }
    }

    pub fn with_embedding(tokens: Sequence, embedding: Vec<f64>) -> Self {
        Outcome {
            tokens,
            embedding: Some(embedding),
        }
    }

    /// The view of this outcome that `kernel` consumes.
    pub fn item(&self, kernel: &KernelSpec) -> Result<ItemRef<'_>> {
        if kernel.is_vector_kernel() {
            self.embedding
                .as_deref()
                .map(ItemRef::Vector)
                .ok_or_else(|| Error::IncompatibleItem {
                    kernel: kernel.name().to_string(),
                    item: "an outcome without embedding",
                })
        } else {
            Ok(ItemRef::Tokens(&self.tokens))
        }
    }
}

impl From<Sequence> for Outcome {
    fn from(tokens: Sequence) -> Self {
        Outcome::new(tokens)
    }
}

/// One observation: conditioning input, true output and one model sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub x: Item,
    pub y: Outcome,
    pub y_model: Outcome,
}

impl Triplet {
    pub fn new(x: Item, y: impl Into<Outcome>, y_model: impl Into<Outcome>) -> Self {
        Triplet {
            x,
            y: y.into(),
            y_model: y_model.into(),
        }
    }

    /// The same observation with `y` and `y_model` exchanged.
    pub fn swapped(&self) -> Self {
        Triplet {
            x: self.x.clone(),
            y: self.y_model.clone(),
            y_model: self.y.clone(),
        }
    }
}

/// `g` on one pair of observations. Antisymmetric under exchanging `y` and
/// `ỹ` within either pair.
pub fn g_term(
    y1: ItemRef<'_>,
    m1: ItemRef<'_>,
    y2: ItemRef<'_>,
    m2: ItemRef<'_>,
    ky: &KernelSpec,
) -> Result<f64> {
    Ok(combine_g(
        ky.eval(m1, m2)?,
        ky.eval(y1, y2)?,
        ky.eval(m1, y2)?,
        ky.eval(y1, m2)?,
    ))
}

/// Grouped as `(mm + yy) - (my + ym)`: exchanging `y` and `ỹ` in either
/// record yields the exact floating-point negation, and exchanging the two
/// records leaves the value bit-for-bit unchanged.
#[inline]
pub(crate) fn combine_g(mm: f64, yy: f64, my: f64, ym: f64) -> f64 {
    (mm + yy) - (my + ym)
}

/// Symmetric table of `h(Z_i, Z_j)`. The diagonal is stored but never read
/// by any statistic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HMatrix {
    values: Matrix,
}

impl HMatrix {
    /// Wraps a precomputed table; it must be square and exactly symmetric.
    pub fn from_matrix(values: Matrix) -> Result<Self> {
        if values.rows() < 2 {
            return Err(Error::TooFewSamples {
                needed: 2,
                got: values.rows(),
            });
        }
        if !values.is_symmetric() {
            return Err(Error::InvalidInput("h matrix must be symmetric".into()));
        }
        Ok(HMatrix { values })
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    /// Builds from the strict upper triangle, given row by row.
    pub(crate) fn from_upper_rows(n: usize, upper: Vec<Vec<f64>>) -> Self {
        let mut m = Matrix::zeros(n, n);
        for (i, row) in upper.into_iter().enumerate() {
            for (off, v) in row.into_iter().enumerate() {
                let j = i + 1 + off;
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        HMatrix { values: m }
    }

    pub(crate) fn set_diagonal(&mut self, diag: &[f64]) {
        for (i, &v) in diag.iter().enumerate() {
            self.values.set(i, i, v);
        }
    }
}

/// `h` matrix together with the kernels it was computed with (median
/// bandwidths replaced by their data-dependent values).
#[derive(Debug, Clone)]
pub struct HComputation {
    pub h: HMatrix,
    pub kernel_x: KernelSpec,
    pub kernel_y: KernelSpec,
}

/// Resolves a `median` bandwidth on the output kernel against every `y` and
/// `ỹ` embedding in the sample.
pub(crate) fn resolve_output_kernel<'a>(
    ky: &KernelSpec,
    outcomes: impl Iterator<Item = &'a Outcome>,
) -> Result<KernelSpec> {
    if !ky.is_vector_kernel() {
        return Ok(ky.clone());
    }
    let items = outcomes.map(|o| o.item(ky)).collect::<Result<Vec<_>>>()?;
    resolve_bandwidth(ky, &items)
}

/// Builds the `h` matrix. Median bandwidths are resolved over the sample.
pub fn h_matrix(samples: &[Triplet], kx: &KernelSpec, ky: &KernelSpec) -> Result<HComputation> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    if matches!(kx, KernelSpec::DistExpMmd { .. }) || matches!(ky, KernelSpec::DistExpMmd { .. }) {
        return Err(Error::InvalidKernelSpec {
            spec: format!("{kx} / {ky}"),
            reason: "distribution kernels belong to the reliability estimator".into(),
        });
    }
    let xs: Vec<ItemRef> = samples.iter().map(|t| t.x.as_ref()).collect();
    let kx = resolve_bandwidth(kx, &xs)?;
    let ky = resolve_output_kernel(ky, samples.iter().flat_map(|t| [&t.y, &t.y_model]))?;

    let ys = samples.iter().map(|t| t.y.item(&ky)).collect::<Result<Vec<_>>>()?;
    let ms = samples.iter().map(|t| t.y_model.item(&ky)).collect::<Result<Vec<_>>>()?;
    let px = Prepared::new(&kx, &xs).map_err(|e| heterogeneous("x", e))?;
    let py = Prepared::new(&ky, &ys).map_err(|e| heterogeneous("y", e))?;
    let pm = Prepared::new(&ky, &ms).map_err(|e| heterogeneous("y_model", e))?;
    let fx = FastKernel::new(&kx, &[&px])?;
    let fy = FastKernel::new(&ky, &[&py, &pm]).map_err(|e| heterogeneous("y/y_model", e))?;

    let entry = |i: usize, j: usize| {
        let g = combine_g(
            fy.eval(&pm, i, &pm, j),
            fy.eval(&py, i, &py, j),
            fy.eval(&pm, i, &py, j),
            fy.eval(&py, i, &pm, j),
        );
        fx.eval(&px, i, &px, j) * g
    };
    let upper = map_indexed(n, |i| (i + 1..n).map(|j| entry(i, j)).collect::<Vec<_>>());
    let mut h = HMatrix::from_upper_rows(n, upper);
    let diag: Vec<f64> = (0..n).map(|i| entry(i, i)).collect();
    h.set_diagonal(&diag);
    Ok(HComputation {
        h,
        kernel_x: kx,
        kernel_y: ky,
    })
}

fn heterogeneous(field: &str, e: Error) -> Error {
    match e {
        Error::AlphabetMismatch | Error::DimensionMismatch { .. } => {
            Error::Heterogeneous(format!("{field}: {e}"))
        }
        other => other,
    }
}

/// Sum of `weight(i, j) * H[i][j]` over `i < j`, row-major.
#[inline]
pub(crate) fn upper_sum(h: &HMatrix, mut weight: impl FnMut(usize, usize) -> f64) -> f64 {
    let n = h.n();
    let mut total = 0.0;
    for i in 0..n {
        let row = h.values.row(i);
        for (j, &v) in row.iter().enumerate().skip(i + 1) {
            total += weight(i, j) * v;
        }
    }
    total
}

#[inline]
pub(crate) fn pair_mean(total: f64, n: usize) -> f64 {
    total * 2.0 / (n as f64 * (n as f64 - 1.0))
}

/// Unbiased ACMMD² estimate: the mean of `H` over pairs `i < j`. May be
/// negative.
pub fn acmmd_sq(h: &HMatrix) -> f64 {
    pair_mean(upper_sum(h, |_, _| 1.0), h.n())
}

/// Plug-in estimate of `σ²_h = 4 Var_{Z₂}[E_{Z₁} h(Z₁, Z₂)]`: four times the
/// sample variance of the off-diagonal row means of `H`.
pub fn sigma_h_sq(h: &HMatrix) -> Result<f64> {
    let n = h.n();
    if n < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: n });
    }
    let means: Vec<f64> = (0..n)
        .map(|i| {
            let row = h.values.row(i);
            let s: f64 = row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).sum();
            s / (n - 1) as f64
        })
        .collect();
    let mean = means.iter().sum::<f64>() / n as f64;
    let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (n - 1) as f64;
    Ok(4.0 * var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::Alphabet;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn ab() -> Arc<Alphabet> {
        Arc::new(Alphabet::new(&["A", "B", "STOP"], Some("STOP")).unwrap())
    }

    fn seq(a: &Arc<Alphabet>, s: &str) -> Sequence {
        let toks: Vec<String> = s.chars().map(|c| c.to_string()).collect();
        Sequence::parse(a, &toks).unwrap()
    }

    fn triplet(a: &Arc<Alphabet>, x: f64, y: &str, m: &str) -> Triplet {
        Triplet::new(Item::Vector(vec![x]), seq(a, y), seq(a, m))
    }

    #[test]
    fn g_term_examples() {
        let a = ab();
        let k = KernelSpec::exp_hamming(1.0);
        let (sa, sb, sab) = (seq(&a, "A"), seq(&a, "B"), seq(&a, "AB"));
        let t = ItemRef::Tokens;
        assert_eq!(g_term(t(&sab), t(&sab), t(&sa), t(&sa), &k).unwrap(), 0.0);
        let g = g_term(t(&sa), t(&sb), t(&sa), t(&sb), &k).unwrap();
        assert_relative_eq!(g, 2.0 * (1.0 - (-1.0f64).exp()), epsilon = 1e-15);
        let swapped = g_term(t(&sb), t(&sa), t(&sa), t(&sb), &k).unwrap();
        assert_eq!(swapped, -g);
    }

    #[test]
    fn h_matrix_zero_when_outputs_match() {
        let a = ab();
        let data: Vec<Triplet> = ["", "A", "ABB", "BA"]
            .iter()
            .enumerate()
            .map(|(i, s)| triplet(&a, i as f64, s, s))
            .collect();
        let h = h_matrix(&data, &KernelSpec::gaussian(1.0), &KernelSpec::exp_hamming(1.0))
            .unwrap()
            .h;
        assert!(h.values().as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(acmmd_sq(&h), 0.0);
    }

    #[test]
    fn constant_x_kernel_gives_g() {
        let a = ab();
        let data = vec![
            triplet(&a, 0.0, "AB", "B"),
            triplet(&a, 0.0, "", "AAA"),
            triplet(&a, 0.0, "BB", "BA"),
        ];
        let ky = KernelSpec::exp_hamming(0.7);
        let h = h_matrix(&data, &KernelSpec::gaussian(1.0), &ky).unwrap().h;
        for i in 0..3 {
            for j in 0..3 {
                let (ti, tj) = (&data[i], &data[j]);
                let g = g_term(
                    ItemRef::Tokens(&ti.y.tokens),
                    ItemRef::Tokens(&ti.y_model.tokens),
                    ItemRef::Tokens(&tj.y.tokens),
                    ItemRef::Tokens(&tj.y_model.tokens),
                    &ky,
                )
                .unwrap();
                assert_eq!(h.get(i, j), g);
            }
        }
    }

    #[test]
    fn h_matrix_errors() {
        let a = ab();
        let one = vec![triplet(&a, 0.0, "A", "B")];
        let kx = KernelSpec::gaussian(1.0);
        let ky = KernelSpec::exp_hamming(1.0);
        assert!(matches!(h_matrix(&one, &kx, &ky), Err(Error::TooFewSamples { .. })));

        let other = Arc::new(Alphabet::new(&["C", "D"], None).unwrap());
        let mixed = vec![triplet(&a, 0.0, "A", "B"), triplet(&other, 0.0, "C", "D")];
        assert!(matches!(h_matrix(&mixed, &kx, &ky), Err(Error::Heterogeneous(_))));

        let dims = vec![
            Triplet::new(Item::Vector(vec![0.0]), seq(&a, "A"), seq(&a, "A")),
            Triplet::new(Item::Vector(vec![0.0, 1.0]), seq(&a, "A"), seq(&a, "A")),
        ];
        assert!(matches!(h_matrix(&dims, &kx, &ky), Err(Error::Heterogeneous(_))));

        let no_embedding = vec![triplet(&a, 0.0, "A", "B"), triplet(&a, 1.0, "A", "B")];
        assert!(matches!(
            h_matrix(&no_embedding, &kx, &KernelSpec::gaussian(1.0)),
            Err(Error::IncompatibleItem { .. })
        ));
    }

    #[test]
    fn acmmd_sq_on_two_samples_is_the_single_entry() {
        let h = HMatrix::from_matrix(Matrix::from_rows(2, 2, vec![9.0, -0.3, -0.3, 4.0])).unwrap();
        assert_eq!(acmmd_sq(&h), -0.3);
        let z = HMatrix::from_matrix(Matrix::zeros(5, 5)).unwrap();
        assert_eq!(acmmd_sq(&z), 0.0);
    }

    #[test]
    fn sigma_h_examples() {
        let flat = Matrix::from_rows(3, 3, vec![7.0, 2.0, 2.0, 2.0, -1.0, 2.0, 2.0, 2.0, 0.0]);
        assert_eq!(sigma_h_sq(&HMatrix::from_matrix(flat).unwrap()).unwrap(), 0.0);

        // Off-diagonal pairs (0,1)=a, (0,2)=b, (1,2)=c give row means
        // (a+b)/2, (a+c)/2, (b+c)/2 = 0, 1, 2 for a = -1, b = 1, c = 3.
        let m = Matrix::from_rows(3, 3, vec![0.0, -1.0, 1.0, -1.0, 0.0, 3.0, 1.0, 3.0, 0.0]);
        assert_relative_eq!(sigma_h_sq(&HMatrix::from_matrix(m).unwrap()).unwrap(), 4.0);

        let small = HMatrix::from_matrix(Matrix::zeros(2, 2)).unwrap();
        assert!(sigma_h_sq(&small).is_err());
    }

    #[test]
    fn sigma_h_matches_direct_formula() {
        let n = 7;
        let mut state = 99u64;
        let mut rnd = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = rnd();
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        let h = HMatrix::from_matrix(m.clone()).unwrap();
        let mut means = Vec::new();
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                if i != j {
                    s += m.get(i, j);
                }
            }
            means.push(s / (n - 1) as f64);
        }
        let mu: f64 = means.iter().sum::<f64>() / n as f64;
        let var: f64 = means.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert_relative_eq!(sigma_h_sq(&h).unwrap(), 4.0 * var, max_relative = 1e-14);
    }

    #[test]
    fn from_matrix_rejects_asymmetric() {
        let m = Matrix::from_rows(2, 2, vec![0.0, 1.0, 2.0, 0.0]);
        assert!(HMatrix::from_matrix(m).is_err());
    }
}
