//! Browser bindings: closed-form curves, a seeded test on synthetic data and
//! the sequence kernel between two words. Every export returns JSON text.

use std::sync::Arc;

use acmmd::hypothesis::acmmd_test;
use acmmd::rng::{domain, stream};
use acmmd::toy::{acmmd_rel_sq_exact, acmmd_sq_exact, ToyConfig};
use acmmd::{Alphabet, HammingMode, ItemRef, KernelSpec, Sequence};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
struct CurvePoint {
    delta_p: f64,
    acmmd_sq: f64,
    acmmd_rel_sq: f64,
}

/// Population ACMMD² and ACMMD–Rel² at `points` evenly spaced
/// perturbations in `[0, delta_max]`.
pub fn exact_curve_json(lambda: f64, sigma: f64, delta_max: f64, points: usize) -> Result<String, String> {
    if points < 2 {
        return Err("need at least two points".into());
    }
    let base = ToyConfig {
        lambda,
        sigma,
        kx: KernelSpec::gaussian(sigma),
        ..ToyConfig::default()
    };
    let curve = (0..points)
        .map(|i| {
            let c = base.with_delta_p(delta_max * i as f64 / (points - 1) as f64);
            Ok(CurvePoint {
                delta_p: c.delta_p,
                acmmd_sq: acmmd_sq_exact(&c)?,
                acmmd_rel_sq: acmmd_rel_sq_exact(&c)?,
            })
        })
        .collect::<acmmd::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    serde_json::to_string(&curve).map_err(|e| e.to_string())
}

/// Samples `n` synthetic triplets at perturbation `delta_p` and runs the
/// bootstrap test; the report carries the exact population value too.
pub fn toy_test_json(n: usize, delta_p: f64, bootstrap: usize, alpha: f64, seed: u64) -> Result<String, String> {
    let c = ToyConfig::default().with_delta_p(delta_p);
    let data = c
        .sample_triplets(n, &mut stream(seed, domain::TOY_DATA, 0))
        .map_err(|e| e.to_string())?;
    let report = acmmd_test(&data, &c.kx, &c.ky(), alpha, bootstrap, seed).map_err(|e| e.to_string())?;
    let exact = acmmd_sq_exact(&c).map_err(|e| e.to_string())?;
    serde_json::to_string(&serde_json::json!({ "report": report, "exact": exact })).map_err(|e| e.to_string())
}

/// Terminal-padded Hamming distance and both exponentiated Hamming kernels
/// between two words, one character per token.
pub fn word_kernel_json(a: &str, b: &str, lambda: f64) -> Result<String, String> {
    let mut symbols: Vec<String> = a.chars().chain(b.chars()).map(String::from).collect();
    symbols.sort();
    symbols.dedup();
    if symbols.is_empty() {
        symbols.push("a".into());
    }
    let alphabet = Arc::new(Alphabet::new(&symbols, None).map_err(|e| e.to_string())?);
    let parse = |w: &str| {
        let tokens: Vec<String> = w.chars().map(String::from).collect();
        Sequence::parse(&alphabet, &tokens).map_err(|e| e.to_string())
    };
    let (x, y) = (parse(a)?, parse(b)?);
    let mode = HammingMode::TerminalPadded;
    let eval = |k: KernelSpec| k.eval(ItemRef::Tokens(&x), ItemRef::Tokens(&y)).ok();
    let distance = acmmd::kernels::hamming_distance(&x, &y, mode).map_err(|e| e.to_string())?;
    serde_json::to_string(&serde_json::json!({
        "distance": distance,
        "exp_hamming": eval(KernelSpec::ExpHamming { lambda, mode }),
        "tilted_exp_hamming": eval(KernelSpec::TiltedExpHamming { lambda, mode }),
    }))
    .map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = exactCurve)]
pub fn exact_curve(lambda: f64, sigma: f64, delta_max: f64, points: usize) -> Result<String, JsError> {
    exact_curve_json(lambda, sigma, delta_max, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = toyTest)]
pub fn toy_test(n: usize, delta_p: f64, bootstrap: usize, alpha: f64, seed: u32) -> Result<String, JsError> {
    toy_test_json(n, delta_p, bootstrap, alpha, u64::from(seed)).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = wordKernel)]
pub fn word_kernel(a: &str, b: &str, lambda: f64) -> Result<String, JsError> {
    word_kernel_json(a, b, lambda).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn curve_starts_at_zero_and_grows() {
        let v: Value = serde_json::from_str(&exact_curve_json(1.0, 1.0, 0.25, 6).unwrap()).unwrap();
        let pts = v.as_array().unwrap();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0]["acmmd_sq"], 0.0);
        let last = &pts[5];
        assert_eq!(last["delta_p"], 0.25);
        assert_eq!(last["acmmd_sq"].as_f64().unwrap(), acmmd_sq_exact(&ToyConfig::default()).unwrap());
        assert!(exact_curve_json(1.0, 1.0, 0.25, 1).is_err());
        assert!(exact_curve_json(1.0, 1.0, 0.6, 3).is_err());
    }

    #[test]
    fn toy_test_is_seeded() {
        let a = toy_test_json(30, 0.2, 20, 0.05, 3).unwrap();
        assert_eq!(a, toy_test_json(30, 0.2, 20, 0.05, 3).unwrap());
        let v: Value = serde_json::from_str(&a).unwrap();
        assert_eq!(v["report"]["n"], 30);
    }

    #[test]
    fn word_kernel_counts_mismatches() {
        let v: Value = serde_json::from_str(&word_kernel_json("abc", "abd", 1.0).unwrap()).unwrap();
        assert_eq!(v["distance"], 1);
        assert!((v["exp_hamming"].as_f64().unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        let v: Value = serde_json::from_str(&word_kernel_json("", "", 1.0).unwrap()).unwrap();
        assert_eq!(v["distance"], 0);
        assert!(v["tilted_exp_hamming"].is_null());
    }
}
