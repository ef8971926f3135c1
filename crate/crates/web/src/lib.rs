//! Browser bindings: sample the equilibrium measure, estimate the Lyapunov
//! exponent, and histogram normalized Birkhoff sums for a catalog map.

use ergolab::observables::{center, make_holder};
use ergolab::sampler::{default_depth, mu_batch};
use ergolab::stats::{clt_test, covariance_series, sigma_spectral};
use ergolab::{
    catalog_list, lookup, lyapunov, Ensemble, Kernel, ProjectivePoint, RationalMap, SeedSpec,
};
use wasm_bindgen::prelude::*;

fn rational(name: &str) -> Result<(RationalMap, ProjectivePoint), String> {
    let entry = lookup(name).map_err(|e| e.to_string())?;
    let map = entry
        .rational()
        .cloned()
        .ok_or_else(|| format!("{name} is not a map of the projective line"))?;
    Ok((map, entry.root()))
}

fn ensemble(name: &str, seed: u32) -> Result<Ensemble, String> {
    let (f, root) = rational(name)?;
    let depth = default_depth(f.degree());
    Ok(Ensemble::new(f, root, depth, SeedSpec::new(seed as u64, 0)))
}

/// Names of the maps of the projective line, one per line.
pub fn map_names() -> String {
    catalog_list()
        .into_iter()
        .filter(|e| e.rational().is_some())
        .map(|e| format!("{}\t{}", e.name, e.formula))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Affine coordinates `[x0, y0, x1, y1, ...]` of `n` samples; samples at
/// infinity are dropped.
pub fn sample(name: &str, n: usize, seed: u32) -> Result<Vec<f64>, String> {
    let (f, root) = rational(name)?;
    let batch = mu_batch(
        &f,
        &root,
        default_depth(f.degree()),
        n,
        SeedSpec::new(seed as u64, 0),
    )
    .map_err(|e| e.to_string())?;
    Ok(batch
        .points
        .iter()
        .filter_map(|p| p.affine())
        .flat_map(|z| [z.re, z.im])
        .collect())
}

/// `[chi, stderr, (1/2) log d]`.
pub fn exponent(name: &str, orbits: usize, seed: u32) -> Result<Vec<f64>, String> {
    let l = lyapunov(&ensemble(name, seed)?, 200, orbits).map_err(|e| e.to_string())?;
    Ok(vec![l.chi.value, l.chi.stderr, l.lower_bound])
}

/// `[ks, sigma, left edge, bin width, counts...]` for the real part.
pub fn clt(name: &str, n: usize, samples: usize, seed: u32) -> Result<Vec<f64>, String> {
    let ens = ensemble(name, seed)?;
    let raw = make_holder(Kernel::RealPart, 1.0);
    let (psi, _) = center(&raw, &ens.with_stream(1), 20_000).map_err(|e| e.to_string())?;
    let series =
        covariance_series(&psi, &ens.with_stream(2), 20, 200, 400).map_err(|e| e.to_string())?;
    let sigma = sigma_spectral(&series).map_err(|e| e.to_string())?;
    let r = clt_test(&psi, &ens.with_stream(3), n, samples, &sigma).map_err(|e| e.to_string())?;
    let h = &r.histogram;
    let mut out = vec![
        r.ks_distance,
        r.sigma_used,
        h.edges[0],
        h.edges[1] - h.edges[0],
    ];
    out.extend(h.counts.iter().map(|&c| c as f64));
    Ok(out)
}

#[wasm_bindgen(js_name = mapNames)]
pub fn map_names_js() -> String {
    map_names()
}

#[wasm_bindgen(js_name = samplePoints)]
pub fn sample_js(name: &str, n: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    sample(name, n, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = lyapunovExponent)]
pub fn exponent_js(name: &str, orbits: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    exponent(name, orbits, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = cltHistogram)]
pub fn clt_js(name: &str, n: usize, samples: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    clt(name, n, samples, seed).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_skip_product_maps() {
        let names = map_names();
        assert!(names.contains("lattes4"));
        assert!(!names.contains("product22"));
        assert!(sample("product22", 10, 1).is_err());
    }

    #[test]
    fn circle_samples() {
        let pts = sample("power2", 200, 7).unwrap();
        assert_eq!(pts.len(), 400);
        for xy in pts.chunks(2) {
            assert!((xy[0].hypot(xy[1]) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn exponent_and_histogram() {
        let l = exponent("chebyshev2", 50, 3).unwrap();
        assert!((l[0] - std::f64::consts::LN_2).abs() < 0.05);
        let h = clt("power2", 200, 400, 3).unwrap();
        assert!(h[0] < 0.2 && h[4..].iter().sum::<f64>() <= 400.0);
    }
}
