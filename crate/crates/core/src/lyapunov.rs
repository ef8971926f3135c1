//! Lyapunov exponents and the Lattès probe.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::estimate::{mean_stderr, Estimate};
use crate::map::ProductMap;
use crate::observables::{
    center_along_orbits, make_log_derivative, make_log_jacobian, CenteringReport,
};
use crate::point::ProjectivePoint;
use crate::sampler::{default_depth, Ensemble};
use crate::stats::{
    covariance_series, sigma_birkhoff, sigma_spectral, SigmaEstimate, DEFAULT_J_MAX,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub chi: Estimate,
    pub n: usize,
    pub orbits: usize,
    pub redrawn: u64,
    /// `(1/2) log d`.
    pub lower_bound: f64,
}

impl LyapunovEstimate {
    pub fn respects_lower_bound(&self) -> bool {
        self.chi.value >= self.lower_bound - 3.0 * self.chi.stderr
    }
}

/// `(1/n) S_n(log spherical derivative)` averaged over `orbits` orbits.
pub fn lyapunov(ens: &Ensemble, n: usize, orbits: usize) -> Result<LyapunovEstimate> {
    if n < 50 {
        return Err(LabError::Precondition(
            "Lyapunov horizon must be at least 50".into(),
        ));
    }
    if orbits < 2 {
        return Err(LabError::Precondition("need at least 2 orbits".into()));
    }
    let psi = make_log_derivative(&ens.map)?;
    let rows: Vec<(f64, u32)> = (0..orbits as u64)
        .into_par_iter()
        .map(|i| {
            let (v, r) = ens.orbit_values(&psi, i, n - 1)?;
            Ok((v.iter().sum::<f64>() / n as f64, r))
        })
        .collect::<Result<_>>()?;
    let averages: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let mut chi = mean_stderr(&averages);
    if averages.iter().all(|&a| a == averages[0]) {
        chi.stderr = 0.0;
    }
    Ok(LyapunovEstimate {
        chi,
        n,
        orbits,
        redrawn: rows.iter().map(|r| r.1 as u64).sum(),
        lower_bound: 0.5 * (ens.map.degree() as f64).ln(),
    })
}

/// Per-factor exponents of a product map. The equilibrium measure of
/// `(f, g)` is the product of the factor measures, so each factor is sampled
/// from its own root on an independent stream.
pub fn lyapunov_product(
    map: &ProductMap,
    roots: (ProjectivePoint, ProjectivePoint),
    depth: usize,
    seed: crate::rng::SeedSpec,
    n: usize,
    orbits: usize,
) -> Result<[LyapunovEstimate; 2]> {
    let a = Ensemble::new(map.first.clone(), roots.0, depth, seed.substream(1));
    let b = Ensemble::new(map.second.clone(), roots.1, depth, seed.substream(2));
    Ok([lyapunov(&a, n, orbits)?, lyapunov(&b, n, orbits)?])
}

/// Parameters of [`lattes_probe`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LattesConfig {
    pub depth: Option<usize>,
    pub centering_orbits: usize,
    pub centering_length: usize,
    pub j_max: usize,
    pub spectral_orbits: usize,
    pub spectral_window: usize,
    pub birkhoff_schedule: Vec<usize>,
    pub birkhoff_orbits: usize,
    pub lyapunov_n: usize,
    pub lyapunov_orbits: usize,
    pub radii: Vec<f64>,
    pub centers: usize,
    /// Orbit segments and their length for the ball counts.
    pub density_orbits: usize,
    pub density_length: usize,
    pub sigma_threshold: f64,
    pub gap_threshold: f64,
}

impl Default for LattesConfig {
    fn default() -> Self {
        LattesConfig {
            depth: None,
            centering_orbits: 200,
            centering_length: 500,
            j_max: DEFAULT_J_MAX,
            spectral_orbits: 1500,
            spectral_window: 4000,
            birkhoff_schedule: vec![60, 125, 250, 500],
            birkhoff_orbits: 200,
            lyapunov_n: 200,
            lyapunov_orbits: 400,
            radii: vec![0.2, 0.1, 0.05, 0.025],
            centers: 20,
            density_orbits: 20_000,
            density_length: 50,
            sigma_threshold: 0.05,
            gap_threshold: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LattesVerdict {
    ConsistentWithLattes,
    /// `sigma_J` vanishes but the exponent is not minimal.
    NotMinimalExponent,
    SigmaJNonzero,
    Neither,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityRow {
    pub center: [f64; 4],
    /// `(r, mu(B(x, r)) / r^2)` with the standard error of the ratio.
    pub ratios: Vec<(f64, Estimate)>,
    pub hits: Vec<u64>,
    /// Largest over smallest ratio across the radii.
    pub spread: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LattesProbe {
    pub centering: CenteringReport,
    pub sigma_j: SigmaEstimate,
    pub sigma_j_birkhoff: SigmaEstimate,
    pub lyapunov: LyapunovEstimate,
    /// `2 chi - log d`, zero exactly when the exponent is minimal.
    pub pesin_gap: Estimate,
    pub density_ratios: Vec<DensityRow>,
    pub max_spread: f64,
    pub verdict: LattesVerdict,
    pub warnings: Vec<String>,
}

/// `sigma_J` of the centered log Jacobian, the exponent, and density ratios
/// of `mu` on chordal balls.
///
/// A vanishing `sigma_J` alone does not single out Lattès maps: `z^d` has
/// `J = 0` on the support of `mu`. The verdict requires a minimal exponent too.
pub fn lattes_probe(ens: &Ensemble, config: &LattesConfig) -> Result<LattesProbe> {
    let d = ens.map.degree();
    let ens = ens.with_depth(config.depth.unwrap_or_else(|| default_depth(d)));
    let mut warnings = Vec::new();
    let log_jac = make_log_jacobian(&ens.map)?;
    let (j, centering) = center_along_orbits(
        &log_jac,
        &ens.with_stream(1),
        config.centering_orbits,
        config.centering_length,
    )?;
    warnings.extend(centering.warnings.iter().cloned());
    let series = covariance_series(
        &j,
        &ens.with_stream(2),
        config.j_max,
        config.spectral_orbits,
        config.spectral_window,
    )?;
    let sigma_j = sigma_spectral(&series)?;
    let sigma_j_birkhoff = sigma_birkhoff(
        &j,
        &ens.with_stream(3),
        &config.birkhoff_schedule,
        config.birkhoff_orbits,
    )?;
    warnings.extend(sigma_j.warnings.iter().map(|w| format!("sigma_J: {w}")));
    let lyap = lyapunov(
        &ens.with_stream(4),
        config.lyapunov_n,
        config.lyapunov_orbits,
    )?;
    let log_d = (d as f64).ln();
    let pesin_gap = Estimate {
        value: 2.0 * lyap.chi.value - log_d,
        stderr: 2.0 * lyap.chi.stderr,
        exact: false,
    };
    if !lyap.respects_lower_bound() {
        warnings.push(format!("exponent {:.4} below (1/2) log d", lyap.chi.value));
    }
    let (density_ratios, max_spread) = density_ratios(&ens, config)?;
    let small = config.radii.iter().copied().fold(f64::INFINITY, f64::min);
    for row in &density_ratios {
        let k = config
            .radii
            .iter()
            .position(|&r| r == small)
            .expect("radius");
        if row.hits[k] < 100 {
            warnings.push(format!(
                "only {} hits in the ball of radius {small}",
                row.hits[k]
            ));
            break;
        }
    }
    let sigma_ok = sigma_j.sigma <= config.sigma_threshold;
    let gap_ok = pesin_gap.value.abs() <= config.gap_threshold;
    let verdict = match (sigma_ok, gap_ok) {
        (true, true) => LattesVerdict::ConsistentWithLattes,
        (true, false) => LattesVerdict::NotMinimalExponent,
        (false, true) => LattesVerdict::SigmaJNonzero,
        (false, false) => LattesVerdict::Neither,
    };
    Ok(LattesProbe {
        centering,
        sigma_j,
        sigma_j_birkhoff,
        lyapunov: lyap,
        pesin_gap,
        density_ratios,
        max_spread,
        verdict,
        warnings,
    })
}

fn density_ratios(ens: &Ensemble, config: &LattesConfig) -> Result<(Vec<DensityRow>, f64)> {
    let centers: Vec<ProjectivePoint> = (0..config.centers as u64)
        .map(|i| ens.with_stream(5).sample(i))
        .collect::<Result<_>>()?;
    let sampler = ens.with_stream(6);
    let (orbits, len) = (config.density_orbits, config.density_length);
    if orbits < 2 || len == 0 {
        return Err(LabError::Precondition(
            "density ratios need at least 2 orbits of positive length".into(),
        ));
    }
    let cells = centers.len() * config.radii.len();
    // Hit counts per orbit segment, one row per orbit.
    let counts: Vec<Vec<u32>> = (0..orbits as u64)
        .into_par_iter()
        .map(|i| {
            let orbit = sampler.orbit(i, len - 1)?;
            let mut c = vec![0u32; cells];
            for x in &orbit {
                for (a, q) in centers.iter().enumerate() {
                    let dist = x.chordal_distance(q);
                    for (b, &r) in config.radii.iter().enumerate() {
                        if dist < r {
                            c[a * config.radii.len() + b] += 1;
                        }
                    }
                }
            }
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let mut max_spread: f64 = 0.0;
    let rows = centers
        .iter()
        .enumerate()
        .map(|(a, q)| {
            let cell = |b: usize| a * config.radii.len() + b;
            let hits: Vec<u64> = (0..config.radii.len())
                .map(|b| counts.iter().map(|c| c[cell(b)] as u64).sum())
                .collect();
            let ratios: Vec<(f64, Estimate)> = config
                .radii
                .iter()
                .enumerate()
                .map(|(b, &r)| {
                    let freq: Vec<f64> = counts
                        .iter()
                        .map(|c| c[cell(b)] as f64 / len as f64)
                        .collect();
                    let e = mean_stderr(&freq);
                    (r, Estimate::new(e.value / (r * r), e.stderr / (r * r)))
                })
                .collect();
            let hi = ratios.iter().map(|r| r.1.value).fold(0.0, f64::max);
            let lo = ratios
                .iter()
                .map(|r| r.1.value)
                .fold(f64::INFINITY, f64::min);
            let spread = if lo > 0.0 { hi / lo } else { f64::INFINITY };
            max_spread = max_spread.max(spread);
            DensityRow {
                center: q.to_array(),
                ratios,
                hits,
                spread,
            }
        })
        .collect();
    Ok((rows, max_spread))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::RationalMap;
    use crate::rng::SeedSpec;
    use std::f64::consts::LN_2;

    #[test]
    fn power_map_exponent_is_exact() {
        let ens = Ensemble::new(
            RationalMap::power(2).unwrap(),
            ProjectivePoint::from_real(3.0),
            30,
            SeedSpec::new(3, 0),
        );
        let l = lyapunov(&ens, 50, 20).unwrap();
        assert!((l.chi.value - LN_2).abs() < 1e-12);
        assert!(l.respects_lower_bound());
        assert!(lyapunov(&ens, 49, 20).is_err());
    }

    #[test]
    fn product_factors() {
        let f = RationalMap::power(2).unwrap();
        let pm = ProductMap::new(f.clone(), RationalMap::chebyshev()).unwrap();
        let roots = (
            ProjectivePoint::from_real(3.0),
            ProjectivePoint::from_real(3.0),
        );
        let [a, b] = lyapunov_product(&pm, roots, 30, SeedSpec::new(3, 1), 100, 100).unwrap();
        assert!((a.chi.value - LN_2).abs() < 1e-12);
        assert!((b.chi.value - LN_2).abs() < 0.03, "{:?}", b.chi);
    }

    #[test]
    fn chebyshev_exponent() {
        let ens = Ensemble::new(
            RationalMap::chebyshev(),
            ProjectivePoint::from_real(3.0),
            30,
            SeedSpec::new(4, 0),
        );
        let l = lyapunov(&ens, 200, 400).unwrap();
        assert!((l.chi.value - LN_2).abs() < 0.02, "{:?}", l.chi);
    }
}
