//! Observables with logarithmic singularities: bounded Hölder kernels, the
//! log spherical derivative, the log Jacobian, coboundaries, centering and
//! the moment and regularity diagnostics around the singular set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::estimate::{linear_fit, mean_stderr, Estimate, LinearFit};
use crate::map::RationalMap;
use crate::point::ProjectivePoint;
use crate::sampler::{uniform_sphere_point, Ensemble};

/// Fraction of lowest samples dropped by the trimming diagnostic.
pub const TRIM_FRACTION: f64 = 0.001;

/// The evaluator of an observable.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Constant(f64),
    /// `Re(z) / (1 + |z|^2)`, zero at infinity.
    RealPart,
    /// `Im(z) / (1 + |z|^2)`, zero at infinity.
    ImagPart,
    /// `d(p, q)^h`.
    ChordalTo {
        q: ProjectivePoint,
        h: f64,
    },
    /// Real part of the affine coordinate; `+inf` at infinity.
    AffineRe,
    AffineIm,
    AffineModulus,
    /// `log f^#`.
    LogDerivative(RationalMap),
    /// `log Jac f = 2 log f^#`.
    LogJacobian(RationalMap),
    /// `g - g o f`.
    Coboundary {
        g: Box<Kernel>,
        map: RationalMap,
    },
    Scaled {
        factor: f64,
        inner: Box<Kernel>,
    },
}

impl Kernel {
    pub fn eval(&self, p: &ProjectivePoint) -> f64 {
        let (z0, z1) = p.coords();
        match self {
            Kernel::Constant(c) => *c,
            Kernel::RealPart => (z0 * z1.conj()).re / (z0.norm_sqr() + z1.norm_sqr()),
            Kernel::ImagPart => (z0 * z1.conj()).im / (z0.norm_sqr() + z1.norm_sqr()),
            Kernel::ChordalTo { q, h } => p.chordal_distance(q).powf(*h),
            Kernel::AffineRe => p.affine().map_or(f64::INFINITY, |z| z.re),
            Kernel::AffineIm => p.affine().map_or(f64::INFINITY, |z| z.im),
            Kernel::AffineModulus => p.affine().map_or(f64::INFINITY, |z| z.norm()),
            Kernel::LogDerivative(f) => f.spherical_derivative(p).ln(),
            Kernel::LogJacobian(f) => f.log_jacobian(p),
            Kernel::Coboundary { g, map } => match map.evaluate(p) {
                Ok(fp) => g.eval(p) - g.eval(&fp),
                Err(_) => f64::NAN,
            },
            Kernel::Scaled { factor, inner } => factor * inner.eval(p),
        }
    }
}

/// `psi = kernel - offset` together with its class-U data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Observable {
    pub kernel: Kernel,
    /// Points where `psi = -inf`.
    pub singular_set: Vec<ProjectivePoint>,
    /// Hölder exponent of `exp(psi)`.
    pub holder_exponent: f64,
    /// `psi >= rho log d(., singular_set)`.
    pub lower_exponent: f64,
    /// The subtracted mean, if the observable has been centered.
    pub centering: Option<Estimate>,
}

impl Observable {
    pub fn evaluate(&self, p: &ProjectivePoint) -> f64 {
        self.kernel.eval(p) - self.offset()
    }

    pub fn offset(&self) -> f64 {
        self.centering.map_or(0.0, |c| c.value)
    }

    pub fn is_centered(&self) -> bool {
        self.centering.is_some()
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kernel, Kernel::Constant(c) if c == self.offset())
    }

    /// Distance from `p` to the singular set, `1` when it is empty.
    pub fn singular_distance(&self, p: &ProjectivePoint) -> f64 {
        self.singular_set
            .iter()
            .map(|s| s.chordal_distance(p))
            .fold(1.0, f64::min)
    }

    /// `psi(p) - rho log d(p, N)`; nonnegative up to rounding for a valid
    /// class-U datum. Infinite when the singular set is empty.
    pub fn lower_bound_margin(&self, p: &ProjectivePoint) -> f64 {
        if self.singular_set.is_empty() {
            return f64::INFINITY;
        }
        self.evaluate(p) - self.lower_exponent * self.singular_distance(p).ln()
    }

    /// Marks the observable as centered at an analytically known mean.
    pub fn with_exact_mean(mut self, mean: f64) -> Self {
        let prior = self.offset();
        self.centering = Some(Estimate::exact(prior + mean));
        self
    }

    /// `c psi`, keeping the centering consistent.
    pub fn scaled(&self, factor: f64) -> Observable {
        Observable {
            kernel: Kernel::Scaled {
                factor,
                inner: Box::new(self.kernel.clone()),
            },
            centering: self.centering.map(|c| Estimate {
                value: factor * c.value,
                stderr: factor.abs() * c.stderr,
                exact: c.exact,
            }),
            ..self.clone()
        }
    }
}

/// Bounded kernels: empty singular set, `h` as declared.
pub fn make_holder(kernel: Kernel, h: f64) -> Observable {
    Observable {
        kernel,
        singular_set: Vec::new(),
        holder_exponent: h,
        lower_exponent: 1.0,
        centering: None,
    }
}

fn max_critical_multiplicity(f: &RationalMap) -> usize {
    f.critical_slice()
        .iter()
        .map(|(_, m)| *m)
        .max()
        .unwrap_or(1)
}

/// `log f^#` with singular set the critical points and `rho` one above the
/// largest local vanishing order.
pub fn make_log_derivative(f: &RationalMap) -> Result<Observable> {
    let crit = f.critical_points()?;
    Ok(Observable {
        kernel: Kernel::LogDerivative(f.clone()),
        singular_set: crit.iter().map(|(c, _)| *c).collect(),
        holder_exponent: 1.0,
        lower_exponent: (max_critical_multiplicity(f) + 1) as f64,
        centering: None,
    })
}

pub fn make_log_jacobian(f: &RationalMap) -> Result<Observable> {
    let crit = f.critical_points()?;
    Ok(Observable {
        kernel: Kernel::LogJacobian(f.clone()),
        singular_set: crit.iter().map(|(c, _)| *c).collect(),
        holder_exponent: 1.0,
        lower_exponent: 2.0 * (max_critical_multiplicity(f) + 1) as f64,
        centering: None,
    })
}

/// `g - g o f` for a bounded `g`. Its mean under any invariant measure is
/// zero, so it is marked centered exactly.
pub fn make_coboundary(g: &Observable, f: &RationalMap) -> Result<Observable> {
    if !g.singular_set.is_empty() {
        return Err(LabError::Precondition(
            "coboundaries are built from bounded observables".into(),
        ));
    }
    Ok(Observable {
        kernel: Kernel::Coboundary {
            g: Box::new(g.kernel.clone()),
            map: f.clone(),
        },
        singular_set: Vec::new(),
        holder_exponent: g.holder_exponent,
        lower_exponent: g.lower_exponent,
        centering: Some(Estimate::exact(0.0)),
    })
}

/// Result of [`center`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CenteringReport {
    pub mean: Estimate,
    pub trimmed_mean: f64,
    pub redrawn: u64,
    pub warnings: Vec<String>,
}

/// Subtracts the Monte Carlo mean of `psi` under the ensemble.
pub fn center(psi: &Observable, ens: &Ensemble, n: usize) -> Result<(Observable, CenteringReport)> {
    if let Kernel::Constant(c) = psi.kernel {
        let out = Observable {
            centering: Some(Estimate::exact(c)),
            ..psi.clone()
        };
        return Ok((
            out,
            CenteringReport {
                mean: Estimate::exact(c - psi.offset()),
                trimmed_mean: c - psi.offset(),
                redrawn: 0,
                warnings: Vec::new(),
            },
        ));
    }
    if n < 2 {
        return Err(LabError::Precondition(
            "centering needs at least 2 samples".into(),
        ));
    }
    let draws: Vec<(f64, u32)> = (0..n as u64)
        .into_par_iter()
        .map(|i| ens.sample_value(psi, i).map(|(_, v, r)| (v, r)))
        .collect::<Result<_>>()?;
    let redrawn = draws.iter().map(|(_, r)| *r as u64).sum();
    let mut values: Vec<f64> = draws.into_iter().map(|(v, _)| v).collect();
    let mean = mean_stderr(&values);
    values.sort_by(f64::total_cmp);
    let cut = ((n as f64 * TRIM_FRACTION).ceil() as usize).min(n - 1);
    let trimmed = &values[cut..];
    let trimmed_mean = trimmed.iter().sum::<f64>() / trimmed.len() as f64;
    let mut warnings = Vec::new();
    if (trimmed_mean - mean.value).abs() > 5.0 * mean.stderr + 1e-10 * (1.0 + mean.value.abs()) {
        warnings.push(format!(
            "trimmed mean {trimmed_mean:.6} differs from mean {:.6} by more than 5 stderr: singularity undersampled",
            mean.value
        ));
    }
    let total = Estimate {
        value: psi.offset() + mean.value,
        stderr: (psi.centering.map_or(0.0, |c| c.stderr).powi(2) + mean.stderr.powi(2)).sqrt(),
        exact: false,
    };
    Ok((
        Observable {
            centering: Some(total),
            ..psi.clone()
        },
        CenteringReport {
            mean,
            trimmed_mean,
            redrawn,
            warnings,
        },
    ))
}

/// Like [`center`], averaging `psi` along `orbits` orbit segments of length
/// `len`. The standard error is the spread of the orbit averages, which is
/// far below the i.i.d. error for observables with small variance, such as
/// coboundaries.
pub fn center_along_orbits(
    psi: &Observable,
    ens: &Ensemble,
    orbits: usize,
    len: usize,
) -> Result<(Observable, CenteringReport)> {
    if matches!(psi.kernel, Kernel::Constant(_)) {
        return center(psi, ens, 2);
    }
    if orbits < 2 || len == 0 {
        return Err(LabError::Precondition(
            "centering needs at least 2 orbits of positive length".into(),
        ));
    }
    let rows: Vec<(Vec<f64>, u32)> = (0..orbits as u64)
        .into_par_iter()
        .map(|i| ens.orbit_values(psi, i, len - 1))
        .collect::<Result<_>>()?;
    let redrawn = rows.iter().map(|(_, r)| *r as u64).sum();
    let averages: Vec<f64> = rows
        .iter()
        .map(|(v, _)| v.iter().sum::<f64>() / len as f64)
        .collect();
    let mean = mean_stderr(&averages);
    let mut values: Vec<f64> = rows.into_iter().flat_map(|(v, _)| v).collect();
    let pointwise = mean_stderr(&values).stderr;
    values.sort_by(f64::total_cmp);
    let cut = ((values.len() as f64 * TRIM_FRACTION).ceil() as usize).min(values.len() - 1);
    let trimmed = &values[cut..];
    let trimmed_mean = trimmed.iter().sum::<f64>() / trimmed.len() as f64;
    let mut warnings = Vec::new();
    if (trimmed_mean - mean.value).abs() > 5.0 * pointwise + 1e-10 * (1.0 + mean.value.abs()) {
        warnings.push(format!(
            "trimmed mean {trimmed_mean:.6} differs from mean {:.6} by more than 5 stderr: singularity undersampled",
            mean.value
        ));
    }
    let total = Estimate {
        value: psi.offset() + mean.value,
        stderr: (psi.centering.map_or(0.0, |c| c.stderr).powi(2) + mean.stderr.powi(2)).sqrt(),
        exact: false,
    };
    Ok((
        Observable {
            centering: Some(total),
            ..psi.clone()
        },
        CenteringReport {
            mean,
            trimmed_mean,
            redrawn,
            warnings,
        },
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MassRow {
    pub radius: f64,
    pub mass: Estimate,
    pub hits: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeighborhoodMassReport {
    pub moment: f64,
    pub rows: Vec<MassRow>,
    /// Fit of `log mass` against `log r` over radii with hits.
    pub fit: Option<LinearFit>,
    pub redrawn: u64,
    pub warnings: Vec<String>,
}

/// Estimates of `int_{N[r]} |psi|^p dmu` for each radius.
pub fn neighborhood_mass(
    psi: &Observable,
    ens: &Ensemble,
    moment: f64,
    radii: &[f64],
    n: usize,
) -> Result<NeighborhoodMassReport> {
    if psi.singular_set.is_empty() {
        return Err(LabError::Precondition(
            "observable has no singular set".into(),
        ));
    }
    if radii.iter().any(|&r| !(r > 0.0 && r < 0.5)) {
        return Err(LabError::Precondition("radii must lie in (0, 1/2)".into()));
    }
    let draws: Vec<(f64, f64, u32)> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            ens.sample_value(psi, i)
                .map(|(x, v, r)| (psi.singular_distance(&x), v.abs().powf(moment), r))
        })
        .collect::<Result<_>>()?;
    let redrawn = draws.iter().map(|d| d.2 as u64).sum();
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for &r in radii {
        let contrib: Vec<f64> = draws
            .iter()
            .map(|&(dist, v, _)| if dist < r { v } else { 0.0 })
            .collect();
        let hits = draws.iter().filter(|d| d.0 < r).count() as u64;
        if hits == 0 {
            warnings.push(format!(
                "no sample within r = {r}: estimate 0, 95% upper bound on the neighbourhood mass {:.3e}",
                3.0 / n as f64
            ));
        }
        rows.push(MassRow {
            radius: r,
            mass: mean_stderr(&contrib),
            hits,
        });
    }
    let (lx, ly): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|row| row.mass.value > 0.0)
        .map(|row| (row.radius.ln(), row.mass.value.ln()))
        .unzip();
    let fit = if lx.len() >= 2 {
        linear_fit(&lx, &ly)
    } else {
        None
    };
    if fit.is_none() {
        warnings.push("fewer than two radii with hits: no slope fit".into());
    }
    Ok(NeighborhoodMassReport {
        moment,
        rows,
        fit,
        redrawn,
        warnings,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HolderBin {
    /// `log10` of the smallest pair distance in the bin.
    pub log10_distance: f64,
    pub max_excess: f64,
    pub pairs: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HolderReport {
    pub exponent: f64,
    pub bins: Vec<HolderBin>,
    pub max_excess: f64,
    pub pass: bool,
}

/// Empirical check that `exp(psi)` is `h`-Hölder near the support of `mu`.
///
/// Pairs are a sample `p ~ mu` and a point at chordal distance `10^-u`,
/// `u ~ U[1, 8]`, in a random direction. The excess
/// `log|e^psi(p) - e^psi(q)| - h log d(p, q)` is binned by distance decade;
/// the probe passes when the excess in the finest decades does not exceed
/// the coarse ones by more than one unit.
pub fn holder_probe(psi: &Observable, ens: &Ensemble, pairs: usize) -> Result<HolderReport> {
    use rand::Rng;
    let h = psi.holder_exponent;
    let raw: Vec<(f64, f64)> = (0..pairs as u64)
        .into_par_iter()
        .map(|i| {
            let p = ens.sample(i)?;
            let mut rng = ens.seed.substream(0x4f4c).rng(i);
            let u: f64 = rng.random_range(1.0..8.0);
            let dir = uniform_sphere_point(&mut rng);
            let target = 10f64.powf(-u);
            let q = toward(&p, &dir, target);
            let d = p.chordal_distance(&q);
            let diff = (psi.evaluate(&p).exp() - psi.evaluate(&q).exp()).abs();
            Ok((d, diff))
        })
        .collect::<Result<_>>()?;
    let mut bins: Vec<HolderBin> = (1..8)
        .map(|k| HolderBin {
            log10_distance: -(k as f64 + 1.0),
            max_excess: f64::NEG_INFINITY,
            pairs: 0,
        })
        .collect();
    for (d, diff) in raw {
        if d <= 0.0 {
            continue;
        }
        let k = ((-d.log10()).floor() as isize - 1).clamp(0, 6) as usize;
        let excess = if diff == 0.0 {
            f64::NEG_INFINITY
        } else {
            diff.ln() - h * d.ln()
        };
        bins[k].pairs += 1;
        bins[k].max_excess = bins[k].max_excess.max(excess);
    }
    let coarse = bins[..3]
        .iter()
        .map(|b| b.max_excess)
        .fold(f64::NEG_INFINITY, f64::max);
    let fine = bins[4..]
        .iter()
        .map(|b| b.max_excess)
        .fold(f64::NEG_INFINITY, f64::max);
    let max_excess = bins
        .iter()
        .map(|b| b.max_excess)
        .fold(f64::NEG_INFINITY, f64::max);
    let pass = fine == f64::NEG_INFINITY || fine <= coarse.max(0.0) + 1.0;
    Ok(HolderReport {
        exponent: h,
        bins,
        max_excess,
        pass,
    })
}

/// A point at chordal distance `dist` from `p` on the arc towards `dir`.
fn toward(p: &ProjectivePoint, dir: &ProjectivePoint, dist: f64) -> ProjectivePoint {
    let dir = if p.chordal_distance(dir) < 1e-3 {
        dir.antipode()
    } else {
        *dir
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if p.chordal_distance(&p.interpolate(&dir, mid)) < dist {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    p.interpolate(&dir, 0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedSpec;
    use num_complex::Complex64;
    use std::f64::consts::LN_2;

    fn ens(f: RationalMap, root: f64) -> Ensemble {
        Ensemble::new(f, ProjectivePoint::from_real(root), 25, SeedSpec::new(3, 0))
    }

    #[test]
    fn kernel_examples() {
        let rp = make_holder(Kernel::RealPart, 1.0);
        assert!((rp.evaluate(&ProjectivePoint::from_real(1.0)) - 0.5).abs() < 1e-15);
        assert_eq!(rp.evaluate(&ProjectivePoint::infinity()), 0.0);
        let z = ProjectivePoint::from_affine(Complex64::new(-3.0, 2.0));
        assert!((rp.evaluate(&z) + 3.0 / 14.0).abs() < 1e-15);
        let q = ProjectivePoint::from_affine(Complex64::new(0.2, 0.1));
        let ch = make_holder(Kernel::ChordalTo { q, h: 1.0 }, 1.0);
        assert_eq!(ch.evaluate(&q), 0.0);
    }

    #[test]
    fn log_derivative_examples() {
        let sq = make_log_derivative(&RationalMap::power(2).unwrap()).unwrap();
        let on_circle = ProjectivePoint::from_affine(Complex64::from_polar(1.0, 1.1));
        assert!((sq.evaluate(&on_circle) - LN_2).abs() < 1e-14);
        assert_eq!(
            sq.evaluate(&ProjectivePoint::from_real(0.0)),
            f64::NEG_INFINITY
        );
        assert_eq!(sq.lower_exponent, 2.0);
        let cheb = make_log_derivative(&RationalMap::chebyshev()).unwrap();
        assert!((cheb.evaluate(&ProjectivePoint::from_real(1.0)) - LN_2).abs() < 1e-14);
    }

    #[test]
    fn log_jacobian_is_twice_log_derivative() {
        let f = RationalMap::lattes4();
        let ld = make_log_derivative(&f).unwrap();
        let lj = make_log_jacobian(&f).unwrap();
        let mut rng = SeedSpec::new(1, 1).rng(0);
        for _ in 0..1000 {
            let p = uniform_sphere_point(&mut rng);
            assert_eq!(lj.evaluate(&p), 2.0 * ld.evaluate(&p));
        }
    }

    #[test]
    fn centering_constant_is_exact() {
        let c = make_holder(Kernel::Constant(2.5), 1.0);
        let (cc, rep) = center(&c, &ens(RationalMap::power(2).unwrap(), 3.0), 10).unwrap();
        assert_eq!(cc.evaluate(&ProjectivePoint::from_real(0.4)), 0.0);
        assert!(cc.centering.unwrap().exact);
        assert_eq!(rep.mean.value, 2.5);
        assert!(cc.is_zero());
    }

    #[test]
    fn centered_log_jacobian_of_square_vanishes_on_samples() {
        let f = RationalMap::power(2).unwrap();
        let e = ens(f.clone(), 3.0);
        let (j, _) = center(&make_log_jacobian(&f).unwrap(), &e, 2000).unwrap();
        assert!((j.offset() - 2.0 * LN_2).abs() < 1e-6);
        for i in 0..200 {
            assert!(j.evaluate(&e.with_stream(9).sample(i).unwrap()).abs() < 1e-6);
        }
    }

    #[test]
    fn recentering_is_idempotent_to_noise() {
        let f = RationalMap::chebyshev();
        let e = ens(f, 0.3);
        let psi = make_holder(Kernel::RealPart, 1.0);
        let (c1, _) = center(&psi, &e, 4000).unwrap();
        let (c2, rep) = center(&c1, &e.with_stream(1), 4000).unwrap();
        assert!(rep.mean.value.abs() < 3.0 * rep.mean.stderr + 1e-12);
        assert!((c2.offset() - c1.offset()).abs() < 4.0 * c2.centering.unwrap().stderr);
    }

    #[test]
    fn coboundary_telescopes_to_zero_mean_marker() {
        let f = RationalMap::power(2).unwrap();
        let g = make_holder(Kernel::RealPart, 1.0);
        let psi = make_coboundary(&g, &f).unwrap();
        assert!(psi.is_centered());
        let p = ProjectivePoint::from_affine(Complex64::new(0.3, -0.8));
        let fp = f.evaluate(&p).unwrap();
        assert!((psi.evaluate(&p) - (g.evaluate(&p) - g.evaluate(&fp))).abs() < 1e-15);
    }

    #[test]
    fn lower_bound_holds_on_samples() {
        for f in [
            RationalMap::chebyshev(),
            RationalMap::lattes4(),
            RationalMap::quadratic(Complex64::new(0.0, 0.3)).unwrap(),
        ] {
            let e = Ensemble::new(
                f.clone(),
                ProjectivePoint::from_affine(Complex64::new(0.31, 0.17)),
                20,
                SeedSpec::new(5, 0),
            );
            for psi in [
                make_log_derivative(&f).unwrap(),
                make_log_jacobian(&f).unwrap(),
            ] {
                for i in 0..500 {
                    let (x, _, _) = e.sample_value(&psi, i).unwrap();
                    assert!(
                        psi.lower_bound_margin(&x) >= -1e-6,
                        "{x} {}",
                        psi.lower_bound_margin(&x)
                    );
                }
            }
        }
    }

    #[test]
    fn neighbourhood_mass_is_zero_away_from_circle() {
        let f = RationalMap::power(2).unwrap();
        let psi = make_log_derivative(&f).unwrap();
        let rep = neighborhood_mass(&psi, &ens(f, 3.0), 1.0, &[0.4, 0.2], 500).unwrap();
        assert!(rep.rows.iter().all(|r| r.mass.value == 0.0 && r.hits == 0));
        assert!(rep.fit.is_none());
        assert!(neighborhood_mass(
            &make_holder(Kernel::RealPart, 1.0),
            &ens(RationalMap::power(2).unwrap(), 3.0),
            1.0,
            &[0.1],
            10
        )
        .is_err());
    }

    #[test]
    fn holder_probe_examples() {
        let e = ens(RationalMap::chebyshev(), 0.3);
        let zero = make_holder(Kernel::Constant(0.0), 1.0);
        assert!(holder_probe(&zero, &e, 200).unwrap().pass);
        let q = ProjectivePoint::from_real(0.5);
        let ch = make_holder(Kernel::ChordalTo { q, h: 1.0 }, 1.0);
        let rep = holder_probe(&ch, &e, 400).unwrap();
        assert!(rep.pass && rep.max_excess < 1.5, "{rep:?}");
        // exp of the log derivative is the smooth spherical derivative.
        let ld = make_log_derivative(&RationalMap::chebyshev()).unwrap();
        assert!(holder_probe(&ld, &e, 400).unwrap().pass);
    }
}
