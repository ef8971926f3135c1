//! Birkhoff sums, autocovariances, variance estimators and the limit-law
//! diagnostics built on them.
//!
//! Every estimator draws its orbits from an [`Ensemble`], so each orbit is
//! an exact forward orbit of a deep preimage of the root. Uncentered
//! observables are rejected.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::estimate::{
    jackknife_stderr, ks_distance, linear_fit, mean_stderr, normal_cdf, Estimate, Histogram,
};
use crate::map::RationalMap;
use crate::observables::Observable;
use crate::point::ProjectivePoint;
use crate::rng::SeedSpec;
use crate::sampler::Ensemble;

/// Default autocovariance truncation.
pub const DEFAULT_J_MAX: usize = 40;
/// Bins of the normalized-sum histogram on `[-5, 5]`.
pub const HISTOGRAM_BINS: usize = 50;

fn require_centered(psi: &Observable) -> Result<()> {
    if psi.is_centered() {
        Ok(())
    } else {
        Err(LabError::Precondition(
            "observable must be centered before variance or limit-law estimation".into(),
        ))
    }
}

/// Orbit values of `psi` for orbits `0..orbits`, with the total redraw count.
fn orbit_table(
    psi: &Observable,
    ens: &Ensemble,
    orbits: usize,
    len: usize,
) -> Result<(Vec<Vec<f64>>, u64)> {
    let rows: Vec<(Vec<f64>, u32)> = (0..orbits as u64)
        .into_par_iter()
        .map(|i| ens.orbit_values(psi, i, len))
        .collect::<Result<_>>()?;
    let redrawn = rows.iter().map(|r| r.1 as u64).sum();
    Ok((rows.into_iter().map(|r| r.0).collect(), redrawn))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BirkhoffSum {
    pub value: f64,
    /// Set when the orbit met the singular set.
    pub singular: bool,
}

/// `S_n psi(x) = sum_{j<n} psi(f^j x)` along the floating-point forward orbit.
pub fn birkhoff_sum(
    f: &RationalMap,
    psi: &Observable,
    x: &ProjectivePoint,
    n: usize,
) -> Result<BirkhoffSum> {
    let mut y = *x;
    let mut sum = 0.0;
    let mut singular = false;
    for _ in 0..n {
        let v = psi.evaluate(&y);
        if v == f64::NEG_INFINITY {
            singular = true;
        }
        sum += v;
        y = f.evaluate(&y)?;
    }
    Ok(BirkhoffSum {
        value: sum,
        singular,
    })
}

/// `R_j = E[psi psi o f^j]` from `n` orbits.
pub fn autocovariance(psi: &Observable, ens: &Ensemble, j: usize, n: usize) -> Result<Estimate> {
    require_centered(psi)?;
    if psi.is_zero() {
        return Ok(Estimate::exact(0.0));
    }
    let (table, _) = orbit_table(psi, ens, n, j)?;
    let prods: Vec<f64> = table.iter().map(|v| v[0] * v[j]).collect();
    Ok(mean_stderr(&prods))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovRow {
    pub j: usize,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovSeries {
    pub values: Vec<CovRow>,
    /// Per-orbit estimates of `R_0 + 2 sum R_j`.
    #[serde(skip)]
    pub window_sums: Vec<f64>,
    pub orbits: usize,
    pub window: usize,
    pub depth: usize,
    pub seed: SeedSpec,
    pub redrawn: u64,
}

impl CovSeries {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("j,r_j,stderr\n");
        for r in &self.values {
            out.push_str(&format!("{},{:e},{:e}\n", r.j, r.value, r.stderr));
        }
        out
    }
}

/// `R_0, ..., R_{j_max}` from `orbits` independent orbits.
///
/// Within an orbit of length `window + j_max` the products
/// `psi(y_t) psi(y_{t+j})` are averaged over `t < window`; standard errors
/// come from the spread between orbits.
pub fn covariance_series(
    psi: &Observable,
    ens: &Ensemble,
    j_max: usize,
    orbits: usize,
    window: usize,
) -> Result<CovSeries> {
    require_centered(psi)?;
    if orbits < 2 || window < 1 {
        return Err(LabError::Precondition(
            "need at least 2 orbits and a window of 1".into(),
        ));
    }
    let (table, redrawn, per): (Vec<Vec<f64>>, u64, Vec<Vec<f64>>) = if psi.is_zero() {
        (Vec::new(), 0, vec![vec![0.0; j_max + 1]; orbits])
    } else {
        let (table, redrawn) = orbit_table(psi, ens, orbits, window + j_max - 1)?;
        let per = table
            .par_iter()
            .map(|v| {
                (0..=j_max)
                    .map(|j| (0..window).map(|t| v[t] * v[t + j]).sum::<f64>() / window as f64)
                    .collect()
            })
            .collect();
        (table, redrawn, per)
    };
    drop(table);
    let values = (0..=j_max)
        .map(|j| {
            let col: Vec<f64> = per.iter().map(|c| c[j]).collect();
            let e = mean_stderr(&col);
            CovRow {
                j,
                value: e.value,
                stderr: e.stderr,
            }
        })
        .collect();
    let window_sums = per
        .iter()
        .map(|c| c[0] + 2.0 * c[1..].iter().sum::<f64>())
        .collect();
    Ok(CovSeries {
        values,
        window_sums,
        orbits,
        window,
        depth: ens.depth,
        seed: ens.seed,
        redrawn,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMethod {
    Spectral,
    BirkhoffSlope,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SigmaEstimate {
    pub sigma2: f64,
    pub stderr: f64,
    pub sigma: f64,
    pub sigma_stderr: f64,
    pub method: SigmaMethod,
    /// Truncation for the spectral sum, largest horizon for the slope.
    pub j_max: usize,
    /// Bound on the omitted tail from a geometric fit of `|R_j|`.
    pub tail_bound: f64,
    /// Fitted `O(1)` term of the slope regression.
    pub intercept: Option<Estimate>,
    /// Set when a negative estimate was clamped to zero.
    pub clamped: bool,
    pub redrawn: u64,
    pub warnings: Vec<String>,
}

impl SigmaEstimate {
    fn from_sigma2(sigma2: f64, stderr: f64, method: SigmaMethod, j_max: usize) -> Self {
        let clamped = sigma2 < 0.0;
        let s2 = sigma2.max(0.0);
        let sigma = s2.sqrt();
        let sigma_stderr = if s2 <= stderr {
            stderr.sqrt()
        } else {
            stderr / (2.0 * sigma)
        };
        SigmaEstimate {
            sigma2: s2,
            stderr,
            sigma,
            sigma_stderr,
            method,
            j_max,
            tail_bound: 0.0,
            intercept: None,
            clamped,
            redrawn: 0,
            warnings: Vec::new(),
        }
    }

    /// `sigma <= max(0.02 ||psi||_2, 3 stderr)`.
    pub fn is_zero(&self, psi_norm: f64) -> bool {
        self.sigma <= (0.02 * psi_norm).max(3.0 * self.sigma_stderr)
    }

    pub fn agrees_with(&self, other: &SigmaEstimate, relative: f64) -> bool {
        let se = (self.stderr.powi(2) + other.stderr.powi(2)).sqrt();
        (self.sigma2 - other.sigma2).abs()
            <= relative * self.sigma2.abs().max(other.sigma2.abs()) + 3.0 * se
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaDecision {
    pub zero: bool,
    /// Estimator with the smaller standard error on `sigma`, used for the decision.
    pub basis: SigmaMethod,
    pub sigma: f64,
    pub sigma_stderr: f64,
    pub psi_norm: f64,
}

/// The `sigma = 0` decision, taken on the more precise of two estimates.
pub fn sigma_decision(
    spectral: &SigmaEstimate,
    birkhoff: &SigmaEstimate,
    psi_norm: f64,
) -> SigmaDecision {
    let best = if birkhoff.sigma_stderr < spectral.sigma_stderr {
        birkhoff
    } else {
        spectral
    };
    SigmaDecision {
        zero: best.is_zero(psi_norm),
        basis: best.method,
        sigma: best.sigma,
        sigma_stderr: best.sigma_stderr,
        psi_norm,
    }
}

/// `sigma^2 = R_0 + 2 sum_{1..J} R_j` with a reported geometric tail bound.
pub fn sigma_spectral(series: &CovSeries) -> Result<SigmaEstimate> {
    let j_max = series.values.len() - 1;
    if j_max < 4 {
        return Err(LabError::Precondition("J_max must be at least 4".into()));
    }
    let e = mean_stderr(&series.window_sums);
    let (value, stderr) = if series.window_sums.iter().all(|&v| v == 0.0) {
        (0.0, 0.0)
    } else {
        (e.value, e.stderr)
    };
    let mut out = SigmaEstimate::from_sigma2(value, stderr, SigmaMethod::Spectral, j_max);
    out.redrawn = series.redrawn;
    if out.clamped {
        out.warnings
            .push(format!("negative estimate {value:.3e} clamped to 0"));
    }
    // Fit over the leading run of lags distinguishable from noise.
    let significant: Vec<(f64, f64)> = series.values[1..]
        .iter()
        .take_while(|r| r.value.abs() > 2.0 * r.stderr && r.value != 0.0)
        .map(|r| (r.j as f64, r.value.abs().ln()))
        .collect();
    let (x, y): (Vec<f64>, Vec<f64>) = significant.into_iter().unzip();
    match linear_fit(&x, &y) {
        Some(fit) if fit.slope < 0.0 => {
            let r = fit.slope.exp();
            let last = fit.predict(j_max as f64).exp();
            out.tail_bound = 2.0 * last * r / (1.0 - r);
        }
        Some(_) => {
            out.tail_bound = f64::INFINITY;
            out.warnings
                .push("autocovariances show no geometric decay".into());
        }
        None => {
            let noise = series.values[1..]
                .iter()
                .map(|r| r.stderr)
                .fold(0.0, f64::max);
            out.tail_bound = 2.0 * noise;
        }
    }
    Ok(out)
}

/// Slope of `E[S_n^2]` against `n` over the schedule.
///
/// All horizons come from the same orbits; the standard error is a
/// 20-block jackknife over orbits.
pub fn sigma_birkhoff(
    psi: &Observable,
    ens: &Ensemble,
    schedule: &[usize],
    orbits: usize,
) -> Result<SigmaEstimate> {
    require_centered(psi)?;
    let max_n = schedule.iter().copied().max().unwrap_or(0);
    if schedule.len() < 4 || max_n < 500 {
        return Err(LabError::Precondition(
            "slope estimation needs at least 4 horizons and a largest horizon of at least 500"
                .into(),
        ));
    }
    if orbits < 20 {
        return Err(LabError::Precondition(
            "slope estimation needs at least 20 orbits".into(),
        ));
    }
    let mut sorted = schedule.to_vec();
    sorted.sort_unstable();
    let (sq, redrawn): (Vec<Vec<f64>>, u64) = if psi.is_zero() {
        (vec![vec![0.0; sorted.len()]; orbits], 0)
    } else {
        let rows: Vec<(Vec<f64>, u32)> = (0..orbits as u64)
            .into_par_iter()
            .map(|i| {
                let (v, r) = ens.orbit_values(psi, i, max_n - 1)?;
                let mut s = 0.0;
                let mut k = 0;
                let mut out = Vec::with_capacity(sorted.len());
                for (t, x) in v.iter().enumerate() {
                    s += x;
                    while k < sorted.len() && sorted[k] == t + 1 {
                        out.push(s * s);
                        k += 1;
                    }
                }
                Ok((out, r))
            })
            .collect::<Result<_>>()?;
        let redrawn = rows.iter().map(|r| r.1 as u64).sum();
        (rows.into_iter().map(|r| r.0).collect(), redrawn)
    };
    let xs: Vec<f64> = sorted.iter().map(|&n| n as f64).collect();
    let fit_of = |rows: &[&Vec<f64>]| {
        let m = rows.len() as f64;
        let ys: Vec<f64> = (0..xs.len())
            .map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / m)
            .collect();
        (linear_fit(&xs, &ys).expect("distinct horizons"), ys)
    };
    let all: Vec<&Vec<f64>> = sq.iter().collect();
    let (fit, ys) = fit_of(&all);
    let blocks = 20;
    let per = orbits / blocks;
    let (slopes, intercepts): (Vec<f64>, Vec<f64>) = (0..blocks)
        .map(|b| {
            let keep: Vec<&Vec<f64>> = sq
                .iter()
                .enumerate()
                .filter(|(i, _)| *i / per != b || *i >= per * blocks)
                .map(|(_, r)| r)
                .collect();
            let (f, _) = fit_of(&keep);
            (f.slope, f.intercept)
        })
        .unzip();
    let se = jackknife_stderr(&slopes);
    let mut out = SigmaEstimate::from_sigma2(fit.slope, se, SigmaMethod::BirkhoffSlope, max_n);
    out.intercept = Some(Estimate::new(fit.intercept, jackknife_stderr(&intercepts)));
    out.redrawn = redrawn;
    if out.clamped {
        out.warnings
            .push(format!("negative slope {:.3e} clamped to 0", fit.slope));
    }
    let worst = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let p = fit.predict(*x);
            if p.abs() > 0.0 {
                (y - p).abs() / p.abs()
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    if worst > 0.05 && fit.slope > 3.0 * se {
        out.warnings.push(format!(
            "regression residuals reach {:.1}% of fitted values",
            100.0 * worst
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CltReport {
    pub n: usize,
    pub samples: usize,
    pub ks_distance: f64,
    pub histogram: Histogram,
    pub sigma_used: f64,
    /// Moments of the normalized sums.
    pub mean: f64,
    pub variance: f64,
    pub redrawn: u64,
    #[serde(skip)]
    pub normalized: Vec<f64>,
}

/// KS distance of the law of `S_n psi / (sigma sqrt n)` to the standard normal.
pub fn clt_test(
    psi: &Observable,
    ens: &Ensemble,
    n: usize,
    samples: usize,
    sigma: &SigmaEstimate,
) -> Result<CltReport> {
    require_centered(psi)?;
    if sigma.sigma2.is_nan() || sigma.sigma2 <= 0.0 {
        return Err(LabError::Precondition(
            "sigma is zero: use cocycle reconstruction instead of a limit-law test".into(),
        ));
    }
    let scale = sigma.sigma * (n as f64).sqrt();
    let rows: Vec<(f64, u32)> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let (v, r) = ens.orbit_values(psi, i, n - 1)?;
            Ok((v.iter().sum::<f64>() / scale, r))
        })
        .collect::<Result<_>>()?;
    let redrawn = rows.iter().map(|r| r.1 as u64).sum();
    let normalized: Vec<f64> = rows.into_iter().map(|r| r.0).collect();
    Ok(clt_report(normalized, n, sigma.sigma, redrawn))
}

fn clt_report(normalized: Vec<f64>, n: usize, sigma: f64, redrawn: u64) -> CltReport {
    let m = mean_stderr(&normalized).value;
    let variance =
        normalized.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (normalized.len() as f64 - 1.0);
    CltReport {
        n,
        samples: normalized.len(),
        ks_distance: ks_distance(&normalized, normal_cdf),
        histogram: Histogram::new(&normalized, -5.0, 5.0, HISTOGRAM_BINS),
        sigma_used: sigma,
        mean: m,
        variance,
        redrawn,
        normalized,
    }
}

/// The reporting path of [`clt_test`] fed with exact standard normals.
pub fn clt_self_test(samples: usize, seed: SeedSpec) -> CltReport {
    let values: Vec<f64> = (0..samples as u64)
        .into_par_iter()
        .map(|i| StandardNormal.sample(&mut seed.rng(i)))
        .collect();
    clt_report(values, 0, 1.0, 0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AscltReport {
    pub n: usize,
    pub sigma: f64,
    /// Lévy distance per start point.
    pub distances: Vec<f64>,
    pub median_distance: f64,
    /// `(sum_{k<=n} 1/k) / log n`; the measure itself is normalized by the harmonic sum.
    pub weight_sum: f64,
    pub degenerate: bool,
}

/// Lévy distance of the log-averaged empirical measure of `S_k / sqrt k`
/// along single orbits to `N(0, sigma^2)`.
pub fn asclt_probe(
    psi: &Observable,
    ens: &Ensemble,
    n: usize,
    sigma: f64,
    starts: usize,
) -> Result<AscltReport> {
    require_centered(psi)?;
    if n < 2 || starts == 0 {
        return Err(LabError::Precondition(
            "need n >= 2 and at least one start".into(),
        ));
    }
    let harmonic: f64 = (1..=n).map(|k| 1.0 / k as f64).sum();
    let degenerate = sigma.is_nan() || sigma <= 0.0;
    let distances: Vec<f64> = (0..starts as u64)
        .into_par_iter()
        .map(|i| {
            let values = if psi.is_zero() {
                vec![0.0; n]
            } else {
                ens.orbit_values(psi, i, n - 1)?.0
            };
            let mut s = 0.0;
            let mut pts: Vec<(f64, f64)> = values
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    s += v;
                    let k = (k + 1) as f64;
                    (s / k.sqrt(), 1.0 / (k * harmonic))
                })
                .collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            Ok(if degenerate {
                levy_distance(&pts, |x| if x >= 0.0 { 1.0 } else { 0.0 })
            } else {
                levy_distance(&pts, |x| normal_cdf(x / sigma))
            })
        })
        .collect::<Result<_>>()?;
    let mut sorted = distances.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(AscltReport {
        n,
        sigma,
        median_distance: crate::estimate::quantile(&sorted, 0.5),
        distances,
        weight_sum: harmonic / (n as f64).ln(),
        degenerate,
    })
}

/// Lévy distance between a weighted point measure (sorted by value, weights
/// summing to one) and a CDF `g`.
pub fn levy_distance(points: &[(f64, f64)], g: impl Fn(f64) -> f64) -> f64 {
    // Group ties so that F(x-) and F(x) are exact at every atom.
    let mut atoms: Vec<(f64, f64, f64)> = Vec::new();
    let mut cum = 0.0;
    for &(x, w) in points {
        match atoms.last_mut() {
            Some(last) if last.0 == x => {
                cum += w;
                last.2 = cum;
            }
            _ => {
                let before = cum;
                cum += w;
                atoms.push((x, before, cum));
            }
        }
    }
    let ok = |eps: f64| {
        atoms.iter().all(|&(x, before, after)| {
            g(x - eps) - before <= eps + 1e-15 && after - g(x + eps) <= eps + 1e-15
        }) && g(f64::MIN) <= eps
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CocycleRow {
    pub draw_index: usize,
    pub point: [f64; 4],
    pub u_p: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CocycleReport {
    pub p: usize,
    /// RMS of `psi - (u_p - u_p o f)`.
    pub residual: Estimate,
    pub psi_norm: f64,
    /// RMS of `u_p - g - c` with the best constant `c`, when a reference `g` is given.
    pub reference_gap: Option<Estimate>,
    pub reference_norm: Option<f64>,
    pub table: Vec<CocycleRow>,
    pub warnings: Vec<String>,
}

impl CocycleReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("draw_index,re0,im0,re1,im1,u_p,residual\n");
        for r in &self.table {
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                r.draw_index, r.point[0], r.point[1], r.point[2], r.point[3], r.u_p, r.residual
            ));
        }
        out
    }
}

/// `u_p = (1/p) sum_{n=1}^p S_n psi` on sampled orbits and the residual of
/// the cocycle equation `psi = u_p - u_p o f`.
pub fn cocycle_reconstruct(
    psi: &Observable,
    ens: &Ensemble,
    p: usize,
    samples: usize,
    reference: Option<&Observable>,
) -> Result<CocycleReport> {
    require_centered(psi)?;
    if p == 0 || samples < 2 {
        return Err(LabError::Precondition(
            "need p >= 1 and at least 2 samples".into(),
        ));
    }
    let rows: Vec<(CocycleRow, f64, Option<f64>)> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let orbit = ens.orbit(i, p + 1)?;
            let v: Vec<f64> = orbit.iter().map(|y| psi.evaluate(y)).collect();
            // S_n(x) uses v[0..n], S_n(f x) uses v[1..=n].
            let (mut s_x, mut s_fx, mut u_x, mut u_fx) = (0.0, 0.0, 0.0, 0.0);
            for n in 1..=p {
                s_x += v[n - 1];
                s_fx += v[n];
                u_x += s_x;
                u_fx += s_fx;
            }
            u_x /= p as f64;
            u_fx /= p as f64;
            let residual = v[0] - (u_x - u_fx);
            let g = reference.map(|g| g.evaluate(&orbit[0]));
            Ok((
                CocycleRow {
                    draw_index: i as usize,
                    point: orbit[0].to_array(),
                    u_p: u_x,
                    residual,
                },
                v[0],
                g,
            ))
        })
        .collect::<Result<_>>()?;
    let sq: Vec<f64> = rows.iter().map(|r| r.0.residual.powi(2)).collect();
    let residual = rms_estimate(&sq);
    let psi_norm = (rows.iter().map(|r| r.1 * r.1).sum::<f64>() / samples as f64).sqrt();
    let (reference_gap, reference_norm) = match reference {
        Some(_) => {
            let diffs: Vec<f64> = rows
                .iter()
                .map(|r| r.0.u_p - r.2.expect("reference"))
                .collect();
            let m = diffs.iter().sum::<f64>() / samples as f64;
            let sq: Vec<f64> = diffs.iter().map(|d| (d - m).powi(2)).collect();
            let gnorm = (rows
                .iter()
                .map(|r| r.2.expect("reference").powi(2))
                .sum::<f64>()
                / samples as f64)
                .sqrt();
            (Some(rms_estimate(&sq)), Some(gnorm))
        }
        None => (None, None),
    };
    let mut warnings = Vec::new();
    if psi_norm > 0.0 && residual.value > 0.5 * psi_norm {
        warnings.push(format!(
            "residual {:.3e} is comparable to ||psi|| = {psi_norm:.3e}: psi does not look like a coboundary",
            residual.value
        ));
    }
    Ok(CocycleReport {
        p,
        residual,
        psi_norm,
        reference_gap,
        reference_norm,
        table: rows.into_iter().map(|r| r.0).collect(),
        warnings,
    })
}

/// `sqrt(mean)` of squared values with a delta-method standard error.
fn rms_estimate(squares: &[f64]) -> Estimate {
    let e = mean_stderr(squares);
    let v = e.value.max(0.0).sqrt();
    Estimate::new(v, if v > 0.0 { e.stderr / (2.0 * v) } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observables::{center, make_coboundary, make_holder, make_log_jacobian, Kernel};
    use num_complex::Complex64;

    fn sq_ens() -> Ensemble {
        Ensemble::new(
            RationalMap::power(2).unwrap(),
            ProjectivePoint::from_real(3.0),
            30,
            SeedSpec::new(21, 0),
        )
    }

    fn real_part() -> Observable {
        make_holder(Kernel::RealPart, 1.0).with_exact_mean(0.0)
    }

    #[test]
    fn birkhoff_examples() {
        let f = RationalMap::power(2).unwrap();
        let x = ProjectivePoint::from_affine(Complex64::new(0.4, 0.2));
        let c = make_holder(Kernel::Constant(1.5), 1.0);
        assert_eq!(birkhoff_sum(&f, &c, &x, 10).unwrap().value, 15.0);
        let g = make_holder(Kernel::RealPart, 1.0);
        let cob = make_coboundary(&g, &f).unwrap();
        let fx = crate::sampler::forward_orbit(&f, &x, 7).unwrap();
        let s = birkhoff_sum(&f, &cob, &x, 7).unwrap().value;
        assert!((s - (g.evaluate(&x) - g.evaluate(&fx[7]))).abs() < 1e-12);
        let (j, _) = center(&make_log_jacobian(&f).unwrap(), &sq_ens(), 100).unwrap();
        let on = ProjectivePoint::from_affine(Complex64::from_polar(1.0, 0.7));
        assert!(birkhoff_sum(&f, &j, &on, 20).unwrap().value.abs() < 1e-9);
        assert!(
            birkhoff_sum(
                &f,
                &make_log_jacobian(&f).unwrap(),
                &ProjectivePoint::from_real(0.0),
                3
            )
            .unwrap()
            .singular
        );
    }

    #[test]
    fn uncentered_is_rejected() {
        let psi = make_holder(Kernel::Constant(1.0), 1.0);
        let e = sq_ens();
        assert!(autocovariance(&psi, &e, 1, 10).is_err());
        assert!(covariance_series(&psi, &e, 5, 10, 1).is_err());
        assert!(sigma_birkhoff(&psi, &e, &[250, 500, 1000, 2000], 40).is_err());
    }

    #[test]
    fn zero_observable_is_exactly_zero() {
        let zero = make_holder(Kernel::Constant(0.0), 1.0).with_exact_mean(0.0);
        let e = sq_ens();
        assert_eq!(
            autocovariance(&zero, &e, 3, 10).unwrap(),
            Estimate::exact(0.0)
        );
        let s = sigma_spectral(&covariance_series(&zero, &e, 8, 10, 4).unwrap()).unwrap();
        assert_eq!((s.sigma2, s.stderr), (0.0, 0.0));
        let c = cocycle_reconstruct(&zero, &e, 10, 10, None).unwrap();
        assert_eq!(c.residual.value, 0.0);
    }

    #[test]
    fn real_part_variance_on_circle() {
        let e = sq_ens();
        let psi = real_part();
        let r0 = autocovariance(&psi, &e, 0, 20000).unwrap();
        assert!((r0.value - 0.125).abs() < 3.0 * r0.stderr, "{r0:?}");
        let series = covariance_series(&psi, &e, 10, 400, 100).unwrap();
        for r in &series.values[1..] {
            assert!(r.value.abs() < 3.5 * r.stderr, "{r:?}");
        }
        let s = sigma_spectral(&series).unwrap();
        assert!((s.sigma2 - 0.125).abs() < 3.0 * s.stderr);
    }

    #[test]
    fn self_test_ks_is_small() {
        let r = clt_self_test(20000, SeedSpec::new(1, 2));
        assert!(r.ks_distance < 0.012, "{}", r.ks_distance);
        assert_eq!(r.histogram.total(), 20000);
        assert!((r.variance - 1.0).abs() < 0.05);
    }

    #[test]
    fn levy_distance_examples() {
        let point = [(0.0, 1.0)];
        assert!(levy_distance(&point, |x| if x >= 0.0 { 1.0 } else { 0.0 }) < 1e-12);
        let d = levy_distance(&point, normal_cdf);
        assert!(d > 0.3 && d < 0.5);
        let grid: Vec<(f64, f64)> = (0..2000)
            .map(|k| {
                let u = (k as f64 + 0.5) / 2000.0;
                (inverse_normal(u), 1.0 / 2000.0)
            })
            .collect();
        assert!(levy_distance(&grid, normal_cdf) < 1e-3);
    }

    fn inverse_normal(u: f64) -> f64 {
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..100 {
            let m = 0.5 * (lo + hi);
            if normal_cdf(m) < u {
                lo = m
            } else {
                hi = m
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn asclt_degenerate_and_weights() {
        let zero = make_holder(Kernel::Constant(0.0), 1.0).with_exact_mean(0.0);
        let r = asclt_probe(&zero, &sq_ens(), 10000, 0.0, 2).unwrap();
        assert!(r.degenerate);
        assert!(r.distances.iter().all(|&d| d < 1e-12));
        let h: f64 = (1..=10000).map(|k| 1.0 / k as f64).sum();
        assert_eq!(r.weight_sum, h / 10000f64.ln());
        assert!((r.weight_sum - 1.0).abs() < 1.0 / 10000f64.ln());
    }

    #[test]
    fn cocycle_of_real_part_coboundary() {
        let f = RationalMap::power(2).unwrap();
        let g = make_holder(Kernel::RealPart, 1.0);
        let psi = make_coboundary(&g, &f).unwrap();
        let r = cocycle_reconstruct(&psi, &sq_ens(), 50, 300, Some(&g)).unwrap();
        assert!(r.residual.value < 0.05 * r.psi_norm, "{:?}", r.residual);
        assert!(r.warnings.is_empty());
        let gap = r.reference_gap.unwrap().value;
        // u_p - g is minus an ergodic average of g over p steps.
        assert!((gap - (0.125f64 / 50.0).sqrt()).abs() < 0.01, "{gap}");
    }
}
