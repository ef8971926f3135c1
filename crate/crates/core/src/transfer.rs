//! The transfer operator `(Lambda psi)(z) = (1/d) sum_{f(y) = z} psi(y)`,
//! evaluated by exact enumeration of iterated preimages.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::estimate::{linear_fit, mean_stderr, Estimate, LinearFit};
use crate::map::RationalMap;
use crate::observables::Observable;
use crate::point::ProjectivePoint;
use crate::sampler::Ensemble;

/// Largest `d^n` enumerated per point.
pub const TRANSFER_BUDGET: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferValue {
    pub value: f64,
    /// Set when some preimage lies on the singular set.
    pub singular: bool,
}

/// `f^{-n}(z)` with multiplicities, as weights summing to one.
fn preimage_levels(
    f: &RationalMap,
    z: &ProjectivePoint,
    n_max: usize,
) -> Result<Vec<Vec<(ProjectivePoint, f64)>>> {
    let d = f.degree();
    let count = (d as u128).saturating_pow(n_max as u32);
    if count > TRANSFER_BUDGET as u128 {
        return Err(LabError::MemoryBudget {
            vertices: count,
            budget: TRANSFER_BUDGET as u64,
        });
    }
    let mut levels = vec![vec![(*z, 1.0)]];
    for _ in 0..n_max {
        let last = levels.last().expect("level 0");
        let mut next = Vec::with_capacity(last.len() * d);
        for (x, w) in last {
            for (y, m) in f.preimages(x)? {
                next.push((y, w * m as f64 / d as f64));
            }
        }
        levels.push(next);
    }
    Ok(levels)
}

fn average(psi: &Observable, level: &[(ProjectivePoint, f64)]) -> TransferValue {
    let mut value = 0.0;
    for (y, w) in level {
        value += w * psi.evaluate(y);
    }
    TransferValue {
        value,
        singular: value == f64::NEG_INFINITY,
    }
}

/// `Lambda^n psi(z)`.
pub fn transfer_apply(
    f: &RationalMap,
    psi: &Observable,
    z: &ProjectivePoint,
    n: usize,
) -> Result<TransferValue> {
    if n == 0 {
        return Ok(average(psi, &[(*z, 1.0)]));
    }
    let levels = preimage_levels(f, z, n)?;
    Ok(average(psi, &levels[n]))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferRow {
    pub n: usize,
    /// `||Lambda^n psi||_2` over the samples.
    pub norm: Estimate,
    /// Standard deviation of `Lambda^n psi` over the samples; insensitive to
    /// the centering error of `psi`, which `Lambda^n` maps to a constant.
    pub centered_norm: Estimate,
    pub mean: Estimate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferReport {
    pub rows: Vec<TransferRow>,
    /// Log-linear fit of the centered norms over `n >= 1`.
    pub fit: Option<LinearFit>,
    /// `E[Lambda psi] - E[psi]`.
    pub mean_shift: Estimate,
    /// `E[Lambda psi . phi] - E[psi . phi o f]`.
    pub duality_gap: Estimate,
    pub samples: usize,
    pub warnings: Vec<String>,
}

impl TransferReport {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("n,norm,norm_stderr,centered_norm,centered_stderr,mean,mean_stderr\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                r.n,
                r.norm.value,
                r.norm.stderr,
                r.centered_norm.value,
                r.centered_norm.stderr,
                r.mean.value,
                r.mean.stderr
            ));
        }
        out
    }

    /// Centered norms strictly decreasing in `n` over the rows with `n >= 1`.
    pub fn is_decreasing(&self) -> bool {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.n >= 1)
            .map(|r| r.centered_norm.value)
            .collect();
        v.windows(2).all(|w| w[1] < w[0])
    }
}

/// `||Lambda^n psi||_2` under the ensemble for `n` in the schedule, with the
/// mean-preservation and duality checks against the bounded test function `phi`.
pub fn transfer_norm_decay(
    psi: &Observable,
    phi: &Observable,
    ens: &Ensemble,
    schedule: &[usize],
    samples: usize,
) -> Result<TransferReport> {
    if !psi.is_centered() {
        return Err(LabError::Precondition(
            "transfer decay needs a centered observable".into(),
        ));
    }
    if samples < 2 {
        return Err(LabError::Precondition("need at least 2 samples".into()));
    }
    let f = &ens.map;
    let n_max = schedule.iter().copied().max().unwrap_or(0).max(1);
    // Per sample: Lambda^n psi for each n in the schedule, then the two
    // differences whose means vanish under mu.
    let rows: Vec<(Vec<f64>, f64, f64)> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let (x, _, _) = ens.sample_value(psi, i)?;
            let levels = preimage_levels(f, &x, n_max)?;
            let values: Vec<f64> = schedule
                .iter()
                .map(|&n| average(psi, &levels[n]).value)
                .collect();
            let psi_x = psi.evaluate(&x);
            let lambda = average(psi, &levels[1]).value;
            let fx = f.evaluate(&x)?;
            Ok((
                values,
                lambda - psi_x,
                lambda * phi.evaluate(&x) - psi_x * phi.evaluate(&fx),
            ))
        })
        .collect::<Result<_>>()?;
    let out_rows: Vec<TransferRow> = schedule
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let col: Vec<f64> = rows.iter().map(|r| r.0[k]).collect();
            let sq: Vec<f64> = col.iter().map(|v| v * v).collect();
            let mean = mean_stderr(&col);
            let ms = mean_stderr(&sq);
            let norm = root(ms);
            let var = Estimate::new((ms.value - mean.value.powi(2)).max(0.0), ms.stderr);
            TransferRow {
                n,
                norm,
                centered_norm: root(var),
                mean,
            }
        })
        .collect();
    let pts: Vec<(f64, f64)> = out_rows
        .iter()
        .filter(|r| r.n >= 1 && r.centered_norm.value > 0.0)
        .map(|r| (r.n as f64, r.centered_norm.value.ln()))
        .collect();
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let fit = linear_fit(&x, &y);
    let mean_shift = mean_stderr(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    let duality_gap = mean_stderr(&rows.iter().map(|r| r.2).collect::<Vec<_>>());
    let mut warnings = Vec::new();
    if mean_shift.value.abs() > 3.0 * mean_shift.stderr {
        warnings.push(format!(
            "mean not preserved: shift {:.3e} +- {:.3e}",
            mean_shift.value, mean_shift.stderr
        ));
    }
    if duality_gap.value.abs() > 3.0 * duality_gap.stderr {
        warnings.push(format!(
            "duality gap {:.3e} +- {:.3e}",
            duality_gap.value, duality_gap.stderr
        ));
    }
    Ok(TransferReport {
        rows: out_rows,
        fit,
        mean_shift,
        duality_gap,
        samples,
        warnings,
    })
}

fn root(e: Estimate) -> Estimate {
    let v = e.value.max(0.0).sqrt();
    Estimate {
        value: v,
        stderr: if v > 0.0 { e.stderr / (2.0 * v) } else { 0.0 },
        exact: e.exact,
    }
}
