//! Homogeneous binary forms and their projective roots.
//!
//! A form of degree `d` is stored as `c[k]`, the coefficient of
//! `z0^(d-k) z1^k`; read in the affine coordinate `z = z0 / z1` this is the
//! usual highest-degree-first coefficient list. Roots are returned as
//! [`ProjectivePoint`]s, so a vanishing leading coefficient simply produces a
//! root at infinity.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{LabError, Result};
use crate::point::ProjectivePoint;

/// Relative residual `|H(root)| / sum |c_k|` every certified root satisfies.
pub const ROOT_TOLERANCE: f64 = 1e-11;
/// Roots closer than this (chordal) are merged into one multiple root.
pub const CLUSTER_RADIUS: f64 = 1e-7;
pub const MAX_ITERATIONS: usize = 200;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Evaluates the form at `(z0, z1)`.
pub fn eval_form(c: &[Complex64], z0: Complex64, z1: Complex64) -> Complex64 {
    let mut acc = c[0];
    let mut pw = ONE;
    for &ck in &c[1..] {
        pw *= z1;
        acc = acc * z0 + ck * pw;
    }
    acc
}

/// Form and both partial derivatives at `(z0, z1)`.
pub fn eval_form_with_partials(
    c: &[Complex64],
    z0: Complex64,
    z1: Complex64,
) -> (Complex64, Complex64, Complex64) {
    let d = c.len() - 1;
    if d == 0 {
        return (c[0], ZERO, ZERO);
    }
    let value = eval_form(c, z0, z1);
    // Euler: z0 H_0 + z1 H_1 = d H, so one partial suffices in each chart,
    // but both are computed directly to stay accurate everywhere.
    let mut d0 = ZERO;
    let mut d1 = ZERO;
    let mut buf0 = [ONE; 17];
    let mut buf1 = [ONE; 17];
    let mut heap0;
    let mut heap1;
    let (pw0, pw1): (&mut [Complex64], &mut [Complex64]) = if d < 17 {
        (&mut buf0[..=d], &mut buf1[..=d])
    } else {
        heap0 = vec![ONE; d + 1];
        heap1 = vec![ONE; d + 1];
        (&mut heap0, &mut heap1)
    };
    for k in 1..=d {
        pw0[k] = pw0[k - 1] * z0;
        pw1[k] = pw1[k - 1] * z1;
    }
    for (k, &ck) in c.iter().enumerate() {
        let e0 = d - k;
        if e0 > 0 {
            d0 += ck * (e0 as f64) * pw0[e0 - 1] * pw1[k];
        }
        if k > 0 {
            d1 += ck * (k as f64) * pw0[e0] * pw1[k - 1];
        }
    }
    (value, d0, d1)
}

pub fn partial_z0(c: &[Complex64]) -> Vec<Complex64> {
    let d = c.len() - 1;
    (0..d).map(|k| c[k] * ((d - k) as f64)).collect()
}

pub fn partial_z1(c: &[Complex64]) -> Vec<Complex64> {
    (1..c.len()).map(|k| c[k] * (k as f64)).collect()
}

pub fn multiply(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![ZERO; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

pub fn sub(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn coefficient_scale(c: &[Complex64]) -> f64 {
    c.iter().map(|x| x.norm()).sum()
}

/// Relative residual of a root given by a normalized point.
pub fn relative_residual(c: &[Complex64], p: &ProjectivePoint) -> f64 {
    residual_with_scale(c, p, coefficient_scale(c))
}

fn residual_with_scale(c: &[Complex64], p: &ProjectivePoint, scale: f64) -> f64 {
    let (z0, z1) = p.coords();
    eval_form(c, z0, z1).norm() / scale
}

/// Roots of a binary form, certified by residual.
#[derive(Debug, Clone)]
pub struct PolyRoots {
    /// All `d` roots, repeated according to multiplicity, in canonical order.
    pub roots: Vec<ProjectivePoint>,
    pub residuals: Vec<f64>,
    /// Index groups of roots lying within [`CLUSTER_RADIUS`] of each other.
    pub multiplicity_clusters: Vec<Vec<usize>>,
}

impl PolyRoots {
    /// Distinct roots with multiplicities, one entry per cluster (the entry
    /// with the smallest residual represents the cluster).
    pub fn distinct(&self) -> Vec<(ProjectivePoint, usize)> {
        self.multiplicity_clusters
            .iter()
            .map(|group| {
                let best = *group
                    .iter()
                    .min_by(|&&a, &&b| self.residuals[a].total_cmp(&self.residuals[b]))
                    .expect("nonempty cluster");
                (self.roots[best], group.len())
            })
            .collect()
    }

    pub fn has_multiple_root(&self) -> bool {
        self.multiplicity_clusters.iter().any(|g| g.len() > 1)
    }

    pub fn worst_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

/// Solves the form `coeffs` (highest degree first, trailing coordinate `z1`).
///
/// Degrees one and two use closed forms that are exact in homogeneous
/// coordinates. Higher degrees run Aberth-Ehrlich iteration, with the
/// companion matrix eigenvalues as a fallback when residuals stall.
pub fn solve_poly(coeffs: &[Complex64]) -> Result<PolyRoots> {
    if coeffs.len() < 2 {
        return Err(LabError::DegreeZero);
    }
    if coeffs
        .iter()
        .any(|c| !(c.re.is_finite() && c.im.is_finite()))
    {
        return Err(LabError::Precondition("non-finite coefficient".into()));
    }
    let lead = coeffs.iter().take_while(|c| **c == ZERO).count();
    if lead == coeffs.len() {
        return Err(LabError::DegreeZero);
    }
    let trail = coeffs.iter().rev().take_while(|c| **c == ZERO).count();
    let core = &coeffs[lead..coeffs.len() - trail];

    let mut roots = Vec::with_capacity(coeffs.len() - 1);
    roots.extend(std::iter::repeat_n(ProjectivePoint::infinity(), lead));
    roots.extend(std::iter::repeat_n(ProjectivePoint::from_real(0.0), trail));
    match core.len() - 1 {
        0 => {}
        1 => roots.push(ProjectivePoint::new(-core[1], core[0])?),
        2 => roots.extend(quadratic_roots(core[0], core[1], core[2])?),
        _ => {
            let mut found = aberth(core);
            polish(core, &mut found);
            let scale = coefficient_scale(core);
            if found
                .iter()
                .any(|r| residual_with_scale(core, r, scale) > ROOT_TOLERANCE)
            {
                let mut again = companion_roots(core)?;
                polish(core, &mut again);
                found = again;
            }
            roots.extend(found);
        }
    }

    roots.sort_by(|a, b| a.canonical_cmp(b));
    let scale = coefficient_scale(coeffs);
    let residuals: Vec<f64> = roots
        .iter()
        .map(|r| residual_with_scale(coeffs, r, scale))
        .collect();
    let worst = residuals.iter().copied().fold(0.0, f64::max);
    if worst.is_nan() || worst > ROOT_TOLERANCE {
        return Err(LabError::NonConvergence {
            worst_residual: worst,
        });
    }
    let multiplicity_clusters = cluster(&roots);
    Ok(PolyRoots {
        roots,
        residuals,
        multiplicity_clusters,
    })
}

/// Roots of `a z0^2 + b z0 z1 + c z1^2` as `[q : a]` and `[c : q]` with
/// `q = -(b + s) / 2`, the sign of `s = sqrt(b^2 - 4ac)` avoiding cancellation.
pub(crate) fn quadratic_roots(
    a: Complex64,
    b: Complex64,
    c: Complex64,
) -> Result<[ProjectivePoint; 2]> {
    let mut s = (b * b - 4.0 * a * c).sqrt();
    if (b.conj() * s).re < 0.0 {
        s = -s;
    }
    let q = -(b + s) * 0.5;
    if q == ZERO {
        let double = if a == ZERO {
            ProjectivePoint::infinity()
        } else {
            ProjectivePoint::from_real(0.0)
        };
        return Ok([double, double]);
    }
    Ok([ProjectivePoint::new(q, a)?, ProjectivePoint::new(c, q)?])
}

/// Aberth-Ehrlich iteration in the better-conditioned affine chart.
fn aberth(c: &[Complex64]) -> Vec<ProjectivePoint> {
    let n = c.len() - 1;
    // Chart choice: solve for z = z0/z1 when the leading coefficient dominates,
    // otherwise for u = z1/z0 on the reversed coefficients.
    let flipped = c[0].norm() < c[n].norm();
    let mut a: Vec<Complex64> = if flipped {
        c.iter().rev().copied().collect()
    } else {
        c.to_vec()
    };
    let lead = a[0];
    for x in a.iter_mut() {
        *x /= lead;
    }
    let radius = a[n].norm().powf(1.0 / n as f64).max(1e-3);
    let mut z: Vec<Complex64> = (0..n)
        .map(|k| {
            // Fixed, slightly irregular angles keep the start off any symmetry
            // axis of the polynomial while staying reproducible.
            let jitter = 0.1 * ((k as f64 * 0.618_033_988_75).fract() - 0.5);
            let theta = std::f64::consts::TAU * (k as f64 + 0.25 + jitter) / n as f64 + 0.4;
            Complex64::from_polar(radius, theta)
        })
        .collect();
    let mut done = vec![false; n];
    for _ in 0..MAX_ITERATIONS {
        let mut active = false;
        for i in 0..n {
            if done[i] {
                continue;
            }
            let (p, dp) = horner_with_derivative(&a, z[i]);
            if p == ZERO {
                done[i] = true;
                continue;
            }
            let newton = if dp == ZERO { p } else { p / dp };
            let repulsion: Complex64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let diff = z[i] - z[j];
                    if diff == ZERO {
                        Complex64::new(1e12, 0.0)
                    } else {
                        diff.inv()
                    }
                })
                .sum();
            let denom = ONE - newton * repulsion;
            let step = if denom == ZERO {
                newton
            } else {
                newton / denom
            };
            z[i] -= step;
            if step.norm_sqr() <= 1e-28 * z[i].norm_sqr().max(1.0) {
                done[i] = true;
            } else {
                active = true;
            }
        }
        if !active {
            break;
        }
    }
    z.into_iter()
        .map(|w| {
            if flipped {
                ProjectivePoint::try_normalized(ONE, w)
            } else {
                ProjectivePoint::try_normalized(w, ONE)
            }
            .unwrap_or_else(ProjectivePoint::infinity)
        })
        .collect()
}

fn horner_with_derivative(a: &[Complex64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = a[0];
    let mut dp = ZERO;
    for &ak in &a[1..] {
        dp = dp * z + p;
        p = p * z + ak;
    }
    (p, dp)
}

/// Newton steps in each root's own chart; a step is kept only if it lowers
/// the residual.
fn polish(c: &[Complex64], roots: &mut [ProjectivePoint]) {
    for r in roots.iter_mut() {
        let (z0, z1) = r.coords();
        let mut before = eval_form(c, z0, z1).norm_sqr();
        for _ in 0..3 {
            if before == 0.0 {
                break;
            }
            let (z0, z1) = r.coords();
            let (h, h0, h1) = eval_form_with_partials(c, z0, z1);
            let candidate = if z1 == ONE {
                if h0 == ZERO {
                    break;
                }
                ProjectivePoint::try_normalized(z0 - h / h0, ONE)
            } else {
                if h1 == ZERO {
                    break;
                }
                ProjectivePoint::try_normalized(ONE, z1 - h / h1)
            };
            let Some(next) = candidate else { break };
            let (n0, n1) = next.coords();
            let after = eval_form(c, n0, n1).norm_sqr();
            if after < before {
                *r = next;
                before = after;
            } else {
                break;
            }
        }
    }
}

/// Eigenvalues of the companion matrix, in the same chart logic as [`aberth`].
fn companion_roots(c: &[Complex64]) -> Result<Vec<ProjectivePoint>> {
    let n = c.len() - 1;
    let flipped = c[0].norm() < c[n].norm();
    let a: Vec<Complex64> = if flipped {
        c.iter().rev().copied().collect()
    } else {
        c.to_vec()
    };
    let mut m = DMatrix::<Complex64>::zeros(n, n);
    for j in 0..n {
        m[(0, j)] = -a[j + 1] / a[0];
    }
    for i in 1..n {
        m[(i, i - 1)] = ONE;
    }
    let eig = m.schur().eigenvalues().ok_or(LabError::NonConvergence {
        worst_residual: f64::INFINITY,
    })?;
    Ok(eig
        .iter()
        .map(|&w| {
            if flipped {
                ProjectivePoint::try_normalized(ONE, w)
            } else {
                ProjectivePoint::try_normalized(w, ONE)
            }
            .unwrap_or_else(ProjectivePoint::infinity)
        })
        .collect())
}

/// Groups sorted roots into chordal clusters (single linkage).
fn cluster(roots: &[ProjectivePoint]) -> Vec<Vec<usize>> {
    let n = roots.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while parent[r] != r {
            r = parent[r];
        }
        parent[i] = r;
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            if roots[i].chordal_distance(&roots[j]) < CLUSTER_RADIUS {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[b.max(a)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn affine_roots(r: &PolyRoots) -> Vec<Complex64> {
        r.roots.iter().map(|p| p.affine().unwrap()).collect()
    }

    #[test]
    fn z_squared_minus_one() {
        let r = solve_poly(&[c(1.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)]).unwrap();
        let z = affine_roots(&r);
        assert!((z[0] - c(-1.0, 0.0)).norm() < 1e-15);
        assert!((z[1] - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn z_squared_plus_four() {
        let r = solve_poly(&[c(1.0, 0.0), c(0.0, 0.0), c(4.0, 0.0)]).unwrap();
        let z = affine_roots(&r);
        assert!(z.iter().any(|w| (w - c(0.0, 2.0)).norm() < 1e-14));
        assert!(z.iter().any(|w| (w - c(0.0, -2.0)).norm() < 1e-14));
    }

    #[test]
    fn cubic_vieta() {
        let coeffs = [c(1.0, 0.0), c(0.0, 0.0), c(-2.0, 0.0), c(2.0, 0.0)];
        let r = solve_poly(&coeffs).unwrap();
        let z = affine_roots(&r);
        assert_eq!(z.len(), 3);
        for w in &z {
            let v = w * w * w - 2.0 * w + 2.0;
            assert!(v.norm() < 1e-10);
        }
        let product: Complex64 = z.iter().product();
        assert!((product - c(-2.0, 0.0)).norm() < 1e-9);
        let sum: Complex64 = z.iter().sum();
        assert!(sum.norm() < 1e-9);
    }

    #[test]
    fn leading_zero_gives_root_at_infinity() {
        // 0 z^2 + z - 2: roots 2 and infinity.
        let r = solve_poly(&[c(0.0, 0.0), c(1.0, 0.0), c(-2.0, 0.0)]).unwrap();
        assert!(r.roots[1].is_infinity());
        assert!((r.roots[0].affine().unwrap() - c(2.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn double_root_is_clustered() {
        // (z - 1)^2 (z + 2) = z^3 - 3z + 2
        let r = solve_poly(&[c(1.0, 0.0), c(0.0, 0.0), c(-3.0, 0.0), c(2.0, 0.0)]).unwrap();
        let d = r.distinct();
        assert_eq!(d.len(), 2);
        let double = d.iter().find(|(_, m)| *m == 2).unwrap();
        assert!((double.0.affine().unwrap() - c(1.0, 0.0)).norm() < 1e-7);
        assert!(r.has_multiple_root());
    }

    #[test]
    fn degree_zero_rejected() {
        assert_eq!(
            solve_poly(&[c(3.0, 0.0)]).unwrap_err(),
            LabError::DegreeZero
        );
        assert_eq!(
            solve_poly(&[c(0.0, 0.0), c(0.0, 0.0)]).unwrap_err(),
            LabError::DegreeZero
        );
    }

    #[test]
    fn companion_fallback_agrees_with_aberth() {
        let coeffs = [
            c(1.0, 0.0),
            c(0.5, -1.0),
            c(-2.0, 0.3),
            c(0.0, 1.0),
            c(3.0, 0.0),
        ];
        let mut a = aberth(&coeffs);
        let mut b = companion_roots(&coeffs).unwrap();
        polish(&coeffs, &mut a);
        polish(&coeffs, &mut b);
        a.sort_by(|x, y| x.canonical_cmp(y));
        b.sort_by(|x, y| x.canonical_cmp(y));
        for (x, y) in a.iter().zip(&b) {
            assert!(x.chordal_distance(y) < 1e-10);
        }
    }

    #[test]
    fn high_degree_wilkinson_like() {
        // prod_{k=1}^{8} (z - k/4)
        let mut poly = vec![c(1.0, 0.0)];
        for k in 1..=8 {
            poly = multiply(&poly, &[c(1.0, 0.0), c(-(k as f64) / 4.0, 0.0)]);
        }
        let r = solve_poly(&poly).unwrap();
        for (k, root) in r.roots.iter().enumerate() {
            let expect = (k + 1) as f64 / 4.0;
            assert!((root.affine().unwrap() - c(expect, 0.0)).norm() < 1e-8);
        }
    }

    #[test]
    fn partials_match_coefficient_derivatives() {
        let coeffs = [c(1.0, 2.0), c(-0.5, 0.0), c(0.0, 3.0), c(2.0, -1.0)];
        let (z0, z1) = (c(0.3, -0.7), c(1.2, 0.4));
        let (_, h0, h1) = eval_form_with_partials(&coeffs, z0, z1);
        assert!((h0 - eval_form(&partial_z0(&coeffs), z0, z1)).norm() < 1e-13);
        assert!((h1 - eval_form(&partial_z1(&coeffs), z0, z1)).norm() < 1e-13);
    }
}
