//! Rational maps of the projective line and product maps of two of them.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::point::ProjectivePoint;
use crate::poly::{self, PolyRoots};

/// Normalized Sylvester resultant below this value means `P` and `Q` share a root.
pub const RESULTANT_TOLERANCE: f64 = 1e-10;

/// `f = [P : Q]` with `P`, `Q` homogeneous of degree `d >= 2` and no common root.
///
/// Coefficients are listed from `z^d w^0` down to `z^0 w^d`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "MapSpec", into = "MapSpec")]
pub struct RationalMap {
    p: Vec<Complex64>,
    q: Vec<Complex64>,
    degree: usize,
    wronskian: Vec<Complex64>,
    critical: Vec<(ProjectivePoint, usize)>,
}

/// Wire format of a map: `{"degree": d, "p": [[re, im], ...], "q": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    pub degree: usize,
    pub p: Vec<[f64; 2]>,
    pub q: Vec<[f64; 2]>,
}

impl TryFrom<MapSpec> for RationalMap {
    type Error = LabError;

    fn try_from(spec: MapSpec) -> Result<Self> {
        let conv = |v: &[[f64; 2]]| {
            v.iter()
                .map(|c| Complex64::new(c[0], c[1]))
                .collect::<Vec<_>>()
        };
        if spec.p.len() != spec.degree + 1 || spec.q.len() != spec.degree + 1 {
            return Err(LabError::InvalidMap(format!(
                "degree {} needs {} coefficients per component, got {} and {}",
                spec.degree,
                spec.degree + 1,
                spec.p.len(),
                spec.q.len()
            )));
        }
        RationalMap::new(conv(&spec.p), conv(&spec.q))
    }
}

impl From<RationalMap> for MapSpec {
    fn from(f: RationalMap) -> Self {
        let conv = |v: &[Complex64]| v.iter().map(|c| [c.re, c.im]).collect();
        MapSpec {
            degree: f.degree,
            p: conv(&f.p),
            q: conv(&f.q),
        }
    }
}

impl RationalMap {
    pub fn new(p: Vec<Complex64>, q: Vec<Complex64>) -> Result<Self> {
        if p.len() != q.len() {
            return Err(LabError::InvalidMap(format!(
                "numerator and denominator have {} and {} coefficients",
                p.len(),
                q.len()
            )));
        }
        if p.len() < 3 {
            return Err(LabError::InvalidMap(format!(
                "degree must be at least 2, got {}",
                p.len().saturating_sub(1)
            )));
        }
        if p.iter()
            .chain(&q)
            .any(|c| !(c.re.is_finite() && c.im.is_finite()))
        {
            return Err(LabError::InvalidMap("non-finite coefficient".into()));
        }
        let degree = p.len() - 1;
        let res = normalized_resultant(&p, &q);
        if res.is_nan() || res <= RESULTANT_TOLERANCE {
            return Err(LabError::InvalidMap(format!(
                "P and Q have a common root (normalized resultant {res:e})"
            )));
        }
        let wronskian = poly::sub(
            &poly::multiply(&poly::partial_z0(&p), &poly::partial_z1(&q)),
            &poly::multiply(&poly::partial_z1(&p), &poly::partial_z0(&q)),
        );
        let critical = poly::solve_poly(&wronskian)?.distinct();
        Ok(RationalMap {
            p,
            q,
            degree,
            wronskian,
            critical,
        })
    }

    /// A polynomial map, coefficients highest degree first.
    pub fn polynomial(coeffs: &[Complex64]) -> Result<Self> {
        let d = coeffs.len().saturating_sub(1);
        let mut q = vec![Complex64::new(0.0, 0.0); d + 1];
        q[d] = Complex64::new(1.0, 0.0);
        Self::new(coeffs.to_vec(), q)
    }

    /// `z -> z^d`.
    pub fn power(d: usize) -> Result<Self> {
        let mut p = vec![Complex64::new(0.0, 0.0); d + 1];
        p[0] = Complex64::new(1.0, 0.0);
        Self::polynomial(&p)
    }

    /// `z -> z^2 + c`.
    pub fn quadratic(c: Complex64) -> Result<Self> {
        Self::polynomial(&[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), c])
    }

    /// The Chebyshev polynomial `z^2 - 2`.
    pub fn chebyshev() -> Self {
        Self::quadratic(Complex64::new(-2.0, 0.0)).expect("valid map")
    }

    /// The degree-4 Lattès map `(z^2 + 1)^2 / (4 z (z^2 - 1))`.
    pub fn lattes4() -> Self {
        let r = |x: f64| Complex64::new(x, 0.0);
        Self::new(
            vec![r(1.0), r(0.0), r(2.0), r(0.0), r(1.0)],
            vec![r(0.0), r(4.0), r(0.0), r(-4.0), r(0.0)],
        )
        .expect("valid map")
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn topological_degree(&self) -> usize {
        self.degree
    }

    pub fn numerator(&self) -> &[Complex64] {
        &self.p
    }

    pub fn denominator(&self) -> &[Complex64] {
        &self.q
    }

    pub fn spec(&self) -> MapSpec {
        self.clone().into()
    }

    /// `(P(z0, z1), Q(z0, z1))` before renormalization.
    pub fn eval_homogeneous(&self, x: &ProjectivePoint) -> (Complex64, Complex64) {
        let (z0, z1) = x.coords();
        (
            poly::eval_form(&self.p, z0, z1),
            poly::eval_form(&self.q, z0, z1),
        )
    }

    pub fn evaluate(&self, x: &ProjectivePoint) -> Result<ProjectivePoint> {
        let (a, b) = self.eval_homogeneous(x);
        ProjectivePoint::try_normalized(a, b)
            .ok_or_else(|| LabError::DegenerateEvaluation(x.to_string()))
    }

    /// Derivative norm in the chordal metric, `|f'(z)| (1 + |z|^2) / (1 + |f(z)|^2)`,
    /// computed homogeneously as `|W| |Z|^2 / (d |F(Z)|^2)` with `W` the Jacobian
    /// determinant of `(P, Q)`.
    pub fn spherical_derivative(&self, x: &ProjectivePoint) -> f64 {
        let (z0, z1) = x.coords();
        let w = poly::eval_form(&self.wronskian, z0, z1).norm();
        let (a, b) = self.eval_homogeneous(x);
        let zn = z0.norm_sqr() + z1.norm_sqr();
        w * zn / (self.degree as f64 * (a.norm_sqr() + b.norm_sqr()))
    }

    /// `log Jac f = 2 log f^#`; `-inf` exactly at critical points.
    pub fn log_jacobian(&self, x: &ProjectivePoint) -> f64 {
        2.0 * self.spherical_derivative(x).ln()
    }

    /// The form `b P - a Q` whose roots are `f^{-1}([a : b])`.
    pub fn preimage_form(&self, target: &ProjectivePoint) -> Vec<Complex64> {
        let (a, b) = target.coords();
        self.p
            .iter()
            .zip(&self.q)
            .map(|(p, q)| b * p - a * q)
            .collect()
    }

    /// All `d` preimages, repeated with multiplicity, in canonical order.
    pub fn preimage_roots(&self, target: &ProjectivePoint) -> Result<PolyRoots> {
        poly::solve_poly(&self.preimage_form(target))
    }

    /// Distinct preimages with multiplicities; a multiplicity above one flags
    /// `target` as a critical value.
    pub fn preimages(&self, target: &ProjectivePoint) -> Result<Vec<(ProjectivePoint, usize)>> {
        Ok(self.preimage_roots(target)?.distinct())
    }

    /// Roots of the homogeneous Wronskian, `2d - 2` counted with multiplicity.
    pub fn critical_points(&self) -> Result<Vec<(ProjectivePoint, usize)>> {
        Ok(self.critical.clone())
    }

    pub(crate) fn critical_slice(&self) -> &[(ProjectivePoint, usize)] {
        &self.critical
    }

    pub fn critical_values(&self) -> Vec<ProjectivePoint> {
        self.critical
            .iter()
            .filter_map(|(c, _)| self.evaluate(c).ok())
            .collect()
    }

    /// Chordal distance to the nearest critical point.
    pub fn distance_to_critical(&self, x: &ProjectivePoint) -> f64 {
        self.critical
            .iter()
            .map(|(c, _)| c.chordal_distance(x))
            .fold(1.0, f64::min)
    }
}

/// `|Res(P, Q)|` after scaling both coefficient vectors to unit max-modulus.
fn normalized_resultant(p: &[Complex64], q: &[Complex64]) -> f64 {
    let d = p.len() - 1;
    let scale = |v: &[Complex64]| {
        let m = v.iter().map(|c| c.norm()).fold(0.0, f64::max);
        v.iter().map(|c| c / m).collect::<Vec<_>>()
    };
    let (p, q) = (scale(p), scale(q));
    if p.iter().chain(&q).any(|c| c.is_nan()) {
        return 0.0;
    }
    let n = 2 * d;
    let mut s = DMatrix::<Complex64>::zeros(n, n);
    for row in 0..d {
        for k in 0..=d {
            s[(row, row + k)] = p[k];
            s[(row + d, row + k)] = q[k];
        }
    }
    s.lu().determinant().norm()
}

/// `(f, g)` acting on pairs of points, topological degree `d^2`.
///
/// The Jacobian is taken with respect to the product of chordal metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProductMap {
    pub first: RationalMap,
    pub second: RationalMap,
}

pub type ProductPoint = (ProjectivePoint, ProjectivePoint);

impl ProductMap {
    pub fn new(first: RationalMap, second: RationalMap) -> Result<Self> {
        if first.degree() != second.degree() {
            return Err(LabError::InvalidMap(format!(
                "product factors have degrees {} and {}",
                first.degree(),
                second.degree()
            )));
        }
        Ok(ProductMap { first, second })
    }

    pub fn degree(&self) -> usize {
        self.first.degree()
    }

    pub fn topological_degree(&self) -> usize {
        self.first.degree() * self.second.degree()
    }

    pub fn evaluate(&self, x: &ProductPoint) -> Result<ProductPoint> {
        Ok((self.first.evaluate(&x.0)?, self.second.evaluate(&x.1)?))
    }

    pub fn log_jacobian(&self, x: &ProductPoint) -> f64 {
        self.first.log_jacobian(&x.0) + self.second.log_jacobian(&x.1)
    }

    /// Product-metric distance `max(d(p1, q1), d(p2, q2))`.
    pub fn distance(a: &ProductPoint, b: &ProductPoint) -> f64 {
        a.0.chordal_distance(&b.0).max(a.1.chordal_distance(&b.1))
    }
}
