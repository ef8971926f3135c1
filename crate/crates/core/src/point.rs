//! Points of the projective line in normalized homogeneous coordinates.

use std::cmp::Ordering;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Two points closer than this in the chordal metric are the same point.
pub const EQUALITY_TOLERANCE: f64 = 1e-12;

/// A point `[z0 : z1]` of the projective line.
///
/// The pair is always stored with its larger-modulus coordinate scaled to
/// exactly `1`, so the affine chart (`z1 == 1`) is used whenever `|z| <= 1`
/// and the chart at infinity (`z0 == 1`) otherwise.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectivePoint {
    z0: Complex64,
    z1: Complex64,
}

impl ProjectivePoint {
    pub fn new(z0: Complex64, z1: Complex64) -> Result<Self> {
        Self::try_normalized(z0, z1).ok_or(LabError::DegeneratePoint)
    }

    /// Normalizes `(z0, z1)`, returning `None` for `(0, 0)` or non-finite input.
    pub(crate) fn try_normalized(z0: Complex64, z1: Complex64) -> Option<Self> {
        let (a0, a1) = (z0.norm(), z1.norm());
        if !(a0.is_finite() && a1.is_finite()) || (a0 == 0.0 && a1 == 0.0) {
            return None;
        }
        Some(if a1 >= a0 {
            ProjectivePoint {
                z0: z0 / z1,
                z1: Complex64::new(1.0, 0.0),
            }
        } else {
            ProjectivePoint {
                z0: Complex64::new(1.0, 0.0),
                z1: z1 / z0,
            }
        })
    }

    pub fn from_affine(z: Complex64) -> Self {
        if z.re.is_finite() && z.im.is_finite() {
            Self::try_normalized(z, Complex64::new(1.0, 0.0)).expect("finite affine point")
        } else {
            Self::infinity()
        }
    }

    pub fn from_real(x: f64) -> Self {
        Self::from_affine(Complex64::new(x, 0.0))
    }

    pub fn infinity() -> Self {
        ProjectivePoint {
            z0: Complex64::new(1.0, 0.0),
            z1: Complex64::new(0.0, 0.0),
        }
    }

    pub fn z0(&self) -> Complex64 {
        self.z0
    }

    pub fn z1(&self) -> Complex64 {
        self.z1
    }

    pub fn coords(&self) -> (Complex64, Complex64) {
        (self.z0, self.z1)
    }

    /// `[re0, im0, re1, im1]`, the layout used by every export format.
    pub fn to_array(&self) -> [f64; 4] {
        [self.z0.re, self.z0.im, self.z1.re, self.z1.im]
    }

    pub fn is_infinity(&self) -> bool {
        self.z1 == Complex64::new(0.0, 0.0)
    }

    /// Affine coordinate `z0 / z1`; `None` exactly at infinity.
    pub fn affine(&self) -> Option<Complex64> {
        if self.is_infinity() {
            None
        } else {
            Some(self.z0 / self.z1)
        }
    }

    /// Euclidean norm of the stored representative.
    pub fn norm(&self) -> f64 {
        (self.z0.norm_sqr() + self.z1.norm_sqr()).sqrt()
    }

    /// Chordal distance `|p0 q1 - p1 q0| / (|p| |q|)`, with values in `[0, 1]`.
    pub fn chordal_distance(&self, other: &ProjectivePoint) -> f64 {
        let cross = self.z0 * other.z1 - self.z1 * other.z0;
        (cross.norm() / (self.norm() * other.norm())).min(1.0)
    }

    pub fn approx_eq(&self, other: &ProjectivePoint) -> bool {
        self.chordal_distance(other) < EQUALITY_TOLERANCE
    }

    /// Antipode on the sphere, `z -> -1 / conj(z)`.
    pub fn antipode(&self) -> ProjectivePoint {
        Self::try_normalized(-self.z1.conj(), self.z0.conj()).expect("nonzero")
    }

    /// Deterministic ordering: lexicographic on `(Re, Im)` of the affine
    /// coordinate with infinity last.
    pub fn canonical_cmp(&self, other: &ProjectivePoint) -> Ordering {
        match (self.affine(), other.affine()) {
            (None, None) => Ordering::Equal,
            (None, Some(_)) => Ordering::Greater,
            (Some(_), None) => Ordering::Less,
            (Some(a), Some(b)) => a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)),
        }
    }

    /// Unit-norm representative aligned in phase with `reference`, so that
    /// straight interpolation in `C^2` follows the short great-circle arc.
    pub(crate) fn aligned_unit(&self, reference: &ProjectivePoint) -> (Complex64, Complex64) {
        let n = self.norm();
        let (a0, a1) = (self.z0 / n, self.z1 / n);
        let m = reference.norm();
        let (r0, r1) = (reference.z0 / m, reference.z1 / m);
        let inner = r0.conj() * a0 + r1.conj() * a1;
        if inner.norm() == 0.0 {
            return (a0, a1);
        }
        let phase = inner.conj() / inner.norm();
        (a0 * phase, a1 * phase)
    }

    /// Point at parameter `t` on the great-circle arc from `self` to `other`.
    pub fn interpolate(&self, other: &ProjectivePoint, t: f64) -> ProjectivePoint {
        let n = self.norm();
        let (a0, a1) = (self.z0 / n, self.z1 / n);
        let (b0, b1) = other.aligned_unit(self);
        let s = Complex64::new(1.0 - t, 0.0);
        let u = Complex64::new(t, 0.0);
        Self::try_normalized(s * a0 + u * b0, s * a1 + u * b1).unwrap_or(*other)
    }
}

impl fmt::Debug for ProjectivePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.affine() {
            Some(z) => write!(f, "[{} : 1]", z),
            None => write!(f, "[1 : 0]"),
        }
    }
}

impl fmt::Display for ProjectivePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn normalization_puts_max_coordinate_at_one() {
        let p = ProjectivePoint::new(c(4.0, 0.0), c(2.0, 0.0)).unwrap();
        assert_eq!(p.z0(), c(1.0, 0.0));
        assert_eq!(p.z1(), c(0.5, 0.0));
        assert_eq!(p.affine().unwrap(), c(2.0, 0.0));
        let q = ProjectivePoint::new(c(0.0, 1.0), c(0.0, 2.0)).unwrap();
        assert_eq!(q.z1(), c(1.0, 0.0));
    }

    #[test]
    fn origin_pair_is_rejected() {
        assert!(ProjectivePoint::new(c(0.0, 0.0), c(0.0, 0.0)).is_err());
        assert!(ProjectivePoint::new(c(f64::NAN, 0.0), c(1.0, 0.0)).is_err());
    }

    #[test]
    fn chordal_examples() {
        let one = ProjectivePoint::from_real(1.0);
        assert_eq!(one.chordal_distance(&one), 0.0);
        let zero = ProjectivePoint::from_real(0.0);
        assert!((zero.chordal_distance(&ProjectivePoint::infinity()) - 1.0).abs() < 1e-15);
        let i = ProjectivePoint::from_affine(c(0.0, 1.0));
        let d = one.chordal_distance(&i);
        assert!((d - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn chordal_matches_stereographic_chord() {
        // Sphere of diameter 1 centred at (0, 0, 1/2) touching the plane at 0.
        fn lift(z: Complex64) -> [f64; 3] {
            let s = 1.0 + z.norm_sqr();
            [z.re / s, z.im / s, z.norm_sqr() / s]
        }
        for (a, b) in [(c(1.0, 0.0), c(0.0, 1.0)), (c(0.3, -2.0), c(5.0, 1.0))] {
            let (pa, pb) = (lift(a), lift(b));
            let chord =
                ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2) + (pa[2] - pb[2]).powi(2))
                    .sqrt();
            let d =
                ProjectivePoint::from_affine(a).chordal_distance(&ProjectivePoint::from_affine(b));
            assert!((d - chord).abs() < 1e-14, "{d} vs {chord}");
        }
    }

    #[test]
    fn ordering_puts_infinity_last() {
        let mut v = [
            ProjectivePoint::infinity(),
            ProjectivePoint::from_affine(c(1.0, -1.0)),
            ProjectivePoint::from_affine(c(-1.0, 0.0)),
            ProjectivePoint::from_affine(c(1.0, -2.0)),
        ];
        v.sort_by(|a, b| a.canonical_cmp(b));
        assert_eq!(v[0].affine().unwrap(), c(-1.0, 0.0));
        assert!((v[1].affine().unwrap() - c(1.0, -2.0)).norm() < 1e-15);
        assert!(v[3].is_infinity());
    }

    #[test]
    fn interpolation_endpoints() {
        let a = ProjectivePoint::from_affine(c(3.0, 1.0));
        let b = ProjectivePoint::from_affine(c(-0.2, 0.5));
        assert!(a.interpolate(&b, 0.0).chordal_distance(&a) < 1e-15);
        assert!(a.interpolate(&b, 1.0).chordal_distance(&b) < 1e-15);
        let mid = a.interpolate(&b, 0.5);
        let (da, db) = (mid.chordal_distance(&a), mid.chordal_distance(&b));
        assert!((da - db).abs() < 1e-12);
    }
}
