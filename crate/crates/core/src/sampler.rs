//! Monte Carlo access to the equilibrium measure by backward random iteration.
//!
//! A backward chain from the root `z` picks, at every step, one of the `d`
//! preimages of the current point uniformly at random. After `n + 1` steps
//! the point is distributed exactly as the uniform measure on
//! `f^{-(n+1)}(z)`, which converges geometrically to the equilibrium measure.
//!
//! Recording the whole chain also yields genuine forward orbits: if
//! `c_0 = z, c_1, ..., c_L` is the chain then `f(c_{k+1}) = c_k`, so read
//! backwards it is an orbit whose every point sits deep in the tree. This
//! is how every statistical estimator obtains `x, f(x), ..., f^n(x)` for
//! `x ~ mu`: iterating `f` forward in floating point leaves a repelling Julia
//! set within a few dozen steps, while the inverse branches contract.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::estimate::{mean_stderr, Estimate};
use crate::map::RationalMap;
use crate::observables::Observable;
use crate::point::ProjectivePoint;
use crate::poly::CLUSTER_RADIUS;
use crate::rng::SeedSpec;

/// Redraws allowed per draw before the estimator gives up.
pub const MAX_ATTEMPTS: u32 = 8;

/// Default backward depth: 30 steps for `d = 2`, scaled by `log 2 / log d`.
pub fn default_depth(degree: usize) -> usize {
    (30.0 / (degree as f64).log2()).ceil() as usize
}

/// One backward step: a uniformly chosen preimage of `x`.
///
/// If the chosen preimage is part of a multiple root the symbol is drawn
/// once more; a second collision aborts the draw.
pub fn backward_step<R: Rng + ?Sized>(
    f: &RationalMap,
    x: &ProjectivePoint,
    rng: &mut R,
) -> Result<ProjectivePoint> {
    let roots = f.preimage_roots(x)?.roots;
    let d = roots.len();
    for _ in 0..2 {
        let i = rng.random_range(0..d);
        let simple = roots
            .iter()
            .enumerate()
            .all(|(j, r)| j == i || r.chordal_distance(&roots[i]) >= CLUSTER_RADIUS);
        if simple {
            return Ok(roots[i]);
        }
    }
    Err(LabError::PreimageCollision)
}

/// The chain `c_0 = root, c_1, ..., c_steps` of a backward walk.
pub fn backward_chain<R: Rng + ?Sized>(
    f: &RationalMap,
    root: &ProjectivePoint,
    steps: usize,
    rng: &mut R,
) -> Result<Vec<ProjectivePoint>> {
    let mut chain = Vec::with_capacity(steps + 1);
    chain.push(*root);
    let mut x = *root;
    for _ in 0..steps {
        x = backward_step(f, &x, rng)?;
        chain.push(x);
    }
    Ok(chain)
}

/// `z_depth` along a uniformly random word: `depth + 1` backward steps.
pub fn backward_sample(
    f: &RationalMap,
    root: &ProjectivePoint,
    depth: usize,
    seed: SeedSpec,
) -> Result<ProjectivePoint> {
    let mut rng = seed.rng(0);
    backward_walk(f, root, depth + 1, &mut rng)
}

fn backward_walk<R: Rng + ?Sized>(
    f: &RationalMap,
    root: &ProjectivePoint,
    steps: usize,
    rng: &mut R,
) -> Result<ProjectivePoint> {
    let mut x = *root;
    for _ in 0..steps {
        x = backward_step(f, &x, rng)?;
    }
    Ok(x)
}

/// Forward orbit `x, f(x), ..., f^n(x)` by direct iteration.
pub fn forward_orbit(
    f: &RationalMap,
    x: &ProjectivePoint,
    n: usize,
) -> Result<Vec<ProjectivePoint>> {
    let mut orbit = Vec::with_capacity(n + 1);
    orbit.push(*x);
    let mut y = *x;
    for _ in 0..n {
        y = f.evaluate(&y)?;
        orbit.push(y);
    }
    Ok(orbit)
}

/// A source of approximate `mu`-samples and `mu`-typical orbit segments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ensemble {
    pub map: RationalMap,
    pub root: ProjectivePoint,
    /// Backward depth `n` of a sample `z_n`, i.e. `n + 1` steps from the root.
    pub depth: usize,
    pub seed: SeedSpec,
}

impl Ensemble {
    pub fn new(map: RationalMap, root: ProjectivePoint, depth: usize, seed: SeedSpec) -> Self {
        Ensemble {
            map,
            root,
            depth,
            seed,
        }
    }

    /// Same map and root, independent draws.
    pub fn with_stream(&self, label: u64) -> Ensemble {
        Ensemble {
            seed: self.seed.substream(label),
            ..self.clone()
        }
    }

    pub fn with_depth(&self, depth: usize) -> Ensemble {
        Ensemble {
            depth,
            ..self.clone()
        }
    }

    /// Draw `index`, retried on preimage collisions.
    pub fn sample(&self, index: u64) -> Result<ProjectivePoint> {
        self.retrying(index, |rng| {
            backward_walk(&self.map, &self.root, self.depth + 1, rng)
        })
        .map(|(p, _)| p)
    }

    /// Orbit `y_0, ..., y_len` with `f(y_k) = y_{k+1}` and `y_len` at the
    /// ensemble depth.
    pub fn orbit(&self, index: u64, len: usize) -> Result<Vec<ProjectivePoint>> {
        self.orbit_attempt(index, len).map(|(o, _)| o)
    }

    fn orbit_attempt(&self, index: u64, len: usize) -> Result<(Vec<ProjectivePoint>, u32)> {
        self.retrying(index, |rng| {
            let mut chain = backward_chain(&self.map, &self.root, self.depth + 1 + len, rng)?;
            chain.drain(..self.depth + 1);
            chain.reverse();
            Ok(chain)
        })
    }

    /// Observable values along an orbit, redrawing the whole orbit while any
    /// value is `-inf`. Returns the values and the number of redraws.
    pub fn orbit_values(
        &self,
        psi: &Observable,
        index: u64,
        len: usize,
    ) -> Result<(Vec<f64>, u32)> {
        self.retrying(index, |rng| {
            let mut chain = backward_chain(&self.map, &self.root, self.depth + 1 + len, rng)?;
            chain.drain(..self.depth + 1);
            chain.reverse();
            let values: Vec<f64> = chain.iter().map(|p| psi.evaluate(p)).collect();
            if values.iter().all(|v| v.is_finite()) {
                Ok(values)
            } else {
                Err(LabError::Precondition("singular sample".into()))
            }
        })
    }

    /// A finite value `psi(x)` at a sample, with the redraw count.
    pub fn sample_value(
        &self,
        psi: &Observable,
        index: u64,
    ) -> Result<(ProjectivePoint, f64, u32)> {
        self.retrying(index, |rng| {
            let x = backward_walk(&self.map, &self.root, self.depth + 1, rng)?;
            let v = psi.evaluate(&x);
            if v.is_finite() {
                Ok((x, v))
            } else {
                Err(LabError::Precondition("singular sample".into()))
            }
        })
        .map(|((x, v), r)| (x, v, r))
    }

    fn retrying<T>(
        &self,
        index: u64,
        mut draw: impl FnMut(&mut rand_chacha::ChaCha8Rng) -> Result<T>,
    ) -> Result<(T, u32)> {
        let mut last = LabError::PreimageCollision;
        for attempt in 0..MAX_ATTEMPTS {
            let mut rng = self.seed.rng_attempt(index, attempt);
            match draw(&mut rng) {
                Ok(v) => return Ok((v, attempt)),
                Err(e @ (LabError::PreimageCollision | LabError::Precondition(_))) => last = e,
                Err(e) => return Err(e),
            }
        }
        Err(last)
    }
}

/// `N` independent backward samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MuSampleBatch {
    pub points: Vec<ProjectivePoint>,
    pub depth: usize,
    pub root: ProjectivePoint,
    pub seed: SeedSpec,
    /// Draws that hit a preimage collision and were redrawn.
    pub redrawn: u64,
}

impl MuSampleBatch {
    /// CSV with columns `draw_index,re0,im0,re1,im1`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("draw_index,re0,im0,re1,im1\n");
        for (i, p) in self.points.iter().enumerate() {
            let a = p.to_array();
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e}\n",
                i, a[0], a[1], a[2], a[3]
            ));
        }
        out
    }

    pub fn mean_of(&self, phi: &Observable) -> Estimate {
        let v: Vec<f64> = self.points.iter().map(|p| phi.evaluate(p)).collect();
        mean_stderr(&v)
    }
}

pub fn mu_batch(
    f: &RationalMap,
    root: &ProjectivePoint,
    depth: usize,
    n: usize,
    seed: SeedSpec,
) -> Result<MuSampleBatch> {
    if n == 0 {
        return Err(LabError::Precondition(
            "batch size must be at least 1".into(),
        ));
    }
    let ens = Ensemble::new(f.clone(), *root, depth, seed);
    let draws: Vec<(ProjectivePoint, u32)> = (0..n as u64)
        .into_par_iter()
        .map(|i| ens.retrying(i, |rng| backward_walk(f, root, depth + 1, rng)))
        .collect::<Result<_>>()?;
    let redrawn = draws.iter().filter(|(_, a)| *a > 0).count() as u64;
    Ok(MuSampleBatch {
        points: draws.into_iter().map(|(p, _)| p).collect(),
        depth,
        root: *root,
        seed,
        redrawn,
    })
}

/// Gap between the sampled preimage measure at one depth and at the reference depth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquidistributionRow {
    pub depth: usize,
    pub test_fn: usize,
    pub mean: Estimate,
    pub gap: Estimate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquidistributionReport {
    pub reference_depth: usize,
    pub reference_means: Vec<Estimate>,
    pub rows: Vec<EquidistributionRow>,
}

pub fn equidistribution_gap(
    f: &RationalMap,
    root: &ProjectivePoint,
    depths: &[usize],
    reference_depth: usize,
    test_fns: &[Observable],
    n: usize,
    seed: SeedSpec,
) -> Result<EquidistributionReport> {
    if depths.iter().any(|&d| d >= reference_depth) {
        return Err(LabError::Precondition(
            "reference depth must exceed every scheduled depth".into(),
        ));
    }
    let means = |depth: usize, label: u64| -> Result<Vec<Estimate>> {
        let batch = mu_batch(f, root, depth, n, seed.substream(label))?;
        Ok(test_fns.iter().map(|phi| batch.mean_of(phi)).collect())
    };
    let reference_means = means(reference_depth, u64::MAX)?;
    let mut rows = Vec::new();
    for (k, &depth) in depths.iter().enumerate() {
        let m = means(depth, k as u64)?;
        for (t, (est, r)) in m.iter().zip(&reference_means).enumerate() {
            rows.push(EquidistributionRow {
                depth,
                test_fn: t,
                mean: *est,
                gap: Estimate::new(
                    (est.value - r.value).abs(),
                    (est.stderr.powi(2) + r.stderr.powi(2)).sqrt(),
                ),
            });
        }
    }
    Ok(EquidistributionReport {
        reference_depth,
        reference_means,
        rows,
    })
}

/// Uniform point on the sphere (normalized area measure).
pub fn uniform_sphere_point<R: Rng + ?Sized>(rng: &mut R) -> ProjectivePoint {
    let u: f64 = rng.random();
    let theta: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    let r = (u / (1.0 - u)).sqrt();
    if r.is_finite() {
        ProjectivePoint::from_affine(Complex64::from_polar(r, theta))
    } else {
        ProjectivePoint::infinity()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observables::{make_holder, Kernel};

    fn sq() -> RationalMap {
        RationalMap::power(2).unwrap()
    }

    #[test]
    fn depth_zero_and_one_land_on_preimages() {
        let f = sq();
        let root = ProjectivePoint::from_real(3.0);
        for s in 0..20 {
            let x = backward_sample(&f, &root, 0, SeedSpec::new(s, 0)).unwrap();
            assert!((x.affine().unwrap().norm() - 3f64.sqrt()).abs() < 1e-14);
            let y = backward_sample(&f, &root, 1, SeedSpec::new(s, 0)).unwrap();
            let w = y.affine().unwrap();
            assert!((w.powu(4) - Complex64::new(3.0, 0.0)).norm() < 1e-13);
        }
    }

    #[test]
    fn orbit_is_a_forward_orbit() {
        let f = RationalMap::lattes4();
        let ens = Ensemble::new(
            f.clone(),
            ProjectivePoint::from_affine(Complex64::new(0.3, 0.7)),
            10,
            SeedSpec::new(1, 2),
        );
        let orbit = ens.orbit(5, 30).unwrap();
        assert_eq!(orbit.len(), 31);
        for w in orbit.windows(2) {
            assert!(f.evaluate(&w[0]).unwrap().chordal_distance(&w[1]) < 1e-10);
        }
        let last = ens.with_depth(10).sample(5);
        assert!(last.is_ok());
    }

    #[test]
    fn batch_singleton_equals_sample_zero() {
        let f = sq();
        let root = ProjectivePoint::from_real(3.0);
        let seed = SeedSpec::new(9, 4);
        let batch = mu_batch(&f, &root, 12, 1, seed).unwrap();
        let ens = Ensemble::new(f, root, 12, seed);
        assert_eq!(batch.points[0], ens.sample(0).unwrap());
        assert!(mu_batch(&sq(), &root, 12, 0, seed).is_err());
    }

    #[test]
    fn forward_orbit_examples() {
        let f = sq();
        let one = ProjectivePoint::from_real(1.0);
        assert!(forward_orbit(&f, &one, 5)
            .unwrap()
            .iter()
            .all(|p| p.approx_eq(&one)));
        let x = ProjectivePoint::from_affine(Complex64::from_polar(1.0, 0.3));
        for p in forward_orbit(&f, &x, 8).unwrap() {
            assert!((p.affine().unwrap().norm() - 1.0).abs() < 1e-12);
        }
        assert_eq!(forward_orbit(&f, &x, 0).unwrap(), vec![x]);
    }

    #[test]
    fn collision_at_critical_value_is_redrawn_then_reported() {
        // Every preimage of 0 under z^2 is the double root 0.
        let f = sq();
        let mut rng = SeedSpec::new(0, 0).rng(0);
        let err = backward_step(&f, &ProjectivePoint::from_real(0.0), &mut rng).unwrap_err();
        assert_eq!(err, LabError::PreimageCollision);
    }

    #[test]
    fn constant_test_function_has_zero_gap() {
        let f = sq();
        let one = make_holder(Kernel::Constant(1.0), 1.0);
        let rep = equidistribution_gap(
            &f,
            &ProjectivePoint::from_real(3.0),
            &[1, 3],
            8,
            &[one],
            50,
            SeedSpec::new(1, 1),
        )
        .unwrap();
        assert!(rep.rows.iter().all(|r| r.gap.value == 0.0));
        assert!(equidistribution_gap(
            &f,
            &ProjectivePoint::from_real(3.0),
            &[9],
            8,
            &[],
            5,
            SeedSpec::new(1, 1)
        )
        .is_err());
    }
}
