//! Geometric coding trees: labeled iterated preimages of a root, lifted
//! connecting paths, contraction censuses and cylinder variances.
//!
//! A word `(a_0, ..., a_j)` over `{1, ..., d}` is stored at index
//! `sum (a_i - 1) d^i`, so `a_0` is the least significant digit. The shift
//! drops `a_0` (index `I / d`) and the prefix `(a_0, ..., a_{j-1})` has index
//! `I mod d^j`. Vertices satisfy `f(vertex(a_0..a_j)) = vertex(a_1..a_j)`.

use std::fmt::Write as _;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::estimate::{jackknife_stderr, linear_fit, quantile, Estimate, LinearFit};
use crate::map::RationalMap;
use crate::observables::Observable;
use crate::point::ProjectivePoint;
use crate::poly::{self, CLUSTER_RADIUS};
use crate::rng::SeedSpec;
use crate::sampler::uniform_sphere_point;

/// Samples per base path.
pub const PATH_SAMPLES: usize = 64;
/// Paths and lifts must stay this far (chordal) from critical data.
pub const CRITICAL_PROXIMITY: f64 = 1e-4;
/// Largest number of leaves a stored tree may have.
pub const MEMORY_BUDGET: u64 = 1 << 22;
/// Candidate roots drawn before [`choose_root`] gives up.
pub const ROOT_CANDIDATES: u64 = 100;
/// Lifted endpoints must land this close to a solved preimage.
pub const SNAP_TOLERANCE: f64 = 1e-6;

const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labeling {
    Sorted,
    PathLifted,
}

/// A sampled path with its parameter grid on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePath {
    pub samples: Vec<ProjectivePoint>,
    pub grid: Vec<f64>,
}

impl DiscretePath {
    pub fn new(samples: Vec<ProjectivePoint>, grid: Vec<f64>) -> Result<Self> {
        if samples.len() < 2 || samples.len() != grid.len() {
            return Err(LabError::Precondition(
                "a path needs at least two samples and a matching grid".into(),
            ));
        }
        Ok(DiscretePath { samples, grid })
    }

    pub fn from_fn(n: usize, gamma: impl Fn(f64) -> ProjectivePoint) -> Self {
        let grid: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
        DiscretePath {
            samples: grid.iter().map(|&t| gamma(t)).collect(),
            grid,
        }
    }

    /// Great-circle arc from `a` to `b`.
    pub fn great_circle(a: &ProjectivePoint, b: &ProjectivePoint, n: usize) -> Self {
        Self::from_fn(n, |t| a.interpolate(b, t))
    }

    pub fn start(&self) -> ProjectivePoint {
        self.samples[0]
    }

    pub fn end(&self) -> ProjectivePoint {
        *self.samples.last().expect("nonempty path")
    }

    /// Smallest chordal distance from the path, taken as a chain of
    /// great-circle arcs, to any of `points`.
    pub fn clearance(&self, points: &[ProjectivePoint]) -> f64 {
        let mut best: f64 = 1.0;
        for w in self.samples.windows(2) {
            let (a, b) = (sphere(&w[0]), sphere(&w[1]));
            for q in points {
                best = best.min(arc_distance(a, b, sphere(q)));
            }
        }
        best
    }
}

type Vec3 = [f64; 3];

/// Embedding of the projective line onto the unit sphere of `R^3`; chordal
/// distance is half the Euclidean distance there.
fn sphere(p: &ProjectivePoint) -> Vec3 {
    let (z0, z1) = p.coords();
    let n = z0.norm_sqr() + z1.norm_sqr();
    let c = z0 * z1.conj();
    [
        2.0 * c.re / n,
        2.0 * c.im / n,
        (z0.norm_sqr() - z1.norm_sqr()) / n,
    ]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn half_dist(a: Vec3, b: Vec3) -> f64 {
    0.5 * ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Chordal distance from `q` to the short great-circle arc from `a` to `b`.
fn arc_distance(a: Vec3, b: Vec3, q: Vec3) -> f64 {
    let ends = half_dist(a, q).min(half_dist(b, q));
    let n = cross(a, b);
    let nn = dot(n, n).sqrt();
    if nn < 1e-15 {
        return ends;
    }
    let n = [n[0] / nn, n[1] / nn, n[2] / nn];
    let h = dot(q, n);
    let proj = [q[0] - h * n[0], q[1] - h * n[1], q[2] - h * n[2]];
    let pn = dot(proj, proj).sqrt();
    if pn < 1e-15 {
        return ends;
    }
    let c = [proj[0] / pn, proj[1] / pn, proj[2] / pn];
    if dot(cross(a, c), n) >= 0.0 && dot(cross(c, b), n) >= 0.0 {
        half_dist(c, q).min(ends)
    } else {
        ends
    }
}

/// Why a candidate root was rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RootRejection {
    NearCriticalOrbit { iterate: usize },
    Periodic { period: usize },
    MultiplePreimage,
    Degenerate,
}

/// The validity screen applied to tree roots.
pub fn screen_root(f: &RationalMap, z: &ProjectivePoint) -> std::result::Result<(), RootRejection> {
    for (c, _) in f.critical_slice() {
        let mut y = *c;
        for k in 0..=20 {
            if y.chordal_distance(z) < 1e-6 {
                return Err(RootRejection::NearCriticalOrbit { iterate: k });
            }
            y = f.evaluate(&y).map_err(|_| RootRejection::Degenerate)?;
        }
    }
    let mut y = *z;
    for k in 1..=6 {
        y = f.evaluate(&y).map_err(|_| RootRejection::Degenerate)?;
        if y.chordal_distance(z) < 1e-8 {
            return Err(RootRejection::Periodic { period: k });
        }
    }
    match f.preimage_roots(z) {
        Ok(r) if !r.has_multiple_root() => Ok(()),
        Ok(_) => Err(RootRejection::MultiplePreimage),
        Err(_) => Err(RootRejection::Degenerate),
    }
}

/// A random root passing [`screen_root`].
pub fn choose_root(f: &RationalMap, seed: SeedSpec) -> Result<ProjectivePoint> {
    for i in 0..ROOT_CANDIDATES {
        let z = uniform_sphere_point(&mut seed.rng(i));
        if screen_root(f, &z).is_ok() {
            return Ok(z);
        }
    }
    Err(LabError::ScreeningFailure {
        attempts: ROOT_CANDIDATES as usize,
    })
}

fn forward_critical_orbit(f: &RationalMap, steps: usize) -> Vec<ProjectivePoint> {
    let mut out = Vec::new();
    for (c, _) in f.critical_slice() {
        let mut y = *c;
        for _ in 0..steps {
            match f.evaluate(&y) {
                Ok(next) => y = next,
                Err(_) => break,
            }
            out.push(y);
        }
    }
    out
}

/// Base paths `z -> w_a` for the `d` sorted preimages of `z`.
///
/// Each path is a great-circle arc; an arc passing within
/// [`CRITICAL_PROXIMITY`] of the first 20 images of the critical points is
/// replaced once by a two-leg path through a random via-point.
pub fn base_paths(
    f: &RationalMap,
    z: &ProjectivePoint,
    seed: SeedSpec,
) -> Result<Vec<DiscretePath>> {
    let post = forward_critical_orbit(f, 20);
    let roots = f.preimage_roots(z)?;
    let mut out = Vec::with_capacity(roots.roots.len());
    for (a, w) in roots.roots.iter().enumerate() {
        let direct = DiscretePath::great_circle(z, w, PATH_SAMPLES);
        if direct.clearance(&post) >= CRITICAL_PROXIMITY {
            out.push(direct);
            continue;
        }
        let mut rng = seed.substream(0xba5e).rng(a as u64);
        let mut rerouted = None;
        for _ in 0..16 {
            let via = uniform_sphere_point(&mut rng);
            let path = two_leg(z, &via, w);
            if path.clearance(&post) >= CRITICAL_PROXIMITY {
                rerouted = Some(path);
                break;
            }
        }
        out.push(rerouted.ok_or(LabError::Collision {
            level: 0,
            radius: CRITICAL_PROXIMITY,
        })?);
    }
    Ok(out)
}

fn two_leg(a: &ProjectivePoint, via: &ProjectivePoint, b: &ProjectivePoint) -> DiscretePath {
    let half = PATH_SAMPLES / 2;
    DiscretePath::from_fn(PATH_SAMPLES, |t| {
        let s = t * (PATH_SAMPLES - 1) as f64 / half as f64;
        if s <= 1.0 {
            a.interpolate(via, s)
        } else {
            via.interpolate(
                b,
                ((s - 1.0) * half as f64 / (PATH_SAMPLES - 1 - half) as f64).min(1.0),
            )
        }
    })
}

/// The lift of `path` by `f` starting at `start`.
///
/// Each segment is tracked by an Euler predictor on the implicit equation
/// `b(t) P(w) - a(t) Q(w) = 0` and a Newton corrector, halving the step when
/// the corrector moves too far from the prediction.
pub fn lift_path(
    f: &RationalMap,
    path: &DiscretePath,
    start: &ProjectivePoint,
) -> Result<DiscretePath> {
    let image = f.evaluate(start)?;
    if image.chordal_distance(&path.start()) > 1e-9 {
        return Err(LabError::Precondition(format!(
            "start {start} maps to {image}, not to the path start {}",
            path.start()
        )));
    }
    let mut out = Vec::with_capacity(path.samples.len());
    out.push(*start);
    let mut w = *start;
    for (k, seg) in path.samples.windows(2).enumerate() {
        w = track_segment(f, &seg[0], &seg[1], w, path.grid[k])?;
        if f.distance_to_critical(&w) < CRITICAL_PROXIMITY {
            return Err(LabError::Collision {
                level: 0,
                radius: CRITICAL_PROXIMITY,
            });
        }
        out.push(w);
    }
    Ok(DiscretePath {
        samples: out,
        grid: path.grid.clone(),
    })
}

struct Chart {
    flipped: bool,
}

impl Chart {
    fn of(w: &ProjectivePoint) -> Chart {
        Chart {
            flipped: w.z1() != ONE,
        }
    }

    fn coord(&self, w: &ProjectivePoint) -> Complex64 {
        if self.flipped {
            w.z1() / w.z0()
        } else {
            w.z0() / w.z1()
        }
    }

    fn point(&self, x: Complex64) -> Option<ProjectivePoint> {
        if self.flipped {
            ProjectivePoint::try_normalized(ONE, x)
        } else {
            ProjectivePoint::try_normalized(x, ONE)
        }
    }

    /// `(H, dH/dx, dH/dt)` for `H = b P - a Q` along `(a, b) = A + t (B - A)`.
    fn eval(
        &self,
        f: &RationalMap,
        x: Complex64,
        ab: (Complex64, Complex64),
        dab: (Complex64, Complex64),
    ) -> (Complex64, Complex64, Complex64) {
        let (z0, z1) = if self.flipped { (ONE, x) } else { (x, ONE) };
        let (p, p0, p1) = poly::eval_form_with_partials(f.numerator(), z0, z1);
        let (q, q0, q1) = poly::eval_form_with_partials(f.denominator(), z0, z1);
        let (pd, qd) = if self.flipped { (p1, q1) } else { (p0, q0) };
        let (a, b) = ab;
        (b * p - a * q, b * pd - a * qd, dab.1 * p - dab.0 * q)
    }
}

const MIN_STEP: f64 = 1e-9;

fn track_segment(
    f: &RationalMap,
    from: &ProjectivePoint,
    to: &ProjectivePoint,
    mut w: ProjectivePoint,
    t_label: f64,
) -> Result<ProjectivePoint> {
    let na = from.norm();
    let a0 = (from.z0() / na, from.z1() / na);
    let b0 = to.aligned_unit(from);
    let dab = (b0.0 - a0.0, b0.1 - a0.1);
    let at = |t: f64| (a0.0 + dab.0 * t, a0.1 + dab.1 * t);
    let scale = f
        .numerator()
        .iter()
        .chain(f.denominator())
        .map(|c| c.norm())
        .sum::<f64>();

    let mut t = 0.0;
    let mut h: f64 = 1.0;
    while t < 1.0 {
        h = h.min(1.0 - t);
        let chart = Chart::of(&w);
        let x = chart.coord(&w);
        let (_, hx, ht) = chart.eval(f, x, at(t), dab);
        if hx.norm() == 0.0 {
            return Err(LabError::ContinuationFailure {
                t: t_label,
                reason: "lift reached a critical point".into(),
            });
        }
        let velocity = -ht / hx;
        let predicted = x + velocity * h;
        match correct(f, &chart, predicted, at(t + h), dab, scale) {
            Some((x_new, first))
                if first.norm() <= 0.25 * (velocity * h).norm() + 1e-12 * (1.0 + x.norm()) =>
            {
                let next = chart
                    .point(x_new)
                    .ok_or_else(|| LabError::ContinuationFailure {
                        t: t_label,
                        reason: "degenerate iterate".into(),
                    })?;
                w = next;
                t += h;
                h *= 2.0;
            }
            _ => {
                h *= 0.5;
                if h < MIN_STEP {
                    return Err(LabError::ContinuationFailure {
                        t: t_label,
                        reason: "step size underflow".into(),
                    });
                }
            }
        }
    }
    Ok(w)
}

/// Newton on `H_t(x) = 0`; returns the root and the first correction.
fn correct(
    f: &RationalMap,
    chart: &Chart,
    mut x: Complex64,
    ab: (Complex64, Complex64),
    dab: (Complex64, Complex64),
    scale: f64,
) -> Option<(Complex64, Complex64)> {
    let mut first = None;
    for _ in 0..8 {
        let (hv, hx, _) = chart.eval(f, x, ab, dab);
        if hx.norm() == 0.0 {
            return None;
        }
        let delta = hv / hx;
        first.get_or_insert(delta);
        x -= delta;
        if !(x.re.is_finite() && x.im.is_finite()) || x.norm() > 1e8 {
            return None;
        }
        let size = (1.0 + x.norm_sqr()).powf(f.degree() as f64 / 2.0);
        if delta.norm() <= 1e-14 * (1.0 + x.norm()) || hv.norm() <= 1e-15 * scale * size {
            return Some((x, first.unwrap_or_default()));
        }
    }
    None
}

/// The coding tree of `f` over `root`, all levels stored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodingTree {
    pub root: ProjectivePoint,
    pub depth: usize,
    pub degree: usize,
    pub labeling: Labeling,
    /// `levels[j][I]` is the vertex of the word with index `I`, length `j + 1`.
    pub levels: Vec<Vec<ProjectivePoint>>,
    /// `paths[j][I]` joins the prefix vertex to `levels[j][I]` (PathLifted only).
    pub paths: Option<Vec<Vec<DiscretePath>>>,
}

/// One level of a tree under construction.
#[derive(Debug, Clone)]
pub struct Level {
    pub index: usize,
    pub vertices: Vec<ProjectivePoint>,
    pub paths: Option<Vec<DiscretePath>>,
}

/// Produces the levels of a coding tree one at a time, holding only the
/// previous level in memory.
pub struct LevelBuilder {
    f: RationalMap,
    root: ProjectivePoint,
    labeling: Labeling,
    current: Option<Level>,
    base: Option<Vec<DiscretePath>>,
}

impl LevelBuilder {
    pub fn new(
        f: &RationalMap,
        root: &ProjectivePoint,
        labeling: Labeling,
        seed: SeedSpec,
    ) -> Result<Self> {
        if let Err(reason) = screen_root(f, root) {
            return Err(LabError::Precondition(format!(
                "root {root} fails the screen: {reason:?}"
            )));
        }
        let base = match labeling {
            Labeling::Sorted => None,
            Labeling::PathLifted => Some(base_paths(f, root, seed)?),
        };
        Ok(LevelBuilder {
            f: f.clone(),
            root: *root,
            labeling,
            current: None,
            base,
        })
    }

    pub fn next_level(&mut self) -> Result<&Level> {
        let next = match &self.current {
            None => self.first_level()?,
            Some(prev) => self.grow(prev)?,
        };
        self.current = Some(next);
        Ok(self.current.as_ref().expect("just set"))
    }

    fn first_level(&self) -> Result<Level> {
        let roots = self.f.preimage_roots(&self.root)?;
        if roots.has_multiple_root() {
            return Err(LabError::Collision {
                level: 0,
                radius: CLUSTER_RADIUS,
            });
        }
        Ok(Level {
            index: 0,
            vertices: roots.roots,
            paths: self.base.clone(),
        })
    }

    fn grow(&self, prev: &Level) -> Result<Level> {
        let d = self.f.degree();
        let j = prev.index + 1;
        let parents = &prev.vertices;
        let prefix_mod = parents.len();
        let level = j;
        // Children of parent `P` are the words `P * d + k`.
        let blocks: Vec<Vec<(ProjectivePoint, Option<DiscretePath>)>> = (0..parents.len())
            .into_par_iter()
            .map(
                |parent| -> Result<Vec<(ProjectivePoint, Option<DiscretePath>)>> {
                    let roots = self.f.preimage_roots(&parents[parent])?;
                    if roots.has_multiple_root() {
                        return Err(LabError::Collision {
                            level,
                            radius: CLUSTER_RADIUS,
                        });
                    }
                    match (&prev.paths, self.labeling) {
                        (Some(paths), Labeling::PathLifted) => {
                            let mut used = vec![false; d];
                            let mut block = Vec::with_capacity(d);
                            for k in 0..d {
                                let start = parents[(parent * d + k) % prefix_mod];
                                let mut lifted = lift_path(&self.f, &paths[parent], &start)
                                    .map_err(|e| match e {
                                        LabError::Collision { radius, .. } => {
                                            LabError::Collision { level, radius }
                                        }
                                        other => other,
                                    })?;
                                let end = lifted.end();
                                let (slot, dist) = roots
                                    .roots
                                    .iter()
                                    .enumerate()
                                    .map(|(i, r)| (i, r.chordal_distance(&end)))
                                    .min_by(|a, b| a.1.total_cmp(&b.1))
                                    .expect("d >= 2 roots");
                                if dist > SNAP_TOLERANCE {
                                    return Err(LabError::ContinuationFailure {
                                        t: 1.0,
                                        reason: format!(
                                            "lift ended {dist:.2e} away from every preimage"
                                        ),
                                    });
                                }
                                if used[slot] {
                                    return Err(LabError::Collision {
                                        level,
                                        radius: SNAP_TOLERANCE,
                                    });
                                }
                                used[slot] = true;
                                let vertex = roots.roots[slot];
                                *lifted.samples.last_mut().expect("nonempty") = vertex;
                                block.push((vertex, Some(lifted)));
                            }
                            Ok(block)
                        }
                        _ => Ok(roots.roots.into_iter().map(|r| (r, None)).collect()),
                    }
                },
            )
            .collect::<Result<_>>()?;
        let mut vertices = Vec::with_capacity(parents.len() * d);
        let mut paths = self
            .base
            .as_ref()
            .map(|_| Vec::with_capacity(parents.len() * d));
        for block in blocks {
            for (v, p) in block {
                vertices.push(v);
                if let (Some(ps), Some(p)) = (paths.as_mut(), p) {
                    ps.push(p);
                }
            }
        }
        Ok(Level {
            index: j,
            vertices,
            paths,
        })
    }
}

/// Full coding tree to depth `n` (levels `0..=n`).
pub fn build_tree(
    f: &RationalMap,
    z: &ProjectivePoint,
    n: usize,
    labeling: Labeling,
    seed: SeedSpec,
) -> Result<CodingTree> {
    let d = f.degree() as u128;
    let leaves = d.checked_pow(n as u32 + 1).unwrap_or(u128::MAX);
    if leaves > MEMORY_BUDGET as u128 {
        return Err(LabError::MemoryBudget {
            vertices: leaves,
            budget: MEMORY_BUDGET,
        });
    }
    let mut builder = LevelBuilder::new(f, z, labeling, seed)?;
    let mut levels = Vec::with_capacity(n + 1);
    let mut paths = match labeling {
        Labeling::Sorted => None,
        Labeling::PathLifted => Some(Vec::with_capacity(n + 1)),
    };
    for _ in 0..=n {
        let level = builder.next_level()?;
        levels.push(level.vertices.clone());
        if let (Some(ps), Some(p)) = (paths.as_mut(), &level.paths) {
            ps.push(p.clone());
        }
    }
    Ok(CodingTree {
        root: *z,
        depth: n,
        degree: f.degree(),
        labeling,
        levels,
        paths,
    })
}

/// 1-based symbols `(a_0, ..., a_j)` of the word with index `index`.
pub fn word_of(index: usize, level: usize, d: usize) -> Vec<usize> {
    let mut i = index;
    (0..=level)
        .map(|_| {
            let a = i % d + 1;
            i /= d;
            a
        })
        .collect()
}

/// Index of a 1-based word.
pub fn index_of(word: &[usize], d: usize) -> usize {
    word.iter().rev().fold(0, |acc, &a| acc * d + (a - 1))
}

impl CodingTree {
    pub fn vertex(&self, word: &[usize]) -> Option<ProjectivePoint> {
        let j = word.len().checked_sub(1)?;
        if j > self.depth || word.iter().any(|&a| a == 0 || a > self.degree) {
            return None;
        }
        Some(self.levels[j][index_of(word, self.degree)])
    }

    /// Vertex of the prefix `(a_0, ..., a_{j-1})`, the root for `j = 0`.
    pub fn prefix_vertex(&self, level: usize, index: usize) -> ProjectivePoint {
        if level == 0 {
            self.root
        } else {
            let m = self.levels[level - 1].len();
            self.levels[level - 1][index % m]
        }
    }

    pub fn gap(&self, level: usize, index: usize) -> f64 {
        self.prefix_vertex(level, index)
            .chordal_distance(&self.levels[level][index])
    }

    /// One JSON record per word: `{"word", "level", "point", "gap"}`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (j, level) in self.levels.iter().enumerate() {
            for (i, p) in level.iter().enumerate() {
                let rec = serde_json::json!({
                    "word": word_of(i, j, self.degree),
                    "level": j,
                    "point": p.to_array(),
                    "gap": self.gap(j, i),
                });
                out.push_str(&rec.to_string());
                out.push('\n');
            }
        }
        out
    }
}

/// Gap distribution at one level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelGaps {
    pub level: usize,
    pub median: f64,
    pub p90: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapReport {
    pub degree: usize,
    pub levels: Vec<LevelGaps>,
    /// Fit of `log(median gap)` against level.
    pub fit: Option<LinearFit>,
    /// `-slope / log d`.
    pub rate: Option<f64>,
    /// Set when there are too few levels for a fit.
    pub no_fit: bool,
    /// Raw gaps per level, indexed like the level itself.
    #[serde(skip)]
    pub gaps: Vec<Vec<f64>>,
}

fn level_gaps(level: usize, gaps: &[f64]) -> LevelGaps {
    let mut sorted = gaps.to_vec();
    sorted.sort_by(f64::total_cmp);
    LevelGaps {
        level,
        median: quantile(&sorted, 0.5),
        p90: quantile(&sorted, 0.9),
        max: *sorted.last().unwrap_or(&f64::NAN),
    }
}

fn gap_report(degree: usize, gaps: Vec<Vec<f64>>) -> GapReport {
    let levels: Vec<LevelGaps> = gaps
        .iter()
        .enumerate()
        .map(|(k, g)| level_gaps(k + 1, g))
        .collect();
    let pts: Vec<(f64, f64)> = levels
        .iter()
        .filter(|l| l.median > 0.0)
        .map(|l| (l.level as f64, l.median.ln()))
        .collect();
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let fit = if x.len() >= 2 {
        linear_fit(&x, &y)
    } else {
        None
    };
    GapReport {
        degree,
        rate: fit.map(|f| -f.slope / (degree as f64).ln()),
        no_fit: fit.is_none(),
        fit,
        levels,
        gaps,
    }
}

/// Successive gaps `d(z_{j-1}, z_j)` for levels `1..=depth`.
pub fn successive_gaps(tree: &CodingTree) -> GapReport {
    let gaps = (1..=tree.depth)
        .map(|j| (0..tree.levels[j].len()).map(|i| tree.gap(j, i)).collect())
        .collect();
    gap_report(tree.degree, gaps)
}

/// Same as [`successive_gaps`] without storing the tree.
pub fn streamed_gaps(
    f: &RationalMap,
    z: &ProjectivePoint,
    n: usize,
    labeling: Labeling,
    seed: SeedSpec,
) -> Result<GapReport> {
    let mut builder = LevelBuilder::new(f, z, labeling, seed)?;
    let mut prev = builder.next_level()?.vertices.clone();
    let mut gaps = Vec::with_capacity(n);
    for _ in 1..=n {
        let level = builder.next_level()?;
        let m = prev.len();
        gaps.push(
            level
                .vertices
                .iter()
                .enumerate()
                .map(|(i, v)| prev[i % m].chordal_distance(v))
                .collect(),
        );
        prev = level.vertices.clone();
    }
    Ok(gap_report(f.degree(), gaps))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CensusRow {
    pub level: usize,
    pub median_gap: f64,
    pub p90_gap: f64,
    pub max_gap: f64,
    pub fraction_contracting: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CensusReport {
    pub rate: f64,
    pub scale: f64,
    pub rows: Vec<CensusRow>,
    /// `-slope / log d` of `log(1 - fraction)` against level.
    pub theta: Option<f64>,
    pub saturated: bool,
}

impl CensusReport {
    /// CSV with columns `level,median_gap,p90_gap,max_gap,fraction_contracting`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,median_gap,p90_gap,max_gap,fraction_contracting\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:e},{:e},{:e},{}",
                r.level, r.median_gap, r.p90_gap, r.max_gap, r.fraction_contracting
            );
        }
        out
    }
}

/// Fraction of words at each level whose gap is at most `scale d^{-rate j}`.
pub fn branch_contraction_census(gaps: &GapReport, rate: f64, scale: f64) -> CensusReport {
    let d = gaps.degree as f64;
    let rows: Vec<CensusRow> = gaps
        .levels
        .iter()
        .zip(&gaps.gaps)
        .map(|(l, g)| {
            let threshold = scale * d.powf(-rate * l.level as f64);
            let hits = g.iter().filter(|&&x| x <= threshold).count();
            CensusRow {
                level: l.level,
                median_gap: l.median,
                p90_gap: l.p90,
                max_gap: l.max,
                fraction_contracting: hits as f64 / g.len() as f64,
            }
        })
        .collect();
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.fraction_contracting < 1.0)
        .map(|r| (r.level as f64, (1.0 - r.fraction_contracting).ln()))
        .collect();
    let saturated = rows.last().is_some_and(|r| r.fraction_contracting == 1.0);
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let theta = linear_fit(&x, &y).map(|fit| -fit.slope / d.ln());
    CensusReport {
        rate,
        scale,
        rows,
        theta,
        saturated,
    }
}

/// Default census thresholds from a gap fit: half the fitted rate and the
/// fitted scale, so the threshold starts near the median gap and loosens
/// geometrically with level.
pub fn default_census_parameters(gaps: &GapReport) -> Option<(f64, f64)> {
    let fit = gaps.fit?;
    let rate = gaps.rate?;
    Some((0.5 * rate, fit.intercept.exp()))
}

/// Equal-weight averages of each test function over level `j`, i.e. the
/// integrals against the uniform measure on `f^{-(j+1)}(z)`.
pub fn exact_preimage_measure(
    tree: &CodingTree,
    level: usize,
    test_fns: &[Observable],
) -> Result<Vec<f64>> {
    if level > tree.depth {
        return Err(LabError::Precondition(format!(
            "level {level} exceeds tree depth {}",
            tree.depth
        )));
    }
    let pts = &tree.levels[level];
    Ok(test_fns
        .iter()
        .map(|phi| {
            let sum: f64 = pts.iter().map(|p| phi.evaluate(p)).sum();
            sum / pts.len() as f64
        })
        .collect())
}

/// `z_m(b)` for a word `b = (b_0, ..., b_m)`.
///
/// Sorted labeling applies the `b_k`-th sorted preimage, innermost symbol
/// first. PathLifted labeling runs the memoized lift recursion over all
/// subwords, which costs `O(m^2)` path lifts.
pub fn word_vertex(
    f: &RationalMap,
    z: &ProjectivePoint,
    word: &[usize],
    labeling: Labeling,
    base: Option<&[DiscretePath]>,
) -> Result<ProjectivePoint> {
    match labeling {
        Labeling::Sorted => {
            let mut x = *z;
            for &a in word.iter().rev() {
                let roots = f.preimage_roots(&x)?;
                x = roots.roots[a - 1];
            }
            Ok(x)
        }
        Labeling::PathLifted => {
            let base = base.ok_or_else(|| LabError::Precondition("base paths required".into()))?;
            let m = word.len() - 1;
            // Before step l, row[k] = vertex(b_k..b_{l-1}), the empty word giving z.
            let mut row: Vec<ProjectivePoint> = vec![*z; m + 1];
            for l in 0..=m {
                // The path for (b_k..b_l) lifts the path for (b_{k+1}..b_l).
                let mut below = base[word[l] - 1].clone();
                let mut next = row.clone();
                next[l] = below.end();
                for k in (0..l).rev() {
                    below = lift_path(f, &below, &row[k])?;
                    next[k] = below.end();
                }
                row = next;
            }
            Ok(row[0])
        }
    }
}

/// Within-cylinder spread of `psi(z_m)` for one cylinder depth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CylinderVariance {
    pub n: usize,
    pub m: usize,
    pub cylinders: usize,
    pub per_cylinder: usize,
    /// Square root of the mean within-cylinder variance.
    pub estimate: Estimate,
    pub redrawn: u64,
}

/// Tail margin `m - n` used when `m` is not given.
pub fn default_tail_depth(n: usize) -> usize {
    n + 20.max(2 * n)
}

/// Estimate of `|| chi - E(chi | C_n) ||_2` with `chi = psi o omega`.
///
/// `K` words of length `n + 1` are drawn; each is extended by `M`
/// independent tails to length `m + 1` and the within-cylinder sample
/// variances of `psi(z_m)` are averaged. The standard error is the
/// jackknife over cylinders.
#[allow(clippy::too_many_arguments)]
pub fn cylinder_conditional_variance(
    f: &RationalMap,
    z: &ProjectivePoint,
    n: usize,
    m: usize,
    psi: &Observable,
    per_cylinder: usize,
    cylinders: usize,
    labeling: Labeling,
    seed: SeedSpec,
) -> Result<CylinderVariance> {
    if per_cylinder < 2 {
        return Err(LabError::Precondition(
            "at least two samples per cylinder are needed for a variance".into(),
        ));
    }
    if cylinders < 2 {
        return Err(LabError::Precondition(
            "at least two cylinders are needed".into(),
        ));
    }
    if m < n + 20 {
        return Err(LabError::Precondition(format!(
            "approximation depth {m} must be at least n + 20 = {}",
            n + 20
        )));
    }
    let d = f.degree();
    let base = match labeling {
        Labeling::PathLifted => Some(base_paths(f, z, seed)?),
        Labeling::Sorted => None,
    };
    let per: Vec<(f64, u64)> = (0..cylinders as u64)
        .into_par_iter()
        .map(|c| -> Result<(f64, u64)> {
            let mut rng = seed.rng(c);
            let head: Vec<usize> = (0..=n).map(|_| rng.random_range(1..=d)).collect();
            let mut values = Vec::with_capacity(per_cylinder);
            let mut redrawn = 0;
            for s in 0..per_cylinder as u64 {
                let mut attempt = 0;
                loop {
                    let mut trng = seed.substream(c + 1).rng_attempt(s, attempt);
                    let mut word = head.clone();
                    word.extend((n + 1..=m).map(|_| trng.random_range(1..=d)));
                    let v = psi.evaluate(&word_vertex(f, z, &word, labeling, base.as_deref())?);
                    if v.is_finite() {
                        values.push(v);
                        break;
                    }
                    redrawn += 1;
                    attempt += 1;
                    if attempt > 8 {
                        return Err(LabError::Precondition(
                            "observable singular on every redraw".into(),
                        ));
                    }
                }
            }
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let var =
                values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
            Ok((var, redrawn))
        })
        .collect::<Result<_>>()?;
    let vars: Vec<f64> = per.iter().map(|p| p.0).collect();
    let total: f64 = vars.iter().sum();
    let k = vars.len() as f64;
    let value = (total / k).sqrt();
    let loo: Vec<f64> = vars
        .iter()
        .map(|v| ((total - v) / (k - 1.0)).sqrt())
        .collect();
    Ok(CylinderVariance {
        n,
        m,
        cylinders,
        per_cylinder,
        estimate: Estimate::new(value, jackknife_stderr(&loo)),
        redrawn: per.iter().map(|p| p.1).sum(),
    })
}
