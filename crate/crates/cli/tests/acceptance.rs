//! One test per acceptance criterion. Each prints a `criterion N: PASS|FAIL`
//! line to stderr, outside the harness capture, before asserting.

use std::f64::consts::{LN_2, PI};
use std::io::Write;
use std::path::Path;
use std::process::Command;

use ergolab::estimate::{ks_distance, linear_fit};
use ergolab::lyapunov::LattesVerdict;
use ergolab::observables::{make_coboundary, make_holder, make_log_derivative, neighborhood_mass};
use ergolab::sampler::{default_depth, equidistribution_gap, mu_batch, uniform_sphere_point};
use ergolab::stats::{
    clt_test, cocycle_reconstruct, covariance_series, sigma_birkhoff, sigma_decision,
    sigma_spectral,
};
use ergolab::transfer::{transfer_apply, transfer_norm_decay};
use ergolab::tree::{
    branch_contraction_census, cylinder_conditional_variance, default_census_parameters,
    default_tail_depth, exact_preimage_measure, streamed_gaps,
};
use ergolab::*;
use ergolab_cli::config::Params;
use rand::Rng;

fn report(n: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n}: {verdict} {detail}");
    assert!(pass, "criterion {n}: {detail}");
}

fn root() -> ProjectivePoint {
    ProjectivePoint::from_real(3.0)
}

fn power2() -> RationalMap {
    RationalMap::power(2).unwrap()
}

/// RealPart on z^2 has mean zero: mu is invariant under z -> -z.
fn real_part_centered() -> Observable {
    make_holder(Kernel::RealPart, 1.0).with_exact_mean(0.0)
}

fn ensemble(f: RationalMap, seed: u64) -> Ensemble {
    let d = f.degree();
    Ensemble::new(f, root(), default_depth(d), SeedSpec::new(seed, 0))
}

#[test]
fn criterion_01_preimage_exactness() {
    let seed = SeedSpec::new(101, 0);
    let mut worst = 0.0f64;
    let mut bad_counts = 0;
    let mut pairs = 0;
    let mut k = 0u64;
    while pairs < 10_000 {
        let mut rng = seed.rng(k);
        k += 1;
        let d = rng.random_range(2..=6usize);
        let mut coeffs = || -> Vec<Complex64> {
            (0..=d)
                .map(|_| Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
                .collect()
        };
        let (p, q) = (coeffs(), coeffs());
        let Ok(f) = RationalMap::new(p, q) else {
            continue;
        };
        let target = uniform_sphere_point(&mut rng);
        let pre = f.preimages(&target).unwrap();
        if pre.iter().map(|(_, m)| m).sum::<usize>() != d {
            bad_counts += 1;
        }
        for (w, _) in &pre {
            worst = worst.max(f.evaluate(w).unwrap().chordal_distance(&target));
        }
        pairs += 1;
    }
    report(
        1,
        worst < 1e-9 && bad_counts == 0,
        &format!("{pairs} pairs, worst chordal residual {worst:.2e}, wrong counts {bad_counts}"),
    );
}

#[test]
fn criterion_02_tree_sampler_equivalence() {
    let f = power2();
    let tree = build_tree(&f, &root(), 7, Labeling::Sorted, SeedSpec::new(102, 0)).unwrap();
    let tests = [
        make_holder(Kernel::RealPart, 1.0),
        make_holder(Kernel::AffineModulus, 1.0),
        make_holder(
            Kernel::ChordalTo {
                q: ProjectivePoint::from_real(1.0),
                h: 1.0,
            },
            1.0,
        ),
    ];
    let exact = exact_preimage_measure(&tree, 7, &tests).unwrap();
    let batch = mu_batch(&f, &root(), 7, 100_000, SeedSpec::new(102, 1)).unwrap();
    let mut ok = true;
    let mut detail = String::new();
    for (phi, e) in tests.iter().zip(&exact) {
        let s = batch.mean_of(phi);
        let agree = (s.value - e).abs() <= 4.0 * s.stderr + 1e-12;
        ok &= agree;
        detail.push_str(&format!(
            "[exact {e:.6} sampled {:.6} +- {:.1e}] ",
            s.value, s.stderr
        ));
    }
    let affine = exact_preimage_measure(
        &tree,
        7,
        &[
            make_holder(Kernel::AffineRe, 1.0),
            make_holder(Kernel::AffineIm, 1.0),
        ],
    )
    .unwrap();
    let symmetric = affine.iter().all(|v| v.abs() < 1e-12);
    detail.push_str(&format!("affine mean {:.1e} {:.1e}", affine[0], affine[1]));
    report(2, ok && symmetric, &detail);
}

#[test]
fn criterion_03_equidistribution_closed_form() {
    let f = power2();
    let tree = build_tree(&f, &root(), 7, Labeling::Sorted, SeedSpec::new(103, 0)).unwrap();
    let modulus = make_holder(Kernel::AffineModulus, 1.0);
    // mu is Lebesgue measure on the unit circle, where |z| = 1.
    let mut worst = 0.0f64;
    for n in 0..=7 {
        let m = exact_preimage_measure(&tree, n, std::slice::from_ref(&modulus)).unwrap()[0];
        let closed = 3f64.powf(1.0 / 2f64.powi(n as i32 + 1)) - 1.0;
        worst = worst.max(((m - 1.0).abs() - closed.abs()).abs());
    }
    let sampled = equidistribution_gap(
        &f,
        &root(),
        &[20],
        30,
        &[modulus],
        5000,
        SeedSpec::new(103, 1),
    )
    .unwrap();
    let gap = sampled.rows[0].gap.value.abs();
    report(
        3,
        worst < 1e-6 && gap < 1e-3,
        &format!("worst closed-form deviation {worst:.2e}, sampled gap at depth 20 {gap:.2e}"),
    );
}

#[test]
fn criterion_04_chebyshev_arcsine() {
    let f = RationalMap::chebyshev();
    let batch = mu_batch(&f, &root(), 25, 10_000, SeedSpec::new(104, 0)).unwrap();
    let xs: Vec<f64> = batch
        .points
        .iter()
        .map(|p| p.affine().unwrap().re)
        .collect();
    let ks = ks_distance(&xs, |x| (-(x / 2.0).clamp(-1.0, 1.0)).acos() / PI);
    report(4, ks < 0.02, &format!("KS distance to arcsine {ks:.4}"));
}

#[test]
fn criterion_05_lyapunov_targets() {
    let p = Params::default();
    let cases = [
        ("z^2", power2(), 0.01),
        ("z^2-2", RationalMap::chebyshev(), 0.02),
        ("lattes4", RationalMap::lattes4(), 0.02),
    ];
    let mut ok = true;
    let mut detail = String::new();
    for (name, f, tol) in cases {
        let l = lyapunov(&ensemble(f, 105), p.lyapunov_n, p.lyapunov_orbits).unwrap();
        ok &= (l.chi.value - LN_2).abs() <= tol && l.respects_lower_bound();
        detail.push_str(&format!(
            "[{name} {:.5} +- {:.1e}] ",
            l.chi.value, l.chi.stderr
        ));
    }
    report(5, ok, &detail);
}

#[test]
fn criterion_06_variance_circle_model() {
    let p = Params::default();
    let psi = real_part_centered();
    let ens = ensemble(power2(), 106);
    let series =
        covariance_series(&psi, &ens, p.j_max, p.spectral_orbits, p.spectral_window).unwrap();
    let r0 = &series.values[0];
    let r0_ok = (r0.value - 0.125).abs() <= 3.0 * r0.stderr;
    let lags_ok = series.values[1..=10]
        .iter()
        .all(|r| r.value.abs() <= 3.0 * r.stderr);
    let spectral = sigma_spectral(&series).unwrap();
    let spectral_ok = (spectral.sigma2 - 0.125).abs() <= 0.05 * 0.125;
    let birkhoff = sigma_birkhoff(
        &psi,
        &ens.with_stream(1),
        &p.birkhoff_schedule,
        p.birkhoff_orbits,
    )
    .unwrap();
    let birkhoff_ok = (birkhoff.sigma2 - spectral.sigma2).abs() <= 0.1 * spectral.sigma2;
    report(
        6,
        r0_ok && lags_ok && spectral_ok && birkhoff_ok,
        &format!(
            "R0 {:.5} +- {:.1e}, lags 1..10 within 3 stderr {lags_ok}, spectral {:.5} +- {:.1e}, birkhoff {:.5} +- {:.1e}",
            r0.value, r0.stderr, spectral.sigma2, spectral.stderr, birkhoff.sigma2, birkhoff.stderr
        ),
    );
}

#[test]
fn criterion_07_clt() {
    let p = Params::default();
    let psi = real_part_centered();
    let ens = ensemble(power2(), 107);
    let series =
        covariance_series(&psi, &ens, p.j_max, p.spectral_orbits, p.spectral_window).unwrap();
    let sigma = sigma_spectral(&series).unwrap();
    let r = clt_test(&psi, &ens.with_stream(1), 2000, 50_000, &sigma).unwrap();
    report(
        7,
        r.ks_distance <= 0.02,
        &format!(
            "KS {:.4} with sigma {:.4}, mean {:.3}, variance {:.3}",
            r.ks_distance, sigma.sigma, r.mean, r.variance
        ),
    );
}

#[test]
fn criterion_08_coboundary_dichotomy() {
    let p = Params::default();
    let f = power2();
    let g = make_holder(Kernel::RealPart, 1.0);
    let psi = make_coboundary(&g, &f).unwrap();
    let ens = ensemble(f, 108);
    let series =
        covariance_series(&psi, &ens, p.j_max, p.spectral_orbits, p.spectral_window).unwrap();
    let psi_norm = series.values[0].value.sqrt();
    let spectral = sigma_spectral(&series).unwrap();
    let birkhoff = sigma_birkhoff(
        &psi,
        &ens.with_stream(1),
        &p.birkhoff_schedule,
        p.birkhoff_orbits,
    )
    .unwrap();
    let decision = sigma_decision(&spectral, &birkhoff, psi_norm);
    let r =
        cocycle_reconstruct(&psi, &ens.with_stream(2), 200, p.cocycle_samples, Some(&g)).unwrap();
    let residual_ok = r.residual.value <= 0.1 * r.psi_norm;
    let gap = r.reference_gap.unwrap();
    let g_norm = r.reference_norm.unwrap();
    let match_ok = gap.value <= 0.05 * g_norm;
    report(
        8,
        decision.zero && residual_ok && match_ok,
        &format!(
            "sigma {:.2e} +- {:.1e} ({:?} basis, zero {}), residual {:.4} vs {:.4}, u_p - g RMS {:.4} vs {:.4} \
             (the Cesaro sum leaves -(1/p) sum g o f^n, RMS ||g|| / sqrt(p) = {:.4})",
            decision.sigma,
            decision.sigma_stderr,
            decision.basis,
            decision.zero,
            r.residual.value,
            0.1 * r.psi_norm,
            gap.value,
            0.05 * g_norm,
            g_norm / 200f64.sqrt()
        ),
    );
}

#[test]
fn criterion_09_lattes_probe() {
    let config = LattesConfig::default();
    let lattes = lattes_probe(&ensemble(RationalMap::lattes4(), 109), &config).unwrap();
    let lattes_ok = lattes.sigma_j.sigma <= 0.05
        && lattes.pesin_gap.value.abs() <= 0.05
        && lattes.max_spread < 10.0
        && lattes.verdict == LattesVerdict::ConsistentWithLattes;
    let quad = lattes_probe(
        &ensemble(
            RationalMap::quadratic(Complex64::new(0.0, 0.3)).unwrap(),
            109,
        ),
        &config,
    )
    .unwrap();
    let quad_ok = quad.pesin_gap.value > 3.0 * quad.pesin_gap.stderr
        && quad.verdict != LattesVerdict::ConsistentWithLattes;
    let square = lattes_probe(&ensemble(power2(), 109), &config).unwrap();
    let square_ok =
        square.sigma_j.sigma <= 0.02 && square.verdict == LattesVerdict::NotMinimalExponent;
    report(
        9,
        lattes_ok && quad_ok && square_ok,
        &format!(
            "lattes4 sigma_J {:.4} gap {:.4} spread {:.2} {:?}; z^2+0.3i gap {:.4} +- {:.1e} {:?}; z^2 sigma_J {:.4} gap {:.4} {:?}",
            lattes.sigma_j.sigma,
            lattes.pesin_gap.value,
            lattes.max_spread,
            lattes.verdict,
            quad.pesin_gap.value,
            quad.pesin_gap.stderr,
            quad.verdict,
            square.sigma_j.sigma,
            square.pesin_gap.value,
            square.verdict
        ),
    );
}

#[test]
fn criterion_10_decay_shapes() {
    let p = Params::default();
    let f = power2();
    let psi = make_holder(Kernel::RealPart, 1.0);
    let seed = SeedSpec::new(110, 0);
    let levels = [0usize, 2, 4, 6, 8];
    let values: Vec<f64> = levels
        .iter()
        .map(|&n| {
            let m = default_tail_depth(n);
            cylinder_conditional_variance(
                &f,
                &root(),
                n,
                m,
                &psi,
                p.per_cylinder,
                p.cylinders,
                p.labeling,
                seed.substream(n as u64),
            )
            .unwrap()
            .estimate
            .value
        })
        .collect();
    let decreasing = values.windows(2).all(|w| w[1] < w[0]);
    let x: Vec<f64> = levels.iter().map(|&n| n as f64).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let fit = linear_fit(&x, &y).unwrap();
    let shape_ok = decreasing && fit.slope < 0.0 && fit.r2 >= 0.9;
    let gaps = streamed_gaps(&f, &root(), 14, Labeling::PathLifted, seed.substream(99)).unwrap();
    let eps = gaps.rate.unwrap_or(f64::NAN);
    let (rate, scale) = default_census_parameters(&gaps).unwrap();
    let census = branch_contraction_census(&gaps, rate, scale);
    let monotone = census
        .rows
        .windows(2)
        .all(|w| w[1].fraction_contracting >= w[0].fraction_contracting);
    report(
        10,
        shape_ok && eps > 0.0 && monotone,
        &format!(
            "cylinder norms {values:.4?}, slope {:.3} R2 {:.3}; gap rate {eps:.3}; census nondecreasing {monotone}",
            fit.slope, fit.r2
        ),
    );
}

/// `int_{d(x, 0) < r} |psi| dmu` for the arcsine law, with `x = 2 cos(theta)`
/// and `theta` uniform on `[0, pi]`, by the midpoint rule.
fn arcsine_mass_oracle(r: f64, nodes: usize) -> f64 {
    let h = PI / nodes as f64;
    (0..nodes)
        .map(|k| {
            let x = 2.0 * ((k as f64 + 0.5) * h).cos();
            let fx = x * x - 2.0;
            let chordal_to_zero = x.abs() / (1.0 + x * x).sqrt();
            if chordal_to_zero < r {
                ((2.0 * x.abs()) * (1.0 + x * x) / (1.0 + fx * fx))
                    .ln()
                    .abs()
            } else {
                0.0
            }
        })
        .sum::<f64>()
        * h
        / PI
}

#[test]
fn criterion_11_neighborhood_scaling() {
    let p = Params::default();
    let f = RationalMap::chebyshev();
    let psi = make_log_derivative(&f).unwrap();
    let r = neighborhood_mass(&psi, &ensemble(f, 111), 1.0, &p.radii, p.mass_samples).unwrap();
    let slope = r.fit.map_or(f64::NAN, |fit| fit.slope);
    let mut ok = slope > 0.0;
    let mut detail = format!("slope {slope:.3}");
    for row in &r.rows {
        let oracle = arcsine_mass_oracle(row.radius, 2_000_000);
        ok &= (row.mass.value - oracle).abs() <= 3.0 * row.mass.stderr;
        detail.push_str(&format!(
            " [r {} mass {:.5} +- {:.1e} oracle {:.5}]",
            row.radius, row.mass.value, row.mass.stderr, oracle
        ));
    }
    report(11, ok, &detail);
}

#[test]
fn criterion_12_transfer_operator() {
    let p = Params::default();
    let chordal = make_holder(
        Kernel::ChordalTo {
            q: ProjectivePoint::from_real(1.0),
            h: 1.0,
        },
        1.0,
    );
    let phi = make_holder(Kernel::RealPart, 1.0);
    let mut ok = true;
    let mut detail = String::new();
    let points = [
        root(),
        ProjectivePoint::from_affine(Complex64::new(0.3, -0.7)),
        ProjectivePoint::infinity(),
    ];
    for (name, f, psi) in [
        // On the circle d(e^{it}, 1) = |sin(t/2)|, of mean 2/pi.
        ("z^2", power2(), chordal.clone().with_exact_mean(2.0 / PI)),
        ("z^2-2", RationalMap::chebyshev(), chordal.clone()),
    ] {
        let ens = ensemble(f.clone(), 112);
        let psi = if psi.is_centered() {
            psi
        } else {
            ergolab::observables::center(&psi, &ens.with_stream(1), p.centering_samples)
                .unwrap()
                .0
        };
        let identity = points
            .iter()
            .all(|z| transfer_apply(&f, &psi, z, 0).unwrap().value == psi.evaluate(z));
        let r = transfer_norm_decay(&psi, &phi, &ens, &p.transfer_schedule, p.transfer_samples)
            .unwrap();
        let duality = r.duality_gap.value.abs() <= 3.0 * r.duality_gap.stderr;
        ok &= identity && duality && r.is_decreasing();
        let norms: Vec<f64> = r.rows.iter().map(|row| row.centered_norm.value).collect();
        detail.push_str(&format!(
            "[{name} identity {identity} duality {:.1e} +- {:.1e} norms {norms:.4?}] ",
            r.duality_gap.value, r.duality_gap.stderr
        ));
    }
    report(12, ok, &detail);
}

fn run_full(dir: &Path, workers: usize) {
    let status = Command::new(env!("CARGO_BIN_EXE_lab"))
        .args([
            "full",
            "--seed",
            "113",
            "--workers",
            &workers.to_string(),
            "--out",
        ])
        .arg(dir)
        .env_remove("LAB_DEFAULT_SEED")
        .status()
        .unwrap();
    assert!(status.success());
}

fn without_run_fields(manifest: &[u8]) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(manifest).unwrap();
    let obj = v.as_object_mut().unwrap();
    obj.remove("workers");
    obj.remove("wall_time_seconds");
    v
}

#[test]
fn criterion_13_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("w1"), tmp.path().join("w8"));
    run_full(&a, 1);
    run_full(&b, 8);
    let mut names: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    let mut differing = Vec::new();
    for name in &names {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap_or_default();
        let same = if name == "manifest.json" {
            without_run_fields(&x) == without_run_fields(&y)
        } else {
            x == y
        };
        if !same {
            differing.push(name.clone());
        }
    }
    report(
        13,
        differing.is_empty() && names.len() > 3,
        &format!(
            "{} files compared at 1 and 8 workers, differing {differing:?}",
            names.len()
        ),
    );
}
