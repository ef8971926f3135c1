//! Scenario execution. Every scenario writes into an in-memory file list;
//! nothing touches the disk until the whole run has succeeded.

use std::cell::OnceCell;

use ergolab::catalog::CatalogMap;
use ergolab::estimate::Estimate;
use ergolab::lyapunov::{lattes_probe, lyapunov, lyapunov_product};
use ergolab::observables::{center, make_holder, neighborhood_mass};
use ergolab::sampler::{default_depth, equidistribution_gap, mu_batch};
use ergolab::stats::{
    asclt_probe, clt_test, cocycle_reconstruct, covariance_series, sigma_birkhoff, sigma_decision,
    sigma_spectral, SigmaEstimate,
};
use ergolab::transfer::{transfer_apply, transfer_norm_decay};
use ergolab::tree::{
    branch_contraction_census, build_tree, cylinder_conditional_variance,
    default_census_parameters, default_tail_depth, exact_preimage_measure, streamed_gaps,
};
use ergolab::{
    Complex64, Ensemble, Kernel, LabError, Observable, ProjectivePoint, RationalMap, SeedSpec,
};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::{
    build_observable, resolve_map, validate, Centering, ObservableSpec, ResolvedConfig, Scenario,
};
use crate::CliError;

/// Files produced by a run, in emission order.
#[derive(Debug, Default)]
pub struct Outputs {
    pub files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn add(&mut self, name: &str, contents: String) {
        self.files.push((name.to_string(), contents.into_bytes()));
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c.as_slice())
    }
}

struct Ctx<'a> {
    cfg: &'a ResolvedConfig,
    map: Option<RationalMap>,
    catalog: Option<CatalogMap>,
    root: ProjectivePoint,
    depth: usize,
    seed: SeedSpec,
    psi: OnceCell<Observable>,
    spectral: OnceCell<SigmaEstimate>,
    /// `sqrt(C_0)` from the covariance series.
    psi_norm: f64,
    centering_stderr: f64,
    results: Map<String, Value>,
    warnings: Vec<String>,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

impl Ctx<'_> {
    fn map(&self) -> &RationalMap {
        self.map
            .as_ref()
            .expect("validated: map of the projective line")
    }

    fn ensemble(&self, stream: u64) -> Ensemble {
        Ensemble::new(
            self.map().clone(),
            self.root,
            self.depth,
            self.seed.substream(stream),
        )
    }

    /// The configured observable, centered as requested.
    fn psi(&mut self) -> Result<Observable, CliError> {
        if let Some(p) = self.psi.get() {
            return Ok(p.clone());
        }
        let oc = &self.cfg.observable;
        let raw = build_observable(&oc.spec, oc.holder, self.map())?;
        let psi = match oc.centering {
            Centering::None => raw,
            Centering::Exact => raw.with_exact_mean(oc.mean),
            Centering::Sampled if raw.is_centered() => raw,
            Centering::Sampled => {
                let (p, report) =
                    center(&raw, &self.ensemble(100), self.cfg.params.centering_samples)?;
                self.warnings.extend(report.warnings.iter().cloned());
                self.centering_stderr = report.mean.stderr;
                self.results.insert("centering".into(), to_value(&report));
                p
            }
        };
        Ok(self.psi.get_or_init(|| psi).clone())
    }

    fn raw_psi(&self) -> Result<Observable, CliError> {
        let oc = &self.cfg.observable;
        Ok(build_observable(&oc.spec, oc.holder, self.map())?)
    }

    fn spectral(&mut self, out: &mut Outputs, file: &str) -> Result<SigmaEstimate, CliError> {
        if let Some(s) = self.spectral.get() {
            return Ok(s.clone());
        }
        let p = &self.cfg.params;
        let (j_max, orbits, window) = (p.j_max, p.spectral_orbits, p.spectral_window);
        let psi = self.psi()?;
        let series = covariance_series(&psi, &self.ensemble(4), j_max, orbits, window)?;
        out.add(file, series.to_csv());
        let sigma = sigma_spectral(&series)?;
        self.psi_norm = series.values[0].value.max(0.0).sqrt();
        self.warnings
            .extend(sigma.warnings.iter().map(|w| format!("spectral: {w}")));
        self.results.insert("covariance".into(), to_value(&series));
        self.results
            .insert("sigma_spectral".into(), to_value(&sigma));
        Ok(self.spectral.get_or_init(|| sigma).clone())
    }
}

/// Runs the scenario and returns the emitted files, `report.json` first.
pub fn execute(cfg: &ResolvedConfig) -> Result<Outputs, CliError> {
    let (entry, map) = resolve_map(&cfg.map)?;
    validate(cfg, map.as_ref())?;
    let d = entry
        .as_ref()
        .map_or_else(|| map.as_ref().expect("map").degree(), |e| e.degree);
    let mut ctx = Ctx {
        cfg,
        map,
        catalog: entry.map(|e| e.map),
        root: ProjectivePoint::from_affine(Complex64::new(cfg.root[0], cfg.root[1])),
        depth: cfg.params.depth.unwrap_or_else(|| default_depth(d)),
        seed: SeedSpec::new(cfg.seed, 0),
        psi: OnceCell::new(),
        spectral: OnceCell::new(),
        psi_norm: 0.0,
        centering_stderr: 0.0,
        results: Map::new(),
        warnings: Vec::new(),
    };
    let mut out = Outputs::default();
    let all = [
        Scenario::Tree,
        Scenario::Sample,
        Scenario::Equidistribution,
        Scenario::Covariance,
        Scenario::Sigma,
        Scenario::Clt,
        Scenario::Asclt,
        Scenario::Cocycle,
        Scenario::Transfer,
        Scenario::Lyapunov,
        Scenario::Lattes,
    ];
    let list: Vec<Scenario> = if cfg.scenario == Scenario::Full {
        all.to_vec()
    } else {
        vec![cfg.scenario]
    };
    for s in list {
        match s {
            Scenario::Tree => tree(&mut ctx, &mut out)?,
            Scenario::Sample => sample(&mut ctx, &mut out)?,
            Scenario::Equidistribution => equidistribution(&mut ctx, &mut out)?,
            Scenario::Covariance => {
                ctx.spectral(&mut out, "covariance.csv")?;
            }
            Scenario::Sigma => sigma(&mut ctx, &mut out)?,
            Scenario::Clt => clt(&mut ctx, &mut out)?,
            Scenario::Asclt => asclt(&mut ctx, &mut out)?,
            Scenario::Cocycle => cocycle(&mut ctx, &mut out)?,
            Scenario::Transfer => transfer(&mut ctx, &mut out)?,
            Scenario::Lyapunov => lyapunov_scenario(&mut ctx)?,
            Scenario::Lattes => lattes(&mut ctx, &mut out)?,
            Scenario::Full => unreachable!("expanded above"),
        }
    }
    let report = json!({
        "scenario": cfg.scenario.name(),
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "map": cfg.map,
        "root": cfg.root,
        "depth": ctx.depth,
        "observable": cfg.observable,
        "results": Value::Object(std::mem::take(&mut ctx.results)),
        "warnings": ctx.warnings,
    });
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    out.files
        .insert(0, ("report.json".into(), text.into_bytes()));
    if cfg.params.plot {
        let script = crate::output::gnuplot_script(&out);
        out.add("plot.gp", script);
    }
    Ok(out)
}

fn tree(ctx: &mut Ctx, out: &mut Outputs) -> Result<(), CliError> {
    let p = ctx.cfg.params.clone();
    let f = ctx.map().clone();
    let seed = ctx.seed.substream(1);
    let t = build_tree(&f, &ctx.root, p.tree_depth, p.labeling, seed)?;
    out.add("tree.jsonl", t.to_jsonl());
    let psi = ctx.raw_psi()?;
    let exact: Vec<Value> = (0..=p.tree_depth)
        .map(|j| {
            exact_preimage_measure(&t, j, std::slice::from_ref(&psi))
                .map(|m| json!({"level": j, "mean": Estimate::exact(m[0])}))
        })
        .collect::<ergolab::Result<_>>()?;
    let gaps = streamed_gaps(&f, &ctx.root, p.gap_depth, p.gap_labeling, seed)?;
    let (rate, scale) = match (
        p.census_rate,
        p.census_scale,
        default_census_parameters(&gaps),
    ) {
        (Some(r), Some(s), _) => (r, s),
        (r, s, Some((dr, ds))) => (r.unwrap_or(dr), s.unwrap_or(ds)),
        _ => {
            return Err(LabError::Precondition(
                "too few gap levels to fit census parameters".into(),
            )
            .into())
        }
    };
    let census = branch_contraction_census(&gaps, rate, scale);
    out.add("census.csv", census.to_csv());
    let mut cyl = String::from("n,m,estimate,stderr\n");
    let mut rows = Vec::new();
    for &n in &p.cylinder_levels {
        let m = p.cylinder_tail.unwrap_or_else(|| default_tail_depth(n));
        let v = cylinder_conditional_variance(
            &f,
            &ctx.root,
            n,
            m,
            &psi,
            p.per_cylinder,
            p.cylinders,
            p.labeling,
            seed.substream(n as u64),
        )?;
        cyl.push_str(&format!(
            "{},{},{:e},{:e}\n",
            n, m, v.estimate.value, v.estimate.stderr
        ));
        rows.push(v);
    }
    out.add("cylinder.csv", cyl);
    ctx.results.insert(
        "tree".into(),
        json!({
            "depth": p.tree_depth,
            "labeling": p.labeling,
            "exact_means": exact,
            "gaps": gaps,
            "census": census,
            "cylinder_variance": rows,
        }),
    );
    Ok(())
}

fn sample(ctx: &mut Ctx, out: &mut Outputs) -> Result<(), CliError> {
    let p = ctx.cfg.params.clone();
    if let Some(CatalogMap::Product { map }) = &ctx.catalog {
        let a = mu_batch(
            &map.first,
            &ctx.root,
            ctx.depth,
            p.samples,
            ctx.seed.substream(2),
        )?;
        let b = mu_batch(
            &map.second,
            &ctx.root,
            ctx.depth,
            p.samples,
            ctx.seed.substream(3),
        )?;
        let mut csv = String::from("draw_index,re0,im0,re1,im1,re2,im2,re3,im3\n");
        for (i, (x, y)) in a.points.iter().zip(&b.points).enumerate() {
            let (u, v) = (x.to_array(), y.to_array());
            csv.push_str(&format!(
                "{i},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                u[0], u[1], u[2], u[3], v[0], v[1], v[2], v[3]
            ));
        }
        out.add("samples.csv", csv);
        ctx.results.insert(
            "sample".into(),
            json!({"samples": p.samples, "depth": ctx.depth, "redrawn": a.redrawn + b.redrawn}),
        );
        return Ok(());
    }
    let batch = mu_batch(
        ctx.map(),
        &ctx.root,
        ctx.depth,
        p.samples,
        ctx.seed.substream(2),
    )?;
    out.add("samples.csv", batch.to_csv());
    let psi = ctx.raw_psi()?;
    let mut section = json!({
        "samples": p.samples,
        "depth": ctx.depth,
        "redrawn": batch.redrawn,
        "mean": batch.mean_of(&psi),
    });
    if !psi.singular_set.is_empty() {
        let mass = neighborhood_mass(&psi, &ctx.ensemble(3), p.moment, &p.radii, p.mass_samples)?;
        let mut csv = String::from("radius,mass,stderr,hits\n");
        for r in &mass.rows {
            csv.push_str(&format!(
                "{},{:e},{:e},{}\n",
                r.radius, r.mass.value, r.mass.stderr, r.hits
            ));
        }
        out.add("neighborhood.csv", csv);
        ctx.warnings.extend(mass.warnings.iter().cloned());
        section["neighborhood_mass"] = to_value(&mass);
    }
    ctx.results.insert("sample".into(), section);
    Ok(())
}

fn equidistribution(ctx: &mut Ctx, out: &mut Outputs) -> Result<(), CliError> {
    let p = ctx.cfg.params.clone();
    let tests = vec![
        ctx.raw_psi()?,
        make_holder(Kernel::RealPart, 1.0),
        make_holder(
            Kernel::ChordalTo {
                q: ProjectivePoint::from_real(1.0),
                h: 1.0,
            },
            1.0,
        ),
    ];
    let r = equidistribution_gap(
        ctx.map(),
        &ctx.root,
        &p.equidistribution_depths,
        p.reference_depth,
        &tests,
        p.equidistribution_samples,
        ctx.seed.substream(5),
    )?;
    let mut csv = String::from("depth,test_fn,mean,mean_stderr,gap,gap_stderr\n");
    for row in &r.rows {
        csv.push_str(&format!(
            "{},{},{:e},{:e},{:e},{:e}\n",
            row.depth, row.test_fn, row.mean.value, row.mean.stderr, row.gap.value, row.gap.stderr
        ));
    }
    out.add("equidistribution.csv", csv);
    ctx.results.insert("equidistribution".into(), to_value(&r));
    Ok(())
}

fn sigma(ctx: &mut Ctx, out: &mut Outputs) -> Result<(), CliError> {
    let spectral = ctx.spectral(out, "covariance.csv")?;
    let p = ctx.cfg.params.clone();
    let psi = ctx.psi()?;
    let birkhoff = sigma_birkhoff(
        &psi,
        &ctx.ensemble(6),
        &p.birkhoff_schedule,
        p.birkhoff_orbits,
    )?;
    ctx.warnings
        .extend(birkhoff.warnings.iter().map(|w| format!("birkhoff: {w}")));
    let decision = sigma_decision(&spectral, &birkhoff, ctx.psi_norm);
    let agree = spectral.agrees_with(&birkhoff, 0.1);
    if !agree {
        ctx.warnings
            .push("spectral and slope estimates of sigma^2 disagree beyond 10% + 3 stderr".into());
    }
    ctx.results.insert(
        "sigma".into(),
        json!({
            "spectral": spectral,
            "birkhoff": birkhoff,
            "estimators_agree": agree,
            "decision": decision,
        }),
    );
    Ok(())
}

fn clt(ctx: &mut Ctx, out: &mut Outputs) -> Result<(), CliError> {
    let p = ctx.cfg.params.clone();
    let mut sigma = ctx.spectral(out, "covariance.csv")?;
    if let Some(s) = p.clt_sigma {
        sigma.sigma = s;
        sigma.sigma2 = s * s;
    }
    let psi = ctx.psi()?;
    let r = clt_test(&psi, &ctx.ensemble(7), p.clt_n, p.clt_samples, &sigma)?;
    let drift = ctx.centering_stderr * (p.clt_n as f64).sqrt() / sigma.sigma;
    if drift > 0.02 {
        ctx.warnings.push(format!(
            "centering stderr shifts S_n / (sigma sqrt n) by up to {drift:.3}; raise centering_samples or use exact centering"
        ));
    }
    out.add("clt_histogram.csv", r.histogram.to_csv());
    ctx.results.insert("clt".into(), to_value(&r));
    Ok(())
}

fn asclt(ctx: &mut Ctx, out: &mut Outputs) -> Result<(), CliError> {
    let p = ctx.cfg.params.clone();
    let sigma = ctx.spectral(out, "covariance.csv")?;
    let psi = ctx.psi()?;
    let r = asclt_probe(
        &psi,
        &ctx.ensemble(8),
        p.asclt_n,
        sigma.sigma,
        p.asclt_starts,
    )?;
    let mut csv = String::from("start,levy_distance\n");
    for (i, d) in r.distances.iter().enumerate() {
        csv.push_str(&format!("{i},{d:e}\n"));
    }
    out.add("asclt.csv", csv);
    ctx.results.insert("asclt".into(), to_value(&r));
    Ok(())
}

fn cocycle(ctx: &mut Ctx, out: &mut Outputs) -> Result<(), CliError> {
    let p = ctx.cfg.params.clone();
    let psi = ctx.psi()?;
    let reference_spec = p
        .cocycle_reference
        .clone()
        .or_else(|| match &ctx.cfg.observable.spec {
            ObservableSpec::Coboundary { of } => Some((**of).clone()),
            _ => None,
        });
    let reference = reference_spec
        .map(|s| build_observable(&s, ctx.cfg.observable.holder, ctx.map()))
        .transpose()?;
    let r = cocycle_reconstruct(
        &psi,
        &ctx.ensemble(9),
        p.cocycle_p,
        p.cocycle_samples,
        reference.as_ref(),
    )?;
    out.add("cocycle.csv", r.to_csv());
    ctx.warnings.extend(r.warnings.iter().cloned());
    ctx.results.insert("cocycle".into(), to_value(&r));
    Ok(())
}

fn transfer(ctx: &mut Ctx, out: &mut Outputs) -> Result<(), CliError> {
    let p = ctx.cfg.params.clone();
    let psi = ctx.psi()?;
    let phi = build_observable(&p.transfer_phi, 1.0, ctx.map())?;
    let r = transfer_norm_decay(
        &psi,
        &phi,
        &ctx.ensemble(10),
        &p.transfer_schedule,
        p.transfer_samples,
    )?;
    let identity = transfer_apply(ctx.map(), &psi, &ctx.root, 0)?.value == psi.evaluate(&ctx.root);
    out.add("transfer.csv", r.to_csv());
    ctx.warnings.extend(r.warnings.iter().cloned());
    ctx.results.insert(
        "transfer".into(),
        json!({"decay": r, "decreasing": r.is_decreasing(), "identity_at_zero": identity}),
    );
    Ok(())
}

fn lyapunov_scenario(ctx: &mut Ctx) -> Result<(), CliError> {
    let p = ctx.cfg.params.clone();
    let value = match &ctx.catalog {
        Some(CatalogMap::Product { map }) => {
            let r = lyapunov_product(
                map,
                (ctx.root, ctx.root),
                ctx.depth,
                ctx.seed.substream(11),
                p.lyapunov_n,
                p.lyapunov_orbits,
            )?;
            json!({"factors": r})
        }
        _ => {
            let r = lyapunov(&ctx.ensemble(11), p.lyapunov_n, p.lyapunov_orbits)?;
            if !r.respects_lower_bound() {
                ctx.warnings
                    .push("Lyapunov estimate below (1/2) log d".into());
            }
            to_value(&r)
        }
    };
    ctx.results.insert("lyapunov".into(), value);
    Ok(())
}

fn lattes(ctx: &mut Ctx, out: &mut Outputs) -> Result<(), CliError> {
    let mut config = ctx.cfg.params.lattes.clone();
    config.depth = config.depth.or(ctx.cfg.params.depth);
    let r = lattes_probe(&ctx.ensemble(12), &config)?;
    let mut csv = String::from("center,re0,im0,re1,im1,radius,ratio,stderr,hits\n");
    for (k, row) in r.density_ratios.iter().enumerate() {
        for ((radius, e), hits) in row.ratios.iter().zip(&row.hits) {
            let c = row.center;
            csv.push_str(&format!(
                "{k},{:e},{:e},{:e},{:e},{radius},{:e},{:e},{hits}\n",
                c[0], c[1], c[2], c[3], e.value, e.stderr
            ));
        }
    }
    out.add("lattes_density.csv", csv);
    ctx.warnings
        .extend(r.warnings.iter().map(|w| format!("lattes: {w}")));
    ctx.results.insert("lattes".into(), to_value(&r));
    Ok(())
}
