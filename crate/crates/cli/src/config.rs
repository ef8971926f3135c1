//! Experiment configuration: TOML or JSON, one defaults table.

use std::path::{Path, PathBuf};

use ergolab::lyapunov::LattesConfig;
use ergolab::observables::{make_coboundary, make_holder, make_log_derivative, make_log_jacobian};
use ergolab::tree::Labeling;
use ergolab::{
    catalog, CatalogEntry, Complex64, Kernel, MapSpec, Observable, ProjectivePoint, RationalMap,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Seed used when neither the command line, the config nor `LAB_DEFAULT_SEED` gives one.
pub const FALLBACK_SEED: u64 = 20_240_601;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Tree,
    Sample,
    Equidistribution,
    Covariance,
    Sigma,
    Clt,
    Asclt,
    Cocycle,
    Transfer,
    Lyapunov,
    Lattes,
    Full,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Tree => "tree",
            Scenario::Sample => "sample",
            Scenario::Equidistribution => "equidistribution",
            Scenario::Covariance => "covariance",
            Scenario::Sigma => "sigma",
            Scenario::Clt => "clt",
            Scenario::Asclt => "asclt",
            Scenario::Cocycle => "cocycle",
            Scenario::Transfer => "transfer",
            Scenario::Lyapunov => "lyapunov",
            Scenario::Lattes => "lattes",
            Scenario::Full => "full",
        }
    }

    /// Scenarios that feed the observable into a variance or limit-law estimator.
    pub fn needs_centering(self) -> bool {
        matches!(
            self,
            Scenario::Covariance
                | Scenario::Sigma
                | Scenario::Clt
                | Scenario::Asclt
                | Scenario::Cocycle
                | Scenario::Transfer
                | Scenario::Full
        )
    }
}

/// A catalog name, an inline `{degree, p, q}` map, or `{quadratic = [re, im]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MapConfig {
    Catalog(String),
    Quadratic { quadratic: [f64; 2] },
    Inline(MapSpec),
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig::Catalog("power2".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservableSpec {
    Constant {
        value: f64,
    },
    RealPart,
    ImagPart,
    AffineRe,
    AffineIm,
    AffineModulus,
    /// `d(., q)^h` with `q` affine, or infinity when `point` is omitted.
    ChordalTo {
        point: Option<[f64; 2]>,
        #[serde(default = "one")]
        h: f64,
    },
    LogDerivative,
    LogJacobian,
    /// `g - g o f`.
    Coboundary {
        of: Box<ObservableSpec>,
    },
    Scaled {
        factor: f64,
        of: Box<ObservableSpec>,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    /// Subtract the Monte Carlo mean.
    Sampled,
    /// Subtract `mean` and mark it exact.
    Exact,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableConfig {
    #[serde(flatten)]
    pub spec: ObservableSpec,
    #[serde(default = "sampled")]
    pub centering: Centering,
    /// Known mean for `centering = "exact"`.
    #[serde(default)]
    pub mean: f64,
    /// Hölder exponent of `exp(psi)` for bounded kernels.
    #[serde(default = "one")]
    pub holder: f64,
}

fn sampled() -> Centering {
    Centering::Sampled
}

impl Default for ObservableConfig {
    fn default() -> Self {
        ObservableConfig {
            spec: ObservableSpec::RealPart,
            centering: Centering::Sampled,
            mean: 0.0,
            holder: 1.0,
        }
    }
}

fn kernel_of(spec: &ObservableSpec) -> Option<Kernel> {
    Some(match spec {
        ObservableSpec::Constant { value } => Kernel::Constant(*value),
        ObservableSpec::RealPart => Kernel::RealPart,
        ObservableSpec::ImagPart => Kernel::ImagPart,
        ObservableSpec::AffineRe => Kernel::AffineRe,
        ObservableSpec::AffineIm => Kernel::AffineIm,
        ObservableSpec::AffineModulus => Kernel::AffineModulus,
        ObservableSpec::ChordalTo { point, h } => Kernel::ChordalTo {
            q: point.map_or(ProjectivePoint::infinity(), |p| {
                ProjectivePoint::from_affine(Complex64::new(p[0], p[1]))
            }),
            h: *h,
        },
        ObservableSpec::Scaled { factor, of } => Kernel::Scaled {
            factor: *factor,
            inner: Box::new(kernel_of(of)?),
        },
        _ => return None,
    })
}

/// The uncentered observable described by `spec` on the map `f`.
pub fn build_observable(
    spec: &ObservableSpec,
    holder: f64,
    f: &RationalMap,
) -> ergolab::Result<Observable> {
    match spec {
        ObservableSpec::LogDerivative => make_log_derivative(f),
        ObservableSpec::LogJacobian => make_log_jacobian(f),
        ObservableSpec::Coboundary { of } => make_coboundary(&build_observable(of, holder, f)?, f),
        ObservableSpec::Scaled { factor, of } if kernel_of(of).is_none() => {
            Ok(build_observable(of, holder, f)?.scaled(*factor))
        }
        other => Ok(make_holder(
            kernel_of(other).expect("bounded kernel"),
            holder,
        )),
    }
}

/// Every numeric default in one place. Each field may be overridden in the
/// `[params]` table of a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    /// Backward depth of every sample; `ceil(30 / log2 d)` when absent.
    pub depth: Option<usize>,
    /// Batch size of the `sample` scenario.
    pub samples: usize,
    /// Samples used by `center` for `centering = "sampled"`.
    pub centering_samples: usize,

    /// Depth of the stored tree in the `tree` scenario.
    pub tree_depth: usize,
    pub labeling: Labeling,
    /// Depth of the streamed successive-gap run.
    pub gap_depth: usize,
    pub gap_labeling: Labeling,
    /// Census parameters; fitted from the gaps when absent.
    pub census_rate: Option<f64>,
    pub census_scale: Option<f64>,
    /// Levels `n` of the cylinder conditional variance.
    pub cylinder_levels: Vec<usize>,
    /// Tail depth `m`; `n + max(20, 2n)` when absent.
    pub cylinder_tail: Option<usize>,
    pub per_cylinder: usize,
    pub cylinders: usize,

    pub equidistribution_depths: Vec<usize>,
    pub reference_depth: usize,
    pub equidistribution_samples: usize,

    pub j_max: usize,
    pub spectral_orbits: usize,
    pub spectral_window: usize,
    pub birkhoff_schedule: Vec<usize>,
    pub birkhoff_orbits: usize,

    pub clt_n: usize,
    pub clt_samples: usize,
    /// Use this sigma instead of the spectral estimate.
    pub clt_sigma: Option<f64>,

    pub asclt_n: usize,
    pub asclt_starts: usize,

    pub cocycle_p: usize,
    pub cocycle_samples: usize,
    /// Reference solution `g` compared with `u_p`.
    pub cocycle_reference: Option<ObservableSpec>,

    pub transfer_schedule: Vec<usize>,
    pub transfer_samples: usize,
    /// Bounded test function of the duality check.
    pub transfer_phi: ObservableSpec,

    pub lyapunov_n: usize,
    pub lyapunov_orbits: usize,

    /// Radii of `neighborhood_mass` in the `sample` scenario.
    pub radii: Vec<f64>,
    pub moment: f64,
    pub mass_samples: usize,

    pub lattes: LattesConfig,

    /// Also write a gnuplot script for the emitted tables.
    pub plot: bool,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            depth: None,
            samples: 10_000,
            centering_samples: 20_000,
            tree_depth: 7,
            labeling: Labeling::Sorted,
            gap_depth: 14,
            gap_labeling: Labeling::PathLifted,
            census_rate: None,
            census_scale: None,
            cylinder_levels: vec![0, 2, 4, 6, 8],
            cylinder_tail: None,
            per_cylinder: 20,
            cylinders: 200,
            equidistribution_depths: (1..=7).collect(),
            reference_depth: 30,
            equidistribution_samples: 10_000,
            j_max: 40,
            spectral_orbits: 1000,
            spectral_window: 500,
            birkhoff_schedule: vec![250, 500, 1000, 2000],
            birkhoff_orbits: 2000,
            clt_n: 2000,
            clt_samples: 50_000,
            clt_sigma: None,
            asclt_n: 100_000,
            asclt_starts: 20,
            cocycle_p: 200,
            cocycle_samples: 2000,
            cocycle_reference: None,
            transfer_schedule: (0..=8).collect(),
            transfer_samples: 1000,
            transfer_phi: ObservableSpec::RealPart,
            lyapunov_n: 200,
            lyapunov_orbits: 400,
            radii: vec![0.2, 0.1, 0.05, 0.025],
            moment: 1.0,
            mass_samples: 20_000,
            lattes: LattesConfig::default(),
            plot: false,
        }
    }
}

/// Config file contents. Command-line flags override `seed`, `workers` and `out`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Option<Scenario>,
    #[serde(default)]
    pub map: MapConfig,
    /// Affine root `[re, im]`; the catalog default when absent.
    pub root: Option<[f64; 2]>,
    pub observable: Option<ObservableConfig>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub params: Params,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        if is_json {
            serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
        }
    }
}

/// Everything that determines the report. Worker count and output
/// directory are deliberately absent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub scenario: Scenario,
    pub map: MapConfig,
    pub root: [f64; 2],
    pub observable: ObservableConfig,
    pub seed: u64,
    pub params: Params,
}

impl ResolvedConfig {
    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A loaded map: a catalog entry, or an inline map wrapped as one.
pub fn resolve_map(
    map: &MapConfig,
) -> Result<(Option<CatalogEntry>, Option<RationalMap>), CliError> {
    match map {
        MapConfig::Catalog(name) => {
            let entry = catalog::lookup(name).map_err(CliError::validation)?;
            let rational = entry.rational().cloned();
            Ok((Some(entry), rational))
        }
        MapConfig::Quadratic { quadratic } => Ok((
            None,
            Some(
                RationalMap::quadratic(Complex64::new(quadratic[0], quadratic[1]))
                    .map_err(CliError::validation)?,
            ),
        )),
        MapConfig::Inline(spec) => Ok((
            None,
            Some(RationalMap::try_from(spec.clone()).map_err(CliError::validation)?),
        )),
    }
}

/// Checks the parameters against the preconditions of the estimators the
/// scenario will call.
pub fn validate(cfg: &ResolvedConfig, map: Option<&RationalMap>) -> Result<(), CliError> {
    let p = &cfg.params;
    let bad = |m: String| Err(CliError::Validation(m));
    let s = cfg.scenario;
    let uses = |x: Scenario| s == x || s == Scenario::Full;
    if map.is_none() && s != Scenario::Lyapunov && s != Scenario::Sample {
        return bad(format!("scenario {} needs a map of the projective line; product maps support lyapunov and sample", s.name()));
    }
    if s.needs_centering() && cfg.observable.centering == Centering::None {
        return bad(format!(
            "scenario {} needs a centered observable (centering = \"sampled\" or \"exact\")",
            s.name()
        ));
    }
    if let Some(f) = map {
        if build_observable(&cfg.observable.spec, cfg.observable.holder, f).is_err() {
            return bad("observable cannot be built on this map".into());
        }
    }
    if uses(Scenario::Covariance) || uses(Scenario::Sigma) || uses(Scenario::Clt) {
        if p.j_max < 4 {
            return bad(format!("j_max must be at least 4, got {}", p.j_max));
        }
        if p.spectral_orbits < 2 || p.spectral_window == 0 {
            return bad("spectral_orbits must be at least 2 and spectral_window positive".into());
        }
    }
    if uses(Scenario::Sigma) {
        let max = p.birkhoff_schedule.iter().copied().max().unwrap_or(0);
        if p.birkhoff_schedule.len() < 4 || max < 500 {
            return bad(
                "birkhoff_schedule needs at least 4 horizons and a largest horizon of at least 500"
                    .into(),
            );
        }
        if p.birkhoff_orbits < 20 {
            return bad("birkhoff_orbits must be at least 20".into());
        }
    }
    if uses(Scenario::Clt) && (p.clt_n == 0 || p.clt_samples < 2) {
        return bad("clt_n must be positive and clt_samples at least 2".into());
    }
    if uses(Scenario::Clt) && p.clt_sigma.is_some_and(|s| s.is_nan() || s <= 0.0) {
        return bad("clt_sigma must be positive".into());
    }
    if uses(Scenario::Asclt) && (p.asclt_n < 2 || p.asclt_starts == 0) {
        return bad("asclt_n must be at least 2 and asclt_starts positive".into());
    }
    if uses(Scenario::Cocycle) && (p.cocycle_p == 0 || p.cocycle_samples < 2) {
        return bad("cocycle_p must be positive and cocycle_samples at least 2".into());
    }
    if uses(Scenario::Lyapunov) && (p.lyapunov_n < 50 || p.lyapunov_orbits < 2) {
        return bad(format!(
            "lyapunov_n must be at least 50 (got {}) with at least 2 orbits",
            p.lyapunov_n
        ));
    }
    if uses(Scenario::Transfer) {
        if let Some(f) = map {
            let n = p
                .transfer_schedule
                .iter()
                .copied()
                .max()
                .unwrap_or(0)
                .max(1);
            if (f.degree() as f64).powi(n as i32) > ergolab::transfer::TRANSFER_BUDGET as f64 {
                return bad(format!(
                    "transfer_schedule reaches d^{n} preimages, above 2^16"
                ));
            }
        }
        if p.transfer_samples < 2 {
            return bad("transfer_samples must be at least 2".into());
        }
    }
    let radii_ok = |radii: &[f64]| !radii.is_empty() && radii.iter().all(|&r| r > 0.0 && r < 0.5);
    if (uses(Scenario::Sample) && !radii_ok(&p.radii))
        || (uses(Scenario::Lattes) && !radii_ok(&p.lattes.radii))
    {
        return bad("radii must lie in (0, 1/2)".into());
    }
    if uses(Scenario::Equidistribution)
        && p.equidistribution_depths
            .iter()
            .any(|&d| d >= p.reference_depth)
    {
        return bad("reference_depth must exceed every equidistribution depth".into());
    }
    if uses(Scenario::Tree) {
        if p.per_cylinder < 2 || p.cylinders < 2 {
            return bad("per_cylinder and cylinders must be at least 2".into());
        }
        if let Some(m) = p.cylinder_tail {
            if let Some(&n) = p.cylinder_levels.iter().max() {
                if m < n + 20 {
                    return bad(format!(
                        "cylinder_tail {m} must be at least the largest level plus 20"
                    ));
                }
            }
        }
    }
    if uses(Scenario::Sample) && p.samples == 0 {
        return bad("samples must be at least 1".into());
    }
    Ok(())
}

/// Seed precedence: command line, config file, `LAB_DEFAULT_SEED`, [`FALLBACK_SEED`].
pub fn resolve_seed(
    flag: Option<u64>,
    file: Option<u64>,
    env: Option<&str>,
) -> Result<u64, CliError> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match env {
        Some(text) => text.trim().parse().map_err(|_| {
            CliError::Validation(format!(
                "LAB_DEFAULT_SEED={text:?} is not an unsigned integer"
            ))
        }),
        None => Ok(FALLBACK_SEED),
    }
}

impl ExperimentConfig {
    /// Fixes the scenario and seed and fills in the root and observable.
    pub fn resolve(self, scenario: Scenario, seed: u64) -> Result<ResolvedConfig, CliError> {
        let (entry, _) = resolve_map(&self.map)?;
        let root = self
            .root
            .or(entry.map(|e| e.default_root))
            .unwrap_or([3.0, 0.0]);
        if !root.iter().all(|x| x.is_finite()) {
            return Err(CliError::Validation("root must be finite".into()));
        }
        Ok(ResolvedConfig {
            scenario,
            map: self.map,
            root,
            observable: self.observable.unwrap_or_default(),
            seed,
            params: self.params,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, toml::de::Error> {
        toml::from_str(text)
    }

    #[test]
    fn toml_and_json_agree() {
        let t = parse(
            r#"
            map = "chebyshev2"
            seed = 5
            [observable]
            kind = "chordal_to"
            point = [1.0, 0.0]
            [params]
            samples = 123
            radii = [0.1, 0.05]
            "#,
        )
        .unwrap();
        let j: ExperimentConfig = serde_json::from_str(
            r#"{"map": "chebyshev2", "seed": 5,
                "observable": {"kind": "chordal_to", "point": [1.0, 0.0]},
                "params": {"samples": 123, "radii": [0.1, 0.05]}}"#,
        )
        .unwrap();
        let (a, b) = (
            t.resolve(Scenario::Sample, 5).unwrap(),
            j.resolve(Scenario::Sample, 5).unwrap(),
        );
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.params.samples, 123);
        assert_eq!(a.params.j_max, Params::default().j_max);
    }

    #[test]
    fn map_forms() {
        let q = parse("map = { quadratic = [0.0, 0.3] }").unwrap();
        assert!(matches!(q.map, MapConfig::Quadratic { .. }));
        let inline = parse(
            "map = { degree = 2, p = [[1, 0], [0, 0], [0, 0]], q = [[0, 0], [0, 0], [1, 0]] }",
        )
        .unwrap();
        let (entry, f) = resolve_map(&inline.map).unwrap();
        assert!(entry.is_none());
        assert_eq!(f.unwrap().degree(), 2);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(parse("[params]\nsampels = 3").is_err());
        assert!(parse("colour = 1").is_err());
    }

    #[test]
    fn degree_one_is_a_validation_error() {
        let cfg =
            parse("map = { degree = 1, p = [[1, 0], [0, 0]], q = [[0, 0], [1, 0]] }").unwrap();
        let err = cfg
            .resolve(Scenario::Sample, 1)
            .and_then(|r| resolve_map(&r.map))
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("degree"), "{err}");
    }

    #[test]
    fn seed_precedence() {
        assert_eq!(resolve_seed(Some(1), Some(2), Some("3")).unwrap(), 1);
        assert_eq!(resolve_seed(None, Some(2), Some("3")).unwrap(), 2);
        assert_eq!(resolve_seed(None, None, Some(" 3 ")).unwrap(), 3);
        assert_eq!(resolve_seed(None, None, None).unwrap(), FALLBACK_SEED);
        assert!(resolve_seed(None, None, Some("x")).is_err());
    }

    #[test]
    fn validation_catches_preconditions() {
        let base = ExperimentConfig::default();
        let check = |edit: fn(&mut Params), s: Scenario| {
            let mut c = base.clone();
            edit(&mut c.params);
            let r = c.resolve(s, 1).unwrap();
            let (_, f) = resolve_map(&r.map).unwrap();
            validate(&r, f.as_ref())
        };
        assert!(check(|_| {}, Scenario::Full).is_ok());
        assert!(check(|p| p.j_max = 3, Scenario::Sigma).is_err());
        assert!(check(
            |p| p.birkhoff_schedule = vec![10, 20, 30, 40],
            Scenario::Sigma
        )
        .is_err());
        assert!(check(|p| p.lyapunov_n = 10, Scenario::Lyapunov).is_err());
        assert!(check(|p| p.radii = vec![0.6], Scenario::Sample).is_err());
        assert!(check(|p| p.transfer_schedule = vec![20], Scenario::Transfer).is_err());
        assert!(check(|p| p.reference_depth = 5, Scenario::Equidistribution).is_err());
        assert!(check(|p| p.reference_depth = 5, Scenario::Tree).is_ok());
    }

    #[test]
    fn product_maps_only_run_supported_scenarios() {
        let c = ExperimentConfig {
            map: MapConfig::Catalog("product22".into()),
            ..Default::default()
        };
        for (s, ok) in [
            (Scenario::Lyapunov, true),
            (Scenario::Sample, true),
            (Scenario::Sigma, false),
        ] {
            let r = c.clone().resolve(s, 1).unwrap();
            let (_, f) = resolve_map(&r.map).unwrap();
            assert_eq!(validate(&r, f.as_ref()).is_ok(), ok, "{s:?}");
        }
    }
}
