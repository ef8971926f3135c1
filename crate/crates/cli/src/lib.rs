//! Experiment orchestration behind the `lab` binary.

pub mod config;
pub mod output;
pub mod run;

use ergolab::LabError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("computation failed: {0}")]
    Compute(#[from] LabError),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn validation(e: LabError) -> CliError {
        CliError::Validation(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Compute(_) => 3,
            CliError::Io(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

use std::path::Path;
use std::time::Instant;

/// Runs `cfg` on a pool of `workers` threads and writes the outputs to `out`.
pub fn run_to_dir(
    cfg: &config::ResolvedConfig,
    workers: usize,
    out: &Path,
) -> Result<output::Manifest, CliError> {
    if workers == 0 {
        return Err(CliError::Validation("workers must be at least 1".into()));
    }
    output::check_out_dir(out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    let start = Instant::now();
    let outputs = pool.install(|| run::execute(cfg))?;
    output::write_outputs(out, &outputs, cfg, workers, start.elapsed().as_secs_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use config::{ExperimentConfig, Scenario};

    fn small(scenario: Scenario, seed: u64) -> config::ResolvedConfig {
        let mut c = ExperimentConfig::default();
        c.params.samples = 200;
        c.params.mass_samples = 200;
        c.params.lyapunov_orbits = 20;
        c.params.lyapunov_n = 60;
        c.resolve(scenario, seed).unwrap()
    }

    #[test]
    fn manifest_replay_reproduces_the_report() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small(Scenario::Sample, 9);
        let m = run_to_dir(&cfg, 2, &tmp.path().join("a")).unwrap();
        let loaded = output::Manifest::load(&tmp.path().join("a/manifest.json")).unwrap();
        assert_eq!(loaded.config_hash, m.config_hash);
        run_to_dir(&loaded.config, 1, &tmp.path().join("b")).unwrap();
        for f in &m.files {
            let a = std::fs::read(tmp.path().join("a").join(&f.name)).unwrap();
            let b = std::fs::read(tmp.path().join("b").join(&f.name)).unwrap();
            assert_eq!(a, b, "{}", f.name);
            assert_eq!(output::sha256_hex(&a), f.sha256);
        }
        let report: serde_json::Value =
            serde_json::from_slice(&std::fs::read(tmp.path().join("a/report.json")).unwrap())
                .unwrap();
        assert_eq!(report["config_hash"].as_str().unwrap(), m.config_hash);
    }

    #[test]
    fn tampered_manifest_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        run_to_dir(&small(Scenario::Lyapunov, 1), 1, tmp.path()).unwrap();
        let path = tmp.path().join("manifest.json");
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"seed\": 1,", "\"seed\": 2,");
        std::fs::write(&path, text).unwrap();
        assert_eq!(output::Manifest::load(&path).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn computation_errors_leave_no_output() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("never");
        let mut cfg = small(Scenario::Sample, 1);
        // 0 is a critical value of z^2 and its own only preimage.
        cfg.root = [0.0, 0.0];
        let err = run_to_dir(&cfg, 1, &out).unwrap_err();
        assert_eq!(err.exit_code(), 3, "{err}");
        assert!(!out.exists());
    }

    #[test]
    fn plot_script_lists_tables() {
        let mut cfg = small(Scenario::Sample, 1);
        cfg.params.plot = true;
        let out = run::execute(&cfg).unwrap();
        let script = std::str::from_utf8(out.get("plot.gp").unwrap()).unwrap();
        assert!(script.contains("samples.csv"));
    }
}
