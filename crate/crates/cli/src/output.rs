//! Report, manifest and plot script on disk.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ResolvedConfig;
use crate::run::Outputs;
use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ResolvedConfig,
    pub config_hash: String,
    pub seed: u64,
    pub versions: Versions,
    pub workers: usize,
    pub wall_time_seconds: f64,
    pub files: Vec<FileDigest>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Versions {
    pub ergolab: String,
    pub cli: String,
}

impl Versions {
    pub fn current() -> Self {
        Versions {
            ergolab: ergolab::VERSION.to_string(),
            cli: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        if m.config.hash() != m.config_hash {
            return Err(CliError::Validation(format!(
                "{}: config hash does not match the recorded configuration",
                path.display()
            )));
        }
        Ok(m)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Fails early when `dir` exists and is not a directory.
pub fn check_out_dir(dir: &Path) -> Result<(), CliError> {
    if dir.exists() && !dir.is_dir() {
        return Err(CliError::Validation(format!(
            "{} exists and is not a directory",
            dir.display()
        )));
    }
    Ok(())
}

/// Writes all outputs plus `manifest.json`. On failure every file written
/// by this call is removed, and the directory too if this call created it.
pub fn write_outputs(
    dir: &Path,
    outputs: &Outputs,
    cfg: &ResolvedConfig,
    workers: usize,
    wall_time_seconds: f64,
) -> Result<Manifest, CliError> {
    check_out_dir(dir)?;
    let created = !dir.exists();
    let mut written: Vec<PathBuf> = Vec::new();
    let result = (|| -> Result<Manifest, CliError> {
        fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for (name, bytes) in &outputs.files {
            let path = dir.join(name);
            fs::write(&path, bytes)?;
            written.push(path);
            files.push(FileDigest {
                name: name.clone(),
                sha256: sha256_hex(bytes),
            });
        }
        let manifest = Manifest {
            config: cfg.clone(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            versions: Versions::current(),
            workers,
            wall_time_seconds,
            files,
        };
        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text)?;
        written.push(path);
        Ok(manifest)
    })();
    if result.is_err() {
        for p in &written {
            let _ = fs::remove_file(p);
        }
        if created {
            let _ = fs::remove_dir_all(dir);
        }
    }
    result
}

/// Gnuplot script drawing the second column of every CSV against the first.
pub fn gnuplot_script(outputs: &Outputs) -> String {
    let mut s = String::from("set datafile separator ','\nset key autotitle columnhead\nset terminal pngcairo size 900,600\n");
    for (name, _) in &outputs.files {
        let Some(stem) = name.strip_suffix(".csv") else {
            continue;
        };
        let (using, style) = match stem {
            "clt_histogram" => ("(($1+$2)/2):3", "boxes"),
            "cylinder" => ("1:3", "linespoints"),
            "transfer" => ("1:4", "linespoints"),
            "equidistribution" => ("1:5", "points"),
            "lattes_density" => ("6:7", "points"),
            _ => ("1:2", "linespoints"),
        };
        s.push_str(&format!(
            "set output '{stem}.png'\nplot '{name}' using {using} with {style}\n"
        ));
    }
    s
}
