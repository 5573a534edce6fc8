//! Model and configuration files.

use std::fs;
use std::path::Path;

use qsbrown_core::sde::SimConfig;
use qsbrown_core::ModelSpec;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub fn read_model(path: &Path) -> Result<ModelSpec, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read model file {}: {e}", path.display())))?;
    parse_model(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn parse_model(text: &str) -> Result<ModelSpec, CliError> {
    let spec: ModelSpec = serde_json::from_str(text)
        .map_err(|e| CliError::Usage(format!("invalid model JSON: {e}")))?;
    spec.check_structure()?;
    Ok(spec)
}

pub fn model_to_json(spec: &ModelSpec) -> String {
    serde_json::to_string_pretty(spec).expect("model serializes")
}

pub fn read_sim_config(path: &Path) -> Result<SimConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid simulation config {}: {e}", path.display())))
}

/// Positions, one path per line, comma or whitespace separated.
pub fn read_positions(path: &Path, particles: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = parse_list(line)
            .map_err(|e| CliError::Usage(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if row.len() != particles {
            return Err(CliError::Usage(format!(
                "{}:{}: {} positions, expected K = {particles}",
                path.display(),
                n + 1,
                row.len()
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| format!("bad number {t:?}: {e}"))
        })
        .collect()
}

/// SHA-256 of the compact JSON form of `spec`, hex encoded.
pub fn spec_hash(spec: &ModelSpec) -> String {
    let json = serde_json::to_string(spec).expect("model serializes");
    Sha256::digest(json.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Creates `dir` and checks that it accepts files.
pub fn ensure_writable_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
    let probe = dir.join(".qsbrown-write-probe");
    fs::write(&probe, b"")
        .and_then(|_| fs::remove_file(&probe))
        .map_err(|e| CliError::Usage(format!("{} is not writable: {e}", dir.display())))
}
