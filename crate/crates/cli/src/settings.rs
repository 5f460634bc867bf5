//! Flat `key = value` files shared by `train --config` and `--arch-config`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nexception::arch::{ArchConfig, DIMENSION_NAMES};
use nexception::train::TrainConfig;

use crate::Failure;

/// Parses `key = value` (or `key: value`) lines; `#` starts a comment.
/// A file starting with `{` is read as a JSON object instead.
pub fn read_pairs(path: &Path) -> Result<Vec<(String, String)>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    if text.trim_start().starts_with('{') {
        let map: BTreeMap<String, serde_json::Value> =
            serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        return Ok(map
            .into_iter()
            .map(|(k, v)| {
                let v = match v {
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                };
                (k, v)
            })
            .collect());
    }
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .or_else(|| line.split_once(':'))
            .ok_or_else(|| Failure::usage(format!("{}:{}: expected `key = value`", path.display(), n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn parse_pair(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected key=value, got {s:?}"))
}

pub fn is_arch_key(k: &str) -> bool {
    DIMENSION_NAMES.contains(&k)
}

pub fn apply_arch(cfg: &mut ArchConfig, pairs: &[(String, String)]) -> Result<(), Failure> {
    for (k, v) in pairs {
        cfg.set(k, v).map_err(Failure::usage)?;
    }
    Ok(())
}

pub fn apply_train(cfg: &mut TrainConfig, pairs: &[(String, String)]) -> Result<(), Failure> {
    let known = TrainConfig::keys();
    if let Some((k, _)) = pairs.iter().find(|(k, _)| !known.contains(k)) {
        return Err(Failure::usage(format!(
            "unknown key {k:?}; training keys: {}; architecture keys: {}",
            known.join(", "),
            DIMENSION_NAMES.join(", ")
        )));
    }
    cfg.apply(pairs).map_err(Failure::usage)
}

/// The flat form read back by `--arch-config`.
pub fn arch_to_text(cfg: &ArchConfig) -> String {
    cfg.labels().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
