//! Config file loading: strict JSON with unknown fields rejected, plus the
//! `SAX_SEED` environment override.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use sax_core::{Result, SaxError};

/// Parameters for `gen-data`: a seeded Gaussian vector dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenDataConfig {
    pub count: usize,
    pub dim: usize,
    pub seed: u64,
    pub normalize: bool,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        GenDataConfig { count: 20_000, dim: 64, seed: 42, normalize: false }
    }
}

/// Reads a JSON config file into `T`, rejecting unknown fields (the types
/// all carry `deny_unknown_fields`) and naming the file in any error.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SaxError::config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| SaxError::config(format!("{}: {e}", path.display())))
}

/// The `SAX_SEED` environment variable, when set, overrides the seed of
/// whatever config a subcommand loads.
pub fn seed_override() -> Result<Option<u64>> {
    match std::env::var("SAX_SEED") {
        Ok(raw) => raw
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|e| SaxError::config(format!("SAX_SEED must be an unsigned integer: {e}"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(SaxError::config(format!("SAX_SEED: {e}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_are_rejected() {
        let err = serde_json::from_str::<GenDataConfig>(r#"{"count":10,"dims":4}"#);
        assert!(err.is_err());
        let ok: GenDataConfig = serde_json::from_str(r#"{"count":10,"dim":4}"#).unwrap();
        assert_eq!(ok.count, 10);
        assert_eq!(ok.dim, 4);
        assert_eq!(ok.seed, GenDataConfig::default().seed);
    }

    #[test]
    fn defaults_describe_the_benchmark_dataset() {
        let d = GenDataConfig::default();
        assert_eq!((d.count, d.dim), (20_000, 64));
        assert!(!d.normalize);
    }
}
