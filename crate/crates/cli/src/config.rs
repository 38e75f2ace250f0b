//! Flat key-value experiment configs.
//!
//! Keys are dotted (`sampler.coupling = 0.5`). INI sections are accepted too
//! and flattened, so `[sampler]` followed by `coupling = 0.5` is the same key.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Every key the runner understands.
pub const KNOWN_KEYS: &[&str] = &[
    "kind",
    "seed",
    "output",
    "graph.kind",
    "graph.n",
    "graph.p",
    "graph.path",
    "sampler.kind",
    "sampler.dim",
    "sampler.b_x",
    "sampler.b_y",
    "sampler.label_noise",
    "sampler.coupling",
    "sampler.field",
    "sampler.labels",
    "sampler.burn_in",
    "objective.kind",
    "objective.lambda",
    "objective.gamma",
    "objective.amplitude",
    "sgd.step",
    "sgd.steps",
    "harness.pairs",
    "harness.test_sets",
    "harness.trials",
    "harness.m",
    "harness.vertex",
    "bounds.delta",
    "gnn.kind",
    "gnn.method",
    "gnn.epsilon",
    "gnn.trials",
    "gnn.sizes",
    "gnn.densities",
    "gnn.replicates",
    "srm.d_max",
    "srm.slack",
    "srm.mode",
    "srm.degree",
    "srm.epsilon",
    "srm.delta",
    "concentration.draws",
    "concentration.thin",
    "concentration.grid",
];

/// Keys of the `bounds` subcommand params file.
pub const BOUNDS_KEYS: &[&str] = &[
    "regime",
    "lambda",
    "gamma",
    "lipschitz",
    "zeta",
    "loss_bound",
    "sample_diameter",
    "radius",
    "step",
    "steps",
    "field_sizes",
    "delta",
];

#[derive(Debug, Clone)]
pub struct Config {
    values: BTreeMap<String, String>,
    base: PathBuf,
    pub sha256: String,
}

impl Config {
    pub fn load(path: &Path, known: &[&str]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base, known)
    }

    pub fn parse(text: &str, base: PathBuf, known: &[&str]) -> Result<Self, CliError> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::Config(format!("parse error: {e}")))?;
        let mut values = BTreeMap::new();
        for (section, props) in ini.iter() {
            for (k, v) in props.iter() {
                let key = match section {
                    Some(s) => format!("{s}.{k}"),
                    None => k.to_string(),
                };
                if !known.contains(&key.as_str()) {
                    return Err(CliError::Config(format!("unknown key `{key}`")));
                }
                if values.insert(key.clone(), v.trim().to_string()).is_some() {
                    return Err(CliError::Config(format!("duplicate key `{key}`")));
                }
            }
        }
        let sha256 = hex::encode(Sha256::digest(text.as_bytes()));
        Ok(Config { values, base, sha256 })
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| CliError::Config(format!("invalid value `{v}` for `{key}`")))
            })
            .transpose()
    }

    pub fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        self.get(key)?
            .ok_or_else(|| CliError::Config(format!("missing required key `{key}`")))
    }

    pub fn list<T: FromStr>(&self, key: &str, default: &[T]) -> Result<Vec<T>, CliError>
    where
        T: Clone,
    {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<T>()
                        .map_err(|_| CliError::Config(format!("invalid list entry `{s}` for `{key}`")))
                })
                .collect(),
        }
    }

    /// Resolves a path key relative to the config file; the file must exist.
    pub fn existing_path(&self, key: &str) -> Result<Option<PathBuf>, CliError> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        let p = self.base.join(v);
        if !p.exists() {
            return Err(CliError::Config(format!("`{key}` points to missing file {}", p.display())));
        }
        Ok(Some(p))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.base.join(self.raw("output").unwrap_or("out"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Config, CliError> {
        Config::parse(text, PathBuf::new(), KNOWN_KEYS)
    }

    #[test]
    fn dotted_and_sectioned_keys_agree() {
        let a = parse("kind = sample\nseed = 1\nsampler.dim = 3\n").unwrap();
        let b = parse("kind = sample\nseed = 1\n[sampler]\ndim = 3\n").unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(a.require::<usize>("sampler.dim").unwrap(), 3);
    }

    #[test]
    fn unknown_and_duplicate_keys_rejected() {
        assert!(parse("kind = sample\nsampler.colour = red\n").is_err());
        assert!(parse("seed = 1\nseed = 2\n").is_err());
    }

    #[test]
    fn lists_and_bad_values() {
        let c = parse("gnn.sizes = 20, 40,80\nseed = x\n").unwrap();
        assert_eq!(c.list::<usize>("gnn.sizes", &[]).unwrap(), vec![20, 40, 80]);
        assert!(c.require::<u64>("seed").is_err());
        assert!(c.require::<u64>("sgd.steps").is_err());
    }

    #[test]
    fn hash_tracks_text() {
        let a = parse("seed = 1\n").unwrap();
        let b = parse("seed = 2\n").unwrap();
        assert_ne!(a.sha256, b.sha256);
        assert_eq!(a.sha256.len(), 64);
    }
}
