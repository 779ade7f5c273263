//! Run configuration: a TOML file where every key is optional, resolved
//! against the built-in defaults into one complete, hashable `RunConfig`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arena::TerrainKind;
use crate::harness::SpeedSource;
use crate::insect::BehaviorParams;
use crate::mission::ScenarioSpec;
use crate::navigation::{Algorithm, NavParams};
use crate::sensing::ImuNoise;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedChoice {
    #[default]
    Mocap,
    Imu,
}

impl SpeedChoice {
    pub fn source(self) -> SpeedSource {
        match self {
            SpeedChoice::Mocap => SpeedSource::Mocap,
            SpeedChoice::Imu => SpeedSource::Imu(ImuNoise::default()),
        }
    }
}

/// What a config file may contain.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub trials: Option<usize>,
    pub terrain: Option<TerrainKind>,
    pub algorithm: Option<Algorithm>,
    pub speeds: Option<SpeedChoice>,
    pub nav_file: Option<PathBuf>,
    pub behavior_file: Option<PathBuf>,
    pub scenario_file: Option<PathBuf>,
    pub model_file: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Overrides applied on top of `nav_file` (or the defaults).
    pub nav: Option<toml::Table>,
    pub behavior: Option<toml::Table>,
}

/// Fully resolved configuration. Serializes to the canonical text that is
/// hashed and embedded in every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// True when no seed was given and `seed` came from the config hash.
    pub seed_from_hash: bool,
    pub seeds: Vec<u64>,
    pub terrain: TerrainKind,
    pub algorithm: Algorithm,
    pub speeds: SpeedChoice,
    /// None means the shipped model.
    pub model_file: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub nav: NavParams,
    pub behavior: BehaviorParams,
    /// None means the reference scenario.
    pub scenario: Option<ScenarioSpec>,
}

pub const DEFAULT_TRIALS: usize = 50;

/// Turns a TOML error into the crate error, pulling out the offending key
/// for unknown fields.
fn toml_error(path: &str, e: &toml::de::Error) -> Error {
    let msg = e.message();
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        if let Some(end) = rest.find('`') {
            return Error::UnknownKey(rest[..end].to_string());
        }
    }
    Error::Config {
        path: path.into(),
        message: e.to_string(),
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

/// `base` with the keys of `overrides` replaced, then re-validated through
/// the strict schema of `T`.
fn overlay<T>(base: &T, overrides: Option<&toml::Table>, what: &str) -> Result<T>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let Some(o) = overrides else {
        return toml::Value::try_from(base)
            .expect("serializable")
            .try_into()
            .map_err(|e| toml_error(what, &e));
    };
    let mut v = toml::Value::try_from(base).expect("serializable");
    let table = v.as_table_mut().expect("struct serializes to a table");
    for (k, x) in o {
        let x = match (table.get(k), x) {
            // let `tick = 10` stand for 10.0
            (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(*i as f64),
            _ => x.clone(),
        };
        table.insert(k.clone(), x);
    }
    v.try_into().map_err(|e| toml_error(what, &e))
}

impl RawConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| toml_error("config", &e))
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut raw = Self::from_toml(&read(path)?).map_err(|e| match e {
            Error::Config { message, .. } => Error::Config {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut raw.nav_file,
            &mut raw.behavior_file,
            &mut raw.scenario_file,
            &mut raw.model_file,
            &mut raw.output_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(raw)
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let nav_base = match &self.nav_file {
            Some(p) => {
                let text = read(p)?;
                toml::from_str::<NavParams>(&text)
                    .map_err(|e| toml_error(&p.display().to_string(), &e))?
            }
            None => NavParams::default(),
        };
        let nav: NavParams = overlay(&nav_base, self.nav.as_ref(), "nav")?;
        nav.validate()?;
        let behavior_base = match &self.behavior_file {
            Some(p) => {
                let text = read(p)?;
                toml::from_str::<BehaviorParams>(&text)
                    .map_err(|e| toml_error(&p.display().to_string(), &e))?
            }
            None => BehaviorParams::default(),
        };
        let behavior: BehaviorParams = overlay(&behavior_base, self.behavior.as_ref(), "behavior")?;
        behavior.validate()?;
        let scenario = match &self.scenario_file {
            Some(p) => Some(ScenarioSpec::from_toml(&read(p)?)?),
            None => None,
        };
        if let Some(m) = &self.model_file {
            if !m.exists() {
                return Err(Error::MissingFile(m.clone()));
            }
        }
        if let Some(s) = &self.seeds {
            if s.is_empty() {
                return Err(Error::InvalidParameter {
                    key: "seeds".into(),
                    reason: "seed list is empty".into(),
                });
            }
        }
        if self.trials == Some(0) {
            return Err(Error::InvalidParameter {
                key: "trials".into(),
                reason: "need at least one trial".into(),
            });
        }
        let mut cfg = RunConfig {
            seed: self.seed.unwrap_or(0),
            seed_from_hash: self.seed.is_none(),
            seeds: Vec::new(),
            terrain: self.terrain.unwrap_or(TerrainKind::NoObstacle),
            algorithm: self.algorithm.unwrap_or(Algorithm::Predictive),
            speeds: self.speeds.unwrap_or_default(),
            model_file: self.model_file.clone(),
            output_dir: self.output_dir.clone(),
            nav,
            behavior,
            scenario,
        };
        if cfg.seed_from_hash {
            let h = Sha256::digest(cfg.to_toml().as_bytes());
            cfg.seed = u64::from_le_bytes(h[..8].try_into().expect("8 bytes"));
        }
        cfg.seeds = match &self.seeds {
            Some(s) => s.clone(),
            None => {
                let n = self.trials.unwrap_or(DEFAULT_TRIALS) as u64;
                (0..n).map(|i| cfg.seed.wrapping_add(i)).collect()
            }
        };
        Ok(cfg)
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| toml_error("embedded config", &e))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

/// Reads a config file, or resolves defaults when no file is given.
pub fn parse_config(path: Option<&Path>) -> Result<RawConfig> {
    match path {
        Some(p) => RawConfig::load(p),
        None => Ok(RawConfig::default()),
    }
}
