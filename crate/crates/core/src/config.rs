//! Server configuration: TOML file plus `TOURGUIDE_*` environment overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::SimConfig;

pub const ENV_PREFIX: &str = "TOURGUIDE_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub bind: String,
    pub http_port: u16,
    pub bridge_port: u16,
    pub store_path: PathBuf,
    /// Directory holding the built console. Not served when absent.
    pub static_dir: Option<PathBuf>,
    pub cors_origins: Vec<String>,
    pub sim: SimConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            bind: "127.0.0.1".into(),
            http_port: 8080,
            bridge_port: 9090,
            store_path: PathBuf::from("./data/store.json"),
            static_dir: None,
            cors_origins: default_cors_origins(),
            sim: SimConfig::default(),
        }
    }
}

/// Same-origin requests need no CORS header, so the defaults only cover the
/// usual frontend dev servers.
pub fn default_cors_origins() -> Vec<String> {
    [3000, 5173, 8080]
        .iter()
        .flat_map(|port| {
            [
                format!("http://localhost:{port}"),
                format!("http://127.0.0.1:{port}"),
            ]
        })
        .collect()
}

impl Config {
    pub fn from_toml(text: &str, source: &str) -> Result<Config> {
        let cfg: Config = toml::from_str(text)
            .map_err(|e| Error::validation(format!("{source}: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Config::from_toml(&text, &path.display().to_string())
    }

    /// Loads `path` if given, otherwise the defaults, then applies
    /// overrides from the process environment.
    pub fn resolve(path: Option<&Path>) -> Result<Config> {
        let mut cfg = match path {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        cfg.apply_env(std::env::vars())?;
        Ok(cfg)
    }

    /// Applies `TOURGUIDE_*` variables. Unrelated variables are ignored;
    /// unknown ones under the prefix are an error so typos surface.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        for (key, value) in vars {
            let Some(name) = key.as_ref().strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let value = value.as_ref().trim();
            match name {
                "BIND" => self.bind = value.to_string(),
                "HTTP_PORT" => self.http_port = parse_env(name, value)?,
                "BRIDGE_PORT" => self.bridge_port = parse_env(name, value)?,
                "STORE" | "STORE_PATH" => self.store_path = PathBuf::from(value),
                "STATIC_DIR" => self.static_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
                "CORS_ORIGINS" => {
                    self.cors_origins = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(String::from)
                        .collect()
                }
                "SIM_V_MAX" => self.sim.v_max = parse_env(name, value)?,
                "SIM_OMEGA_MAX" => self.sim.omega_max = parse_env(name, value)?,
                "SIM_TICK" => self.sim.tick = parse_env(name, value)?,
                "SIM_ARRIVE_DIST" => self.sim.arrive_dist = parse_env(name, value)?,
                "SIM_ARRIVE_ANGLE" => self.sim.arrive_angle = parse_env(name, value)?,
                "SIM_SPEECH_RATE" => self.sim.speech_rate = parse_env(name, value)?,
                // Logging and similar knobs are read elsewhere.
                "LOG" => {}
                other => {
                    return Err(Error::validation(format!(
                        "unknown environment variable {ENV_PREFIX}{other}"
                    )))
                }
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bind.trim().is_empty() {
            return Err(Error::validation("bind address must not be empty"));
        }
        if self.http_port != 0 && self.http_port == self.bridge_port {
            return Err(Error::validation(format!(
                "http_port and bridge_port must differ (both {})",
                self.http_port
            )));
        }
        if self.store_path.as_os_str().is_empty() {
            return Err(Error::validation("store_path must not be empty"));
        }
        self.sim.validate()
    }
}

fn parse_env<T: std::str::FromStr>(name: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::validation(format!("{ENV_PREFIX}{name}: cannot parse {value:?}")))
}
