use std::path::Path;

use anyhow::Context;
use moodsense::pipeline::PipelineConfig;
use moodsense::sampling::PollConfig;
use moodsense::simulator::CohortConfig;
use serde::{Deserialize, Serialize};

/// Contents of the `--config` TOML file. Every table and key is optional.
///
/// ```toml
/// [analysis]
/// min_bpm = 30
/// [analysis.forest]
/// replicates = 20
///
/// [simulate]
/// n_participants = 17
///
/// [polls]
/// min_gap_minutes = 90
///
/// [server]
/// bind = "127.0.0.1:8080"
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub analysis: PipelineConfig,
    pub simulate: CohortConfig,
    pub polls: PollConfig,
    pub server: ServerConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub bind: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: "127.0.0.1:8080".into(),
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Config> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: Config = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        config.analysis.validate()?;
        config.polls.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c: Config = toml::from_str(
            "[analysis.forest]\nreplicates = 7\n[simulate]\nn_participants = 3\n[polls]\nmin_gap_minutes = 60\n",
        )
        .unwrap();
        assert_eq!(c.analysis.forest.replicates, 7);
        assert_eq!(c.analysis.forest.forest.n_trees, 100);
        assert_eq!(c.simulate.n_participants, 3);
        assert_eq!(c.simulate.days, CohortConfig::default().days);
        assert_eq!(c.polls.min_gap_minutes, 60);
        assert_eq!(c.server, ServerConfig::default());
    }

    #[test]
    fn unknown_table_is_an_error() {
        assert!(toml::from_str::<Config>("[analyis]\nmin_bpm = 3\n").is_err());
    }

    #[test]
    fn default_config_round_trips_through_toml() {
        let text = toml::to_string(&Config::default()).unwrap();
        assert_eq!(toml::from_str::<Config>(&text).unwrap(), Config::default());
    }
}
