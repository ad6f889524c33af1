//! Built-in experiment configurations, sized for single-core desk runs.

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

const PRESETS: [(&str, &str); 6] = [
    (
        "gridchase-dqn-standard",
        include_str!("../../presets/gridchase-dqn-standard.toml"),
    ),
    (
        "gridchase-dqn-radial",
        include_str!("../../presets/gridchase-dqn-radial.toml"),
    ),
    (
        "gridchase-a2c-radial",
        include_str!("../../presets/gridchase-a2c-radial.toml"),
    ),
    (
        "gridchase-ppo-radial",
        include_str!("../../presets/gridchase-ppo-radial.toml"),
    ),
    (
        "pointmass-ppo-standard",
        include_str!("../../presets/pointmass-ppo-standard.toml"),
    ),
    (
        "pointmass-ppo-radial",
        include_str!("../../presets/pointmass-ppo-radial.toml"),
    ),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn get(name: &str) -> Result<ExperimentConfig> {
    let text = source(name).ok_or_else(|| {
        Error::config(
            "preset",
            format!(
                "unknown preset `{name}` (known: {})",
                names().collect::<Vec<_>>().join(", ")
            ),
        )
    })?;
    ExperimentConfig::from_toml_str(text)
}
