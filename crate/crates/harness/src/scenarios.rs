//! Scenario files shipped with the binary.

use std::path::Path;

use crate::config::{load_config, ExperimentConfig};
use crate::HarnessError;

pub const BUILTIN: [(&str, &str); 5] = [
    ("prop1", include_str!("../scenarios/prop1.toml")),
    ("prop2", include_str!("../scenarios/prop2.toml")),
    (
        "unconditional-sanity",
        include_str!("../scenarios/unconditional-sanity.toml"),
    ),
    ("ablation", include_str!("../scenarios/ablation.toml")),
    ("snr-sweep", include_str!("../scenarios/snr-sweep.toml")),
];

pub fn builtin_text(name: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn builtin(name: &str) -> Option<Result<ExperimentConfig, HarnessError>> {
    builtin_text(name).map(|t| ExperimentConfig::from_toml(t, Path::new(&format!("{name}.toml"))))
}

/// A config file path, or a built-in scenario name when no such file exists.
pub fn resolve(arg: &str) -> Result<ExperimentConfig, HarnessError> {
    let path = Path::new(arg);
    if path.exists() {
        return load_config(path);
    }
    builtin(arg).unwrap_or_else(|| {
        let names: Vec<&str> = BUILTIN.iter().map(|(n, _)| *n).collect();
        Err(HarnessError::io(
            path,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!(
                    "no such file and no built-in scenario (built-ins: {})",
                    names.join(", ")
                ),
            ),
        ))
    })
}
