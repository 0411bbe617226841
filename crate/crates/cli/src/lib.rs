//! Command-line front end: configuration handling and the experiment
//! commands behind the `mrf-zoom` binary.

pub mod commands;
pub mod config;

/// Built-in configurations for `mrf-zoom run <name>`.
pub const EXPERIMENTS: [(&str, &str); 4] = [
    ("exp1", include_str!("../configs/exp1.toml")),
    ("exp2", include_str!("../configs/exp2.toml")),
    ("exp3", include_str!("../configs/exp3.toml")),
    ("exp4", include_str!("../configs/exp4.toml")),
];

pub fn experiment_config(name: &str) -> Option<&'static str> {
    EXPERIMENTS.iter().find(|(n, _)| *n == name).map(|(_, c)| *c)
}
