//! Run configuration: a flat TOML key-value file, overlaid by `key=value`
//! overrides and command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use mrfzoom::dictionary::{grid_from_ranges, Metric, ParameterGrid};
use mrfzoom::sequence::{build_schedule, Schedule};
use mrfzoom::zoom::ZoomConfig;

/// How entries are produced during a zoom run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Every entry simulated on demand.
    Simulate,
    /// A small df-only dictionary at the df-stage T1/T2, the rest simulated.
    DfDict,
    /// Lookups in the full stored dictionary.
    FullDict,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::DfDict => "df-dict",
            Mode::FullDict => "full-dict",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "simulate" => Mode::Simulate,
            "df-dict" => Mode::DfDict,
            "full-dict" => Mode::FullDict,
            _ => bail!("unknown mode `{s}` (expected simulate, df-dict or full-dict)"),
        })
    }
}

/// Exhaustive reference search used by `eval`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Brute {
    None,
    /// Scan of the stored full dictionary.
    Full,
    /// On-the-fly scan of a window around the zoom estimate.
    Restricted,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Schedule CSV; generated from `n` and `seed` when absent.
    pub schedule: Option<PathBuf>,
    pub n: usize,
    pub seed: u64,

    pub t1_range: [f64; 2],
    pub t2_range: [f64; 2],
    pub df_range: [f64; 2],
    pub steps: [f64; 3],
    pub metric: String,

    /// "schedule" scales the df stage to the schedule's mean TR; "fixed" keeps
    /// the fixed default constants.
    pub zoom_preset: String,
    pub omega: Option<f64>,
    pub df_coarse: Option<f64>,
    pub df_refine: Option<f64>,
    pub df_window: Option<f64>,
    pub translate_halfwidth: Option<f64>,
    pub recheck_translates: Option<bool>,
    pub df_t1: Option<f64>,
    pub df_t2: Option<f64>,
    pub initial_t1: Option<f64>,
    pub initial_t2: Option<f64>,
    pub epsilon: Option<f64>,
    pub final_metric: Option<String>,

    /// T1, T2, df of the reference fingerprint for `ccmap` and `noise`.
    pub target: [f64; 3],
    /// Number of random on-lattice targets for `eval`.
    pub targets: usize,
    pub modes: Vec<String>,
    pub brute: String,
    /// Half-widths (ms, ms, Hz) of the restricted brute-force window.
    pub brute_window: [f64; 3],
    /// Existing full dictionary; otherwise one is generated into `out`.
    pub dict: Option<PathBuf>,

    /// Target auto-CC levels for `noise`.
    pub auto_cc: Vec<f64>,
    /// Levels at which `noise` also runs the restricted brute force.
    pub brute_auto_cc: Vec<f64>,
    pub smoothing: Vec<usize>,

    /// Slice CSV; the synthetic slice for `slice_seed` when absent.
    pub slice: Option<PathBuf>,
    pub slice_seed: u64,
    pub use_prior: bool,

    pub out: PathBuf,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schedule: None,
            n: 500,
            seed: 1,
            t1_range: [500.0, 2000.0],
            t2_range: [200.0, 800.0],
            df_range: [-30.0, 90.0],
            steps: [10.0, 10.0, 1.0],
            metric: "cc".into(),
            zoom_preset: "schedule".into(),
            omega: None,
            df_coarse: None,
            df_refine: None,
            df_window: None,
            translate_halfwidth: None,
            recheck_translates: None,
            df_t1: None,
            df_t2: None,
            initial_t1: None,
            initial_t2: None,
            epsilon: None,
            final_metric: None,
            target: [1400.0, 500.0, 100.0],
            targets: 25,
            modes: vec!["simulate".into()],
            brute: "full".into(),
            brute_window: [550.0, 300.0, 50.0],
            dict: None,
            auto_cc: vec![0.05, 0.14, 0.23, 0.32, 0.4, 0.5, 0.59, 0.68, 0.77, 0.86, 0.95],
            brute_auto_cc: vec![0.4],
            smoothing: vec![3, 5],
            slice: None,
            slice_seed: 1,
            use_prior: true,
            out: PathBuf::from("out"),
            workers: 1,
        }
    }
}

/// Parses one `key=value` override. Values that are not valid TOML are taken
/// as bare strings, so `--set metric=euclidean` works without quotes.
fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (k, v) = s
        .split_once('=')
        .with_context(|| format!("override `{s}` is not of the form key=value"))?;
    let (k, v) = (k.trim(), v.trim());
    let value = toml::from_str::<toml::Table>(&format!("v = {v}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

impl RunConfig {
    /// Layers, later winning: built-in defaults, `base` text, the file at
    /// `file`, then `overrides`.
    pub fn from_sources(base: Option<&str>, file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = toml::Table::new();
        if let Some(text) = base {
            table.extend(toml::from_str::<toml::Table>(text).context("built-in config")?);
        }
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            let t: toml::Table =
                toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
            table.extend(t);
        }
        for o in overrides {
            let (k, v) = parse_override(o)?;
            table.insert(k, v);
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .context("invalid configuration")?;
        Ok(cfg)
    }

    pub fn grid(&self) -> Result<ParameterGrid> {
        let r = [
            (self.t1_range[0], self.t1_range[1]),
            (self.t2_range[0], self.t2_range[1]),
            (self.df_range[0], self.df_range[1]),
        ];
        Ok(grid_from_ranges(r, self.steps)?)
    }

    pub fn metric(&self) -> Result<Metric> {
        self.metric.parse().map_err(|e| anyhow::anyhow!("{e}"))
    }

    pub fn modes(&self) -> Result<Vec<Mode>> {
        self.modes.iter().map(|m| Mode::parse(m)).collect()
    }

    pub fn brute(&self) -> Result<Brute> {
        Ok(match self.brute.as_str() {
            "none" => Brute::None,
            "full" => Brute::Full,
            "restricted" => Brute::Restricted,
            b => bail!("unknown brute force `{b}` (expected none, full or restricted)"),
        })
    }

    pub fn schedule(&self) -> Result<Schedule> {
        match &self.schedule {
            Some(p) => Schedule::load(p).with_context(|| format!("loading schedule {}", p.display())),
            None => Ok(build_schedule(self.n, self.seed)?),
        }
    }

    pub fn zoom(&self, sched: &Schedule) -> Result<ZoomConfig> {
        let mut z = match self.zoom_preset.as_str() {
            "schedule" => ZoomConfig::for_schedule(sched),
            "fixed" => ZoomConfig::default(),
            p => bail!("unknown zoom preset `{p}` (expected schedule or fixed)"),
        };
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut z.omega, self.omega);
        set(&mut z.df_coarse, self.df_coarse);
        set(&mut z.df_refine, self.df_refine);
        set(&mut z.df_window, self.df_window);
        set(&mut z.translate_halfwidth, self.translate_halfwidth);
        set(&mut z.df_t1, self.df_t1);
        set(&mut z.df_t2, self.df_t2);
        set(&mut z.initial_t1, self.initial_t1);
        set(&mut z.initial_t2, self.initial_t2);
        set(&mut z.epsilon, self.epsilon);
        if let Some(r) = self.recheck_translates {
            z.recheck_translates = r;
        }
        z.metric = self.metric()?;
        if let Some(m) = &self.final_metric {
            z.final_metric = Some(m.parse().map_err(|e| anyhow::anyhow!("{e}"))?);
        }
        z.validate()?;
        Ok(z)
    }

    /// Checks everything that can be checked before a command starts.
    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.metric()?;
        self.modes()?;
        self.brute()?;
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        if self.n == 0 {
            bail!("schedule length must be positive");
        }
        if let Some(bad) = self.auto_cc.iter().find(|c| !(**c > 0.0 && **c < 1.0)) {
            bail!("auto-CC levels must lie in (0, 1), got {bad}");
        }
        if let Some(bad) = self.smoothing.iter().find(|k| **k != 3 && **k != 5) {
            bail!("smoothing windows must be 3 or 5, got {bad}");
        }
        for (what, p) in [
            ("schedule", &self.schedule),
            ("dictionary", &self.dict),
            ("slice", &self.slice),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    bail!("{what} file {} does not exist", p.display());
                }
            }
        }
        Ok(())
    }

    /// Creates the output directory and checks that it is writable.
    pub fn prepare_out(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out)
            .with_context(|| format!("creating output directory {}", self.out.display()))?;
        let probe = self.out.join(".write-test");
        std::fs::write(&probe, b"")
            .with_context(|| format!("output directory {} is not writable", self.out.display()))?;
        std::fs::remove_file(&probe)?;
        Ok(&self.out)
    }
}
