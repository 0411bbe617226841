use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use mrfzoom_cli::commands::{self, mean_sd, ms, EvalReport, Method};
use mrfzoom_cli::config::RunConfig;
use mrfzoom_cli::experiment_config;

#[derive(Parser)]
#[command(name = "mrf-zoom", version, about = "MR fingerprinting quantification with multi-resolution zoom search")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML key-value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override one configuration key, e.g. `--set omega=70`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the acquisition schedule as CSV.
    GenSchedule(Common),
    /// Generate the full dictionary for the configured grid.
    GenDict(Common),
    /// CC of one fingerprint against every lattice point.
    Ccmap(Common),
    /// Zoom against brute force on random on-lattice targets.
    Eval(Common),
    /// Quantify a slice with and without neighbor priors.
    Slice(Common),
    /// Quantification error against noise level.
    Noise(Common),
    /// Write the synthetic slice definition.
    GenSlice(Common),
    /// Run an experiment from its built-in configuration (exp1..exp4).
    Run {
        experiment: String,
        #[command(flatten)]
        common: Common,
    },
}

fn load(base: Option<&str>, c: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_sources(base, c.config.as_deref(), &c.overrides)?;
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn print_eval(r: &EvalReport) {
    println!("grid entries: {}", r.grid.total());
    if let Some(b) = &r.brute {
        let (m, s) = mean_sd(&b.times.iter().map(|t| ms(*t)).collect::<Vec<_>>());
        println!(
            "brute: {m:.1} ± {s:.1} ms per target (dictionary generation {:.1} s, open {:.1} ms)",
            b.generation.as_secs_f64(),
            ms(b.load)
        );
    }
    for run in &r.modes {
        let (me, se) = mean_sd(&EvalReport::evaluations(run));
        let (mt, st) = mean_sd(&run.results.iter().map(|q| ms(q.elapsed)).collect::<Vec<_>>());
        let [a, b, c] = r.mismatches(run);
        let speed = r.speedup(run).map_or(String::new(), |v| format!(", {v:.0}x faster"));
        println!(
            "{}: {me:.0} ± {se:.0} evaluations, {mt:.2} ± {st:.2} ms{speed}; mismatches T1/T2/df {a}/{b}/{c}",
            run.mode.name()
        );
    }
}

fn execute(cmd: &str, cfg: &RunConfig) -> Result<()> {
    match cmd {
        "gen-schedule" => println!("wrote {}", commands::gen_schedule(cfg)?.display()),
        "gen-slice" => println!("wrote {}", commands::gen_slice(cfg)?.display()),
        "gen-dict" => {
            let r = commands::gen_dict(cfg)?;
            println!(
                "wrote {} ({} entries, {} bytes) in {:.1} s",
                r.path.display(),
                r.entries,
                r.bytes,
                r.elapsed.as_secs_f64()
            );
        }
        "ccmap" => {
            let r = commands::ccmap(cfg)?;
            let a = r.argmax;
            println!(
                "{} entries; peak CC {} at {}/{}/{} in {:.1} s",
                r.rows,
                r.peak,
                a.t1_ms,
                a.t2_ms,
                a.df_hz,
                r.elapsed.as_secs_f64()
            );
        }
        "eval" => print_eval(&commands::eval(cfg)?),
        "slice" => {
            let r = commands::slice(cfg)?;
            let mut rows = vec![("plain", &r.plain, &r.plain_errors)];
            if let Some((p, e)) = &r.prior {
                rows.push(("prior", p, e));
            }
            for (name, res, e) in rows {
                println!(
                    "{name}: {} voxels, {} evaluations, {:.1} s; wrong T1/T2/df {}/{}/{}",
                    e.t1.voxels,
                    res.total_evaluations,
                    res.elapsed.as_secs_f64(),
                    e.t1.wrong,
                    e.t2.wrong,
                    e.df.wrong
                );
            }
            if let Some(same) = r.identical() {
                println!("prior maps identical: {same}");
            }
        }
        "noise" => {
            let r = commands::noise(cfg)?;
            for row in r.rows.iter().filter(|row| row.method == Method::Zoom) {
                match (&row.error, row.errors(&r.truth)) {
                    (Some(e), _) => println!("level {} (cc {}): {e}", row.level, row.target_cc),
                    (None, Some([a, b, c])) => println!(
                        "level {} (cc {}, k={}): errors {a}/{b}/{c}",
                        row.level,
                        row.target_cc,
                        row.smoothing.unwrap_or(0)
                    ),
                    _ => {}
                }
            }
            if r.failures() > 0 {
                bail!("{} noise level(s) failed", r.failures());
            }
        }
        _ => unreachable!("unknown command {cmd}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let (name, base, common) = match &cli.cmd {
        Cmd::GenSchedule(c) => ("gen-schedule", None, c),
        Cmd::GenDict(c) => ("gen-dict", None, c),
        Cmd::Ccmap(c) => ("ccmap", None, c),
        Cmd::Eval(c) => ("eval", None, c),
        Cmd::Slice(c) => ("slice", None, c),
        Cmd::Noise(c) => ("noise", None, c),
        Cmd::GenSlice(c) => ("gen-slice", None, c),
        Cmd::Run { experiment, common } => {
            let Some(base) = experiment_config(experiment) else {
                bail!("unknown experiment `{experiment}` (expected exp1, exp2, exp3 or exp4)");
            };
            let cmd = match experiment.as_str() {
                "exp1" => "ccmap",
                "exp2" => "eval",
                "exp3" => "slice",
                _ => "noise",
            };
            (cmd, Some(base), common)
        }
    };
    let cfg = load(base, common)?;
    execute(name, &cfg)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
