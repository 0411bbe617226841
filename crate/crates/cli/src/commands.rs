//! Command implementations. Each writes its CSV artifacts into the output
//! directory and returns a report; reports keep wall times apart from the
//! deterministic fields so reruns can be compared.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};

use mrfzoom::bloch::Simulator;
use mrfzoom::dictionary::{
    brute_force_generated, brute_force_search, cc_map, generate_to_file, Dictionary, GenOptions,
    Match, ParameterGrid,
};
use mrfzoom::fingerprint::{add_noise, calibrate_noise, cc, Fingerprint, TissueParams};
use mrfzoom::phantom::{map_to_csv, slice_errors, synthetic_slice, SliceDefinition, SliceErrors};
use mrfzoom::rng::{stream, SplitMix64};
use mrfzoom::sequence::Schedule;
use mrfzoom::zoom::{
    df_dictionary, quantify_slice, results_row, EntrySource, QuantResult, Quantifier, SliceResult,
    ZoomConfig, RESULTS_HEADER,
};

use crate::config::{Brute, Mode, RunConfig};

pub const DICT_FILE: &str = "dictionary.mrfd";
pub const SCHEDULE_FILE: &str = "schedule.csv";

pub fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Mean and sample standard deviation; zero spread for fewer than two values.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Validated config plus the schedule (also copied into the output
/// directory) and the search grid.
struct Setup {
    out: PathBuf,
    sched: Schedule,
    grid: ParameterGrid,
    zoom: ZoomConfig,
}

fn setup(cfg: &RunConfig) -> Result<Setup> {
    cfg.validate()?;
    let out = cfg.prepare_out()?.to_path_buf();
    let sched = cfg.schedule()?;
    sched.save(&out.join(SCHEDULE_FILE))?;
    let grid = cfg.grid()?;
    let zoom = cfg.zoom(&sched)?;
    Ok(Setup {
        out,
        sched,
        grid,
        zoom,
    })
}

fn gen_options(cfg: &RunConfig, zoom: &ZoomConfig, smoothing: Option<usize>) -> GenOptions {
    GenOptions {
        workers: cfg.workers,
        smoothing,
        model: zoom.model,
    }
}

fn target_params(cfg: &RunConfig) -> Result<TissueParams> {
    let [t1, t2, df] = cfg.target;
    let p = TissueParams::new(t1, t2, df);
    p.validate()?;
    Ok(p)
}

pub fn gen_schedule(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let out = cfg.prepare_out()?;
    let path = out.join(SCHEDULE_FILE);
    cfg.schedule()?.save(&path)?;
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct GenDictReport {
    pub path: PathBuf,
    pub entries: usize,
    pub bytes: u64,
    pub elapsed: Duration,
}

pub fn gen_dict(cfg: &RunConfig) -> Result<GenDictReport> {
    let s = setup(cfg)?;
    let path = s.out.join(DICT_FILE);
    let start = Instant::now();
    generate_to_file(&path, &s.grid, &s.sched, &gen_options(cfg, &s.zoom, None), |_, _| {})?;
    let elapsed = start.elapsed();
    let bytes = std::fs::metadata(&path)?.len();
    let mut w = create(&s.out, "gen_dict.csv")?;
    writeln!(w, "entries,bytes,gen_wall_ms")?;
    writeln!(w, "{},{bytes},{:.3}", s.grid.total(), ms(elapsed))?;
    w.flush()?;
    Ok(GenDictReport {
        path,
        entries: s.grid.total(),
        bytes,
        elapsed,
    })
}

#[derive(Debug, Clone)]
pub struct CcMapReport {
    pub grid: ParameterGrid,
    pub target: TissueParams,
    pub argmax: TissueParams,
    pub peak: f32,
    pub rows: usize,
    pub elapsed: Duration,
}

/// CC of the target fingerprint against every lattice point. Writes the binary
/// map, the long-form CC(T1, T2, df) table and the CC(T1, T2) plane at the
/// lattice df nearest the target.
pub fn ccmap(cfg: &RunConfig) -> Result<CcMapReport> {
    let s = setup(cfg)?;
    let target = target_params(cfg)?;
    let fp = Simulator::with_model(&s.sched, s.zoom.model)?.simulate(&target)?;
    let start = Instant::now();
    let map = cc_map(&fp, &s.grid, &s.sched, &gen_options(cfg, &s.zoom, None), |_, _| {})?;
    let elapsed = start.elapsed();
    map.save(&s.out.join("ccmap.mrfc"))?;

    let g = &s.grid;
    let mut w = create(&s.out, "ccmap_df_curves.csv")?;
    writeln!(w, "t1_ms,t2_ms,df_hz,cc")?;
    for (flat, v) in map.scores.iter().enumerate() {
        let p = g.params_at(g.unflatten(flat));
        writeln!(w, "{},{},{},{v}", p.t1_ms, p.t2_ms, p.df_hz)?;
    }
    w.flush()?;

    let i_df = g.df.snap(target.df_hz);
    let mut w = create(&s.out, "ccmap_t1t2.csv")?;
    writeln!(w, "t1_ms,t2_ms,df_hz,cc")?;
    for i in 0..g.t1.count {
        for j in 0..g.t2.count {
            let p = g.params_at([i, j, i_df]);
            writeln!(w, "{},{},{},{}", p.t1_ms, p.t2_ms, p.df_hz, map.get([i, j, i_df]))?;
        }
    }
    w.flush()?;

    let best = map.argmax();
    let argmax = g.params_at(best);
    let peak = map.get(best);
    let mut w = create(&s.out, "ccmap_summary.csv")?;
    writeln!(w, "target_t1_ms,target_t2_ms,target_df_hz,argmax_t1_ms,argmax_t2_ms,argmax_df_hz,peak_cc,entries,map_wall_ms")?;
    writeln!(
        w,
        "{},{},{},{},{},{},{peak},{},{:.3}",
        target.t1_ms,
        target.t2_ms,
        target.df_hz,
        argmax.t1_ms,
        argmax.t2_ms,
        argmax.df_hz,
        g.total(),
        ms(elapsed)
    )?;
    w.flush()?;
    Ok(CcMapReport {
        grid: *g,
        target,
        argmax,
        peak,
        rows: g.total(),
        elapsed,
    })
}

/// Brute-force reference results, one per target.
#[derive(Debug, Clone)]
pub struct BruteRun {
    pub kind: Brute,
    pub matches: Vec<Match>,
    pub times: Vec<Duration>,
    /// Dictionary generation, zero when an existing file was used.
    pub generation: Duration,
    pub load: Duration,
}

#[derive(Debug, Clone)]
pub struct ModeRun {
    pub mode: Mode,
    pub results: Vec<QuantResult>,
    /// Building the df dictionary, or zero.
    pub setup: Duration,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub grid: ParameterGrid,
    pub targets: Vec<TissueParams>,
    pub brute: Option<BruteRun>,
    pub modes: Vec<ModeRun>,
}

fn times_ms(ts: impl IntoIterator<Item = Duration>) -> Vec<f64> {
    ts.into_iter().map(ms).collect()
}

impl EvalReport {
    /// Brute-force answer for target `i`, or the generating parameters when no
    /// brute force ran.
    pub fn reference(&self, i: usize) -> TissueParams {
        self.brute
            .as_ref()
            .map_or(self.targets[i], |b| b.matches[i].params)
    }

    /// Targets whose T1, T2, df differ from the reference.
    pub fn mismatches(&self, run: &ModeRun) -> [usize; 3] {
        let mut n = [0; 3];
        for (i, r) in run.results.iter().enumerate() {
            let want = self.reference(i);
            n[0] += usize::from(r.params.t1_ms != want.t1_ms);
            n[1] += usize::from(r.params.t2_ms != want.t2_ms);
            n[2] += usize::from(r.params.df_hz != want.df_hz);
        }
        n
    }

    /// Largest T1 deviation from the reference in lattice steps.
    pub fn max_t1_steps(&self, run: &ModeRun) -> f64 {
        run.results
            .iter()
            .enumerate()
            .map(|(i, r)| (r.params.t1_ms - self.reference(i).t1_ms).abs() / self.grid.t1.step)
            .fold(0.0, f64::max)
    }

    pub fn evaluations(run: &ModeRun) -> Vec<f64> {
        run.results.iter().map(|r| r.evaluations as f64).collect()
    }

    pub fn mean_ms(run: &ModeRun) -> f64 {
        mean_sd(&times_ms(run.results.iter().map(|r| r.elapsed))).0
    }

    /// Mean brute-force time over mean zoom time.
    pub fn speedup(&self, run: &ModeRun) -> Option<f64> {
        let b = self.brute.as_ref()?;
        Some(mean_sd(&times_ms(b.times.iter().copied())).0 / Self::mean_ms(run))
    }
}

fn random_targets(grid: &ParameterGrid, count: usize, seed: u64) -> Vec<TissueParams> {
    let mut rng = SplitMix64::stream(seed, stream::TARGETS);
    (0..count)
        .map(|_| {
            let idx = [
                rng.below(grid.t1.count as u64) as usize,
                rng.below(grid.t2.count as u64) as usize,
                rng.below(grid.df.count as u64) as usize,
            ];
            grid.params_at(idx)
        })
        .collect()
}

/// Lattice points of `grid` within `half` of `p` on every axis.
fn window(grid: &ParameterGrid, p: &TissueParams, half: [f64; 3]) -> Result<ParameterGrid> {
    let r = |a: &mrfzoom::dictionary::AxisSpec, v: f64, h: f64| {
        a.restrict(v - h, v + h)
            .with_context(|| format!("brute-force window around {v} misses the grid"))
    };
    Ok(ParameterGrid {
        t1: r(&grid.t1, p.t1_ms, half[0])?,
        t2: r(&grid.t2, p.t2_ms, half[1])?,
        df: r(&grid.df, p.df_hz, half[2])?,
    })
}

/// Opens the configured dictionary, or generates one into the output
/// directory. Returns it with its generation and load times.
fn full_dictionary(cfg: &RunConfig, s: &Setup) -> Result<(Dictionary, Duration, Duration)> {
    let (path, generation) = match &cfg.dict {
        Some(p) => (p.clone(), Duration::ZERO),
        None => {
            let p = s.out.join(DICT_FILE);
            let start = Instant::now();
            generate_to_file(&p, &s.grid, &s.sched, &gen_options(cfg, &s.zoom, None), |_, _| {})?;
            (p, start.elapsed())
        }
    };
    let start = Instant::now();
    let dict = Dictionary::open_mapped(&path, &s.sched)
        .with_context(|| format!("opening dictionary {}", path.display()))?;
    let load = start.elapsed();
    if dict.grid() != &s.grid {
        bail!("dictionary {} was built for a different grid", path.display());
    }
    Ok((dict, generation, load))
}

/// Random on-lattice targets through every configured zoom mode and the
/// brute-force reference.
pub fn eval(cfg: &RunConfig) -> Result<EvalReport> {
    let s = setup(cfg)?;
    let modes = cfg.modes()?;
    let brute_kind = cfg.brute()?;
    if brute_kind == Brute::Restricted && modes.is_empty() {
        bail!("restricted brute force needs at least one zoom mode to center its window");
    }
    let targets = random_targets(&s.grid, cfg.targets, cfg.seed);
    let sim = Simulator::with_model(&s.sched, s.zoom.model)?;
    let fps = targets
        .iter()
        .map(|p| sim.simulate(p))
        .collect::<mrfzoom::Result<Vec<Fingerprint>>>()?;

    let need_dict = brute_kind == Brute::Full || modes.contains(&Mode::FullDict);
    let full = if need_dict { Some(full_dictionary(cfg, &s)?) } else { None };

    let mut runs = Vec::new();
    for &mode in &modes {
        let start = Instant::now();
        let df_dict = match mode {
            Mode::DfDict => Some(df_dictionary(&s.grid, &s.zoom, &s.sched)?),
            _ => None,
        };
        let setup_time = start.elapsed();
        let source = match mode {
            Mode::Simulate => EntrySource::Simulate,
            Mode::DfDict => EntrySource::DfDict(df_dict.as_ref().expect("built above")),
            Mode::FullDict => EntrySource::FullDict(&full.as_ref().expect("opened above").0),
        };
        let q = Quantifier::new(&s.sched, s.zoom.clone(), source)?;
        let results = fps
            .iter()
            .map(|fp| q.quantify(fp, &s.grid))
            .collect::<mrfzoom::Result<Vec<_>>>()?;
        runs.push(ModeRun {
            mode,
            results,
            setup: setup_time,
        });
    }

    let metric = s.zoom.metric;
    let brute = match brute_kind {
        Brute::None => None,
        Brute::Full => {
            let (dict, generation, load) = full.as_ref().expect("opened above");
            let mut matches = Vec::new();
            let mut times = Vec::new();
            for fp in &fps {
                let start = Instant::now();
                matches.push(brute_force_search(fp, dict, metric)?);
                times.push(start.elapsed());
            }
            Some(BruteRun {
                kind: brute_kind,
                matches,
                times,
                generation: *generation,
                load: *load,
            })
        }
        Brute::Restricted => {
            let mut matches = Vec::new();
            let mut times = Vec::new();
            let opts = gen_options(cfg, &s.zoom, None);
            for (fp, r) in fps.iter().zip(&runs[0].results) {
                let g = window(&s.grid, &r.params, cfg.brute_window)?;
                let start = Instant::now();
                matches.push(brute_force_generated(fp, &g, &s.sched, metric, &opts)?);
                times.push(start.elapsed());
            }
            Some(BruteRun {
                kind: brute_kind,
                matches,
                times,
                generation: Duration::ZERO,
                load: Duration::ZERO,
            })
        }
    };

    let report = EvalReport {
        grid: s.grid,
        targets,
        brute,
        modes: runs,
    };
    write_eval(&s.out, &report)?;
    Ok(report)
}

fn write_eval(out: &Path, r: &EvalReport) -> Result<()> {
    let mut w = create(out, "eval_targets.csv")?;
    writeln!(
        w,
        "target,method,true_t1_ms,true_t2_ms,true_df_hz,t1_ms,t2_ms,df_hz,score,evals,wall_ms"
    )?;
    for (i, t) in r.targets.iter().enumerate() {
        let truth = format!("{},{},{}", t.t1_ms, t.t2_ms, t.df_hz);
        if let Some(b) = &r.brute {
            let m = &b.matches[i];
            writeln!(
                w,
                "{i},brute,{truth},{},{},{},{},{},{:.3}",
                m.params.t1_ms,
                m.params.t2_ms,
                m.params.df_hz,
                m.score,
                m.evaluations,
                ms(b.times[i])
            )?;
        }
        for run in &r.modes {
            let q = &run.results[i];
            writeln!(
                w,
                "{i},{},{truth},{},{},{},{},{},{:.3}",
                run.mode.name(),
                q.params.t1_ms,
                q.params.t2_ms,
                q.params.df_hz,
                q.score,
                q.evaluations,
                ms(q.elapsed)
            )?;
        }
    }
    w.flush()?;

    let mut w = create(out, "eval_summary.csv")?;
    writeln!(
        w,
        "method,targets,mean_evals,sd_evals,t1_mismatch,t2_mismatch,df_mismatch,max_t1_steps,mean_wall_ms,sd_wall_ms,speedup,setup_wall_ms,load_wall_ms"
    )?;
    if let Some(b) = &r.brute {
        let evals: Vec<f64> = b.matches.iter().map(|m| m.evaluations as f64).collect();
        let (me, se) = mean_sd(&evals);
        let (mt, st) = mean_sd(&times_ms(b.times.iter().copied()));
        let name = match b.kind {
            Brute::Restricted => "brute-restricted",
            _ => "brute",
        };
        writeln!(
            w,
            "{name},{},{me},{se},0,0,0,0,{mt:.3},{st:.3},1,{:.3},{:.3}",
            r.targets.len(),
            ms(b.generation),
            ms(b.load)
        )?;
    }
    for run in &r.modes {
        let (me, se) = mean_sd(&EvalReport::evaluations(run));
        let (mt, st) = mean_sd(&times_ms(run.results.iter().map(|q| q.elapsed)));
        let [m1, m2, m3] = r.mismatches(run);
        let speedup = r.speedup(run).map_or("".to_string(), |v| format!("{v:.1}"));
        writeln!(
            w,
            "{},{},{me},{se},{m1},{m2},{m3},{},{mt:.3},{st:.3},{speedup},{:.3},0",
            run.mode.name(),
            r.targets.len(),
            r.max_t1_steps(run),
            ms(run.setup)
        )?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SliceReport {
    pub truth: SliceDefinition,
    pub plain: SliceResult,
    pub plain_errors: SliceErrors,
    pub prior: Option<(SliceResult, SliceErrors)>,
}

impl SliceReport {
    /// Whether prior mode reproduced the plain maps voxel for voxel.
    pub fn identical(&self) -> Option<bool> {
        let (prior, _) = self.prior.as_ref()?;
        Some(
            self.plain
                .voxels
                .iter()
                .zip(&prior.voxels)
                .all(|(a, b)| a.as_ref().map(|r| r.params) == b.as_ref().map(|r| r.params)),
        )
    }
}

/// Loads the configured slice or builds the synthetic one.
pub fn slice_definition(cfg: &RunConfig) -> Result<SliceDefinition> {
    match &cfg.slice {
        Some(p) => SliceDefinition::load(p).with_context(|| format!("loading slice {}", p.display())),
        None => Ok(synthetic_slice(cfg.slice_seed)),
    }
}

/// Quantifies every masked voxel of a slice, without and (optionally) with
/// neighbor priors, and writes maps and difference maps.
pub fn slice(cfg: &RunConfig) -> Result<SliceReport> {
    let s = setup(cfg)?;
    let truth = slice_definition(cfg)?;
    truth.save(&s.out.join("slice_truth.csv"))?;
    let input = truth.fingerprints(&s.sched)?;
    let mode = cfg.modes()?.first().copied().unwrap_or(Mode::Simulate);
    let df_dict = match mode {
        Mode::Simulate => None,
        Mode::DfDict => Some(df_dictionary(&s.grid, &s.zoom, &s.sched)?),
        Mode::FullDict => bail!("the slice command supports the simulate and df-dict modes only"),
    };
    let source = df_dict.as_ref().map_or(EntrySource::Simulate, EntrySource::DfDict);
    let q = Quantifier::new(&s.sched, s.zoom.clone(), source)?;

    let plain = quantify_slice(&q, &input, &s.grid, false, cfg.workers)?;
    let plain_errors = slice_errors(&truth, &plain)?;
    let prior = if cfg.use_prior {
        let r = quantify_slice(&q, &input, &s.grid, true, 1)?;
        let e = slice_errors(&truth, &r)?;
        Some((r, e))
    } else {
        None
    };
    let report = SliceReport {
        truth,
        plain,
        plain_errors,
        prior,
    };
    write_slice(&s.out, &report)?;
    Ok(report)
}

fn write_slice(out: &Path, r: &SliceReport) -> Result<()> {
    let w = r.plain.width;
    let get: [(&str, fn(&TissueParams) -> f64); 3] =
        [("t1", |p| p.t1_ms), ("t2", |p| p.t2_ms), ("df", |p| p.df_hz)];
    let mut runs = vec![("plain", &r.plain, &r.plain_errors)];
    if let Some((p, e)) = &r.prior {
        runs.push(("prior", p, e));
    }
    for (name, res, errs) in &runs {
        for (k, (param, f)) in get.iter().enumerate() {
            std::fs::write(out.join(format!("map_{param}_{name}.csv")), map_to_csv(&res.map(f), w))?;
            std::fs::write(out.join(format!("diff_{param}_{name}.csv")), map_to_csv(&errs.maps[k], w))?;
        }
        let mut v = create(out, &format!("slice_voxels_{name}.csv"))?;
        writeln!(v, "{RESULTS_HEADER}")?;
        for (i, q) in res.voxels.iter().enumerate() {
            if let Some(q) = q {
                writeln!(v, "{}", results_row(i, q))?;
            }
        }
        v.flush()?;
    }
    let mut f = create(out, "slice_report.csv")?;
    writeln!(
        f,
        "mode,voxels,evals,t1_wrong,t1_min_err,t1_max_err,t2_wrong,df_wrong,identical_to_plain,wall_ms"
    )?;
    let identical = r.identical();
    for (name, res, e) in &runs {
        let same = match (*name, identical) {
            ("prior", Some(b)) => b.to_string(),
            _ => String::new(),
        };
        writeln!(
            f,
            "{name},{},{},{},{},{},{},{},{same},{:.3}",
            e.t1.voxels,
            res.total_evaluations,
            e.t1.wrong,
            e.t1.min,
            e.t1.max,
            e.t2.wrong,
            e.df.wrong,
            ms(res.elapsed)
        )?;
    }
    f.flush()?;
    Ok(())
}

pub fn gen_slice(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let out = cfg.prepare_out()?;
    let path = out.join("slice.csv");
    slice_definition(cfg)?.save(&path)?;
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Zoom,
    /// Exhaustive search of the window around the zoom estimate.
    Brute,
}

#[derive(Debug, Clone)]
pub struct NoiseRow {
    /// Zero is the noise-free reference row.
    pub level: usize,
    pub target_cc: f64,
    pub seed: u64,
    pub sigma: Option<f64>,
    pub achieved_cc: Option<f64>,
    pub smoothing: Option<usize>,
    pub method: Method,
    pub params: Option<TissueParams>,
    pub evaluations: usize,
    pub elapsed: Duration,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct NoiseReport {
    pub truth: TissueParams,
    pub rows: Vec<NoiseRow>,
}

impl NoiseRow {
    /// Estimated minus true (T1, T2, df).
    pub fn errors(&self, truth: &TissueParams) -> Option<[f64; 3]> {
        let p = self.params?;
        Some([p.t1_ms - truth.t1_ms, p.t2_ms - truth.t2_ms, p.df_hz - truth.df_hz])
    }
}

impl NoiseReport {
    pub fn find(&self, level: usize, smoothing: Option<usize>, method: Method) -> Option<&NoiseRow> {
        self.rows
            .iter()
            .find(|r| r.level == level && r.smoothing == smoothing && r.method == method)
    }

    /// Level index whose target auto-CC is `cc`.
    pub fn level_of(&self, target_cc: f64) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.level > 0 && (r.target_cc - target_cc).abs() < 1e-9)
            .map(|r| r.level)
    }

    pub fn levels(&self) -> usize {
        self.rows.iter().map(|r| r.level).max().unwrap_or(0)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    /// `|ΔT1| + |ΔT2|` of the zoom estimate at `level`.
    pub fn combined_error(&self, level: usize, smoothing: Option<usize>) -> Option<f64> {
        let e = self.find(level, smoothing, Method::Zoom)?.errors(&self.truth)?;
        Some(e[0].abs() + e[1].abs())
    }
}

/// Quantification errors against calibrated noise levels, with and without
/// temporal smoothing.
pub fn noise(cfg: &RunConfig) -> Result<NoiseReport> {
    let s = setup(cfg)?;
    let truth = target_params(cfg)?;
    let sim = Simulator::with_model(&s.sched, s.zoom.model)?;
    let clean = sim.simulate(&truth)?;
    let mut windows = vec![None];
    windows.extend(cfg.smoothing.iter().map(|&k| Some(k)));
    let quantifiers = windows
        .iter()
        .map(|&k| {
            let z = ZoomConfig {
                smoothing: k,
                ..s.zoom.clone()
            };
            Quantifier::new(&s.sched, z, EntrySource::Simulate)
        })
        .collect::<mrfzoom::Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut levels: Vec<(usize, f64)> = vec![(0, 1.0)];
    levels.extend(cfg.auto_cc.iter().enumerate().map(|(i, &c)| (i + 1, c)));
    for (level, target_cc) in levels {
        let seed = cfg.seed.wrapping_add(level as u64);
        let base = NoiseRow {
            level,
            target_cc,
            seed,
            sigma: None,
            achieved_cc: None,
            smoothing: None,
            method: Method::Zoom,
            params: None,
            evaluations: 0,
            elapsed: Duration::ZERO,
            error: None,
        };
        let calibrated = if level == 0 {
            Ok(0.0)
        } else {
            calibrate_noise(&clean, target_cc, seed)
        };
        let sigma = match calibrated {
            Ok(v) => v,
            Err(e) => {
                rows.push(NoiseRow {
                    error: Some(e.to_string()),
                    ..base
                });
                continue;
            }
        };
        let noisy = add_noise(&clean, sigma, seed)?;
        let achieved = cc(&clean, &noisy)?;
        let brute_here = cfg.brute_auto_cc.iter().any(|b| (b - target_cc).abs() < 1e-9);
        for (&k, q) in windows.iter().zip(&quantifiers) {
            let row = NoiseRow {
                sigma: Some(sigma),
                achieved_cc: Some(achieved),
                smoothing: k,
                ..base.clone()
            };
            let z = match q.quantify(&noisy, &s.grid) {
                Ok(z) => z,
                Err(e) => {
                    rows.push(NoiseRow {
                        error: Some(e.to_string()),
                        ..row
                    });
                    continue;
                }
            };
            rows.push(NoiseRow {
                params: Some(z.params),
                evaluations: z.evaluations,
                elapsed: z.elapsed,
                ..row.clone()
            });
            if brute_here {
                let g = window(&s.grid, &z.params, cfg.brute_window)?;
                let start = Instant::now();
                let m = brute_force_generated(
                    &noisy,
                    &g,
                    &s.sched,
                    s.zoom.metric,
                    &gen_options(cfg, &s.zoom, k),
                );
                let elapsed = start.elapsed();
                rows.push(match m {
                    Ok(m) => NoiseRow {
                        method: Method::Brute,
                        params: Some(m.params),
                        evaluations: m.evaluations,
                        elapsed,
                        ..row
                    },
                    Err(e) => NoiseRow {
                        method: Method::Brute,
                        error: Some(e.to_string()),
                        ..row
                    },
                });
            }
        }
    }
    let report = NoiseReport { truth, rows };
    write_noise(&s.out, &report)?;
    Ok(report)
}

fn write_noise(out: &Path, r: &NoiseReport) -> Result<()> {
    let mut w = create(out, "noise.csv")?;
    writeln!(
        w,
        "level,target_cc,seed,sigma,achieved_cc,smoothing,method,t1_ms,t2_ms,df_hz,err_t1_ms,err_t2_ms,err_df_hz,evals,status,wall_ms"
    )?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for row in &r.rows {
        let p = row.params;
        let e = row.errors(&r.truth);
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.3}",
            row.level,
            row.target_cc,
            row.seed,
            opt(row.sigma),
            opt(row.achieved_cc),
            row.smoothing.unwrap_or(0),
            match row.method {
                Method::Zoom => "zoom",
                Method::Brute => "brute",
            },
            opt(p.map(|p| p.t1_ms)),
            opt(p.map(|p| p.t2_ms)),
            opt(p.map(|p| p.df_hz)),
            opt(e.map(|e| e[0])),
            opt(e.map(|e| e[1])),
            opt(e.map(|e| e[2])),
            row.evaluations,
            row.error.as_deref().map_or("ok".to_string(), |e| format!("\"{}\"", e.replace('"', "'"))),
            ms(row.elapsed)
        )?;
    }
    w.flush()?;
    Ok(())
}
