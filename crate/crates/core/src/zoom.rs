//! MRF-ZOOM: off-resonance first, then multi-resolution hill climbing over
//! T1/T2.
//!
//! Every candidate lives on the finest lattice of the search grid and is
//! addressed by integer indices anchored at each range minimum, so results
//! compare point for point with an exhaustive search over the same grid.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use num_complex::Complex64;

use crate::bloch::{DecayTable, PrecessionTable, RfModel, Simulator};
use crate::dictionary::{AxisSpec, Dictionary, Metric, ParameterGrid};
use crate::error::{Error, Result};
use crate::fingerprint::{
    gaussian_kernel, normalize_in_place, smooth_with, Fingerprint, TissueParams,
};
use crate::sequence::Schedule;

/// Which axis a 1-D zoom moves along.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZoomAxis {
    T1,
    T2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoomConfig {
    /// Pseudo-period of CC(df), Hz.
    pub omega: f64,
    pub df_coarse: f64,
    pub df_refine: f64,
    /// Full width of the refinement window, Hz.
    pub df_window: f64,
    pub df_fine: f64,
    /// Each omega-translate is probed at the finest df step within this many
    /// Hz; zero probes the single translated point.
    pub translate_halfwidth: f64,
    /// Repeat the translate check around the 1 Hz df refinement, using the
    /// tentative T1/T2 instead of the fixed df-stage values.
    pub recheck_translates: bool,
    /// Fixed T1/T2 (ms) while off-resonance is searched.
    pub df_t1: f64,
    pub df_t2: f64,
    /// Used when the df stage's best CC falls below `fallback_cc`.
    pub fallback_coarse: f64,
    pub fallback_window: f64,
    pub fallback_cc: f64,
    /// Flank offsets (ms, applied to both axes) of the tentative 2-D zoom.
    pub tentative_2d: Vec<f64>,
    /// Interleaved 1-D zooms, run in order.
    pub interleaved_1d: Vec<(ZoomAxis, Vec<f64>)>,
    pub final_2d: Vec<f64>,
    pub initial_t1: f64,
    pub initial_t2: f64,
    pub epsilon: f64,
    pub metric: Metric,
    /// Metric for the final 2-D zoom; defaults to `metric`.
    pub final_metric: Option<Metric>,
    /// Temporal smoothing window applied to query and entries.
    pub smoothing: Option<usize>,
    pub model: RfModel,
}

impl Default for ZoomConfig {
    fn default() -> Self {
        Self {
            omega: 70.0,
            df_coarse: 60.0,
            df_refine: 3.0,
            df_window: 150.0,
            df_fine: 1.0,
            translate_halfwidth: 0.0,
            recheck_translates: false,
            df_t1: 1000.0,
            df_t2: 500.0,
            fallback_coarse: 30.0,
            fallback_window: 300.0,
            fallback_cc: 0.1,
            tentative_2d: vec![200.0, 100.0],
            interleaved_1d: vec![
                (ZoomAxis::T1, vec![100.0]),
                (ZoomAxis::T2, vec![100.0]),
                (ZoomAxis::T1, vec![50.0, 20.0, 10.0]),
                (ZoomAxis::T2, vec![50.0, 20.0, 10.0]),
            ],
            final_2d: vec![1.0],
            initial_t1: 1000.0,
            initial_t2: 500.0,
            epsilon: 1e-7,
            metric: Metric::Cc,
            final_metric: None,
            smoothing: None,
            model: RfModel::Simplified,
        }
    }
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] > w[1])
}

impl ZoomConfig {
    /// Defaults with the df stage scaled to `sched`: omega is the CC
    /// pseudo-period 1/mean(TR), the coarse step keeps its 6/7 ratio to omega,
    /// translates are probed within ±3 Hz and re-checked after the tentative
    /// T1/T2 zoom.
    pub fn for_schedule(sched: &Schedule) -> Self {
        let d = Self::default();
        let omega = 1.0 / sched.mean_tr_s();
        Self {
            omega,
            df_coarse: omega * d.df_coarse / d.omega,
            translate_halfwidth: 3.0,
            recheck_translates: true,
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        let positive = [
            self.omega,
            self.df_coarse,
            self.df_refine,
            self.df_window,
            self.df_fine,
            self.fallback_coarse,
            self.fallback_window,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("df stage steps and omega must be positive".into());
        }
        if !(self.translate_halfwidth >= 0.0) {
            return bad("translate half-width must be non-negative".into());
        }
        if !(self.df_coarse < self.omega) {
            return bad(format!(
                "coarse df step {} must be below omega {}",
                self.df_coarse, self.omega
            ));
        }
        if !(self.df_coarse > self.df_refine && self.df_refine > self.df_fine) {
            return bad("df stage steps must be strictly decreasing".into());
        }
        if self.tentative_2d.is_empty() || self.final_2d.is_empty() {
            return bad("empty zoom step schedule".into());
        }
        let mut all = vec![self.tentative_2d.as_slice(), self.final_2d.as_slice()];
        all.extend(self.interleaved_1d.iter().map(|(_, s)| s.as_slice()));
        for s in all {
            if s.is_empty() || !strictly_decreasing(s) || s.iter().any(|v| !(*v > 0.0)) {
                return bad(format!("zoom steps must be positive and strictly decreasing: {s:?}"));
            }
        }
        if let Some(k) = self.smoothing {
            gaussian_kernel(k)?;
        }
        Ok(())
    }
}

/// Step size in lattice units, never below one lattice step.
fn lattice_steps(steps: &[f64], axis: &AxisSpec) -> Vec<usize> {
    steps
        .iter()
        .map(|s| ((s / axis.step).round() as usize).max(1))
        .collect()
}

/// Hill climb over `0..n` with the shrinking flank offsets `steps`.
///
/// At each offset the left flank is tried first; a win moves there at once
/// without visiting the right. The center is kept on ties.
pub fn zoom_1d<F>(f: &mut F, n: usize, init: usize, steps: &[usize]) -> Result<usize>
where
    F: FnMut(usize) -> Result<f64>,
{
    if steps.is_empty() {
        return Err(Error::InvalidParameter("empty zoom step schedule".into()));
    }
    if init >= n {
        return Err(Error::InvalidParameter(format!(
            "zoom start {init} outside 0..{n}"
        )));
    }
    let mut c = init;
    let mut fc = f(c)?;
    for &s in steps {
        loop {
            let l = c.saturating_sub(s);
            if l != c {
                let fl = f(l)?;
                if fl > fc {
                    (c, fc) = (l, fl);
                    continue;
                }
            }
            let r = (c + s).min(n - 1);
            if r != c {
                let fr = f(r)?;
                if fr > fc {
                    (c, fc) = (r, fr);
                    continue;
                }
            }
            break;
        }
    }
    Ok(c)
}

/// 2-D hill climb over `0..n.0 × 0..n.1`. The first axis is left/right, the
/// second down/up. Offsets shrink pairwise through `steps`.
///
/// Move rules for one iteration, with C the center:
///
/// - evaluate L and D;
/// - both beat C: evaluate the corner LD and move (3 evaluations);
/// - L wins, D loses: evaluate U; if U wins move to corner UL, else to L;
/// - D wins, L loses: evaluate R; if R wins move to corner RD, else to D;
/// - both lose: evaluate R and U; both lose stops (4 evaluations), both win
///   moves to corner RU (5), otherwise move to the flank that won.
///
/// A corner move lands on the best of the corner and its two winning flanks,
/// so every move strictly increases the objective even where it is not
/// unimodal.
pub fn zoom_2d<F>(
    f: &mut F,
    n: (usize, usize),
    init: (usize, usize),
    steps: &[(usize, usize)],
) -> Result<(usize, usize)>
where
    F: FnMut(usize, usize) -> Result<f64>,
{
    if steps.is_empty() {
        return Err(Error::InvalidParameter("empty zoom step schedule".into()));
    }
    if init.0 >= n.0 || init.1 >= n.1 {
        return Err(Error::InvalidParameter(format!(
            "zoom start {init:?} outside {n:?}"
        )));
    }
    let mut c = init;
    let mut fc = f(c.0, c.1)?;
    // flanks clamped onto the boundary collapse onto the center and never win
    let mut probe = |p: (usize, usize), c: (usize, usize), fc: f64| -> Result<f64> {
        if p == c {
            Ok(fc)
        } else {
            f(p.0, p.1)
        }
    };
    for &(s1, s2) in steps {
        loop {
            let lo1 = c.0.saturating_sub(s1);
            let hi1 = (c.0 + s1).min(n.0 - 1);
            let lo2 = c.1.saturating_sub(s2);
            let hi2 = (c.1 + s2).min(n.1 - 1);
            let (l, r, d, u) = ((lo1, c.1), (hi1, c.1), (c.0, lo2), (c.0, hi2));

            let fl = probe(l, c, fc)?;
            let fd = probe(d, c, fc)?;
            let next = match (fl > fc, fd > fc) {
                (true, true) => {
                    let fk = probe((lo1, lo2), c, fc)?;
                    best_of(&[((lo1, lo2), fk), (l, fl), (d, fd)])
                }
                (true, false) => {
                    let fu = probe(u, c, fc)?;
                    if fu > fc {
                        let fk = probe((lo1, hi2), c, fc)?;
                        best_of(&[((lo1, hi2), fk), (l, fl), (u, fu)])
                    } else {
                        (l, fl)
                    }
                }
                (false, true) => {
                    let fr = probe(r, c, fc)?;
                    if fr > fc {
                        let fk = probe((hi1, lo2), c, fc)?;
                        best_of(&[((hi1, lo2), fk), (d, fd), (r, fr)])
                    } else {
                        (d, fd)
                    }
                }
                (false, false) => {
                    let fr = probe(r, c, fc)?;
                    let fu = probe(u, c, fc)?;
                    match (fr > fc, fu > fc) {
                        (false, false) => break,
                        (true, true) => {
                            let fk = probe((hi1, hi2), c, fc)?;
                            best_of(&[((hi1, hi2), fk), (u, fu), (r, fr)])
                        }
                        (true, false) => (r, fr),
                        (false, true) => (u, fu),
                    }
                }
            };
            (c, fc) = next;
        }
    }
    Ok(c)
}

/// First maximum; candidates are listed smallest coordinate first.
fn best_of(cands: &[((usize, usize), f64)]) -> ((usize, usize), f64) {
    let mut best = cands[0];
    for &c in &cands[1..] {
        if c.1 > best.1 {
            best = c;
        }
    }
    best
}

/// How the df stage ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopRule {
    /// The finest resolution scan ran.
    FinestResolution,
    /// Three successive stage maxima agreed within epsilon.
    Plateau,
}

impl std::fmt::Display for StopRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopRule::FinestResolution => "finest",
            StopRule::Plateau => "plateau",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DfSearch {
    pub index: usize,
    pub score: f64,
    pub stop: StopRule,
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy)]
struct DfSteps {
    coarse: usize,
    refine: usize,
    half_window: usize,
    omega: f64,
    half_omega: usize,
    fine: usize,
    translate_half: usize,
}

impl DfSteps {
    fn new(cfg: &ZoomConfig, fine: f64, coarse: f64, window: f64) -> Self {
        let lat = |v: f64| ((v / fine).round() as usize).max(1);
        Self {
            coarse: lat(coarse),
            refine: lat(cfg.df_refine),
            half_window: (window / 2.0 / fine).round() as usize,
            omega: cfg.omega / fine,
            half_omega: (cfg.omega / 2.0 / fine).round() as usize,
            fine: lat(cfg.df_fine),
            translate_half: (cfg.translate_halfwidth / fine).round() as usize,
        }
    }
}

fn scan<F>(f: &mut F, points: impl Iterator<Item = usize>, best: &mut (usize, f64)) -> Result<()>
where
    F: FnMut(usize) -> Result<f64>,
{
    for i in points {
        let v = f(i)?;
        if v > best.1 {
            *best = (i, v);
        }
    }
    Ok(())
}

fn window(center: usize, half: usize, step: usize, n: usize) -> impl Iterator<Item = usize> {
    let lo = center - (center.min(half) / step) * step;
    let hi = (center + half).min(n - 1);
    (lo..=hi).step_by(step)
}

/// Probes every whole multiple of omega away from `best` across the range,
/// each within `±translate_half` lattice steps. Returns whether one won.
fn translates<F>(f: &mut F, n: usize, st: &DfSteps, best: &mut (usize, f64)) -> Result<bool>
where
    F: FnMut(usize) -> Result<f64>,
{
    let start = *best;
    let b = start.0 as f64;
    let reach = st.translate_half as f64;
    let m_lo = -((b + reach) / st.omega).floor() as i64;
    let m_hi = ((n - 1) as f64 - b + reach).div_euclid(st.omega) as i64;
    for m in m_lo..=m_hi {
        if m == 0 {
            continue;
        }
        let t = (b + m as f64 * st.omega).round() as i64;
        let h = st.translate_half as i64;
        let lo = (t - h).max(0);
        let hi = (t + h).min(n as i64 - 1);
        if lo > hi {
            continue;
        }
        scan(f, (lo as usize..=hi as usize).step_by(st.fine), best)?;
    }
    Ok(best.0 != start.0)
}

fn df_pass<F>(f: &mut F, n: usize, st: DfSteps, eps: f64) -> Result<DfSearch>
where
    F: FnMut(usize) -> Result<f64>,
{
    let mut stage_best = Vec::with_capacity(4);
    let plateau = |v: &Vec<f64>| {
        v.len() >= 3 && {
            let t = &v[v.len() - 3..];
            let (lo, hi) = t
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            hi - lo < eps
        }
    };

    // coarse scan of the whole range
    let mut best = (0, f64::NEG_INFINITY);
    scan(f, (0..n).step_by(st.coarse), &mut best)?;
    stage_best.push(best.1);

    // refine around the coarse optimum
    scan(f, window(best.0, st.half_window, st.refine, n), &mut best)?;
    stage_best.push(best.1);

    // translates by whole multiples of omega; a winner is refined and the
    // translates are checked again from there
    while translates(f, n, &st, &mut best)? {
        scan(f, window(best.0, st.half_window, st.refine, n), &mut best)?;
    }
    stage_best.push(best.1);
    if plateau(&stage_best) {
        return Ok(DfSearch {
            index: best.0,
            score: best.1,
            stop: StopRule::Plateau,
            fallback: false,
        });
    }

    scan(f, window(best.0, st.half_omega, st.fine, n), &mut best)?;
    Ok(DfSearch {
        index: best.0,
        score: best.1,
        stop: StopRule::FinestResolution,
        fallback: false,
    })
}

/// Off-resonance search over lattice indices `0..n` of a 1-D objective.
/// `fine` is the lattice spacing in Hz.
pub fn search_df<F>(f: &mut F, n: usize, fine: f64, cfg: &ZoomConfig) -> Result<DfSearch>
where
    F: FnMut(usize) -> Result<f64>,
{
    if n == 0 {
        return Err(Error::InvalidParameter("empty df range".into()));
    }
    let first = df_pass(f, n, DfSteps::new(cfg, fine, cfg.df_coarse, cfg.df_window), cfg.epsilon)?;
    if first.score >= cfg.fallback_cc {
        return Ok(first);
    }
    let st = DfSteps::new(cfg, fine, cfg.fallback_coarse, cfg.fallback_window);
    let mut second = df_pass(f, n, st, cfg.epsilon)?;
    second.fallback = true;
    if first.score > second.score {
        return Ok(DfSearch {
            fallback: true,
            ..first
        });
    }
    Ok(second)
}

/// One line of the stage log.
#[derive(Debug, Clone, PartialEq)]
pub struct StageLog {
    pub stage: String,
    /// New evaluations spent in this stage.
    pub evaluations: usize,
    pub score: f64,
    pub params: TissueParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantResult {
    pub params: TissueParams,
    pub score: f64,
    pub evaluations: usize,
    pub elapsed: Duration,
    pub trace: Vec<StageLog>,
    pub df_stop: StopRule,
    pub df_fallback: bool,
}

/// Where dictionary entries come from.
#[derive(Debug, Clone, Copy)]
pub enum EntrySource<'a> {
    /// Simulate every entry on demand.
    Simulate,
    /// Look df-stage entries up in a fixed-T1/T2 dictionary, simulate the rest.
    DfDict(&'a Dictionary),
    /// Look every entry up in a full dictionary covering the search grid.
    FullDict(&'a Dictionary),
}

/// The quantity being maximized: a unit query against lattice entries, with a
/// memo of complex inner products and a count of entries produced.
pub struct Objective<'a> {
    grid: ParameterGrid,
    sim: &'a Simulator,
    source: EntrySource<'a>,
    query: Vec<Complex64>,
    kernel: Option<Vec<f64>>,
    memo: HashMap<[usize; 3], (Complex64, f64)>,
    evaluations: usize,
    t1_tables: HashMap<usize, DecayTable>,
    t2_tables: HashMap<usize, DecayTable>,
    df_tables: HashMap<usize, PrecessionTable>,
    raw: Vec<Complex64>,
    entry: Vec<Complex64>,
}

impl<'a> Objective<'a> {
    pub fn new(
        fp: &Fingerprint,
        grid: ParameterGrid,
        sim: &'a Simulator,
        source: EntrySource<'a>,
        smoothing: Option<usize>,
    ) -> Result<Self> {
        let len = sim.len();
        if fp.len() != len {
            return Err(Error::LengthMismatch {
                expected: len,
                actual: fp.len(),
            });
        }
        if grid.t1.min <= 0.0 || grid.t2.min <= 0.0 {
            return Err(Error::InvalidParameter(
                "relaxation ranges must be positive".into(),
            ));
        }
        let kernel = smoothing.map(gaussian_kernel).transpose()?;
        let mut query = fp.samples().to_vec();
        if let Some(k) = &kernel {
            let mut out = vec![Complex64::new(0.0, 0.0); len];
            smooth_with(&query, k, &mut out);
            query = out;
        }
        normalize_in_place(&mut query)?;
        if let EntrySource::FullDict(d) | EntrySource::DfDict(d) = source {
            if d.entry_len() != len {
                return Err(Error::LengthMismatch {
                    expected: len,
                    actual: d.entry_len(),
                });
            }
            if kernel.is_some() {
                return Err(Error::InvalidParameter(
                    "stored dictionaries cannot be combined with smoothing".into(),
                ));
            }
        }
        Ok(Self {
            grid,
            sim,
            source,
            query,
            kernel,
            memo: HashMap::new(),
            evaluations: 0,
            t1_tables: HashMap::new(),
            t2_tables: HashMap::new(),
            df_tables: HashMap::new(),
            raw: vec![Complex64::new(0.0, 0.0); len],
            entry: vec![Complex64::new(0.0, 0.0); len],
        })
    }

    pub fn grid(&self) -> &ParameterGrid {
        &self.grid
    }

    /// Entries produced so far (generated or looked up); memo hits excluded.
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    fn lookup(d: &Dictionary, p: &TissueParams) -> Option<usize> {
        d.grid().index_of(p).map(|i| d.grid().flat_index(i[0], i[1], i[2]))
    }

    fn produce(&mut self, idx: [usize; 3]) -> Result<(Complex64, f64)> {
        let p = self.grid.params_at(idx);
        match self.source {
            EntrySource::FullDict(d) => {
                let flat = Self::lookup(d, &p).ok_or_else(|| {
                    Error::InvalidParameter(format!(
                        "T1={} T2={} df={} is not in the dictionary",
                        p.t1_ms, p.t2_ms, p.df_hz
                    ))
                })?;
                return Ok(d.inner_with(flat, &self.query));
            }
            EntrySource::DfDict(d) => {
                if let Some(flat) = Self::lookup(d, &p) {
                    return Ok(d.inner_with(flat, &self.query));
                }
            }
            EntrySource::Simulate => {}
        }
        let sim = self.sim;
        let grid = self.grid;
        let t1 = self
            .t1_tables
            .entry(idx[0])
            .or_insert_with(|| sim.decay_table(grid.t1.value(idx[0]) * 1e-3));
        let t2 = self
            .t2_tables
            .entry(idx[1])
            .or_insert_with(|| sim.decay_table(grid.t2.value(idx[1]) * 1e-3));
        let prec = self
            .df_tables
            .entry(idx[2])
            .or_insert_with(|| sim.precession_table(grid.df.value(idx[2])));
        match &self.kernel {
            Some(k) => {
                sim.run_tables(t1, t2, prec, p.df_hz, &mut self.raw);
                smooth_with(&self.raw, k, &mut self.entry);
            }
            None => sim.run_tables(t1, t2, prec, p.df_hz, &mut self.entry),
        }
        normalize_in_place(&mut self.entry)?;
        Ok((crate::fingerprint::inner(&self.query, &self.entry), 1.0))
    }

    /// `(<query, entry>, ‖entry‖²)` at a lattice point, memoized.
    pub fn inner_at(&mut self, idx: [usize; 3]) -> Result<(Complex64, f64)> {
        if let Some(v) = self.memo.get(&idx) {
            return Ok(*v);
        }
        let v = self.produce(idx)?;
        self.evaluations += 1;
        self.memo.insert(idx, v);
        Ok(v)
    }

    pub fn score(&mut self, idx: [usize; 3], metric: Metric) -> Result<f64> {
        let (ip, nn) = self.inner_at(idx)?;
        Ok(metric.score(ip, nn))
    }
}

/// Prepared state for quantifying many fingerprints against one schedule.
pub struct Quantifier<'a> {
    sim: Simulator,
    cfg: ZoomConfig,
    source: EntrySource<'a>,
}

impl<'a> Quantifier<'a> {
    pub fn new(sched: &Schedule, cfg: ZoomConfig, source: EntrySource<'a>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            sim: Simulator::with_model(sched, cfg.model)?,
            cfg,
            source,
        })
    }

    pub fn config(&self) -> &ZoomConfig {
        &self.cfg
    }

    /// Full pipeline on the default initials.
    pub fn quantify(&self, fp: &Fingerprint, grid: &ParameterGrid) -> Result<QuantResult> {
        self.quantify_from(fp, grid, (self.cfg.initial_t1, self.cfg.initial_t2))
    }

    /// Full pipeline with the T1/T2 zooms starting from `init` (ms).
    pub fn quantify_from(
        &self,
        fp: &Fingerprint,
        grid: &ParameterGrid,
        init: (f64, f64),
    ) -> Result<QuantResult> {
        let start = Instant::now();
        let cfg = &self.cfg;
        let mut obj = Objective::new(fp, *grid, &self.sim, self.source, cfg.smoothing)?;
        let g = *grid;
        let mut trace = Vec::new();
        let mut last_evals = 0;
        let mut log = |obj: &mut Objective, stage: &str, at: [usize; 3], metric: Metric| -> Result<()> {
            let score = obj.score(at, metric)?;
            trace.push(StageLog {
                stage: stage.to_string(),
                evaluations: obj.evaluations() - last_evals,
                score,
                params: g.params_at(at),
            });
            last_evals = obj.evaluations();
            Ok(())
        };
        let metric = cfg.metric;

        // 1) off-resonance with T1/T2 fixed
        let (a1, a2) = (g.t1.snap(cfg.df_t1), g.t2.snap(cfg.df_t2));
        let df = search_df(
            &mut |k| obj.score([a1, a2, k], metric),
            g.df.count,
            g.df.step,
            cfg,
        )?;
        let mut at = [a1, a2, df.index];
        log(&mut obj, "df", at, metric)?;

        // 2) tentative T1/T2
        let (i1, i2) = (g.t1.snap(init.0), g.t2.snap(init.1));
        let steps = pair_steps(&cfg.tentative_2d, &g);
        let d = at[2];
        let (b1, b2) = zoom_2d(
            &mut |x, y| obj.score([x, y, d], metric),
            (g.t1.count, g.t2.count),
            (i1, i2),
            &steps,
        )?;
        at = [b1, b2, d];
        log(&mut obj, "tentative-2d", at, metric)?;

        // 3) 1 Hz df scan around the tentative optimum
        let half = (cfg.omega / 2.0 / g.df.step).round() as usize;
        let fine = ((cfg.df_fine / g.df.step).round() as usize).max(1);
        let mut best = (at[2], obj.score(at, metric)?);
        scan(
            &mut |k| obj.score([b1, b2, k], metric),
            window(at[2], half, fine, g.df.count),
            &mut best,
        )?;
        if cfg.recheck_translates {
            let st = DfSteps::new(cfg, g.df.step, cfg.df_coarse, cfg.df_window);
            let mut f = |k| obj.score([b1, b2, k], metric);
            while translates(&mut f, g.df.count, &st, &mut best)? {
                scan(&mut f, window(best.0, half, fine, g.df.count), &mut best)?;
            }
        }
        at[2] = best.0;
        log(&mut obj, "df-refine", at, metric)?;

        // 4) interleaved 1-D zooms
        for (axis, steps) in &cfg.interleaved_1d {
            let [c1, c2, d] = at;
            match axis {
                ZoomAxis::T1 => {
                    let s = lattice_steps(steps, &g.t1);
                    at[0] = zoom_1d(&mut |x| obj.score([x, c2, d], metric), g.t1.count, c1, &s)?;
                }
                ZoomAxis::T2 => {
                    let s = lattice_steps(steps, &g.t2);
                    at[1] = zoom_1d(&mut |y| obj.score([c1, y, d], metric), g.t2.count, c2, &s)?;
                }
            }
            let name = match axis {
                ZoomAxis::T1 => "t1-1d",
                ZoomAxis::T2 => "t2-1d",
            };
            log(&mut obj, name, at, metric)?;
        }

        // 5) final 2-D zoom at the finest resolution
        let fm = cfg.final_metric.unwrap_or(metric);
        let steps = pair_steps(&cfg.final_2d, &g);
        let d = at[2];
        let (f1, f2) = zoom_2d(
            &mut |x, y| obj.score([x, y, d], fm),
            (g.t1.count, g.t2.count),
            (at[0], at[1]),
            &steps,
        )?;
        at = [f1, f2, d];
        log(&mut obj, "final-2d", at, fm)?;

        let score = obj.score(at, fm)?;
        let evaluations = obj.evaluations();
        let elapsed = start.elapsed();
        let mut params = g.params_at(at);
        params.pd = self.proton_density(fp, &params)?;
        Ok(QuantResult {
            params,
            score,
            evaluations,
            elapsed,
            trace,
            df_stop: df.stop,
            df_fallback: df.fallback,
        })
    }

    fn proton_density(&self, fp: &Fingerprint, p: &TissueParams) -> Result<f64> {
        let ideal = self.sim.simulate(p)?;
        match self.cfg.smoothing {
            Some(k) => crate::fingerprint::estimate_pd(
                &crate::fingerprint::smooth(fp, k)?,
                &crate::fingerprint::smooth(&ideal, k)?,
            ),
            None => crate::fingerprint::estimate_pd(fp, &ideal),
        }
    }
}

fn pair_steps(steps: &[f64], g: &ParameterGrid) -> Vec<(usize, usize)> {
    lattice_steps(steps, &g.t1)
        .into_iter()
        .zip(lattice_steps(steps, &g.t2))
        .collect()
}

/// One-shot convenience wrapper around [`Quantifier`].
pub fn quantify(
    fp: &Fingerprint,
    grid: &ParameterGrid,
    cfg: &ZoomConfig,
    sched: &Schedule,
    df_dict: Option<&Dictionary>,
) -> Result<QuantResult> {
    let source = df_dict.map_or(EntrySource::Simulate, EntrySource::DfDict);
    Quantifier::new(sched, cfg.clone(), source)?.quantify(fp, grid)
}

/// Dictionary over the df axis of `grid` at the df-stage T1/T2, for
/// [`EntrySource::DfDict`].
pub fn df_dictionary(grid: &ParameterGrid, cfg: &ZoomConfig, sched: &Schedule) -> Result<Dictionary> {
    let one = |axis: &AxisSpec, v: f64| AxisSpec {
        min: axis.value(axis.snap(v)),
        step: axis.step,
        count: 1,
    };
    let g = ParameterGrid {
        t1: one(&grid.t1, cfg.df_t1),
        t2: one(&grid.t2, cfg.df_t2),
        df: grid.df,
    };
    let opts = crate::dictionary::GenOptions {
        model: cfg.model,
        ..Default::default()
    };
    crate::dictionary::generate(&g, sched, &opts, |_, _| {})
}

/// Voxel fingerprints of a `width × height` slice in raster order; `None`
/// outside the mask.
#[derive(Debug, Clone)]
pub struct SliceInput {
    pub width: usize,
    pub height: usize,
    pub fingerprints: Vec<Option<Fingerprint>>,
}

/// Windows around a neighbor's estimate used in prior mode (ms, ms, Hz).
pub const PRIOR_HALF_WIDTHS: [f64; 3] = [3000.0, 800.0, 150.0];

#[derive(Debug, Clone)]
pub struct SliceResult {
    pub width: usize,
    pub height: usize,
    pub voxels: Vec<Option<QuantResult>>,
    pub total_evaluations: usize,
    pub elapsed: Duration,
}

impl SliceResult {
    /// Parameter map in raster order; NaN outside the mask.
    pub fn map(&self, f: impl Fn(&TissueParams) -> f64) -> Vec<f64> {
        self.voxels
            .iter()
            .map(|v| v.as_ref().map_or(f64::NAN, |r| f(&r.params)))
            .collect()
    }
}

fn restrict_grid(grid: &ParameterGrid, p: &TissueParams) -> Option<ParameterGrid> {
    let [w1, w2, w3] = PRIOR_HALF_WIDTHS;
    Some(ParameterGrid {
        t1: grid.t1.restrict(p.t1_ms - w1, p.t1_ms + w1)?,
        t2: grid.t2.restrict(p.t2_ms - w2, p.t2_ms + w2)?,
        df: grid.df.restrict(p.df_hz - w3, p.df_hz + w3)?,
    })
}

/// Quantifies every masked voxel in raster order.
///
/// With `use_prior`, a voxel takes the already-processed left neighbor (or,
/// failing that, the upper one) as its prior: the search ranges shrink to the
/// prior windows and the T1/T2 zooms start from the neighbor's values. That
/// dependency makes prior mode sequential; without priors voxels are spread
/// over `workers` threads.
pub fn quantify_slice(
    q: &Quantifier,
    slice: &SliceInput,
    grid: &ParameterGrid,
    use_prior: bool,
    workers: usize,
) -> Result<SliceResult> {
    let n = slice.width * slice.height;
    if slice.fingerprints.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: slice.fingerprints.len(),
        });
    }
    if slice.fingerprints.iter().all(Option::is_none) {
        return Err(Error::InvalidParameter("empty mask".into()));
    }
    let start = Instant::now();
    let mut voxels: Vec<Option<QuantResult>> = vec![None; n];
    if use_prior {
        for i in 0..n {
            let Some(fp) = &slice.fingerprints[i] else {
                continue;
            };
            let (x, y) = (i % slice.width, i / slice.width);
            let left = (x > 0).then(|| i - 1);
            let up = (y > 0).then(|| i - slice.width);
            let prior = left
                .and_then(|j| voxels[j].as_ref())
                .or_else(|| up.and_then(|j| voxels[j].as_ref()))
                .map(|r| r.params);
            let r = match prior {
                Some(p) => {
                    let g = restrict_grid(grid, &p).ok_or_else(|| {
                        Error::InvalidParameter("prior window misses the search ranges".into())
                    })?;
                    q.quantify_from(fp, &g, (p.t1_ms, p.t2_ms))?
                }
                None => q.quantify(fp, grid)?,
            };
            voxels[i] = Some(r);
        }
    } else {
        let workers = workers.max(1);
        let chunk = n.div_ceil(workers);
        let results: Vec<Result<Vec<Option<QuantResult>>>> = std::thread::scope(|s| {
            let handles: Vec<_> = slice
                .fingerprints
                .chunks(chunk)
                .map(|part| {
                    s.spawn(move || {
                        part.iter()
                            .map(|fp| fp.as_ref().map(|fp| q.quantify(fp, grid)).transpose())
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("slice worker panicked"))
                .collect()
        });
        voxels.clear();
        for part in results {
            voxels.extend(part?);
        }
    }
    let total_evaluations = voxels.iter().flatten().map(|r| r.evaluations).sum();
    Ok(SliceResult {
        width: slice.width,
        height: slice.height,
        voxels,
        total_evaluations,
        elapsed: start.elapsed(),
    })
}

/// Header of the per-fingerprint results CSV.
pub const RESULTS_HEADER: &str = "id,t1_ms,t2_ms,df_hz,pd,score,evals,ms_elapsed";

pub fn results_row(id: usize, r: &QuantResult) -> String {
    format!(
        "{id},{},{},{},{},{},{},{:.3}",
        r.params.t1_ms,
        r.params.t2_ms,
        r.params.df_hz,
        crate::sequence::fmt_sig9(r.params.pd),
        crate::sequence::fmt_sig9(r.score),
        r.evaluations,
        r.elapsed.as_secs_f64() * 1e3
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::simulate_fingerprint;
    use crate::dictionary::{brute_force_search, generate, grid_from_ranges, GenOptions};
    use crate::sequence::build_schedule;
    use std::cell::Cell;

    fn argmax_1d(f: impl Fn(usize) -> f64, n: usize) -> usize {
        (0..n).fold(0, |b, i| if f(i) > f(b) { i } else { b })
    }

    #[test]
    fn zoom_1d_finds_unimodal_peak() {
        for peak in [0usize, 3, 37, 64, 99] {
            let f = |i: usize| -((i as f64 - peak as f64).abs()).powf(1.3);
            for init in [0usize, 50, 99] {
                let got = zoom_1d(&mut |i| Ok(f(i)), 100, init, &[25, 10, 5, 2, 1]).unwrap();
                assert_eq!(got, argmax_1d(f, 100), "peak {peak} init {init}");
            }
        }
    }

    #[test]
    fn zoom_1d_boundary_and_constant() {
        let got = zoom_1d(&mut |i| Ok(i as f64), 57, 20, &[40, 8, 1]).unwrap();
        assert_eq!(got, 56);
        let got = zoom_1d(&mut |_| Ok(1.0), 57, 20, &[40, 8, 1]).unwrap();
        assert_eq!(got, 20);
        assert!(zoom_1d(&mut |_| Ok(1.0), 57, 20, &[]).is_err());
    }

    #[test]
    fn zoom_1d_left_win_skips_right() {
        let seen = std::cell::RefCell::new(Vec::new());
        zoom_1d(
            &mut |i| {
                seen.borrow_mut().push(i);
                Ok(-(i as f64))
            },
            30,
            10,
            &[10],
        )
        .unwrap();
        // 20 is never generated
        assert_eq!(*seen.borrow(), vec![10, 0, 10]);
    }

    #[test]
    fn zoom_2d_separable_matches_exhaustive() {
        let (n1, n2) = (120, 70);
        for (p1, p2) in [(3usize, 66usize), (60, 35), (119, 0), (77, 12)] {
            let f = |x: usize, y: usize| {
                -((x as f64 - p1 as f64).powi(2)) / 50.0 - (y as f64 - p2 as f64).abs()
            };
            let mut want = (0, 0);
            for x in 0..n1 {
                for y in 0..n2 {
                    if f(x, y) > f(want.0, want.1) {
                        want = (x, y);
                    }
                }
            }
            let steps = [(20, 20), (10, 10), (5, 5), (2, 2), (1, 1)];
            let got = zoom_2d(&mut |x, y| Ok(f(x, y)), (n1, n2), (60, 35), &steps).unwrap();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn zoom_2d_four_evaluations_at_optimum() {
        let calls = Cell::new(0);
        let f = |x: usize, y: usize| -((x as f64 - 10.0).powi(2) + (y as f64 - 10.0).powi(2));
        let got = zoom_2d(
            &mut |x, y| {
                calls.set(calls.get() + 1);
                Ok(f(x, y))
            },
            (21, 21),
            (10, 10),
            &[(4, 4)],
        )
        .unwrap();
        assert_eq!(got, (10, 10));
        // center plus L, D, R, U
        assert_eq!(calls.get(), 1 + 4);
    }

    #[test]
    fn zoom_2d_corner_move_costs_three() {
        let seen = std::cell::RefCell::new(Vec::new());
        let f = |x: usize, y: usize| -((x as f64).powi(2) + (y as f64).powi(2));
        zoom_2d(
            &mut |x, y| {
                seen.borrow_mut().push((x, y));
                Ok(f(x, y))
            },
            (30, 30),
            (20, 20),
            &[(10, 10)],
        )
        .unwrap();
        let s = seen.borrow();
        // center, then L and D both win, then the LD corner: the move costs 3
        assert_eq!(&s[..4], &[(20, 20), (10, 20), (20, 10), (10, 10)]);
        // from (10,10) the same again reaches (0,0)
        assert_eq!(&s[4..7], &[(0, 10), (10, 0), (0, 0)]);
    }

    #[test]
    fn zoom_2d_constant_returns_init() {
        let got = zoom_2d(&mut |_, _| Ok(0.5), (9, 9), (2, 7), &[(4, 4), (1, 1)]).unwrap();
        assert_eq!(got, (2, 7));
    }

    #[test]
    fn df_search_on_side_lobe_matches_exhaustive() {
        // periodic side lobes every 60 lattice steps, global peak at 200;
        // the coarse grid misses every lobe
        let f = |i: usize| {
            let d = i as f64 - 200.0;
            let lobe = (-(((d / 60.0) - (d / 60.0).round()) * 60.0).powi(2) / 8.0).exp();
            lobe * (-(d / 300.0).powi(2)).exp()
        };
        let cfg = ZoomConfig {
            omega: 60.0,
            df_coarse: 50.0,
            ..ZoomConfig::default()
        };
        let got = search_df(&mut |i| Ok(f(i)), 600, 1.0, &cfg).unwrap();
        assert_eq!(got.index, argmax_1d(f, 600));
    }

    #[test]
    fn quantify_recovers_on_grid_target() {
        let sched = build_schedule(300, 11).unwrap();
        let grid = grid_from_ranges([(500.0, 2000.0), (200.0, 800.0), (-30.0, 90.0)], [10.0, 10.0, 1.0]).unwrap();
        let truth = TissueParams::new(1230.0, 410.0, 37.0);
        let fp = simulate_fingerprint(&truth, &sched).unwrap();
        let r = quantify(&fp, &grid, &ZoomConfig::default(), &sched, None).unwrap();
        assert_eq!((r.params.t1_ms, r.params.t2_ms, r.params.df_hz), (1230.0, 410.0, 37.0));
        assert!((r.params.pd - 1.0).abs() < 1e-9);
        assert!(r.evaluations < 1000, "{}", r.evaluations);
        assert_eq!(r.trace.iter().map(|s| s.evaluations).sum::<usize>(), r.evaluations);

        // scale and phase of the query do not matter
        let scaled = fp.scale(Complex64::from_polar(0.3, 1.1));
        let r2 = quantify(&scaled, &grid, &ZoomConfig::default(), &sched, None).unwrap();
        assert_eq!(r2.params.t1_ms, r.params.t1_ms);
        assert!((r2.params.pd - 0.3).abs() < 1e-9);
    }

    #[test]
    fn stored_dictionaries_give_same_answer() {
        let sched = build_schedule(200, 12).unwrap();
        let grid = grid_from_ranges([(800.0, 1600.0), (50.0, 250.0), (0.0, 60.0)], [10.0, 10.0, 1.0]).unwrap();
        let truth = TissueParams::new(1110.0, 90.0, 23.0);
        let fp = simulate_fingerprint(&truth, &sched).unwrap();
        let cfg = ZoomConfig::default();
        let full = generate(&grid, &sched, &GenOptions::default(), |_, _| {}).unwrap();
        let bf = brute_force_search(&fp, &full, Metric::Cc).unwrap();
        let dfd = df_dictionary(&grid, &cfg, &sched).unwrap();
        for source in [EntrySource::Simulate, EntrySource::DfDict(&dfd), EntrySource::FullDict(&full)] {
            let r = Quantifier::new(&sched, cfg.clone(), source).unwrap().quantify(&fp, &grid).unwrap();
            assert_eq!(r.params.t2_ms, bf.params.t2_ms);
            assert_eq!(r.params.df_hz, bf.params.df_hz);
            assert!((r.params.t1_ms - bf.params.t1_ms).abs() <= 30.0);
        }
    }

    #[test]
    fn objective_memo_counts_misses_only() {
        let sched = build_schedule(50, 13).unwrap();
        let grid = grid_from_ranges([(800.0, 900.0), (50.0, 60.0), (0.0, 5.0)], [10.0, 10.0, 1.0]).unwrap();
        let sim = Simulator::new(&sched).unwrap();
        let fp = simulate_fingerprint(&grid.params_at([2, 0, 3]), &sched).unwrap();
        let mut obj = Objective::new(&fp, grid, &sim, EntrySource::Simulate, None).unwrap();
        let a = obj.score([2, 0, 3], Metric::Cc).unwrap();
        let b = obj.score([2, 0, 3], Metric::Euclidean).unwrap();
        obj.score([1, 0, 3], Metric::Cc).unwrap();
        assert_eq!(obj.evaluations(), 2);
        assert!((a - 1.0).abs() < 1e-12 && b.abs() < 1e-6);
    }

    #[test]
    fn config_validation() {
        assert!(ZoomConfig::default().validate().is_ok());
        let c = ZoomConfig { df_coarse: 80.0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = ZoomConfig { tentative_2d: vec![100.0, 200.0], ..Default::default() };
        assert!(c.validate().is_err());
        let c = ZoomConfig { final_2d: vec![], ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn schedule_scaled_config() {
        let sched = crate::sequence::build_schedule(500, 1).unwrap();
        let c = ZoomConfig::for_schedule(&sched);
        let period = 1000.0 / (sched.entries().iter().map(|e| e.tr_ms).sum::<f64>() / 500.0);
        assert!((c.omega - period).abs() < 1e-9);
        assert!(c.omega > 50.0 && c.omega < 71.5, "{}", c.omega);
        assert!((c.df_coarse / c.omega - 60.0 / 70.0).abs() < 1e-12);
        assert!(c.validate().is_ok());
    }
}
