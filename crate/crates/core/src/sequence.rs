//! Pseudo-random IR-bSSFP acquisition schedules.
//!
//! Flip angles follow 1-D Perlin gradient noise rescaled to 0–79°, RF phases
//! cycle 0°, 90°, 180°, 90°, and TRs are Gaussian draws rescaled to 0–6 ms on
//! top of a 14 ms minimum. TE is half the TR.
//!
//! Values are kept in file units (degrees, milliseconds) rounded to nine
//! significant digits, so a schedule and its CSV form are interchangeable.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{stream, SplitMix64};

pub const MAX_FLIP_DEG: f64 = 79.0;
pub const MIN_TR_MS: f64 = 14.0;
pub const TR_SPAN_MS: f64 = 6.0;
/// Perlin lattice cells advanced per timepoint.
pub const PERLIN_STRIDE: f64 = 1.0 / 16.0;

pub const CSV_HEADER: &str = "idx,flip_deg,phase_deg,tr_ms,te_ms";

/// Rounds to nine significant digits.
pub fn round_sig9(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.8e}").parse().unwrap_or(v)
}

/// Formats a value that is already rounded to nine significant digits.
pub(crate) fn fmt_sig9(v: f64) -> String {
    let v = round_sig9(v);
    if v == 0.0 {
        // normalizes -0
        return "0".into();
    }
    format!("{v}")
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Raw 1-D Perlin noise at `n` points spaced [`PERLIN_STRIDE`] apart.
/// Gradients at the integer lattice are uniform in [-1, 1).
pub fn perlin_series(n: usize, seed: u64) -> Vec<f64> {
    let last = ((n.saturating_sub(1)) as f64 * PERLIN_STRIDE).floor() as usize;
    let mut rng = SplitMix64::stream(seed, stream::PERLIN);
    let grads: Vec<f64> = (0..last + 2).map(|_| rng.uniform(-1.0, 1.0)).collect();
    (0..n)
        .map(|i| {
            let x = i as f64 * PERLIN_STRIDE;
            let cell = x.floor();
            let t = x - cell;
            let k = cell as usize;
            let a = grads[k] * t;
            let b = grads[k + 1] * (t - 1.0);
            a + fade(t) * (b - a)
        })
        .collect()
}

/// Affine map sending the series minimum to `lo` and maximum to `hi`.
/// A constant series maps to `lo`.
fn rescale(xs: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    xs.iter()
        .map(|&x| {
            if span > 0.0 {
                lo + (x - min) / span * (hi - lo)
            } else {
                lo
            }
        })
        .collect()
}

/// Flip angles in radians, spanning exactly 0° to 79°.
pub fn perlin_flips(n: usize, seed: u64) -> Result<Vec<f64>> {
    Ok(perlin_flips_deg(n, seed)?
        .into_iter()
        .map(f64::to_radians)
        .collect())
}

fn perlin_flips_deg(n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidParameter("schedule length must be positive".into()));
    }
    Ok(rescale(&perlin_series(n, seed), 0.0, MAX_FLIP_DEG))
}

const PHASE_CYCLE_DEG: [f64; 4] = [0.0, 90.0, 180.0, 90.0];

/// RF phases in radians following the cycle 0°, 90°, 180°, 90°.
pub fn phase_pattern(n: usize) -> Vec<f64> {
    phase_pattern_deg(n).into_iter().map(f64::to_radians).collect()
}

fn phase_pattern_deg(n: usize) -> Vec<f64> {
    (0..n).map(|i| PHASE_CYCLE_DEG[i % 4]).collect()
}

/// Repetition times in seconds within [14 ms, 20 ms].
pub fn tr_pattern(n: usize, seed: u64) -> Result<Vec<f64>> {
    Ok(tr_pattern_ms(n, seed)?.into_iter().map(|t| t * 1e-3).collect())
}

fn tr_pattern_ms(n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidParameter("schedule length must be positive".into()));
    }
    let mut rng = SplitMix64::stream(seed, stream::TR);
    let draws: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    Ok(rescale(&draws, 0.0, TR_SPAN_MS)
        .into_iter()
        .map(|t| t + MIN_TR_MS)
        .collect())
}

/// One timepoint, stored in degrees and milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleEntry {
    pub flip_deg: f64,
    pub phase_deg: f64,
    pub tr_ms: f64,
    pub te_ms: f64,
}

impl ScheduleEntry {
    /// Builds an entry, rounding every field to nine significant digits.
    pub fn new(flip_deg: f64, phase_deg: f64, tr_ms: f64, te_ms: f64) -> Self {
        Self {
            flip_deg: round_sig9(flip_deg),
            phase_deg: round_sig9(phase_deg),
            tr_ms: round_sig9(tr_ms),
            te_ms: round_sig9(te_ms),
        }
    }

    pub fn flip_rad(&self) -> f64 {
        self.flip_deg.to_radians()
    }

    pub fn phase_rad(&self) -> f64 {
        self.phase_deg.to_radians()
    }

    pub fn tr_s(&self) -> f64 {
        self.tr_ms * 1e-3
    }

    pub fn te_s(&self) -> f64 {
        self.te_ms * 1e-3
    }
}

#[derive(Debug, Clone)]
pub struct Schedule {
    entries: Vec<ScheduleEntry>,
    seed: Option<u64>,
}

impl PartialEq for Schedule {
    /// Schedules are equal when their timepoints are; the seed is provenance.
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl Schedule {
    pub fn from_entries(entries: Vec<ScheduleEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidParameter("empty schedule".into()));
        }
        for (i, e) in entries.iter().enumerate() {
            let finite = [e.flip_deg, e.phase_deg, e.tr_ms, e.te_ms]
                .iter()
                .all(|v| v.is_finite());
            if !finite || !(e.te_ms > 0.0 && e.te_ms < e.tr_ms) {
                return Err(Error::InvalidParameter(format!(
                    "timepoint {i}: need finite values and 0 < TE < TR, got {e:?}"
                )));
            }
        }
        Ok(Self {
            entries,
            seed: None,
        })
    }

    pub fn entries(&self) -> &[ScheduleEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Generator seed, when the schedule was built rather than parsed.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn mean_tr_s(&self) -> f64 {
        self.entries.iter().map(|e| e.tr_s()).sum::<f64>() / self.len() as f64
    }

    pub fn min_tr_s(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.tr_s())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.len() * 40);
        s.push_str(CSV_HEADER);
        s.push('\n');
        for (i, e) in self.entries.iter().enumerate() {
            let _ = writeln!(
                s,
                "{i},{},{},{},{}",
                fmt_sig9(e.flip_deg),
                fmt_sig9(e.phase_deg),
                fmt_sig9(e.tr_ms),
                fmt_sig9(e.te_ms)
            );
        }
        s
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == CSV_HEADER => {}
            Some((n, h)) => return Err(err(n + 1, format!("expected header `{CSV_HEADER}`, got `{h}`"))),
            None => return Err(err(1, "empty file".into())),
        }
        let mut entries = Vec::new();
        for (n, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(err(n + 1, format!("expected 5 fields, got {}", fields.len())));
            }
            let idx: usize = fields[0]
                .parse()
                .map_err(|e| err(n + 1, format!("bad idx: {e}")))?;
            if idx != entries.len() {
                return Err(err(n + 1, format!("expected idx {}, got {idx}", entries.len())));
            }
            let mut v = [0.0; 4];
            for (k, f) in fields[1..].iter().enumerate() {
                v[k] = f
                    .parse()
                    .map_err(|e| err(n + 1, format!("bad number `{f}`: {e}")))?;
            }
            entries.push(ScheduleEntry::new(v[0], v[1], v[2], v[3]));
        }
        Schedule::from_entries(entries).map_err(|e| err(0, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv(&text, path)
    }

    /// SHA-256 of the canonical CSV form.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_csv().as_bytes()).into()
    }

    /// Checks the ranges the built-in generator guarantees.
    pub fn check_generator_ranges(&self) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            let ok = (0.0..=MAX_FLIP_DEG).contains(&e.flip_deg)
                && PHASE_CYCLE_DEG.contains(&e.phase_deg)
                && (MIN_TR_MS..=MIN_TR_MS + TR_SPAN_MS).contains(&e.tr_ms)
                && e.te_ms > 0.0
                && e.te_ms < e.tr_ms;
            if !ok {
                return Err(Error::InvalidParameter(format!("timepoint {i} out of range: {e:?}")));
            }
        }
        Ok(())
    }
}

/// Zips flips, phases and TRs into a schedule with TE = TR/2.
pub fn build_schedule(n: usize, seed: u64) -> Result<Schedule> {
    let flips = perlin_flips_deg(n, seed)?;
    let phases = phase_pattern_deg(n);
    let trs = tr_pattern_ms(n, seed)?;
    let entries = flips
        .iter()
        .zip(&phases)
        .zip(&trs)
        .map(|((&f, &p), &tr)| {
            let tr = round_sig9(tr);
            ScheduleEntry::new(f, p, tr, tr / 2.0)
        })
        .collect();
    let mut s = Schedule::from_entries(entries)?;
    s.seed = Some(seed);
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn flips_span_range() {
        let f = perlin_flips(500, 1).unwrap();
        let max = 79f64.to_radians();
        assert!(f.iter().all(|&x| (0.0..=max + 1e-15).contains(&x)));
        let lo = f.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(lo, 0.0);
        assert!((hi - max).abs() < 1e-12);
    }

    #[test]
    fn flips_deterministic() {
        assert_eq!(perlin_flips(300, 9).unwrap(), perlin_flips(300, 9).unwrap());
    }

    #[test]
    fn flips_are_smooth() {
        let f = perlin_flips(500, 1).unwrap();
        let max_step = f.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        assert!(max_step.to_degrees() < 15.0, "max step {}°", max_step.to_degrees());
    }

    #[test]
    fn flips_reject_empty() {
        assert!(perlin_flips(0, 1).is_err());
        assert!(tr_pattern(0, 1).is_err());
        assert!(build_schedule(0, 1).is_err());
    }

    #[test]
    fn phase_cycle() {
        let p: Vec<f64> = phase_pattern(5).iter().map(|x| x.to_degrees()).collect();
        assert_eq!(p, vec![0.0, 90.0, 180.0, 90.0, 0.0]);
        assert_eq!(phase_pattern(1), vec![0.0]);
        let allowed = [0.0, 90.0, 180.0];
        assert!(phase_pattern(97)
            .iter()
            .all(|x| allowed.iter().any(|a| (x.to_degrees() - a).abs() < 1e-12)));
    }

    #[test]
    fn tr_bounds_and_mean() {
        let t = tr_pattern(500, 1).unwrap();
        let ms: Vec<f64> = t.iter().map(|x| x * 1e3).collect();
        assert!(ms.iter().all(|&x| (14.0 - 1e-9..=20.0 + 1e-9).contains(&x)));
        let mean = ms.iter().sum::<f64>() / ms.len() as f64;
        assert!((16.0..=18.0).contains(&mean), "mean {mean}");
        assert_eq!(t, tr_pattern(500, 1).unwrap());
    }

    #[test]
    fn schedule_invariants() {
        let s = build_schedule(500, 1).unwrap();
        assert_eq!(s.len(), 500);
        assert_eq!(s.seed(), Some(1));
        s.check_generator_ranges().unwrap();
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let s = build_schedule(500, 1).unwrap();
        let csv = s.to_csv();
        let back = Schedule::from_csv(&csv, Path::new("mem")).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_csv(), csv);
        assert_eq!(back.digest(), s.digest());
    }

    #[test]
    fn csv_is_reproducible() {
        assert_eq!(build_schedule(200, 4).unwrap().to_csv(), build_schedule(200, 4).unwrap().to_csv());
        assert_ne!(build_schedule(200, 4).unwrap().digest(), build_schedule(200, 5).unwrap().digest());
    }

    #[test]
    fn csv_rejects_garbage() {
        let p = Path::new("x.csv");
        assert!(Schedule::from_csv("", p).is_err());
        assert!(Schedule::from_csv("a,b\n", p).is_err());
        let bad_te = format!("{CSV_HEADER}\n0,10,0,15,15\n");
        assert!(Schedule::from_csv(&bad_te, p).is_err());
        let bad_idx = format!("{CSV_HEADER}\n1,10,0,15,7.5\n");
        assert!(Schedule::from_csv(&bad_idx, p).is_err());
        let ok = format!("{CSV_HEADER}\n0,10,0,15,7.5\n1,20,90,16,8\n");
        assert_eq!(Schedule::from_csv(&ok, p).unwrap().len(), 2);
    }

    #[test]
    fn second_seed_is_decorrelated() {
        let a = perlin_flips(500, 1).unwrap();
        let b = perlin_flips(500, 2).unwrap();
        assert!(pearson(&a, &b).abs() < 0.5);
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(fmt_sig9(14.0), "14");
        assert_eq!(fmt_sig9(17.123456789123), "17.1234568");
        assert_eq!(fmt_sig9(-0.0), "0");
    }
}
