//! Slice definitions (per-voxel ground truth plus mask) and a synthetic
//! brain-like 64×64 slice.
//!
//! Slice CSV: header `x,y,mask,t1_ms,t2_ms,df_hz`, one row per voxel in
//! raster order (x fastest). Voxels outside the mask carry zeros.

use std::fmt::Write as _;
use std::path::Path;

use crate::bloch::Simulator;
use crate::error::{Error, Result};
use crate::fingerprint::{Fingerprint, TissueParams};
use crate::rng::{stream, SplitMix64};
use crate::sequence::Schedule;
use crate::zoom::{SliceInput, SliceResult};

pub const SLICE_HEADER: &str = "x,y,mask,t1_ms,t2_ms,df_hz";

#[derive(Debug, Clone, PartialEq)]
pub struct SliceDefinition {
    pub width: usize,
    pub height: usize,
    /// Raster order; `None` outside the mask.
    pub voxels: Vec<Option<TissueParams>>,
}

impl SliceDefinition {
    pub fn mask_count(&self) -> usize {
        self.voxels.iter().flatten().count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.voxels.len() * 24);
        s.push_str(SLICE_HEADER);
        s.push('\n');
        for (i, v) in self.voxels.iter().enumerate() {
            let (x, y) = (i % self.width, i / self.width);
            let _ = match v {
                Some(p) => writeln!(s, "{x},{y},1,{},{},{}", p.t1_ms, p.t2_ms, p.df_hz),
                None => writeln!(s, "{x},{y},0,0,0,0"),
            };
        }
        s
    }

    /// Parses a slice file. Rows may come in any order but must cover a full
    /// rectangle exactly once.
    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == SLICE_HEADER => {}
            Some((n, h)) => {
                return Err(err(n + 1, format!("expected header `{SLICE_HEADER}`, got `{h}`")))
            }
            None => return Err(err(1, "empty file".into())),
        }
        let mut rows = Vec::new();
        for (n, line) in lines {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 6 {
                return Err(err(n + 1, format!("expected 6 fields, got {}", f.len())));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|e| err(n + 1, format!("bad integer `{s}`: {e}")));
            let num = |s: &str| s.parse::<f64>().map_err(|e| err(n + 1, format!("bad number `{s}`: {e}")));
            let (x, y, mask) = (int(f[0])?, int(f[1])?, int(f[2])?);
            if mask > 1 {
                return Err(err(n + 1, format!("mask must be 0 or 1, got {mask}")));
            }
            let p = TissueParams::new(num(f[3])?, num(f[4])?, num(f[5])?);
            if mask == 1 {
                p.validate().map_err(|e| err(n + 1, e.to_string()))?;
            }
            rows.push((n + 1, x, y, (mask == 1).then_some(p)));
        }
        let width = rows.iter().map(|r| r.1).max().map_or(0, |m| m + 1);
        let height = rows.iter().map(|r| r.2).max().map_or(0, |m| m + 1);
        if rows.len() != width * height || rows.is_empty() {
            return Err(err(0, format!("{} rows do not tile a {width}×{height} slice", rows.len())));
        }
        let mut voxels = vec![None; width * height];
        let mut seen = vec![false; width * height];
        for (line, x, y, v) in rows {
            let i = y * width + x;
            if std::mem::replace(&mut seen[i], true) {
                return Err(err(line, format!("voxel ({x},{y}) listed twice")));
            }
            voxels[i] = v;
        }
        Ok(Self {
            width,
            height,
            voxels,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?, path)
    }

    /// Ideal fingerprint for every masked voxel.
    pub fn fingerprints(&self, sched: &Schedule) -> Result<SliceInput> {
        let sim = Simulator::new(sched)?;
        let fingerprints = self
            .voxels
            .iter()
            .map(|v| v.as_ref().map(|p| sim.simulate(p)).transpose())
            .collect::<Result<Vec<Option<Fingerprint>>>>()?;
        Ok(SliceInput {
            width: self.width,
            height: self.height,
            fingerprints,
        })
    }

    /// Keeps only the voxel at `(x, y)`.
    pub fn single_voxel(&self, x: usize, y: usize) -> Self {
        let keep = y * self.width + x;
        Self {
            voxels: self
                .voxels
                .iter()
                .enumerate()
                .map(|(i, v)| if i == keep { *v } else { None })
                .collect(),
            ..self.clone()
        }
    }
}

/// Per-parameter error summary over the masked voxels.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorStats {
    pub voxels: usize,
    pub wrong: usize,
    pub min: f64,
    pub max: f64,
    pub mean_abs: f64,
}

/// Estimated minus true values for T1, T2, df.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceErrors {
    pub t1: ErrorStats,
    pub t2: ErrorStats,
    pub df: ErrorStats,
    /// Raster-order difference maps, NaN outside the mask.
    pub maps: [Vec<f64>; 3],
}

pub fn slice_errors(truth: &SliceDefinition, result: &SliceResult) -> Result<SliceErrors> {
    if truth.voxels.len() != result.voxels.len() {
        return Err(Error::LengthMismatch {
            expected: truth.voxels.len(),
            actual: result.voxels.len(),
        });
    }
    let get: [fn(&TissueParams) -> f64; 3] = [|p| p.t1_ms, |p| p.t2_ms, |p| p.df_hz];
    let mut maps: [Vec<f64>; 3] = Default::default();
    let mut stats = [ErrorStats::default(); 3];
    for (k, g) in get.iter().enumerate() {
        let mut sum = 0.0;
        let s = &mut stats[k];
        for (t, r) in truth.voxels.iter().zip(&result.voxels) {
            let d = match (t, r) {
                (Some(t), Some(r)) => g(&r.params) - g(t),
                _ => f64::NAN,
            };
            maps[k].push(d);
            if d.is_nan() {
                continue;
            }
            if s.voxels == 0 {
                (s.min, s.max) = (d, d);
            }
            s.voxels += 1;
            s.wrong += usize::from(d != 0.0);
            s.min = s.min.min(d);
            s.max = s.max.max(d);
            sum += d.abs();
        }
        s.mean_abs = if s.voxels > 0 { sum / s.voxels as f64 } else { 0.0 };
    }
    Ok(SliceErrors {
        t1: stats[0],
        t2: stats[1],
        df: stats[2],
        maps,
    })
}

/// One map as CSV rows of comma-separated values, NaN written as `nan`.
pub fn map_to_csv(map: &[f64], width: usize) -> String {
    let mut s = String::new();
    for row in map.chunks(width) {
        let cells: Vec<String> = row
            .iter()
            .map(|v| if v.is_nan() { "nan".into() } else { format!("{v}") })
            .collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Search ranges matching the synthetic slice: T1 800–3201 ms, T2 50–601 ms,
/// df −48–85 Hz, all at unit steps.
pub const SLICE_RANGES: [(f64, f64); 3] = [(800.0, 3201.0), (50.0, 601.0), (-48.0, 85.0)];

struct Tissue {
    t1: f64,
    t2: f64,
    t1_jitter: u64,
    t2_jitter: u64,
}

const WHITE: Tissue = Tissue { t1: 850.0, t2: 65.0, t1_jitter: 30, t2_jitter: 5 };
const GRAY: Tissue = Tissue { t1: 1350.0, t2: 95.0, t1_jitter: 40, t2_jitter: 6 };
const CSF: Tissue = Tissue { t1: 2800.0, t2: 550.0, t1_jitter: 100, t2_jitter: 30 };

/// A 64×64 head-like slice: an elliptical mask of 1732 voxels with a gray
/// matter rim, white matter core and two ventricles, integer T1/T2 with
/// per-voxel jitter, and a smooth off-resonance field in −48..84 Hz.
pub fn synthetic_slice(seed: u64) -> SliceDefinition {
    let (w, h) = (64usize, 64usize);
    let (cx, cy) = (31.5, 31.5);
    let (a, b) = (21.5, 25.7);
    let mut rng = SplitMix64::stream(seed, stream::PHANTOM);
    let mut jitter = |span: u64| rng.below(2 * span + 1) as f64 - span as f64;
    let mut voxels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let r = ((dx / a).powi(2) + (dy / b).powi(2)).sqrt();
            if r > 1.0 {
                voxels.push(None);
                continue;
            }
            let ventricle = [-5.0, 5.0]
                .iter()
                .any(|ox| ((dx - ox) / 3.0).powi(2) + ((dy + 2.0) / 7.0).powi(2) <= 1.0);
            let tissue = if ventricle {
                &CSF
            } else if r > 0.78 {
                &GRAY
            } else {
                &WHITE
            };
            let t1 = tissue.t1 + jitter(tissue.t1_jitter);
            let t2 = tissue.t2 + jitter(tissue.t2_jitter);
            let (u, v) = (dx / 32.0, dy / 32.0);
            let df = (20.0 + 40.0 * u + 25.0 * (v * v - 0.3)).round().clamp(-48.0, 84.0);
            voxels.push(Some(TissueParams::new(t1, t2, df)));
        }
    }
    SliceDefinition {
        width: w,
        height: h,
        voxels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::grid_from_ranges;

    #[test]
    fn synthetic_slice_shape_and_ranges() {
        let s = synthetic_slice(1);
        assert_eq!((s.width, s.height, s.voxels.len()), (64, 64, 4096));
        assert_eq!(s.mask_count(), 1732);
        let g = grid_from_ranges(SLICE_RANGES, [1.0, 1.0, 1.0]).unwrap();
        for p in s.voxels.iter().flatten() {
            assert!(g.index_of(p).is_some(), "{p:?} off the slice lattice");
        }
        let csf = s.voxels.iter().flatten().filter(|p| p.t2_ms > 400.0).count();
        assert!(csf > 50, "{csf}");
        assert_eq!(synthetic_slice(1), s);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let s = synthetic_slice(2);
        let p = Path::new("slice.csv");
        assert_eq!(SliceDefinition::from_csv(&s.to_csv(), p).unwrap(), s);
        let text = s.to_csv();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.pop();
        assert!(SliceDefinition::from_csv(&lines.join("\n"), p).is_err());
        assert!(SliceDefinition::from_csv("x,y\n", p).is_err());
        let dup = format!("{SLICE_HEADER}\n0,0,0,0,0,0\n0,0,0,0,0,0\n");
        assert!(SliceDefinition::from_csv(&dup, p).is_err());
        let bad = format!("{SLICE_HEADER}\n0,0,1,-5,10,0\n");
        assert!(SliceDefinition::from_csv(&bad, p).is_err());
    }

    #[test]
    fn single_voxel_keeps_one() {
        let s = synthetic_slice(1).single_voxel(32, 32);
        assert_eq!(s.mask_count(), 1);
        assert!(s.voxels[32 * 64 + 32].is_some());
    }
}
