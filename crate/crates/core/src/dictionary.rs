//! Parameter lattices, dictionary generation and storage, and the exhaustive
//! search used as ground truth.
//!
//! Lattice order is T1-outer, T2-middle, df-inner:
//! `flat = (i_t1 * count_t2 + i_t2) * count_df + i_df`. The binary dictionary
//! and CC-map files use the same order.
//!
//! File layout (little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic, `MRFD` (dictionary) or `MRFC` (CC map) |
//! | 4 | u32 version = 1 |
//! | 32 | SHA-256 of the schedule CSV |
//! | 72 | per axis T1, T2, df: f64 min, f64 step, u64 count |
//! | 8 | u64 fingerprint length |
//! | .. | dictionary: f32 (re, im) pairs per entry; CC map: one f32 per cell |

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use memmap2::Mmap;
use num_complex::Complex64;

use crate::bloch::{PrecessionTable, RfModel, Simulator};
use crate::error::{Error, Result};
use crate::fingerprint::{
    gaussian_kernel, normalize, normalize_in_place, smooth_with, Fingerprint, TissueParams,
};
use crate::sequence::Schedule;

pub const DICT_MAGIC: [u8; 4] = *b"MRFD";
pub const CCMAP_MAGIC: [u8; 4] = *b"MRFC";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 32 + 3 * 24 + 8;

/// One lattice axis: values `min + k·step` for `k` in `0..count`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisSpec {
    pub min: f64,
    pub step: f64,
    pub count: usize,
}

impl AxisSpec {
    /// Endpoint-exclusive axis over `[min, max)`: `count = floor((max − min)/step)`.
    pub fn from_range(name: &'static str, min: f64, max: f64, step: f64) -> Result<Self> {
        let empty = || Error::EmptyAxis {
            axis: name,
            min,
            max,
            step,
        };
        if !(step > 0.0) || !min.is_finite() || !max.is_finite() || !(min < max) {
            return Err(empty());
        }
        // tolerance absorbs representation error in ranges like 0.1..0.7
        let count = ((max - min) / step + 1e-9).floor() as usize;
        if count == 0 {
            return Err(empty());
        }
        Ok(Self { min, step, count })
    }

    pub fn value(&self, k: usize) -> f64 {
        self.min + k as f64 * self.step
    }

    /// Exclusive upper bound.
    pub fn max(&self) -> f64 {
        self.value(self.count)
    }

    pub fn last(&self) -> f64 {
        self.value(self.count - 1)
    }

    /// Index of the nearest lattice point, if `v` lies on the lattice.
    pub fn index_of(&self, v: f64) -> Option<usize> {
        let k = ((v - self.min) / self.step).round();
        if k < 0.0 || k >= self.count as f64 {
            return None;
        }
        let k = k as usize;
        ((self.value(k) - v).abs() <= 1e-6 * self.step).then_some(k)
    }

    /// Nearest lattice index, clamped into the axis.
    pub fn snap(&self, v: f64) -> usize {
        let k = ((v - self.min) / self.step).round();
        k.clamp(0.0, (self.count - 1) as f64) as usize
    }

    /// Sub-axis on the same lattice covering `[lo, hi]` intersected with this
    /// axis. `None` when the intersection is empty.
    pub fn restrict(&self, lo: f64, hi: f64) -> Option<AxisSpec> {
        let first = ((lo - self.min) / self.step - 1e-9).ceil().max(0.0);
        let last = ((hi - self.min) / self.step + 1e-9)
            .floor()
            .min((self.count - 1) as f64);
        if first > last {
            return None;
        }
        Some(AxisSpec {
            min: self.value(first as usize),
            step: self.step,
            count: (last - first) as usize + 1,
        })
    }
}

/// Discrete T1 × T2 × df lattice (ms, ms, Hz).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterGrid {
    pub t1: AxisSpec,
    pub t2: AxisSpec,
    pub df: AxisSpec,
}

/// `(min, max)` per axis in T1, T2, df order.
pub type Ranges = [(f64, f64); 3];

pub fn grid_from_ranges(ranges: Ranges, steps: [f64; 3]) -> Result<ParameterGrid> {
    Ok(ParameterGrid {
        t1: AxisSpec::from_range("T1", ranges[0].0, ranges[0].1, steps[0])?,
        t2: AxisSpec::from_range("T2", ranges[1].0, ranges[1].1, steps[1])?,
        df: AxisSpec::from_range("df", ranges[2].0, ranges[2].1, steps[2])?,
    })
}

impl ParameterGrid {
    pub fn total(&self) -> usize {
        self.t1.count * self.t2.count * self.df.count
    }

    pub fn flat_index(&self, i_t1: usize, i_t2: usize, i_df: usize) -> usize {
        (i_t1 * self.t2.count + i_t2) * self.df.count + i_df
    }

    pub fn unflatten(&self, flat: usize) -> [usize; 3] {
        let i_df = flat % self.df.count;
        let rest = flat / self.df.count;
        [rest / self.t2.count, rest % self.t2.count, i_df]
    }

    pub fn params_at(&self, idx: [usize; 3]) -> TissueParams {
        TissueParams::new(
            self.t1.value(idx[0]),
            self.t2.value(idx[1]),
            self.df.value(idx[2]),
        )
    }

    /// Lattice indices of `p`, if it lies on the grid.
    pub fn index_of(&self, p: &TissueParams) -> Option<[usize; 3]> {
        Some([
            self.t1.index_of(p.t1_ms)?,
            self.t2.index_of(p.t2_ms)?,
            self.df.index_of(p.df_hz)?,
        ])
    }

    pub fn axes(&self) -> [&AxisSpec; 3] {
        [&self.t1, &self.t2, &self.df]
    }
}

/// Matching objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    #[default]
    Cc,
    Euclidean,
}

impl Metric {
    /// Higher is better. `inner` is `<query, entry>` for a unit-norm query and
    /// `entry_norm_sq` the entry's squared norm: CC is `|inner|`, Euclidean is
    /// the negated distance `−√(1 + ‖e‖² − 2·Re inner)`.
    #[inline]
    pub fn score(self, inner: Complex64, entry_norm_sq: f64) -> f64 {
        match self {
            Metric::Cc => inner.norm(),
            Metric::Euclidean => -(1.0 + entry_norm_sq - 2.0 * inner.re).max(0.0).sqrt(),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cc" => Ok(Metric::Cc),
            "euclidean" => Ok(Metric::Euclidean),
            _ => Err(Error::InvalidParameter(format!("unknown metric `{s}`"))),
        }
    }
}

/// Result of an exhaustive search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub params: TissueParams,
    pub index: [usize; 3],
    pub score: f64,
    pub evaluations: usize,
}

/// Options shared by everything that simulates whole lattices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenOptions {
    pub workers: usize,
    /// Temporal smoothing window (3 or 5) applied before normalization.
    pub smoothing: Option<usize>,
    pub model: RfModel,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            smoothing: None,
            model: RfModel::Simplified,
        }
    }
}

/// Walks the lattice one T1 slab at a time. Slabs are computed by up to
/// `opts.workers` threads and handed to `consume` in T1 order; each slab holds
/// `count_t2 · count_df` normalized fingerprints back to back.
pub fn for_each_slab<F>(
    grid: &ParameterGrid,
    sched: &Schedule,
    opts: &GenOptions,
    mut consume: F,
) -> Result<()>
where
    F: FnMut(usize, &[Complex64]) -> Result<()>,
{
    let sim = Simulator::with_model(sched, opts.model)?;
    let len = sim.len();
    let kernel = opts.smoothing.map(gaussian_kernel).transpose()?;
    if kernel.as_ref().is_some_and(|k| k.len() > len) {
        return Err(Error::LengthMismatch {
            expected: kernel.map_or(0, |k| k.len()),
            actual: len,
        });
    }
    let t2_tables: Vec<_> = (0..grid.t2.count)
        .map(|k| sim.decay_table(grid.t2.value(k) * 1e-3))
        .collect();
    let df_tables: Vec<PrecessionTable> = (0..grid.df.count)
        .map(|k| sim.precession_table(grid.df.value(k)))
        .collect();
    for &v in &[grid.t1.min, grid.t2.min] {
        if !(v > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "relaxation axes must be positive, got minimum {v}"
            )));
        }
    }

    let slab_len = grid.t2.count * grid.df.count * len;
    let compute = |i_t1: usize, out: &mut [Complex64]| -> Result<()> {
        let t1 = sim.decay_table(grid.t1.value(i_t1) * 1e-3);
        let mut raw = vec![Complex64::new(0.0, 0.0); len];
        for (i_t2, e2) in t2_tables.iter().enumerate() {
            for (i_df, prec) in df_tables.iter().enumerate() {
                let at = (i_t2 * grid.df.count + i_df) * len;
                let dst = &mut out[at..at + len];
                match &kernel {
                    Some(k) => {
                        sim.run_tables(&t1, e2, prec, grid.df.value(i_df), &mut raw);
                        smooth_with(&raw, k, dst);
                    }
                    None => sim.run_tables(&t1, e2, prec, grid.df.value(i_df), dst),
                }
                normalize_in_place(dst)?;
            }
        }
        Ok(())
    };

    let workers = opts.workers.max(1);
    let mut buffers: Vec<Vec<Complex64>> = (0..workers.min(grid.t1.count))
        .map(|_| vec![Complex64::new(0.0, 0.0); slab_len])
        .collect();
    let mut start = 0;
    while start < grid.t1.count {
        let batch = workers.min(grid.t1.count - start);
        if batch == 1 {
            compute(start, &mut buffers[0])?;
        } else {
            let results: Vec<Result<()>> = std::thread::scope(|s| {
                let handles: Vec<_> = buffers[..batch]
                    .iter_mut()
                    .enumerate()
                    .map(|(w, buf)| {
                        let compute = &compute;
                        s.spawn(move || compute(start + w, buf))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("generation worker panicked"))
                    .collect()
            });
            results.into_iter().collect::<Result<()>>()?;
        }
        for (w, buf) in buffers[..batch].iter().enumerate() {
            consume(start + w, buf)?;
        }
        start += batch;
    }
    Ok(())
}

fn write_header<W: Write>(
    w: &mut W,
    magic: [u8; 4],
    digest: &[u8; 32],
    grid: &ParameterGrid,
    len: usize,
) -> Result<()> {
    w.write_all(&magic)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(digest)?;
    for axis in grid.axes() {
        w.write_all(&axis.min.to_le_bytes())?;
        w.write_all(&axis.step.to_le_bytes())?;
        w.write_all(&(axis.count as u64).to_le_bytes())?;
    }
    w.write_all(&(len as u64).to_le_bytes())?;
    Ok(())
}

struct Header {
    digest: [u8; 32],
    grid: ParameterGrid,
    len: usize,
}

fn parse_header(bytes: &[u8], magic: [u8; 4]) -> Result<Header> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "file shorter than the {HEADER_LEN}-byte header"
        )));
    }
    if bytes[..4] != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(&magic)
        )));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let digest: [u8; 32] = bytes[8..40].try_into().unwrap();
    let mut axes = [AxisSpec {
        min: 0.0,
        step: 0.0,
        count: 0,
    }; 3];
    for (k, axis) in axes.iter_mut().enumerate() {
        let o = 40 + 24 * k;
        *axis = AxisSpec {
            min: f64_at(o),
            step: f64_at(o + 8),
            count: u64_at(o + 16) as usize,
        };
        if !(axis.step > 0.0) || axis.count == 0 || !axis.min.is_finite() {
            return Err(Error::Format(format!("invalid axis {k}: {axis:?}")));
        }
    }
    let len = u64_at(112) as usize;
    Ok(Header {
        digest,
        grid: ParameterGrid {
            t1: axes[0],
            t2: axes[1],
            df: axes[2],
        },
        len,
    })
}

enum Storage {
    Owned(Vec<u8>),
    Mapped(Mmap),
}

impl Storage {
    fn bytes(&self) -> &[u8] {
        match self {
            Storage::Owned(v) => v,
            Storage::Mapped(m) => &m[HEADER_LEN..],
        }
    }
}

/// Normalized fingerprints for every lattice point, stored as f32 pairs.
pub struct Dictionary {
    grid: ParameterGrid,
    digest: [u8; 32],
    len: usize,
    storage: Storage,
}

impl std::fmt::Debug for Dictionary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dictionary")
            .field("grid", &self.grid)
            .field("len", &self.len)
            .finish_non_exhaustive()
    }
}

#[inline]
fn push_entry(buf: &mut Vec<u8>, entry: &[Complex64]) {
    for z in entry {
        buf.extend_from_slice(&(z.re as f32).to_le_bytes());
        buf.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
}

impl Dictionary {
    pub fn grid(&self) -> &ParameterGrid {
        &self.grid
    }

    pub fn digest(&self) -> &[u8; 32] {
        &self.digest
    }

    /// Fingerprint length.
    pub fn entry_len(&self) -> usize {
        self.len
    }

    pub fn len(&self) -> usize {
        self.grid.total()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.total() == 0
    }

    fn entry_bytes(&self, flat: usize) -> &[u8] {
        let stride = self.len * 8;
        &self.storage.bytes()[flat * stride..(flat + 1) * stride]
    }

    /// Entry as stored (f32 precision, widened).
    pub fn entry(&self, flat: usize) -> Fingerprint {
        Fingerprint::new(
            self.entry_bytes(flat)
                .chunks_exact(8)
                .map(|c| {
                    Complex64::new(
                        f32::from_le_bytes(c[..4].try_into().unwrap()) as f64,
                        f32::from_le_bytes(c[4..].try_into().unwrap()) as f64,
                    )
                })
                .collect(),
        )
    }

    /// Raw stored components of one entry: `(re, im)` f32 pairs.
    pub fn entry_f32(&self, flat: usize) -> Vec<(f32, f32)> {
        self.entry_bytes(flat)
            .chunks_exact(8)
            .map(|c| {
                (
                    f32::from_le_bytes(c[..4].try_into().unwrap()),
                    f32::from_le_bytes(c[4..].try_into().unwrap()),
                )
            })
            .collect()
    }

    /// `(<query, entry>, ‖entry‖²)` for one stored entry.
    #[inline]
    pub fn inner_with(&self, flat: usize, query: &[Complex64]) -> (Complex64, f64) {
        inner_f32(self.entry_bytes(flat), query)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_header(&mut w, DICT_MAGIC, &self.digest, &self.grid, self.len)?;
        w.write_all(self.storage.bytes())?;
        w.flush()?;
        Ok(())
    }

    fn check(header: &Header, payload: u64, sched: &Schedule) -> Result<()> {
        let expected = (header.grid.total() as u64)
            .checked_mul(header.len as u64 * 8)
            .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
        if payload != expected {
            return Err(Error::PayloadLength {
                expected,
                actual: payload,
            });
        }
        if header.digest != sched.digest() {
            return Err(Error::DigestMismatch);
        }
        if header.len != sched.len() {
            return Err(Error::LengthMismatch {
                expected: sched.len(),
                actual: header.len,
            });
        }
        Ok(())
    }

    /// Reads a dictionary fully into memory, validating it against `sched`.
    pub fn load(path: &Path, sched: &Schedule) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        let header = parse_header(&bytes, DICT_MAGIC)?;
        Self::check(&header, (bytes.len() - HEADER_LEN) as u64, sched)?;
        bytes.drain(..HEADER_LEN);
        Ok(Self {
            grid: header.grid,
            digest: header.digest,
            len: header.len,
            storage: Storage::Owned(bytes),
        })
    }

    /// Memory-maps a dictionary file, validating it against `sched`. Use for
    /// dictionaries larger than RAM.
    pub fn open_mapped(path: &Path, sched: &Schedule) -> Result<Self> {
        let file = File::open(path)?;
        // SAFETY: the file is opened read-only and treated as immutable; a
        // concurrent writer truncating it is outside the supported use.
        let map = unsafe { Mmap::map(&file)? };
        let header = parse_header(&map, DICT_MAGIC)?;
        Self::check(&header, (map.len() - HEADER_LEN) as u64, sched)?;
        Ok(Self {
            grid: header.grid,
            digest: header.digest,
            len: header.len,
            storage: Storage::Mapped(map),
        })
    }
}

#[inline]
fn inner_f32(bytes: &[u8], query: &[Complex64]) -> (Complex64, f64) {
    let (mut re, mut im, mut nn) = (0.0f64, 0.0f64, 0.0f64);
    for (c, q) in bytes.chunks_exact(8).zip(query) {
        let er = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
        let ei = f32::from_le_bytes([c[4], c[5], c[6], c[7]]) as f64;
        re += q.re * er + q.im * ei;
        im += q.im * er - q.re * ei;
        nn += er * er + ei * ei;
    }
    (Complex64::new(re, im), nn)
}

/// Simulates, normalizes and stores every lattice point in memory.
pub fn generate(
    grid: &ParameterGrid,
    sched: &Schedule,
    opts: &GenOptions,
    mut progress: impl FnMut(usize, usize),
) -> Result<Dictionary> {
    let len = sched.len();
    let mut bytes = Vec::with_capacity(grid.total() * len * 8);
    for_each_slab(grid, sched, opts, |i_t1, slab| {
        for entry in slab.chunks_exact(len) {
            push_entry(&mut bytes, entry);
        }
        progress(i_t1 + 1, grid.t1.count);
        Ok(())
    })?;
    Ok(Dictionary {
        grid: *grid,
        digest: sched.digest(),
        len,
        storage: Storage::Owned(bytes),
    })
}

/// Streams a dictionary to `path` slab by slab; the file is identical to
/// `generate(..)?.save(path)`.
pub fn generate_to_file(
    path: &Path,
    grid: &ParameterGrid,
    sched: &Schedule,
    opts: &GenOptions,
    mut progress: impl FnMut(usize, usize),
) -> Result<()> {
    let len = sched.len();
    let mut w = BufWriter::with_capacity(1 << 20, File::create(path)?);
    write_header(&mut w, DICT_MAGIC, &sched.digest(), grid, len)?;
    let mut buf = Vec::new();
    for_each_slab(grid, sched, opts, |i_t1, slab| {
        buf.clear();
        for entry in slab.chunks_exact(len) {
            push_entry(&mut buf, entry);
        }
        w.write_all(&buf)?;
        progress(i_t1 + 1, grid.t1.count);
        Ok(())
    })?;
    w.flush()?;
    Ok(())
}

fn unit_query(fp: &Fingerprint, len: usize) -> Result<Vec<Complex64>> {
    if fp.len() != len {
        return Err(Error::LengthMismatch {
            expected: len,
            actual: fp.len(),
        });
    }
    Ok(normalize(fp)?.into_samples())
}

/// Best-so-far tracker; strict improvement keeps the lowest index on ties.
struct Best {
    flat: usize,
    score: f64,
}

impl Best {
    fn new() -> Self {
        Self {
            flat: 0,
            score: f64::NEG_INFINITY,
        }
    }

    #[inline]
    fn offer(&mut self, flat: usize, score: f64) {
        if score > self.score {
            self.flat = flat;
            self.score = score;
        }
    }

    fn into_match(self, grid: &ParameterGrid) -> Match {
        let index = grid.unflatten(self.flat);
        Match {
            params: grid.params_at(index),
            index,
            score: self.score,
            evaluations: grid.total(),
        }
    }
}

/// Exhaustive scan of a stored dictionary.
pub fn brute_force_search(fp: &Fingerprint, dict: &Dictionary, metric: Metric) -> Result<Match> {
    let q = unit_query(fp, dict.len)?;
    let mut best = Best::new();
    for flat in 0..dict.grid.total() {
        let (ip, nn) = dict.inner_with(flat, &q);
        best.offer(flat, metric.score(ip, nn));
    }
    Ok(best.into_match(&dict.grid))
}

/// Exhaustive search over a lattice without storing it: every entry is
/// simulated, scored and dropped. Used for restricted-window searches.
pub fn brute_force_generated(
    fp: &Fingerprint,
    grid: &ParameterGrid,
    sched: &Schedule,
    metric: Metric,
    opts: &GenOptions,
) -> Result<Match> {
    let len = sched.len();
    let mut q = unit_query(fp, len)?;
    if let Some(k) = opts.smoothing {
        q = unit_query(&crate::fingerprint::smooth(&Fingerprint::new(q), k)?, len)?;
    }
    let mut best = Best::new();
    let per_slab = grid.t2.count * grid.df.count;
    for_each_slab(grid, sched, opts, |i_t1, slab| {
        for (j, e) in slab.chunks_exact(len).enumerate() {
            let ip = crate::fingerprint::inner(&q, e);
            best.offer(i_t1 * per_slab + j, metric.score(ip, 1.0));
        }
        Ok(())
    })?;
    Ok(best.into_match(grid))
}

/// CC between one fingerprint and every lattice point, in lattice order.
#[derive(Debug, Clone, PartialEq)]
pub struct CcMap {
    pub grid: ParameterGrid,
    pub digest: [u8; 32],
    pub len: usize,
    pub scores: Vec<f32>,
}

impl CcMap {
    pub fn get(&self, idx: [usize; 3]) -> f32 {
        self.scores[self.grid.flat_index(idx[0], idx[1], idx[2])]
    }

    pub fn argmax(&self) -> [usize; 3] {
        let mut best = (0, f32::NEG_INFINITY);
        for (i, &s) in self.scores.iter().enumerate() {
            if s > best.1 {
                best = (i, s);
            }
        }
        self.grid.unflatten(best.0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_header(&mut w, CCMAP_MAGIC, &self.digest, &self.grid, self.len)?;
        for s in &self.scores {
            w.write_all(&s.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        let h = parse_header(&bytes, CCMAP_MAGIC)?;
        let expected = h.grid.total() as u64 * 4;
        let actual = (bytes.len() - HEADER_LEN) as u64;
        if actual != expected {
            return Err(Error::PayloadLength { expected, actual });
        }
        let scores = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            grid: h.grid,
            digest: h.digest,
            len: h.len,
            scores,
        })
    }
}

/// Full CC lattice for `fp`. Entries are simulated slab by slab and never
/// held together in memory.
pub fn cc_map(
    fp: &Fingerprint,
    grid: &ParameterGrid,
    sched: &Schedule,
    opts: &GenOptions,
    mut progress: impl FnMut(usize, usize),
) -> Result<CcMap> {
    let len = sched.len();
    let mut q = unit_query(fp, len)?;
    if let Some(k) = opts.smoothing {
        q = unit_query(&crate::fingerprint::smooth(&Fingerprint::new(q), k)?, len)?;
    }
    let mut scores = Vec::with_capacity(grid.total());
    for_each_slab(grid, sched, opts, |i_t1, slab| {
        scores.extend(
            slab.chunks_exact(len)
                .map(|e| crate::fingerprint::cc_unit(&q, e) as f32),
        );
        progress(i_t1 + 1, grid.t1.count);
        Ok(())
    })?;
    Ok(CcMap {
        grid: *grid,
        digest: sched.digest(),
        len,
        scores,
    })
}
