//! Fingerprints and the matching objectives between them.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::rng::{stream, SplitMix64};
use crate::sequence::fmt_sig9;

/// Tissue parameters. Relaxation times in milliseconds, off-resonance in Hz,
/// proton density as a unitless signal scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TissueParams {
    pub t1_ms: f64,
    pub t2_ms: f64,
    pub df_hz: f64,
    pub pd: f64,
}

impl TissueParams {
    pub fn new(t1_ms: f64, t2_ms: f64, df_hz: f64) -> Self {
        Self {
            t1_ms,
            t2_ms,
            df_hz,
            pd: 1.0,
        }
    }

    pub fn t1_s(&self) -> f64 {
        self.t1_ms * 1e-3
    }

    pub fn t2_s(&self) -> f64 {
        self.t2_ms * 1e-3
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t1_ms > 0.0 && self.t2_ms > 0.0 && self.pd > 0.0 && self.df_hz.is_finite()) {
            return Err(Error::InvalidParameter(format!("invalid tissue parameters {self:?}")));
        }
        Ok(())
    }
}

/// A complex signal timecourse, one sample per TR.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    samples: Vec<Complex64>,
}

impl Fingerprint {
    pub fn new(samples: Vec<Complex64>) -> Self {
        Self { samples }
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.samples)
    }

    pub fn scale(&self, c: Complex64) -> Fingerprint {
        Fingerprint::new(self.samples.iter().map(|&s| s * c).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("idx,re,im\n");
        for (i, v) in self.samples.iter().enumerate() {
            let _ = writeln!(s, "{i},{},{}", fmt_sig9(v.re), fmt_sig9(v.im));
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
            Some((_, h)) if h.trim() == "idx,re,im" => {}
            _ => return Err(err(1, "expected header `idx,re,im`".into())),
        }
        let mut samples = Vec::new();
        for (n, line) in lines {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 3 {
                return Err(err(n + 1, format!("expected 3 fields, got {}", f.len())));
            }
            if f[0].parse::<usize>().ok() != Some(samples.len()) {
                return Err(err(n + 1, format!("expected idx {}", samples.len())));
            }
            let re: f64 = f[1].parse().map_err(|e| err(n + 1, format!("{e}")))?;
            let im: f64 = f[2].parse().map_err(|e| err(n + 1, format!("{e}")))?;
            samples.push(Complex64::new(re, im));
        }
        Ok(Self::new(samples))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?, path)
    }
}

pub(crate) fn norm(xs: &[Complex64]) -> f64 {
    xs.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Σ a_j · conj(b_j).
#[inline]
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re + x.im * y.im;
        im += x.im * y.re - x.re * y.im;
    }
    Complex64::new(re, im)
}

pub(crate) fn normalize_in_place(xs: &mut [Complex64]) -> Result<f64> {
    let n = norm(xs);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::DegenerateSignal);
    }
    let inv = 1.0 / n;
    for z in xs.iter_mut() {
        *z *= inv;
    }
    Ok(n)
}

pub fn normalize(fp: &Fingerprint) -> Result<Fingerprint> {
    let mut s = fp.samples.clone();
    normalize_in_place(&mut s)?;
    Ok(Fingerprint::new(s))
}

fn same_len(a: &Fingerprint, b: &Fingerprint) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

/// Magnitude of the normalized complex inner product.
pub fn cc(a: &Fingerprint, b: &Fingerprint) -> Result<f64> {
    same_len(a, b)?;
    let (na, nb) = (a.norm(), b.norm());
    if !(na > 0.0 && nb > 0.0) {
        return Err(Error::DegenerateSignal);
    }
    Ok((inner(&a.samples, &b.samples).norm() / (na * nb)).min(1.0))
}

/// [`cc`] for inputs already known to have unit norm; skips the denominator.
pub fn cc_unit(a: &[Complex64], b: &[Complex64]) -> f64 {
    inner(a, b).norm()
}

pub fn euclidean(a: &Fingerprint, b: &Fingerprint) -> Result<f64> {
    same_len(a, b)?;
    Ok(a.samples
        .iter()
        .zip(&b.samples)
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt())
}

/// Adds independent N(0, sigma²) noise to the real and imaginary part of every
/// sample.
pub fn add_noise(fp: &Fingerprint, sigma: f64, seed: u64) -> Result<Fingerprint> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("noise sigma must be >= 0, got {sigma}")));
    }
    let mut rng = SplitMix64::stream(seed, stream::NOISE);
    Ok(Fingerprint::new(
        fp.samples
            .iter()
            .map(|z| {
                let re = rng.normal();
                let im = rng.normal();
                Complex64::new(z.re + sigma * re, z.im + sigma * im)
            })
            .collect(),
    ))
}

pub const CALIBRATION_STEPS: usize = 60;
pub const CALIBRATION_TOL: f64 = 0.02;

/// Noise level whose draw for `seed` brings `cc(fp, noisy)` to `target_cc`.
///
/// Brackets by doubling from the RMS sample magnitude, then bisects. Accepts
/// the result within ±0.02 of the target.
pub fn calibrate_noise(fp: &Fingerprint, target_cc: f64, seed: u64) -> Result<f64> {
    if !(target_cc > 0.0 && target_cc < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target cc must be in (0, 1), got {target_cc}"
        )));
    }
    let rms = fp.norm() / (fp.len().max(1) as f64).sqrt();
    if !(rms > 0.0) {
        return Err(Error::DegenerateSignal);
    }
    let level = |sigma: f64| -> Result<f64> { cc(fp, &add_noise(fp, sigma, seed)?) };

    let (mut lo, mut hi) = (0.0, rms);
    let mut hi_cc = level(hi)?;
    let mut doublings = 0;
    while hi_cc > target_cc && doublings < CALIBRATION_STEPS {
        lo = hi;
        hi *= 2.0;
        let prev = hi_cc;
        hi_cc = level(hi)?;
        doublings += 1;
        if (prev - hi_cc).abs() < 1e-6 {
            break;
        }
    }
    let mut best = (hi, hi_cc);
    // A target below the pure-noise floor is never bracketed; the floor itself
    // is accepted if it lies within tolerance.
    let bisections = if hi_cc > target_cc { 0 } else { CALIBRATION_STEPS };
    for _ in 0..bisections {
        let mid = 0.5 * (lo + hi);
        let c = level(mid)?;
        if (c - target_cc).abs() < (best.1 - target_cc).abs() {
            best = (mid, c);
        }
        if (c - target_cc).abs() < 1e-4 {
            break;
        }
        if c > target_cc {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (best.1 - target_cc).abs() > CALIBRATION_TOL {
        return Err(Error::NoConvergence {
            target: target_cc,
            reached: best.1,
        });
    }
    Ok(best.0)
}

/// Gaussian width (in samples) used for a `k`-point smoothing window.
pub fn kernel_sigma(k: usize) -> Option<f64> {
    match k {
        3 => Some(0.85),
        5 => Some(1.0),
        _ => None,
    }
}

/// Normalized `k`-point Gaussian weights.
pub fn gaussian_kernel(k: usize) -> Result<Vec<f64>> {
    let sigma = kernel_sigma(k).ok_or_else(|| {
        Error::InvalidParameter(format!("smoothing window must be 3 or 5, got {k}"))
    })?;
    let h = (k / 2) as isize;
    let w: Vec<f64> = (-h..=h)
        .map(|j| (-((j * j) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / sum).collect())
}

/// Convolution with a pre-built kernel; windows running past either end are
/// truncated and renormalized.
pub(crate) fn smooth_with(xs: &[Complex64], kernel: &[f64], out: &mut [Complex64]) {
    let n = xs.len() as isize;
    let h = (kernel.len() / 2) as isize;
    for i in 0..n {
        let (mut acc, mut wsum) = (Complex64::new(0.0, 0.0), 0.0);
        for (k, &w) in kernel.iter().enumerate() {
            let j = i + k as isize - h;
            if (0..n).contains(&j) {
                acc += xs[j as usize] * w;
                wsum += w;
            }
        }
        out[i as usize] = acc / wsum;
    }
}

pub fn smooth(fp: &Fingerprint, k: usize) -> Result<Fingerprint> {
    let kernel = gaussian_kernel(k)?;
    if fp.len() < k {
        return Err(Error::LengthMismatch {
            expected: k,
            actual: fp.len(),
        });
    }
    let mut out = vec![Complex64::new(0.0, 0.0); fp.len()];
    smooth_with(&fp.samples, &kernel, &mut out);
    Ok(Fingerprint::new(out))
}

/// Proton density as the norm ratio of the acquired and matched ideal signals.
pub fn estimate_pd(acquired: &Fingerprint, matched_ideal: &Fingerprint) -> Result<f64> {
    let d = matched_ideal.norm();
    if !(d > 0.0) {
        return Err(Error::DegenerateSignal);
    }
    Ok(acquired.norm() / d)
}
