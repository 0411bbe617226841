//! Reference computations shared by the integration tests and the acceptance
//! suite. Nothing here calls into the simulator or the search code.

#![allow(dead_code)]

use std::f64::consts::{PI, TAU};

use mrfzoom::fingerprint::TissueParams;
use mrfzoom::sequence::Schedule;
use num_complex::Complex64;

type Vec3 = [f64; 3];

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Rodrigues rotation of `v` by `theta` (counterclockwise) about unit `k`.
fn rodrigues(v: Vec3, k: Vec3, theta: f64) -> Vec3 {
    let (s, c) = theta.sin_cos();
    let kxv = cross(k, v);
    let kv = k[0] * v[0] + k[1] * v[1] + k[2] * v[2];
    [0, 1, 2].map(|i| v[i] * c + kxv[i] * s + k[i] * kv * (1.0 - c))
}

/// Free evolution right-hand side: precession about +z at `w` rad/s plus
/// relaxation toward (0, 0, 1).
fn deriv(m: Vec3, w: f64, t1: f64, t2: f64) -> Vec3 {
    [
        -w * m[1] - m[0] / t2,
        w * m[0] - m[1] / t2,
        -(m[2] - 1.0) / t1,
    ]
}

fn integrate(mut m: Vec3, duration: f64, max_dt: f64, w: f64, t1: f64, t2: f64) -> Vec3 {
    let n = (duration / max_dt).ceil().max(1.0) as usize;
    let h = duration / n as f64;
    let add = |a: Vec3, b: Vec3, s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]];
    for _ in 0..n {
        let k1 = deriv(m, w, t1, t2);
        let k2 = deriv(add(m, k1, h / 2.0), w, t1, t2);
        let k3 = deriv(add(m, k2, h / 2.0), w, t1, t2);
        let k4 = deriv(add(m, k3, h), w, t1, t2);
        m = [0, 1, 2].map(|i| m[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    }
    m
}

/// Fingerprint by fixed-step RK4 integration of the Bloch equation between
/// instantaneous hard pulses. Each pulse turns the magnetization clockwise by
/// the flip angle about the transverse axis at the RF phase; the train starts
/// with a 180° inversion about x.
pub fn rk4_fingerprint(p: &TissueParams, sched: &Schedule, max_dt: f64) -> Vec<Complex64> {
    let (t1, t2, w) = (p.t1_ms * 1e-3, p.t2_ms * 1e-3, TAU * p.df_hz);
    let mut m = rodrigues([0.0, 0.0, 1.0], [1.0, 0.0, 0.0], PI);
    let mut out = Vec::with_capacity(sched.len());
    for e in sched.entries() {
        let (tr, te) = (e.tr_ms * 1e-3, e.te_ms * 1e-3);
        let phi = e.phase_deg.to_radians();
        m = rodrigues(m, [phi.cos(), phi.sin(), 0.0], -e.flip_deg.to_radians());
        m = integrate(m, te, max_dt, w, t1, t2);
        out.push(Complex64::new(m[0], m[1]));
        m = integrate(m, tr - te, max_dt, w, t1, t2);
    }
    out
}

/// max |a − b| / max |b| over the series.
pub fn relative_error(a: &[Complex64], b: &[Complex64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.norm()).fold(0.0, f64::max);
    diff / scale
}

/// Lag (in samples, within `lags`) at which the autocorrelation of the
/// mean-removed curve peaks: the dominant spacing of its local maxima.
pub fn dominant_spacing(curve: &[f64], lags: std::ops::RangeInclusive<usize>) -> usize {
    let mean = curve.iter().sum::<f64>() / curve.len() as f64;
    let c: Vec<f64> = curve.iter().map(|v| v - mean).collect();
    let ac = |lag: usize| c.iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>();
    lags.max_by(|&a, &b| ac(a).total_cmp(&ac(b))).expect("non-empty lag range")
}

/// Index of the first maximum.
pub fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
        .0
}

/// Wrong T1/T2 pairs (ms) used for the df sweeps.
pub const WRONG_T1: [f64; 5] = [400.0, 800.0, 1200.0, 2000.0, 3000.0];
pub const WRONG_T2: [f64; 5] = [100.0, 200.0, 400.0, 700.0, 1000.0];
