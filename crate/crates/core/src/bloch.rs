//! Rotation-matrix Bloch simulation of an inversion-recovery bSSFP train.
//!
//! Each TR applies an instantaneous RF rotation, then free relaxation and
//! off-resonance precession up to the echo, records `mx + i·my`, and relaxes
//! and precesses for the rest of the TR. Relaxation is affine: transverse
//! components decay with T2 while `mz` recovers toward the equilibrium value 1.

use std::f64::consts::{PI, TAU};
use std::ops::Mul;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fingerprint::{Fingerprint, TissueParams};
use crate::sequence::Schedule;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Magnetization {
    pub mx: f64,
    pub my: f64,
    pub mz: f64,
}

impl Magnetization {
    pub const EQUILIBRIUM: Self = Self {
        mx: 0.0,
        my: 0.0,
        mz: 1.0,
    };

    pub fn new(mx: f64, my: f64, mz: f64) -> Self {
        Self { mx, my, mz }
    }

    pub fn transverse(&self) -> Complex64 {
        Complex64::new(self.mx, self.my)
    }

    pub fn norm(&self) -> f64 {
        (self.mx * self.mx + self.my * self.my + self.mz * self.mz).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.mx.is_finite() && self.my.is_finite() && self.mz.is_finite()
    }
}

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Matrix3(pub [[f64; 3]; 3]);

impl Matrix3 {
    pub const IDENTITY: Self = Self([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn transpose(&self) -> Self {
        let a = &self.0;
        Self([
            [a[0][0], a[1][0], a[2][0]],
            [a[0][1], a[1][1], a[2][1]],
            [a[0][2], a[1][2], a[2][2]],
        ])
    }

    pub fn det(&self) -> f64 {
        let a = &self.0;
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                d = d.max((self.0[i][j] - other.0[i][j]).abs());
            }
        }
        d
    }

    #[inline]
    pub fn apply(&self, m: Magnetization) -> Magnetization {
        let a = &self.0;
        Magnetization {
            mx: a[0][0] * m.mx + a[0][1] * m.my + a[0][2] * m.mz,
            my: a[1][0] * m.mx + a[1][1] * m.my + a[1][2] * m.mz,
            mz: a[2][0] * m.mx + a[2][1] * m.my + a[2][2] * m.mz,
        }
    }
}

impl Mul for Matrix3 {
    type Output = Matrix3;

    fn mul(self, rhs: Matrix3) -> Matrix3 {
        let (a, b) = (&self.0, &rhs.0);
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        Matrix3(out)
    }
}

impl Mul<Magnetization> for Matrix3 {
    type Output = Magnetization;

    fn mul(self, m: Magnetization) -> Magnetization {
        self.apply(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Counterclockwise rotation by `theta` radians about `axis`.
pub fn rot(axis: Axis, theta: f64) -> Matrix3 {
    let (s, c) = theta.sin_cos();
    match axis {
        Axis::X => Matrix3([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]),
        Axis::Y => Matrix3([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]),
        Axis::Z => Matrix3([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]),
    }
}

/// An RF excitation. Angles in radians, `tau` in seconds, `delta_omega` in rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfPulse {
    pub alpha: f64,
    pub phi: f64,
    pub tau: f64,
    pub delta_omega: f64,
}

impl RfPulse {
    /// Hard pulse with no off-resonance, as used by the simplified model.
    pub fn hard(alpha: f64, phi: f64) -> Self {
        Self {
            alpha,
            phi,
            tau: 0.0,
            delta_omega: 0.0,
        }
    }
}

/// RF rotation. The simplified form is `Rz(φ)·Rx(−α)·Rz(−φ)`; the full form
/// tilts the rotation axis by the effective-field angle
/// `β = atan(τΔω/α)` and rotates by `α′ = −τ·√(Δω² + (α/τ)²)`.
pub fn rf_matrix(p: &RfPulse, simplified: bool) -> Result<Matrix3> {
    if simplified {
        return Ok(rot(Axis::Z, p.phi) * rot(Axis::X, -p.alpha) * rot(Axis::Z, -p.phi));
    }
    if p.alpha == 0.0 {
        return Err(Error::DegeneratePulse);
    }
    if !(p.tau > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "pulse duration must be positive for the full RF model, got {}",
            p.tau
        )));
    }
    let beta = (p.tau * p.delta_omega / p.alpha).atan();
    // the pulse interval equals its duration
    let dt = p.tau;
    let alpha_eff = -dt * (p.delta_omega.powi(2) + (p.alpha / p.tau).powi(2)).sqrt();
    Ok(rot(Axis::Z, p.phi)
        * rot(Axis::Y, beta)
        * rot(Axis::X, alpha_eff)
        * rot(Axis::Y, -beta)
        * rot(Axis::Z, -p.phi))
}

fn check_relaxation(t1: f64, t2: f64) -> Result<()> {
    if !(t1 > 0.0) || !(t2 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "relaxation times must be positive, got T1={t1}, T2={t2}"
        )));
    }
    Ok(())
}

#[inline]
fn decay(dt: f64, t: f64) -> f64 {
    (-dt / t).exp()
}

#[inline]
fn precession(dt: f64, df: f64) -> (f64, f64) {
    (TAU * df * dt).sin_cos()
}

/// Relaxation over `dt` seconds with no precession.
pub fn relax_step(m: Magnetization, dt: f64, t1: f64, t2: f64) -> Result<Magnetization> {
    check_relaxation(t1, t2)?;
    if !(dt >= 0.0) {
        return Err(Error::InvalidParameter(format!("negative interval {dt}")));
    }
    Ok(relax(m, decay(dt, t1), decay(dt, t2)))
}

#[inline]
fn relax(m: Magnetization, e1: f64, e2: f64) -> Magnetization {
    Magnetization {
        mx: m.mx * e2,
        my: m.my * e2,
        mz: 1.0 + (m.mz - 1.0) * e1,
    }
}

/// Relaxation followed by a z-rotation; the two commute.
#[inline]
fn free_evolution(m: Magnetization, e1: f64, e2: f64, sin: f64, cos: f64) -> Magnetization {
    let r = relax(m, e1, e2);
    Magnetization {
        mx: cos * r.mx - sin * r.my,
        my: sin * r.mx + cos * r.my,
        mz: r.mz,
    }
}

/// One repetition: RF, evolution to the echo, readout, evolution to the end
/// of the TR.
pub fn evolve_tr(
    m: Magnetization,
    pulse: &RfPulse,
    tr: f64,
    te: f64,
    params: &TissueParams,
    simplified: bool,
) -> Result<(Complex64, Magnetization)> {
    if !(te > 0.0 && te < tr) {
        return Err(Error::InvalidParameter(format!(
            "echo time must satisfy 0 < TE < TR, got TE={te}, TR={tr}"
        )));
    }
    let (t1, t2, df) = (params.t1_s(), params.t2_s(), params.df_hz);
    check_relaxation(t1, t2)?;
    let m = rf_matrix(pulse, simplified)?.apply(m);
    let (s, c) = precession(te, df);
    let m = free_evolution(m, decay(te, t1), decay(te, t2), s, c);
    let sample = m.transverse();
    let rest = tr - te;
    let (s, c) = precession(rest, df);
    let m = free_evolution(m, decay(rest, t1), decay(rest, t2), s, c);
    Ok((sample, m))
}

/// Which RF rotation the simulator applies at each excitation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RfModel {
    /// `Rz(φ)·Rx(−α)·Rz(−φ)`.
    Simplified,
    /// Tilted effective field with pulse duration `tau` seconds.
    Full { tau: f64 },
}

/// Per-timepoint decay factors for one relaxation time: `first` covers
/// RF→echo, `second` echo→next RF.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayTable {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

/// Per-timepoint `(sin, cos)` of the precession angle for one off-resonance.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecessionTable {
    pub first: Vec<(f64, f64)>,
    pub second: Vec<(f64, f64)>,
}

/// A schedule prepared for repeated simulation. Everything that does not
/// depend on tissue parameters is computed once.
#[derive(Debug, Clone)]
pub struct Simulator {
    first: Vec<f64>,
    second: Vec<f64>,
    flips: Vec<f64>,
    phases: Vec<f64>,
    rf: Vec<Matrix3>,
    inversion: Matrix3,
    model: RfModel,
}

impl Simulator {
    pub fn new(sched: &Schedule) -> Result<Self> {
        Self::with_model(sched, RfModel::Simplified)
    }

    pub fn with_model(sched: &Schedule, model: RfModel) -> Result<Self> {
        if sched.is_empty() {
            return Err(Error::InvalidParameter("empty schedule".into()));
        }
        let mut first = Vec::with_capacity(sched.len());
        let mut second = Vec::with_capacity(sched.len());
        let mut rf = Vec::with_capacity(sched.len());
        let mut flips = Vec::with_capacity(sched.len());
        let mut phases = Vec::with_capacity(sched.len());
        for e in sched.entries() {
            let (tr, te) = (e.tr_s(), e.te_s());
            if !(te > 0.0 && te < tr) {
                return Err(Error::InvalidParameter(format!(
                    "echo time must satisfy 0 < TE < TR, got TE={te}, TR={tr}"
                )));
            }
            first.push(te);
            second.push(tr - te);
            flips.push(e.flip_rad());
            phases.push(e.phase_rad());
            rf.push(rf_matrix(&RfPulse::hard(e.flip_rad(), e.phase_rad()), true)?);
        }
        if let RfModel::Full { tau } = model {
            if !(tau > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "pulse duration must be positive, got {tau}"
                )));
            }
        }
        Ok(Self {
            first,
            second,
            flips,
            phases,
            rf,
            inversion: rf_matrix(&RfPulse::hard(PI, 0.0), true)?,
            model,
        })
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    pub fn model(&self) -> RfModel {
        self.model
    }

    /// Decay factors for relaxation time `t` (seconds).
    pub fn decay_table(&self, t: f64) -> DecayTable {
        let mut first = Vec::with_capacity(self.len());
        let mut second = Vec::with_capacity(self.len());
        for (&a, &b) in self.first.iter().zip(&self.second) {
            let ea = decay(a, t);
            first.push(ea);
            second.push(if b == a { ea } else { decay(b, t) });
        }
        DecayTable { first, second }
    }

    pub fn precession_table(&self, df: f64) -> PrecessionTable {
        let mut first = Vec::with_capacity(self.len());
        let mut second = Vec::with_capacity(self.len());
        for (&a, &b) in self.first.iter().zip(&self.second) {
            let pa = precession(a, df);
            first.push(pa);
            second.push(if b == a { pa } else { precession(b, df) });
        }
        PrecessionTable { first, second }
    }

    /// RF rotations for off-resonance `df` Hz. Only the full model depends
    /// on `df`; `alpha = 0` excitations are the identity there.
    fn full_rf(&self, tau: f64, df: f64) -> Vec<Matrix3> {
        let dw = TAU * df;
        self.flips
            .iter()
            .zip(&self.phases)
            .map(|(&alpha, &phi)| {
                let p = RfPulse {
                    alpha,
                    phi,
                    tau,
                    delta_omega: dw,
                };
                rf_matrix(&p, false).unwrap_or(Matrix3::IDENTITY)
            })
            .collect()
    }

    /// Runs the train from equilibrium with the given factor tables and writes
    /// one sample per TR into `out`.
    pub fn run_tables(
        &self,
        t1: &DecayTable,
        t2: &DecayTable,
        prec: &PrecessionTable,
        df: f64,
        out: &mut [Complex64],
    ) {
        assert_eq!(out.len(), self.len());
        let full;
        let rf: &[Matrix3] = match self.model {
            RfModel::Simplified => &self.rf,
            RfModel::Full { tau } => {
                full = self.full_rf(tau, df);
                &full
            }
        };
        let mut m = self.inversion.apply(Magnetization::EQUILIBRIUM);
        for n in 0..self.len() {
            m = rf[n].apply(m);
            let (s, c) = prec.first[n];
            m = free_evolution(m, t1.first[n], t2.first[n], s, c);
            out[n] = m.transverse();
            let (s, c) = prec.second[n];
            m = free_evolution(m, t1.second[n], t2.second[n], s, c);
        }
    }

    pub fn simulate_into(&self, params: &TissueParams, out: &mut [Complex64]) -> Result<()> {
        check_relaxation(params.t1_s(), params.t2_s())?;
        let e1 = self.decay_table(params.t1_s());
        let e2 = self.decay_table(params.t2_s());
        let p = self.precession_table(params.df_hz);
        self.run_tables(&e1, &e2, &p, params.df_hz, out);
        Ok(())
    }

    pub fn simulate(&self, params: &TissueParams) -> Result<Fingerprint> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.len()];
        self.simulate_into(params, &mut out)?;
        Ok(Fingerprint::new(out))
    }
}

/// Ideal fingerprint for `params` under `sched`: inversion, then one sample
/// per schedule entry.
pub fn simulate_fingerprint(params: &TissueParams, sched: &Schedule) -> Result<Fingerprint> {
    Simulator::new(sched)?.simulate(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::build_schedule;
    use proptest::prelude::*;

    fn close(a: Magnetization, b: Magnetization, tol: f64) -> bool {
        (a.mx - b.mx).abs() < tol && (a.my - b.my).abs() < tol && (a.mz - b.mz).abs() < tol
    }

    #[test]
    fn zero_rotation_is_identity() {
        assert_eq!(rot(Axis::Z, 0.0), Matrix3::IDENTITY);
    }

    #[test]
    fn quarter_turn_about_z() {
        let v = rot(Axis::Z, PI / 2.0).apply(Magnetization::new(1.0, 0.0, 0.0));
        assert!(close(v, Magnetization::new(0.0, 1.0, 0.0), 1e-15));
    }

    #[test]
    fn inverse_rotation() {
        let p = rot(Axis::X, 0.6458) * rot(Axis::X, -0.6458);
        assert!(p.max_abs_diff(&Matrix3::IDENTITY) < 1e-12);
    }

    #[test]
    fn relax_identity_and_equilibrium() {
        let m = Magnetization::new(0.3, -0.2, -0.7);
        assert_eq!(relax_step(m, 0.0, 1.0, 0.1).unwrap(), m);
        let eq = relax_step(m, 100.0, 1.0, 0.1).unwrap();
        assert!(close(eq, Magnetization::EQUILIBRIUM, 1e-9));
    }

    #[test]
    fn relax_transverse_decay() {
        let m = relax_step(Magnetization::new(1.0, 0.0, 0.0), 0.05, 1.0, 0.05).unwrap();
        assert!((m.mx - (-1.0f64).exp()).abs() < 1e-15);
        assert!((m.mx - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn relax_rejects_bad_times() {
        let m = Magnetization::EQUILIBRIUM;
        assert!(relax_step(m, 0.1, 0.0, 0.1).is_err());
        assert!(relax_step(m, 0.1, 1.0, -0.1).is_err());
        assert!(relax_step(m, -0.1, 1.0, 0.1).is_err());
    }

    #[test]
    fn inversion_pulse() {
        let r = rf_matrix(&RfPulse::hard(PI, 0.0), true).unwrap();
        let v = r.apply(Magnetization::EQUILIBRIUM);
        assert!(close(v, Magnetization::new(0.0, 0.0, -1.0), 1e-15));
    }

    #[test]
    fn ninety_with_quarter_phase() {
        let r = rf_matrix(&RfPulse::hard(PI / 2.0, PI / 2.0), true).unwrap();
        let v = r.apply(Magnetization::EQUILIBRIUM);
        assert!(close(v, Magnetization::new(-1.0, 0.0, 0.0), 1e-15));
    }

    #[test]
    fn full_form_collapses_on_resonance() {
        for &tau in &[1e-4, 1e-3, 2.5e-3] {
            for &(alpha, phi) in &[(0.3, 0.0), (1.2, PI / 2.0), (PI, PI)] {
                let p = RfPulse {
                    alpha,
                    phi,
                    tau,
                    delta_omega: 0.0,
                };
                let full = rf_matrix(&p, false).unwrap();
                let simple = rf_matrix(&p, true).unwrap();
                assert!(full.max_abs_diff(&simple) < 1e-12);
            }
        }
    }

    #[test]
    fn full_form_rejects_zero_flip() {
        let p = RfPulse {
            alpha: 0.0,
            phi: 0.0,
            tau: 1e-3,
            delta_omega: 10.0,
        };
        assert!(matches!(rf_matrix(&p, false), Err(Error::DegeneratePulse)));
        assert!(rf_matrix(&p, true).is_ok());
    }

    #[test]
    fn full_form_is_a_rotation_off_resonance() {
        let p = RfPulse {
            alpha: 0.7,
            phi: 0.4,
            tau: 2e-3,
            delta_omega: TAU * 150.0,
        };
        let r = rf_matrix(&p, false).unwrap();
        assert!((r.transpose() * r).max_abs_diff(&Matrix3::IDENTITY) < 1e-12);
        assert!((r.det() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evolve_rejects_bad_echo() {
        let p = TissueParams::new(1000.0, 100.0, 0.0);
        let pulse = RfPulse::hard(0.5, 0.0);
        let m = Magnetization::EQUILIBRIUM;
        assert!(evolve_tr(m, &pulse, 0.01, 0.01, &p, true).is_err());
        assert!(evolve_tr(m, &pulse, 0.01, 0.0, &p, true).is_err());
        assert!(evolve_tr(m, &pulse, 0.01, 0.005, &p, true).is_ok());
    }

    #[test]
    fn evolve_short_t2_kills_signal() {
        let p = TissueParams::new(1000.0, 1e-3, 0.0); // T2 = 1 µs
        let pulse = RfPulse::hard(PI / 2.0, 0.0);
        let (s, _) = evolve_tr(Magnetization::EQUILIBRIUM, &pulse, 0.016, 0.008, &p, true).unwrap();
        assert!(s.norm() < 1e-9);
    }

    #[test]
    fn evolve_on_resonance_no_precession() {
        // with df = 0 the sample lies along the post-RF transverse direction
        let p = TissueParams::new(1000.0, 100.0, 0.0);
        let pulse = RfPulse::hard(PI / 2.0, 0.0);
        let (s, _) = evolve_tr(Magnetization::EQUILIBRIUM, &pulse, 0.016, 0.008, &p, true).unwrap();
        assert!(s.re.abs() < 1e-15);
        assert!((s.im - (-0.008f64 / 0.1).exp()).abs() < 1e-15);
    }

    #[test]
    fn simulator_matches_evolve_tr_bitwise() {
        let sched = build_schedule(60, 3).unwrap();
        let params = TissueParams::new(900.0, 80.0, 37.0);
        let fast = simulate_fingerprint(&params, &sched).unwrap();
        let mut m = rf_matrix(&RfPulse::hard(PI, 0.0), true)
            .unwrap()
            .apply(Magnetization::EQUILIBRIUM);
        for (n, e) in sched.entries().iter().enumerate() {
            let pulse = RfPulse::hard(e.flip_rad(), e.phase_rad());
            let (s, next) = evolve_tr(m, &pulse, e.tr_s(), e.te_s(), &params, true).unwrap();
            assert_eq!(s, fast.samples()[n], "timepoint {n}");
            m = next;
        }
    }

    #[test]
    fn full_model_close_to_simplified_for_short_pulses() {
        let sched = build_schedule(100, 5).unwrap();
        let params = TissueParams::new(1200.0, 90.0, 40.0);
        let a = Simulator::new(&sched).unwrap().simulate(&params).unwrap();
        let b = Simulator::with_model(&sched, RfModel::Full { tau: 1e-9 })
            .unwrap()
            .simulate(&params)
            .unwrap();
        for (x, y) in a.samples().iter().zip(b.samples()) {
            assert!((x - y).norm() < 1e-6);
        }
    }

    #[test]
    fn determinism() {
        let sched = build_schedule(500, 1).unwrap();
        let p = TissueParams::new(1400.0, 500.0, 100.0);
        let a = simulate_fingerprint(&p, &sched).unwrap();
        let b = simulate_fingerprint(&p, &sched).unwrap();
        assert_eq!(a.len(), 500);
        assert!(a
            .samples()
            .iter()
            .zip(b.samples())
            .all(|(x, y)| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits()));
    }

    proptest! {
        #[test]
        fn rotations_are_proper(theta in -10.0f64..10.0, k in 0usize..3) {
            let axis = [Axis::X, Axis::Y, Axis::Z][k];
            let r = rot(axis, theta);
            prop_assert!((r.transpose() * r).max_abs_diff(&Matrix3::IDENTITY) < 1e-12);
            prop_assert!((r.det() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn simplified_rf_preserves_norm(
            alpha in 0.0f64..PI, phi in -PI..PI,
            x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0,
        ) {
            let m = Magnetization::new(x, y, z);
            let r = rf_matrix(&RfPulse::hard(alpha, phi), true).unwrap();
            prop_assert!((r.apply(m).norm() - m.norm()).abs() < 1e-12);
        }

        #[test]
        fn relaxation_contracts_toward_equilibrium(
            x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0,
            dt in 0.0f64..5.0, t1 in 0.01f64..5.0, t2 in 0.001f64..2.0,
        ) {
            let m = Magnetization::new(x, y, z);
            let r = relax_step(m, dt, t1, t2).unwrap();
            prop_assert!(r.transverse().norm() <= m.transverse().norm() + 1e-15);
            prop_assert!(r.mz >= z.min(1.0) - 1e-15 && r.mz <= z.max(1.0) + 1e-15);
        }
    }
}
