//! Two-element Windkessel hemodynamics: closed-form pressure dynamics per
//! cardiac phase, the heart-rate definition, and a Runge–Kutta reference
//! integrator used as the independent oracle for the closed form.
//!
//! Units: pressure in mmHg, resistance in mmHg·s/L, compliance in L/mmHg,
//! times in seconds, cardiac output in L/min. With these, the half-sinusoid
//! inflow amplitude is I₀ = π·CO·(Ts+Td)/(120·Ts) in L/s and the mean
//! pressure sanity-checks to ≈ R·CO/60.

use serde::{Deserialize, Serialize};

use crate::diffcore::Real;
use crate::error::{LpsError, Result};

/// Bounds on the cardiac cycle length accepted by the simulator.
pub const CYCLE_GUARD: (f64, f64) = (0.2, 3.0);

/// The five latent clinical concepts, generic over the scalar type so the
/// same formulas run on plain numbers and on tape variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Concepts<T> {
    /// Systemic vascular resistance [mmHg·s/L].
    pub r: T,
    /// Arterial compliance [L/mmHg].
    pub c: T,
    /// Systole time [s].
    pub ts: T,
    /// Diastole time [s].
    pub td: T,
    /// Cardiac output [L/min].
    pub co: T,
}

pub type ConceptVector = Concepts<f64>;

/// Field names in the fixed concept order used throughout.
pub const CONCEPT_NAMES: [&str; 5] = ["R", "C", "Ts", "Td", "CO"];

impl<T: Copy> Concepts<T> {
    pub fn as_array(&self) -> [T; 5] {
        [self.r, self.c, self.ts, self.td, self.co]
    }

    pub fn from_array(a: [T; 5]) -> Self {
        Concepts {
            r: a[0],
            c: a[1],
            ts: a[2],
            td: a[3],
            co: a[4],
        }
    }
}

impl ConceptVector {
    /// Validated constructor: all components strictly positive and the
    /// cycle length inside the physiological guard.
    pub fn new(r: f64, c: f64, ts: f64, td: f64, co: f64) -> Result<Self> {
        let z = Concepts { r, c, ts, td, co };
        z.validate()?;
        Ok(z)
    }

    pub fn validate(&self) -> Result<()> {
        validate_concepts(self)
    }
}

fn validate_concepts<T: Real>(z: &Concepts<T>) -> Result<()> {
    for (name, v) in CONCEPT_NAMES.iter().zip(z.as_array()) {
        if !(v.val() > 0.0) {
            return Err(LpsError::domain(
                "concepts",
                format!("{name} must be strictly positive, got {}", v.val()),
            ));
        }
    }
    let cycle = z.ts.val() + z.td.val();
    if !(cycle > CYCLE_GUARD.0 && cycle < CYCLE_GUARD.1) {
        return Err(LpsError::domain(
            "concepts",
            format!(
                "cycle length Ts+Td = {cycle:.4} s outside physiological guard ({}, {})",
                CYCLE_GUARD.0, CYCLE_GUARD.1
            ),
        ));
    }
    Ok(())
}

/// End-systolic/diastolic pressures and heart rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vitals<T> {
    pub bp_sys: T,
    pub bp_dias: T,
    pub hr: T,
}

pub type VitalsEstimate = Vitals<f64>;

/// Settle/average schedule and initial pressure for the simulation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WindkesselConfig {
    pub settle_cycles: u32,
    pub average_cycles: u32,
    /// Initial pressure [mmHg]; immaterial after settling for fast decay.
    pub p0: f64,
}

impl Default for WindkesselConfig {
    fn default() -> Self {
        WindkesselConfig {
            settle_cycles: 4,
            average_cycles: 6,
            p0: 80.0,
        }
    }
}

/// Half-sinusoid inflow amplitude I₀ [L/s], fixed by requiring the flow
/// over one systole to equal the stroke volume CO·(Ts+Td)/60.
pub fn inflow_amplitude<T: Real>(z: &Concepts<T>) -> T {
    (z.co * (z.ts + z.td)).mul_c(std::f64::consts::PI / 120.0) / z.ts
}

/// Input blood flow I(t) [L/s] at a time within one cardiac cycle:
/// I₀·sin(πt/Ts) during systole, zero during diastole.
pub fn inflow(t: f64, z: &ConceptVector) -> Result<f64> {
    let cycle = z.ts + z.td;
    if !(0.0..cycle).contains(&t) {
        return Err(LpsError::Usage(format!(
            "inflow time {t} outside cycle [0, {cycle})"
        )));
    }
    if t < z.ts {
        Ok(inflow_amplitude(z) * (std::f64::consts::PI * t / z.ts).sin())
    } else {
        Ok(0.0)
    }
}

/// Closed-form systolic pressure at time t ∈ [0, Ts] from `p_start`.
///
/// Solves C·dP/dt + P/R = I₀·sin(ωt) with ω = π/Ts, k = 1/(RC), A = I₀/C:
/// P(t) = P_p(t) + (p_start − P_p(0))·e^{−kt},
/// P_p(t) = A·(k·sin ωt − ω·cos ωt)/(k² + ω²).
pub fn systole_pressure<T: Real>(t: f64, p_start: T, z: &Concepts<T>) -> T {
    let k = (z.r * z.c).rdiv_c(1.0);
    let omega = z.ts.rdiv_c(std::f64::consts::PI);
    let a = inflow_amplitude(z) / z.c;
    let denom = k.square() + omega.square();
    let phase = omega.mul_c(t);
    let particular = a * (k * phase.sin() - omega * phase.cos()) / denom;
    let particular0 = -(a * omega) / denom;
    particular + (p_start - particular0) * (k.mul_c(-t)).exp()
}

/// Zero-input diastolic decay: P(t) = p_start·e^{−t/(RC)} for t ∈ [0, Td].
pub fn diastole_pressure<T: Real>(t: f64, p_start: T, z: &Concepts<T>) -> T {
    p_start * (z.r * z.c).rdiv_c(-t).exp()
}

/// End-systolic pressure as a closed-form function of the concepts, so the
/// evaluation instant t = Ts stays on the differentiation path. At t = Ts
/// the particular solution reduces to A·ω/(k²+ω²) since sin(π) = 0.
fn systole_end<T: Real>(p_start: T, z: &Concepts<T>) -> T {
    let k = (z.r * z.c).rdiv_c(1.0);
    let omega = z.ts.rdiv_c(std::f64::consts::PI);
    let a = inflow_amplitude(z) / z.c;
    let pp_end = a * omega / (k.square() + omega.square());
    // P_p(0) = −pp_end, hence the "+" in the transient coefficient.
    pp_end + (p_start + pp_end) * (-(k * z.ts)).exp()
}

/// End-diastolic pressure with Td on the differentiation path.
fn diastole_end<T: Real>(p_start: T, z: &Concepts<T>) -> T {
    p_start * (-(z.td / (z.r * z.c))).exp()
}

/// Chains the closed-form phases from `cfg.p0` for `settle_cycles`, then
/// averages the end-systolic and end-diastolic pressures over the next
/// `average_cycles`. Heart rate is 60/(Ts+Td).
pub fn simulate_vitals<T: Real>(z: &Concepts<T>, cfg: &WindkesselConfig) -> Result<Vitals<T>> {
    validate_concepts(z)?;
    let mut p = z.r.lift(cfg.p0);
    for _ in 0..cfg.settle_cycles {
        p = diastole_end(systole_end(p, z), z);
    }
    let mut sys_acc: Option<T> = None;
    let mut dias_acc: Option<T> = None;
    for _ in 0..cfg.average_cycles {
        let end_sys = systole_end(p, z);
        p = diastole_end(end_sys, z);
        sys_acc = Some(match sys_acc {
            None => end_sys,
            Some(acc) => acc + end_sys,
        });
        dias_acc = Some(match dias_acc {
            None => p,
            Some(acc) => acc + p,
        });
    }
    let n = f64::from(cfg.average_cycles.max(1));
    Ok(Vitals {
        bp_sys: sys_acc.unwrap().div_c(n),
        bp_dias: dias_acc.unwrap().div_c(n),
        hr: (z.ts + z.td).rdiv_c(60.0),
    })
}

/// Classic fourth-order Runge–Kutta integration of C·dP/dt + P/R = I(t),
/// phase-aligned so steps never straddle the systole/diastole switch.
/// Returns (t, P) samples including the initial point.
pub fn rk4_reference(
    z: &ConceptVector,
    dt: f64,
    n_cycles: u32,
    p0: f64,
) -> Result<Vec<(f64, f64)>> {
    if dt > 1e-3 || dt <= 0.0 {
        return Err(LpsError::Usage(format!(
            "rk4_reference requires 0 < dt <= 1e-3 s, got {dt}"
        )));
    }
    z.validate()?;
    let i0 = inflow_amplitude(z);
    let mut samples = Vec::new();
    let mut t_global = 0.0;
    let mut p = p0;
    samples.push((t_global, p));

    let integrate_phase = |p: &mut f64,
                               t_global: &mut f64,
                               duration: f64,
                               flow: &dyn Fn(f64) -> f64,
                               samples: &mut Vec<(f64, f64)>| {
        let n_steps = (duration / dt).round().max(1.0) as usize;
        let h = duration / n_steps as f64;
        let deriv = |t: f64, p: f64| (flow(t) - p / z.r) / z.c;
        let mut t_local = 0.0;
        for _ in 0..n_steps {
            let k1 = deriv(t_local, *p);
            let k2 = deriv(t_local + h / 2.0, *p + h / 2.0 * k1);
            let k3 = deriv(t_local + h / 2.0, *p + h / 2.0 * k2);
            let k4 = deriv(t_local + h, *p + h * k3);
            *p += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t_local += h;
            *t_global += h;
            samples.push((*t_global, *p));
        }
    };

    for _ in 0..n_cycles {
        let omega = std::f64::consts::PI / z.ts;
        integrate_phase(
            &mut p,
            &mut t_global,
            z.ts,
            &|t| i0 * (omega * t).sin(),
            &mut samples,
        );
        integrate_phase(&mut p, &mut t_global, z.td, &|_| 0.0, &mut samples);
    }
    Ok(samples)
}

/// RK4-integrated analog of [`simulate_vitals`] with matched chaining;
/// the oracle for the closed-form pipeline.
pub fn rk4_vitals(z: &ConceptVector, dt: f64, cfg: &WindkesselConfig) -> Result<VitalsEstimate> {
    if dt > 1e-3 || dt <= 0.0 {
        return Err(LpsError::Usage(format!(
            "rk4_vitals requires 0 < dt <= 1e-3 s, got {dt}"
        )));
    }
    z.validate()?;
    let i0 = inflow_amplitude(z);
    let omega = std::f64::consts::PI / z.ts;
    let step_phase = |p0: f64, duration: f64, systole: bool| -> f64 {
        let n_steps = (duration / dt).round().max(1.0) as usize;
        let h = duration / n_steps as f64;
        let deriv = |t: f64, p: f64| {
            let flow = if systole { i0 * (omega * t).sin() } else { 0.0 };
            (flow - p / z.r) / z.c
        };
        let mut p = p0;
        let mut t = 0.0;
        for _ in 0..n_steps {
            let k1 = deriv(t, p);
            let k2 = deriv(t + h / 2.0, p + h / 2.0 * k1);
            let k3 = deriv(t + h / 2.0, p + h / 2.0 * k2);
            let k4 = deriv(t + h, p + h * k3);
            p += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t += h;
        }
        p
    };
    let mut p = cfg.p0;
    for _ in 0..cfg.settle_cycles {
        p = step_phase(step_phase(p, z.ts, true), z.td, false);
    }
    let mut sys_sum = 0.0;
    let mut dias_sum = 0.0;
    for _ in 0..cfg.average_cycles {
        let end_sys = step_phase(p, z.ts, true);
        p = step_phase(end_sys, z.td, false);
        sys_sum += end_sys;
        dias_sum += p;
    }
    let n = f64::from(cfg.average_cycles.max(1));
    Ok(Vitals {
        bp_sys: sys_sum / n,
        bp_dias: dias_sum / n,
        hr: 60.0 / (z.ts + z.td),
    })
}

/// Inverts the diastolic decay: τ = RC = Td / ln(bp_sys / bp_dias).
pub fn estimate_tau(bp_sys: f64, bp_dias: f64, td: f64) -> Result<f64> {
    if !(bp_sys > bp_dias && bp_dias > 0.0) {
        return Err(LpsError::domain(
            "estimate_tau",
            format!("requires bp_sys > bp_dias > 0, got {bp_sys} / {bp_dias}"),
        ));
    }
    if td <= 0.0 {
        return Err(LpsError::domain(
            "estimate_tau",
            format!("requires Td > 0, got {td}"),
        ));
    }
    Ok(td / (bp_sys / bp_dias).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn demo_z() -> ConceptVector {
        ConceptVector::new(1000.0, 0.0015, 0.3, 0.6, 6.0).unwrap()
    }

    /// Random draw from physiological ranges (log-uniform).
    pub(crate) fn random_physio_z(rng: &mut impl Rng) -> ConceptVector {
        ConceptVector::new(
            rng.gen_range(700.0..1800.0),
            rng.gen_range(0.0008..0.0022),
            rng.gen_range(0.22..0.34),
            rng.gen_range(0.38..0.65),
            rng.gen_range(3.0..8.0),
        )
        .unwrap()
    }

    #[test]
    fn concept_guard() {
        assert!(ConceptVector::new(1000.0, 0.0015, 0.3, 0.6, 6.0).is_ok());
        assert!(ConceptVector::new(-1.0, 0.0015, 0.3, 0.6, 6.0).is_err());
        assert!(ConceptVector::new(1000.0, 0.0015, 1.5, 1.6, 6.0).is_err());
        assert!(ConceptVector::new(1000.0, 0.0015, 0.05, 0.05, 6.0).is_err());
    }

    #[test]
    fn inflow_examples() {
        let z = demo_z();
        // Diastole carries no inflow.
        for &t in &[0.3, 0.45, 0.89] {
            assert_eq!(inflow(t, &z).unwrap(), 0.0);
        }
        // Peak at Ts/2 equals I₀ = 0.15π.
        let i0 = inflow_amplitude(&z);
        assert!((i0 - 0.15 * std::f64::consts::PI).abs() < 1e-12);
        assert!((inflow(0.15, &z).unwrap() - i0).abs() < 1e-12);
        assert!(inflow(0.9, &z).is_err());

        // Quadrature of the half-sinusoid equals the stroke volume
        // CO·(Ts+Td)/60 = 0.09 L (Simpson's rule).
        let n = 2000;
        let h = z.ts / n as f64;
        let mut integral = 0.0;
        for i in 0..n {
            let a = i as f64 * h;
            let fa = inflow(a, &z).unwrap();
            let fm = inflow(a + h / 2.0, &z).unwrap();
            let fb = inflow(a + h, &z).unwrap();
            integral += h / 6.0 * (fa + 4.0 * fm + fb);
        }
        assert!((integral - 0.09).abs() < 1e-9, "integral = {integral}");
    }

    #[test]
    fn systole_initial_condition_and_decay() {
        let z = demo_z();
        assert!((systole_pressure(0.0, 95.0, &z) - 95.0).abs() < 1e-12);
        // CO → 0 leaves the homogeneous decay p_start·e^{−kt}.
        let z0 = Concepts { co: 0.0, ..demo_z() };
        let t = 0.2;
        let k = 1.0 / (z0.r * z0.c);
        let expect = 95.0 * (-k * t).exp();
        assert!((systole_pressure(t, 95.0, &z0) - expect).abs() < 1e-12);
    }

    #[test]
    fn systole_matches_rk4_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..5 {
            let z = random_physio_z(&mut rng);
            let p_start = rng.gen_range(60.0..100.0);
            // Single-phase RK4 at dt=1e-5 (manual, no inflow switch).
            let i0 = inflow_amplitude(&z);
            let omega = std::f64::consts::PI / z.ts;
            let deriv =
                |t: f64, p: f64| (i0 * (omega * t).sin() - p / z.r) / z.c;
            let n_steps = (z.ts / 1e-5).round() as usize;
            let h = z.ts / n_steps as f64;
            let mut p = p_start;
            let mut t = 0.0;
            let mut max_diff = 0.0f64;
            for _ in 0..n_steps {
                let k1 = deriv(t, p);
                let k2 = deriv(t + h / 2.0, p + h / 2.0 * k1);
                let k3 = deriv(t + h / 2.0, p + h / 2.0 * k2);
                let k4 = deriv(t + h, p + h * k3);
                p += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                t += h;
                let closed = systole_pressure(t, p_start, &z);
                max_diff = max_diff.max((closed - p).abs());
            }
            assert!(max_diff < 1e-3, "max diff {max_diff}");
        }
    }

    #[test]
    fn diastole_identities() {
        let z = ConceptVector::new(1000.0, 0.0015, 0.3, 0.6, 6.0).unwrap();
        assert_eq!(diastole_pressure(0.0, 100.0, &z), 100.0);
        // One e-folding: RC = 1.5 s.
        let v = diastole_pressure(1.5, 100.0, &z);
        assert!((v - 100.0 / std::f64::consts::E).abs() < 1e-10);
        // log(p_start/P(Td)) = Td/τ exactly.
        let p_td = diastole_pressure(z.td, 100.0, &z);
        assert!(((100.0 / p_td).ln() - z.td / 1.5).abs() < 1e-12);
    }

    #[test]
    fn heart_rate_is_cycle_reciprocal() {
        let z = ConceptVector::new(1500.0, 0.001, 0.25, 0.55, 5.0).unwrap();
        let v = simulate_vitals(&z, &WindkesselConfig::default()).unwrap();
        assert!((v.hr - 75.0).abs() < 1e-12);
        // Independent of R, C, CO.
        let z2 = ConceptVector::new(800.0, 0.002, 0.25, 0.55, 7.0).unwrap();
        let v2 = simulate_vitals(&z2, &WindkesselConfig::default()).unwrap();
        assert_eq!(v.hr, v2.hr);
    }

    #[test]
    fn simulate_matches_rk4_oracle() {
        let z = demo_z();
        let cfg = WindkesselConfig::default();
        let closed = simulate_vitals(&z, &cfg).unwrap();
        let rk = rk4_vitals(&z, 1e-4, &cfg).unwrap();
        assert!((closed.bp_sys - rk.bp_sys).abs() < 0.05, "{closed:?} vs {rk:?}");
        assert!((closed.bp_dias - rk.bp_dias).abs() < 0.05);
        // Physiological sanity at defaults: mean pressure ≈ R·CO/60 = 100.
        assert!(closed.bp_sys > 100.0 && closed.bp_sys < 140.0, "{closed:?}");
        assert!(closed.bp_dias > 60.0 && closed.bp_dias < 100.0, "{closed:?}");
    }

    #[test]
    fn rk4_decay_matches_analytic_when_unforced() {
        let z = Concepts { co: 1e-12, ..demo_z() };
        let z = ConceptVector::new(z.r, z.c, z.ts, z.td, z.co).unwrap();
        let samples = rk4_reference(&z, 1e-4, 2, 90.0).unwrap();
        let tau = z.r * z.c;
        let mut worst = 0.0f64;
        for &(t, p) in &samples {
            let expect = 90.0 * (-t / tau).exp();
            worst = worst.max(((p - expect) / expect).abs());
        }
        assert!(worst < 1e-8, "worst rel err {worst}");
    }

    #[test]
    fn rk4_fourth_order_convergence() {
        // Error against a much finer reference shrinks ~16x per halving of
        // dt. Fast dynamics keep the truncation error well above the f64
        // roundoff floor at these step sizes.
        let z = ConceptVector::new(900.0, 0.0008, 0.22, 0.38, 6.0).unwrap();
        let cycle_ends = |dt: f64| -> Vec<f64> {
            let samples = rk4_reference(&z, dt, 10, 80.0).unwrap();
            let per_cycle = (samples.len() - 1) / 10;
            (1..=10).map(|k| samples[k * per_cycle].1).collect()
        };
        let reference = cycle_ends(1e-4);
        let err = |dt: f64| -> f64 {
            cycle_ends(dt)
                .iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max)
        };
        let e1 = err(8e-4);
        let e2 = err(4e-4);
        let ratio = e1 / e2;
        assert!(
            (10.0..26.0).contains(&ratio),
            "convergence ratio {ratio} (e1={e1:.3e}, e2={e2:.3e})"
        );
    }

    #[test]
    fn waveform_periodic_after_settling() {
        // tau = 0.45 s decays far below 1e-4 within the first eight cycles.
        let z = ConceptVector::new(1000.0, 0.00045, 0.3, 0.6, 6.0).unwrap();
        let samples = rk4_reference(&z, 1e-4, 10, 80.0).unwrap();
        let per_cycle = (samples.len() - 1) / 10;
        let cycle9 = &samples[8 * per_cycle + 1..9 * per_cycle + 1];
        let cycle10 = &samples[9 * per_cycle + 1..10 * per_cycle + 1];
        let mut worst = 0.0f64;
        for (a, b) in cycle9.iter().zip(cycle10) {
            worst = worst.max((a.1 - b.1).abs());
        }
        assert!(worst < 1e-4, "cycle drift {worst}");
    }

    #[test]
    fn tau_estimation() {
        let tau = estimate_tau(120.0, 120.0 / std::f64::consts::E, 1.0).unwrap();
        assert!((tau - 1.0).abs() < 1e-12);
        // bp_sys = bp_dias · e^{0.5} → τ = 0.6/0.5 = 1.2
        let tau2 = estimate_tau(100.0 * 0.5f64.exp(), 100.0, 0.6).unwrap();
        assert!((tau2 - 1.2).abs() < 1e-12);
        assert!(estimate_tau(80.0, 90.0, 0.6).is_err());

        // Round trip: diastole with RC=τ reproduces bp_dias from bp_sys.
        let z = ConceptVector::new(tau2 / 0.0015, 0.0015, 0.3, 0.6, 6.0).unwrap();
        let p_td = diastole_pressure(z.td, 100.0 * 0.5f64.exp(), &z);
        assert!((p_td - 100.0).abs() < 1e-9);
    }

    #[test]
    fn outputs_linear_in_cardiac_output_from_rest() {
        // With P0 = 0 the response is exactly linear in the inflow, hence
        // degree-1 homogeneous in CO.
        let cfg = WindkesselConfig { p0: 0.0, ..Default::default() };
        let z = demo_z();
        let v1 = simulate_vitals(&z, &cfg).unwrap();
        for lambda in [2.0, 3.0] {
            let zl = ConceptVector::new(z.r, z.c, z.ts, z.td, z.co * lambda).unwrap();
            let vl = simulate_vitals(&zl, &cfg).unwrap();
            assert!(((vl.bp_sys / lambda - v1.bp_sys) / v1.bp_sys).abs() < 1e-9);
            assert!(((vl.bp_dias / lambda - v1.bp_dias) / v1.bp_dias).abs() < 1e-9);
        }
    }

    #[test]
    fn p0_influence_bounded_by_transient() {
        // The P0 transient decays like e^{-t/tau}; for fast decay the
        // averaged outputs are insensitive to the initial pressure.
        let fast = ConceptVector::new(1000.0, 0.0006, 0.3, 0.6, 6.0).unwrap(); // tau = 0.6 s
        let cfg_lo = WindkesselConfig { p0: 40.0, ..Default::default() };
        let cfg_hi = WindkesselConfig { p0: 120.0, ..Default::default() };
        let v_lo = simulate_vitals(&fast, &cfg_lo).unwrap();
        let v_hi = simulate_vitals(&fast, &cfg_hi).unwrap();
        assert!((v_lo.bp_sys - v_hi.bp_sys).abs() < 0.1);
        assert!((v_lo.bp_dias - v_hi.bp_dias).abs() < 0.1);

        // For slower decay the sensitivity matches the e^{-settle/tau}
        // bound rather than vanishing.
        let slow = demo_z(); // tau = 1.5 s
        let s_lo = simulate_vitals(&slow, &cfg_lo).unwrap();
        let s_hi = simulate_vitals(&slow, &cfg_hi).unwrap();
        let delta = (s_hi.bp_sys - s_lo.bp_sys).abs();
        let cycle = slow.ts + slow.td;
        let bound = 80.0 * (-(4.0 * cycle) / 1.5f64).exp();
        assert!(delta <= bound, "delta {delta} vs bound {bound}");
        assert!(delta > 0.1, "transient unexpectedly small: {delta}");
    }

    #[test]
    fn closed_form_gradients_match_finite_differences() {
        use crate::diffcore::finite_diff_check_scaled;
        let z = demo_z();
        let point = z.as_array();
        let err = finite_diff_check_scaled(
            |_, v| {
                let zc = Concepts::from_array([v[0], v[1], v[2], v[3], v[4]]);
                Ok(simulate_vitals(&zc, &WindkesselConfig::default())?.bp_sys)
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "bp_sys gradient err = {err}");
    }
}
