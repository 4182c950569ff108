//! Exact optimal control for the four-level chain with two consecutive
//! decaying intermediates.
//!
//! Population moves `|1> -> |4>` through levels 2 and 3, both decaying at
//! rate `k`; the intermediate coupling is capped at `A` while pump and
//! Stokes are free. In polar blocks `r1 = sqrt(x1^2+x2^2)`,
//! `r2 = sqrt(x3^2+x4^2)` with `u1 = cos(theta1)`, `u2 = cos(theta2)` the
//! dynamics is `dr/dt = [[-k u1^2, -A u1 u2],[A u1 u2, -k u2^2]] r`.
//!
//! Two regimes, with `xi = k/A`:
//!
//! * Case I, `T <= arccot(2 xi)/A`: hard pump at 0, hard Stokes at T,
//!   `u1* = u2* = 1` throughout, efficiency `exp(-kT) sin(AT)`.
//! * Case II: three phases - pump ramp on `[0, tau]`, hold on
//!   `[tau, T-tau]`, mirrored Stokes ramp on `[T-tau, T]` - an intuitive
//!   pump-then-Stokes ordering, not a counter-intuitive one. `tau` solves
//!   `T = 2 tau + (gamma2 - gamma1)/A`.
//!
//! Even as `T -> infinity` the efficiency only reaches
//! `sqrt(1 + xi^2) - xi < 1` for any `xi > 0`.

use serde::{Deserialize, Serialize};

use crate::roots::{bisect, scan_then_bisect};
use crate::{Error, Result};

const FRAC_PI_4: f64 = std::f64::consts::FRAC_PI_4;

/// Regime of the four-level optimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FourLevelCase {
    I,
    II,
}

/// Horizon separating Case I from Case II: `arccot(2 xi)/A`.
pub fn case_boundary(k: f64, a: f64) -> Result<f64> {
    validate_ka(k, a)?;
    Ok(1.0f64.atan2(2.0 * k / a) / a)
}

/// Classify a horizon; the boundary itself is Case I (closed threshold).
pub fn classify_case(k: f64, a: f64, t_final: f64) -> Result<FourLevelCase> {
    if !(t_final > 0.0) {
        return Err(Error::contract("classify_case needs T > 0"));
    }
    if t_final <= case_boundary(k, a)? {
        Ok(FourLevelCase::I)
    } else {
        Ok(FourLevelCase::II)
    }
}

/// Case I efficiency `exp(-kT) sin(AT)`, exact for `T` up to the boundary.
pub fn case1_efficiency(k: f64, a: f64, t_final: f64) -> Result<f64> {
    let boundary = case_boundary(k, a)?;
    if !(t_final > 0.0 && t_final <= boundary * (1.0 + 1e-12)) {
        return Err(Error::contract(format!(
            "case1_efficiency applies for 0 < T <= {boundary:.6}, got {t_final}"
        )));
    }
    Ok((-k * t_final).exp() * (a * t_final).sin())
}

/// Infinite-horizon efficiency `sqrt(1 + xi^2) - xi`.
///
/// Strictly decreasing in `xi`; 1 only at `xi = 0`; `~ 1/(2 xi)` for large
/// `xi`. Evaluated in the cancellation-free form `1/(sqrt(1+xi^2) + xi)`.
pub fn asymptotic_efficiency(xi: f64) -> Result<f64> {
    if !(xi >= 0.0) {
        return Err(Error::contract("asymptotic_efficiency needs xi >= 0"));
    }
    Ok(1.0 / ((1.0 + xi * xi).sqrt() + xi))
}

/// `kappa(tau) = 1 + 2 xi^2 - 2 xi sqrt(1+xi^2) coth(A sqrt(1+xi^2) tau + 2 asinh(xi))`.
///
/// Runs from 0 at `tau = 0` to the square of the asymptotic efficiency as
/// `tau -> infinity`. `coth` is evaluated via `exp(-2x)` so large arguments
/// never overflow.
pub fn kappa(k: f64, a: f64, tau: f64) -> Result<f64> {
    validate_ka(k, a)?;
    let xi = k / a;
    let s = (1.0 + xi * xi).sqrt();
    let x = a * s * tau + 2.0 * xi.asinh();
    let e = (-2.0 * x).exp();
    let coth = (1.0 + e) / (1.0 - e);
    Ok(1.0 + 2.0 * xi * xi - 2.0 * xi * s * coth)
}

fn gammas(xi: f64, kap: f64) -> (f64, f64) {
    // gamma1 = arccot((1-kappa)/(2 xi kappa)), gamma2 = arctan((1-kappa)/(2 xi))
    let gamma1 = (2.0 * xi * kap).atan2(1.0 - kap);
    let gamma2 = (1.0 - kap).atan2(2.0 * xi);
    (gamma1, gamma2)
}

/// The solved four-level optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourLevelSolution {
    pub case_label: FourLevelCase,
    pub k: f64,
    pub a: f64,
    pub horizon: f64,
    /// Ramp length; Case II only.
    pub tau: Option<f64>,
    pub kappa: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub xi: f64,
    pub predicted_efficiency_finite: f64,
    pub predicted_efficiency_infinite: f64,
}

fn validate_ka(k: f64, a: f64) -> Result<()> {
    if !(k >= 0.0 && k.is_finite()) || !(a > 0.0 && a.is_finite()) {
        return Err(Error::contract("need k >= 0 and A > 0"));
    }
    Ok(())
}

/// Solve the Case II transcendental `T = 2 tau + (gamma2 - gamma1)/A`.
///
/// The residual is 0 exactly at the case boundary (`tau = 0`, `kappa = 0`)
/// and `(gamma2 - gamma1)/A >= 0` at `tau = T/2`, so `[0, T/2]` brackets the
/// root. Monotonicity is checked by sampling; a scan-then-bisect fallback
/// covers the (unobserved) non-monotone case.
pub fn case2_solve(k: f64, a: f64, t_final: f64) -> Result<FourLevelSolution> {
    validate_ka(k, a)?;
    if classify_case(k, a, t_final)? != FourLevelCase::II {
        return Err(Error::contract(format!(
            "T = {t_final} is in the Case I regime"
        )));
    }
    let xi = k / a;
    let eta_inf = asymptotic_efficiency(xi)?;
    if xi == 0.0 {
        // lossless limit: a quarter rotation fits in any T past the boundary
        return Ok(FourLevelSolution {
            case_label: FourLevelCase::II,
            k,
            a,
            horizon: t_final,
            tau: Some(0.5 * t_final),
            kappa: 1.0,
            gamma1: FRAC_PI_4,
            gamma2: FRAC_PI_4,
            xi,
            predicted_efficiency_finite: 1.0,
            predicted_efficiency_infinite: 1.0,
        });
    }

    let residual = |tau: f64| -> f64 {
        let kap = kappa(k, a, tau).expect("validated inputs");
        let (g1, g2) = gammas(xi, kap);
        2.0 * tau + (g2 - g1) / a - t_final
    };
    let hi = 0.5 * t_final;
    // residual should increase in tau; verify on a coarse sample
    let mut monotone = true;
    let mut prev = residual(0.0);
    for i in 1..=32 {
        let r = residual(hi * i as f64 / 32.0);
        if r < prev - 1e-12 * t_final.max(1.0) {
            monotone = false;
            break;
        }
        prev = r;
    }
    let tol = 1e-13 * t_final.max(1.0);
    let tau = if monotone {
        bisect(residual, 0.0, hi, tol)?
    } else {
        scan_then_bisect(residual, 0.0, hi, 1024, tol)?
    };
    if residual(tau).abs() > 1e-9 * t_final.max(1.0) {
        return Err(Error::numerical(format!(
            "case2_solve: residual {:.3e} at tau = {tau}",
            residual(tau)
        )));
    }

    let kap = kappa(k, a, tau)?;
    let (gamma1, gamma2) = gammas(xi, kap);
    // finite-horizon efficiency; the angle in the `1 - xi sin(2 theta2)`
    // factor is gamma2, which makes the expression exactly continuous with
    // Case I at the boundary and exactly sqrt(1+xi^2)-xi as T -> infinity
    let eta_t = (xi * (gamma1 - gamma2)).exp() * (1.0 - xi * (2.0 * gamma2).sin())
        / (gamma1 + gamma2).sin();
    Ok(FourLevelSolution {
        case_label: FourLevelCase::II,
        k,
        a,
        horizon: t_final,
        tau: Some(tau),
        kappa: kap,
        gamma1,
        gamma2,
        xi,
        predicted_efficiency_finite: eta_t,
        predicted_efficiency_infinite: eta_inf,
    })
}

/// Finite-horizon Case II efficiency.
pub fn case2_efficiency(k: f64, a: f64, t_final: f64) -> Result<f64> {
    Ok(case2_solve(k, a, t_final)?.predicted_efficiency_finite)
}

/// Solve either case and report a uniform solution record.
pub fn solve(k: f64, a: f64, t_final: f64) -> Result<FourLevelSolution> {
    match classify_case(k, a, t_final)? {
        FourLevelCase::II => case2_solve(k, a, t_final),
        FourLevelCase::I => {
            let xi = k / a;
            Ok(FourLevelSolution {
                case_label: FourLevelCase::I,
                k,
                a,
                horizon: t_final,
                tau: None,
                kappa: 0.0,
                gamma1: 0.0,
                gamma2: 1.0f64.atan2(2.0 * xi),
                xi,
                predicted_efficiency_finite: case1_efficiency(k, a, t_final)?,
                predicted_efficiency_infinite: asymptotic_efficiency(xi)?,
            })
        }
    }
}

/// Dense phase-1 control profile reconstructed from the Pontryagin system.
///
/// On `[0, tau]` the costate/state ratios `a = lambda2/lambda1`,
/// `b = r2/r1` obey
///
/// ```text
/// da/dt = A u1 (1 + a^2) + k a - k u1^2 a
/// db/dt = A u1 (1 + b^2) - k b + k u1^2 b
/// ```
///
/// with `u1 = (A/2k)(a - b)` on the interior arc and `u2 = 1`. At the switch
/// the boundary data is `b(tau) = tan(gamma1)`, `a(tau) = b(tau) + 2k/A`
/// (where `u1` reaches 1); integrating backwards to `t = 0` must land on
/// `b(0) = 0`, which is asserted. The mirrored ramp gives
/// `u2*(t) = u1*(T - t)` on the final phase.
#[derive(Debug, Clone)]
pub struct FourLevelControls {
    k: f64,
    a: f64,
    horizon: f64,
    tau: f64,
    /// Sample times on `[0, tau]`, uniform.
    times: Vec<f64>,
    u1: Vec<f64>,
    du1: Vec<f64>,
    ratio_a: Vec<f64>,
    ratio_b: Vec<f64>,
    /// Polar trajectory `(r1, r2)` on the phase-1 samples.
    r: Vec<[f64; 2]>,
}

/// Reconstruct the Case II ramp control `u1*(t)` on `[0, tau]`.
pub fn case2_controls(sol: &FourLevelSolution, n_samples: usize) -> Result<FourLevelControls> {
    if sol.case_label != FourLevelCase::II {
        return Err(Error::contract("phase-1 reconstruction needs Case II"));
    }
    if sol.xi == 0.0 {
        return Err(Error::contract(
            "the lossless limit has no interior ramp (hard rotation window)",
        ));
    }
    if n_samples < 9 {
        return Err(Error::contract("need at least 9 samples"));
    }
    let (k, a) = (sol.k, sol.a);
    let tau = sol.tau.expect("case II has tau");
    let b_tau = sol.gamma1.tan();
    let a_tau = b_tau + 2.0 * k / a;

    // integrate the ratio ODEs backwards: sigma = tau - t runs forward
    let mut rhs = |_sigma: f64, y: &[f64], dy: &mut [f64]| {
        let u1 = (a / (2.0 * k) * (y[0] - y[1])).clamp(0.0, 1.0);
        dy[0] = -(a * u1 * (1.0 + y[0] * y[0]) + k * y[0] - k * u1 * u1 * y[0]);
        dy[1] = -(a * u1 * (1.0 + y[1] * y[1]) - k * y[1] + k * u1 * u1 * y[1]);
    };
    let integ = crate::propagator::integrate_rk45(
        &mut rhs,
        0.0,
        tau,
        &[a_tau, b_tau],
        1e-12,
        &[],
        5_000_000,
    )?;
    let b0 = integ.final_state()[1];
    if b0.abs() > 1e-6 * (1.0 + b_tau) {
        return Err(Error::numerical(format!(
            "phase-1 backward integration missed b(0) = 0 (got {b0:.3e})"
        )));
    }

    let mut times = Vec::with_capacity(n_samples);
    let mut u1 = Vec::with_capacity(n_samples);
    let mut du1 = Vec::with_capacity(n_samples);
    let mut ratio_a = Vec::with_capacity(n_samples);
    let mut ratio_b = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let t = tau * i as f64 / (n_samples - 1) as f64;
        let y = integ.sample(tau - t);
        let (av, bv) = (y[0], y[1]);
        let u = (a / (2.0 * k) * (av - bv)).clamp(0.0, 1.0);
        times.push(t);
        ratio_a.push(av);
        ratio_b.push(bv);
        u1.push(u);
        // du1/dt = (A/2) u1^2 (a + b) + k u1 from the ratio ODEs
        du1.push(0.5 * a * u * u * (av + bv) + k * u);
    }
    // endpoint is the switch: u1(tau) = 1 exactly
    *u1.last_mut().unwrap() = 1.0;

    // forward polar trajectory under (u1, 1) for pulse reconstruction
    let times_c = times.clone();
    let u1_c = u1.clone();
    let du1_c = du1.clone();
    let polar = crate::propagator::propagate_polar4_with(
        [k, k],
        a,
        &move |t| (hermite_eval(&times_c, &u1_c, &du1_c, t), 1.0),
        [1.0, 0.0],
        tau,
        1e-11,
        &[],
    )?;
    let r = times.iter().map(|&t| sample_polar(&polar, t)).collect();

    Ok(FourLevelControls {
        k,
        a,
        horizon: sol.horizon,
        tau,
        times,
        u1,
        du1,
        ratio_a,
        ratio_b,
        r,
    })
}

fn sample_polar(polar: &crate::propagator::PolarTrajectory, t: f64) -> [f64; 2] {
    sample_polar_arrays(&polar.times, &polar.r, t)
}

fn hermite_eval(ts: &[f64], ys: &[f64], dys: &[f64], t: f64) -> f64 {
    if t <= ts[0] {
        return ys[0];
    }
    if t >= *ts.last().unwrap() {
        return *ys.last().unwrap();
    }
    let idx = match ts.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
        Ok(i) => return ys[i],
        Err(i) => i - 1,
    };
    let h = ts[idx + 1] - ts[idx];
    let w = (t - ts[idx]) / h;
    let (w2, w3) = (w * w, w * w * w);
    (2.0 * w3 - 3.0 * w2 + 1.0) * ys[idx]
        + (w3 - 2.0 * w2 + w) * h * dys[idx]
        + (-2.0 * w3 + 3.0 * w2) * ys[idx + 1]
        + (w3 - w2) * h * dys[idx + 1]
}

impl FourLevelControls {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Initial ramp value `u1*(0) < 1` (also the terminal `u2*(T)`).
    pub fn u1_initial(&self) -> f64 {
        self.u1[0]
    }

    /// Ratio samples `(t, a, b)` on the ramp, for invariant checks.
    pub fn ratio_samples(&self) -> (&[f64], &[f64], &[f64]) {
        (&self.times, &self.ratio_a, &self.ratio_b)
    }

    /// `(u1*, u2*)` at `t`: ramp, hold, mirrored ramp.
    pub fn u_at(&self, t: f64) -> (f64, f64) {
        let t_end = self.horizon;
        if t < self.tau {
            (hermite_eval(&self.times, &self.u1, &self.du1, t), 1.0)
        } else if t <= t_end - self.tau {
            (1.0, 1.0)
        } else {
            (
                1.0,
                hermite_eval(&self.times, &self.u1, &self.du1, t_end - t),
            )
        }
    }

    /// Full Rabi amplitudes `(omega_p, omega_i, omega_s)` at `t`, with
    /// unbounded flags for the pump and Stokes spikes at the phase joints.
    ///
    /// Phase 1: `omega_s = 0`, `omega_p` rises to infinity at `tau`.
    /// Hold: only `omega_i = A`. Phase 3 mirrors phase 1 with the roles of
    /// pump and Stokes exchanged.
    pub fn omegas_at(&self, t: f64) -> OmegaSample {
        let a = self.a;
        let k = self.k;
        let t_end = self.horizon;
        if t < self.tau {
            let u = hermite_eval(&self.times, &self.u1, &self.du1, t);
            if u >= 1.0 - 1e-9 {
                return OmegaSample {
                    omega_p: 0.0,
                    omega_i: a,
                    omega_s: 0.0,
                    pump_unbounded: true,
                    stokes_unbounded: false,
                };
            }
            let du = self.du1_at(t);
            let [r1, r2] = sample_polar_arrays(&self.times, &self.r, t);
            let w = 1.0 - u * u;
            let omega_p = (r1 * du + k * r1 * u * w + a * r2 * w) / (r1 * w.sqrt());
            OmegaSample {
                omega_p,
                omega_i: a,
                omega_s: 0.0,
                pump_unbounded: false,
                stokes_unbounded: false,
            }
        } else if t <= t_end - self.tau {
            OmegaSample {
                omega_p: 0.0,
                omega_i: a,
                omega_s: 0.0,
                pump_unbounded: false,
                stokes_unbounded: false,
            }
        } else {
            // mirror of phase 1
            let mirrored = self.omegas_at(t_end - t);
            OmegaSample {
                omega_p: 0.0,
                omega_i: a,
                omega_s: mirrored.omega_p,
                pump_unbounded: false,
                stokes_unbounded: mirrored.pump_unbounded,
            }
        }
    }

    fn du1_at(&self, t: f64) -> f64 {
        // linear interpolation of the stored analytic derivative samples
        let ts = &self.times;
        if t <= ts[0] {
            return self.du1[0];
        }
        if t >= *ts.last().unwrap() {
            return *self.du1.last().unwrap();
        }
        let idx = match ts.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(i) => return self.du1[i],
            Err(i) => i - 1,
        };
        let w = (t - ts[idx]) / (ts[idx + 1] - ts[idx]);
        self.du1[idx] + w * (self.du1[idx + 1] - self.du1[idx])
    }

    /// Propagate the polar dynamics under the reconstructed `(u1*, u2*)`.
    pub fn propagate_efficiency(&self, tol: f64) -> Result<f64> {
        let breakpoints = [self.tau, self.horizon - self.tau];
        let traj = crate::propagator::propagate_polar4_with(
            [self.k, self.k],
            self.a,
            &|t| self.u_at(t),
            [1.0, 0.0],
            self.horizon,
            tol,
            &breakpoints,
        )?;
        Ok(traj.final_r2())
    }
}

fn sample_polar_arrays(ts: &[f64], rs: &[[f64; 2]], t: f64) -> [f64; 2] {
    if t <= ts[0] {
        return rs[0];
    }
    if t >= *ts.last().unwrap() {
        return *rs.last().unwrap();
    }
    let idx = match ts.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
        Ok(i) => return rs[i],
        Err(i) => i - 1,
    };
    let w = (t - ts[idx]) / (ts[idx + 1] - ts[idx]);
    [
        rs[idx][0] + w * (rs[idx + 1][0] - rs[idx][0]),
        rs[idx][1] + w * (rs[idx + 1][1] - rs[idx][1]),
    ]
}

/// One sampled instant of the full Rabi pulses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmegaSample {
    pub omega_p: f64,
    pub omega_i: f64,
    pub omega_s: f64,
    pub pump_unbounded: bool,
    pub stokes_unbounded: bool,
}
