//! Optimal steering angle.
//!
//! Without the touchdown penalty the optimal thrust direction is simply
//! opposite to the velocity adjoint. With the penalty, the angle-dependent
//! part of the Hamiltonian is
//!
//! ```text
//! h(theta) = (T/m) (pvy sin theta + pvz cos theta) + exp(beta z) theta^2 / (2 (z + eps))
//! ```
//!
//! and the optimal angle is a zero of `h'(theta)`, a transcendental equation
//! with up to three zeros on `[-pi, pi]`. The zeros of `h''` are found in
//! closed form through the substitution `x = tan(theta / 2)`, which turns
//! `h'' = 0` into a quadratic. Between consecutive zeros of `h''` the function
//! `h'` is monotone, so each sign change is bracketed by exactly one zero and
//! bisection finds it. The zero with the smallest `h` is selected.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{Costate, LanderState, RegularizationParams, VehicleEnv};

/// Default bracket width at which bisection stops [rad].
pub const STEERING_TOL: f64 = 1e-12;

/// Thrust direction chosen by the unconstrained law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThrustDirection {
    /// Steering angle [rad] in `(-pi, pi]`.
    pub theta: f64,
    pub sin: f64,
    pub cos: f64,
}

/// Result of the regularized steering solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringSolution {
    /// Selected steering angle [rad].
    pub theta_star: f64,
    /// Stationarity residual at `theta_star`.
    pub residual: f64,
    /// Every zero of the stationarity equation found on `[-pi, pi]`, ascending.
    pub candidates: Vec<f64>,
    /// Angle-dependent Hamiltonian part at each candidate.
    pub hamiltonian_values: Vec<f64>,
}

/// Unconstrained optimal steering: thrust points opposite to `(pvy, pvz)`.
pub fn steering_unconstrained(pvy: f64, pvz: f64) -> Result<ThrustDirection> {
    let norm = pvy.hypot(pvz);
    if !norm.is_finite() {
        return Err(Error::domain(format!("non-finite velocity adjoint ({pvy}, {pvz})")));
    }
    if norm == 0.0 {
        return Err(Error::DegenerateCostate);
    }
    Ok(ThrustDirection {
        theta: (-pvy).atan2(-pvz),
        sin: -pvy / norm,
        cos: -pvz / norm,
    })
}

/// Coefficients shared by the residual, its slope and the angle Hamiltonian.
#[derive(Debug, Clone, Copy)]
struct SteeringTerms {
    /// `T_max / m`.
    accel: f64,
    pvy: f64,
    pvz: f64,
    /// `exp(beta z) / (z + eps)`.
    weight: f64,
}

impl SteeringTerms {
    fn new(x: &LanderState, p: &Costate, env: &VehicleEnv, reg: &RegularizationParams) -> Result<Self> {
        if !(x.m.is_finite() && x.m > 0.0) {
            return Err(Error::domain(format!("mass must be positive (m = {})", x.m)));
        }
        if !(p.pvy.is_finite() && p.pvz.is_finite()) {
            return Err(Error::domain(format!("non-finite velocity adjoint {p:?}")));
        }
        let weight = reg.weight(x.z)?;
        if !weight.is_finite() {
            return Err(Error::domain(format!("regularization weight overflow at z = {}", x.z)));
        }
        Ok(Self {
            accel: env.t_max / x.m,
            pvy: p.pvy,
            pvz: p.pvz,
            weight,
        })
    }

    fn residual(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        self.accel * (self.pvy * c - self.pvz * s) + self.weight * theta
    }

    fn slope(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        self.accel * (-self.pvy * s - self.pvz * c) + self.weight
    }

    fn angle_hamiltonian(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        self.accel * (self.pvy * s + self.pvz * c) + 0.5 * self.weight * theta * theta
    }

    /// Upper bound on `|h''|` over all angles.
    fn slope_bound(&self) -> f64 {
        self.accel * self.pvy.hypot(self.pvz) + self.weight.abs()
    }

    fn critical_points(&self) -> Vec<f64> {
        // (T/m)(-pvy sin - pvz cos) + w = 0 with sin, cos in tan(theta/2):
        // (-pvz - c) x^2 + 2 pvy x + (pvz - c) = 0,  c = m w / T.
        let c = self.weight / self.accel;
        let a = -self.pvz - c;
        let b = 2.0 * self.pvy;
        let k = self.pvz - c;
        let mut roots = solve_quadratic(a, b, k);
        let mut out: Vec<f64> = roots.drain(..).map(|x| 2.0 * x.atan()).collect();
        out.sort_by(|l, r| l.total_cmp(r));
        out.dedup();
        out
    }
}

/// Real roots of `a x^2 + b x + c = 0`, falling back to the linear equation
/// when the leading coefficient vanishes.
fn solve_quadratic(a: f64, b: f64, c: f64) -> Vec<f64> {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 || !scale.is_finite() {
        return Vec::new();
    }
    if a.abs() <= f64::EPSILON * scale {
        if b == 0.0 {
            return Vec::new();
        }
        return vec![-c / b];
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let sq = disc.sqrt();
    // Cancellation-free form.
    let sign = if b >= 0.0 { 1.0 } else { -1.0 };
    let q = -0.5 * (b + sign * sq);
    if q == 0.0 {
        // b == 0 and disc == 0, so c == 0 as well: double root at zero.
        return vec![0.0];
    }
    let r1 = q / a;
    let r2 = c / q;
    if disc == 0.0 {
        vec![r1]
    } else {
        vec![r1, r2]
    }
}

/// Stationarity function of the regularized problem. Its zeros are the
/// candidate optimal steering angles.
pub fn stationarity_residual(
    theta: f64,
    x: &LanderState,
    p: &Costate,
    env: &VehicleEnv,
    reg: &RegularizationParams,
) -> Result<f64> {
    Ok(SteeringTerms::new(x, p, env, reg)?.residual(theta))
}

/// Derivative of [`stationarity_residual`] with respect to `theta`.
pub fn stationarity_slope(
    theta: f64,
    x: &LanderState,
    p: &Costate,
    env: &VehicleEnv,
    reg: &RegularizationParams,
) -> Result<f64> {
    Ok(SteeringTerms::new(x, p, env, reg)?.slope(theta))
}

/// Angle-dependent part of the regularized Hamiltonian (per unit thrust ratio).
pub fn angle_hamiltonian(
    theta: f64,
    x: &LanderState,
    p: &Costate,
    env: &VehicleEnv,
    reg: &RegularizationParams,
) -> Result<f64> {
    Ok(SteeringTerms::new(x, p, env, reg)?.angle_hamiltonian(theta))
}

/// Zeros of [`stationarity_slope`] in `(-pi, pi)`, ascending.
pub fn critical_points(x: &LanderState, p: &Costate, env: &VehicleEnv, reg: &RegularizationParams) -> Result<Vec<f64>> {
    Ok(SteeringTerms::new(x, p, env, reg)?.critical_points())
}

/// Bisection on a bracket with `f(lo)` and `f(hi)` of opposite sign. The last
/// bracket is refined with one linear interpolation, which keeps the answer
/// inside the bracket.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, mut f_lo: f64, mut f_hi: f64, tol: f64) -> f64 {
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return mid;
        }
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
            f_hi = f_mid;
        }
    }
    let t = f_lo / (f_lo - f_hi);
    let x = lo + t * (hi - lo);
    if x.is_finite() {
        x.clamp(lo, hi)
    } else {
        0.5 * (lo + hi)
    }
}

/// Optimal steering angle of the regularized problem.
///
/// `[-pi, pi]` is cut at the critical points; each piece holding a sign change
/// of the residual is bisected to width `tol`. Among all zeros the one with the
/// smallest angle Hamiltonian wins, ties going to the smaller `|theta|`.
pub fn solve_steering(
    x: &LanderState,
    p: &Costate,
    env: &VehicleEnv,
    reg: &RegularizationParams,
    tol: f64,
) -> Result<SteeringSolution> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::domain(format!("steering tolerance must be > 0 (got {tol})")));
    }
    let terms = SteeringTerms::new(x, p, env, reg)?;
    let mut nodes = Vec::with_capacity(4);
    nodes.push(-PI);
    nodes.extend(terms.critical_points().into_iter().filter(|t| *t > -PI && *t < PI));
    nodes.push(PI);

    let values: Vec<f64> = nodes.iter().map(|&t| terms.residual(t)).collect();
    // A partition point only counts as a zero when it is one up to rounding.
    let exact = 4.0 * f64::EPSILON * (terms.slope_bound() * PI + terms.accel * terms.pvy.hypot(terms.pvz));

    let mut candidates = Vec::with_capacity(3);
    for i in 0..nodes.len() {
        if values[i].abs() <= exact {
            candidates.push(nodes[i]);
            continue;
        }
        if i + 1 < nodes.len() {
            let (a, b) = (nodes[i], nodes[i + 1]);
            let (fa, fb) = (values[i], values[i + 1]);
            if fb.abs() > exact && (fa < 0.0) != (fb < 0.0) {
                candidates.push(bisect(|t| terms.residual(t), a, b, fa, fb, tol));
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::Steering(format!(
            "no stationary angle on [-pi, pi] (pvy = {:e}, pvz = {:e}, weight = {:e})",
            terms.pvy, terms.pvz, terms.weight
        )));
    }
    candidates.sort_by(|a, b| a.total_cmp(b));
    candidates.dedup();

    let hamiltonian_values: Vec<f64> = candidates.iter().map(|&t| terms.angle_hamiltonian(t)).collect();
    let h_min = hamiltonian_values.iter().copied().fold(f64::INFINITY, f64::min);
    let tie = 1e-12 * h_min.abs().max(1e-300);
    let best = candidates
        .iter()
        .zip(&hamiltonian_values)
        .filter(|(_, h)| **h - h_min <= tie)
        .map(|(t, _)| *t)
        .min_by(|a, b| a.abs().total_cmp(&b.abs()))
        .expect("at least one candidate");

    Ok(SteeringSolution {
        theta_star: best,
        residual: terms.residual(best),
        candidates,
        hamiltonian_values,
    })
}
