//! Planar lander dynamics, adjoint dynamics and Hamiltonians.
//!
//! Everything here is a pure function of its arguments. Units are SI
//! throughout: metres, seconds, kilograms and newtons. The steering angle
//! `theta` is measured from local vertical towards `+y`, so the unit thrust
//! direction is `(sin theta, cos theta)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Position, velocity and mass of the lander.
///
/// The same struct doubles as the time derivative of a state, which is what
/// [`state_dynamics`] returns.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanderState {
    /// Horizontal range [m].
    pub y: f64,
    /// Altitude [m].
    pub z: f64,
    /// Horizontal speed [m/s].
    pub vy: f64,
    /// Vertical speed [m/s].
    pub vz: f64,
    /// Mass [kg].
    pub m: f64,
}

impl LanderState {
    pub const fn new(y: f64, z: f64, vy: f64, vz: f64, m: f64) -> Self {
        Self { y, z, vy, vz, m }
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.y, self.z, self.vy, self.vz, self.m]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self::new(s[0], s[1], s[2], s[3], s[4])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn speed(&self) -> f64 {
        self.vy.hypot(self.vz)
    }

    pub fn range(&self) -> f64 {
        self.y.hypot(self.z)
    }
}

/// Adjoint variables paired with [`LanderState`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Costate {
    pub py: f64,
    pub pz: f64,
    pub pvy: f64,
    pub pvz: f64,
    pub pm: f64,
}

impl Costate {
    pub const fn new(py: f64, pz: f64, pvy: f64, pvz: f64, pm: f64) -> Self {
        Self { py, pz, pvy, pvz, pm }
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.py, self.pz, self.pvy, self.pvz, self.pm]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self::new(s[0], s[1], s[2], s[3], s[4])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Euclidean norm of the velocity adjoint.
    pub fn pv_norm(&self) -> f64 {
        self.pvy.hypot(self.pvz)
    }
}

/// Engine and gravity constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleEnv {
    /// Maximum thrust magnitude [N].
    pub t_max: f64,
    /// Specific impulse [s].
    pub isp: f64,
    /// Lunar gravitational acceleration [m/s^2].
    pub g_moon: f64,
    /// Standard gravity used with the specific impulse [m/s^2].
    pub g0: f64,
}

impl Default for VehicleEnv {
    fn default() -> Self {
        Self {
            t_max: 44_000.0,
            isp: 311.0,
            g_moon: 1.6229,
            g0: 9.81,
        }
    }
}

impl VehicleEnv {
    /// Mass flow at full thrust [kg/s].
    pub fn max_mass_flow(&self) -> f64 {
        self.t_max / (self.isp * self.g0)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("t_max", self.t_max),
            ("isp", self.isp),
            ("g_moon", self.g_moon),
            ("g0", self.g0),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("env.{name} must be > 0 (got {v})")));
            }
        }
        Ok(())
    }
}

/// Constants of the vertical-touchdown regularization term and the
/// thrust smoothing constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegularizationParams {
    /// Exponential altitude coefficient [1/m]. Negative values make the
    /// penalty decay with altitude.
    pub beta: f64,
    /// Guard keeping `z + eps` away from zero at touchdown [m].
    pub eps: f64,
    /// Smoothing constant of the thrust-ratio law.
    pub delta: f64,
}

impl Default for RegularizationParams {
    fn default() -> Self {
        Self {
            beta: -1.0e-2,
            eps: 1.0e-8,
            delta: 1.0e-10,
        }
    }
}

impl RegularizationParams {
    pub fn with_delta(self, delta: f64) -> Self {
        Self { delta, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.beta.is_finite() {
            return Err(Error::Config(format!("reg.beta must be finite (got {})", self.beta)));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::Config(format!("reg.eps must be > 0 (got {})", self.eps)));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::Config(format!("reg.delta must be > 0 (got {})", self.delta)));
        }
        Ok(())
    }

    /// `exp(beta z) / (z + eps)`, the altitude-dependent weight shared by the
    /// penalty, its gradient and the steering equations.
    pub fn weight(&self, z: f64) -> Result<f64> {
        let denom = self.guarded_altitude(z)?;
        Ok((self.beta * z).exp() / denom)
    }

    pub(crate) fn guarded_altitude(&self, z: f64) -> Result<f64> {
        let denom = z + self.eps;
        if !z.is_finite() || denom <= 0.0 {
            return Err(Error::domain(format!(
                "regularization requires z + eps > 0 (z = {z:e})"
            )));
        }
        Ok(denom)
    }
}

/// Thrust ratio and steering angle at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlSample {
    /// Thrust ratio in `[0, 1]`.
    pub u: f64,
    /// Steering angle [rad] in `[-pi, pi]`.
    pub theta: f64,
}

impl ControlSample {
    pub const fn new(u: f64, theta: f64) -> Self {
        Self { u, theta }
    }

    /// Unit thrust direction `(sin theta, cos theta)`.
    pub fn direction(&self) -> (f64, f64) {
        self.theta.sin_cos()
    }
}

/// Which optimality system to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Classic fuel-optimal problem; terminal attitude is free.
    Unconstrained,
    /// Fuel-optimal problem with the touchdown-attitude penalty added to the
    /// running cost.
    #[serde(rename = "vertical")]
    VerticalLanding,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Unconstrained => "unconstrained",
            Mode::VerticalLanding => "vertical",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unconstrained" => Ok(Mode::Unconstrained),
            "vertical" | "vertical-landing" => Ok(Mode::VerticalLanding),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected \"unconstrained\" or \"vertical\")"
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn check_state(x: &LanderState) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::domain(format!("non-finite state {x:?}")));
    }
    if x.m <= 0.0 {
        return Err(Error::domain(format!("mass must be positive (m = {})", x.m)));
    }
    Ok(())
}

fn check_control(c: &ControlSample) -> Result<()> {
    if !(c.u.is_finite() && c.theta.is_finite()) {
        return Err(Error::domain(format!("non-finite control {c:?}")));
    }
    Ok(())
}

/// Lowest altitude reached when braking with full thrust straight up [m].
///
/// Full upward thrust maximizes the vertical velocity at every instant, so if
/// this is negative no control can stop the descent above the surface. Returns
/// `-inf` when full thrust cannot overcome gravity at the initial mass.
pub fn braking_floor(x: &LanderState, env: &VehicleEnv) -> f64 {
    if x.vz >= 0.0 {
        return x.z;
    }
    let flow = env.max_mass_flow();
    let ve = env.isp * env.g0;
    if env.t_max / x.m <= env.g_moon {
        return f64::NEG_INFINITY;
    }
    // Upward speed gained by time t under full thrust (rocket equation).
    let vz = |t: f64| x.vz + ve * (x.m / (x.m - flow * t)).ln() - env.g_moon * t;
    let (mut lo, mut hi) = (0.0, x.m / flow);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if vz(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    let rest = x.m - flow * t;
    x.z + x.vz * t - 0.5 * env.g_moon * t * t + ve * (t + rest / flow * (rest / x.m).ln())
}

/// Time derivative of the lander state under control `c`.
pub fn state_dynamics(x: &LanderState, c: ControlSample, env: &VehicleEnv) -> Result<LanderState> {
    check_state(x)?;
    check_control(&c)?;
    let (s, co) = c.direction();
    let accel = c.u * env.t_max / x.m;
    Ok(LanderState {
        y: x.vy,
        z: x.vz,
        vy: accel * s,
        vz: -env.g_moon + accel * co,
        m: -c.u * env.max_mass_flow(),
    })
}

/// Penalty `exp(beta z) theta^2 / (2 (z + eps))` that drives the steering
/// angle to zero as the altitude goes to zero.
pub fn regularization_term(z: f64, theta: f64, reg: &RegularizationParams) -> Result<f64> {
    Ok(0.5 * reg.weight(z)? * theta * theta)
}

/// `d/dz` of [`regularization_term`].
pub(crate) fn regularization_gradient_z(z: f64, theta: f64, reg: &RegularizationParams) -> Result<f64> {
    let denom = reg.guarded_altitude(z)?;
    Ok(0.5 * theta * theta * (reg.beta * z).exp() * (reg.beta * denom - 1.0) / (denom * denom))
}

/// Adjoint dynamics `dp/dt = -dH/dx` for the selected mode.
pub fn costate_dynamics(
    x: &LanderState,
    p: &Costate,
    c: ControlSample,
    env: &VehicleEnv,
    reg: &RegularizationParams,
    mode: Mode,
) -> Result<Costate> {
    check_state(x)?;
    check_control(&c)?;
    if !p.is_finite() {
        return Err(Error::domain(format!("non-finite costate {p:?}")));
    }
    let (s, co) = c.direction();
    let pz_dot = match mode {
        Mode::Unconstrained => 0.0,
        Mode::VerticalLanding => -c.u * regularization_gradient_z(x.z, c.theta, reg)?,
    };
    Ok(Costate {
        py: 0.0,
        pz: pz_dot,
        pvy: -p.py,
        pvz: -p.pz,
        pm: c.u * env.t_max / (x.m * x.m) * (p.pvy * s + p.pvz * co),
    })
}

/// Hamiltonian of the selected mode. In [`Mode::VerticalLanding`] the running
/// cost is `(1 + Delta) u` instead of `u`.
pub fn hamiltonian(
    x: &LanderState,
    p: &Costate,
    c: ControlSample,
    env: &VehicleEnv,
    reg: &RegularizationParams,
    mode: Mode,
) -> Result<f64> {
    let f = state_dynamics(x, c, env)?;
    let running = match mode {
        Mode::Unconstrained => c.u,
        Mode::VerticalLanding => (1.0 + regularization_term(x.z, c.theta, reg)?) * c.u,
    };
    Ok(p.py * f.y + p.pz * f.z + p.pvy * f.vy + p.pvz * f.vz + p.pm * f.m + running)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TOL: f64 = 1e-12;

    #[test]
    fn free_fall_when_thrust_is_off() {
        let env = VehicleEnv::default();
        let x = LanderState::new(-61.0, 145.0, 14.0, -28.0, 9444.0);
        for theta in [-3.0, 0.0, 1.2] {
            let d = state_dynamics(&x, ControlSample::new(0.0, theta), &env).unwrap();
            assert_eq!(d.vy, 0.0);
            assert!((d.vz + 1.6229).abs() < TOL);
            assert_eq!(d.m, 0.0);
            assert_eq!((d.y, d.z), (14.0, -28.0));
        }
    }

    #[test]
    fn full_vertical_thrust() {
        let env = VehicleEnv::default();
        let x = LanderState::new(0.0, 100.0, 0.0, 0.0, 9444.0);
        let d = state_dynamics(&x, ControlSample::new(1.0, 0.0), &env).unwrap();
        assert_eq!(d.vy, 0.0);
        assert!((d.vz - (-1.6229 + 44000.0 / 9444.0)).abs() < TOL);
        let mdot = -44000.0 / (311.0 * 9.81);
        assert!((d.m - mdot).abs() < TOL);
        assert!((d.m + 14.42).abs() < 5e-3);
    }

    #[test]
    fn rejects_bad_state() {
        let env = VehicleEnv::default();
        let c = ControlSample::new(1.0, 0.0);
        assert!(state_dynamics(&LanderState::new(0.0, 1.0, 0.0, 0.0, 0.0), c, &env).is_err());
        assert!(state_dynamics(&LanderState::new(f64::NAN, 1.0, 0.0, 0.0, 1.0), c, &env).is_err());
        let c_nan = ControlSample::new(f64::INFINITY, 0.0);
        assert!(state_dynamics(&LanderState::new(0.0, 1.0, 0.0, 0.0, 1.0), c_nan, &env).is_err());
    }

    #[test]
    fn unconstrained_position_adjoints_are_constant() {
        let env = VehicleEnv::default();
        let reg = RegularizationParams::default();
        let x = LanderState::new(10.0, 50.0, -3.0, -7.0, 9000.0);
        let p = Costate::new(0.3, -0.2, 0.1, -0.4, 0.01);
        let d = costate_dynamics(&x, &p, ControlSample::new(0.7, 0.4), &env, &reg, Mode::Unconstrained).unwrap();
        assert_eq!(d.py, 0.0);
        assert_eq!(d.pz, 0.0);
        assert_eq!(d.pvy, -0.3);
        assert_eq!(d.pvz, 0.2);
    }

    #[test]
    fn vertical_pz_rate_vanishes_at_zero_angle() {
        let env = VehicleEnv::default();
        let reg = RegularizationParams::default();
        let x = LanderState::new(10.0, 0.5, -3.0, -7.0, 9000.0);
        let p = Costate::new(0.3, -0.2, 0.1, -0.4, 0.01);
        let d = costate_dynamics(&x, &p, ControlSample::new(1.0, 0.0), &env, &reg, Mode::VerticalLanding).unwrap();
        assert_eq!(d.pz, 0.0);
    }

    #[test]
    fn guard_violation_is_a_domain_error() {
        let env = VehicleEnv::default();
        let reg = RegularizationParams::default();
        let x = LanderState::new(0.0, -1.0, 0.0, 0.0, 9000.0);
        let p = Costate::default();
        let res = costate_dynamics(&x, &p, ControlSample::new(1.0, 0.1), &env, &reg, Mode::VerticalLanding);
        assert!(matches!(res, Err(Error::Domain(_))));
        assert!(regularization_term(-1.0, 0.1, &reg).is_err());
    }

    #[test]
    fn regularization_reference_value() {
        let reg = RegularizationParams::default();
        let theta = (-11.02f64).to_radians();
        let got = regularization_term(145.0, theta, &reg).unwrap();
        let expected = 0.5 * (-1.45f64).exp() * theta * theta / 145.000_000_01;
        assert!((got - expected).abs() <= 1e-15 * expected);
        assert!(got > 2e-5 && got < 4e-5);
        assert_eq!(regularization_term(3.0, 0.0, &reg).unwrap(), 0.0);
    }

    #[test]
    fn hamiltonian_trivial_cases() {
        let env = VehicleEnv::default();
        let reg = RegularizationParams::default();
        let x = LanderState::new(-61.0, 145.0, 14.0, -28.0, 9444.0);
        let zero = Costate::default();
        for mode in [Mode::Unconstrained, Mode::VerticalLanding] {
            let h = hamiltonian(&x, &zero, ControlSample::new(0.0, 0.3), &env, &reg, mode).unwrap();
            assert_eq!(h, 0.0);
        }
        let p = Costate::new(0.003, 0.0125, 0.093, -0.188, 0.0013);
        let c = ControlSample::new(0.8, 0.0);
        let hu = hamiltonian(&x, &p, c, &env, &reg, Mode::Unconstrained).unwrap();
        let hv = hamiltonian(&x, &p, c, &env, &reg, Mode::VerticalLanding).unwrap();
        assert_eq!(hu, hv);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("vertical".parse::<Mode>().unwrap(), Mode::VerticalLanding);
        assert_eq!("unconstrained".parse::<Mode>().unwrap(), Mode::Unconstrained);
        assert!("sideways".parse::<Mode>().is_err());
        let json = serde_json::to_string(&Mode::VerticalLanding).unwrap();
        assert_eq!(json, "\"vertical\"");
    }

    #[test]
    fn braking_floor_matches_direct_integration() {
        let env = VehicleEnv::default();
        let x = LanderState::new(0.0, 500.0, 0.0, -40.0, 9000.0);
        // Fixed-step RK4 of full upward thrust until the descent stops.
        let rate = |s: [f64; 3]| [s[1], env.t_max / s[2] - env.g_moon, -env.max_mass_flow()];
        let dt = 1e-4;
        let mut s = [x.z, x.vz, x.m];
        let mut lowest = s[0];
        while s[1] < 0.0 {
            let add = |a: [f64; 3], k: [f64; 3], h: f64| std::array::from_fn::<f64, 3, _>(|i| a[i] + h * k[i]);
            let k1 = rate(s);
            let k2 = rate(add(s, k1, dt / 2.0));
            let k3 = rate(add(s, k2, dt / 2.0));
            let k4 = rate(add(s, k3, dt));
            s = std::array::from_fn(|i| s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
            lowest = lowest.min(s[0]);
        }
        // The last step overshoots the turning point by at most |vz| dt.
        assert!(
            (braking_floor(&x, &env) - lowest).abs() < 1e-3,
            "{} vs {lowest}",
            braking_floor(&x, &env)
        );
        let up = LanderState { vz: 3.0, ..x };
        assert_eq!(braking_floor(&up, &env), 500.0);
    }

    proptest! {
        #[test]
        fn regularization_is_nonnegative(z in 0.0f64..2000.0, theta in -3.2f64..3.2, beta in -0.05f64..0.05) {
            let reg = RegularizationParams { beta, ..Default::default() };
            let d = regularization_term(z, theta, &reg).unwrap();
            prop_assert!(d >= 0.0);
            prop_assert_eq!(d == 0.0, theta == 0.0);
        }

        #[test]
        fn reflection_symmetry(
            y in -500.0f64..500.0, z in 0.1f64..1000.0, vy in -50.0f64..50.0, vz in -50.0f64..50.0,
            m in 8000.0f64..10000.0, py in -1.0f64..1.0, pz in -1.0f64..1.0, pvy in -1.0f64..1.0,
            pvz in -1.0f64..1.0, pm in -0.1f64..0.1, u in 0.0f64..1.0, theta in -3.0f64..3.0,
        ) {
            let env = VehicleEnv::default();
            let reg = RegularizationParams::default();
            let x = LanderState::new(y, z, vy, vz, m);
            let xr = LanderState::new(-y, z, -vy, vz, m);
            let p = Costate::new(py, pz, pvy, pvz, pm);
            let pr = Costate::new(-py, pz, -pvy, pvz, pm);
            let c = ControlSample::new(u, theta);
            let cr = ControlSample::new(u, -theta);
            let f = state_dynamics(&x, c, &env).unwrap();
            let fr = state_dynamics(&xr, cr, &env).unwrap();
            prop_assert_eq!(fr.y, -f.y);
            prop_assert!((fr.vy + f.vy).abs() <= 1e-12 * f.vy.abs().max(1.0));
            prop_assert_eq!(fr.z, f.z);
            prop_assert!((fr.vz - f.vz).abs() <= 1e-12);
            prop_assert_eq!(fr.m, f.m);
            for mode in [Mode::Unconstrained, Mode::VerticalLanding] {
                let g = costate_dynamics(&x, &p, c, &env, &reg, mode).unwrap();
                let gr = costate_dynamics(&xr, &pr, cr, &env, &reg, mode).unwrap();
                prop_assert_eq!(gr.py, -g.py);
                prop_assert_eq!(gr.pvy, -g.pvy);
                prop_assert_eq!(gr.pz, g.pz);
                prop_assert_eq!(gr.pvz, g.pvz);
                prop_assert!((gr.pm - g.pm).abs() <= 1e-12 * g.pm.abs().max(1e-12));
            }
        }
    }
}
