//! Kinematic bicycle model and fixed-step integration.
//!
//! The state `(x, y, psi)` is the planar position of the center of mass and
//! the heading; the input `(v, zeta)` is speed and steering angle. Inputs are
//! held constant over each segment of a [`ControlSchedule`] and integrated
//! with classical RK4 on a fixed substep.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{CbfError, Result};

/// Maps an angle onto the canonical range `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        w -= 2.0 * PI;
    }
    w
}

/// Bicycle configuration: position in meters, heading in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

impl State {
    /// Builds a state with the heading wrapped onto `[-pi, pi)`.
    pub fn new(x: f64, y: f64, psi: f64) -> Self {
        State {
            x,
            y,
            psi: wrap_angle(psi),
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.psi.is_finite()
    }

    pub(crate) fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.psi]
    }

    pub(crate) fn from_array(a: [f64; 3]) -> Self {
        State::new(a[0], a[1], a[2])
    }
}

/// Speed [m/s] and steering angle [rad].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Input {
    pub v: f64,
    pub zeta: f64,
}

impl Input {
    pub fn new(v: f64, zeta: f64) -> Self {
        Input { v, zeta }
    }
}

/// The admissible input box `v_min <= v <= v_max`, `|zeta| <= zeta_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputBounds {
    pub v_min: f64,
    pub v_max: f64,
    pub zeta_max: f64,
}

impl InputBounds {
    pub fn new(v_min: f64, v_max: f64, zeta_max: f64) -> Result<Self> {
        let b = InputBounds {
            v_min,
            v_max,
            zeta_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_min > 0.0) {
            return Err(CbfError::config("v_min", "must be > 0"));
        }
        if !(self.v_max >= self.v_min) || !self.v_max.is_finite() {
            return Err(CbfError::config("v_max", "must be finite and >= v_min"));
        }
        if !(self.zeta_max > 0.0 && self.zeta_max < FRAC_PI_2) {
            return Err(CbfError::config("zeta_max", "must lie in (0, pi/2)"));
        }
        Ok(())
    }

    pub fn contains(&self, u: &Input) -> bool {
        u.v >= self.v_min && u.v <= self.v_max && u.zeta.abs() <= self.zeta_max
    }

    pub fn clamp(&self, u: Input) -> Input {
        Input {
            v: u.v.clamp(self.v_min, self.v_max),
            zeta: u.zeta.clamp(-self.zeta_max, self.zeta_max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BicycleParams {
    /// Wheelbase `L` [m].
    pub wheelbase: f64,
}

impl BicycleParams {
    pub fn new(wheelbase: f64) -> Result<Self> {
        if !(wheelbase > 0.0) || !wheelbase.is_finite() {
            return Err(CbfError::config("wheelbase", "must be finite and > 0"));
        }
        Ok(BicycleParams { wheelbase })
    }
}

/// Piecewise-constant input trajectory: `inputs[i]` is held on
/// `[i * dt_segment, (i + 1) * dt_segment)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    pub dt_segment: f64,
    pub inputs: Vec<Input>,
}

impl ControlSchedule {
    pub fn new(dt_segment: f64, inputs: Vec<Input>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(CbfError::config("inputs", "schedule needs at least one segment"));
        }
        if !(dt_segment > 0.0) {
            return Err(CbfError::config("dt_segment", "must be > 0"));
        }
        Ok(ControlSchedule { dt_segment, inputs })
    }

    pub fn constant(u: Input, segments: usize, dt_segment: f64) -> Self {
        ControlSchedule {
            dt_segment,
            inputs: vec![u; segments.max(1)],
        }
    }

    pub fn segment_count(&self) -> usize {
        self.inputs.len()
    }

    pub fn duration(&self) -> f64 {
        self.dt_segment * self.inputs.len() as f64
    }

    pub fn within(&self, bounds: &InputBounds) -> bool {
        self.inputs.iter().all(|u| bounds.contains(u))
    }
}

/// Sampled solution `phi(t; x0, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
}

impl SampledTrajectory {
    pub fn final_state(&self) -> State {
        *self.states.last().expect("trajectory holds at least the initial node")
    }
}

/// Slip angle `beta(zeta) = atan(tan(zeta) / 2)`.
pub fn slip_angle(zeta: f64) -> Result<f64> {
    if !(zeta.abs() < FRAC_PI_2) {
        return Err(CbfError::Domain(format!(
            "steering angle {zeta} outside (-pi/2, pi/2)"
        )));
    }
    Ok(beta_unchecked(zeta))
}

#[inline]
fn beta_unchecked(zeta: f64) -> f64 {
    (0.5 * zeta.tan()).atan()
}

#[inline]
fn yaw_rate(v: f64, zeta: f64, beta: f64, wheelbase: f64) -> f64 {
    v * beta.cos() * zeta.tan() / wheelbase
}

/// State derivative `(dx/dt, dy/dt, dpsi/dt)` of the kinematic bicycle.
pub fn vector_field(s: &State, u: &Input, p: &BicycleParams) -> [f64; 3] {
    debug_assert!(u.zeta.abs() < FRAC_PI_2);
    let beta = beta_unchecked(u.zeta);
    let (sn, cs) = (s.psi + beta).sin_cos();
    [u.v * cs, u.v * sn, yaw_rate(u.v, u.zeta, beta, p.wheelbase)]
}

/// Minimal turning radius of the center of mass at full steering lock.
pub fn min_turn_radius(p: &BicycleParams, b: &InputBounds) -> f64 {
    let beta = beta_unchecked(b.zeta_max);
    p.wheelbase / (beta.cos() * b.zeta_max.tan())
}

/// Bound `M >= ||f(x, u)||` over the input box.
pub fn speed_bound(p: &BicycleParams, b: &InputBounds) -> f64 {
    let beta = beta_unchecked(b.zeta_max);
    let omega = yaw_rate(b.v_max, b.zeta_max, beta, p.wheelbase);
    b.v_max.hypot(omega)
}

/// A time-invariant controlled ODE `dx/dt = f(x, u)`.
pub trait ControlledOde<const N: usize> {
    type Input;

    fn derivative(&self, x: &[f64; N], u: &Self::Input) -> [f64; N];
}

/// One classical RK4 step of length `h` with the input held constant.
pub fn rk4_step<S, const N: usize>(sys: &S, x: &[f64; N], u: &S::Input, h: f64) -> [f64; N]
where
    S: ControlledOde<N>,
{
    let axpy = |a: &[f64; N], k: &[f64; N], s: f64| {
        let mut out = *a;
        for i in 0..N {
            out[i] += s * k[i];
        }
        out
    };
    let k1 = sys.derivative(x, u);
    let k2 = sys.derivative(&axpy(x, &k1, 0.5 * h), u);
    let k3 = sys.derivative(&axpy(x, &k2, 0.5 * h), u);
    let k4 = sys.derivative(&axpy(x, &k3, h), u);
    let mut out = *x;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Input with the per-segment constants of the bicycle precomputed.
#[derive(Debug, Clone, Copy)]
pub struct PreparedInput {
    v: f64,
    beta: f64,
    omega: f64,
}

/// The kinematic bicycle as a [`ControlledOde`]. Heading is integrated
/// unwrapped.
#[derive(Debug, Clone, Copy)]
pub struct KinematicBicycle {
    pub params: BicycleParams,
}

impl KinematicBicycle {
    pub fn new(params: BicycleParams) -> Self {
        KinematicBicycle { params }
    }

    pub fn prepare(&self, u: &Input) -> PreparedInput {
        let beta = beta_unchecked(u.zeta);
        PreparedInput {
            v: u.v,
            beta,
            omega: yaw_rate(u.v, u.zeta, beta, self.params.wheelbase),
        }
    }

    /// Integrates one zero-order-hold segment in place, calling `on_node`
    /// after every substep.
    pub(crate) fn propagate_segment(
        &self,
        x: &mut [f64; 3],
        u: &Input,
        dt_segment: f64,
        substeps: usize,
        mut on_node: impl FnMut(&[f64; 3]),
    ) {
        let prepared = self.prepare(u);
        let h = dt_segment / substeps as f64;
        for _ in 0..substeps {
            *x = rk4_step(self, x, &prepared, h);
            on_node(x);
        }
    }
}

impl ControlledOde<3> for KinematicBicycle {
    type Input = PreparedInput;

    #[inline]
    fn derivative(&self, x: &[f64; 3], u: &PreparedInput) -> [f64; 3] {
        let (sn, cs) = (x[2] + u.beta).sin_cos();
        [u.v * cs, u.v * sn, u.omega]
    }
}

/// Integrates a schedule with `substeps_per_segment` RK4 steps per segment.
/// The result holds every substep node, including `t = 0` and `t = T`.
pub fn integrate_rk4(
    s0: &State,
    sched: &ControlSchedule,
    p: &BicycleParams,
    substeps_per_segment: usize,
) -> SampledTrajectory {
    let substeps = substeps_per_segment.max(1);
    let sys = KinematicBicycle::new(*p);
    let h = sched.dt_segment / substeps as f64;
    let total = sched.segment_count() * substeps + 1;
    let mut times = Vec::with_capacity(total);
    let mut states = Vec::with_capacity(total);
    times.push(0.0);
    states.push(*s0);
    let mut x = s0.to_array();
    let mut k = 0usize;
    for u in &sched.inputs {
        sys.propagate_segment(&mut x, u, sched.dt_segment, substeps, |node| {
            k += 1;
            times.push(k as f64 * h);
            states.push(State::from_array(*node));
        });
    }
    SampledTrajectory { times, states }
}

/// Closed-form solution under a constant input: a circular arc of radius
/// `v / |omega|` (or a straight line when `omega` vanishes).
pub fn constant_input_arc(s0: &State, u: &Input, p: &BicycleParams, t: f64) -> State {
    let beta = beta_unchecked(u.zeta);
    let omega = yaw_rate(u.v, u.zeta, beta, p.wheelbase);
    let course = s0.psi + beta;
    if omega.abs() < 1e-12 {
        let (sn, cs) = course.sin_cos();
        return State::new(s0.x + u.v * t * cs, s0.y + u.v * t * sn, s0.psi + omega * t);
    }
    let rho = u.v / omega;
    let end = course + omega * t;
    State::new(
        s0.x + rho * (end.sin() - course.sin()),
        s0.y - rho * (end.cos() - course.cos()),
        s0.psi + omega * t,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> BicycleParams {
        BicycleParams::new(1.0).unwrap()
    }

    fn ex4_bounds() -> InputBounds {
        InputBounds::new(1.0, 5.0, PI / 9.0).unwrap()
    }

    #[test]
    fn slip_angle_values() {
        assert_eq!(slip_angle(0.0).unwrap(), 0.0);
        let b = slip_angle(PI / 9.0).unwrap();
        assert!((b - 0.180_015_088_428_340_2).abs() < 1e-12);
        assert_eq!(slip_angle(-PI / 9.0).unwrap(), -b);
        assert!(slip_angle(FRAC_PI_2).is_err());
        assert!(slip_angle(-2.0).is_err());
    }

    #[test]
    fn vector_field_examples() {
        let p = unit();
        let f = vector_field(&State::new(0.0, 0.0, 0.0), &Input::new(1.0, 0.0), &p);
        assert_eq!(f, [1.0, 0.0, 0.0]);
        let f = vector_field(&State::new(0.0, 0.0, PI / 2.0), &Input::new(2.0, 0.0), &p);
        assert!(f[0].abs() < 1e-15 && (f[1] - 2.0).abs() < 1e-15 && f[2] == 0.0);
        let beta = slip_angle(PI / 9.0).unwrap();
        let f = vector_field(&State::new(0.0, 0.0, 0.0), &Input::new(1.0, PI / 9.0), &p);
        assert!((f[0] - beta.cos()).abs() < 1e-15);
        assert!((f[1] - beta.sin()).abs() < 1e-15);
        assert!((f[2] - beta.cos() * (PI / 9.0).tan()).abs() < 1e-15);
    }

    #[test]
    fn turning_radius() {
        let r = min_turn_radius(&unit(), &ex4_bounds());
        assert!((r - 2.79).abs() < 0.005, "r = {r}");
        let r2 = min_turn_radius(&BicycleParams::new(2.0).unwrap(), &ex4_bounds());
        assert!((r2 - 2.0 * r).abs() < 1e-12);
        let small = InputBounds::new(1.0, 5.0, 1e-4).unwrap();
        let rs = min_turn_radius(&unit(), &small);
        assert!((rs * 1e-4 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn bounds_validation() {
        assert!(InputBounds::new(0.0, 5.0, 0.3).is_err());
        assert!(InputBounds::new(2.0, 1.0, 0.3).is_err());
        assert!(InputBounds::new(1.0, 5.0, FRAC_PI_2).is_err());
        assert!(BicycleParams::new(0.0).is_err());
        assert!(ControlSchedule::new(0.1, vec![]).is_err());
    }

    #[test]
    fn wrap_range() {
        for a in [-7.0, -PI, 0.0, PI, 3.0 * PI, 1e-17 - PI] {
            let w = wrap_angle(a);
            assert!((-PI..PI).contains(&w), "{a} -> {w}");
        }
        assert_eq!(wrap_angle(PI), -PI);
    }

    #[test]
    fn straight_line_is_exact() {
        let s0 = State::new(1.0, -2.0, 0.7);
        let sched = ControlSchedule::constant(Input::new(3.0, 0.0), 10, 0.1);
        let traj = integrate_rk4(&s0, &sched, &unit(), 5);
        assert_eq!(traj.times.len(), 51);
        assert_eq!(traj.times[0], 0.0);
        let end = traj.final_state();
        assert!((end.x - (1.0 + 3.0 * 0.7f64.cos())).abs() < 1e-12);
        assert!((end.y - (-2.0 + 3.0 * 0.7f64.sin())).abs() < 1e-12);
        assert_eq!(end.psi, s0.psi);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn arc_oracle_properties() {
        let p = unit();
        let s0 = State::new(0.5, 1.0, 0.3);
        // zeta = 0 reduces to the straight line
        let st = constant_input_arc(&s0, &Input::new(2.0, 0.0), &p, 1.5);
        assert!((st.x - (0.5 + 3.0 * 0.3f64.cos())).abs() < 1e-12);
        // one full period returns to the start
        let u = Input::new(2.0, PI / 9.0);
        let beta = slip_angle(u.zeta).unwrap();
        let omega = u.v * beta.cos() * u.zeta.tan();
        let back = constant_input_arc(&s0, &u, &p, 2.0 * PI / omega);
        assert!((back.x - s0.x).abs() < 1e-12 && (back.y - s0.y).abs() < 1e-12);
        // the traced circle has radius v/|omega| = r at full lock
        let r = min_turn_radius(&p, &ex4_bounds());
        let pts: Vec<State> = (0..7)
            .map(|i| constant_input_arc(&s0, &u, &p, i as f64 * 0.4))
            .collect();
        let center = circle_through(&pts[0], &pts[3], &pts[6]);
        for q in &pts {
            let d = (q.x - center[0]).hypot(q.y - center[1]);
            assert!((d - r).abs() < 1e-9, "{d} vs {r}");
        }
    }

    fn circle_through(a: &State, b: &State, c: &State) -> [f64; 2] {
        let d = 2.0 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y));
        let na = a.x * a.x + a.y * a.y;
        let nb = b.x * b.x + b.y * b.y;
        let nc = c.x * c.x + c.y * c.y;
        [
            (na * (b.y - c.y) + nb * (c.y - a.y) + nc * (a.y - b.y)) / d,
            (na * (c.x - b.x) + nb * (a.x - c.x) + nc * (b.x - a.x)) / d,
        ]
    }

    #[test]
    fn rk4_against_arc() {
        let p = unit();
        let s0 = State::new(0.0, 0.0, 0.2);
        let u = Input::new(5.0, PI / 9.0);
        let exact = constant_input_arc(&s0, &u, &p, 1.0);
        let err = |dt: f64| {
            let n = (1.0 / dt).round() as usize;
            let sched = ControlSchedule::constant(u, n, dt);
            let end = integrate_rk4(&s0, &sched, &p, 1).final_state();
            (end.x - exact.x).hypot(end.y - exact.y)
        };
        assert!(err(0.01) <= 1e-6);
        let e: Vec<f64> = [0.04, 0.02, 0.01, 0.005].iter().map(|&d| err(d)).collect();
        for w in e.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((3.7..=4.3).contains(&order), "order {order}, errors {e:?}");
        }
    }

    #[test]
    fn generic_rk4_matches_prepared_path() {
        struct Generic(BicycleParams);
        impl ControlledOde<3> for Generic {
            type Input = Input;
            fn derivative(&self, x: &[f64; 3], u: &Input) -> [f64; 3] {
                let s = State { x: x[0], y: x[1], psi: x[2] };
                vector_field(&s, u, &self.0)
            }
        }
        let p = unit();
        let u = Input::new(3.0, -0.2);
        let x0 = [1.0, 2.0, 0.4];
        let a = rk4_step(&Generic(p), &x0, &u, 0.05);
        let bike = KinematicBicycle::new(p);
        let b = rk4_step(&bike, &x0, &bike.prepare(&u), 0.05);
        assert_eq!(a, b);
    }

    #[test]
    fn planar_speed_equals_input_speed() {
        let p = unit();
        let b = ex4_bounds();
        for i in 0..50 {
            let s = State::new(i as f64, -0.3 * i as f64, 0.37 * i as f64);
            let u = Input::new(1.0 + 0.08 * i as f64, -b.zeta_max + 0.014 * i as f64);
            let f = vector_field(&s, &u, &p);
            assert!((f[0].hypot(f[1]) - u.v).abs() < 1e-12);
            assert!(f[0].hypot(f[1]).hypot(f[2]) <= speed_bound(&p, &b) + 1e-12);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rotation_equivariance(
                x in -10.0..10.0f64, y in -10.0..10.0f64, psi in -3.0..3.0f64,
                theta in -3.0..3.0f64,
                zs in proptest::collection::vec(-0.34..0.34f64, 4),
            ) {
                let p = BicycleParams::new(1.0).unwrap();
                let inputs: Vec<Input> = zs.iter().map(|&z| Input::new(3.0, z)).collect();
                let sched = ControlSchedule::new(0.25, inputs).unwrap();
                let (st, ct) = theta.sin_cos();
                let a = integrate_rk4(&State::new(x, y, psi), &sched, &p, 5);
                let rot = State::new(ct * x - st * y, st * x + ct * y, psi + theta);
                let b = integrate_rk4(&rot, &sched, &p, 5);
                for (sa, sb) in a.states.iter().zip(&b.states) {
                    prop_assert!((ct * sa.x - st * sa.y - sb.x).abs() < 1e-9);
                    prop_assert!((st * sa.x + ct * sa.y - sb.y).abs() < 1e-9);
                    prop_assert!(wrap_angle(sa.psi + theta - sb.psi).abs() < 1e-9);
                }
            }
        }
    }
}
