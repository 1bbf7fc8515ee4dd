//! Constraint function `h` for unions of circular obstacles, the known
//! subsets `F` of a control-invariant set, class-K functions and analytic
//! bounds on the time needed to reach `F`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Input, InputBounds, State};
use crate::error::{CbfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Circle {
    pub fn new(center: [f64; 2], radius: f64) -> Self {
        Circle { center, radius }
    }

    fn signed_distance(&self, x: f64, y: f64) -> f64 {
        (x - self.center[0]).hypot(y - self.center[1]) - self.radius
    }
}

/// Union of circular obstacles. `h` is the minimum over circles of the
/// distance to the circle boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Circle>", into = "Vec<Circle>")]
pub struct ObstacleField {
    circles: Vec<Circle>,
}

impl TryFrom<Vec<Circle>> for ObstacleField {
    type Error = CbfError;

    fn try_from(circles: Vec<Circle>) -> Result<Self> {
        ObstacleField::new(circles)
    }
}

impl From<ObstacleField> for Vec<Circle> {
    fn from(f: ObstacleField) -> Self {
        f.circles
    }
}

/// Position gradient of `h`; `tie` marks a point equidistant from two
/// nearest circles, where the lowest index wins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionGradient {
    pub grad: [f64; 2],
    pub circle: usize,
    pub tie: bool,
}

impl ObstacleField {
    pub fn new(circles: Vec<Circle>) -> Result<Self> {
        if circles.is_empty() {
            return Err(CbfError::config("obstacles", "at least one circle required"));
        }
        for (i, c) in circles.iter().enumerate() {
            if !(c.radius > 0.0) || !c.center.iter().all(|v| v.is_finite()) {
                return Err(CbfError::config(
                    format!("obstacles[{i}]"),
                    "radius must be > 0 and center finite",
                ));
            }
            if circles[..i].iter().any(|o| o.center == c.center) {
                return Err(CbfError::config(
                    format!("obstacles[{i}].center_m"),
                    "duplicate circle center",
                ));
            }
        }
        Ok(ObstacleField { circles })
    }

    pub fn single(center: [f64; 2], radius: f64) -> Result<Self> {
        ObstacleField::new(vec![Circle::new(center, radius)])
    }

    pub fn circles(&self) -> &[Circle] {
        &self.circles
    }

    pub fn max_radius(&self) -> f64 {
        self.circles.iter().map(|c| c.radius).fold(0.0, f64::max)
    }

    /// `h` at a position; independent of heading.
    #[inline]
    pub fn h_at(&self, x: f64, y: f64) -> f64 {
        let mut best = f64::INFINITY;
        for c in &self.circles {
            best = best.min(c.signed_distance(x, y));
        }
        best
    }

    pub fn h_value(&self, s: &State) -> f64 {
        self.h_at(s.x, s.y)
    }

    /// Unit vector from the nearest circle center towards the position.
    pub fn h_gradient_pos(&self, s: &State) -> Result<PositionGradient> {
        self.gradient_at(s.x, s.y)
    }

    pub(crate) fn gradient_at(&self, x: f64, y: f64) -> Result<PositionGradient> {
        let mut best = f64::INFINITY;
        let mut index = 0;
        let mut tie = false;
        for (i, c) in self.circles.iter().enumerate() {
            let d = c.signed_distance(x, y);
            if d < best {
                best = d;
                index = i;
                tie = false;
            } else if d == best {
                tie = true;
            }
        }
        let c = &self.circles[index];
        let (dx, dy) = (x - c.center[0], y - c.center[1]);
        let n = dx.hypot(dy);
        if n == 0.0 {
            return Err(CbfError::Domain(format!(
                "gradient undefined at the center of obstacle {index}"
            )));
        }
        Ok(PositionGradient {
            grad: [dx / n, dy / n],
            circle: index,
            tie,
        })
    }
}

/// Which known subset `F` is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FSetKind {
    /// `F = { h >= delta + extra_margin }`.
    MarginOnly,
    /// `F = { h >= delta, grad h . (dx/dt, dy/dt) >= 0 }`: the vehicle is
    /// moving away from the nearest obstacle.
    MarginAndOutward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FSetSpec {
    pub kind: FSetKind,
    pub delta: f64,
    pub extra_margin: f64,
}

/// Membership tolerance used by the optimizers.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

impl FSetSpec {
    pub fn margin_only(delta: f64, extra_margin: f64) -> Self {
        FSetSpec {
            kind: FSetKind::MarginOnly,
            delta,
            extra_margin,
        }
    }

    pub fn margin_and_outward(delta: f64) -> Self {
        FSetSpec {
            kind: FSetKind::MarginAndOutward,
            delta,
            extra_margin: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(CbfError::config("f_set.delta_m", "must be > 0"));
        }
        if !(self.extra_margin >= 0.0) {
            return Err(CbfError::config("f_set.extra_margin_m", "must be >= 0"));
        }
        Ok(())
    }

    /// Lower bound on `h` over `F`.
    pub fn h_threshold(&self) -> f64 {
        match self.kind {
            FSetKind::MarginOnly => self.delta + self.extra_margin,
            FSetKind::MarginAndOutward => self.delta,
        }
    }

    /// Outwardness `grad h . (cos(psi + beta), sin(psi + beta))`.
    fn outwardness(obstacles: &ObstacleField, s: &State, beta: f64) -> f64 {
        match obstacles.h_gradient_pos(s) {
            Ok(g) => {
                let (sn, cs) = (s.psi + beta).sin_cos();
                g.grad[0] * cs + g.grad[1] * sn
            }
            Err(_) => -1.0,
        }
    }

    /// Membership with slack `tol` on both conditions.
    pub fn contains_tol(&self, obstacles: &ObstacleField, s: &State, tol: f64) -> bool {
        self.margins(obstacles, s).iter().all(|m| *m >= -tol)
    }

    pub fn contains(&self, obstacles: &ObstacleField, s: &State) -> bool {
        self.contains_tol(obstacles, s, 0.0)
    }

    /// Nonnegative distance-like measure of how far `s` is from `F`.
    pub fn violation(&self, obstacles: &ObstacleField, s: &State) -> f64 {
        self.margins(obstacles, s)
            .iter()
            .map(|m| (-m).max(0.0))
            .sum()
    }

    /// Signed margins of the membership conditions (>= 0 means satisfied).
    fn margins(&self, obstacles: &ObstacleField, s: &State) -> [f64; 2] {
        let h = obstacles.h_value(s);
        match self.kind {
            FSetKind::MarginOnly => [h - self.delta - self.extra_margin, 0.0],
            FSetKind::MarginAndOutward => {
                [h - self.delta, Self::outwardness(obstacles, s, 0.0)]
            }
        }
    }
}

/// Membership test. The outward condition is evaluated at the witness input
/// direction when one is given, and at `zeta = 0` otherwise.
pub fn in_f(spec: &FSetSpec, obstacles: &ObstacleField, s: &State, witness: Option<&Input>) -> bool {
    match (spec.kind, witness) {
        (FSetKind::MarginAndOutward, Some(u)) => {
            let beta = (0.5 * u.zeta.tan()).atan();
            obstacles.h_value(s) >= spec.delta && FSetSpec::outwardness(obstacles, s, beta) >= 0.0
        }
        _ => spec.contains(obstacles, s),
    }
}

/// Input keeping `MarginAndOutward` invariant: straight at `v_min` while
/// the heading points away from the nearest obstacle, otherwise a full-lock
/// turn towards the outward direction.
pub fn outward_policy(obstacles: &ObstacleField, s: &State, bounds: &InputBounds) -> Input {
    match obstacles.h_gradient_pos(s) {
        Ok(g) => {
            let (sn, cs) = s.psi.sin_cos();
            if g.grad[0] * cs + g.grad[1] * sn >= 0.0 {
                Input::new(bounds.v_min, 0.0)
            } else {
                let cross = cs * g.grad[1] - sn * g.grad[0];
                let dir = if cross >= 0.0 { 1.0 } else { -1.0 };
                Input::new(bounds.v_min, dir * bounds.zeta_max)
            }
        }
        Err(_) => Input::new(bounds.v_min, 0.0),
    }
}

/// Upper bound on the time needed to reach `F` from `H \ F`, using the
/// arc-and-line constructions for a single circle. With several circles
/// the largest per-circle bound is returned.
pub fn tau_bound(
    obstacles: &ObstacleField,
    kind: FSetKind,
    turn_radius: f64,
    delta: f64,
    bounds: &InputBounds,
) -> f64 {
    let r = turn_radius;
    obstacles
        .circles()
        .iter()
        .map(|c| {
            let big_r = c.radius;
            match kind {
                FSetKind::MarginOnly => {
                    (2.0 * (big_r + r + delta)).min((2.0 + PI) * r + delta) / bounds.v_max
                }
                FSetKind::MarginAndOutward => {
                    (2.0 * (big_r + delta)).min(PI * r + delta) / bounds.v_max
                }
            }
        })
        .fold(0.0, f64::max)
}

/// Piecewise-linear class-K function with slope `k1` up to `knee` and
/// slope `k2` beyond. Negative arguments extend with slope `k1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassK {
    pub k1: f64,
    pub knee: f64,
    pub k2: f64,
}

impl ClassK {
    pub fn new(k1: f64, knee: f64, k2: f64) -> Result<Self> {
        if !(k1 > 0.0) || !(k2 > 0.0) || !(knee >= 0.0) {
            return Err(CbfError::config("alpha", "k1, k2 must be > 0 and knee >= 0"));
        }
        Ok(ClassK { k1, knee, k2 })
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        if s <= self.knee {
            self.k1 * s
        } else {
            self.k1 * self.knee + self.k2 * (s - self.knee)
        }
    }
}

pub fn alpha_eval(a: &ClassK, s: f64) -> f64 {
    a.eval(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate_rk4, min_turn_radius, BicycleParams, ControlSchedule};

    fn single() -> ObstacleField {
        ObstacleField::single([0.0, 0.0], 5.0).unwrap()
    }

    fn ex4() -> (BicycleParams, InputBounds, f64) {
        let p = BicycleParams::new(1.0).unwrap();
        let b = InputBounds::new(1.0, 5.0, PI / 9.0).unwrap();
        let r = min_turn_radius(&p, &b);
        (p, b, r)
    }

    #[test]
    fn h_examples() {
        let f = single();
        assert_eq!(f.h_value(&State::new(8.0, 0.0, 1.0)), 3.0);
        assert_eq!(f.h_value(&State::new(8.0, 0.0, -2.0)), 3.0);
        assert_eq!(f.h_value(&State::new(5.0, 0.0, 0.0)), 0.0);
        let two = ObstacleField::new(vec![
            Circle::new([0.0, 0.0], 5.0),
            Circle::new([20.0, 0.0], 5.0),
        ])
        .unwrap();
        assert_eq!(two.h_value(&State::new(10.0, 0.0, 0.0)), 5.0);
    }

    #[test]
    fn field_validation() {
        assert!(ObstacleField::new(vec![]).is_err());
        assert!(ObstacleField::single([0.0, 0.0], 0.0).is_err());
        assert!(ObstacleField::new(vec![
            Circle::new([1.0, 1.0], 1.0),
            Circle::new([1.0, 1.0], 2.0)
        ])
        .is_err());
    }

    #[test]
    fn gradient_examples() {
        let f = single();
        let g = f.h_gradient_pos(&State::new(8.0, 0.0, 0.0)).unwrap();
        assert_eq!(g.grad, [1.0, 0.0]);
        let g = f.h_gradient_pos(&State::new(0.0, 8.0, 0.0)).unwrap();
        assert_eq!(g.grad, [0.0, 1.0]);
        assert!(f.h_gradient_pos(&State::new(0.0, 0.0, 0.0)).is_err());

        let two = ObstacleField::new(vec![
            Circle::new([0.0, 0.0], 5.0),
            Circle::new([20.0, 0.0], 5.0),
        ])
        .unwrap();
        let g = two.h_gradient_pos(&State::new(10.0, 0.0, 0.0)).unwrap();
        assert!(g.tie);
        assert_eq!(g.circle, 0);
        assert_eq!(g.grad, [1.0, 0.0]);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let f = ObstacleField::new(vec![
            Circle::new([0.0, 0.0], 5.0),
            Circle::new([14.0, 6.0], 5.0),
            Circle::new([14.0, -6.0], 5.0),
        ])
        .unwrap();
        let e = 1e-6;
        for i in 0..40 {
            let (x, y) = (-9.0 + 0.77 * i as f64, 8.0 * (0.31 * i as f64).sin());
            let g = f.gradient_at(x, y).unwrap();
            let gx = (f.h_at(x + e, y) - f.h_at(x - e, y)) / (2.0 * e);
            let gy = (f.h_at(x, y + e) - f.h_at(x, y - e)) / (2.0 * e);
            assert!((g.grad[0] - gx).abs() < 1e-6 && (g.grad[1] - gy).abs() < 1e-6);
            assert!((g.grad[0].hypot(g.grad[1]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn membership_examples() {
        let f = single();
        let (_, _, r) = ex4();
        let spec = FSetSpec::margin_only(2.79, 5.58);
        assert!(in_f(&spec, &f, &State::new(14.0, 0.0, 0.0), None));
        assert!(!in_f(&spec, &f, &State::new(13.0, 0.0, 0.0), None));
        let out = FSetSpec::margin_and_outward(r);
        assert!(in_f(&out, &f, &State::new(8.0, 0.0, 0.0), None));
        assert!(!in_f(&out, &f, &State::new(8.0, 0.0, PI), None));
        assert!(!in_f(&out, &f, &State::new(7.0, 0.0, 0.0), None));
        // witness direction tilts the velocity by beta
        let side = State::new(8.0, 0.0, PI / 2.0 + 0.1);
        assert!(!in_f(&out, &f, &side, None));
        assert!(in_f(&out, &f, &side, Some(&Input::new(1.0, -0.34))));
    }

    #[test]
    fn tau_bound_examples() {
        let f = single();
        let b = InputBounds::new(1.0, 5.0, PI / 9.0).unwrap();
        let t2 = tau_bound(&f, FSetKind::MarginOnly, 2.79, 2.79, &b);
        assert!((t2 - 3.427_008_700_703_104).abs() < 1e-12);
        let t3 = tau_bound(&f, FSetKind::MarginAndOutward, 2.79, 2.79, &b);
        assert!((t3 - 2.311_008_700_703_105).abs() < 1e-12);
        let fast = InputBounds::new(1.0, 10.0, PI / 9.0).unwrap();
        let t3f = tau_bound(&f, FSetKind::MarginAndOutward, 2.79, 2.79, &fast);
        assert!((t3f - 0.5 * t3).abs() < 1e-12);
    }

    #[test]
    fn alpha_examples() {
        let a = ClassK::new(0.5, 2.79, 50.0).unwrap();
        assert_eq!(a.eval(0.0), 0.0);
        assert!((alpha_eval(&a, 2.79) - 1.395).abs() < 1e-12);
        assert!((a.eval(3.79) - 51.395).abs() < 1e-12);
        assert!(a.eval(-1.0) < 0.0);
        assert!(ClassK::new(0.0, 1.0, 1.0).is_err());
    }

    /// Full-lock turn towards the radial direction, then straight.
    fn escape_maneuver(f: &ObstacleField, s: &State, b: &InputBounds) -> Input {
        let g = f.h_gradient_pos(s).unwrap().grad;
        let (sn, cs) = s.psi.sin_cos();
        let cross = cs * g[1] - sn * g[0];
        let dot = cs * g[0] + sn * g[1];
        if dot > 0.999 {
            Input::new(b.v_max, 0.0)
        } else {
            let dir = if cross >= 0.0 { 1.0 } else { -1.0 };
            Input::new(b.v_max, dir * b.zeta_max)
        }
    }

    #[test]
    fn maneuver_reaches_f_within_tau_bound() {
        use rand::{Rng, SeedableRng};
        let f = single();
        let (p, b, r) = ex4();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for spec in [FSetSpec::margin_only(r, 2.0 * r), FSetSpec::margin_and_outward(r)] {
            let bound = tau_bound(&f, spec.kind, r, r, &b);
            let mut tested = 0;
            while tested < 50 {
                let rad = rng.gen_range(5.0..5.0 + spec.h_threshold());
                let th = rng.gen_range(-PI..PI);
                let s0 = State::new(rad * th.cos(), rad * th.sin(), rng.gen_range(-PI..PI));
                if spec.contains(&f, &s0) {
                    continue;
                }
                tested += 1;
                let dt = 0.01;
                let mut s = s0;
                let mut t = 0.0;
                while !spec.contains(&f, &s) {
                    let u = escape_maneuver(&f, &s, &b);
                    let sched = ControlSchedule::constant(u, 1, dt);
                    s = integrate_rk4(&s, &sched, &p, 1).final_state();
                    t += dt;
                    assert!(t <= bound + dt, "{spec:?} from {s0:?}: {t} > {bound}");
                }
            }
        }
    }

    #[test]
    fn outward_set_is_invariant_under_policy() {
        use rand::{Rng, SeedableRng};
        let f = single();
        let (p, b, r) = ex4();
        let spec = FSetSpec::margin_and_outward(r);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut tested = 0;
        while tested < 100 {
            let rad = rng.gen_range(5.0 + r..20.0);
            let th = rng.gen_range(-PI..PI);
            let s0 = State::new(rad * th.cos(), rad * th.sin(), rng.gen_range(-PI..PI));
            if !spec.contains(&f, &s0) {
                continue;
            }
            tested += 1;
            let mut s = s0;
            for _ in 0..100 {
                let u = outward_policy(&f, &s, &b);
                let traj = integrate_rk4(&s, &ControlSchedule::constant(u, 1, 0.05), &p, 5);
                for n in &traj.states {
                    assert!(f.h_value(n) >= r - 1e-9);
                }
                s = traj.final_state();
            }
            assert!(spec.contains_tol(&f, &s, 1e-9));
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn h_is_lipschitz_and_heading_free(
                x1 in -20.0..20.0f64, y1 in -20.0..20.0f64,
                x2 in -20.0..20.0f64, y2 in -20.0..20.0f64,
                p1 in -3.0..3.0f64, p2 in -3.0..3.0f64,
            ) {
                let f = ObstacleField::new(vec![
                    Circle::new([0.0, 0.0], 5.0),
                    Circle::new([14.0, 6.0], 3.0),
                ]).unwrap();
                let a = f.h_value(&State::new(x1, y1, p1));
                let b = f.h_value(&State::new(x2, y2, p2));
                prop_assert!((a - b).abs() <= (x1 - x2).hypot(y1 - y2) + 1e-12);
                prop_assert_eq!(a, f.h_value(&State::new(x1, y1, p2)));
            }

            #[test]
            fn f_lies_in_margin_set(
                x in -20.0..20.0f64, y in -20.0..20.0f64, psi in -3.2..3.2f64,
                outward in proptest::bool::ANY,
            ) {
                let f = super::single();
                let spec = if outward {
                    FSetSpec::margin_and_outward(2.79)
                } else {
                    FSetSpec::margin_only(2.79, 5.58)
                };
                let s = State::new(x, y, psi);
                if spec.contains(&f, &s) {
                    prop_assert!(f.h_value(&s) >= spec.delta);
                }
            }

            #[test]
            fn alpha_is_increasing(a in -5.0..20.0f64, d in 1e-6..10.0f64) {
                let k = ClassK::new(0.5, 2.79, 50.0).unwrap();
                prop_assert!(k.eval(a) < k.eval(a + d));
            }
        }
    }
}
