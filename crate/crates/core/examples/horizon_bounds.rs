//! Horizon bounds for both terminal sets and the escape maneuver behind them.

use std::f64::consts::PI;

use predictive_cbf::constraints::outward_policy;
use predictive_cbf::{
    in_f, integrate_rk4, min_turn_radius, tau_bound, BicycleParams, ControlSchedule, FSetKind,
    FSetSpec, Input, InputBounds, ObstacleField, State,
};

fn main() {
    let p = BicycleParams::new(1.0).unwrap();
    let b = InputBounds::new(1.0, 5.0, PI / 9.0).unwrap();
    let r = min_turn_radius(&p, &b);
    let obs = ObstacleField::single([0.0, 0.0], 5.0).unwrap();
    for kind in [FSetKind::MarginOnly, FSetKind::MarginAndOutward] {
        println!("{kind:?}: tau_bar = {:.3} s", tau_bound(&obs, kind, r, r, &b));
    }

    // tangential start: full-lock turn away until outward, then straight,
    // both at top speed
    let spec = FSetSpec::margin_and_outward(r);
    let start = State::new(5.5, 0.0, PI / 2.0);
    let mut s = start;
    let dt = 0.05;
    let mut t = 0.0;
    while !in_f(&spec, &obs, &s, None) && t < 10.0 {
        let u = Input { v: b.v_max, ..outward_policy(&obs, &s, &b) };
        s = integrate_rk4(&s, &ControlSchedule::constant(u, 1, dt), &p, 2).final_state();
        t += dt;
    }
    println!(
        "escape from {start:?} reached F after {t:.2} s (bound {:.3} s), h = {:.3}",
        tau_bound(&obs, FSetKind::MarginAndOutward, r, r, &b),
        obs.h_value(&s)
    );
}
