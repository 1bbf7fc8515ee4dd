//! Turning radius, a constant-input arc against RK4, and the observed order.

use std::f64::consts::PI;

use predictive_cbf::dynamics::constant_input_arc;
use predictive_cbf::{integrate_rk4, min_turn_radius, BicycleParams, ControlSchedule, Input, InputBounds, State};

fn main() {
    let p = BicycleParams::new(1.0).unwrap();
    let b = InputBounds::new(1.0, 5.0, PI / 9.0).unwrap();
    println!("minimum turning radius r = {:.4} m", min_turn_radius(&p, &b));

    let s0 = State::new(0.0, 0.0, 0.3);
    let u = Input::new(3.0, 0.25);
    let exact = constant_input_arc(&s0, &u, &p, 1.0);
    let mut prev: Option<f64> = None;
    for dt in [0.1f64, 0.05, 0.025, 0.0125] {
        let n = (1.0 / dt).round() as usize;
        let traj = integrate_rk4(&s0, &ControlSchedule::constant(u, n, dt), &p, 1);
        let end = traj.final_state();
        let err = ((end.x - exact.x).powi(2) + (end.y - exact.y).powi(2)).sqrt();
        match prev {
            Some(e) => println!("dt {dt:<7} error {err:.3e}  order {:.2}", (e / err).log2()),
            None => println!("dt {dt:<7} error {err:.3e}"),
        }
        prev = Some(err);
    }
}
