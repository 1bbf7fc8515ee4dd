//! Single filter calls near the obstacle, field against the raw constraint.

use predictive_cbf::{filter, ConstraintBarrier, ScenarioConfig, State};

mod common;

fn main() {
    let cfg = ScenarioConfig::load(&common::scenario_path("example4.json")).unwrap();
    let field = common::field_for(&cfg);
    for s in [State::new(-7.0, 0.5, 0.0), State::new(-5.6, 0.2, 0.0), State::new(3.0, 4.8, -0.6)] {
        let u_nom = predictive_cbf::nominal_line_controller(&s, &cfg.nominal, &cfg.bounds);
        let a = filter(&s, &u_nom, &field, &cfg.filter, &cfg.bicycle, &cfg.bounds).unwrap();
        let b = filter(&s, &u_nom, &ConstraintBarrier(&cfg.obstacles), &cfg.filter, &cfg.bicycle, &cfg.bounds).unwrap();
        println!("state ({}, {}, {})  nominal ({:.2}, {:.3})", s.x, s.y, s.psi, u_nom.v, u_nom.zeta);
        println!("  H_T {:>8.4}  {:?} -> ({:.3}, {:.3})", a.barrier_value, a.status, a.u.v, a.u.zeta);
        println!("  h   {:>8.4}  {:?} -> ({:.3}, {:.3})", b.barrier_value, b.status, b.u.v, b.u.zeta);
    }
}
