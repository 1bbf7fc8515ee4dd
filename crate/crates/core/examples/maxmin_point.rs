//! Max-min value at single states, checked against the enumeration oracle.

use predictive_cbf::{MaxMinProblem, MembershipMode, ScenarioConfig, State};

mod common;

fn main() {
    let cfg = ScenarioConfig::load(&common::scenario_path("example4.json")).unwrap();
    for mode in [MembershipMode::Terminal, MembershipMode::SomeTime] {
        let horizon = predictive_cbf::HorizonSpec { membership: mode, ..cfg.horizon };
        let p = MaxMinProblem { horizon: &horizon, ..cfg.problem() };
        println!("{mode:?}");
        for s in [State::new(10.0, 0.0, 0.0), State::new(6.0, 1.0, 2.8), State::new(-5.5, 0.5, 0.0)] {
            let res = p.solve(&s, &[]);
            let oracle = p.enumerate_oracle(&s, cfg.solver.oracle_segments);
            println!(
                "  ({:>5.1}, {:>4.1}, {:>4.1})  h = {:.4}  H_T = {:.4}  oracle = {:.4}  t* = {:.2}",
                s.x, s.y, s.psi, cfg.obstacles.h_value(&s), res.value, oracle.best_value, res.t_star
            );
        }
    }
}
