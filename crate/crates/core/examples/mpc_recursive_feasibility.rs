//! Both receding-horizon controllers for 100 steps from the scenario start.

use predictive_cbf::{run_mpc, MpcMode, ScenarioConfig};

mod common;

fn main() {
    let cfg = ScenarioConfig::load(&common::scenario_path("example4.json")).unwrap();
    for mode in [MpcMode::MaxMin, MpcMode::GeneralCost] {
        let run = run_mpc(&cfg, mode, None).unwrap();
        let s = &run.summary;
        println!(
            "{mode:?}: {} steps, {} infeasible, {} shifted candidates infeasible, min h {:.4}, {:.1} ms/step",
            s.steps,
            s.infeasible_solves,
            s.candidate_infeasible,
            s.min_h,
            1e3 * s.mean_solve_seconds
        );
        if let Some(d) = s.worst_margin_drop {
            println!("  worst drop below min(H_T(x0), delta): {d:.4}");
        }
    }
}
