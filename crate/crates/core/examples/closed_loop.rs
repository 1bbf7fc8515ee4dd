//! Filtered line following past a single circle; writes CSV and SVG.

use predictive_cbf::plot::{render_svg, Trace, TraceStyle};
use predictive_cbf::{run_filtered, ScenarioConfig};

mod common;

fn main() {
    let cfg = ScenarioConfig::load(&common::scenario_path("example4.json")).unwrap();
    let field = common::field_for(&cfg);
    let log = run_filtered(&cfg, &field).unwrap();
    let s = &log.summary;
    println!(
        "min_h {:.4}  min_H {:.4}  filtered steps {}  infeasible steps {}  final ({:.2}, {:.3})",
        s.min_h, s.min_barrier, s.filtered_steps, s.infeasible_steps, s.final_state.x, s.final_state.y
    );
    let dir = std::env::temp_dir();
    log.write_csv(&dir.join("closed_loop.csv")).unwrap();
    let traj = log.trajectory();
    let svg = render_svg(&cfg, &[Trace { states: &traj, style: TraceStyle::Filtered, label: "H_T" }]);
    std::fs::write(dir.join("closed_loop.svg"), svg).unwrap();
    println!("wrote {}", dir.join("closed_loop.{csv,svg}").display());
}
