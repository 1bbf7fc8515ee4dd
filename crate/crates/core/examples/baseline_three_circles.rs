//! Three circles: the filter with `H_T` against the filter with `b = h`.

use predictive_cbf::plot::{render_svg, Trace, TraceStyle};
use predictive_cbf::{run_baseline_h, run_filtered, ScenarioConfig};

mod common;

fn main() {
    let cfg = ScenarioConfig::load(&common::scenario_path("three_circles.json")).unwrap();
    let field = common::field_for(&cfg);
    let good = run_filtered(&cfg, &field).unwrap();
    let base = run_baseline_h(&cfg).unwrap();
    for (name, log) in [("H_T", &good), ("b = h", &base)] {
        let s = &log.summary;
        println!(
            "{name:<6} min_h {:>8.4}  infeasible steps {:>4}  collision {}",
            s.min_h, s.infeasible_steps, s.collision
        );
    }
    let (a, b) = (good.trajectory(), base.trajectory());
    let svg = render_svg(
        &cfg,
        &[
            Trace { states: &b, style: TraceStyle::Baseline, label: "b = h" },
            Trace { states: &a, style: TraceStyle::Filtered, label: "H_T" },
        ],
    );
    let path = std::env::temp_dir().join("three_circles.svg");
    std::fs::write(&path, svg).unwrap();
    println!("wrote {}", path.display());
}
