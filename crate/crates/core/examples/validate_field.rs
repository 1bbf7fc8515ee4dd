//! Runs the field checks: node bound, oracle dominance, horizon
//! monotonicity, CBF probe and Lipschitz slopes.

use predictive_cbf::validate::run_validation;
use predictive_cbf::ScenarioConfig;

mod common;

fn main() {
    let cfg = ScenarioConfig::load(&common::scenario_path("example4.json")).unwrap();
    let field = common::field_for(&cfg);
    for c in run_validation(&cfg, &field, false, 0).unwrap() {
        println!("{:<18} {}  {}", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail);
    }
}
