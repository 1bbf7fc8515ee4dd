use std::path::Path;
use std::sync::OnceLock;

use predictive_cbf::builder::sweep_grid;
use predictive_cbf::field::sidecar_path;
use predictive_cbf::filter::FilterStatus;
use predictive_cbf::mpc::{mpc_maxmin_step, run_mpc_with, MpcConfig};
use predictive_cbf::{
    run_baseline_h, run_filtered, BarrierField, CbfError, MpcMode, NodeFlag, ScenarioConfig, State,
};

fn scenario(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)).unwrap()
}

fn tiny() -> &'static (ScenarioConfig, BarrierField) {
    static CELL: OnceLock<(ScenarioConfig, BarrierField)> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = scenario("tiny.json");
        let (field, _, _) = cfg.build_field(1).unwrap();
        (cfg, field)
    })
}

#[test]
fn sweep_is_thread_count_independent() {
    let (cfg, field) = tiny();
    let (other, stats, _) = sweep_grid(&cfg.problem(), &cfg.grid, 3).unwrap();
    assert_eq!(other.to_bytes(), field.to_bytes());
    assert_eq!(stats.infeasible_solve, 0);
    assert_eq!(stats.feasible_fraction(), 1.0);
}

#[test]
fn sweep_flags_follow_h() {
    let (cfg, field) = tiny();
    let g = cfg.grid;
    for ip in 0..g.npsi {
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let s = g.node_state(ix, iy, ip);
                let h = cfg.obstacles.h_value(&s);
                let (flag, v) = field.node(ix, iy, ip);
                if h < 0.0 {
                    assert_eq!(flag, NodeFlag::Infeasible);
                    assert_eq!(v, h);
                } else if h >= g.mask_threshold {
                    assert_eq!(flag, NodeFlag::OutsideMask);
                } else {
                    assert_eq!(flag, NodeFlag::Computed);
                    assert!(v <= h + 1e-12);
                }
            }
        }
    }
}

#[test]
fn save_load_round_trip() {
    let (cfg, field) = tiny();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.cbf");
    let meta = cfg.field_meta(&Default::default()).unwrap();
    field.save(&path, &meta).unwrap();
    assert!(sidecar_path(&path).is_file());
    let (back, back_meta) = BarrierField::load(&path).unwrap();
    assert_eq!(back.to_bytes(), field.to_bytes());
    assert_eq!(back_meta, meta);
    cfg.check_provenance(&back_meta).unwrap();

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
    assert!(matches!(BarrierField::load(&path), Err(CbfError::CorruptFile(_))));

    let other = scenario("example4.json");
    assert!(matches!(other.check_provenance(&meta), Err(CbfError::Provenance { .. })));
}

#[test]
fn runs_are_bit_identical() {
    let (cfg, field) = tiny();
    let a = run_filtered(cfg, field).unwrap();
    let b = run_filtered(cfg, field).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a, b);
    let times: Vec<f64> = a.steps.iter().map(|r| r.t).collect();
    assert!(times.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(a.summary.collision, a.summary.min_h < 0.0);
}

#[test]
fn far_obstacle_never_filters() {
    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(
            Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/tiny.json"),
        ).unwrap())
        .unwrap();
    v["obstacles"][0]["center_m"] = serde_json::json!([0.0, 200.0]);
    v["grid"]["y_range_m"] = serde_json::json!([186.0, 214.0]);
    let cfg = ScenarioConfig::from_json(&v.to_string()).unwrap();
    let (field, _, _) = cfg.build_field(1).unwrap();
    let filtered = run_filtered(&cfg, &field).unwrap();
    let baseline = run_baseline_h(&cfg).unwrap();
    assert!(filtered.steps.iter().all(|r| r.status == FilterStatus::NominalPassed));
    assert_eq!(filtered.summary.filter_energy, 0.0);
    let strip = |log: &predictive_cbf::RunLog| -> Vec<(State, f64, f64)> {
        log.steps.iter().map(|r| (r.state, r.u.v, r.u.zeta)).collect()
    };
    assert_eq!(strip(&filtered), strip(&baseline));
}

#[test]
fn mpc_warm_start_dominates_cold() {
    let cfg = scenario("example4.json");
    let (mc, settings) = MpcConfig::from_scenario(&cfg, MpcMode::MaxMin).unwrap();
    let run = run_mpc_with(&cfg, &mc, settings.initial_state, 12, None).unwrap();
    let mut warm = None;
    for rec in &run.records {
        let (sched, warm_rec) = mpc_maxmin_step(&cfg, &mc, &rec.state, rec.t_k, None, warm.as_ref()).unwrap();
        let (_, cold) = mpc_maxmin_step(&cfg, &mc, &rec.state, rec.t_k, None, None).unwrap();
        assert!(warm_rec.objective >= cold.objective - 1e-9, "{} < {}", warm_rec.objective, cold.objective);
        warm = Some(sched);
    }
}

#[test]
fn mpc_cost_shifted_candidate_stays_feasible() {
    let cfg = scenario("example4.json");
    let (mc, settings) = MpcConfig::from_scenario(&cfg, MpcMode::GeneralCost).unwrap();
    let run = run_mpc_with(&cfg, &mc, settings.initial_state, 30, None).unwrap();
    assert_eq!(run.summary.infeasible_solves, 0);
    assert!(run.records[1..].iter().all(|r| r.candidate_feasible == Some(true)));
    assert!(run.summary.min_h >= -1e-6);
}
