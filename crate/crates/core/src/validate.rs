//! Checks run against a built field.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::builder::MaxMinProblem;
use crate::dynamics::State;
use crate::error::Result;
use crate::field::{BarrierField, NodeFlag};
use crate::scenario::ScenarioConfig;
use crate::simulator::{cbf_condition_probe, ProbeConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        CheckResult { name, passed, detail }
    }
}

/// `H_T <= h` at every computed node.
pub fn check_node_bound(field: &BarrierField) -> CheckResult {
    let g = *field.grid();
    let mut worst = f64::NEG_INFINITY;
    let mut bad = 0;
    let mut n = 0;
    for ip in 0..g.npsi {
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let (flag, v) = field.node(ix, iy, ip);
                if flag != NodeFlag::Computed {
                    continue;
                }
                n += 1;
                let excess = v - field.obstacles().h_value(&g.node_state(ix, iy, ip));
                worst = worst.max(excess);
                if excess > 1e-12 {
                    bad += 1;
                }
            }
        }
    }
    CheckResult::new(
        "node_bound",
        bad == 0,
        format!("{bad}/{n} computed nodes exceed h, max excess {worst:e}"),
    )
}

fn computed_nodes(field: &BarrierField) -> Vec<(usize, usize, usize)> {
    let g = *field.grid();
    let mut out = Vec::new();
    for ip in 0..g.npsi {
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                if field.node(ix, iy, ip).0 == NodeFlag::Computed {
                    out.push((ix, iy, ip));
                }
            }
        }
    }
    out
}

/// Stored values and fresh solves dominate the enumeration oracle.
pub fn check_oracle_dominance(cfg: &ScenarioConfig, field: &BarrierField, nodes: usize, seed: u64) -> CheckResult {
    let p = cfg.problem();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all = computed_nodes(field);
    let picked: Vec<_> = all.choose_multiple(&mut rng, nodes).copied().collect();
    let mut ok = 0;
    let mut worst = f64::INFINITY;
    for &(ix, iy, ip) in &picked {
        let s = field.grid().node_state(ix, iy, ip);
        let oracle = p.enumerate_oracle(&s, cfg.solver.oracle_segments);
        let stored = field.node(ix, iy, ip).1;
        let fresh = p.solve(&s, &[]).value;
        let gap = if oracle.feasible { stored.min(fresh) - oracle.best_value } else { 0.0 };
        worst = worst.min(gap);
        if gap >= -1e-9 {
            ok += 1;
        }
    }
    CheckResult::new(
        "oracle_dominance",
        ok == picked.len() && !picked.is_empty(),
        format!("{ok}/{} nodes, worst gap {worst:e}", picked.len()),
    )
}

/// Outcome of the horizon-monotonicity comparison at one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonotonicitySample {
    pub state: State,
    pub short: f64,
    pub long: f64,
}

/// Samples states with `H_{T1} < delta` and compares against `H_{T2}`
/// solved with the short maximizer continued inside `F` as a seed.
pub fn monotonicity_samples(
    cfg: &ScenarioConfig,
    t_short: f64,
    count: usize,
    seed: u64,
) -> Vec<MonotonicitySample> {
    let long = cfg.problem();
    let short_h = cfg.horizon.with_horizon(t_short);
    let short = MaxMinProblem { horizon: &short_h, ..long };
    let g = cfg.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < 200 * count.max(1) {
        attempts += 1;
        let s = State::new(
            rng.gen_range(g.x_range[0]..g.x_range[1]),
            rng.gen_range(g.y_range[0]..g.y_range[1]),
            rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        );
        let h = cfg.obstacles.h_value(&s);
        if !(0.0..g.mask_threshold).contains(&h) {
            continue;
        }
        let r1 = short.solve(&s, &[]);
        if !r1.feasible || r1.value >= cfg.f_set.delta {
            continue;
        }
        let seed_sched = long.continue_in_f(&s, &r1.schedule, short_h.segment_count);
        let r2 = long.solve(&s, &[seed_sched]);
        out.push(MonotonicitySample { state: s, short: r1.value, long: r2.value });
    }
    out
}

pub fn check_t_monotonicity(cfg: &ScenarioConfig, t_short: f64, count: usize, seed: u64) -> CheckResult {
    let samples = monotonicity_samples(cfg, t_short, count, seed);
    let ok = samples.iter().filter(|m| m.short <= m.long + 1e-9).count();
    CheckResult::new(
        "t_monotonicity",
        ok == count,
        format!("{ok}/{count} states with H_T1 <= H_T2 (T1 = {t_short}, found {})", samples.len()),
    )
}

pub fn check_probe(cfg: &ScenarioConfig, field: &BarrierField, seed: u64) -> Result<CheckResult> {
    let pc = ProbeConfig {
        samples: cfg.validate.probe_samples,
        tolerance: cfg.validate.probe_tolerance_mps,
        seed,
        ..Default::default()
    };
    let rep = cbf_condition_probe(field, &cfg.bicycle, &cfg.bounds, &cfg.filter.alpha, &pc)?;
    Ok(CheckResult::new(
        "cbf_probe",
        rep.violations == 0,
        format!("{} violations in {} samples, worst margin {:.4}", rep.violations, rep.samples.len(), rep.worst_margin),
    ))
}

pub fn check_lipschitz(cfg: &ScenarioConfig, field: &BarrierField) -> CheckResult {
    let r = field.lipschitz_report();
    CheckResult::new(
        "lipschitz",
        r.max_slope <= cfg.validate.lipschitz_bound,
        format!(
            "slopes x {:.3} y {:.3} psi {:.3} (bound {})",
            r.max_slope_x, r.max_slope_y, r.max_slope_psi, cfg.validate.lipschitz_bound
        ),
    )
}

/// Full suite; `quick` skips the horizon-monotonicity re-solves.
pub fn run_validation(cfg: &ScenarioConfig, field: &BarrierField, quick: bool, seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = vec![
        check_node_bound(field),
        check_oracle_dominance(cfg, field, cfg.validate.oracle_nodes, seed),
    ];
    if !quick {
        let t1 = (cfg.horizon.horizon - 2.0).max(cfg.horizon.dt_segment());
        out.push(check_t_monotonicity(cfg, t1, cfg.validate.monotonicity_states, seed));
    }
    out.push(check_probe(cfg, field, seed)?);
    out.push(check_lipschitz(cfg, field));
    Ok(out)
}
