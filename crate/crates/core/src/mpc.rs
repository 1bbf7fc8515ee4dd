//! Receding-horizon controllers.
//!
//! `MaxMin` re-solves the max-min program (some-time membership) at every
//! step. `GeneralCost` minimizes a tracking cost subject to `h >= 0` at the
//! integration nodes and terminal membership in `F`. Both warm start from
//! the previous schedule shifted by the applied interval and continued
//! inside `F`.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::builder::{HorizonSpec, MaxMinProblem, MembershipMode};
use crate::constraints::MEMBERSHIP_TOL;
use crate::dynamics::{ControlSchedule, Input, KinematicBicycle, State};
use crate::error::{CbfError, Result};
use crate::field::BarrierField;
use crate::scenario::{MpcSettings, ScenarioConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MpcMode {
    MaxMin,
    GeneralCost,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    pub mode: MpcMode,
    pub horizon: HorizonSpec,
    /// Applied interval per step [s].
    pub apply_dt: f64,
    pub w_track: f64,
    pub w_eff: f64,
    pub v_nom: f64,
    pub y_ref: f64,
}

impl MpcConfig {
    pub fn from_scenario(cfg: &ScenarioConfig, mode: MpcMode) -> Result<(Self, MpcSettings)> {
        let m = cfg
            .mpc
            .ok_or_else(|| CbfError::config("mpc", "scenario has no mpc section"))?;
        let membership = match mode {
            MpcMode::MaxMin => MembershipMode::SomeTime,
            MpcMode::GeneralCost => MembershipMode::Terminal,
        };
        let c = MpcConfig {
            mode,
            horizon: HorizonSpec { membership, ..cfg.horizon },
            apply_dt: m.apply_dt,
            w_track: m.w_track,
            w_eff: m.w_eff,
            v_nom: m.v_nom,
            y_ref: cfg.nominal.y_ref,
        };
        c.validate()?;
        Ok((c, m))
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.apply_segments_f();
        if !(self.apply_dt > 0.0) || self.apply_dt > self.horizon.horizon + 1e-12 || (k - k.round()).abs() > 1e-9 {
            return Err(CbfError::config(
                "mpc.apply_dt_s",
                "must be a positive multiple of the segment length and <= T",
            ));
        }
        Ok(())
    }

    fn apply_segments_f(&self) -> f64 {
        self.apply_dt / self.horizon.dt_segment()
    }

    pub fn apply_segments(&self) -> usize {
        self.apply_segments_f().round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MpcStepRecord {
    pub t_k: f64,
    pub state: State,
    pub solve_feasible: bool,
    /// Max-min value, or the tracking cost.
    pub objective: f64,
    pub h: f64,
    /// Interpolated field value when a field is supplied.
    pub h_t_at_state: Option<f64>,
    pub applied_inputs: Vec<Input>,
    /// Whether the shifted-and-continued candidate from the previous step
    /// satisfied every constraint before optimization.
    pub candidate_feasible: Option<bool>,
    #[serde(skip)]
    pub solve_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MpcSummary {
    pub steps: usize,
    pub infeasible_solves: usize,
    pub candidate_infeasible: usize,
    /// Minimum of `h` over every closed-loop integration node.
    pub min_h: f64,
    /// `min_k [value_k - min(value_0, delta)]` in max-min mode.
    pub worst_margin_drop: Option<f64>,
    pub mean_solve_seconds: f64,
    pub aborted: Option<String>,
    pub final_state: State,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MpcRun {
    pub records: Vec<MpcStepRecord>,
    pub summary: MpcSummary,
}

impl MpcRun {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,y,psi,v,zeta,feasible,objective,h,H_T\n");
        for r in &self.records {
            let u = r.applied_inputs.first().copied().unwrap_or(Input::new(f64::NAN, f64::NAN));
            let ht = r.h_t_at_state.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.t_k, r.state.x, r.state.y, r.state.psi, u.v, u.zeta, r.solve_feasible, r.objective, r.h, ht
            );
        }
        out
    }
}

/// Drops the first `m` segments.
pub fn shift_schedule(sched: &ControlSchedule, m: usize) -> ControlSchedule {
    let inputs = sched.inputs[m.min(sched.inputs.len())..].to_vec();
    ControlSchedule {
        dt_segment: sched.dt_segment,
        inputs: if inputs.is_empty() { vec![*sched.inputs.last().unwrap()] } else { inputs },
    }
}

fn warm_candidate(
    problem: &MaxMinProblem<'_>,
    x: &State,
    warm: Option<&ControlSchedule>,
    m: usize,
) -> Option<ControlSchedule> {
    warm.map(|w| {
        let shifted = shift_schedule(w, m);
        let keep = problem.horizon.segment_count.saturating_sub(m);
        problem.continue_in_f(x, &shifted, keep)
    })
}

fn field_value(field: Option<&BarrierField>, s: &State) -> Option<f64> {
    field.and_then(|f| f.value(s).ok()).map(|(v, _)| v)
}

/// One max-min step from `x`.
pub fn mpc_maxmin_step(
    scenario: &ScenarioConfig,
    cfg: &MpcConfig,
    x: &State,
    t_k: f64,
    field: Option<&BarrierField>,
    warm: Option<&ControlSchedule>,
) -> Result<(ControlSchedule, MpcStepRecord)> {
    let horizon = cfg.horizon;
    let problem = MaxMinProblem { horizon: &horizon, ..scenario.problem() };
    let m = cfg.apply_segments();
    let started = Instant::now();
    let cand = warm_candidate(&problem, x, warm, m);
    let candidate_feasible = cand.as_ref().map(|c| {
        let e = problem.evaluate_candidate(x, c);
        e.membership_ok && e.hard_min_h >= 0.0
    });
    let seeds: Vec<ControlSchedule> = cand.into_iter().collect();
    let res = problem.solve(x, &seeds);
    let record = MpcStepRecord {
        t_k,
        state: *x,
        solve_feasible: res.feasible,
        objective: res.value,
        h: scenario.obstacles.h_value(x),
        h_t_at_state: field_value(field, x),
        applied_inputs: res.schedule.inputs[..m].to_vec(),
        candidate_feasible,
        solve_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((res.schedule, record))
}

/// Cost and constraint evaluation of one schedule in cost mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEval {
    pub cost: f64,
    pub min_h: f64,
    pub terminal_violation: f64,
}

impl CostEval {
    pub fn feasible(&self) -> bool {
        self.min_h >= 0.0 && self.terminal_violation <= MEMBERSHIP_TOL
    }

    fn penalized(&self, rho: f64) -> f64 {
        self.cost + rho * ((-self.min_h).max(0.0) + self.terminal_violation)
    }
}

/// `sum_nodes [w_track (y - y_ref)^2 + w_eff ((v - v_nom)^2 + zeta^2)] h_sub`
/// together with the node-wise `h` minimum and terminal `F` violation.
pub fn evaluate_cost(
    scenario: &ScenarioConfig,
    cfg: &MpcConfig,
    x0: &State,
    inputs: &[Input],
) -> CostEval {
    let model = KinematicBicycle::new(scenario.bicycle);
    let dt = cfg.horizon.dt_segment();
    let substeps = scenario.solver.substeps;
    let hs = dt / substeps as f64;
    let mut x = [x0.x, x0.y, x0.psi];
    let mut cost = 0.0;
    let mut min_h = scenario.obstacles.h_value(x0);
    for u in inputs {
        let effort = cfg.w_eff * ((u.v - cfg.v_nom).powi(2) + u.zeta * u.zeta);
        model.propagate_segment(&mut x, u, dt, substeps, |n| {
            cost += (cfg.w_track * (n[1] - cfg.y_ref).powi(2) + effort) * hs;
            min_h = min_h.min(scenario.obstacles.h_at(n[0], n[1]));
        });
    }
    let end = State::new(x[0], x[1], x[2]);
    CostEval {
        cost,
        min_h,
        terminal_violation: scenario.f_set.violation(&scenario.obstacles, &end),
    }
}

fn better(a: &CostEval, b: &CostEval, rho: f64) -> bool {
    match (a.feasible(), b.feasible()) {
        (true, false) => true,
        (false, true) => false,
        (true, true) => a.cost < b.cost,
        (false, false) => a.penalized(rho) < b.penalized(rho),
    }
}

/// Coordinate descent on the tracking cost; feasible iterates stay
/// feasible, infeasible ones descend an exact penalty.
fn descend(
    scenario: &ScenarioConfig,
    cfg: &MpcConfig,
    x0: &State,
    mut inputs: Vec<Input>,
) -> (Vec<Input>, CostEval) {
    let b = &scenario.bounds;
    let rho = 1e3;
    let mut cur = evaluate_cost(scenario, cfg, x0, &inputs);
    let mut dv = 0.25 * (b.v_max - b.v_min);
    let mut dz = 0.5 * b.zeta_max;
    for _ in 0..scenario.solver.max_passes * 4 {
        let mut improved = false;
        for i in 0..inputs.len() {
            for axis in 0..2 {
                for sign in [1.0, -1.0] {
                    let mut trial = inputs.clone();
                    let u = &mut trial[i];
                    if axis == 0 {
                        u.v = (u.v + sign * dv).clamp(b.v_min, b.v_max);
                    } else {
                        u.zeta = (u.zeta + sign * dz).clamp(-b.zeta_max, b.zeta_max);
                    }
                    if trial[i] == inputs[i] {
                        continue;
                    }
                    let e = evaluate_cost(scenario, cfg, x0, &trial);
                    if better(&e, &cur, rho) {
                        inputs = trial;
                        cur = e;
                        improved = true;
                        break;
                    }
                }
            }
        }
        if !improved {
            dv *= 0.5;
            dz *= 0.5;
            if dz < scenario.solver.min_zeta_step {
                break;
            }
        }
    }
    (inputs, cur)
}

/// One cost-mode step from `x`.
pub fn mpc_generalcost_step(
    scenario: &ScenarioConfig,
    cfg: &MpcConfig,
    x: &State,
    t_k: f64,
    field: Option<&BarrierField>,
    warm: Option<&ControlSchedule>,
) -> Result<(ControlSchedule, MpcStepRecord)> {
    let horizon = cfg.horizon;
    let problem = MaxMinProblem { horizon: &horizon, ..scenario.problem() };
    let n = horizon.segment_count;
    let m = cfg.apply_segments();
    let started = Instant::now();

    let cand = warm_candidate(&problem, x, warm, m);
    let mut starts: Vec<Vec<Input>> = Vec::new();
    let mut candidate_feasible = None;
    if let Some(c) = &cand {
        candidate_feasible = Some(evaluate_cost(scenario, cfg, x, &c.inputs).feasible());
        starts.push(c.inputs.clone());
    }
    starts.push(vec![Input::new(cfg.v_nom, 0.0); n]);
    // the max-min maximizer is a feasible start whenever x lies in S_T
    if !candidate_feasible.unwrap_or(false) {
        let seeds: Vec<ControlSchedule> = cand.into_iter().collect();
        let r = problem.solve(x, &seeds);
        if r.feasible {
            starts.push(r.schedule.inputs);
        }
    }

    let mut best: Option<(Vec<Input>, CostEval)> = None;
    for s in starts {
        let (inputs, e) = descend(scenario, cfg, x, s);
        if best.as_ref().map_or(true, |(_, b)| better(&e, b, 1e3)) {
            best = Some((inputs, e));
        }
    }
    let (inputs, eval) = best.expect("at least one start");
    let record = MpcStepRecord {
        t_k,
        state: *x,
        solve_feasible: eval.feasible(),
        objective: eval.cost,
        h: scenario.obstacles.h_value(x),
        h_t_at_state: field_value(field, x),
        applied_inputs: inputs[..m].to_vec(),
        candidate_feasible,
        solve_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((ControlSchedule { dt_segment: horizon.dt_segment(), inputs }, record))
}

/// Closed-loop receding-horizon run. An infeasible solve ends the run and
/// is reported in the summary.
pub fn run_mpc(
    scenario: &ScenarioConfig,
    mode: MpcMode,
    field: Option<&BarrierField>,
) -> Result<MpcRun> {
    let (cfg, settings) = MpcConfig::from_scenario(scenario, mode)?;
    run_mpc_with(scenario, &cfg, settings.initial_state, settings.steps, field)
}

pub fn run_mpc_with(
    scenario: &ScenarioConfig,
    cfg: &MpcConfig,
    x0: State,
    steps: usize,
    field: Option<&BarrierField>,
) -> Result<MpcRun> {
    cfg.validate()?;
    let model = KinematicBicycle::new(scenario.bicycle);
    let dt = cfg.horizon.dt_segment();
    let substeps = scenario.solver.substeps;
    let mut x = x0;
    let mut warm: Option<ControlSchedule> = None;
    let mut records = Vec::with_capacity(steps);
    let mut min_h = scenario.obstacles.h_value(&x);
    let mut aborted = None;
    let mut reference: Option<f64> = None;
    let mut worst_drop: Option<f64> = None;
    for k in 0..steps {
        let t_k = k as f64 * cfg.apply_dt;
        let (sched, rec) = match cfg.mode {
            MpcMode::MaxMin => mpc_maxmin_step(scenario, cfg, &x, t_k, field, warm.as_ref())?,
            MpcMode::GeneralCost => mpc_generalcost_step(scenario, cfg, &x, t_k, field, warm.as_ref())?,
        };
        if cfg.mode == MpcMode::MaxMin {
            let r = *reference.get_or_insert(rec.objective.min(scenario.f_set.delta));
            let d = rec.objective - r;
            worst_drop = Some(worst_drop.map_or(d, |w: f64| w.min(d)));
        }
        let feasible = rec.solve_feasible;
        let applied = rec.applied_inputs.clone();
        records.push(rec);
        if !feasible {
            aborted = Some(format!("infeasible solve at t = {t_k}"));
            break;
        }
        let mut a = [x.x, x.y, x.psi];
        for u in &applied {
            model.propagate_segment(&mut a, u, dt, substeps, |n| {
                min_h = min_h.min(scenario.obstacles.h_at(n[0], n[1]));
            });
        }
        x = State::new(a[0], a[1], a[2]);
        warm = Some(sched);
    }
    let infeasible_solves = records.iter().filter(|r| !r.solve_feasible).count();
    let candidate_infeasible = records.iter().filter(|r| r.candidate_feasible == Some(false)).count();
    let mean = records.iter().map(|r| r.solve_seconds).sum::<f64>() / records.len().max(1) as f64;
    Ok(MpcRun {
        summary: MpcSummary {
            steps: records.len(),
            infeasible_solves,
            candidate_infeasible,
            min_h,
            worst_margin_drop: worst_drop,
            mean_solve_seconds: mean,
            aborted,
            final_state: x,
        },
        records,
    })
}
