//! Finite-horizon max-min problem defining the barrier value `H_T`.
//!
//! For a start state `x0` the value is the best achievable worst-case `h`
//! along a trajectory of length `T` that visits `F` (`SomeTime`) or ends in
//! `F` (`Terminal`). Schedules are piecewise constant; the reported value is
//! always the exact minimum of `h` over the integration nodes of the
//! returned schedule. The p-norm soft minimum only steers the local search.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{outward_policy, FSetKind, FSetSpec, ObstacleField, MEMBERSHIP_TOL};
use crate::dynamics::{BicycleParams, ControlSchedule, Input, InputBounds, KinematicBicycle, State};
use crate::error::{CbfError, Result};
use crate::field::{BarrierField, NodeFlag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MembershipMode {
    /// The trajectory must visit `F` at some node.
    SomeTime,
    /// The final state must lie in `F`.
    Terminal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonSpec {
    /// Horizon `T` [s].
    pub horizon: f64,
    pub segment_count: usize,
    pub membership: MembershipMode,
    pub softmin_p: f64,
    pub softmin_shift: f64,
}

impl HorizonSpec {
    pub fn dt_segment(&self) -> f64 {
        self.horizon / self.segment_count as f64
    }

    /// Same segment length, different horizon.
    pub fn with_horizon(&self, horizon: f64) -> HorizonSpec {
        let dt = self.dt_segment();
        HorizonSpec {
            horizon,
            segment_count: (horizon / dt).round().max(1.0) as usize,
            ..*self
        }
    }

    pub fn validate(&self, tau_bar: f64) -> Result<()> {
        if self.segment_count < 2 {
            return Err(CbfError::config("horizon.segment_count", "must be >= 2"));
        }
        if !(self.horizon > 0.0) || self.horizon < tau_bar {
            return Err(CbfError::config(
                "horizon.horizon_s",
                format!("must be >= tau_bar = {tau_bar}"),
            ));
        }
        if !(self.softmin_p >= 4.0) {
            return Err(CbfError::config("horizon.softmin_p", "must be >= 4"));
        }
        Ok(())
    }
}

/// Tuning of the local search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// RK4 substeps per schedule segment.
    pub substeps: usize,
    /// Number of best start candidates refined by coordinate ascent.
    pub refine_starts: usize,
    /// Coordinate sweeps per refinement.
    pub max_passes: usize,
    /// Refinement stops once the steering step falls below this [rad].
    pub min_zeta_step: f64,
    /// Coarse segments of the enumeration oracle.
    pub oracle_segments: usize,
    pub use_oracle: bool,
    pub penalty_start: f64,
    pub penalty_cap: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            substeps: 5,
            refine_starts: 2,
            max_passes: 10,
            min_zeta_step: 2e-3,
            oracle_segments: 4,
            use_oracle: true,
            penalty_start: 10.0,
            penalty_cap: 1e6,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolveDiagnostics {
    pub evaluations: usize,
    pub oracle_evaluations: usize,
    pub passes: usize,
    pub starts: usize,
    pub final_penalty: f64,
    /// Membership violation of the returned schedule (0 when feasible).
    pub penalty_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxMinResult {
    /// Exact minimum of `h` along the returned schedule.
    pub value: f64,
    pub schedule: ControlSchedule,
    /// Time of the minimizing node.
    pub t_star: f64,
    /// Membership time.
    pub vartheta_star: f64,
    pub feasible: bool,
    /// `h(x0) < 0` was passed in.
    pub start_infeasible: bool,
    pub diagnostics: SolveDiagnostics,
}

/// Grid over `(x, y, psi)`; `psi` is periodic with nodes at
/// `-pi + 2 pi k / npsi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub nx: usize,
    pub ny: usize,
    pub npsi: usize,
    pub mask_threshold: f64,
}

impl GridSpec {
    pub fn validate(&self, obstacles: &ObstacleField) -> Result<()> {
        if self.nx < 4 || self.ny < 4 {
            return Err(CbfError::config("grid.nx/ny", "must be >= 4"));
        }
        if self.npsi < 8 {
            return Err(CbfError::config("grid.npsi", "must be >= 8"));
        }
        if !(self.x_range[1] > self.x_range[0]) || !(self.y_range[1] > self.y_range[0]) {
            return Err(CbfError::config("grid.x_range_m/y_range_m", "empty range"));
        }
        if !(self.mask_threshold > 0.0) {
            return Err(CbfError::config("grid.mask_threshold_m", "must be > 0"));
        }
        for (i, c) in obstacles.circles().iter().enumerate() {
            let reach = c.radius + self.mask_threshold;
            if c.center[0] - reach < self.x_range[0]
                || c.center[0] + reach > self.x_range[1]
                || c.center[1] - reach < self.y_range[0]
                || c.center[1] + reach > self.y_range[1]
            {
                return Err(CbfError::config(
                    "grid.x_range_m/y_range_m",
                    format!("range does not cover the h < threshold band of obstacle {i}"),
                ));
            }
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_range[1] - self.x_range[0]) / (self.nx - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_range[1] - self.y_range[0]) / (self.ny - 1) as f64
    }

    pub fn dpsi(&self) -> f64 {
        2.0 * PI / self.npsi as f64
    }

    pub fn node_count(&self) -> usize {
        self.nx * self.ny * self.npsi
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, ipsi: usize) -> usize {
        (ipsi * self.ny + iy) * self.nx + ix
    }

    pub fn node_state(&self, ix: usize, iy: usize, ipsi: usize) -> State {
        State::new(
            self.x_range[0] + ix as f64 * self.dx(),
            self.y_range[0] + iy as f64 * self.dy(),
            -PI + ipsi as f64 * self.dpsi(),
        )
    }
}

/// Normalized p-norm soft minimum
/// `(sum_i (v_i + shift)^(-p) / n)^(-1/p) - shift`.
///
/// Exact on constant sequences and monotone in each argument; it lies
/// between the hard minimum and `min + (min + shift)(n^(1/p) - 1)`.
pub fn soft_min(values: &[f64], p: f64, shift: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(CbfError::Domain("soft_min of an empty sequence".into()));
    }
    let mut acc = 0.0;
    for v in values {
        let s = v + shift;
        if !(s > 0.0) {
            return Err(CbfError::Domain(format!("shifted value {s} is not positive")));
        }
        acc += s.powf(-p);
    }
    Ok((acc / values.len() as f64).powf(-1.0 / p) - shift)
}

/// Problem data shared by every solve.
#[derive(Debug, Clone, Copy)]
pub struct MaxMinProblem<'a> {
    pub obstacles: &'a ObstacleField,
    pub f_set: &'a FSetSpec,
    pub bounds: &'a InputBounds,
    pub bicycle: &'a BicycleParams,
    pub horizon: &'a HorizonSpec,
    pub solver: &'a SolverConfig,
}

/// Outcome of evaluating one schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateEval {
    pub hard_min_h: f64,
    pub t_star: f64,
    pub membership_ok: bool,
    /// Membership time; meaningful only when `membership_ok`.
    pub vartheta: f64,
    pub soft_min: f64,
    pub violation: f64,
}

/// Per-segment cached statistics of a rollout.
#[derive(Debug, Clone, Copy, Default)]
struct SegmentStats {
    min_h: f64,
    argmin: usize,
    power_sum: f64,
    min_violation: f64,
    first_member: Option<usize>,
}

/// Incrementally re-integrated schedule. Changing segment `i` invalidates
/// only segments `i..`.
struct Rollout<'p, 'a> {
    problem: &'p MaxMinProblem<'a>,
    bike: KinematicBicycle,
    substeps: usize,
    dt: f64,
    shift: f64,
    inputs: Vec<Input>,
    boundary: Vec<[f64; 3]>,
    stats: Vec<SegmentStats>,
    valid: usize,
    start: SegmentStats,
    evaluations: usize,
}

impl<'p, 'a> Rollout<'p, 'a> {
    fn new(problem: &'p MaxMinProblem<'a>, x0: &State, inputs: Vec<Input>) -> Self {
        let n = inputs.len();
        let substeps = problem.solver.substeps.max(1);
        let mut r = Rollout {
            problem,
            bike: KinematicBicycle::new(*problem.bicycle),
            substeps,
            dt: problem.horizon.dt_segment(),
            shift: problem.horizon.softmin_shift,
            inputs,
            boundary: vec![[0.0; 3]; n + 1],
            stats: vec![SegmentStats::default(); n],
            valid: 0,
            start: SegmentStats::default(),
            evaluations: 0,
        };
        r.boundary[0] = x0.to_array();
        r.start = r.node_stats(&r.boundary[0], 0);
        r
    }

    fn node_stats(&self, node: &[f64; 3], index: usize) -> SegmentStats {
        let p = self.problem;
        let h = p.obstacles.h_at(node[0], node[1]);
        let mut st = SegmentStats {
            min_h: h,
            argmin: index,
            power_sum: (h + self.shift).powf(-p.horizon.softmin_p),
            min_violation: f64::INFINITY,
            first_member: None,
        };
        if p.horizon.membership == MembershipMode::SomeTime {
            let s = State::from_array(*node);
            st.min_violation = p.f_set.violation(p.obstacles, &s);
            if p.f_set.contains_tol(p.obstacles, &s, MEMBERSHIP_TOL) {
                st.first_member = Some(index);
            }
        }
        st
    }

    fn len(&self) -> usize {
        self.inputs.len()
    }

    fn set(&mut self, i: usize, u: Input) {
        if self.inputs[i] != u {
            self.inputs[i] = u;
            self.valid = self.valid.min(i);
        }
    }

    fn ensure(&mut self, k: usize) {
        while self.valid < k {
            let seg = self.valid;
            let mut x = self.boundary[seg];
            let base = seg * self.substeps;
            let mut acc = SegmentStats {
                min_h: f64::INFINITY,
                argmin: base,
                power_sum: 0.0,
                min_violation: f64::INFINITY,
                first_member: None,
            };
            let u = self.inputs[seg];
            let mut j = base;
            let mut nodes = [[0.0; 3]; 64];
            let mut count = 0;
            let substeps = self.substeps;
            if substeps <= nodes.len() {
                self.bike
                    .propagate_segment(&mut x, &u, self.dt, substeps, |node| {
                        nodes[count] = *node;
                        count += 1;
                    });
                for node in &nodes[..count] {
                    j += 1;
                    let st = self.node_stats(node, j);
                    merge(&mut acc, &st);
                }
            } else {
                let mut all = Vec::with_capacity(substeps);
                self.bike
                    .propagate_segment(&mut x, &u, self.dt, substeps, |node| all.push(*node));
                for node in &all {
                    j += 1;
                    let st = self.node_stats(node, j);
                    merge(&mut acc, &st);
                }
            }
            self.stats[seg] = acc;
            self.boundary[seg + 1] = x;
            self.valid += 1;
        }
    }

    /// Minimum of `h` over the nodes of the first `k` segments.
    fn prefix_min(&self, k: usize) -> f64 {
        self.stats[..k]
            .iter()
            .fold(self.start.min_h, |m, s| m.min(s.min_h))
    }

    fn evaluate(&mut self) -> CandidateEval {
        let n = self.len();
        self.ensure(n);
        self.evaluations += 1;
        let p = self.problem;
        let h_step = self.dt / self.substeps as f64;
        let mut agg = self.start;
        for st in &self.stats {
            merge(&mut agg, st);
        }
        let count = (n * self.substeps + 1) as f64;
        let soft = (agg.power_sum / count).powf(-1.0 / p.horizon.softmin_p) - self.shift;
        let (membership_ok, vartheta, violation) = match p.horizon.membership {
            MembershipMode::Terminal => {
                let end = State::from_array(self.boundary[n]);
                let ok = p.f_set.contains_tol(p.obstacles, &end, MEMBERSHIP_TOL);
                let viol = if ok { 0.0 } else { p.f_set.violation(p.obstacles, &end) };
                (ok, self.dt * n as f64, viol)
            }
            MembershipMode::SomeTime => match agg.first_member {
                Some(idx) => (true, idx as f64 * h_step, 0.0),
                None => (false, f64::NAN, agg.min_violation),
            },
        };
        CandidateEval {
            hard_min_h: agg.min_h,
            t_star: agg.argmin as f64 * h_step,
            membership_ok,
            vartheta,
            soft_min: soft,
            violation,
        }
    }

    fn state_at_boundary(&mut self, k: usize) -> State {
        self.ensure(k);
        State::from_array(self.boundary[k])
    }
}

/// Stats of earlier nodes come first in `acc`.
fn merge(acc: &mut SegmentStats, st: &SegmentStats) {
    if st.min_h < acc.min_h {
        acc.min_h = st.min_h;
        acc.argmin = st.argmin;
    }
    acc.power_sum += st.power_sum;
    acc.min_violation = acc.min_violation.min(st.min_violation);
    if acc.first_member.is_none() {
        acc.first_member = st.first_member;
    }
}

/// Best membership-feasible candidate seen so far.
#[derive(Debug, Clone)]
struct Incumbent {
    inputs: Vec<Input>,
    eval: CandidateEval,
}

fn better(a: &CandidateEval, b: Option<&Incumbent>) -> bool {
    a.membership_ok && b.map_or(true, |b| a.hard_min_h > b.eval.hard_min_h)
}

impl<'a> MaxMinProblem<'a> {
    fn dt(&self) -> f64 {
        self.horizon.dt_segment()
    }

    fn n(&self) -> usize {
        self.horizon.segment_count
    }

    /// Integrates a schedule and reports its exact min of `h` and
    /// membership status.
    pub fn evaluate_candidate(&self, x0: &State, sched: &ControlSchedule) -> CandidateEval {
        let inputs = self.fit_schedule(sched);
        Rollout::new(self, x0, inputs).evaluate()
    }

    /// Resamples a schedule onto this problem's segmentation, padding with
    /// the last input and clamping to the input box.
    pub fn fit_schedule(&self, sched: &ControlSchedule) -> Vec<Input> {
        let n = self.n();
        let dt = self.dt();
        if sched.segment_count() == n && (sched.dt_segment - dt).abs() < 1e-12 {
            return sched.inputs.iter().map(|u| self.bounds.clamp(*u)).collect();
        }
        (0..n)
            .map(|i| {
                let t = (i as f64 + 0.5) * dt;
                let j = ((t / sched.dt_segment).floor() as usize).min(sched.segment_count() - 1);
                self.bounds.clamp(sched.inputs[j])
            })
            .collect()
    }

    fn primitive_family(&self) -> Vec<(Vec<Input>, Vec<Vec<Input>>)> {
        // each entry: a base schedule plus arc-then-straight variants sharing
        // its prefix
        let n = self.n();
        let b = self.bounds;
        let mut out = Vec::new();
        for v in [b.v_max, b.v_min] {
            out.push((vec![Input::new(v, 0.0); n], Vec::new()));
            for dir in [1.0, -1.0] {
                let arc = Input::new(v, dir * b.zeta_max);
                let mut variants = Vec::new();
                for k in (1..n).rev() {
                    let mut sched = vec![arc; n];
                    for u in sched.iter_mut().skip(k) {
                        *u = Input::new(v, 0.0);
                    }
                    variants.push(sched);
                }
                out.push((vec![arc; n], variants));
            }
        }
        out
    }

    /// Exhaustive search over `{v_min, v_max} x {-zeta_max, 0, zeta_max}`
    /// on `coarse` equal coarse segments, each expanded to the fine
    /// segmentation. Branches whose running minimum cannot beat `floor`
    /// are pruned.
    fn enumerate_with_floor(
        &self,
        x0: &State,
        coarse: usize,
        floor: Option<f64>,
    ) -> (Option<Incumbent>, usize) {
        let n = self.n();
        let coarse = coarse.clamp(1, n);
        let b = self.bounds;
        let levels: Vec<Input> = [b.v_min, b.v_max]
            .iter()
            .flat_map(|&v| [-b.zeta_max, 0.0, b.zeta_max].map(move |z| Input::new(v, z)))
            .collect();
        let cut: Vec<usize> = (0..=coarse).map(|d| d * n / coarse).collect();
        let mut rollout = Rollout::new(self, x0, vec![levels[0]; n]);
        let mut best: Option<Incumbent> = None;
        let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
        let mut choice = vec![0usize; coarse];
        // iterative DFS over (depth, level index)
        while let Some((depth, li)) = stack.pop() {
            if li >= levels.len() {
                continue;
            }
            stack.push((depth, li + 1));
            choice[depth] = li;
            for s in cut[depth]..cut[depth + 1] {
                rollout.set(s, levels[li]);
            }
            rollout.ensure(cut[depth + 1]);
            let bar = best.as_ref().map(|b| b.eval.hard_min_h).or(floor);
            if let Some(bar) = bar {
                if rollout.prefix_min(cut[depth + 1]) <= bar {
                    continue;
                }
            }
            if depth + 1 == coarse {
                let eval = rollout.evaluate();
                let beats_floor = floor.map_or(true, |f| eval.hard_min_h > f);
                if beats_floor && better(&eval, best.as_ref()) {
                    best = Some(Incumbent {
                        inputs: rollout.inputs.clone(),
                        eval,
                    });
                }
            } else {
                stack.push((depth + 1, 0));
            }
        }
        (best, rollout.evaluations)
    }

    /// Independent lower-bound oracle for the max-min value.
    pub fn enumerate_oracle(&self, x0: &State, coarse_segments: usize) -> OracleResult {
        let (best, evaluations) = self.enumerate_with_floor(x0, coarse_segments, None);
        match best {
            Some(b) => OracleResult {
                best_value: b.eval.hard_min_h,
                best_schedule: Some(ControlSchedule {
                    dt_segment: self.dt(),
                    inputs: b.inputs,
                }),
                feasible: true,
                evaluations,
            },
            None => OracleResult {
                best_value: f64::NEG_INFINITY,
                best_schedule: None,
                feasible: false,
                evaluations,
            },
        }
    }

    /// Penalized soft objective used by the local search.
    fn objective(eval: &CandidateEval, penalty: f64) -> f64 {
        eval.soft_min - penalty * eval.violation
    }

    /// Projected coordinate ascent on the penalized soft minimum starting
    /// from `inputs`. Every evaluated schedule is offered to `best`.
    fn refine(
        &self,
        rollout: &mut Rollout<'_, 'a>,
        best: &mut Option<Incumbent>,
        h0: f64,
        diag: &mut SolveDiagnostics,
    ) {
        let n = self.n();
        let b = self.bounds;
        let cfg = self.solver;
        let mut penalty = cfg.penalty_start;
        let mut step_z = b.zeta_max / 2.0;
        let mut step_v = (b.v_max - b.v_min) / 2.0;
        let mut current = rollout.evaluate();
        let mut passes = 0;
        let offer = |eval: &CandidateEval, inputs: &[Input], best: &mut Option<Incumbent>| {
            if better(eval, best.as_ref()) {
                *best = Some(Incumbent {
                    inputs: inputs.to_vec(),
                    eval: *eval,
                });
            }
        };
        offer(&current, &rollout.inputs, best);
        let budget = cfg.max_passes * 3;
        while passes < budget {
            if best.as_ref().is_some_and(|i| i.eval.hard_min_h >= h0) {
                break;
            }
            passes += 1;
            let mut improved = false;
            let mut cur_obj = Self::objective(&current, penalty);
            for i in 0..n {
                for axis in 0..2 {
                    let base = rollout.inputs[i];
                    let mut best_u = base;
                    let mut best_eval = current;
                    for sign in [1.0, -1.0] {
                        let trial = if axis == 0 {
                            Input::new(base.v, (base.zeta + sign * step_z).clamp(-b.zeta_max, b.zeta_max))
                        } else {
                            if b.v_max <= b.v_min {
                                continue;
                            }
                            Input::new((base.v + sign * step_v).clamp(b.v_min, b.v_max), base.zeta)
                        };
                        if trial == base {
                            continue;
                        }
                        rollout.set(i, trial);
                        let eval = rollout.evaluate();
                        offer(&eval, &rollout.inputs, best);
                        let obj = Self::objective(&eval, penalty);
                        if obj > cur_obj + 1e-12 {
                            cur_obj = obj;
                            best_u = trial;
                            best_eval = eval;
                        }
                    }
                    rollout.set(i, best_u);
                    if best_u != base {
                        improved = true;
                        current = best_eval;
                    }
                }
            }
            if !improved {
                if !current.membership_ok && penalty < cfg.penalty_cap {
                    penalty = (penalty * 2.0).min(cfg.penalty_cap);
                    continue;
                }
                step_z *= 0.5;
                step_v *= 0.5;
                if step_z < cfg.min_zeta_step || passes >= cfg.max_passes {
                    break;
                }
            }
        }
        diag.passes += passes;
        diag.final_penalty = diag.final_penalty.max(penalty);
    }

    /// Solves the max-min problem from `x0`, with optional caller seeds.
    pub fn solve(&self, x0: &State, seeds: &[ControlSchedule]) -> MaxMinResult {
        let n = self.n();
        let h0 = self.obstacles.h_value(x0);
        let mut diag = SolveDiagnostics::default();
        let mut best: Option<Incumbent> = None;
        // (penalized score, feasible, inputs) of every start
        let mut starts: Vec<(bool, f64, Vec<Input>)> = Vec::new();
        let mut evaluations = 0;
        let done = |best: &Option<Incumbent>| best.as_ref().is_some_and(|b| b.eval.hard_min_h >= h0);

        let consider = |inputs: Vec<Input>, eval: CandidateEval, best: &mut Option<Incumbent>,
                            starts: &mut Vec<(bool, f64, Vec<Input>)>| {
            if better(&eval, best.as_ref()) {
                *best = Some(Incumbent {
                    inputs: inputs.clone(),
                    eval,
                });
            }
            let score = Self::objective(&eval, self.solver.penalty_start);
            starts.push((eval.membership_ok, score, inputs));
        };

        for seed in seeds {
            let inputs = self.fit_schedule(seed);
            let mut r = Rollout::new(self, x0, inputs);
            let eval = r.evaluate();
            evaluations += r.evaluations;
            consider(r.inputs, eval, &mut best, &mut starts);
        }

        if !done(&best) {
            for (base, variants) in self.primitive_family() {
                let mut r = Rollout::new(self, x0, base);
                let eval = r.evaluate();
                consider(r.inputs.clone(), eval, &mut best, &mut starts);
                for v in variants {
                    for (i, u) in v.iter().enumerate() {
                        r.set(i, *u);
                    }
                    let eval = r.evaluate();
                    consider(r.inputs.clone(), eval, &mut best, &mut starts);
                }
                evaluations += r.evaluations;
                if done(&best) {
                    break;
                }
            }
        }

        if self.solver.use_oracle && !done(&best) {
            let floor = best.as_ref().map(|b| b.eval.hard_min_h);
            let (found, evals) = self.enumerate_with_floor(x0, self.solver.oracle_segments, floor);
            diag.oracle_evaluations = evals;
            if let Some(inc) = found {
                let eval = inc.eval;
                consider(inc.inputs, eval, &mut best, &mut starts);
            }
        }
        diag.starts = starts.len();

        if !done(&best) && self.solver.refine_starts > 0 {
            starts.sort_by(|a, b| {
                b.0.cmp(&a.0)
                    .then(b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal))
            });
            let mut picked: Vec<Vec<Input>> = Vec::new();
            for (_, _, inputs) in starts {
                if picked.len() >= self.solver.refine_starts {
                    break;
                }
                if picked.iter().any(|p| *p == inputs) {
                    continue;
                }
                picked.push(inputs);
            }
            for inputs in picked {
                if done(&best) {
                    break;
                }
                let mut r = Rollout::new(self, x0, inputs);
                self.refine(&mut r, &mut best, h0, &mut diag);
                evaluations += r.evaluations;
            }
        }
        diag.evaluations = evaluations + diag.oracle_evaluations;

        match best {
            Some(inc) => MaxMinResult {
                value: inc.eval.hard_min_h,
                schedule: ControlSchedule {
                    dt_segment: self.dt(),
                    inputs: inc.inputs,
                },
                t_star: inc.eval.t_star,
                vartheta_star: inc.eval.vartheta,
                feasible: true,
                start_infeasible: h0 < 0.0,
                diagnostics: diag,
            },
            None => {
                // report the least-violating start for diagnostics
                let straight = vec![Input::new(self.bounds.v_max, 0.0); n];
                let mut r = Rollout::new(self, x0, straight);
                let eval = r.evaluate();
                diag.penalty_residual = eval.violation;
                MaxMinResult {
                    value: eval.hard_min_h,
                    schedule: ControlSchedule {
                        dt_segment: self.dt(),
                        inputs: r.inputs,
                    },
                    t_star: eval.t_star,
                    vartheta_star: f64::NAN,
                    feasible: false,
                    start_infeasible: h0 < 0.0,
                    diagnostics: diag,
                }
            }
        }
    }

    /// Keeps the first `keep` segments of `sched` and fills the rest of the
    /// horizon with an input keeping the state in (or near) `F`: straight
    /// while heading away from the nearest obstacle for `MarginAndOutward`,
    /// a full-lock circle for `MarginOnly`.
    pub fn continue_in_f(&self, x0: &State, sched: &ControlSchedule, keep: usize) -> ControlSchedule {
        let n = self.n();
        let dt = self.dt();
        let fitted = self.fit_schedule(sched);
        let keep = keep.min(sched.segment_count()).min(n);
        let mut inputs: Vec<Input> = fitted[..keep].to_vec();
        inputs.resize(n, Input::new(self.bounds.v_min, 0.0));
        let mut r = Rollout::new(self, x0, inputs);
        for i in keep..n {
            let s = r.state_at_boundary(i);
            let u = match self.f_set.kind {
                FSetKind::MarginAndOutward => {
                    let pol = outward_policy(self.obstacles, &s, self.bounds);
                    if pol.zeta == 0.0 {
                        let v = if i > 0 { r.inputs[i - 1].v } else { self.bounds.v_min };
                        Input::new(v, 0.0)
                    } else {
                        pol
                    }
                }
                FSetKind::MarginOnly => Input::new(self.bounds.v_min, self.bounds.zeta_max),
            };
            r.set(i, u);
        }
        ControlSchedule {
            dt_segment: dt,
            inputs: r.inputs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub best_value: f64,
    pub best_schedule: Option<ControlSchedule>,
    pub feasible: bool,
    pub evaluations: usize,
}

/// `solve` that turns a missing membership-feasible schedule into an error.
pub fn solve_maxmin(
    problem: &MaxMinProblem<'_>,
    x0: &State,
    seeds: &[ControlSchedule],
) -> Result<MaxMinResult> {
    let res = problem.solve(x0, seeds);
    if res.feasible {
        Ok(res)
    } else {
        Err(CbfError::Infeasible(format!(
            "no schedule reaches F from ({}, {}, {}) within T = {}",
            x0.x, x0.y, x0.psi, problem.horizon.horizon
        )))
    }
}

/// Summary of a grid sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepStats {
    pub computed: usize,
    pub outside_mask: usize,
    pub infeasible_h_negative: usize,
    pub infeasible_solve: usize,
}

impl SweepStats {
    /// Fraction of unmasked nodes with `h >= 0` whose solve was feasible.
    pub fn feasible_fraction(&self) -> f64 {
        let total = self.computed + self.infeasible_solve;
        if total == 0 {
            1.0
        } else {
            self.computed as f64 / total as f64
        }
    }
}

/// Result of solving one node during a sweep.
#[derive(Debug, Clone)]
pub struct NodeSolution {
    pub flag: NodeFlag,
    pub value: f64,
    pub schedule: Option<ControlSchedule>,
}

fn solve_slice(problem: &MaxMinProblem<'_>, grid: &GridSpec, ipsi: usize, delta: f64) -> Vec<NodeSolution> {
    let mut out = Vec::with_capacity(grid.nx * grid.ny);
    let mut below: Vec<Option<ControlSchedule>> = vec![None; grid.nx];
    for iy in 0..grid.ny {
        let mut left: Option<ControlSchedule> = None;
        for ix in 0..grid.nx {
            let s = grid.node_state(ix, iy, ipsi);
            let h = problem.obstacles.h_value(&s);
            let node = if h < 0.0 {
                NodeSolution {
                    flag: NodeFlag::Infeasible,
                    value: h,
                    schedule: None,
                }
            } else if h >= grid.mask_threshold {
                NodeSolution {
                    flag: NodeFlag::OutsideMask,
                    value: delta + (h - grid.mask_threshold),
                    schedule: None,
                }
            } else {
                let seeds: Vec<ControlSchedule> =
                    left.iter().chain(below[ix].iter()).cloned().collect();
                let res = problem.solve(&s, &seeds);
                if res.feasible {
                    NodeSolution {
                        flag: NodeFlag::Computed,
                        value: res.value,
                        schedule: Some(res.schedule),
                    }
                } else {
                    NodeSolution {
                        flag: NodeFlag::Infeasible,
                        value: -delta,
                        schedule: None,
                    }
                }
            };
            left = node.schedule.clone();
            below[ix] = node.schedule.clone();
            out.push(node);
        }
    }
    out
}

/// Evaluates the barrier on every grid node with `0 <= h < mask_threshold`.
///
/// Slices of constant `psi` are independent and run in parallel on
/// `threads` workers; inside a slice nodes are visited y-major and each
/// solve is warm-started from its left and lower neighbors, so results do
/// not depend on the thread count.
pub fn sweep_grid(
    problem: &MaxMinProblem<'_>,
    grid: &GridSpec,
    threads: usize,
) -> Result<(BarrierField, SweepStats, Vec<Option<ControlSchedule>>)> {
    grid.validate(problem.obstacles)?;
    let delta = problem.f_set.delta;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CbfError::Domain(format!("thread pool: {e}")))?;
    let slices: Vec<Vec<NodeSolution>> = pool.install(|| {
        (0..grid.npsi)
            .into_par_iter()
            .map(|ipsi| solve_slice(problem, grid, ipsi, delta))
            .collect()
    });
    let mut values = Vec::with_capacity(grid.node_count());
    let mut flags = Vec::with_capacity(grid.node_count());
    let mut schedules = Vec::with_capacity(grid.node_count());
    let mut stats = SweepStats::default();
    for slice in slices {
        for node in slice {
            match node.flag {
                NodeFlag::Computed => stats.computed += 1,
                NodeFlag::OutsideMask => stats.outside_mask += 1,
                NodeFlag::Infeasible => {}
            }
            values.push(node.value);
            flags.push(node.flag);
            schedules.push(node.schedule);
        }
    }
    // h < 0 nodes vs failed solves
    for (i, f) in flags.iter().enumerate() {
        if *f == NodeFlag::Infeasible {
            let ipsi = i / (grid.nx * grid.ny);
            let rem = i % (grid.nx * grid.ny);
            let s = grid.node_state(rem % grid.nx, rem / grid.nx, ipsi);
            if problem.obstacles.h_value(&s) < 0.0 {
                stats.infeasible_h_negative += 1;
            } else {
                stats.infeasible_solve += 1;
            }
        }
    }
    let field = BarrierField::from_parts(
        *grid,
        delta,
        problem.horizon.horizon,
        values,
        flags,
        problem.obstacles.clone(),
    )?;
    Ok((field, stats, schedules))
}
