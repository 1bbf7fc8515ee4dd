//! Closed-loop runs: nominal line follower, filtered execution against a
//! barrier, CSV logs and the CBF condition probe.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::constraints::ClassK;
use crate::dynamics::{wrap_angle, BicycleParams, Input, InputBounds, KinematicBicycle, State};
use crate::error::{CbfError, Result};
use crate::field::BarrierField;
use crate::filter::{filter, Barrier, ConstraintBarrier, FilterStatus};
use crate::scenario::{NominalGains, ScenarioConfig};

pub const CSV_HEADER: &str = "t,x,y,psi,v,zeta,v_nom,zeta_nom,status,h,H_T";

/// `psi_des = -atan(k_y (y - y_ref))` clamped to `+-pi/3`, proportional
/// steering toward it, full speed.
pub fn nominal_line_controller(s: &State, gains: &NominalGains, b: &InputBounds) -> Input {
    let lim = std::f64::consts::FRAC_PI_3;
    let psi_des = (-(gains.k_y * (s.y - gains.y_ref)).atan()).clamp(-lim, lim);
    let zeta = (-gains.k_psi * wrap_angle(s.psi - psi_des)).clamp(-b.zeta_max, b.zeta_max);
    Input::new(b.v_max, zeta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: f64,
    pub state: State,
    pub u_nom: Input,
    pub u: Input,
    pub status: FilterStatus,
    pub h: f64,
    /// Barrier value used by the filter (`h` itself for the baseline).
    pub barrier: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunSummary {
    /// Minimum of `h` over every integration node.
    pub min_h: f64,
    pub min_barrier: f64,
    pub infeasible_steps: usize,
    pub filtered_steps: usize,
    pub collision: bool,
    /// `sum |u - u_nom|^2` over control steps.
    pub filter_energy: f64,
    pub final_state: State,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunLog {
    pub steps: Vec<StepRecord>,
    pub summary: RunSummary,
}

impl RunLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(96 * (self.steps.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.steps {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.t,
                r.state.x,
                r.state.y,
                r.state.psi,
                r.u.v,
                r.u.zeta,
                r.u_nom.v,
                r.u_nom.zeta,
                r.status.as_str(),
                r.h,
                r.barrier
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn trajectory(&self) -> Vec<State> {
        let mut v: Vec<State> = self.steps.iter().map(|r| r.state).collect();
        v.push(self.summary.final_state);
        v
    }
}

/// Reads the `(x, y, psi)` columns of a run CSV.
pub fn read_csv_trajectory(text: &str) -> Result<Vec<State>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(CbfError::config("csv", "unexpected header"));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            let num = |i: usize| -> Result<f64> {
                cols.get(i)
                    .and_then(|c| c.parse::<f64>().ok())
                    .ok_or_else(|| CbfError::config("csv", format!("bad row: {l}")))
            };
            Ok(State { x: num(1)?, y: num(2)?, psi: num(3)? })
        })
        .collect()
}

fn run_with(cfg: &ScenarioConfig, barrier: &impl Barrier) -> Result<RunLog> {
    let sim = &cfg.sim;
    let bicycle = KinematicBicycle::new(cfg.bicycle);
    let substeps = sim.substeps();
    let mut s = sim.initial_state;
    let mut x = [s.x, s.y, s.psi];
    let mut steps = Vec::with_capacity(sim.steps());
    let mut min_h = cfg.obstacles.h_value(&s);
    let mut last_ok: Option<Input> = None;
    let (mut min_b, mut energy, mut infeasible, mut filtered) = (f64::INFINITY, 0.0, 0, 0);
    for k in 0..sim.steps() {
        let u_nom = nominal_line_controller(&s, &cfg.nominal, &cfg.bounds);
        let out = filter(&s, &u_nom, barrier, &cfg.filter, &cfg.bicycle, &cfg.bounds)?;
        let u = match out.status {
            FilterStatus::Infeasible => {
                infeasible += 1;
                last_ok.unwrap_or(out.u)
            }
            st => {
                if st == FilterStatus::Filtered {
                    filtered += 1;
                }
                last_ok = Some(out.u);
                out.u
            }
        };
        let h = cfg.obstacles.h_value(&s);
        min_b = min_b.min(out.barrier_value);
        energy += (u.v - u_nom.v).powi(2) + (u.zeta - u_nom.zeta).powi(2);
        steps.push(StepRecord {
            t: k as f64 * sim.control_period,
            state: s,
            u_nom,
            u,
            status: out.status,
            h,
            barrier: out.barrier_value,
        });
        bicycle.propagate_segment(&mut x, &u, sim.control_period, substeps, |n| {
            min_h = min_h.min(cfg.obstacles.h_at(n[0], n[1]));
        });
        s = State::new(x[0], x[1], x[2]);
    }
    Ok(RunLog {
        steps,
        summary: RunSummary {
            min_h,
            min_barrier: min_b,
            infeasible_steps: infeasible,
            filtered_steps: filtered,
            collision: min_h < 0.0,
            filter_energy: energy,
            final_state: s,
        },
    })
}

/// Runs the scenario with the safety filter built on `field`.
pub fn run_filtered(cfg: &ScenarioConfig, field: &BarrierField) -> Result<RunLog> {
    run_with(cfg, field)
}

/// Same loop with `b = h`. Infeasible steps hold the last feasible input.
pub fn run_baseline_h(cfg: &ScenarioConfig) -> Result<RunLog> {
    run_with(cfg, &ConstraintBarrier(&cfg.obstacles))
}

/// Settings of [`cbf_condition_probe`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub samples: usize,
    pub epsilon: f64,
    pub tolerance: f64,
    pub nv: usize,
    pub nzeta: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            samples: 200,
            epsilon: 1e-3,
            tolerance: 0.05,
            nv: 9,
            nzeta: 9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeSample {
    pub state: State,
    pub value: f64,
    /// `max_u [H(phi(eps; x, u)) - H(x)] / eps + alpha(H(x))`.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub samples: Vec<ProbeSample>,
    pub violations: usize,
    pub worst_margin: f64,
    pub worst_state: Option<State>,
}

/// Checks `sup_u D+H(x; u) >= -alpha(H(x))` with a forward difference at
/// random in-mask states with `H >= 0`.
pub fn cbf_condition_probe(
    field: &BarrierField,
    bicycle: &BicycleParams,
    bounds: &InputBounds,
    alpha: &ClassK,
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    let g = *field.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = KinematicBicycle::new(*bicycle);
    let mut samples = Vec::with_capacity(cfg.samples);
    let mut attempts = 0usize;
    while samples.len() < cfg.samples {
        attempts += 1;
        if attempts > 10_000 * cfg.samples.max(1) {
            return Err(CbfError::Domain("probe could not find in-mask states with H >= 0".into()));
        }
        let s = State::new(
            rng.gen_range(g.x_range[0]..g.x_range[1]),
            rng.gen_range(g.y_range[0]..g.y_range[1]),
            rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        );
        let (value, in_mask) = field.interpolate(&s)?;
        if !in_mask || value < 0.0 {
            continue;
        }
        let mut best = f64::NEG_INFINITY;
        for i in 0..cfg.nv {
            let v = bounds.v_min + (bounds.v_max - bounds.v_min) * i as f64 / (cfg.nv - 1) as f64;
            for j in 0..cfg.nzeta {
                let zeta = -bounds.zeta_max + 2.0 * bounds.zeta_max * j as f64 / (cfg.nzeta - 1) as f64;
                let mut x = [s.x, s.y, s.psi];
                model.propagate_segment(&mut x, &Input::new(v, zeta), cfg.epsilon, 1, |_| {});
                let (next, _) = field.value(&State::new(x[0], x[1], x[2]))?;
                best = best.max((next - value) / cfg.epsilon);
            }
        }
        samples.push(ProbeSample { state: s, value, margin: best + alpha.eval(value) });
    }
    let violations = samples.iter().filter(|p| p.margin < -cfg.tolerance).count();
    let worst = samples
        .iter()
        .min_by(|a, b| a.margin.total_cmp(&b.margin))
        .copied();
    Ok(ProbeReport {
        violations,
        worst_margin: worst.map_or(f64::INFINITY, |w| w.margin),
        worst_state: worst.map(|w| w.state),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::GridSpec;
    use crate::constraints::ObstacleField;

    fn gains() -> NominalGains {
        NominalGains { y_ref: 0.0, k_y: 0.5, k_psi: 2.0 }
    }

    fn bounds() -> InputBounds {
        InputBounds::new(1.0, 5.0, std::f64::consts::PI / 9.0).unwrap()
    }

    #[test]
    fn nominal_equilibrium_and_sign() {
        let b = bounds();
        assert_eq!(nominal_line_controller(&State::new(0.0, 0.0, 0.0), &gains(), &b), Input::new(5.0, 0.0));
        assert!(nominal_line_controller(&State::new(0.0, 3.0, 0.0), &gains(), &b).zeta < 0.0);
        assert!(nominal_line_controller(&State::new(0.0, -3.0, 0.0), &gains(), &b).zeta > 0.0);
    }

    #[test]
    fn nominal_converges_to_line() {
        let b = bounds();
        let model = KinematicBicycle::new(BicycleParams::new(1.0).unwrap());
        let mut x = [0.0, 3.0, 0.0];
        let mut settled_at = None;
        for k in 0..300 {
            let s = State::new(x[0], x[1], x[2]);
            if s.y.abs() < 0.1 && settled_at.is_none() {
                settled_at = Some(k as f64 * 0.05);
            }
            if s.y.abs() >= 0.1 {
                settled_at = None;
            }
            let u = nominal_line_controller(&s, &gains(), &b);
            model.propagate_segment(&mut x, &u, 0.05, 5, |_| {});
        }
        assert!(settled_at.is_some_and(|t| t < 15.0), "{settled_at:?}");
    }

    #[test]
    fn csv_round_trip() {
        let s = State::new(0.1, -2.5, 0.3);
        let log = RunLog {
            steps: vec![StepRecord {
                t: 0.05,
                state: s,
                u_nom: Input::new(5.0, 0.0),
                u: Input::new(4.5, -0.1),
                status: FilterStatus::Filtered,
                h: 1.0 / 3.0,
                barrier: 0.25,
            }],
            summary: RunSummary {
                min_h: 0.0,
                min_barrier: 0.0,
                infeasible_steps: 0,
                filtered_steps: 1,
                collision: false,
                filter_energy: 0.0,
                final_state: s,
            },
        };
        let csv = log.to_csv();
        assert!(csv.starts_with(CSV_HEADER));
        assert!(csv.contains("0.3333333333333333"));
        let back = read_csv_trajectory(&csv).unwrap();
        assert_eq!(back, vec![s]);
    }

    #[test]
    fn probe_on_radial_field_holds() {
        // b = h is a valid barrier far from the obstacle only for large
        // alpha; select states with h above the knee
        let grid = GridSpec {
            x_range: [-14.0, 14.0],
            y_range: [-14.0, 14.0],
            nx: 29,
            ny: 29,
            npsi: 8,
            mask_threshold: 8.0,
        };
        let obs = ObstacleField::single([0.0, 0.0], 5.0).unwrap();
        let f = BarrierField::from_fn(grid, 2.79, obs.clone(), |s| obs.h_value(s));
        let p = BicycleParams::new(1.0).unwrap();
        let alpha = ClassK::new(0.5, 0.0, 50.0).unwrap();
        let cfg = ProbeConfig { samples: 50, ..Default::default() };
        let r = cbf_condition_probe(&f, &p, &bounds(), &alpha, &cfg).unwrap();
        assert_eq!(r.samples.len(), 50);
        assert_eq!(r.violations, 0, "worst {:?}", r.worst_state);
        let again = cbf_condition_probe(&f, &p, &bounds(), &alpha, &cfg).unwrap();
        assert_eq!(r, again);
    }
}
