//! Pointwise minimally invasive safety filter.
//!
//! Minimizes `|u - u_nom|^2` over the input box subject to
//! `grad b(x) . f(x, u) + alpha(b(x)) >= 0`. The bicycle is not input
//! affine, so the program is solved by a dense scan of the box followed by
//! coordinate-wise boundary searches.

use serde::{Deserialize, Serialize};

use crate::constraints::{ClassK, ObstacleField};
use crate::dynamics::{vector_field, BicycleParams, Input, InputBounds, State};
use crate::error::{CbfError, Result};
use crate::field::BarrierField;

/// A barrier candidate with a state gradient.
pub trait Barrier {
    /// Value and gradient with respect to `(x, y, psi)`.
    fn value_and_gradient(&self, s: &State) -> Result<(f64, [f64; 3])>;
}

impl Barrier for BarrierField {
    fn value_and_gradient(&self, s: &State) -> Result<(f64, [f64; 3])> {
        let q = self.query(s)?;
        Ok((q.value, q.gradient))
    }
}

/// `b = h`, the raw constraint used as a (generally invalid) barrier.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintBarrier<'a>(pub &'a ObstacleField);

impl Barrier for ConstraintBarrier<'_> {
    fn value_and_gradient(&self, s: &State) -> Result<(f64, [f64; 3])> {
        let g = self.0.h_gradient_pos(s)?;
        Ok((self.0.h_value(s), [g.grad[0], g.grad[1], 0.0]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub alpha: ClassK,
    pub nv: usize,
    pub nzeta: usize,
    pub refine_iters: usize,
    pub constraint_tol: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            alpha: ClassK { k1: 0.5, knee: 2.79, k2: 50.0 },
            nv: 41,
            nzeta: 41,
            refine_iters: 20,
            constraint_tol: 1e-9,
        }
    }
}

impl FilterConfig {
    pub fn with_alpha(alpha: ClassK) -> Self {
        FilterConfig { alpha, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nv < 3 || self.nzeta < 3 {
            return Err(CbfError::config("filter.coarse_grid", "need at least 3 samples per axis"));
        }
        if !(self.constraint_tol >= 0.0) {
            return Err(CbfError::config("filter.constraint_tol", "must be >= 0"));
        }
        ClassK::new(self.alpha.k1, self.alpha.knee, self.alpha.k2).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterStatus {
    NominalPassed,
    Filtered,
    Infeasible,
}

impl FilterStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            FilterStatus::NominalPassed => "nominal",
            FilterStatus::Filtered => "filtered",
            FilterStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOutcome {
    pub u: Input,
    pub status: FilterStatus,
    /// `grad b . f(x, u) + alpha(b)`.
    pub constraint_value: f64,
    pub objective: f64,
    pub barrier_value: f64,
}

fn objective(u: &Input, u_nom: &Input) -> f64 {
    (u.v - u_nom.v).powi(2) + (u.zeta - u_nom.zeta).powi(2)
}

struct Constraint<'a> {
    s: State,
    grad: [f64; 3],
    alpha_b: f64,
    bicycle: &'a BicycleParams,
}

impl Constraint<'_> {
    fn eval(&self, u: &Input) -> f64 {
        let f = vector_field(&self.s, u, self.bicycle);
        self.grad[0] * f[0] + self.grad[1] * f[1] + self.grad[2] * f[2] + self.alpha_b
    }
}

fn sample(lo: f64, hi: f64, i: usize, n: usize) -> f64 {
    if i + 1 == n {
        hi
    } else {
        lo + (hi - lo) * i as f64 / (n - 1) as f64
    }
}

/// Filters `u_nom` at state `s` against `barrier`.
pub fn filter(
    s: &State,
    u_nom: &Input,
    barrier: &impl Barrier,
    cfg: &FilterConfig,
    bicycle: &BicycleParams,
    bounds: &InputBounds,
) -> Result<FilterOutcome> {
    if !bounds.contains(u_nom) {
        return Err(CbfError::Domain(format!(
            "nominal input ({}, {}) outside the input box",
            u_nom.v, u_nom.zeta
        )));
    }
    let (b, grad) = barrier.value_and_gradient(s)?;
    let c = Constraint { s: *s, grad, alpha_b: cfg.alpha.eval(b), bicycle };
    let tol = cfg.constraint_tol;

    let nominal = c.eval(u_nom);
    if nominal >= -tol {
        return certify(s, barrier, cfg, bicycle, *u_nom, u_nom, FilterStatus::NominalPassed);
    }

    // scan in (v ascending, zeta ascending) order; strict improvement only,
    // so ties resolve to the smaller v and then the smaller zeta
    let mut best: Option<(Input, f64)> = None;
    let mut least_bad = (*u_nom, nominal);
    for i in 0..cfg.nv {
        let v = sample(bounds.v_min, bounds.v_max, i, cfg.nv);
        for j in 0..cfg.nzeta {
            let zeta = sample(-bounds.zeta_max, bounds.zeta_max, j, cfg.nzeta);
            let u = Input { v, zeta };
            let g = c.eval(&u);
            if g > least_bad.1 {
                least_bad = (u, g);
            }
            if g >= -tol {
                let obj = objective(&u, u_nom);
                if best.map_or(true, |(_, o)| obj < o) {
                    best = Some((u, obj));
                }
            }
        }
    }
    let Some((mut u, _)) = best else {
        let (u, g) = least_bad;
        return Ok(FilterOutcome {
            u,
            status: FilterStatus::Infeasible,
            constraint_value: g,
            objective: objective(&u, u_nom),
            barrier_value: b,
        });
    };

    // alternate coordinate moves toward the nominal value, stopping at the
    // constraint boundary; each move keeps feasibility and cannot raise the
    // objective
    let feasible = |u: &Input| c.eval(u) >= -tol;
    for _ in 0..cfg.refine_iters {
        let before = u;
        for axis in 0..2 {
            let (cur, target) = match axis {
                0 => (u.v, u_nom.v),
                _ => (u.zeta, u_nom.zeta),
            };
            if cur == target {
                continue;
            }
            let at = |t: f64| match axis {
                0 => Input { v: t, ..u },
                _ => Input { zeta: t, ..u },
            };
            if feasible(&at(target)) {
                u = at(target);
                continue;
            }
            let (mut lo, mut hi) = (cur, target);
            for _ in 0..cfg.refine_iters.max(1) * 2 {
                let mid = 0.5 * (lo + hi);
                if feasible(&at(mid)) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            u = at(lo);
        }
        if u == before {
            break;
        }
    }
    certify(s, barrier, cfg, bicycle, u, u_nom, FilterStatus::Filtered)
}

/// Re-evaluates the constraint with a fresh barrier query.
fn certify(
    s: &State,
    barrier: &impl Barrier,
    cfg: &FilterConfig,
    bicycle: &BicycleParams,
    u: Input,
    u_nom: &Input,
    status: FilterStatus,
) -> Result<FilterOutcome> {
    let (b, grad) = barrier.value_and_gradient(s)?;
    let c = Constraint { s: *s, grad, alpha_b: cfg.alpha.eval(b), bicycle };
    let g = c.eval(&u);
    if g < -cfg.constraint_tol {
        return Err(CbfError::Domain(format!("filter certificate failed: {g}")));
    }
    Ok(FilterOutcome {
        u,
        status,
        constraint_value: g,
        objective: objective(&u, u_nom),
        barrier_value: b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn setup() -> (ObstacleField, BicycleParams, InputBounds, FilterConfig) {
        let obs = ObstacleField::single([0.0, 0.0], 5.0).unwrap();
        let p = BicycleParams::new(1.0).unwrap();
        let b = InputBounds::new(1.0, 5.0, PI / 9.0).unwrap();
        (obs, p, b, FilterConfig::default())
    }

    /// Smooth synthetic barrier with heading dependence.
    struct Tilted;

    impl Barrier for Tilted {
        fn value_and_gradient(&self, s: &State) -> Result<(f64, [f64; 3])> {
            let r = (s.x * s.x + s.y * s.y).sqrt();
            let phi = s.y.atan2(s.x);
            let v = r - 5.0 - 0.4 * (1.0 + (s.psi - phi).cos());
            let dphi = -0.4 * (s.psi - phi).sin();
            let gx = s.x / r - dphi * s.y / (r * r);
            let gy = s.y / r + dphi * s.x / (r * r);
            Ok((v, [gx, gy, 0.4 * (s.psi - phi).sin()]))
        }
    }

    #[test]
    fn far_away_passes_nominal() {
        let (obs, p, b, cfg) = setup();
        let s = State::new(-20.0, 10.0, 0.3);
        let u_nom = Input::new(5.0, -0.2);
        let out = filter(&s, &u_nom, &ConstraintBarrier(&obs), &cfg, &p, &b).unwrap();
        assert_eq!(out.status, FilterStatus::NominalPassed);
        assert_eq!(out.u, u_nom);
    }

    #[test]
    fn active_constraint_beats_every_sample() {
        let (_, p, b, cfg) = setup();
        let mut filtered = 0;
        for (s, u_nom) in [
            (State::new(6.5, 0.0, -2.0), Input::new(5.0, 0.0)),
            (State::new(7.0, 0.0, -2.5), Input::new(5.0, 0.0)),
            (State::new(0.0, 7.0, 3.1), Input::new(4.0, 0.1)),
            (State::new(-7.0, 0.0, 0.4), Input::new(5.0, -0.3)),
        ] {
            let out = filter(&s, &u_nom, &Tilted, &cfg, &p, &b).unwrap();
            if out.status != FilterStatus::Filtered {
                continue;
            }
            filtered += 1;
            assert!(out.constraint_value >= -cfg.constraint_tol);
            assert!(b.contains(&out.u));
            // independent scan of the same box
            let (bv, g) = Tilted.value_and_gradient(&s).unwrap();
            let a = cfg.alpha.eval(bv);
            for i in 0..cfg.nv {
                for j in 0..cfg.nzeta {
                    let u = Input::new(
                        b.v_min + (b.v_max - b.v_min) * i as f64 / 40.0,
                        -b.zeta_max + 2.0 * b.zeta_max * j as f64 / 40.0,
                    );
                    let f = vector_field(&s, &u, &p);
                    let lhs = g[0] * f[0] + g[1] * f[1] + g[2] * f[2] + a;
                    if lhs >= 1e-9 {
                        assert!(out.objective <= objective(&u, &u_nom) + 1e-12);
                    }
                }
            }
        }
        assert!(filtered >= 3, "only {filtered} states exercised the filter");
    }

    #[test]
    fn raw_constraint_head_on_is_infeasible() {
        let (obs, p, b, cfg) = setup();
        let s = State::new(5.0001, 0.0, PI);
        let out = filter(&s, &Input::new(5.0, 0.0), &ConstraintBarrier(&obs), &cfg, &p, &b).unwrap();
        assert_eq!(out.status, FilterStatus::Infeasible);
        // least violating sample: slowest speed, any steering (all tie on v)
        assert_eq!(out.u.v, 1.0);
        assert!(out.constraint_value < 0.0);
    }

    #[test]
    fn rejects_bad_config_and_nominal() {
        let (obs, p, b, cfg) = setup();
        assert!(FilterConfig { nv: 2, ..cfg }.validate().is_err());
        let s = State::new(-20.0, 0.0, 0.0);
        assert!(filter(&s, &Input::new(6.0, 0.0), &ConstraintBarrier(&obs), &cfg, &p, &b).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn output_in_box_and_nominal_is_idempotent(
                x in -12.0..12.0f64, y in -12.0..12.0f64, psi in -3.1..3.1f64,
                v in 1.0..5.0f64, zeta in -0.34..0.34f64,
            ) {
                prop_assume!(x * x + y * y > 26.0);
                let (_, p, b, cfg) = setup();
                let s = State::new(x, y, psi);
                let u_nom = Input::new(v, zeta);
                let out = filter(&s, &u_nom, &Tilted, &cfg, &p, &b).unwrap();
                prop_assert!(b.contains(&out.u));
                if out.status != FilterStatus::Infeasible {
                    prop_assert!(out.constraint_value >= -cfg.constraint_tol);
                }
                if out.status == FilterStatus::Filtered {
                    // feeding a passing input back returns it unchanged
                    let again = filter(&s, &out.u, &Tilted, &cfg, &p, &b).unwrap();
                    prop_assert_eq!(again.status, FilterStatus::NominalPassed);
                    prop_assert_eq!(again.u, out.u);
                }
            }
        }
    }
}
