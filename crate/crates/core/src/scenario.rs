//! Scenario files: JSON with units in the field names.
//!
//! Optional fields default from the turning radius `r`: `delta_m = r`,
//! `mask_threshold_m = 3 r`, `alpha.knee_m = delta_m`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::builder::{
    sweep_grid, GridSpec, HorizonSpec, MaxMinProblem, MembershipMode, SolverConfig, SweepStats,
};
use crate::constraints::{tau_bound, Circle, ClassK, FSetKind, FSetSpec, ObstacleField};
use crate::dynamics::{min_turn_radius, BicycleParams, InputBounds, State};
use crate::error::{CbfError, Result};
use crate::field::{BarrierField, FieldMeta};
use crate::filter::FilterConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircleFile {
    pub center_m: [f64; 2],
    pub radius_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsFile {
    pub v_min_mps: f64,
    pub v_max_mps: f64,
    pub zeta_max_rad: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BicycleFile {
    pub wheelbase_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FSetFile {
    pub kind: FSetKind,
    #[serde(default)]
    pub delta_m: Option<f64>,
    #[serde(default)]
    pub extra_margin_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonFile {
    pub horizon_s: f64,
    pub segment_count: usize,
    pub membership: MembershipMode,
    #[serde(default = "default_softmin_p")]
    pub softmin_p: f64,
    #[serde(default)]
    pub softmin_shift_m: Option<f64>,
    #[serde(default)]
    pub tau_bar_override_s: Option<f64>,
}

fn default_softmin_p() -> f64 {
    32.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub x_range_m: [f64; 2],
    pub y_range_m: [f64; 2],
    pub nx: usize,
    pub ny: usize,
    pub npsi: usize,
    #[serde(default)]
    pub mask_threshold_m: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaFile {
    pub k1_per_s: f64,
    #[serde(default)]
    pub knee_m: Option<f64>,
    pub k2_per_s: f64,
}

impl Default for AlphaFile {
    fn default() -> Self {
        AlphaFile { k1_per_s: 0.5, knee_m: None, k2_per_s: 50.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterFile {
    pub alpha: AlphaFile,
    pub nv: usize,
    pub nzeta: usize,
    pub refine_iters: usize,
    pub constraint_tol: f64,
}

impl Default for FilterFile {
    fn default() -> Self {
        FilterFile {
            alpha: AlphaFile::default(),
            nv: 41,
            nzeta: 41,
            refine_iters: 20,
            constraint_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NominalFile {
    pub y_ref_m: f64,
    pub k_y_per_m: f64,
    pub k_psi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFile {
    pub x_m: f64,
    pub y_m: f64,
    pub psi_rad: f64,
}

impl From<StateFile> for State {
    fn from(s: StateFile) -> State {
        State::new(s.x_m, s.y_m, s.psi_rad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimFile {
    pub duration_s: f64,
    #[serde(default = "default_period")]
    pub control_period_s: f64,
    #[serde(default = "default_substep")]
    pub substep_s: f64,
    pub initial_state: StateFile,
}

fn default_period() -> f64 {
    0.05
}

fn default_substep() -> f64 {
    0.01
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcFile {
    #[serde(default = "default_apply_dt")]
    pub apply_dt_s: f64,
    #[serde(default = "default_w_track")]
    pub w_track: f64,
    #[serde(default = "default_w_eff")]
    pub w_eff: f64,
    /// Defaults to `v_max`.
    #[serde(default)]
    pub v_nom_mps: Option<f64>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    pub initial_state: StateFile,
}

fn default_apply_dt() -> f64 {
    0.25
}
fn default_w_track() -> f64 {
    1.0
}
fn default_w_eff() -> f64 {
    0.1
}
fn default_steps() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateFile {
    pub lipschitz_bound: f64,
    pub oracle_nodes: usize,
    pub monotonicity_states: usize,
    pub probe_samples: usize,
    pub probe_tolerance_mps: f64,
}

impl Default for ValidateFile {
    fn default() -> Self {
        ValidateFile {
            lipschitz_bound: 5.0,
            oracle_nodes: 20,
            monotonicity_states: 50,
            probe_samples: 200,
            probe_tolerance_mps: 0.05,
        }
    }
}

/// The on-disk scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub obstacles: Vec<CircleFile>,
    pub bounds: BoundsFile,
    pub bicycle: BicycleFile,
    pub f_set: FSetFile,
    pub horizon: HorizonFile,
    pub grid: GridFile,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub filter: FilterFile,
    pub nominal: NominalFile,
    pub sim: SimFile,
    #[serde(default)]
    pub mpc: Option<MpcFile>,
    #[serde(default)]
    pub validate: ValidateFile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NominalGains {
    pub y_ref: f64,
    pub k_y: f64,
    pub k_psi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    pub duration: f64,
    pub control_period: f64,
    pub substep: f64,
    pub initial_state: State,
}

impl SimSettings {
    pub fn steps(&self) -> usize {
        (self.duration / self.control_period).round() as usize
    }

    pub fn substeps(&self) -> usize {
        (self.control_period / self.substep).round().max(1.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcSettings {
    pub apply_dt: f64,
    pub w_track: f64,
    pub w_eff: f64,
    pub v_nom: f64,
    pub steps: usize,
    pub initial_state: State,
}

/// A validated scenario with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub obstacles: ObstacleField,
    pub bounds: InputBounds,
    pub bicycle: BicycleParams,
    pub f_set: FSetSpec,
    pub horizon: HorizonSpec,
    pub tau_bar: f64,
    pub grid: GridSpec,
    pub solver: SolverConfig,
    pub filter: FilterConfig,
    pub nominal: NominalGains,
    pub sim: SimSettings,
    pub mpc: Option<MpcSettings>,
    pub validate: ValidateFile,
    pub turn_radius: f64,
    /// Source document, kept for the field sidecar.
    #[serde(skip)]
    pub source: ScenarioFile,
}

fn positive(field: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CbfError::config(field, format!("must be > 0, got {v}")))
    }
}

fn unit_name(field: &str) -> &str {
    match field {
        "v_min" => "v_min_mps",
        "v_max" => "v_max_mps",
        "zeta_max" => "zeta_max_rad",
        "wheelbase" => "wheelbase_m",
        other => other,
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text)
            .map_err(|e| CbfError::config("scenario", e.to_string()))?;
        Self::resolve(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CbfError::config("scenario", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn resolve(file: ScenarioFile) -> Result<Self> {
        let b = &file.bounds;
        let bounds = InputBounds::new(b.v_min_mps, b.v_max_mps, b.zeta_max_rad).map_err(|e| match e {
            CbfError::Config { field, reason } => {
                CbfError::config(format!("bounds.{}", unit_name(&field)), reason)
            }
            other => other,
        })?;
        let bicycle = BicycleParams::new(file.bicycle.wheelbase_m)
            .map_err(|e| match e {
                CbfError::Config { reason, .. } => CbfError::config("bicycle.wheelbase_m", reason),
                other => other,
            })?;
        let circles = file
            .obstacles
            .iter()
            .map(|c| Circle::new(c.center_m, c.radius_m))
            .collect();
        let obstacles = ObstacleField::new(circles)?;
        let r = min_turn_radius(&bicycle, &bounds);

        let delta = positive("f_set.delta_m", file.f_set.delta_m.unwrap_or(r))?;
        let f_set = FSetSpec {
            kind: file.f_set.kind,
            delta,
            extra_margin: file.f_set.extra_margin_m,
        };
        f_set.validate()?;

        let hf = &file.horizon;
        let shift = hf.softmin_shift_m.unwrap_or(2.0 * obstacles.max_radius());
        if !(shift > obstacles.max_radius()) {
            return Err(CbfError::config(
                "horizon.softmin_shift_m",
                "must exceed the largest obstacle radius",
            ));
        }
        let horizon = HorizonSpec {
            horizon: positive("horizon.horizon_s", hf.horizon_s)?,
            segment_count: hf.segment_count,
            membership: hf.membership,
            softmin_p: hf.softmin_p,
            softmin_shift: shift,
        };
        let tau_bar = match hf.tau_bar_override_s {
            Some(t) => positive("horizon.tau_bar_override_s", t)?,
            None => tau_bound(&obstacles, f_set.kind, r, f_set.delta, &bounds),
        };
        horizon.validate(tau_bar)?;

        let g = &file.grid;
        let grid = GridSpec {
            x_range: g.x_range_m,
            y_range: g.y_range_m,
            nx: g.nx,
            ny: g.ny,
            npsi: g.npsi,
            mask_threshold: g.mask_threshold_m.unwrap_or(3.0 * r),
        };
        grid.validate(&obstacles)?;
        if grid.mask_threshold <= f_set.h_threshold() {
            return Err(CbfError::config(
                "grid.mask_threshold_m",
                "must exceed the F margin",
            ));
        }

        if file.solver.substeps == 0 {
            return Err(CbfError::config("solver.substeps", "must be >= 1"));
        }

        let ff = &file.filter;
        let alpha = ClassK::new(ff.alpha.k1_per_s, ff.alpha.knee_m.unwrap_or(delta), ff.alpha.k2_per_s)
            .map_err(|e| match e {
                CbfError::Config { reason, .. } => CbfError::config("filter.alpha", reason),
                other => other,
            })?;
        let filter = FilterConfig {
            alpha,
            nv: ff.nv,
            nzeta: ff.nzeta,
            refine_iters: ff.refine_iters,
            constraint_tol: ff.constraint_tol,
        };
        filter.validate()?;

        let nominal = NominalGains {
            y_ref: file.nominal.y_ref_m,
            k_y: file.nominal.k_y_per_m,
            k_psi: file.nominal.k_psi,
        };
        let sf = &file.sim;
        let sim = SimSettings {
            duration: positive("sim.duration_s", sf.duration_s)?,
            control_period: positive("sim.control_period_s", sf.control_period_s)?,
            substep: positive("sim.substep_s", sf.substep_s)?,
            initial_state: sf.initial_state.into(),
        };
        if sim.control_period < sim.substep {
            return Err(CbfError::config("sim.control_period_s", "must be >= sim.substep_s"));
        }
        if obstacles.h_value(&sim.initial_state) < 0.0 {
            return Err(CbfError::config("sim.initial_state", "starts inside an obstacle"));
        }

        let mpc = match &file.mpc {
            None => None,
            Some(m) => {
                let apply_dt = positive("mpc.apply_dt_s", m.apply_dt_s)?;
                let k = apply_dt / horizon.dt_segment();
                if apply_dt > horizon.horizon + 1e-12 || (k - k.round()).abs() > 1e-9 || k.round() < 1.0 {
                    return Err(CbfError::config(
                        "mpc.apply_dt_s",
                        format!(
                            "must be a positive multiple of the segment length {} and <= T",
                            horizon.dt_segment()
                        ),
                    ));
                }
                let v_nom = m.v_nom_mps.unwrap_or(bounds.v_max);
                if !(v_nom >= bounds.v_min && v_nom <= bounds.v_max) {
                    return Err(CbfError::config("mpc.v_nom_mps", "outside the speed bounds"));
                }
                let initial_state: State = m.initial_state.into();
                if obstacles.h_value(&initial_state) < 0.0 {
                    return Err(CbfError::config("mpc.initial_state", "starts inside an obstacle"));
                }
                Some(MpcSettings {
                    apply_dt,
                    w_track: m.w_track,
                    w_eff: m.w_eff,
                    v_nom,
                    steps: m.steps,
                    initial_state,
                })
            }
        };

        Ok(ScenarioConfig {
            name: file.name.clone(),
            obstacles,
            bounds,
            bicycle,
            f_set,
            horizon,
            tau_bar,
            grid,
            solver: file.solver,
            filter,
            nominal,
            sim,
            mpc,
            validate: file.validate,
            turn_radius: r,
            source: file,
        })
    }

    /// The max-min problem the field is built from.
    pub fn problem(&self) -> MaxMinProblem<'_> {
        MaxMinProblem {
            obstacles: &self.obstacles,
            f_set: &self.f_set,
            bounds: &self.bounds,
            bicycle: &self.bicycle,
            horizon: &self.horizon,
            solver: &self.solver,
        }
    }

    /// Hash of everything that determines the field values: obstacles,
    /// bounds, bicycle, `F`, horizon, grid and solver tuning.
    pub fn scenario_hash(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            obstacles: &'a ObstacleField,
            bounds: &'a InputBounds,
            bicycle: &'a BicycleParams,
            f_set: &'a FSetSpec,
            horizon: &'a HorizonSpec,
            grid: &'a GridSpec,
            solver: &'a SolverConfig,
        }
        let key = Key {
            obstacles: &self.obstacles,
            bounds: &self.bounds,
            bicycle: &self.bicycle,
            f_set: &self.f_set,
            horizon: &self.horizon,
            grid: &self.grid,
            solver: &self.solver,
        };
        let bytes = serde_json::to_vec(&key).expect("scenario key serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Sweeps the grid and returns the field with its sidecar.
    pub fn build_field(&self, threads: usize) -> Result<(BarrierField, SweepStats, FieldMeta)> {
        let (field, stats, _) = sweep_grid(&self.problem(), &self.grid, threads)?;
        let meta = self.field_meta(&stats)?;
        Ok((field, stats, meta))
    }

    pub fn field_meta(&self, stats: &SweepStats) -> Result<FieldMeta> {
        Ok(FieldMeta {
            format: "CBF1".into(),
            scenario_hash: self.scenario_hash(),
            obstacles: self.obstacles.clone(),
            scenario: serde_json::to_value(&self.source)?,
            stats: serde_json::to_value(stats)?,
        })
    }

    /// Errors with `Provenance` unless `meta` was built from this scenario.
    /// The membership mode recorded in the sidecar is adopted first, so a
    /// field built with a mode override still matches its scenario file.
    pub fn check_provenance(&self, meta: &FieldMeta) -> Result<ScenarioConfig> {
        let mode = meta
            .scenario
            .pointer("/horizon/membership")
            .and_then(|v| serde_json::from_value::<MembershipMode>(v.clone()).ok())
            .unwrap_or(self.horizon.membership);
        let adopted = self.with_membership(mode);
        let hash = adopted.scenario_hash();
        if hash != meta.scenario_hash {
            return Err(CbfError::Provenance { field: meta.scenario_hash.clone(), scenario: hash });
        }
        Ok(adopted)
    }

    pub fn with_membership(&self, membership: MembershipMode) -> ScenarioConfig {
        let mut out = self.clone();
        out.horizon.membership = membership;
        out.source.horizon.membership = membership;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const EXAMPLE: &str = r#"{
        "name": "t",
        "obstacles": [{"center_m": [0, 0], "radius_m": 5}],
        "bounds": {"v_min_mps": 1, "v_max_mps": 5, "zeta_max_rad": 0.3490658503988659},
        "bicycle": {"wheelbase_m": 1},
        "f_set": {"kind": "margin_and_outward"},
        "horizon": {"horizon_s": 6, "segment_count": 24, "membership": "terminal"},
        "grid": {"x_range_m": [-14, 14], "y_range_m": [-14, 14], "nx": 8, "ny": 8, "npsi": 8},
        "nominal": {"y_ref_m": 0, "k_y_per_m": 0.5, "k_psi": 2},
        "sim": {"duration_s": 40, "initial_state": {"x_m": -15, "y_m": 0.5, "psi_rad": 0}}
    }"#;

    fn edit(f: impl FnOnce(&mut serde_json::Value)) -> Result<ScenarioConfig> {
        let mut v: serde_json::Value = serde_json::from_str(EXAMPLE).unwrap();
        f(&mut v);
        ScenarioConfig::from_json(&v.to_string())
    }

    #[test]
    fn defaults_follow_turn_radius() {
        let c = ScenarioConfig::from_json(EXAMPLE).unwrap();
        assert!((c.turn_radius - 2.7926).abs() < 1e-3);
        assert_eq!(c.f_set.delta, c.turn_radius);
        assert_eq!(c.grid.mask_threshold, 3.0 * c.turn_radius);
        assert_eq!(c.filter.alpha.knee, c.turn_radius);
        assert_eq!(c.sim.steps(), 800);
        assert_eq!(c.sim.substeps(), 5);
    }

    #[test]
    fn errors_name_the_field() {
        let e = edit(|v| v["bounds"]["v_min_mps"] = 0.0.into()).unwrap_err();
        assert!(e.to_string().contains("bounds.v_min_mps"), "{e}");
        let e = edit(|v| v["horizon"]["horizon_s"] = 2.0.into()).unwrap_err();
        assert!(e.to_string().contains("horizon.horizon_s"), "{e}");
        let e = edit(|v| v["grid"]["npsi"] = 4.into()).unwrap_err();
        assert!(e.to_string().contains("grid"), "{e}");
        let e = edit(|v| v["bogus"] = 1.into()).unwrap_err();
        assert!(matches!(e, CbfError::Config { .. }));
        let e = edit(|v| {
            v["mpc"] = serde_json::json!({"apply_dt_s": 0.3, "initial_state": {"x_m": -10, "y_m": 1, "psi_rad": 0}})
        })
        .unwrap_err();
        assert!(e.to_string().contains("mpc.apply_dt_s"), "{e}");
    }

    #[test]
    fn hash_tracks_field_inputs_only() {
        let a = ScenarioConfig::from_json(EXAMPLE).unwrap();
        let b = edit(|v| v["sim"]["duration_s"] = 10.0.into()).unwrap();
        let c = edit(|v| v["bounds"]["v_max_mps"] = 4.0.into()).unwrap();
        assert_eq!(a.scenario_hash(), b.scenario_hash());
        assert_ne!(a.scenario_hash(), c.scenario_hash());
        assert_eq!(a.scenario_hash().len(), 64);
    }
}
