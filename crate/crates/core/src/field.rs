//! Sampled barrier field `H_T` on an `(x, y, psi)` grid.
//!
//! Queries use trilinear interpolation with periodic wrap in `psi`. Cells
//! touching an `OutsideMask` node answer with the surrogate
//! `delta + (h - mask_threshold)`, which is a valid lower bound on `H_T`
//! there.
//!
//! On disk a field is a `CBF1` file (little endian):
//!
//! ```text
//! "CBF1" | u32 version = 1 | u32 nx | u32 ny | u32 npsi
//! f64 x_min | f64 x_max | f64 y_min | f64 y_max
//! f64 mask_threshold | f64 delta | f64 horizon_T
//! nx*ny*npsi records { u8 flag, f64 value }, idx = (ipsi*ny + iy)*nx + ix
//! ```
//!
//! plus a `.meta.json` sidecar carrying the obstacles and the scenario.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::builder::GridSpec;
use crate::constraints::ObstacleField;
use crate::dynamics::{wrap_angle, State};
use crate::error::{CbfError, Result};

pub const MAGIC: &[u8; 4] = b"CBF1";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 4 + 7 * 8;
const RECORD_LEN: usize = 9;
const SNAP: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum NodeFlag {
    Computed = 0,
    OutsideMask = 1,
    Infeasible = 2,
}

impl NodeFlag {
    fn from_u8(b: u8) -> Option<Self> {
        match b {
            0 => Some(NodeFlag::Computed),
            1 => Some(NodeFlag::OutsideMask),
            2 => Some(NodeFlag::Infeasible),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierField {
    grid: GridSpec,
    /// Level guaranteed where `h >= mask_threshold`.
    delta: f64,
    horizon: f64,
    values: Vec<f64>,
    flags: Vec<NodeFlag>,
    obstacles: ObstacleField,
}

/// Value and gradient at a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldQuery {
    pub state: State,
    pub value: f64,
    pub gradient: [f64; 3],
    pub in_mask: bool,
    /// The gradient stencil touched a node that is not `Computed`.
    pub near_mask_boundary: bool,
}

/// Per-axis and overall maximal node-to-node slopes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipschitzReport {
    pub max_slope_x: f64,
    pub max_slope_y: f64,
    pub max_slope_psi: f64,
    pub max_slope: f64,
}

struct Cell {
    ix: usize,
    iy: usize,
    ip0: usize,
    ip1: usize,
    tx: f64,
    ty: f64,
    tp: f64,
}

fn snap(f: f64) -> f64 {
    let r = f.round();
    if (f - r).abs() < SNAP {
        r
    } else {
        f
    }
}

fn axis(f: f64, n: usize) -> Option<(usize, f64)> {
    let f = snap(f);
    if f < 0.0 || f > (n - 1) as f64 {
        return None;
    }
    let i = (f.floor() as usize).min(n - 2);
    Some((i, f - i as f64))
}

impl BarrierField {
    pub fn from_parts(
        grid: GridSpec,
        delta: f64,
        horizon: f64,
        values: Vec<f64>,
        flags: Vec<NodeFlag>,
        obstacles: ObstacleField,
    ) -> Result<Self> {
        if grid.nx < 2 || grid.ny < 2 || grid.npsi < 1 {
            return Err(CbfError::config("grid", "degenerate grid"));
        }
        let n = grid.node_count();
        if values.len() != n || flags.len() != n {
            return Err(CbfError::config(
                "field",
                format!("expected {n} nodes, got {} values / {} flags", values.len(), flags.len()),
            ));
        }
        Ok(BarrierField {
            grid,
            delta,
            horizon,
            values,
            flags,
            obstacles,
        })
    }

    /// Field whose every node is computed from `f(state)`.
    pub fn from_fn(
        grid: GridSpec,
        delta: f64,
        obstacles: ObstacleField,
        mut f: impl FnMut(&State) -> f64,
    ) -> Self {
        let mut values = Vec::with_capacity(grid.node_count());
        for ipsi in 0..grid.npsi {
            for iy in 0..grid.ny {
                for ix in 0..grid.nx {
                    values.push(f(&grid.node_state(ix, iy, ipsi)));
                }
            }
        }
        let flags = vec![NodeFlag::Computed; values.len()];
        BarrierField {
            grid,
            delta,
            horizon: 0.0,
            values,
            flags,
            obstacles,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn obstacles(&self) -> &ObstacleField {
        &self.obstacles
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn flags(&self) -> &[NodeFlag] {
        &self.flags
    }

    pub fn node(&self, ix: usize, iy: usize, ipsi: usize) -> (NodeFlag, f64) {
        let i = self.grid.index(ix, iy, ipsi);
        (self.flags[i], self.values[i])
    }

    pub fn set_node(&mut self, ix: usize, iy: usize, ipsi: usize, flag: NodeFlag, value: f64) {
        let i = self.grid.index(ix, iy, ipsi);
        self.flags[i] = flag;
        self.values[i] = value;
    }

    /// Surrogate used where the field was not computed.
    pub fn surrogate(&self, s: &State) -> f64 {
        self.delta + (self.obstacles.h_value(s) - self.grid.mask_threshold)
    }

    pub fn contains_position(&self, x: f64, y: f64) -> bool {
        let g = &self.grid;
        axis((x - g.x_range[0]) / g.dx(), g.nx).is_some()
            && axis((y - g.y_range[0]) / g.dy(), g.ny).is_some()
    }

    fn locate(&self, s: &State) -> Option<Cell> {
        let g = &self.grid;
        let (ix, tx) = axis((s.x - g.x_range[0]) / g.dx(), g.nx)?;
        let (iy, ty) = axis((s.y - g.y_range[0]) / g.dy(), g.ny)?;
        let fp = snap((wrap_angle(s.psi) + PI) / g.dpsi());
        let base = fp.floor();
        let ip0 = (base as usize) % g.npsi;
        Some(Cell {
            ix,
            iy,
            ip0,
            ip1: (ip0 + 1) % g.npsi,
            tx,
            ty,
            tp: fp - base,
        })
    }

    /// Trilinear blend over the cell; also reports whether every corner is
    /// inside the mask and whether every corner is `Computed`.
    fn blend(&self, c: &Cell) -> (f64, bool, bool) {
        let g = &self.grid;
        let mut acc = 0.0;
        let mut in_mask = true;
        let mut all_computed = true;
        for (dp, wp) in [(c.ip0, 1.0 - c.tp), (c.ip1, c.tp)] {
            for (dy, wy) in [(0, 1.0 - c.ty), (1, c.ty)] {
                for (dx, wx) in [(0, 1.0 - c.tx), (1, c.tx)] {
                    let i = g.index(c.ix + dx, c.iy + dy, dp);
                    let w = wx * wy * wp;
                    match self.flags[i] {
                        NodeFlag::OutsideMask => {
                            in_mask = false;
                            all_computed = false;
                        }
                        NodeFlag::Infeasible => all_computed = false,
                        NodeFlag::Computed => {}
                    }
                    if w != 0.0 {
                        acc += w * self.values[i];
                    }
                }
            }
        }
        (acc, in_mask, all_computed)
    }

    /// Interpolated value; `in_mask = false` means the surrogate was used.
    pub fn interpolate(&self, s: &State) -> Result<(f64, bool)> {
        let cell = self.locate(s).ok_or(CbfError::OutOfDomain { x: s.x, y: s.y })?;
        let (v, in_mask, _) = self.blend(&cell);
        if in_mask {
            Ok((v, true))
        } else {
            Ok((self.surrogate(s), false))
        }
    }

    /// Like [`interpolate`](Self::interpolate), but positions outside the
    /// grid fall back to the surrogate when `h >= mask_threshold` there.
    pub fn value(&self, s: &State) -> Result<(f64, bool)> {
        match self.interpolate(s) {
            Err(CbfError::OutOfDomain { .. })
                if self.obstacles.h_value(s) >= self.grid.mask_threshold =>
            {
                Ok((self.surrogate(s), false))
            }
            other => other,
        }
    }

    fn step_sizes(&self) -> [f64; 3] {
        let g = &self.grid;
        [0.5 * g.dx(), 0.5 * g.dy(), 0.5 * g.dpsi()]
    }

    /// Value plus gradient. Inside the mask the gradient is a central
    /// difference of the interpolant with half-spacing steps, falling back
    /// to one-sided differences when a stencil point leaves the mask.
    pub fn query(&self, s: &State) -> Result<FieldQuery> {
        let inside = self.locate(s);
        let (value, in_mask, all_computed) = match &inside {
            Some(c) => self.blend(c),
            None => (0.0, false, false),
        };
        if !in_mask {
            let h = self.obstacles.h_value(s);
            if inside.is_none() && h < self.grid.mask_threshold {
                return Err(CbfError::OutOfDomain { x: s.x, y: s.y });
            }
            let g = self.obstacles.h_gradient_pos(s)?;
            return Ok(FieldQuery {
                state: *s,
                value: self.surrogate(s),
                gradient: [g.grad[0], g.grad[1], 0.0],
                in_mask: false,
                near_mask_boundary: inside.is_some(),
            });
        }
        let steps = self.step_sizes();
        let mut gradient = [0.0; 3];
        let mut near = !all_computed;
        for (k, step) in steps.iter().enumerate() {
            let shifted = |sign: f64| {
                let mut a = [s.x, s.y, s.psi];
                a[k] += sign * step;
                let q = State { x: a[0], y: a[1], psi: a[2] };
                self.locate(&q).map(|c| self.blend(&c))
            };
            let plus = shifted(1.0);
            let minus = shifted(-1.0);
            let ok = |r: &Option<(f64, bool, bool)>| matches!(r, Some((_, true, _)));
            if plus.is_some_and(|r| !r.2) || minus.is_some_and(|r| !r.2) {
                near = true;
            }
            gradient[k] = match (ok(&plus), ok(&minus)) {
                (true, true) => (plus.unwrap().0 - minus.unwrap().0) / (2.0 * step),
                (true, false) => {
                    near = true;
                    (plus.unwrap().0 - value) / step
                }
                (false, true) => {
                    near = true;
                    (value - minus.unwrap().0) / step
                }
                (false, false) => {
                    near = true;
                    0.0
                }
            };
        }
        Ok(FieldQuery {
            state: *s,
            value,
            gradient,
            in_mask: true,
            near_mask_boundary: near,
        })
    }

    pub fn gradient(&self, s: &State) -> Result<[f64; 3]> {
        self.query(s).map(|q| q.gradient)
    }

    /// `H_T - delta_prime` for `0 <= delta_prime < delta`.
    pub fn offset_field(&self, delta_prime: f64) -> Result<BarrierField> {
        if !(delta_prime >= 0.0 && delta_prime < self.delta) {
            return Err(CbfError::Domain(format!(
                "offset {delta_prime} outside [0, {})",
                self.delta
            )));
        }
        let mut out = self.clone();
        for v in &mut out.values {
            *v -= delta_prime;
        }
        out.delta -= delta_prime;
        Ok(out)
    }

    /// Maximal slope between adjacent `Computed` nodes along each axis.
    pub fn lipschitz_report(&self) -> LipschitzReport {
        let g = &self.grid;
        let (dx, dy, dp) = (g.dx(), g.dy(), g.dpsi());
        let mut sx: f64 = 0.0;
        let mut sy: f64 = 0.0;
        let mut sp: f64 = 0.0;
        let pair = |a: usize, b: usize| -> Option<f64> {
            (self.flags[a] == NodeFlag::Computed && self.flags[b] == NodeFlag::Computed)
                .then(|| (self.values[a] - self.values[b]).abs())
        };
        for ip in 0..g.npsi {
            for iy in 0..g.ny {
                for ix in 0..g.nx {
                    let i = g.index(ix, iy, ip);
                    if ix + 1 < g.nx {
                        if let Some(d) = pair(i, g.index(ix + 1, iy, ip)) {
                            sx = sx.max(d / dx);
                        }
                    }
                    if iy + 1 < g.ny {
                        if let Some(d) = pair(i, g.index(ix, iy + 1, ip)) {
                            sy = sy.max(d / dy);
                        }
                    }
                    if g.npsi > 1 {
                        if let Some(d) = pair(i, g.index(ix, iy, (ip + 1) % g.npsi)) {
                            sp = sp.max(d / dp);
                        }
                    }
                }
            }
        }
        LipschitzReport {
            max_slope_x: sx,
            max_slope_y: sy,
            max_slope_psi: sp,
            max_slope: sx.max(sy).max(sp),
        }
    }

    /// Serializes to the `CBF1` layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let g = &self.grid;
        let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * self.values.len());
        out.extend_from_slice(MAGIC);
        for v in [FORMAT_VERSION, g.nx as u32, g.ny as u32, g.npsi as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in [
            g.x_range[0],
            g.x_range[1],
            g.y_range[0],
            g.y_range[1],
            g.mask_threshold,
            self.delta,
            self.horizon,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for (flag, value) in self.flags.iter().zip(&self.values) {
            out.push(*flag as u8);
            out.extend_from_slice(&value.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], obstacles: ObstacleField) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(CbfError::CorruptFile("file shorter than the magic".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(CbfError::VersionMismatch(format!(
                "bad magic {:?}",
                String::from_utf8_lossy(&bytes[..4])
            )));
        }
        if bytes.len() < HEADER_LEN {
            return Err(CbfError::CorruptFile("truncated header".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(CbfError::VersionMismatch(format!("unsupported version {version}")));
        }
        let (nx, ny, npsi) = (u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize);
        let f = |k: usize| f64_at(20 + 8 * k);
        let grid = GridSpec {
            x_range: [f(0), f(1)],
            y_range: [f(2), f(3)],
            nx,
            ny,
            npsi,
            mask_threshold: f(4),
        };
        let (delta, horizon) = (f(5), f(6));
        let n = nx
            .checked_mul(ny)
            .and_then(|v| v.checked_mul(npsi))
            .ok_or_else(|| CbfError::CorruptFile("node count overflows".into()))?;
        let expected = HEADER_LEN + RECORD_LEN * n;
        if bytes.len() != expected {
            return Err(CbfError::CorruptFile(format!(
                "expected {expected} bytes, found {}",
                bytes.len()
            )));
        }
        let mut values = Vec::with_capacity(n);
        let mut flags = Vec::with_capacity(n);
        for rec in bytes[HEADER_LEN..].chunks_exact(RECORD_LEN) {
            let flag = NodeFlag::from_u8(rec[0])
                .ok_or_else(|| CbfError::CorruptFile(format!("unknown node flag {}", rec[0])))?;
            flags.push(flag);
            values.push(f64::from_le_bytes(rec[1..].try_into().unwrap()));
        }
        BarrierField::from_parts(grid, delta, horizon, values, flags, obstacles)
            .map_err(|e| CbfError::CorruptFile(e.to_string()))
    }

    /// Writes the `CBF1` file and its sidecar.
    pub fn save(&self, path: &Path, meta: &FieldMeta) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        let mut json = serde_json::to_string_pretty(meta)?;
        json.push('\n');
        std::fs::write(sidecar_path(path), json)?;
        Ok(())
    }

    /// Reads a `CBF1` file and its sidecar.
    pub fn load(path: &Path) -> Result<(Self, FieldMeta)> {
        let bytes = std::fs::read(path)?;
        let meta: FieldMeta = serde_json::from_slice(&std::fs::read(sidecar_path(path))?)?;
        let field = BarrierField::from_bytes(&bytes, meta.obstacles.clone())?;
        Ok((field, meta))
    }
}

/// Sidecar contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub format: String,
    pub scenario_hash: String,
    pub obstacles: ObstacleField,
    pub scenario: serde_json::Value,
    #[serde(default)]
    pub stats: serde_json::Value,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}
