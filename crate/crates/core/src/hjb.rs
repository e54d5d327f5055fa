//! Minimal time to reach a flock, as a value function on a grid.
//!
//! The master state X = (X₁, X₂) stacks positions and velocities and obeys
//! Ẋ = b(X) + (0, W) with |W_l| ≤ M. Its minimal hitting time U of the flock
//! set Γ = {|ΔX₁| ≤ M, X₂ ≡ v̄ or X₂ ≡ −v̄} solves an eikonal-type equation
//! H(X, ∇U) = 0 with H = −b·P + M|P₂|₁ − 1.
//!
//! The solver discretizes it semi-Lagrangian style. Since b and Γ only see
//! position differences, it works in the reduced coordinates
//! (x_1 − x_0, ..., x_{N−1} − x_0, v_0, ..., v_{N−1}), of dimension 2N − 1.
//! This is experimental: regularity of U is not known, and the values are
//! only checked against a brute-force oracle for a single node.

use std::fmt::Write as _;
use std::io::BufRead;

use rayon::prelude::*;

use crate::dynamics::Params;
use crate::error::{Error, Result};
use crate::lattice::{format_number, LatticeSpec, NodeField};

/// Largest reduced dimension the solver accepts.
pub const MAX_DIM: usize = 4;

/// Fewest grid points allowed on an axis.
pub const MIN_POINTS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct MasterState {
    pub x1: NodeField,
    pub x2: NodeField,
}

impl MasterState {
    pub fn new(x1: impl Into<NodeField>, x2: impl Into<NodeField>) -> Self {
        Self {
            x1: x1.into(),
            x2: x2.into(),
        }
    }

    fn check(&self, spec: &LatticeSpec) -> Result<()> {
        spec.check(&self.x1)?;
        spec.check(&self.x2)
    }
}

/// Laplacian computed from coordinates rather than the cached neighbour
/// table, so it can cross-check the simulator.
fn laplacian_by_coords(spec: &LatticeSpec, field: &[f64], node: usize) -> f64 {
    let d = spec.side();
    let home = spec.coords(node);
    let mut sum = 0.0;
    for axis in 0..spec.dim() {
        for shift in [1, d - 1] {
            let mut c = home.clone();
            c[axis] = (c[axis] + shift) % d;
            sum += field[spec.index(&c)] - field[node];
        }
    }
    sum * (d * d) as f64
}

/// b̃(X, W) = (X₂, ΔX₁ + (α − β X₂²) X₂ + W).
pub fn master_drift(spec: &LatticeSpec, params: &Params, x: &MasterState, w: &[f64]) -> Result<MasterState> {
    x.check(spec)?;
    spec.check(w)?;
    let dv: Vec<f64> = (0..spec.len())
        .map(|l| {
            let v = x.x2[l];
            laplacian_by_coords(spec, &x.x1, l) + (params.alpha - params.beta * v * v) * v + w[l]
        })
        .collect();
    Ok(MasterState::new(x.x2.clone(), dv))
}

/// H(X, P) = −b(X)·P + M·|P₂|₁ − 1, where P = (P₁, P₂) is packed as a
/// master state.
pub fn hamiltonian(spec: &LatticeSpec, params: &Params, x: &MasterState, p: &MasterState) -> Result<f64> {
    p.check(spec)?;
    let b = master_drift(spec, params, x, &vec![0.0; spec.len()])?;
    let dot: f64 = b.x1.iter().zip(p.x1.iter()).map(|(a, b)| a * b).sum::<f64>()
        + b.x2.iter().zip(p.x2.iter()).map(|(a, b)| a * b).sum::<f64>();
    let l1: f64 = p.x2.iter().map(|q| q.abs()).sum();
    Ok(-dot + params.m * l1 - 1.0)
}

fn laplacian_within(spec: &LatticeSpec, params: &Params, x1: &[f64]) -> bool {
    (0..spec.len()).all(|l| laplacian_by_coords(spec, x1, l).abs() <= params.m)
}

/// X ∈ Γ, exactly.
pub fn in_target(spec: &LatticeSpec, params: &Params, x: &MasterState) -> Result<bool> {
    in_target_within(spec, params, x, 0.0)
}

/// X ∈ Γ with velocities allowed to miss ±v̄ by `vel_tol`.
pub fn in_target_within(spec: &LatticeSpec, params: &Params, x: &MasterState, vel_tol: f64) -> Result<bool> {
    x.check(spec)?;
    if !laplacian_within(spec, params, &x.x1) {
        return Ok(false);
    }
    let near = |g: f64| x.x2.iter().all(|v| (v - g).abs() <= vel_tol);
    Ok(near(params.v_bar) || near(-params.v_bar))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Axis {
    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.points - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        if i + 1 == self.points {
            self.hi
        } else {
            self.lo + i as f64 * self.spacing()
        }
    }
}

/// Tensor grid over (x_k − x_0 for k ≥ 1, v_0, ..., v_{N−1}).
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedGrid {
    nodes: usize,
    axes: Vec<Axis>,
    strides: Vec<usize>,
}

impl ReducedGrid {
    /// `axes` lists the N − 1 position-difference axes, then the N velocity
    /// axes.
    pub fn new(spec: &LatticeSpec, axes: Vec<Axis>) -> Result<Self> {
        let nodes = spec.len();
        let dim = 2 * nodes - 1;
        if dim > MAX_DIM {
            return Err(Error::Invalid(format!(
                "reduced dimension 2N - 1 = {dim} exceeds {MAX_DIM}"
            )));
        }
        if axes.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                actual: axes.len(),
            });
        }
        for (k, a) in axes.iter().enumerate() {
            if a.points < MIN_POINTS {
                return Err(Error::Invalid(format!(
                    "axis {k} has {} points, need at least {MIN_POINTS}",
                    a.points
                )));
            }
            if !(a.lo < a.hi && a.lo.is_finite() && a.hi.is_finite()) {
                return Err(Error::Invalid(format!("axis {k} bounds [{}, {}] are empty", a.lo, a.hi)));
            }
        }
        let mut strides = vec![1; dim];
        for k in (0..dim.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * axes[k + 1].points;
        }
        Ok(Self { nodes, axes, strides })
    }

    /// Positions differences in [−2, 2], velocities in [−2v̄ − 1, 2v̄ + 1],
    /// `points` per axis.
    pub fn standard(spec: &LatticeSpec, params: &Params, points: usize) -> Result<Self> {
        let n = spec.len();
        let vmax = 2.0 * params.v_bar + 1.0;
        let mut axes = vec![
            Axis {
                lo: -2.0,
                hi: 2.0,
                points
            };
            n.saturating_sub(1)
        ];
        axes.extend(std::iter::repeat_n(
            Axis {
                lo: -vmax,
                hi: vmax,
                points,
            },
            n,
        ));
        Self::new(spec, axes)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn axis_names(&self) -> Vec<String> {
        (1..self.nodes)
            .map(|k| format!("dx_{k}"))
            .chain((0..self.nodes).map(|l| format!("v_{l}")))
            .collect()
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        self.strides
            .iter()
            .zip(&self.axes)
            .map(|(s, a)| (flat / s) % a.points)
            .collect()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .into_iter()
            .zip(&self.axes)
            .map(|(i, a)| a.coord(i))
            .collect()
    }

    /// Reduced coordinates of a full state.
    pub fn reduce(&self, x: &MasterState) -> Vec<f64> {
        (1..self.nodes)
            .map(|k| x.x1[k] - x.x1[0])
            .chain(x.x2.iter().copied())
            .collect()
    }

    /// Representative full state with x_0 = 0.
    pub fn lift(&self, coords: &[f64]) -> MasterState {
        let k = self.nodes - 1;
        let x1: Vec<f64> = std::iter::once(0.0).chain(coords[..k].iter().copied()).collect();
        MasterState::new(x1, coords[k..].to_vec())
    }

    /// Grid point closest to `coords`, clamped into the box.
    pub fn nearest(&self, coords: &[f64]) -> usize {
        let idx: Vec<usize> = coords
            .iter()
            .zip(&self.axes)
            .map(|(&c, a)| {
                let r = ((c - a.lo) / a.spacing()).round();
                r.clamp(0.0, (a.points - 1) as f64) as usize
            })
            .collect();
        self.flat_index(&idx)
    }

    pub fn min_spacing(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).fold(f64::INFINITY, f64::min)
    }

    /// Diagonal length of one grid cell.
    pub fn cell_diameter(&self) -> f64 {
        self.axes.iter().map(|a| a.spacing().powi(2)).sum::<f64>().sqrt()
    }

    /// Corners and weights of the multilinear interpolation stencil at
    /// `coords`, or None outside the box.
    fn stencil(&self, coords: &[f64], out: &mut Vec<(usize, f64)>) -> bool {
        out.clear();
        let dim = self.dim();
        let mut base = [0usize; MAX_DIM];
        let mut frac = [0.0f64; MAX_DIM];
        for k in 0..dim {
            let a = &self.axes[k];
            let c = coords[k];
            if !(c >= a.lo && c <= a.hi) {
                return false;
            }
            let r = (c - a.lo) / a.spacing();
            let i = (r.floor() as usize).min(a.points - 2);
            base[k] = i;
            frac[k] = (r - i as f64).clamp(0.0, 1.0);
        }
        for corner in 0..(1usize << dim) {
            let mut w = 1.0;
            let mut flat = 0;
            for k in 0..dim {
                let up = (corner >> k) & 1;
                w *= if up == 1 { frac[k] } else { 1.0 - frac[k] };
                flat += (base[k] + up) * self.strides[k];
            }
            if w > 0.0 {
                out.push((flat, w));
            }
        }
        true
    }
}

/// Values U on a grid; unreached points hold +∞.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub grid: ReducedGrid,
    pub values: Vec<f64>,
    /// Points pinned to zero as part of the thickened target.
    pub target: Vec<bool>,
    pub sweeps: usize,
    pub dt_dp: f64,
}

impl ValueField {
    pub fn at(&self, flat: usize) -> f64 {
        self.values[flat]
    }

    /// Multilinear interpolation; +∞ outside the box or next to unreached
    /// points.
    pub fn interpolate(&self, coords: &[f64]) -> f64 {
        let mut st = Vec::with_capacity(1 << MAX_DIM);
        if !self.grid.stencil(coords, &mut st) {
            return f64::INFINITY;
        }
        st.iter().map(|&(i, w)| w * self.values[i]).sum()
    }

    /// Largest |U(p) − U(q)| / |p − q| over pairs of finite axis neighbours.
    pub fn lipschitz_estimate(&self) -> f64 {
        let g = &self.grid;
        let mut best = 0.0f64;
        for flat in 0..g.len() {
            let u = self.values[flat];
            if !u.is_finite() {
                continue;
            }
            let idx = g.multi_index(flat);
            for k in 0..g.dim() {
                if idx[k] + 1 < g.axes[k].points {
                    let w = self.values[flat + g.strides[k]];
                    if w.is_finite() {
                        best = best.max((w - u).abs() / g.axes[k].spacing());
                    }
                }
            }
        }
        best
    }

    /// Header lines (axes, bounds, resolutions) followed by one value per
    /// line in axis-major order.
    pub fn export(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "axes {}", self.grid.dim());
        let _ = writeln!(out, "nodes {}", self.grid.nodes);
        for (name, a) in self.grid.axis_names().iter().zip(&self.grid.axes) {
            let _ = writeln!(out, "axis {name} {} {} {}", format_number(a.lo), format_number(a.hi), a.points);
        }
        let _ = writeln!(out, "dt_dp {}", format_number(self.dt_dp));
        let _ = writeln!(out, "sweeps {}", self.sweeps);
        out.push_str("values\n");
        for (v, t) in self.values.iter().zip(&self.target) {
            let _ = writeln!(out, "{} {}", format_number(*v), u8::from(*t));
        }
        out
    }

    pub fn import<R: BufRead>(input: R) -> Result<Self> {
        let bad = |msg: String| Error::Invalid(format!("value field: {msg}"));
        let mut lines = input.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| bad("unexpected end of file".into()))?
                .map_err(Error::from)
        };
        let field = |line: &str, key: &str| -> Result<Vec<String>> {
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(bad(format!("expected {key:?}, found {line:?}")));
            }
            Ok(parts.map(str::to_string).collect())
        };
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad integer {s:?}")));

        let dim = int(&field(&next()?, "axes")?.concat())?;
        let nodes = int(&field(&next()?, "nodes")?.concat())?;
        if dim != 2 * nodes - 1 || dim > MAX_DIM {
            return Err(bad(format!("{dim} axes do not fit {nodes} nodes")));
        }
        let mut axes = Vec::with_capacity(dim);
        for _ in 0..dim {
            let f = field(&next()?, "axis")?;
            if f.len() != 4 {
                return Err(bad("axis line needs name, lo, hi, points".into()));
            }
            axes.push(Axis {
                lo: num(&f[1])?,
                hi: num(&f[2])?,
                points: int(&f[3])?,
            });
        }
        let dt_dp = num(&field(&next()?, "dt_dp")?.concat())?;
        let sweeps = int(&field(&next()?, "sweeps")?.concat())?;
        field(&next()?, "values")?;
        let spec = LatticeSpec::new(1, nodes)?;
        let grid = ReducedGrid::new(&spec, axes)?;
        let mut values = Vec::with_capacity(grid.len());
        let mut target = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            let line = next()?;
            let mut parts = line.split_whitespace();
            values.push(num(parts.next().unwrap_or(""))?);
            target.push(parts.next() == Some("1"));
        }
        Ok(Self {
            grid,
            values,
            target,
            sweeps,
            dt_dp,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HjbOptions {
    /// Pseudo-time step; defaults to half the smallest cell over the
    /// largest drift component on the grid.
    pub dt_dp: Option<f64>,
    /// Stop once no finite value moves by more than this.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Penalty for leaving the grid; values reaching it are reported as
    /// unreached (+∞).
    pub value_cap: f64,
}

impl Default for HjbOptions {
    fn default() -> Self {
        Self {
            dt_dp: None,
            tol: 1e-9,
            max_sweeps: 100_000,
            value_cap: 100.0,
        }
    }
}

/// Every per-node choice from {−M, 0, M}.
fn control_samples(nodes: usize, m: f64) -> Vec<Vec<f64>> {
    let count = 3usize.pow(nodes as u32);
    (0..count)
        .map(|mut c| {
            (0..nodes)
                .map(|_| {
                    let w = [-m, 0.0, m][c % 3];
                    c /= 3;
                    w
                })
                .collect()
        })
        .collect()
}

/// Reduced drift: differences move with v_k − v_0.
fn reduced_drift(spec: &LatticeSpec, params: &Params, grid: &ReducedGrid, coords: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let b = master_drift(spec, params, &grid.lift(coords), w)?;
    Ok((1..grid.nodes)
        .map(|k| b.x1[k] - b.x1[0])
        .chain(b.x2.iter().copied())
        .collect())
}

/// Semi-Lagrangian value iteration
///
///   U(X) ← min_W [ Δτ + U(X + Δτ·b̃(X, W)) ],
///
/// with U pinned to 0 on the thickened target, multilinear interpolation,
/// and +∞ for feet outside the box.
///
/// Sweeps are Jacobi style and start from U = 0, so values rise
/// monotonically to the smallest fixed point. Feet outside the box and
/// controls that leave the point in place cost `value_cap`, and every value
/// is clipped there; once converged, points at the cap are reported as
/// unreached (+∞). An infinite penalty would flood the grid: the
/// interpolation spreads every foot over a whole cell, so one unreached
/// corner anywhere nearby would make every neighbour unreached too.
///
/// The foot's own-corner weight w is moved to the left-hand side,
/// U = (Δτ + rest)/(1 − w), which keeps the fixed point and lets values
/// cross a cell per sweep.
pub fn value_iteration(
    grid: &ReducedGrid,
    spec: &LatticeSpec,
    params: &Params,
    options: &HjbOptions,
) -> Result<ValueField> {
    if spec.len() != grid.nodes {
        return Err(Error::Dimension {
            expected: grid.nodes,
            actual: spec.len(),
        });
    }
    if !(options.tol > 0.0) {
        return Err(Error::Invalid(format!("tolerance must be positive, got {}", options.tol)));
    }
    let controls = control_samples(grid.nodes, params.m);
    let size = grid.len();

    // Drift at every point for every control sample.
    let drifts: Vec<Vec<Vec<f64>>> = (0..size)
        .into_par_iter()
        .map(|flat| {
            let p = grid.point(flat);
            controls
                .iter()
                .map(|w| reduced_drift(spec, params, grid, &p, w))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let dt_dp = match options.dt_dp {
        Some(dt) if dt > 0.0 => dt,
        Some(dt) => return Err(Error::Invalid(format!("pseudo-time step must be positive, got {dt}"))),
        None => {
            let bmax = drifts
                .iter()
                .flatten()
                .flatten()
                .fold(0.0f64, |m, b| m.max(b.abs()));
            0.5 * grid.min_spacing() / bmax.max(f64::MIN_POSITIVE)
        }
    };

    let vel_tol = grid.axes[grid.nodes - 1..]
        .iter()
        .map(Axis::spacing)
        .fold(0.0, f64::max);
    let target: Vec<bool> = (0..size)
        .map(|flat| in_target_within(spec, params, &grid.lift(&grid.point(flat)), vel_tol))
        .collect::<Result<_>>()?;

    // (self weight, other corners) per point and control; None when the
    // foot leaves the box.
    type Stencil = Option<(f64, Vec<(usize, f64)>)>;
    let stencils: Vec<Vec<Stencil>> = (0..size)
        .into_par_iter()
        .map(|flat| {
            if target[flat] {
                return Vec::new();
            }
            let p = grid.point(flat);
            let mut corners = Vec::with_capacity(1 << MAX_DIM);
            drifts[flat]
                .iter()
                .map(|b| {
                    let foot: Vec<f64> = p.iter().zip(b).map(|(x, d)| x + dt_dp * d).collect();
                    if !grid.stencil(&foot, &mut corners) {
                        return None;
                    }
                    let own = corners.iter().find(|c| c.0 == flat).map_or(0.0, |c| c.1);
                    let others = corners.iter().copied().filter(|c| c.0 != flat).collect();
                    Some((own, others))
                })
                .collect()
        })
        .collect();
    drop(drifts);

    let cap = options.value_cap;
    let mut u = vec![0.0; size];
    let mut next = u.clone();
    for sweep in 1..=options.max_sweeps {
        let residual = next
            .par_iter_mut()
            .enumerate()
            .map(|(flat, slot)| {
                if target[flat] {
                    *slot = 0.0;
                    return 0.0;
                }
                let best = stencils[flat]
                    .iter()
                    .map(|st| match st {
                        None => cap,
                        Some((own, _)) if *own >= 1.0 => cap,
                        Some((own, others)) => {
                            let rest: f64 = others.iter().map(|&(i, w)| w * u[i]).sum();
                            (dt_dp + rest) / (1.0 - own)
                        }
                    })
                    .fold(cap, f64::min);
                *slot = best;
                (best - u[flat]).abs()
            })
            .reduce(|| 0.0, f64::max);
        std::mem::swap(&mut u, &mut next);
        if residual < options.tol {
            for value in u.iter_mut().filter(|v| **v >= cap) {
                *value = f64::INFINITY;
            }
            return Ok(ValueField {
                grid: grid.clone(),
                values: u,
                target,
                sweeps: sweep,
                dt_dp,
            });
        }
        if sweep == options.max_sweeps {
            return Err(Error::Convergence {
                sweeps: sweep,
                residual,
            });
        }
    }
    Err(Error::Convergence {
        sweeps: 0,
        residual: f64::INFINITY,
    })
}

/// Minimal time for the single-node system v̇ = (α − β v²) v + W, |W| ≤ M,
/// to reach ±v̄ from `v0`, by integrating W = +M and W = −M with RK4 at
/// step `dt_fine` and taking the earlier first hit. +∞ if neither hits
/// before `t_cap`.
///
/// Bang-bang is optimal here: the scalar flow under a constant control is
/// monotone, so pushing at full strength reaches each level soonest.
pub fn bang_bang_oracle(params: &Params, v0: f64, dt_fine: f64, t_cap: f64) -> f64 {
    let targets = [params.v_bar, -params.v_bar];
    if targets.contains(&v0) {
        return 0.0;
    }
    let f = |v: f64, w: f64| (params.alpha - params.beta * v * v) * v + w;
    let hit = |w: f64| -> f64 {
        let (mut t, mut v) = (0.0, v0);
        while t < t_cap {
            let k1 = f(v, w);
            let k2 = f(v + 0.5 * dt_fine * k1, w);
            let k3 = f(v + 0.5 * dt_fine * k2, w);
            let k4 = f(v + dt_fine * k3, w);
            let nv = v + dt_fine / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            for g in targets {
                if (v - g) * (nv - g) <= 0.0 && nv != v {
                    return t + dt_fine * (g - v) / (nv - v);
                }
            }
            v = nv;
            t += dt_fine;
        }
        f64::INFINITY
    };
    hit(params.m).min(hit(-params.m))
}
