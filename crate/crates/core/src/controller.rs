//! Feedback laws that steer the lattice to a flock, and the phase machine
//! that sequences them.
//!
//! Phases, in order:
//!
//! 1. `Damp`: velocity-only feedback that makes V strictly decrease until all
//!    velocities and Laplacians are below ε (time T0).
//! 2. `Freeze`: each node decelerates at rate ε until it stops at T_{1,l};
//!    the lattice is a stationary flock at T1 = max_l T_{1,l}.
//! 3. `Accelerate`: uniform acceleration M/2 from rest up to v̄ (time T2).
//! 4. `Rendezvous`: cubic blend of every node onto the common point ȳ (T3).
//! 5. `Retarget`: cubic blend from the common point onto the target shape (T4).
//! 6. `Hold`: cancel the coupling so the shape rides along unchanged.
//!
//! Phases 2 to 6 are feedback linearizations: they cancel the measured
//! coupling and nonlinearity and inject a closed-form reference
//! acceleration, so along exact trajectories they coincide with the
//! explicit open-loop formulas.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dynamics::{self, lyapunov, ControlField, Params, State};
use crate::error::{Error, Result};
use crate::lattice::{LatticeSpec, NodeField};
use crate::trajectory::{Sample, Trajectory};
use crate::verify::{self, FlockStatus};

/// Tolerance used to report whether the mission ended in a flock.
pub const FLOCK_TOL: f64 = 1e-6;

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlVariant {
    /// Switches off for |v| ≥ 2a₂ and ramps down on (a₂, 2a₂).
    #[default]
    Standard,
    /// Saturated at M for every |v| ≥ a₁.
    Simple,
}

/// Damping law for a single node velocity.
pub fn phase1_control(params: &Params, v: f64) -> f64 {
    let speed = v.abs();
    let (m, a1, a2) = (params.m, params.a1, params.a2);
    if speed >= 2.0 * a2 {
        0.0
    } else if speed > a2 {
        -m * sign(v) * (2.0 - speed / a2)
    } else if speed >= a1 {
        -m * sign(v)
    } else {
        -m * v / a1
    }
}

/// Damping law without the switch-off band: more control effort, same decay.
pub fn phase1_control_simple(params: &Params, v: f64) -> f64 {
    if v.abs() >= params.a1 {
        -params.m * sign(v)
    } else {
        -params.m * v / params.a1
    }
}

pub fn phase1_field(params: &Params, variant: ControlVariant, state: &State) -> ControlField {
    let law = match variant {
        ControlVariant::Standard => phase1_control,
        ControlVariant::Simple => phase1_control_simple,
    };
    ControlField::from(state.v.iter().map(|&v| law(params, v)).collect::<Vec<_>>())
}

/// Velocity bands of the damping law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IndexSet {
    /// |v| < a₁
    I0,
    /// a₁ ≤ |v| ≤ a₂
    I1,
    /// |v| > a₂
    I2,
}

pub fn classify_index(params: &Params, v: f64) -> IndexSet {
    let speed = v.abs();
    if speed > params.a2 {
        IndexSet::I2
    } else if speed >= params.a1 {
        IndexSet::I1
    } else {
        IndexSet::I0
    }
}

/// Upper bound on the damping exit threshold ε:
/// min{1, M / (2n + 1 + 8n/h² + 2α + 8β)}.
pub fn epsilon_bound(spec: &LatticeSpec, params: &Params) -> f64 {
    let n = spec.dim() as f64;
    let denom = 2.0 * n + 1.0 + 8.0 * n * spec.inv_h2() + 2.0 * params.alpha + 8.0 * params.beta;
    (params.m / denom).min(1.0)
}

/// max_l |v_l| < ε and max_l |Δx(l)| < ε.
pub fn phase1_done(spec: &LatticeSpec, state: &State, eps: f64) -> bool {
    if state.v.max_abs() >= eps {
        return false;
    }
    match spec.max_abs_laplacian(&state.x) {
        Ok((_, lap)) => lap < eps,
        Err(_) => false,
    }
}

/// Largest |Δx| the lattice will have once the freeze phase started from
/// `state` has brought every node to rest. Node l travels v_l|v_l|/(2ε)
/// while decelerating at rate ε.
pub fn frozen_laplacian(spec: &LatticeSpec, state: &State, eps: f64) -> Result<f64> {
    let x: Vec<f64> = state
        .x
        .iter()
        .zip(state.v.iter())
        .map(|(x, v)| x + v * v.abs() / (2.0 * eps))
        .collect();
    Ok(spec.max_abs_laplacian(&x)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlockKind {
    /// Group velocity √(α/β).
    Moving,
    /// At rest.
    Stationary,
}

/// Target flock shape φ̄ with |−Δφ̄| < M everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlockTarget {
    pub kind: FlockKind,
    pub phi_bar: NodeField,
}

impl FlockTarget {
    pub fn new(spec: &LatticeSpec, params: &Params, kind: FlockKind, phi_bar: NodeField) -> Result<Self> {
        let (node, worst) = spec.max_abs_laplacian(&phi_bar)?;
        if !(worst < params.m) {
            return Err(Error::Compatibility {
                node,
                worst,
                bound: params.m,
            });
        }
        Ok(Self { kind, phi_bar })
    }

    pub fn group_velocity(&self, params: &Params) -> f64 {
        match self.kind {
            FlockKind::Moving => params.v_bar,
            FlockKind::Stationary => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Damp,
    Freeze,
    Accelerate,
    Rendezvous,
    Retarget,
    Hold,
}

impl Phase {
    pub const ALL: [Phase; 6] = [
        Phase::Damp,
        Phase::Freeze,
        Phase::Accelerate,
        Phase::Rendezvous,
        Phase::Retarget,
        Phase::Hold,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Phase::Damp => "damp",
            Phase::Freeze => "freeze",
            Phase::Accelerate => "accelerate",
            Phase::Rendezvous => "rendezvous",
            Phase::Retarget => "retarget",
            Phase::Hold => "hold",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Phase::ALL.into_iter().find(|p| p.tag() == tag)
    }
}

/// Switching times and the frozen snapshots the later laws refer to.
///
/// For a stationary target there is no acceleration phase and T2 = T1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSchedule {
    pub phase: Phase,
    pub epsilon: f64,
    /// Group velocity during rendezvous, retarget and hold.
    pub cruise: f64,
    pub t0: Option<f64>,
    /// Per-node stopping times T_{1,l}.
    pub t1_nodes: Vec<f64>,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub t3: Option<f64>,
    pub t4: Option<f64>,
    pub y_bar: Option<f64>,
    pub snapshot_t0: Option<State>,
    pub snapshot_t1: Option<State>,
    pub snapshot_t2: Option<State>,
    pub snapshot_t3: Option<State>,
    pub snapshot_t4: Option<State>,
}

impl PhaseSchedule {
    pub fn new(epsilon: f64, cruise: f64) -> Self {
        Self {
            phase: Phase::Damp,
            epsilon,
            cruise,
            t0: None,
            t1_nodes: Vec::new(),
            t1: None,
            t2: None,
            t3: None,
            t4: None,
            y_bar: None,
            snapshot_t0: None,
            snapshot_t1: None,
            snapshot_t2: None,
            snapshot_t3: None,
            snapshot_t4: None,
        }
    }

    /// Start the freeze phase from the state at T0.
    pub fn begin_freeze(&mut self, at: &State) {
        let t0 = at.t;
        let eps = self.epsilon;
        self.t1_nodes = at.v.iter().map(|v| t0 + v.abs() / eps).collect();
        self.t1 = Some(self.t1_nodes.iter().copied().fold(t0, f64::max));
        self.t0 = Some(t0);
        self.snapshot_t0 = Some(at.clone());
        self.phase = Phase::Freeze;
    }

    /// Switching times with their labels, for plotting and summaries.
    pub fn markers(&self) -> Vec<(&'static str, f64)> {
        [("T0", self.t0), ("T1", self.t1), ("T2", self.t2), ("T3", self.t3), ("T4", self.t4)]
            .into_iter()
            .filter_map(|(name, t)| t.map(|t| (name, t)))
            .collect()
    }
}

fn missing(what: &str) -> Error {
    Error::Precondition(format!("schedule has no {what} yet"))
}

/// Freeze law: u_l = v̇_ref − Δx(l) − (α − β v_l²) v_l with v̇_ref = −ε sign(v_l(T0))
/// while t ≤ T_{1,l} and 0 afterwards.
///
/// The law is piecewise constant in time and `t` only selects the branch.
/// Callers integrating a step that ends exactly at some T_{1,l} should pass a
/// time strictly inside the step, e.g. its midpoint.
pub fn phase2_control(
    spec: &LatticeSpec,
    params: &Params,
    schedule: &PhaseSchedule,
    state: &State,
    t: f64,
) -> Result<ControlField> {
    let start = schedule.snapshot_t0.as_ref().ok_or_else(|| missing("T0 snapshot"))?;
    state.check(spec)?;
    let mut u = vec![0.0; spec.len()];
    spec.laplacian_into(&state.x, &mut u);
    for (l, ul) in u.iter_mut().enumerate() {
        let accel = if t <= schedule.t1_nodes[l] {
            -schedule.epsilon * sign(start.v[l])
        } else {
            0.0
        };
        *ul = accel - *ul - params.nonlinearity(state.v[l]);
    }
    Ok(ControlField::from(u))
}

/// Acceleration law u_l = −(α − β v_l²) v_l − Δx(l) + M/2: every node gains
/// speed at rate M/2 and reaches v̄ after 2√α / (M√β).
pub fn phase3_control(
    spec: &LatticeSpec,
    params: &Params,
    schedule: &PhaseSchedule,
    state: &State,
    _t: f64,
) -> Result<ControlField> {
    schedule.t1.ok_or_else(|| missing("T1"))?;
    state.check(spec)?;
    let mut u = vec![0.0; spec.len()];
    spec.laplacian_into(&state.x, &mut u);
    for (ul, &v) in u.iter_mut().zip(state.v.iter()) {
        *ul = 0.5 * params.m - *ul - params.nonlinearity(v);
    }
    Ok(ControlField::from(u))
}

/// Duration of the acceleration phase, 2√α / (M√β).
pub fn acceleration_time(params: &Params) -> f64 {
    2.0 * params.alpha.sqrt() / (params.m * params.beta.sqrt())
}

/// Cubic blend that moves a node by `d` over [start, end] on top of uniform
/// motion at `cruise`, with zero relative velocity at both ends:
///
///   x(t) = x(start) + (t − start)·cruise + (3s² − 2s³)·d,  s = (t − start)/(end − start).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicBlend {
    pub start: f64,
    pub end: f64,
    pub cruise: f64,
}

impl CubicBlend {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn position(&self, origin: f64, d: f64, t: f64) -> f64 {
        let s = (t - self.start) / self.duration();
        origin + (t - self.start) * self.cruise + (3.0 * s * s - 2.0 * s * s * s) * d
    }

    pub fn velocity(&self, d: f64, t: f64) -> f64 {
        self.cruise + 6.0 * d * (t - self.start) * (self.end - t) / self.duration().powi(3)
    }

    pub fn acceleration(&self, d: f64, t: f64) -> f64 {
        6.0 * d * (self.end + self.start - 2.0 * t) / self.duration().powi(3)
    }
}

fn blend_tracking(
    spec: &LatticeSpec,
    params: &Params,
    blend: &CubicBlend,
    displacement: impl Fn(usize) -> f64,
    state: &State,
    t: f64,
) -> Result<ControlField> {
    state.check(spec)?;
    let mut u = vec![0.0; spec.len()];
    spec.laplacian_into(&state.x, &mut u);
    for (l, ul) in u.iter_mut().enumerate() {
        *ul = blend.acceleration(displacement(l), t) - *ul - params.nonlinearity(state.v[l]);
    }
    Ok(ControlField::from(u))
}

/// Drives every node from x_l(T2) to the common point ȳ + (T3 − T2)·cruise.
pub fn rendezvous_control(
    spec: &LatticeSpec,
    params: &Params,
    schedule: &PhaseSchedule,
    state: &State,
    t: f64,
) -> Result<ControlField> {
    let origin = schedule.snapshot_t2.as_ref().ok_or_else(|| missing("T2 snapshot"))?;
    let blend = CubicBlend {
        start: schedule.t2.ok_or_else(|| missing("T2"))?,
        end: schedule.t3.ok_or_else(|| missing("T3"))?,
        cruise: schedule.cruise,
    };
    let y_bar = schedule.y_bar.ok_or_else(|| missing("rendezvous point"))?;
    blend_tracking(spec, params, &blend, |l| y_bar - origin.x[l], state, t)
}

/// Drives the coincident flock at T3 onto φ̄ + (T4 − T3)·cruise.
pub fn retarget_control(
    spec: &LatticeSpec,
    params: &Params,
    schedule: &PhaseSchedule,
    target: &FlockTarget,
    state: &State,
    t: f64,
) -> Result<ControlField> {
    let origin = schedule.snapshot_t3.as_ref().ok_or_else(|| missing("T3 snapshot"))?;
    spec.check(&target.phi_bar)?;
    let blend = CubicBlend {
        start: schedule.t3.ok_or_else(|| missing("T3"))?,
        end: schedule.t4.ok_or_else(|| missing("T4"))?,
        cruise: schedule.cruise,
    };
    blend_tracking(
        spec,
        params,
        &blend,
        |l| target.phi_bar[l] - origin.x[l],
        state,
        t,
    )
}

/// u_l = −Δx(l): the uncoupled flock keeps its shape and speed.
pub fn hold_control(spec: &LatticeSpec, state: &State) -> Result<ControlField> {
    let lap = spec.laplacian(&state.x)?;
    Ok(ControlField::from(lap.iter().map(|d| -d).collect::<Vec<_>>()))
}

/// Which horizon inequality to satisfy.
#[derive(Debug, Clone, Copy)]
pub enum HorizonCondition<'a> {
    /// Right-hand side M − ε for every node.
    Rendezvous { epsilon: f64 },
    /// Right-hand side M − |Δφ̄(l)| per node.
    Retarget { laplacian: &'a [f64] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonOptions {
    /// Shortest duration ever returned.
    pub floor: f64,
    /// Longest duration searched before giving up.
    pub cap: f64,
    /// Multiplier on the right-hand side.
    pub margin: f64,
    /// Relative bisection tolerance on the duration.
    pub rel_tol: f64,
}

impl Default for HorizonOptions {
    fn default() -> Self {
        Self {
            floor: 1e-2,
            cap: 1e6,
            margin: 0.9,
            rel_tol: 1e-6,
        }
    }
}

/// Bound on the blend's non-coupling control terms for a node displaced by
/// `d` over [start, end]:
///
///   [3α|d|τ² + 6.75√(αβ)|d|²τ + 3.375β|d|³ + 6|d|(end + start)] / τ³,  τ = end − start.
pub fn horizon_lhs(alpha: f64, beta: f64, d: f64, start: f64, end: f64) -> f64 {
    let d = d.abs();
    let tau = end - start;
    (3.0 * alpha * d * tau * tau
        + 6.75 * (alpha * beta).sqrt() * d * d * tau
        + 3.375 * beta * d * d * d
        + 6.0 * d * (end + start))
        / tau.powi(3)
}

/// Smallest end time T ≥ start + floor at which `horizon_lhs` is below
/// margin × right-hand side for every node. Doubling, then bisection.
pub fn choose_horizon(
    condition: HorizonCondition<'_>,
    displacements: &[f64],
    params: &Params,
    start: f64,
    options: &HorizonOptions,
) -> Result<f64> {
    let rhs: Vec<f64> = match condition {
        HorizonCondition::Rendezvous { epsilon } => vec![params.m - epsilon; displacements.len()],
        HorizonCondition::Retarget { laplacian } => {
            if laplacian.len() != displacements.len() {
                return Err(Error::Dimension {
                    expected: displacements.len(),
                    actual: laplacian.len(),
                });
            }
            laplacian.iter().map(|d| params.m - d.abs()).collect()
        }
    };
    if let Some((node, r)) = rhs.iter().enumerate().find(|(_, r)| !(**r > 0.0)) {
        return Err(Error::Precondition(format!(
            "horizon right-hand side {r} at node {node} is not positive"
        )));
    }
    let fits = |tau: f64| {
        displacements.iter().zip(&rhs).all(|(&d, &r)| {
            horizon_lhs(params.alpha, params.beta, d, start, start + tau) < options.margin * r
        })
    };

    let mut hi = options.floor;
    if fits(hi) {
        return Ok(start + hi);
    }
    let mut lo = hi;
    while !fits(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > options.cap {
            return Err(Error::Horizon {
                start,
                cap: options.cap,
            });
        }
    }
    while hi - lo > options.rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        if fits(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(start + hi)
}

/// Rendezvous point rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YBarRule {
    /// Arithmetic mean of the positions.
    #[default]
    Mean,
    /// Midpoint of the extreme positions, which minimises the largest
    /// displacement and hence the horizon.
    Minimax,
}

pub fn rendezvous_point(positions: &[f64], rule: YBarRule) -> f64 {
    match rule {
        YBarRule::Mean => positions.iter().sum::<f64>() / positions.len() as f64,
        YBarRule::Minimax => {
            let lo = positions.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = positions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            0.5 * (lo + hi)
        }
    }
}

/// What the mission should end in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissionKind {
    /// Any moving flock: damp, freeze, accelerate.
    MovingFlock,
    /// A prescribed moving flock shape, up to a constant offset.
    MovingTarget,
    /// A prescribed stationary flock shape, up to a constant offset.
    StationaryTarget,
}

impl MissionKind {
    pub fn for_target(target: Option<&FlockTarget>) -> Self {
        match target.map(|t| t.kind) {
            None => MissionKind::MovingFlock,
            Some(FlockKind::Moving) => MissionKind::MovingTarget,
            Some(FlockKind::Stationary) => MissionKind::StationaryTarget,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionOptions {
    pub variant: ControlVariant,
    pub y_bar_rule: YBarRule,
    /// Damping exit threshold; defaults to half of `epsilon_bound`.
    pub epsilon: Option<f64>,
    pub dt: f64,
    pub phase1_timeout: f64,
    pub horizon: HorizonOptions,
    /// How long to run the hold law after the flock is reached.
    pub hold_time: f64,
    /// Record every k-th integrator step.
    pub record_stride: usize,
}

impl Default for MissionOptions {
    fn default() -> Self {
        Self {
            variant: ControlVariant::Standard,
            y_bar_rule: YBarRule::Mean,
            epsilon: None,
            dt: 1e-3,
            phase1_timeout: 1e4,
            horizon: HorizonOptions::default(),
            hold_time: 1.0,
            record_stride: 1,
        }
    }
}

/// Extremes of V over the steps of one phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovRange {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone)]
pub struct MissionResult {
    pub kind: MissionKind,
    pub trajectory: Trajectory,
    pub schedule: PhaseSchedule,
    /// Constant a with x_l = φ̄(l) + a + v̄ t once the target is reached.
    pub offset: Option<f64>,
    /// Flock check of the final state.
    pub flock: FlockStatus,
    /// Time at which the flock is reached (T2 without a target, T4 with one).
    pub flock_time: f64,
    /// Largest |u_l| over every integrator stage.
    pub max_control: f64,
    pub lyapunov_ranges: BTreeMap<Phase, LyapunovRange>,
    pub final_state: State,
}

impl MissionResult {
    /// State at the moment the flock is reached.
    pub fn flock_state(&self) -> Option<&State> {
        match self.kind {
            MissionKind::MovingFlock => self.schedule.snapshot_t2.as_ref(),
            _ => self.schedule.snapshot_t4.as_ref(),
        }
    }
}

/// Integrates phase by phase, recording as it goes.
struct Runner<'a> {
    spec: &'a LatticeSpec,
    params: &'a Params,
    dt: f64,
    stride: usize,
    steps: usize,
    state: State,
    trajectory: Trajectory,
    max_control: f64,
    ranges: BTreeMap<Phase, LyapunovRange>,
}

impl<'a> Runner<'a> {
    /// One RK4 step of size `h`; `law(t, mid, state)` where `mid` is the
    /// step midpoint.
    fn advance<L>(&mut self, phase: Phase, h: f64, mut law: L) -> Result<()>
    where
        L: FnMut(f64, f64, &State) -> Result<ControlField>,
    {
        let mid = self.state.t + 0.5 * h;
        let v_now = lyapunov(self.spec, &self.state);
        let range = self.ranges.entry(phase).or_insert(LyapunovRange {
            min: v_now,
            max: v_now,
        });
        range.min = range.min.min(v_now);
        range.max = range.max.max(v_now);

        let mut first: Option<ControlField> = None;
        let mut peak = self.max_control;
        let mut wrapped = |t: f64, s: &State| -> Result<ControlField> {
            let u = law(t, mid, s)?;
            peak = peak.max(u.peak().1);
            if first.is_none() {
                first = Some(u.clone());
            }
            Ok(u)
        };
        let next = dynamics::step(self.spec, self.params, &self.state, &mut wrapped, h)?;
        self.max_control = peak;

        if self.steps.is_multiple_of(self.stride) {
            let u = first.expect("first stage always evaluated");
            self.trajectory.push(Sample {
                t: self.state.t,
                x: self.state.x.to_vec(),
                v: self.state.v.to_vec(),
                u: u.0.into_vec(),
                lyapunov: v_now,
                phase,
            });
        }
        self.steps += 1;
        self.state = next;
        Ok(())
    }

    /// Steps of size dt, shortening the last one so the phase ends exactly
    /// at `end`.
    fn run_until<L>(&mut self, phase: Phase, end: f64, mut law: L) -> Result<()>
    where
        L: FnMut(f64, f64, &State) -> Result<ControlField>,
    {
        while self.state.t < end {
            let remaining = end - self.state.t;
            let last = remaining <= self.dt * (1.0 + 1e-9);
            let h = if last { remaining } else { self.dt };
            self.advance(phase, h, &mut law)?;
            if last {
                self.state.t = end;
            }
        }
        Ok(())
    }

    /// Records the final state with the law that would act on it.
    fn finish(&mut self, phase: Phase, u: ControlField) {
        let v_now = lyapunov(self.spec, &self.state);
        self.trajectory.push(Sample {
            t: self.state.t,
            x: self.state.x.to_vec(),
            v: self.state.v.to_vec(),
            u: u.0.into_vec(),
            lyapunov: v_now,
            phase,
        });
    }
}

/// Runs the full phase machine from `initial`.
///
/// Without a target the lattice is brought to a moving flock at v̄; with a
/// target it is brought onto φ̄ up to a constant offset, moving or at rest
/// according to the target kind.
///
/// The damping phase ends at the first step where `phase1_done` holds and
/// the Laplacian left after freezing is at most ε/2, so the rendezvous
/// phase starts from |Δx| ≤ ε.
pub fn run_mission(
    spec: &LatticeSpec,
    params: &Params,
    initial: &State,
    target: Option<&FlockTarget>,
    options: &MissionOptions,
) -> Result<MissionResult> {
    let params = &Params::with_gamma(params.alpha, params.beta, params.m, params.gamma)?;
    initial.check(spec)?;
    if let Some(target) = target {
        FlockTarget::new(spec, params, target.kind, target.phi_bar.clone())?;
    }
    if !(options.dt > 0.0) {
        return Err(Error::Invalid(format!("dt must be positive, got {}", options.dt)));
    }
    if options.record_stride == 0 {
        return Err(Error::Invalid("record stride must be at least 1".into()));
    }
    let eps_max = epsilon_bound(spec, params);
    let eps = options.epsilon.unwrap_or(0.5 * eps_max);
    if !(eps > 0.0 && eps < eps_max) {
        return Err(Error::Params(format!(
            "epsilon = {eps} must lie in (0, {eps_max})"
        )));
    }

    let kind = MissionKind::for_target(target);
    let cruise = match kind {
        MissionKind::StationaryTarget => 0.0,
        _ => params.v_bar,
    };
    let mut schedule = PhaseSchedule::new(eps, cruise);
    let mut run = Runner {
        spec,
        params,
        dt: options.dt,
        stride: options.record_stride,
        steps: 0,
        state: initial.clone(),
        trajectory: Trajectory::new(spec.len()),
        max_control: 0.0,
        ranges: BTreeMap::new(),
    };

    // Damp
    let settled = |s: &State| -> Result<bool> {
        Ok(phase1_done(spec, s, eps) && frozen_laplacian(spec, s, eps)? <= 0.5 * eps)
    };
    while !settled(&run.state)? {
        if run.state.t >= options.phase1_timeout {
            return Err(Error::Phase1Timeout {
                timeout: options.phase1_timeout,
                max_v: run.state.v.max_abs(),
                max_lap: spec.max_abs_laplacian(&run.state.x)?.1,
            });
        }
        let variant = options.variant;
        run.advance(Phase::Damp, options.dt, |_, _, s| {
            Ok(phase1_field(params, variant, s))
        })?;
    }

    // Freeze
    schedule.begin_freeze(&run.state);
    let t1 = schedule.t1.expect("set by begin_freeze");
    let mut switches: Vec<f64> = schedule
        .t1_nodes
        .iter()
        .copied()
        .filter(|&t| t > run.state.t)
        .collect();
    switches.sort_by(f64::total_cmp);
    switches.dedup();
    for end in switches {
        run.run_until(Phase::Freeze, end, |_, mid, s| {
            phase2_control(spec, params, &schedule, s, mid)
        })?;
    }
    run.state.t = run.state.t.max(t1);
    schedule.snapshot_t1 = Some(run.state.clone());

    // Accelerate
    if kind == MissionKind::StationaryTarget {
        schedule.t2 = Some(t1);
    } else {
        schedule.phase = Phase::Accelerate;
        let t2 = t1 + acceleration_time(params);
        schedule.t2 = Some(t2);
        run.run_until(Phase::Accelerate, t2, |t, _, s| {
            phase3_control(spec, params, &schedule, s, t)
        })?;
    }
    schedule.snapshot_t2 = Some(run.state.clone());

    let mut offset = None;
    let flock_time;
    if let Some(target) = target {
        // Rendezvous
        let t2 = schedule.t2.expect("set above");
        let (node, lap) = spec.max_abs_laplacian(&run.state.x)?;
        if lap > eps {
            return Err(Error::Precondition(format!(
                "|lap x| = {lap} at node {node} exceeds epsilon = {eps} at the start of the rendezvous"
            )));
        }
        let y_bar = rendezvous_point(&run.state.x, options.y_bar_rule);
        let d: Vec<f64> = run.state.x.iter().map(|x| y_bar - x).collect();
        let t3 = choose_horizon(
            HorizonCondition::Rendezvous { epsilon: eps },
            &d,
            params,
            t2,
            &options.horizon,
        )?;
        schedule.y_bar = Some(y_bar);
        schedule.t3 = Some(t3);
        schedule.phase = Phase::Rendezvous;
        run.run_until(Phase::Rendezvous, t3, |t, _, s| {
            rendezvous_control(spec, params, &schedule, s, t)
        })?;
        schedule.snapshot_t3 = Some(run.state.clone());

        // Retarget
        let lap_phi = spec.laplacian(&target.phi_bar)?;
        let d: Vec<f64> = target
            .phi_bar
            .iter()
            .zip(run.state.x.iter())
            .map(|(phi, x)| phi - x)
            .collect();
        let t4 = choose_horizon(
            HorizonCondition::Retarget { laplacian: &lap_phi },
            &d,
            params,
            t3,
            &options.horizon,
        )?;
        schedule.t4 = Some(t4);
        schedule.phase = Phase::Retarget;
        run.run_until(Phase::Retarget, t4, |t, _, s| {
            retarget_control(spec, params, &schedule, target, s, t)
        })?;
        schedule.snapshot_t4 = Some(run.state.clone());
        offset = Some(0.0 - t3 * cruise);
        flock_time = t4;
    } else {
        flock_time = schedule.t2.expect("set above");
    }

    // Hold
    schedule.phase = Phase::Hold;
    let hold_end = run.state.t + options.hold_time;
    run.run_until(Phase::Hold, hold_end, |_, _, s| hold_control(spec, s))?;
    let last_u = hold_control(spec, &run.state)?;
    run.finish(Phase::Hold, last_u);

    let flock = verify::detect_flock(spec, params, &run.state, target, FLOCK_TOL)?;
    Ok(MissionResult {
        kind,
        trajectory: run.trajectory,
        schedule,
        offset,
        flock,
        flock_time,
        max_control: run.max_control,
        lyapunov_ranges: run.ranges,
        final_state: run.state,
    })
}
