//! Controlled lattice ODE
//!
//!   ẋ_l = v_l,
//!   v̇_l = Δx(l) + (α − β v_l²) v_l + u_l,
//!
//! its fixed-step RK4 integrator and the energy functional V used to certify
//! the damping phase.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LatticeSpec, NodeField};

/// Peak of f(v) = α v − β v³ over v ≥ 0, i.e. (2/(3√3))·√(α³/β).
pub fn cubic_peak(alpha: f64, beta: f64) -> f64 {
    2.0 / (3.0 * 3f64.sqrt()) * (alpha.powi(3) / beta).sqrt()
}

/// Where the peak of α v − β v³ is attained: √(α/(3β)).
pub fn cubic_peak_location(alpha: f64, beta: f64) -> f64 {
    (alpha / (3.0 * beta)).sqrt()
}

/// Physical and control constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub alpha: f64,
    pub beta: f64,
    /// Control bound M.
    pub m: f64,
    pub gamma: f64,
    /// (1/γ)·√(α/β): lower edge of the saturated band of the damping law.
    pub a1: f64,
    /// γ·√(α/β): upper edge of the saturated band.
    pub a2: f64,
    /// Flock speed √(α/β), where the nonlinearity vanishes.
    pub v_bar: f64,
}

impl Params {
    /// Validated parameters with γ = 2·max{1, √(α³/β)/M}.
    pub fn new(alpha: f64, beta: f64, m: f64) -> Result<Self> {
        let gamma = 2.0 * Self::gamma_floor(alpha, beta, m);
        Self::with_gamma(alpha, beta, m, gamma)
    }

    pub fn with_gamma(alpha: f64, beta: f64, m: f64, gamma: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Params(format!("alpha = {alpha} must be positive")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Params(format!("beta = {beta} must be positive")));
        }
        let peak = cubic_peak(alpha, beta);
        if !(m > peak && m.is_finite()) {
            return Err(Error::Params(format!(
                "control bound M = {m} must exceed (2/(3*sqrt(3)))*sqrt(alpha^3/beta) = {peak}"
            )));
        }
        let floor = Self::gamma_floor(alpha, beta, m);
        if !(gamma > floor && gamma.is_finite()) {
            return Err(Error::Params(format!(
                "gamma = {gamma} must exceed max{{1, sqrt(alpha^3/beta)/M}} = {floor}"
            )));
        }
        Ok(Self::unchecked(alpha, beta, m, gamma))
    }

    /// No invariant checks. For studying the free lattice (α = β = 0, no
    /// control) and for boundary cases in tests; never feed this to a mission.
    pub fn unchecked(alpha: f64, beta: f64, m: f64, gamma: f64) -> Self {
        let v_bar = (alpha / beta).sqrt();
        Self {
            alpha,
            beta,
            m,
            gamma,
            a1: v_bar / gamma,
            a2: gamma * v_bar,
            v_bar,
        }
    }

    /// γ must be strictly larger than this.
    pub fn gamma_floor(alpha: f64, beta: f64, m: f64) -> f64 {
        ((alpha.powi(3) / beta).sqrt() / m).max(1.0)
    }

    /// (α − β v²) v
    #[inline]
    pub fn nonlinearity(&self, v: f64) -> f64 {
        (self.alpha - self.beta * v * v) * v
    }

    pub fn cubic_peak(&self) -> f64 {
        cubic_peak(self.alpha, self.beta)
    }
}

/// Time-stamped positions and velocities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub t: f64,
    pub x: NodeField,
    pub v: NodeField,
}

impl State {
    pub fn new(t: f64, x: impl Into<NodeField>, v: impl Into<NodeField>) -> Self {
        Self {
            t,
            x: x.into(),
            v: v.into(),
        }
    }

    /// All nodes at the same position, at rest.
    pub fn at_rest(spec: &LatticeSpec) -> Self {
        Self::new(0.0, NodeField::zeros(spec.len()), NodeField::zeros(spec.len()))
    }

    pub fn check(&self, spec: &LatticeSpec) -> Result<()> {
        spec.check(&self.x)?;
        spec.check(&self.v)
    }

    /// The state with every position and velocity negated.
    pub fn negated(&self) -> Self {
        Self::new(
            self.t,
            self.x.iter().map(|x| -x).collect::<Vec<_>>(),
            self.v.iter().map(|v| -v).collect::<Vec<_>>(),
        )
    }
}

/// Per-node control forces.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControlField(pub NodeField);

impl ControlField {
    pub fn zeros(len: usize) -> Self {
        Self(NodeField::zeros(len))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Node and magnitude of the largest |u_l|.
    pub fn peak(&self) -> (usize, f64) {
        self.0
            .iter()
            .enumerate()
            .fold((0, 0.0), |best, (l, u)| if u.abs() > best.1 { (l, u.abs()) } else { best })
    }

    /// max_l |u_l| ≤ M, reported against time `t`.
    pub fn check_admissible(&self, bound: f64, t: f64) -> Result<()> {
        for (node, &u) in self.0.iter().enumerate() {
            // NaN fails this comparison too
            if !(u.abs() <= bound) {
                return Err(Error::Admissibility {
                    t,
                    node,
                    value: u.abs(),
                    bound,
                });
            }
        }
        Ok(())
    }
}

impl From<Vec<f64>> for ControlField {
    fn from(v: Vec<f64>) -> Self {
        Self(NodeField(v))
    }
}

/// Right-hand side (ẋ, v̇) of the controlled system.
pub fn drift(
    spec: &LatticeSpec,
    params: &Params,
    state: &State,
    control: &ControlField,
) -> Result<(NodeField, NodeField)> {
    state.check(spec)?;
    spec.check(control.values())?;
    let mut dv = vec![0.0; spec.len()];
    drift_into(spec, params, &state.x, &state.v, control.values(), &mut dv);
    Ok((state.v.clone(), NodeField(dv)))
}

/// v̇ only; ẋ is v itself.
pub(crate) fn drift_into(
    spec: &LatticeSpec,
    params: &Params,
    x: &[f64],
    v: &[f64],
    u: &[f64],
    dv: &mut [f64],
) {
    spec.laplacian_into(x, dv);
    for ((d, &vl), &ul) in dv.iter_mut().zip(v).zip(u) {
        *d += params.nonlinearity(vl) + ul;
    }
}

/// One classical RK4 step of size `dt`.
///
/// `control_law` is evaluated at each of the four stage times and stage
/// states; every returned field must satisfy |u_l| ≤ M or the step fails.
pub fn step<F>(
    spec: &LatticeSpec,
    params: &Params,
    state: &State,
    control_law: &mut F,
    dt: f64,
) -> Result<State>
where
    F: FnMut(f64, &State) -> Result<ControlField>,
{
    if !(dt > 0.0) {
        return Err(Error::Invalid(format!("step size must be positive, got {dt}")));
    }
    state.check(spec)?;
    let n = spec.len();

    let mut stage = |t: f64, s: &State| -> Result<(Vec<f64>, Vec<f64>)> {
        let u = control_law(t, s)?;
        spec.check(u.values())?;
        u.check_admissible(params.m, t)?;
        let mut dv = vec![0.0; n];
        drift_into(spec, params, &s.x, &s.v, u.values(), &mut dv);
        Ok((s.v.to_vec(), dv))
    };

    let offset = |s: &State, kx: &[f64], kv: &[f64], t: f64, h: f64| State {
        t,
        x: NodeField(s.x.iter().zip(kx).map(|(x, k)| x + h * k).collect()),
        v: NodeField(s.v.iter().zip(kv).map(|(v, k)| v + h * k).collect()),
    };

    let t0 = state.t;
    let half = 0.5 * dt;
    let (k1x, k1v) = stage(t0, state)?;
    let s2 = offset(state, &k1x, &k1v, t0 + half, half);
    let (k2x, k2v) = stage(t0 + half, &s2)?;
    let s3 = offset(state, &k2x, &k2v, t0 + half, half);
    let (k3x, k3v) = stage(t0 + half, &s3)?;
    let s4 = offset(state, &k3x, &k3v, t0 + dt, dt);
    let (k4x, k4v) = stage(t0 + dt, &s4)?;

    let combine = |y: &[f64], a: &[f64], b: &[f64], c: &[f64], d: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| y[i] + dt / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]))
            .collect()
    };

    Ok(State {
        t: t0 + dt,
        x: NodeField(combine(&state.x, &k1x, &k2x, &k3x, &k4x)),
        v: NodeField(combine(&state.v, &k1v, &k2v, &k3v, &k4v)),
    })
}

/// V = ½ Σ_l [ v_l² + ½ Σ_{l'∼l} (x_{l'} − x_l)² / h² ].
pub fn lyapunov(spec: &LatticeSpec, state: &State) -> f64 {
    let inv_h2 = spec.inv_h2();
    let mut total = 0.0;
    for l in 0..spec.len() {
        let xl = state.x[l];
        let coupling: f64 = spec
            .neighbors(l)
            .iter()
            .map(|&nb| {
                let d = state.x[nb] - xl;
                d * d
            })
            .sum();
        total += state.v[l] * state.v[l] + 0.5 * coupling * inv_h2;
    }
    0.5 * total
}

/// dV/dt = Σ_l [ (α − β v_l²) v_l² + u_l v_l ]; the coupling terms cancel
/// over the torus.
pub fn lyapunov_rate(params: &Params, state: &State, control: &ControlField) -> f64 {
    state
        .v
        .iter()
        .zip(control.values())
        .map(|(&v, &u)| params.nonlinearity(v) * v + u * v)
        .sum()
}
