//! Checks that a recorded mission kept every promise: bounded control,
//! decreasing energy during damping, the quantified dissipation rate, the
//! final flock and target compatibility.
//!
//! Every check is a pure function of its inputs, so re-certifying a
//! trajectory read back from disk gives the identical report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::controller::{classify_index, FlockKind, FlockTarget, IndexSet, Phase};
use crate::dynamics::{lyapunov_rate, ControlField, Params, State};
use crate::error::{Error, Result};
use crate::lattice::{format_number, LatticeSpec};
use crate::trajectory::{Sample, Trajectory};

/// Slack on V(t_{k+1}) − V(t_k) during damping.
pub const LYAPUNOV_SLACK: f64 = 1e-8;

/// Slack on the dissipation inequality.
pub const DISSIPATION_SLACK: f64 = 1e-12;

/// Where the worst value of a check was found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub t: Option<f64>,
    pub node: Option<usize>,
    pub value: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub check: String,
    pub passed: bool,
    /// Distance to failure at the worst point; negative when failing.
    pub worst_margin: f64,
    pub worst: Option<Witness>,
    pub checked: usize,
    pub violations: usize,
}

impl CertificateReport {
    fn new(check: &str) -> Self {
        Self {
            check: check.to_string(),
            passed: true,
            worst_margin: f64::INFINITY,
            worst: None,
            checked: 0,
            violations: 0,
        }
    }

    /// Folds in one checked value; fails when `margin` is negative.
    fn observe(&mut self, margin: f64, witness: impl FnOnce() -> Witness) {
        self.observe_if(margin >= 0.0, margin, witness);
    }

    fn observe_if(&mut self, ok: bool, margin: f64, witness: impl FnOnce() -> Witness) {
        self.checked += 1;
        if !ok {
            self.violations += 1;
            self.passed = false;
        }
        let worse = margin < self.worst_margin || (margin.is_nan() && !self.worst_margin.is_nan());
        if self.worst.is_none() || worse {
            self.worst_margin = margin;
            self.worst = Some(witness());
        }
    }

    /// `key: value` lines prefixed with the check name.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let name = &self.check;
        let _ = writeln!(out, "{name}.status: {}", if self.passed { "pass" } else { "fail" });
        let _ = writeln!(out, "{name}.worst_margin: {}", format_number(self.worst_margin));
        let _ = writeln!(out, "{name}.checked: {}", self.checked);
        let _ = writeln!(out, "{name}.violations: {}", self.violations);
        if let Some(w) = &self.worst {
            if let Some(t) = w.t {
                let _ = writeln!(out, "{name}.worst_t: {}", format_number(t));
            }
            if let Some(node) = w.node {
                let _ = writeln!(out, "{name}.worst_node: {node}");
            }
            let _ = writeln!(out, "{name}.worst_value: {}", format_number(w.value));
            let _ = writeln!(out, "{name}.worst_limit: {}", format_number(w.limit));
        }
        out
    }
}

/// Text form of several reports, in order.
pub fn reports_to_text(reports: &[CertificateReport]) -> String {
    reports.iter().map(CertificateReport::to_text).collect()
}

/// |u_l| ≤ M at every recorded sample.
pub fn check_control_bound(trajectory: &Trajectory, m: f64) -> CertificateReport {
    let mut report = CertificateReport::new("control_bound");
    report.worst_margin = m;
    for s in &trajectory.samples {
        for (node, &u) in s.u.iter().enumerate() {
            let margin = m - u.abs();
            report.observe(margin, || Witness {
                t: Some(s.t),
                node: Some(node),
                value: u,
                limit: m,
            });
        }
    }
    report
}

/// V(t_{k+1}) − V(t_k) ≤ slack for every pair of consecutive samples whose
/// first member lies in `window`.
pub fn check_lyapunov_monotone(trajectory: &Trajectory, window: Phase, slack: f64) -> CertificateReport {
    let mut report = CertificateReport::new("lyapunov_monotone");
    report.worst_margin = slack;
    for pair in trajectory.samples.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.phase != window {
            continue;
        }
        let rise = b.lyapunov - a.lyapunov;
        report.observe(slack - rise, || Witness {
            t: Some(b.t),
            node: None,
            value: rise,
            limit: slack,
        });
    }
    report
}

/// (C1, C2) = (a₁(M − (2/(3√3))√(α³/β)), (γ² − 1) α a₂²).
pub fn dissipation_certificate(params: &Params) -> Result<(f64, f64)> {
    let c1 = params.a1 * (params.m - params.cubic_peak());
    let c2 = (params.gamma * params.gamma - 1.0) * params.alpha * params.a2 * params.a2;
    if !(c1 > 0.0) {
        return Err(Error::Params(format!(
            "C1 = {c1} is not positive: M must exceed (2/(3*sqrt(3)))*sqrt(alpha^3/beta)"
        )));
    }
    if !(c2 > 0.0) {
        return Err(Error::Params(format!("C2 = {c2} is not positive: gamma must exceed 1")));
    }
    Ok((c1, c2))
}

/// Upper bound on dV/dt credited by the index sets of `v`.
pub fn dissipation_bound(params: &Params, c1: f64, c2: f64, v: &[f64]) -> f64 {
    v.iter()
        .map(|&vl| match classify_index(params, vl) {
            IndexSet::I2 => -c2,
            IndexSet::I1 => -c1,
            IndexSet::I0 => 0.0,
        })
        .sum()
}

fn sample_state(s: &Sample) -> State {
    State::new(s.t, s.x.clone(), s.v.clone())
}

/// At every damping sample: dV/dt ≤ −#I₂·C2 − #I₁·C1 + slack, and each I₀
/// node contributes a non-positive rate.
pub fn check_dissipation(params: &Params, trajectory: &Trajectory, slack: f64) -> Result<CertificateReport> {
    let (c1, c2) = dissipation_certificate(params)?;
    let mut report = CertificateReport::new("dissipation");
    for s in trajectory.in_phase(Phase::Damp) {
        let state = sample_state(s);
        let u = ControlField::from(s.u.clone());
        let rate = lyapunov_rate(params, &state, &u);
        let bound = dissipation_bound(params, c1, c2, &s.v) + slack;
        report.observe(bound - rate, || Witness {
            t: Some(s.t),
            node: None,
            value: rate,
            limit: bound,
        });
        for (node, (&v, &ul)) in s.v.iter().zip(&s.u).enumerate() {
            if classify_index(params, v) == IndexSet::I0 {
                let own = params.nonlinearity(v) * v + ul * v;
                report.observe(slack - own, || Witness {
                    t: Some(s.t),
                    node: Some(node),
                    value: own,
                    limit: slack,
                });
            }
        }
    }
    Ok(report)
}

/// Outcome of a flock test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlockStatus {
    pub is_flock: bool,
    /// Common velocity the state is closest to (v̄, −v̄ or 0).
    pub group_velocity: f64,
    /// max_l |v_l − group velocity|.
    pub velocity_residual: f64,
    /// Best-fit a in x_l = φ̄(l) + a + v̄ t; only with a target.
    pub offset: Option<f64>,
    /// max_l |x_l − φ̄(l) − a − v̄ t|; only with a target.
    pub shape_residual: Option<f64>,
}

/// Whether `state` is a flock within `tol`.
///
/// Without a target any common velocity in {v̄, −v̄, 0} qualifies. With one
/// the velocity must match the target kind and the positions must equal φ̄
/// up to the best-fit constant offset.
pub fn detect_flock(
    spec: &LatticeSpec,
    params: &Params,
    state: &State,
    target: Option<&FlockTarget>,
    tol: f64,
) -> Result<FlockStatus> {
    state.check(spec)?;
    let deviation = |g: f64| state.v.iter().fold(0.0f64, |m, v| m.max((v - g).abs()));

    let Some(target) = target else {
        let (group_velocity, velocity_residual) = [params.v_bar, -params.v_bar, 0.0]
            .into_iter()
            .map(|g| (g, deviation(g)))
            .fold((0.0, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });
        return Ok(FlockStatus {
            is_flock: velocity_residual < tol,
            group_velocity,
            velocity_residual,
            offset: None,
            shape_residual: None,
        });
    };

    spec.check(&target.phi_bar)?;
    let g = match target.kind {
        FlockKind::Moving => params.v_bar,
        FlockKind::Stationary => 0.0,
    };
    let velocity_residual = deviation(g);
    let rel: Vec<f64> = state
        .x
        .iter()
        .zip(target.phi_bar.iter())
        .map(|(x, phi)| x - phi - g * state.t)
        .collect();
    let offset = rel.iter().sum::<f64>() / rel.len() as f64;
    let shape_residual = rel.iter().fold(0.0f64, |m, r| m.max((r - offset).abs()));
    Ok(FlockStatus {
        is_flock: velocity_residual < tol && shape_residual < tol,
        group_velocity: g,
        velocity_residual,
        offset: Some(offset),
        shape_residual: Some(shape_residual),
    })
}

/// Flock test as a certificate.
pub fn flock_report(status: &FlockStatus, tol: f64, t: f64) -> CertificateReport {
    let mut report = CertificateReport::new("flock");
    let worst = status.velocity_residual.max(status.shape_residual.unwrap_or(0.0));
    report.observe(tol - worst, || Witness {
        t: Some(t),
        node: None,
        value: worst,
        limit: tol,
    });
    if !status.is_flock {
        report.passed = false;
    }
    report
}

/// max_l |−Δφ̄(l)| < M (strict) or ≤ M.
pub fn compatibility_check(spec: &LatticeSpec, m: f64, phi_bar: &[f64], strict: bool) -> Result<CertificateReport> {
    let lap = spec.laplacian(phi_bar)?;
    let mut report = CertificateReport::new(if strict {
        "compatibility_strict"
    } else {
        "compatibility"
    });
    report.worst_margin = m;
    for (node, &d) in lap.iter().enumerate() {
        let margin = m - d.abs();
        let ok = if strict { margin > 0.0 } else { margin >= 0.0 };
        report.observe_if(ok, margin, || Witness {
            t: None,
            node: Some(node),
            value: -d,
            limit: m,
        });
    }
    Ok(report)
}

/// The full certificate set for a recorded mission: control bound, damping
/// monotonicity and dissipation, terminal flock, and target compatibility
/// when there is a target.
pub fn certify_mission(
    spec: &LatticeSpec,
    params: &Params,
    trajectory: &Trajectory,
    target: Option<&FlockTarget>,
    flock_tol: f64,
) -> Result<Vec<CertificateReport>> {
    let mut reports = vec![
        check_control_bound(trajectory, params.m),
        check_lyapunov_monotone(trajectory, Phase::Damp, LYAPUNOV_SLACK),
        check_dissipation(params, trajectory, DISSIPATION_SLACK)?,
    ];
    let last = trajectory
        .last()
        .ok_or_else(|| Error::Invalid("trajectory has no samples".into()))?;
    let final_state = sample_state(last);
    let status = detect_flock(spec, params, &final_state, target, flock_tol)?;
    reports.push(flock_report(&status, flock_tol, last.t));
    if let Some(target) = target {
        reports.push(compatibility_check(spec, params.m, &target.phi_bar, true)?);
    }
    Ok(reports)
}
