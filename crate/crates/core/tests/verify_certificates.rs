use kgflock::controller::{run_mission, FlockKind, FlockTarget, MissionOptions, FLOCK_TOL};
use kgflock::dynamics::{self, lyapunov, ControlField, Params, State};
use kgflock::lattice::{LatticeSpec, NodeField};
use kgflock::trajectory::{Sample, Trajectory};
use kgflock::verify::{
    certify_mission, check_control_bound, check_dissipation, check_lyapunov_monotone, compatibility_check,
    detect_flock, dissipation_certificate, reports_to_text,
};
use kgflock::Phase;
use proptest::prelude::*;

fn sample(spec: &LatticeSpec, s: &State, u: Vec<f64>, phase: Phase) -> Sample {
    Sample {
        t: s.t,
        x: s.x.to_vec(),
        v: s.v.to_vec(),
        u,
        lyapunov: lyapunov(spec, s),
        phase,
    }
}

#[test]
fn uncontrolled_growth_fails_the_monotone_check() {
    // With u = 0 the nonlinearity pumps energy in for |v| < v̄.
    let spec = LatticeSpec::new(1, 4).unwrap();
    let p = Params::new(1.0, 1.0, 1.0).unwrap();
    let mut s = State::new(0.0, vec![0.0; 4], vec![0.1, 0.2, -0.1, 0.05]);
    let mut traj = Trajectory::new(4);
    let mut law = |_: f64, _: &State| Ok(ControlField::zeros(4));
    for _ in 0..200 {
        traj.push(sample(&spec, &s, vec![0.0; 4], Phase::Damp));
        s = dynamics::step(&spec, &p, &s, &mut law, 1e-2).unwrap();
    }
    let report = check_lyapunov_monotone(&traj, Phase::Damp, 1e-8);
    assert!(!report.passed);
    assert!(report.violations > 0);
    assert!(report.worst.is_some());
    // Outside the damping window nothing is checked.
    let report = check_lyapunov_monotone(&traj, Phase::Hold, 1e-8);
    assert!(report.passed && report.checked == 0);
}

#[test]
fn control_bound_catches_a_single_violation() {
    let spec = LatticeSpec::new(1, 2).unwrap();
    let s = State::at_rest(&spec);
    let mut traj = Trajectory::new(2);
    traj.push(sample(&spec, &s, vec![0.5, -1.0], Phase::Damp));
    traj.push(sample(&spec, &s, vec![0.5, -1.0 - 1e-12], Phase::Damp));
    let report = check_control_bound(&traj, 1.0);
    assert!(!report.passed);
    assert_eq!(report.violations, 1);
    let w = report.worst.unwrap();
    assert_eq!(w.node, Some(1));
}

#[test]
fn dissipation_fails_for_a_pushing_control() {
    let spec = LatticeSpec::new(1, 2).unwrap();
    let p = Params::new(1.0, 1.0, 1.0).unwrap();
    let s = State::new(0.0, vec![0.0, 0.0], vec![0.01, -0.01]);
    let mut traj = Trajectory::new(2);
    traj.push(sample(&spec, &s, vec![1.0, -1.0], Phase::Damp));
    assert!(!check_dissipation(&p, &traj, 1e-12).unwrap().passed);
}

#[test]
fn dissipation_constants_by_hand() {
    let p = Params::new(1.0, 1.0, 1.0).unwrap();
    let (c1, c2) = dissipation_certificate(&p).unwrap();
    // γ = 2, a₁ = 1/2, a₂ = 2.
    let peak = 2.0 / (3.0 * 3f64.sqrt());
    assert!((c1 - 0.5 * (1.0 - peak)).abs() < 1e-15);
    assert!((c2 - 3.0 * 4.0).abs() < 1e-12);
}

#[test]
fn mission_certificates_pass_and_round_trip_through_csv() {
    let spec = LatticeSpec::new(1, 4).unwrap();
    let p = Params::new(1.0, 1.0, 1.0).unwrap();
    let phi = NodeField(vec![0.0, 0.01, 0.0, -0.01]);
    let target = FlockTarget::new(&spec, &p, FlockKind::Moving, phi).unwrap();
    let start = State::new(0.0, vec![0.3, -0.2, 0.5, 0.0], vec![1.0, -1.5, 0.2, 0.7]);
    let r = run_mission(&spec, &p, &start, Some(&target), &MissionOptions::default()).unwrap();
    let reports = certify_mission(&spec, &p, &r.trajectory, Some(&target), FLOCK_TOL).unwrap();
    let names: Vec<&str> = reports.iter().map(|r| r.check.as_str()).collect();
    assert_eq!(
        names,
        ["control_bound", "lyapunov_monotone", "dissipation", "flock", "compatibility_strict"]
    );
    assert!(reports.iter().all(|r| r.passed), "{}", reports_to_text(&reports));

    let mut buf = Vec::new();
    r.trajectory.write_csv(&mut buf).unwrap();
    let back = Trajectory::read_csv(&buf[..]).unwrap();
    let again = certify_mission(&spec, &p, &back, Some(&target), FLOCK_TOL).unwrap();
    assert_eq!(reports_to_text(&reports), reports_to_text(&again));
}

#[test]
fn compatibility_distinguishes_strict_and_weak() {
    let spec = LatticeSpec::new(1, 2).unwrap();
    // Δ(c, 0) = (−8c, 8c).
    let phi = [1.0 / 8.0, 0.0];
    assert!(!compatibility_check(&spec, 1.0, &phi, true).unwrap().passed);
    assert!(compatibility_check(&spec, 1.0, &phi, false).unwrap().passed);
}

proptest! {
    #[test]
    fn detect_flock_recovers_offset(
        a in -10.0f64..10.0,
        t in 0.0f64..50.0,
        phi in prop::collection::vec(-0.01f64..0.01, 4),
        moving in any::<bool>(),
    ) {
        let spec = LatticeSpec::new(1, 4).unwrap();
        let p = Params::new(1.0, 1.0, 1.0).unwrap();
        let kind = if moving { FlockKind::Moving } else { FlockKind::Stationary };
        let g = if moving { p.v_bar } else { 0.0 };
        let target = FlockTarget::new(&spec, &p, kind, NodeField(phi.clone())).unwrap();
        let x: Vec<f64> = phi.iter().map(|f| f + a + g * t).collect();
        let s = State::new(t, x, vec![g; 4]);
        let status = detect_flock(&spec, &p, &s, Some(&target), 1e-9).unwrap();
        prop_assert!(status.is_flock);
        prop_assert!((status.offset.unwrap() - a).abs() < 1e-9);

        let mut bent = s.clone();
        bent.x.0[2] += 1e-3;
        prop_assert!(!detect_flock(&spec, &p, &bent, Some(&target), 1e-6).unwrap().is_flock);
    }

    #[test]
    fn detect_flock_without_target_picks_the_nearest_group_velocity(
        v in prop::collection::vec(-1e-8f64..1e-8, 3),
        which in 0usize..3,
    ) {
        let spec = LatticeSpec::new(1, 3).unwrap();
        let p = Params::new(1.0, 1.0, 1.0).unwrap();
        let g = [p.v_bar, -p.v_bar, 0.0][which];
        let s = State::new(0.0, vec![0.0; 3], v.iter().map(|e| g + e).collect::<Vec<_>>());
        let status = detect_flock(&spec, &p, &s, None, 1e-6).unwrap();
        prop_assert!(status.is_flock);
        prop_assert_eq!(status.group_velocity, g);
    }
}
