use kgflock::controller::{
    choose_horizon, horizon_lhs, phase1_control, phase1_control_simple, rendezvous_control, rendezvous_point,
    run_mission, ControlVariant, CubicBlend, FlockKind, FlockTarget, HorizonCondition, HorizonOptions,
    MissionOptions, PhaseSchedule, YBarRule,
};
use kgflock::dynamics::{Params, State};
use kgflock::lattice::{LatticeSpec, NodeField};
use kgflock::verify::detect_flock;
use kgflock::{Error, Phase};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn params() -> impl Strategy<Value = Params> {
    (0.2f64..4.0, 0.2f64..4.0, 1.01f64..3.0).prop_map(|(a, b, k)| {
        let m = k * kgflock::dynamics::cubic_peak(a, b);
        Params::new(a, b, m).unwrap()
    })
}

fn random_state(spec: &LatticeSpec, seed: u64, amplitude: f64) -> State {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || (0..spec.len()).map(|_| rng.gen_range(-amplitude..=amplitude)).collect::<Vec<_>>();
    let x = draw();
    let v = draw();
    State::new(0.0, x, v)
}

proptest! {
    #[test]
    fn damping_laws_are_admissible_and_dissipative(p in params(), v in -50.0f64..50.0) {
        for u in [phase1_control(&p, v), phase1_control_simple(&p, v)] {
            prop_assert!(u.abs() <= p.m);
            prop_assert!(u * v <= 0.0);
        }
        prop_assert_eq!(phase1_control(&p, -v), -phase1_control(&p, v));
    }

    #[test]
    fn damping_law_is_continuous(p in params(), v in -20.0f64..20.0) {
        let e = 1e-9 * (1.0 + p.a2);
        let jump = (phase1_control(&p, v + e) - phase1_control(&p, v)).abs();
        prop_assert!(jump <= 1e-6 * p.m * (1.0 + 1.0 / p.a1), "jump {} at {}", jump, v);
    }

    #[test]
    fn cubic_blend_is_consistent(
        start in 0.0f64..10.0,
        tau in 0.1f64..20.0,
        cruise in -2.0f64..2.0,
        d in -5.0f64..5.0,
        origin in -5.0f64..5.0,
        s in 0.01f64..0.99,
    ) {
        let b = CubicBlend { start, end: start + tau, cruise };
        let t = start + s * tau;
        let h = 1e-5 * tau;
        let dpos = (b.position(origin, d, t + h) - b.position(origin, d, t - h)) / (2.0 * h);
        prop_assert!((dpos - b.velocity(d, t)).abs() <= 1e-6 * (1.0 + d.abs() / tau));
        let dvel = (b.velocity(d, t + h) - b.velocity(d, t - h)) / (2.0 * h);
        prop_assert!((dvel - b.acceleration(d, t)).abs() <= 1e-5 * (1.0 + d.abs() / (tau * tau)));
        prop_assert!((b.position(origin, d, b.end) - (origin + tau * cruise + d)).abs() <= 1e-9 * (1.0 + d.abs() + tau));
        prop_assert!((b.velocity(d, b.start) - cruise).abs() <= 1e-12);
        prop_assert!((b.velocity(d, b.end) - cruise).abs() <= 1e-9);
    }

    #[test]
    fn horizon_is_feasible_and_nearly_minimal(p in params(), ds in prop::collection::vec(-3.0f64..3.0, 1..6), start in 0.0f64..30.0) {
        let opts = HorizonOptions::default();
        let eps = 0.01 * p.m;
        let end = choose_horizon(HorizonCondition::Rendezvous { epsilon: eps }, &ds, &p, start, &opts).unwrap();
        let rhs = opts.margin * (p.m - eps);
        for &d in &ds {
            prop_assert!(horizon_lhs(p.alpha, p.beta, d, start, end) < rhs);
        }
        let tau = end - start;
        if tau > opts.floor * (1.0 + 1e-9) {
            let shorter = start + tau * (1.0 - 1e-4);
            prop_assert!(ds.iter().any(|&d| horizon_lhs(p.alpha, p.beta, d, start, shorter) >= rhs));
        }
    }
}

/// The blend law evaluated along its own exact trajectory, against the
/// control written out term by term:
///   u = −(1 + 2σ³ − 3σ²)Δφ + 12α d q/τ³ + 108√(αβ) d² q²/τ⁶ + 216β d³ q³/τ⁹ + 6d(T3 + T2 − 2t)/τ³
/// with σ = (t − T2)/τ, q = (t − T2)(T3 − t), d = ȳ − φ(l).
#[test]
fn rendezvous_law_matches_expanded_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..20 {
        let spec = LatticeSpec::new(1 + case % 2, 3).unwrap();
        let alpha = rng.gen_range(0.3..3.0);
        let beta = rng.gen_range(0.3..3.0);
        let p = Params::new(alpha, beta, 1.5 * kgflock::dynamics::cubic_peak(alpha, beta)).unwrap();
        let phi: Vec<f64> = (0..spec.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t2 = rng.gen_range(1.0..30.0);
        let tau = rng.gen_range(1.0..20.0);
        let t3 = t2 + tau;
        let y_bar = phi.iter().sum::<f64>() / phi.len() as f64;

        let mut sched = PhaseSchedule::new(0.01, p.v_bar);
        sched.t2 = Some(t2);
        sched.t3 = Some(t3);
        sched.y_bar = Some(y_bar);
        sched.snapshot_t2 = Some(State::new(t2, phi.clone(), vec![p.v_bar; spec.len()]));

        let lap_phi = spec.laplacian(&phi).unwrap();
        for k in 1..10 {
            let t = t2 + tau * k as f64 / 10.0;
            let sigma = (t - t2) / tau;
            let q = (t - t2) * (t3 - t);
            let x: Vec<f64> = phi
                .iter()
                .map(|f| f + (t - t2) * p.v_bar + (3.0 * sigma * sigma - 2.0 * sigma.powi(3)) * (y_bar - f))
                .collect();
            let v: Vec<f64> = phi.iter().map(|f| p.v_bar + 6.0 * (y_bar - f) * q / tau.powi(3)).collect();
            let u = rendezvous_control(&spec, &p, &sched, &State::new(t, x, v), t).unwrap();
            for l in 0..spec.len() {
                let d = y_bar - phi[l];
                let expanded = -(1.0 + 2.0 * sigma.powi(3) - 3.0 * sigma * sigma) * lap_phi[l]
                    + 12.0 * alpha * d * q / tau.powi(3)
                    + 108.0 * (alpha * beta).sqrt() * d * d * q * q / tau.powi(6)
                    + 216.0 * beta * d.powi(3) * q.powi(3) / tau.powi(9)
                    + 6.0 * d * (t3 + t2 - 2.0 * t) / tau.powi(3);
                let got = u.values()[l];
                assert!(
                    (got - expanded).abs() <= 1e-9 * (1.0 + expanded.abs()),
                    "case {case} t {t} node {l}: {got} vs {expanded}"
                );
            }
        }
    }
}

#[test]
fn minimax_point_minimises_largest_displacement() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let xs: Vec<f64> = (0..7).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let worst = |y: f64| xs.iter().fold(0.0f64, |m, x| m.max((x - y).abs()));
        let mm = worst(rendezvous_point(&xs, YBarRule::Minimax));
        assert!(mm <= worst(rendezvous_point(&xs, YBarRule::Mean)) + 1e-15);
        for k in 0..=100 {
            assert!(mm <= worst(-4.0 + 0.08 * k as f64) + 1e-15);
        }
    }
}

#[test]
fn target_must_be_strictly_compatible() {
    let spec = LatticeSpec::new(1, 4).unwrap();
    let p = Params::new(1.0, 1.0, 1.0).unwrap();
    // Δφ at node 0 for φ = (c, 0, 0, 0) is −2c·16.
    let at = |c: f64| NodeField(vec![c, 0.0, 0.0, 0.0]);
    assert!(FlockTarget::new(&spec, &p, FlockKind::Moving, at(0.99 / 32.0)).is_ok());
    let err = FlockTarget::new(&spec, &p, FlockKind::Moving, at(1.0 / 32.0)).unwrap_err();
    assert!(matches!(err, Error::Compatibility { node: 0, .. }), "{err}");
}

#[test]
fn missions_reach_flocks_on_small_lattices() {
    let p = Params::new(1.0, 1.0, 1.0).unwrap();
    let opts = MissionOptions::default();
    for (n, d, seed) in [(1, 2, 1), (1, 4, 2), (2, 2, 3), (2, 3, 4)] {
        let spec = LatticeSpec::new(n, d).unwrap();
        let start = random_state(&spec, seed, 1.0);
        let r = run_mission(&spec, &p, &start, None, &opts).unwrap();
        let at_t2 = r.flock_state().unwrap();
        let status = detect_flock(&spec, &p, at_t2, None, 1e-6).unwrap();
        assert!(status.is_flock, "n={n} D={d}: {status:?}");
        assert!(r.max_control <= p.m);

        let eps = r.schedule.epsilon;
        let a = r.schedule.snapshot_t0.as_ref().unwrap();
        let b = r.schedule.snapshot_t1.as_ref().unwrap();
        for l in 0..spec.len() {
            assert!((b.x[l] - a.x[l]).abs() < 2.0 * eps);
            assert!(b.v[l].abs() < 1e-12, "node {l} not at rest at T1");
        }
    }
}

#[test]
fn stationary_mission_on_a_square_lattice() {
    let spec = LatticeSpec::new(2, 3).unwrap();
    let p = Params::new(1.0, 1.0, 1.0).unwrap();
    let phi: Vec<f64> = (0..spec.len()).map(|l| 0.005 * ((l * 7 % 5) as f64 - 2.0)).collect();
    let target = FlockTarget::new(&spec, &p, FlockKind::Stationary, NodeField(phi)).unwrap();
    let r = run_mission(&spec, &p, &random_state(&spec, 9, 1.0), Some(&target), &MissionOptions::default()).unwrap();
    assert!(r.flock.is_flock, "{:?}", r.flock);
    assert!(r.max_control <= p.m);
    let phases: Vec<Phase> = r.trajectory.samples.iter().map(|s| s.phase).collect();
    assert!(!phases.contains(&Phase::Accelerate));
    assert!(phases.contains(&Phase::Retarget));
}

#[test]
fn simple_variant_also_damps() {
    let spec = LatticeSpec::new(1, 4).unwrap();
    let p = Params::new(1.0, 1.0, 1.0).unwrap();
    let opts = MissionOptions {
        variant: ControlVariant::Simple,
        ..MissionOptions::default()
    };
    let r = run_mission(&spec, &p, &random_state(&spec, 5, 2.0), None, &opts).unwrap();
    assert!(r.flock.is_flock);
    let damp = r.lyapunov_ranges[&Phase::Damp];
    assert!(damp.min < damp.max);
}

#[test]
fn translating_initial_data_translates_the_free_mission() {
    let spec = LatticeSpec::new(1, 4).unwrap();
    let p = Params::new(1.0, 1.0, 1.0).unwrap();
    let start = random_state(&spec, 21, 1.5);
    let moved = State::new(0.0, start.x.iter().map(|x| x - 3.25).collect::<Vec<_>>(), start.v.clone());
    let opts = MissionOptions::default();
    let a = run_mission(&spec, &p, &start, None, &opts).unwrap();
    let b = run_mission(&spec, &p, &moved, None, &opts).unwrap();
    assert_eq!(a.trajectory.len(), b.trajectory.len());
    for ((na, ta), (nb, tb)) in a.schedule.markers().into_iter().zip(b.schedule.markers()) {
        assert_eq!(na, nb);
        assert!((ta - tb).abs() < 1e-10);
    }
    for (s, t) in a.trajectory.samples.iter().zip(&b.trajectory.samples) {
        for l in 0..spec.len() {
            assert!((s.x[l] - 3.25 - t.x[l]).abs() < 1e-10);
            assert!((s.v[l] - t.v[l]).abs() < 1e-10);
        }
    }
}

#[test]
fn too_short_timeout_is_reported() {
    let spec = LatticeSpec::new(1, 4).unwrap();
    let p = Params::new(1.0, 1.0, 1.0).unwrap();
    let opts = MissionOptions {
        phase1_timeout: 0.5,
        ..MissionOptions::default()
    };
    let err = run_mission(&spec, &p, &random_state(&spec, 1, 2.0), None, &opts).unwrap_err();
    assert!(matches!(err, Error::Phase1Timeout { .. }), "{err}");
}
