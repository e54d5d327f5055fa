use kgflock::dynamics::{self, cubic_peak, drift, lyapunov, lyapunov_rate, ControlField, Params, State};
use kgflock::lattice::LatticeSpec;
use proptest::prelude::*;

fn specs() -> impl Strategy<Value = LatticeSpec> {
    prop_oneof![
        (1usize..=8).prop_map(|d| LatticeSpec::new(1, d).unwrap()),
        (1usize..=4).prop_map(|d| LatticeSpec::new(2, d).unwrap()),
        (1usize..=2).prop_map(|d| LatticeSpec::new(3, d).unwrap()),
    ]
}

fn spec_and_fields() -> impl Strategy<Value = (LatticeSpec, Vec<f64>, Vec<f64>)> {
    specs().prop_flat_map(|s| {
        let n = s.len();
        (
            Just(s),
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(-5.0f64..5.0, n),
        )
    })
}

/// Laplacian straight from the definition: walk ±e_k on the index torus.
fn laplacian_oracle(spec: &LatticeSpec, f: &[f64]) -> Vec<f64> {
    let d = spec.side();
    (0..spec.len())
        .map(|l| {
            let c = spec.coords(l);
            let mut sum = 0.0;
            for k in 0..spec.dim() {
                for step in [1, d - 1] {
                    let mut nb = c.clone();
                    nb[k] = (nb[k] + step) % d;
                    sum += f[spec.index(&nb)] - f[l];
                }
            }
            sum * (d * d) as f64
        })
        .collect()
}

proptest! {
    #[test]
    fn laplacian_matches_definition((spec, f, _) in spec_and_fields()) {
        let got = spec.laplacian(&f).unwrap();
        for (a, b) in got.iter().zip(laplacian_oracle(&spec, &f)) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn laplacian_sums_to_zero((spec, f, _) in spec_and_fields()) {
        let lap = spec.laplacian(&f).unwrap();
        let scale: f64 = lap.iter().map(|x| x.abs()).sum::<f64>() + 1.0;
        prop_assert!(lap.iter().sum::<f64>().abs() <= 1e-12 * scale);
    }

    #[test]
    fn laplacian_is_linear((spec, f, g) in spec_and_fields(), a in -3.0f64..3.0) {
        let mix: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + y).collect();
        let lf = spec.laplacian(&f).unwrap();
        let lg = spec.laplacian(&g).unwrap();
        let lm = spec.laplacian(&mix).unwrap();
        for l in 0..spec.len() {
            let expect = a * lf[l] + lg[l];
            prop_assert!((lm[l] - expect).abs() <= 1e-9 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn laplacian_ignores_constants((spec, f, _) in spec_and_fields(), c in -10.0f64..10.0) {
        let shifted: Vec<f64> = f.iter().map(|x| x + c).collect();
        let a = spec.laplacian(&f).unwrap();
        let b = spec.laplacian(&shifted).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn laplacian_is_self_adjoint((spec, f, g) in spec_and_fields()) {
        let lf = spec.laplacian(&f).unwrap();
        let lg = spec.laplacian(&g).unwrap();
        let a: f64 = lf.iter().zip(&g).map(|(x, y)| x * y).sum();
        let b: f64 = f.iter().zip(lg.iter()).map(|(x, y)| x * y).sum();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn drift_is_odd((spec, x, v) in spec_and_fields(), seed in prop::collection::vec(-1.0f64..1.0, 64)) {
        let params = Params::new(1.0, 1.0, 1.0).unwrap();
        let u: Vec<f64> = (0..spec.len()).map(|l| seed[l % seed.len()]).collect();
        let s = State::new(0.0, x, v);
        let (dx, dv) = drift(&spec, &params, &s, &ControlField::from(u.clone())).unwrap();
        let neg_u: Vec<f64> = u.iter().map(|w| -w).collect();
        let (nx, nv) = drift(&spec, &params, &s.negated(), &ControlField::from(neg_u)).unwrap();
        for l in 0..spec.len() {
            prop_assert_eq!(dx[l], -nx[l]);
            prop_assert!((dv[l] + nv[l]).abs() <= 1e-12 * (1.0 + dv[l].abs()));
        }
    }

    #[test]
    fn uncontrolled_energy_rate_matches_difference((spec, x, v) in spec_and_fields()) {
        // dV/dt from the closed form against a centred difference along RK4.
        let params = Params::new(0.5, 2.0, 1.0).unwrap();
        let v: Vec<f64> = v.iter().map(|w| 0.2 * w).collect();
        let s = State::new(0.0, x, v);
        let zero = ControlField::zeros(spec.len());
        let h = 1e-4;
        let mut law = |_: f64, _: &State| Ok(ControlField::zeros(spec.len()));
        let fwd = dynamics::step(&spec, &params, &s, &mut law, h).unwrap();
        // Backward step: (x, -v) under (-α, -β) is the time-reversed system.
        let rev = State::new(0.0, s.x.clone(), s.v.iter().map(|w| -w).collect::<Vec<_>>());
        let mut back_law = |_: f64, _: &State| Ok(ControlField::zeros(spec.len()));
        let bwd = dynamics::step(&spec, &Params::unchecked(-params.alpha, -params.beta, 1.0, 2.0), &rev, &mut back_law, h).unwrap();
        let bwd = State::new(0.0, bwd.x, bwd.v.iter().map(|w| -w).collect::<Vec<_>>());
        let numeric = (lyapunov(&spec, &fwd) - lyapunov(&spec, &bwd)) / (2.0 * h);
        let exact = lyapunov_rate(&params, &s, &zero);
        let scale = 1.0 + lyapunov(&spec, &s);
        prop_assert!((numeric - exact).abs() <= 1e-5 * scale, "numeric {} exact {}", numeric, exact);
    }
}

#[test]
fn neighbour_multiplicity_is_kept_on_small_sides() {
    // D = 1: all 2n neighbours are the node itself.
    let one = LatticeSpec::new(2, 1).unwrap();
    assert_eq!(one.neighbors(0), &[0, 0, 0, 0]);
    // D = 2: each neighbour appears twice per axis.
    let two = LatticeSpec::new(1, 2).unwrap();
    assert_eq!(two.neighbors(0), &[1, 1]);
    let lap = two.laplacian(&[0.0, 1.0]).unwrap();
    assert_eq!(lap.0, vec![8.0, -8.0]);
}

#[test]
fn cubic_peak_matches_calculus() {
    for (alpha, beta) in [(1.0f64, 1.0f64), (2.0, 0.5), (0.3, 4.0)] {
        let v = (alpha / (3.0 * beta)).sqrt();
        let f = |w: f64| (alpha - beta * w * w) * w;
        assert!((cubic_peak(alpha, beta) - f(v)).abs() < 1e-14);
        // f'(v*) = 0 and f''(v*) < 0.
        let e = 1e-5;
        assert!(((f(v + e) - f(v - e)) / (2.0 * e)).abs() < 1e-8);
        assert!(f(v + e) < f(v) && f(v - e) < f(v));
    }
}

#[test]
fn params_reject_budget_at_the_threshold() {
    let peak = cubic_peak(1.0, 1.0);
    assert!(Params::new(1.0, 1.0, peak).is_err());
    assert!(Params::new(1.0, 1.0, 0.5 * peak).is_err());
    assert!(Params::new(1.0, 1.0, 1.001 * peak).is_ok());
}

#[test]
fn derived_constants() {
    let p = Params::new(4.0, 1.0, 4.0).unwrap();
    // γ = 2 max{1, √(α³/β)/M} = 2·2.
    assert!((p.gamma - 4.0).abs() < 1e-12);
    assert!((p.v_bar - 2.0).abs() < 1e-12);
    assert!((p.a1 - 0.5).abs() < 1e-12);
    assert!((p.a2 - 8.0).abs() < 1e-12);
    let q = Params::new(1.0, 1.0, 5.0).unwrap();
    assert!((q.gamma - 2.0).abs() < 1e-12);
}

#[test]
fn inadmissible_stage_control_fails_the_step() {
    let spec = LatticeSpec::new(1, 4).unwrap();
    let params = Params::new(1.0, 1.0, 1.0).unwrap();
    let s = State::at_rest(&spec);
    let mut calls = 0;
    let mut law = |_: f64, _: &State| {
        calls += 1;
        let u = if calls == 3 { 1.5 } else { 0.5 };
        Ok(ControlField::from(vec![u; 4]))
    };
    let err = dynamics::step(&spec, &params, &s, &mut law, 0.1).unwrap_err();
    assert!(matches!(err, kgflock::Error::Admissibility { .. }), "{err}");
}

#[test]
fn rk4_is_fourth_order_on_the_free_lattice() {
    // ẍ = Δx with a single Fourier mode has the exact solution
    // x = cos(ωt) sin(2πk l/D), ω² = 4D² sin²(πk/D).
    let d = 8;
    let spec = LatticeSpec::new(1, d).unwrap();
    let free = Params::unchecked(0.0, 0.0, 1.0, 2.0);
    let k = 1.0;
    let omega = 2.0 * d as f64 * (std::f64::consts::PI * k / d as f64).sin();
    let mode: Vec<f64> = (0..d)
        .map(|l| (2.0 * std::f64::consts::PI * k * l as f64 / d as f64).sin())
        .collect();
    let t_end = 1.0;
    let err = |dt: f64| {
        let mut s = State::new(0.0, mode.clone(), vec![0.0; d]);
        let mut law = |_: f64, _: &State| Ok(ControlField::zeros(d));
        let steps = (t_end / dt).round() as usize;
        for _ in 0..steps {
            s = dynamics::step(&spec, &free, &s, &mut law, dt).unwrap();
        }
        (0..d)
            .map(|l| (s.x[l] - (omega * t_end).cos() * mode[l]).abs())
            .fold(0.0f64, f64::max)
    };
    let e1 = err(0.02);
    let e2 = err(0.01);
    let order = (e1 / e2).log2();
    assert!(order > 3.9, "order {order}, errors {e1} {e2}");
}
