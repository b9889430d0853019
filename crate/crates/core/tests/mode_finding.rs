//! Newton mode finding against dense Hessian solves and finite differences.

mod common;

use common::newton::{dense_newton, max_rel, Instance};
use latent_state::issm::{compose, make_level, Bounds, TimeRange};
use latent_state::likelihood::{transfer_eval, Likelihood, TransferFunction, CURVATURE_FLOOR};
use latent_state::mode::{find_mode, LatentPath, ModeOptions, ModeProblem, Observations};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn newton_step_equals_dense_hessian_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..40 {
        let t = rng.random_range(2..=15);
        let inst = Instance::random(&mut rng, t, Likelihood::poisson_twice_logistic(0.01), 0.2);
        let s = inst.random_path(&mut rng, 0.5);
        let (_, next) = inst.problem().newton_step(&s).unwrap();
        let dense = dense_newton(&inst, &s);
        let err = max_rel(&next.to_vec(), dense.as_slice());
        assert!(err < 1e-6, "case {case}: relative error {err:.3e}");
    }
}

#[test]
fn newton_step_for_every_likelihood() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let kinds = [
        Likelihood::Bernoulli,
        Likelihood::Gaussian { variance: 0.5 },
        Likelihood::Poisson {
            transfer: TransferFunction::Exponential,
        },
        Likelihood::Poisson {
            transfer: TransferFunction::Logistic,
        },
    ];
    for lik in kinds {
        for _ in 0..10 {
            let t = rng.random_range(2..=15);
            let inst = Instance::random(&mut rng, t, lik, 0.2);
            let s = inst.random_path(&mut rng, 0.5);
            let (_, next) = inst.problem().newton_step(&s).unwrap();
            let err = max_rel(&next.to_vec(), dense_newton(&inst, &s).as_slice());
            assert!(err < 1e-6, "{lik:?}: {err:.3e}");
        }
    }
}

#[test]
fn curvature_floored_day_is_dropped_from_the_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut inst = Instance::random(&mut rng, 12, Likelihood::Bernoulli, 0.0);
    // σ(y)σ(−y) underflows the floor far in the tail.
    inst.offset[5] = 60.0;
    let s = inst.random_path(&mut rng, 0.3);
    let p = inst.problem();
    let derivs = p.derivs_at(&p.y_of(&s));
    assert!(derivs[5].d2 < CURVATURE_FLOOR);
    let (_, next) = p.newton_step(&s).unwrap();
    let err = max_rel(&next.to_vec(), dense_newton(&inst, &s).as_slice());
    assert!(err < 1e-6, "{err:.3e}");
}

#[test]
fn mode_is_a_stationary_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let opts = ModeOptions {
        rel_tolerance: 0.0,
        step_tolerance: 1e-12,
        ..ModeOptions::default()
    };
    for _ in 0..8 {
        let t = rng.random_range(5..=20);
        let inst = Instance::random(&mut rng, t, Likelihood::poisson_twice_logistic(0.01), 0.1);
        let p = inst.problem();
        let mode = find_mode(&p, &opts).unwrap();
        assert!(mode.converged);
        let s = mode.s_hat.to_vec();
        let f = |v: &[f64]| p.objective(&LatentPath::from_slice(v, t)).unwrap();
        let h = 1e-5;
        for i in 0..s.len() {
            let mut plus = s.clone();
            let mut minus = s.clone();
            plus[i] += h;
            minus[i] -= h;
            let g = (f(&plus) - f(&minus)) / (2.0 * h);
            assert!(
                g.abs() < 1e-7 * mode.f_value.abs().max(1.0),
                "∂F/∂s_{i} = {g:.3e}"
            );
        }
        for _ in 0..100 {
            let pert: Vec<f64> = s.iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
            assert!(f(&pert) >= mode.f_value);
        }
    }
}

#[test]
fn missing_day_target_does_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut inst = Instance::random(&mut rng, 20, Likelihood::poisson_twice_logistic(0.01), 0.0);
    inst.active[7] = false;
    inst.targets[7] = 0.0;
    let s = inst.random_path(&mut rng, 0.5);
    let f0 = inst.problem().objective(&s).unwrap();
    let m0 = find_mode(&inst.problem(), &ModeOptions::default()).unwrap();
    inst.targets[7] = 999.0;
    let f1 = inst.problem().objective(&s).unwrap();
    let m1 = find_mode(&inst.problem(), &ModeOptions::default()).unwrap();
    assert_eq!(f0, f1);
    assert_eq!(m0.f_value, m1.f_value);
    assert_eq!(m0.s_hat, m1.s_hat);
}

#[test]
fn line_search_slope_matches_finite_difference() {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    for _ in 0..10 {
        let t = rng.random_range(5..=20);
        let inst = Instance::random(&mut rng, t, Likelihood::poisson_twice_logistic(0.01), 0.2);
        let p = inst.problem();
        let s = p.initial_point(None).unwrap();
        let (d, _) = p.newton_step(&s).unwrap();
        let f0 = p.objective(&s).unwrap();
        let (_, _, slope) = p.line_search(&s, f0, &d, &ModeOptions::default()).unwrap();
        let at = |a: f64| {
            let v: Vec<f64> = s
                .to_vec()
                .iter()
                .zip(d.to_vec())
                .map(|(x, dx)| x + a * dx)
                .collect();
            p.objective(&LatentPath::from_slice(&v, t)).unwrap()
        };
        let h = 1e-6;
        let fd = (at(h) - at(-h)) / (2.0 * h);
        assert!(slope < 0.0);
        assert!(
            (slope - fd).abs() < 1e-6 * slope.abs().max(1.0),
            "{slope} vs {fd}"
        );
    }
}

#[test]
fn overshooting_direction_is_shortened() {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let inst = Instance::random(&mut rng, 20, Likelihood::poisson_twice_logistic(0.01), 0.0);
    let p = inst.problem();
    let s = p.initial_point(None).unwrap();
    let (d, _) = p.newton_step(&s).unwrap();
    let v: Vec<f64> = d.to_vec().iter().map(|x| 10.0 * x).collect();
    let d10 = LatentPath::from_slice(&v, 20);
    let f0 = p.objective(&s).unwrap();
    let (alpha, f, _) = p
        .line_search(&s, f0, &d10, &ModeOptions::default())
        .unwrap();
    assert!(alpha < 1.0);
    assert!(f < f0);
}

#[test]
fn gaussian_step_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let inst = Instance::random(&mut rng, 15, Likelihood::Gaussian { variance: 0.8 }, 0.2);
    let p = inst.problem();
    let s = inst.random_path(&mut rng, 1.0);
    let (d, next) = p.newton_step(&s).unwrap();
    let f0 = p.objective(&s).unwrap();
    let (alpha, _, _) = p.line_search(&s, f0, &d, &ModeOptions::default()).unwrap();
    assert_eq!(alpha, 1.0);
    let (d2, _) = p.newton_step(&next).unwrap();
    assert!(d2.to_vec().iter().all(|v| v.abs() < 1e-10));
}

#[test]
fn objective_decreases_monotonically() {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    for _ in 0..20 {
        let inst = Instance::random(&mut rng, 60, Likelihood::poisson_twice_logistic(0.01), 0.2);
        let mode = find_mode(&inst.problem(), &ModeOptions::default()).unwrap();
        for w in mode.f_trace.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-11 * w[0].abs().max(1.0),
                "{} -> {}",
                w[0],
                w[1]
            );
        }
    }
}

#[test]
fn initial_point_matches_mean_target() {
    let issm = compose(vec![make_level(Bounds::default()).unwrap()], 0).unwrap();
    let traj = issm.trajectory(&TimeRange::new(0, 30), &[0.4]).unwrap();
    let targets: Vec<f64> = (0..30).map(|i| [2.0, 6.0, 4.0][i % 3]).collect();
    let (active, weights, offset) = (vec![true; 30], vec![1.0; 30], vec![0.0; 30]);
    for transfer in [
        TransferFunction::Exponential,
        TransferFunction::Logistic,
        TransferFunction::TwiceLogistic { kappa: 0.01 },
    ] {
        let p = ModeProblem {
            trajectory: &traj,
            prior_mean: &[0.0],
            prior_sd: &[1.0],
            offset: &offset,
            likelihood: Likelihood::Poisson { transfer },
            obs: Observations {
                targets: &targets,
                active: &active,
                weights: &weights,
            },
        };
        let s = p.initial_point(None).unwrap();
        let y = p.y_of(&s);
        // Bisection for λ(ȳ) = 4.
        let (mut lo, mut hi) = (-20.0, 20.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if transfer_eval(transfer, mid).lambda < 4.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        for yt in y {
            assert!((yt - lo).abs() < 1e-9, "{transfer:?}: {yt} vs {lo}");
        }
    }
}
