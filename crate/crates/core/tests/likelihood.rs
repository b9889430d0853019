//! Likelihood potentials: high-precision reference values, finite-difference
//! checks, log-concavity and sampling moments.

use latent_state::likelihood::{
    transfer_eval, transfer_inverse, Likelihood, TransferFunction, CURVATURE_FLOOR, MAX_KAPPA,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn twice(kappa: f64) -> TransferFunction {
    TransferFunction::TwiceLogistic { kappa }
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-10 * b.abs() + 1e-14 * scale
}

// λ, λ', λ'', λ''' of g(y (1 + κ g(y))) at 60 significant digits.
const TRANSFER_REFERENCE: [(f64, f64, [f64; 4]); 6] = [
    (
        50.0,
        0.01,
        [
            75.00000000000000052,
            2.0000000000000000208,
            0.020000000000000000416,
            -9.0651242875411796948e-23,
        ],
    ),
    (
        30.0,
        0.01,
        [
            39.000000000000028272,
            1.5999999999999728569,
            0.020000000000026231093,
            -2.5311774912550547242e-14,
        ],
    ),
    (
        2.5,
        0.01,
        [
            2.638614302640152899,
            0.97393835473965570423,
            0.091790062265254802738,
            -0.060829052254247573243,
        ],
    ),
    (
        -3.0,
        0.01,
        [
            0.048518270617896724361,
            0.047315694400489755813,
            0.045013324025028701862,
            0.040679982982908995784,
        ],
    ),
    (
        -40.0,
        0.01,
        [
            4.2483542552915889791e-18,
            4.248354255291588963e-18,
            4.2483542552915889311e-18,
            4.2483542552915888675e-18,
        ],
    ),
    (
        10.0,
        0.5,
        [
            60.000226994496084323,
            10.99979571010609626,
            1.000181581169977324,
            -0.00015886471834663847173,
        ],
    ),
];

// φ, φ', φ'', φ''' of the Poisson potential with the twice-logistic rate.
const POTENTIAL_REFERENCE: [(f64, f64, f64, [f64; 4]); 4] = [
    (
        50.0,
        0.01,
        4.0,
        [
            60.90810137620270435,
            1.8933333333333333538,
            0.021777777777777778199,
            -0.000066370370370370370554,
        ],
    ),
    (
        2.5,
        0.01,
        3.0,
        [
            1.5196120898859015099,
            -0.13339099661550382613,
            0.39615449287356355464,
            -0.17783569410984739063,
        ],
    ),
    (
        -3.0,
        0.01,
        2.0,
        [
            6.7932951275907430727,
            -1.9031122082394126868,
            0.091577278441966733471,
            0.082496509062475029144,
        ],
    ),
    (
        30.0,
        0.01,
        0.0,
        [
            39.000000000000028272,
            1.5999999999999728569,
            0.020000000000026231093,
            -2.5311774912550547242e-14,
        ],
    ),
];

#[test]
fn twice_logistic_matches_high_precision_values() {
    for (y, kappa, want) in TRANSFER_REFERENCE {
        let t = transfer_eval(twice(kappa), y);
        let got = [t.lambda, t.d1, t.d2, t.d3];
        let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..4 {
            assert!(
                close(got[k], want[k], scale),
                "y={y} κ={kappa} derivative {k}: {} vs {}",
                got[k],
                want[k]
            );
        }
    }
}

#[test]
fn poisson_potential_matches_high_precision_values() {
    for (y, kappa, z, want) in POTENTIAL_REFERENCE {
        let d = Likelihood::Poisson {
            transfer: twice(kappa),
        }
        .phi_derivs(z, y, 1.0)
        .unwrap();
        let got = [d.phi, d.d1, d.d2, d.d3];
        let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..4 {
            assert!(
                close(got[k], want[k], scale),
                "y={y} z={z} derivative {k}: {} vs {}",
                got[k],
                want[k]
            );
        }
    }
}

#[test]
fn derivatives_match_finite_differences() {
    let kinds = [
        Likelihood::Poisson {
            transfer: TransferFunction::Exponential,
        },
        Likelihood::Poisson {
            transfer: TransferFunction::Logistic,
        },
        Likelihood::poisson_twice_logistic(0.01),
        Likelihood::poisson_twice_logistic(0.3),
        Likelihood::Bernoulli,
        Likelihood::Gaussian { variance: 0.4 },
    ];
    let h = 1e-5;
    for lik in kinds {
        let zs: &[f64] = match lik {
            Likelihood::Bernoulli => &[-1.0, 1.0],
            Likelihood::Gaussian { .. } => &[-1.3, 0.0, 2.2],
            _ => &[0.0, 1.0, 3.0, 12.0],
        };
        for &z in zs {
            for i in 0..=40 {
                let y = -6.0 + 0.3 * i as f64;
                let at = |y: f64| lik.phi_derivs(z, y, 1.0).unwrap();
                let (lo, mid, hi) = (at(y - h), at(y), at(y + h));
                let fd = [
                    (hi.phi - lo.phi) / (2.0 * h),
                    (hi.d1 - lo.d1) / (2.0 * h),
                    (hi.d2 - lo.d2) / (2.0 * h),
                ];
                let an = [mid.d1, mid.d2, mid.d3];
                for k in 0..3 {
                    let tol = 1e-6 * an[k].abs().max(mid.d2.abs()).max(1e-3);
                    assert!(
                        (fd[k] - an[k]).abs() < tol,
                        "{lik:?} z={z} y={y} derivative {}: {} vs {}",
                        k + 1,
                        an[k],
                        fd[k]
                    );
                }
            }
        }
    }
}

#[test]
fn twice_logistic_curvature_stays_bounded() {
    let bounded = Likelihood::poisson_twice_logistic(0.01)
        .gaussianize(0.0, 30.0, 1.0)
        .unwrap();
    assert!(!bounded.missing);
    assert!(bounded.sigma_sq <= 75.0, "{}", bounded.sigma_sq);

    let logistic = Likelihood::Poisson {
        transfer: TransferFunction::Logistic,
    }
    .phi_derivs(0.0, 30.0, 1.0)
    .unwrap();
    assert!(1.0 / logistic.d2 > 1e10);
    // Too flat to fit: the day is dropped from the Gaussian model.
    assert!(logistic.d2 < CURVATURE_FLOOR);
}

fn sample_moments(lik: Likelihood, y: f64, n: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let z = lik.sample(y, &mut rng);
        s += z;
        s2 += z * z;
    }
    let mean = s / n as f64;
    (mean, s2 / n as f64 - mean * mean)
}

#[test]
fn poisson_sample_mean() {
    for transfer in [
        TransferFunction::Exponential,
        TransferFunction::Logistic,
        twice(0.01),
    ] {
        let y = transfer_inverse(transfer, 4.0).unwrap();
        let (mean, var) = sample_moments(Likelihood::Poisson { transfer }, y, 1_000_000, 5);
        assert!((mean - 4.0).abs() < 0.02, "{transfer:?}: mean {mean}");
        assert!((var - 4.0).abs() < 0.05, "{transfer:?}: variance {var}");
    }
}

#[test]
fn gaussian_sample_variance() {
    let (mean, var) = sample_moments(Likelihood::Gaussian { variance: 2.5 }, 1.0, 1_000_000, 6);
    assert!((mean - 1.0).abs() < 0.01);
    assert!((var / 2.5 - 1.0).abs() < 0.03);
}

#[test]
fn bernoulli_saturates() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ones = (0..1_000_000)
        .filter(|_| Likelihood::Bernoulli.sample(50.0, &mut rng) == 1.0)
        .count();
    assert_eq!(ones, 1_000_000);
}

#[test]
fn large_kappa_loses_convexity_and_is_rejected() {
    let lik = Likelihood::poisson_twice_logistic(0.5);
    assert!(lik.phi_derivs(1000.0, -0.25, 1.0).unwrap().d2 < 0.0);
    assert!(lik.validate().is_err());
    assert!(Likelihood::poisson_twice_logistic(MAX_KAPPA)
        .validate()
        .is_ok());
    // The bound sits just below the point where the log rate turns convex.
    let edge = Likelihood::poisson_twice_logistic(0.30);
    for i in 0..=2000 {
        let y = -10.0 + 0.01 * i as f64;
        assert!(edge.phi_derivs(1e6, y, 1.0).unwrap().d2 > 0.0, "y={y}");
    }
}

fn likelihoods() -> impl Strategy<Value = Likelihood> {
    prop_oneof![
        Just(Likelihood::Bernoulli),
        (0.01f64..10.0).prop_map(|variance| Likelihood::Gaussian { variance }),
        Just(Likelihood::Poisson {
            transfer: TransferFunction::Exponential
        }),
        Just(Likelihood::Poisson {
            transfer: TransferFunction::Logistic
        }),
        (0.0f64..=MAX_KAPPA).prop_map(Likelihood::poisson_twice_logistic),
    ]
}

fn target(lik: Likelihood, u: f64) -> f64 {
    match lik {
        Likelihood::Bernoulli => {
            if u < 0.5 {
                -1.0
            } else {
                1.0
            }
        }
        Likelihood::Gaussian { .. } => 20.0 * u - 10.0,
        Likelihood::Poisson { .. } => (u * 40.0).floor(),
    }
}

proptest! {
    #[test]
    fn potentials_are_log_concave(lik in likelihoods(), u in 0.0f64..1.0, y in -50.0f64..50.0) {
        let z = target(lik, u);
        let d = lik.phi_derivs(z, y, 1.0).unwrap();
        prop_assert!(d.d2 >= 0.0, "φ'' = {}", d.d2);
        prop_assert!(d.phi.is_finite() && d.d1.is_finite() && d.d2.is_finite() && d.d3.is_finite());
        if y.abs() < 20.0 {
            prop_assert!(d.d2 > 0.0);
        }
    }

    #[test]
    fn gaussianized_fit_is_tangent(lik in likelihoods(), u in 0.0f64..1.0, y in -20.0f64..20.0, w in 0.1f64..1.0) {
        let z = target(lik, u);
        let d = lik.phi_derivs(z, y, w).unwrap();
        let g = lik.gaussianize(z, y, w).unwrap();
        if !g.missing {
            // The Gaussian potential (y − z̃)² / 2σ² has the same slope and
            // curvature at y.
            prop_assert!(((y - g.z_tilde) / g.sigma_sq - d.d1).abs() <= 1e-9 * d.d1.abs().max(1.0));
            prop_assert!((1.0 / g.sigma_sq - d.d2).abs() <= 1e-12 * d.d2);
        }
    }

    #[test]
    fn weights_scale_the_potential(lik in likelihoods(), u in 0.0f64..1.0, y in -20.0f64..20.0, w in 0.0f64..1.0) {
        let z = target(lik, u);
        let full = lik.phi_derivs(z, y, 1.0).unwrap();
        let part = lik.phi_derivs(z, y, w).unwrap();
        prop_assert_eq!(part.d2, w * full.d2);
        prop_assert_eq!(part.d1, w * full.d1);
    }
}
