//! Compares the exponential, logistic and twice-logistic transfer functions
//! on a grid of latent values.

use latent_state::likelihood::{transfer_eval, TransferFunction};

fn main() {
    let transfers = [
        ("exp", TransferFunction::Exponential),
        ("logistic", TransferFunction::Logistic),
        (
            "twice-logistic",
            TransferFunction::TwiceLogistic { kappa: 0.01 },
        ),
    ];
    println!(
        "{:>6} {:>16} {:>16} {:>16}",
        "y", "exp", "logistic", "twice-logistic"
    );
    for y in [-30.0, -5.0, -1.0, 0.0, 1.0, 5.0, 20.0, 60.0] {
        let rates: Vec<f64> = transfers
            .iter()
            .map(|(_, tf)| transfer_eval(*tf, y).lambda)
            .collect();
        println!(
            "{y:>6} {:>16.6e} {:>16.6e} {:>16.6e}",
            rates[0], rates[1], rates[2]
        );
    }

    // Curvature of the Poisson potential at z = 0 is λ''(y). The logistic
    // one vanishes for large y, which leaves the Gaussian fit with a huge
    // variance; the quadratic term keeps it bounded away from zero.
    println!("\ncurvature at z = 0");
    for y in [5.0, 20.0, 40.0] {
        let c: Vec<f64> = transfers[1..]
            .iter()
            .map(|(_, tf)| transfer_eval(*tf, y).d2)
            .collect();
        println!(
            "  y {y:>4}: logistic {:.3e}, twice-logistic {:.3e}",
            c[0], c[1]
        );
    }
}
