//! Reference distributions for pooled-effect inference.
//!
//! Degrees of freedom are carried as `f64`; `f64::INFINITY` selects the
//! standard normal, which is what the conventional (Wald) variance uses.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal parameters are valid")
}

/// CDF of the t distribution with `df` degrees of freedom (normal when infinite).
pub fn cdf(x: f64, df: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    if df.is_infinite() {
        std_normal().cdf(x)
    } else {
        StudentsT::new(0.0, 1.0, df)
            .expect("degrees of freedom must be positive")
            .cdf(x)
    }
}

/// Upper tail `1 - cdf(x)`, computed without cancellation for large `x`.
pub fn sf(x: f64, df: f64) -> f64 {
    cdf(-x, df)
}

/// Quantile function, polished with Newton steps so that `cdf(quantile(p)) == p`
/// to within a few ulps of the CDF implementation.
pub fn quantile(p: f64, df: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "probability {p} outside [0, 1]");
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    if df.is_infinite() {
        let n = std_normal();
        let mut x = n.inverse_cdf(p);
        for _ in 0..3 {
            let step = (n.cdf(x) - p) / statrs::distribution::Continuous::pdf(&n, x);
            if !step.is_finite() || step.abs() < 1e-17 {
                break;
            }
            x -= step;
        }
        return x;
    }
    let t = StudentsT::new(0.0, 1.0, df).expect("degrees of freedom must be positive");
    let mut x = t.inverse_cdf(p);
    for _ in 0..4 {
        let dens = statrs::distribution::Continuous::pdf(&t, x);
        let step = (t.cdf(x) - p) / dens;
        if !step.is_finite() || step.abs() <= 1e-16 * x.abs().max(1.0) {
            break;
        }
        x -= step;
    }
    x
}

pub fn normal_cdf(x: f64) -> f64 {
    cdf(x, f64::INFINITY)
}

pub fn normal_quantile(p: f64) -> f64 {
    quantile(p, f64::INFINITY)
}
