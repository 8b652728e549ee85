//! Gamma-family special functions used by the Dirichlet KL term.

pub use statrs::function::gamma::{digamma, ln_gamma};

/// Derivative of the digamma function, for `x > 0`.
///
/// Shifts the argument above 12 with `ψ₁(x) = ψ₁(x + 1) + 1/x²`, then uses the
/// asymptotic expansion in `1/x`.
pub fn trigamma(x: f64) -> f64 {
    if x.is_nan() || x <= 0.0 {
        return f64::NAN;
    }
    let mut acc = 0.0;
    let mut z = x;
    while z < 12.0 {
        acc += 1.0 / (z * z);
        z += 1.0;
    }
    let r = 1.0 / z;
    let r2 = r * r;
    // 1/z + 1/(2z²) + Σ B_{2k} / z^{2k+1}
    let tail = r2 * r
        * (1.0 / 6.0
            - r2 * (1.0 / 30.0 - r2 * (1.0 / 42.0 - r2 * (1.0 / 30.0 - r2 * (5.0 / 66.0)))));
    acc + r + 0.5 * r2 + tail
}
