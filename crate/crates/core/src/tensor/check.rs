use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Largest per-coordinate relative error between the tape gradient of `f` at
/// `x` and a central difference with step `h`:
/// `max_i |g_i - fd_i| / (|fd_i| + 1e-8)`.
///
/// `f` receives a fresh tape and the input leaf and must return a scalar node.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::Contract(format!("finite difference step must be positive, got {h}")));
    }
    let mut tape = Tape::new();
    let leaf = tape.param(x.clone());
    let out = f(&mut tape, leaf)?;
    let analytic = tape.backward(out)?.get_or_zeros(leaf, x.len());

    let eval = |probe: Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let leaf = t.constant(probe);
        let out = f(&mut t, leaf)?;
        Ok(t.scalar_value(out))
    };

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.values_mut()[i] += h;
        let mut minus = x.clone();
        minus.values_mut()[i] -= h;
        let fd = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let err = (analytic[i] - fd).abs() / (fd.abs() + 1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let err = finite_diff_check(
            |t, x| t.mul(x, x),
            &Tensor::scalar(3.0),
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // ln with a floor above the input: analytic gradient is zero, the
        // central difference straddling the floor is not.
        let err = finite_diff_check(|t, x| Ok(t.ln(x, 1.0)), &Tensor::scalar(1.0), 1e-3).unwrap();
        assert!(err > 1e-2);
    }

    #[test]
    fn rejects_bad_step() {
        assert!(finite_diff_check(|t, x| t.mul(x, x), &Tensor::scalar(1.0), 0.0).is_err());
    }
}
