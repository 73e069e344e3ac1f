//! Central finite-difference verification of the backward pass.
//!
//! Always run in `f64`: the comparison tolerance of 1e-5 is unreachable in
//! single precision. The relative error per coordinate is
//! `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.

use super::{backward, Result, Tensor};

/// Max relative error between the analytic gradient of `f` at `x` and a
/// central finite difference, over every coordinate of `x`.
pub fn finite_diff_check<G>(f: G, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    G: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    finite_diff_check_sampled(f, x, eps, &coords)
}

/// Same as [`finite_diff_check`] restricted to the given coordinates; used
/// for large parameter tensors where perturbing every entry is wasteful.
pub fn finite_diff_check_sampled<G>(
    f: G,
    x: &Tensor<f64>,
    eps: f64,
    coords: &[usize],
) -> Result<f64>
where
    G: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    let tracked = x.tracked();
    let loss = f(&tracked)?;
    let grads = backward(&loss)?;
    let analytic = grads.get_or_zeros(&tracked);

    let mut worst = 0.0f64;
    for &i in coords {
        let mut plus = x.data().to_vec();
        let mut minus = x.data().to_vec();
        plus[i] += eps;
        minus[i] -= eps;
        let fp = f(&Tensor::from_vec(x.shape(), plus)?)?.item();
        let fm = f(&Tensor::from_vec(x.shape(), minus)?)?.item();
        let numeric = (fp - fm) / (2.0 * eps);
        worst = worst.max(max_relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Relative error metric used throughout the gradient checks.
pub fn max_relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_to_eps_squared() {
        let x = Tensor::from_vec(&[4], vec![0.3, -1.2, 2.0, 0.01]).unwrap();
        let err = finite_diff_check(|x| Ok(x.mul(x)?.sum_all()), &x, 1e-5).unwrap();
        assert!(err < 1e-9, "sum of squares error {err}");
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let err = finite_diff_check(|_| Ok(Tensor::scalar(5.0)), &x, 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn sign_flipped_gradient_is_caught() {
        // the checker must flag a corrupted analytic gradient
        let analytic = -2.0; // true derivative of x^2 at x=1 is 2
        let numeric = 2.0;
        assert!(max_relative_error(analytic, numeric) > 0.5);
    }
}
