//! Central finite-difference gradient verification.
//!
//! The oracle side never touches the backward pass: it re-evaluates the
//! forward function at perturbed inputs under [`no_grad`].

use super::{no_grad, Tensor};

/// Max relative error between reverse-mode and central-difference
/// gradients of a scalar-valued function at `x`.
///
/// Relative error per coordinate is
/// `|autodiff - central| / (|central| + 1e-8)`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> f64
where
    F: Fn(&Tensor<f64>) -> Tensor<f64>,
{
    grad_check_multi(|xs| f(&xs[0]), std::slice::from_ref(x), eps)
}

/// [`grad_check`] over several independent inputs at once; returns the
/// worst error across all coordinates of all inputs.
pub fn grad_check_multi<F>(f: F, xs: &[Tensor<f64>], eps: f64) -> f64
where
    F: Fn(&[Tensor<f64>]) -> Tensor<f64>,
{
    let tracked: Vec<Tensor<f64>> = xs.iter().map(|x| x.detach().tracked()).collect();
    let out = f(&tracked);
    assert_eq!(out.numel(), 1, "grad_check needs a scalar-valued function");
    let grads = out.backward().expect("scalar backward");

    let mut worst: f64 = 0.0;
    for (slot, x) in tracked.iter().enumerate() {
        let ad: Vec<f64> = match grads.wrt(x) {
            Some(g) => g.to_vec(),
            // Input does not influence the output: autodiff gradient is zero.
            None => vec![0.0; x.numel()],
        };
        let base = x.to_vec();
        for i in 0..base.len() {
            let eval = |v: f64| -> f64 {
                let mut bumped = base.clone();
                bumped[i] = v;
                let mut probe: Vec<Tensor<f64>> = tracked.to_vec();
                probe[slot] = Tensor::from_vec(bumped, x.shape()).expect("probe shape");
                no_grad(|| f(&probe).item())
            };
            let central = (eval(base[i] + eps) - eval(base[i] - eps)) / (2.0 * eps);
            let err = (ad[i] - central).abs() / (central.abs() + 1e-8);
            if err > worst {
                worst = err;
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_has_near_zero_error() {
        let x = Tensor::<f64>::from_vec(vec![0.3, -1.2, 4.0], &[3]).unwrap();
        let err = grad_check(|t| t.sum(), &x, 1e-5);
        assert!(err < 1e-9, "sum grad error {err}");
    }

    #[test]
    fn cubic_gradient_matches() {
        // f(x) = sum(x^3), grad at [1,2] is [3,12]
        let x = Tensor::<f64>::from_vec(vec![1.0, 2.0], &[2]).unwrap();
        let tracked = x.tracked();
        let y = tracked.square().mul(&tracked).unwrap().sum();
        let grads = y.backward().unwrap();
        let g = grads.wrt(&tracked).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-12);
        assert!((g[1] - 12.0).abs() < 1e-12);

        let err = grad_check(|t| t.square().mul(t).unwrap().sum(), &x, 1e-5);
        assert!(err < 1e-6, "cubic grad error {err}");
    }
}
