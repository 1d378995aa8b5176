//! Central-difference gradient checking. Used by the test suites to pin
//! every analytic backward pass against an independent numeric route.

use super::tensor::Tensor;

/// Central finite differences of a scalar function at `inputs`, step `h`.
pub fn finite_diff(
    f: &mut dyn FnMut(&[Tensor]) -> f64,
    inputs: &[Tensor],
    h: f64,
) -> Vec<Tensor> {
    let mut grads = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut grad = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let fp = f(&plus);
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let fm = f(&minus);
            grad.data_mut()[j] = (fp - fm) / (2.0 * h);
        }
        grads.push(grad);
    }
    grads
}

/// Worst-case relative error between analytic and numeric gradients.
/// Per-element error is |a - n| / max(|a|, |n|, floor).
pub fn max_rel_error(analytic: &Tensor, numeric: &Tensor, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
