//! Central finite differences, used as an oracle against the analytic
//! gradients. The difference quotients are accumulated in `f64` but every
//! function evaluation still runs in `f32`.

use crate::tensor::Tensor;

/// Numerical gradient of a scalar function at `x`.
pub fn numerical_gradient(x: &Tensor, step: f32, mut f: impl FnMut(&Tensor) -> f32) -> Tensor {
    let mut out = Vec::with_capacity(x.numel());
    let mut probe = x.to_vec();
    for i in 0..x.numel() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = f(&Tensor::new(x.shape().to_vec(), probe.clone()).expect("same shape"));
        probe[i] = orig - step;
        let minus = f(&Tensor::new(x.shape().to_vec(), probe.clone()).expect("same shape"));
        probe[i] = orig;
        out.push(((plus as f64 - minus as f64) / (2.0 * step as f64)) as f32);
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

/// Largest relative error between two gradients, where entries smaller than
/// `floor` in magnitude are compared absolutely against `floor`.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor, floor: f32) -> f32 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f32::max)
}
