//! Central finite differences, used to audit analytic gradients.

use crate::tensor::Tensor;

/// Numerical gradient of `f` at `x` by central differences with step `eps`.
pub fn numeric_gradient(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, eps: f64) -> Tensor {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let fp = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let fm = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (fp - fm) / (2.0 * eps);
    }
    out
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let diff = a.zip_map(b, |x, y| x - y).sq_norm().sqrt();
    let scale = a.sq_norm().sqrt().max(b.sq_norm().sqrt()).max(floor);
    diff / scale
}
