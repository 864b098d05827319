use crate::Real;

/// Running averages of squared gradients and squared updates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdadeltaState<T> {
    pub mean_sq_grad: Vec<T>,
    pub mean_sq_delta: Vec<T>,
}

impl<T: Real> AdadeltaState<T> {
    pub fn new(len: usize) -> Self {
        AdadeltaState {
            mean_sq_grad: vec![T::zero(); len],
            mean_sq_delta: vec![T::zero(); len],
        }
    }
}

/// One update over a flat parameter buffer; `state` must match `params` in length.
pub fn adadelta_step<T: Real>(params: &mut [T], grads: &[T], state: &mut AdadeltaState<T>, rho: T, eps: T) {
    adadelta_update(params, grads, &mut state.mean_sq_grad, &mut state.mean_sq_delta, rho, eps);
}

/// [`adadelta_step`] on borrowed accumulator slices.
pub fn adadelta_update<T: Real>(params: &mut [T], grads: &[T], mean_sq_grad: &mut [T], mean_sq_delta: &mut [T], rho: T, eps: T) {
    assert_eq!(params.len(), grads.len(), "parameter/gradient length mismatch");
    assert!(
        params.len() == mean_sq_grad.len() && params.len() == mean_sq_delta.len(),
        "optimiser state length mismatch"
    );
    let one = T::one();
    for (((x, &g), eg), ed) in params
        .iter_mut()
        .zip(grads)
        .zip(mean_sq_grad.iter_mut())
        .zip(mean_sq_delta.iter_mut())
    {
        *eg = rho * *eg + (one - rho) * g * g;
        let dx = -((*ed + eps).sqrt() / (*eg + eps).sqrt()) * g;
        *ed = rho * *ed + (one - rho) * dx * dx;
        *x += dx;
    }
}
