use super::tensor::Tensor;

/// Moment estimates for a fixed list of parameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zeroed state shaped like `params`, with the usual 0.9 / 0.999 / 1e-8 constants.
    pub fn new(params: &[Tensor]) -> Self {
        Self::with_betas(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &[Tensor], beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            beta1,
            beta2,
            eps,
        }
    }
}

/// A parameter whose gradient contained NaN or infinity; its update was skipped.
#[derive(Clone, Debug, PartialEq)]
pub struct SkippedUpdate {
    pub param: usize,
    pub step: u64,
}

/// One bias-corrected Adam step, in place. Returns the parameters that were skipped.
pub fn adam_update(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
) -> Vec<SkippedUpdate> {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    assert_eq!(params.len(), state.m.len(), "state was built for a different parameter list");
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let mut skipped = Vec::new();
    for (idx, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        assert_eq!(p.shape(), g.shape(), "gradient shape for parameter {idx}");
        if !g.is_finite() {
            log::warn!("skipping Adam update of parameter {idx}: non-finite gradient");
            skipped.push(SkippedUpdate {
                param: idx,
                step: state.step,
            });
            continue;
        }
        let m = state.m[idx].data_mut();
        let v = state.v[idx].data_mut();
        for (((pi, gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mi = state.beta1 * *mi + (1.0 - state.beta1) * gi;
            *vi = state.beta2 * *vi + (1.0 - state.beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *pi -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    skipped
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![Tensor::vector(&[0.5, -2.0, 3.0])];
        let g = vec![Tensor::filled(&[3], 1.0)];
        let mut st = AdamState::new(&p);
        adam_update(&mut p, &g, &mut st, 0.008);
        let before = [0.5, -2.0, 3.0];
        for (a, b) in p[0].data().iter().zip(before) {
            assert!((a - b + 0.008).abs() < 1e-6);
        }
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::vector(&[1.0, 2.0])];
        let g = vec![Tensor::zeros(&[2])];
        let mut st = AdamState::new(&p);
        adam_update(&mut p, &g, &mut st, 0.1);
        assert_eq!(p[0].data(), &[1.0, 2.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn descends_a_parabola() {
        // Hand iteration of the recurrences: each of the first steps moves by ~lr toward 0.
        let mut p = vec![Tensor::vector(&[1.0])];
        let mut st = AdamState::new(&p);
        let mut last = 1.0;
        for _ in 0..3 {
            let g = vec![Tensor::vector(&[2.0 * p[0].item()])];
            adam_update(&mut p, &g, &mut st, 0.1);
            assert!(p[0].item() < last);
            last = p[0].item();
        }
        assert!(last > 0.69 && last < 0.71, "{last}");
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut p = vec![Tensor::vector(&[1.0]), Tensor::vector(&[1.0])];
        let g = vec![
            Tensor::from_parts(vec![1], vec![f64::NAN]),
            Tensor::vector(&[1.0]),
        ];
        let mut st = AdamState::new(&p);
        let skipped = adam_update(&mut p, &g, &mut st, 0.1);
        assert_eq!(skipped, vec![SkippedUpdate { param: 0, step: 1 }]);
        assert_eq!(p[0].item(), 1.0);
        assert!(p[1].item() < 1.0);
    }
}
