//! Adam optimizer over a flat list of parameter tensors.

use ndarray::ArrayD;

use super::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates, one pair per parameter tensor, plus the
/// shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState<F> {
    pub m: Vec<ArrayD<F>>,
    pub v: Vec<ArrayD<F>>,
    pub t: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(params: &[ArrayD<F>]) -> Self {
        AdamState {
            m: params.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect(),
            v: params.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect(),
            t: 0,
        }
    }

    /// One Adam step. `grads` must be index-aligned with `params`.
    pub fn step(&mut self, params: &mut [ArrayD<F>], grads: &[ArrayD<F>], hp: &AdamHyper) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let b1 = F::from_f64(hp.beta1);
        let b2 = F::from_f64(hp.beta2);
        let one = F::one();
        let lr = F::from_f64(hp.lr);
        let eps = F::from_f64(hp.eps);
        let bc1 = F::from_f64(1.0 - hp.beta1.powi(self.t as i32));
        let bc2 = F::from_f64(1.0 - hp.beta2.powi(self.t as i32));
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p = *p - lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn zero_gradient_leaves_params_bit_identical() {
        let mut params = vec![ArrayD::<f64>::from_elem(IxDyn(&[3]), 1.25)];
        let grads = vec![ArrayD::<f64>::zeros(IxDyn(&[3]))];
        let mut st = AdamState::new(&params);
        let before = params[0].clone();
        for _ in 0..5 {
            st.step(&mut params, &grads, &AdamHyper::with_lr(0.1));
        }
        assert_eq!(params[0], before);
    }

    #[test]
    fn descends_a_quadratic() {
        // Minimize f(p) = p^2 from p = 1; gradient 2p.
        let mut params = vec![ArrayD::<f64>::from_elem(IxDyn(&[1]), 1.0)];
        let mut st = AdamState::new(&params);
        let hp = AdamHyper::with_lr(0.05);
        for _ in 0..400 {
            let g = vec![params[0].mapv(|p| 2.0 * p)];
            st.step(&mut params, &g, &hp);
        }
        assert!(params[0][[0]].abs() < 1e-2, "got {}", params[0][[0]]);
    }
}
