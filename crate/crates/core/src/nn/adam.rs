use super::params::ParamStore;
use super::tensor::Tensor;

/// Adaptive-moment optimizer state for one parameter store.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of every parameter in `store`.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64) {
        assert_eq!(grads.len(), store.len(), "gradient count mismatch");
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (idx, g) in grads.iter().enumerate() {
            let p = store.get_mut(idx);
            assert_eq!(p.shape(), g.shape(), "gradient shape mismatch");
            let m = self.first[idx].data_mut();
            let v = self.second[idx].data_mut();
            for (((pi, gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *pi -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap());
        let mut opt = Adam::new(&store, 0.9, 0.999, 1e-8);
        let g = Tensor::from_vec(&[2], vec![3.0, -0.5]).unwrap();
        opt.update(&mut store, &[g], 0.1);
        let w = store.get(0).data();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_vec(&[1], vec![5.0]).unwrap());
        let mut opt = Adam::new(&store, 0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            let w = store.get(0).data()[0];
            let g = Tensor::from_vec(&[1], vec![2.0 * (w - 2.0)]).unwrap();
            opt.update(&mut store, &[g], 0.05);
        }
        assert!((store.get(0).data()[0] - 2.0).abs() < 1e-3);
    }
}
