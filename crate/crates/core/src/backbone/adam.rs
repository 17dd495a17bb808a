/// Adam over a fixed list of parameter tables.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, table_sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: table_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: table_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update; `params` and `grads` must line up with the sizes
    /// given at construction.
    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), self.first.len());
        assert_eq!(grads.len(), self.first.len());
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (k, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for idx in 0..param.len() {
                let g = grad[idx];
                m[idx] = self.beta1 * m[idx] + (1.0 - self.beta1) * g;
                v[idx] = self.beta2 * v[idx] + (1.0 - self.beta2) * g * g;
                let m_hat = m[idx] / bias1;
                let v_hat = v[idx] / bias2;
                param[idx] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
