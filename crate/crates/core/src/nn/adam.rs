//! Adam optimizer with the conventional defaults (beta1 0.9, beta2 0.999,
//! eps 1e-8). The learning rate is supplied per step so schedules can
//! drive it.

use super::tensor::Tensor;

pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(param_shapes: &[Vec<usize>]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            t: 0,
        }
    }

    /// Advances the shared step counter; call once per batch, before the
    /// per-parameter updates.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Updates parameter `i` in place. A `None` gradient is a zero
    /// gradient: the moment estimates still decay.
    pub fn update(&mut self, i: usize, param: &mut Tensor, grad: Option<&Tensor>, lr: f64) {
        assert!(self.t > 0, "begin_step before update");
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        if let Some(g) = grad {
            assert_eq!(g.shape(), param.shape(), "grad shape mismatch at {i}");
        }
        let m = self.m[i].data_mut();
        let v = self.v[i].data_mut();
        let p = param.data_mut();
        for j in 0..p.len() {
            let gj = grad.map_or(0.0, |g| g.data()[j]);
            m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
            v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let mut p = Tensor::new(&[2], vec![1.0, -2.0]);
        let mut opt = Adam::new(&[vec![2]]);
        let g = Tensor::new(&[2], vec![0.5, 0.5]);
        opt.begin_step();
        opt.update(0, &mut p, Some(&g), 0.0);
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn descends_a_quadratic() {
        // f(x) = x^2, grad = 2x; Adam from x=3 should approach 0.
        let mut x = Tensor::new(&[1], vec![3.0]);
        let mut opt = Adam::new(&[vec![1]]);
        for _ in 0..2000 {
            let g = Tensor::new(&[1], vec![2.0 * x.data()[0]]);
            opt.begin_step();
            opt.update(0, &mut x, Some(&g), 0.01);
        }
        assert!(x.data()[0].abs() < 0.05, "got {}", x.data()[0]);
    }
}
