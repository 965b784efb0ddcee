//! Adam optimizer with bias-corrected first and second moments.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(param_shapes: &[Vec<usize>], hyper: AdamHyper) -> AdamState {
        AdamState {
            step: 0,
            m: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            hyper,
        }
    }

    /// One update over all parameter tensors. `params` and `grads` must be
    /// aligned with the shapes the state was built from.
    pub fn apply(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam: {} params / {} grads vs {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = self.hyper.beta1;
        let b2 = self.hyper.beta2;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "adam: param {:?} vs grad {:?} vs moment {:?}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
            for i in 0..p.numel() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                let m_hat = m.data[i] / bc1;
                let v_hat = v.data[i] / bc2;
                p.data[i] -= self.hyper.lr * m_hat / (v_hat.sqrt() + self.hyper.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_identity() {
        let mut w = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let orig = w.clone();
        let mut st = AdamState::new(&[vec![3]], AdamHyper::default());
        let g = Tensor::zeros(&[3]);
        st.apply(&mut [&mut w], &[g]).unwrap();
        assert_eq!(w, orig);
    }

    #[test]
    fn first_step_is_signed_lr() {
        // With |g| >> epsilon, the bias-corrected first step is -lr*sign(g).
        let hyper = AdamHyper::default();
        let mut w = Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        let mut st = AdamState::new(&[vec![2]], hyper);
        let g = Tensor::from_vec(&[2], vec![3.0, -0.7]).unwrap();
        st.apply(&mut [&mut w], &[g]).unwrap();
        assert!((w.data[0] - (-hyper.lr)).abs() < 1e-6 * hyper.lr);
        assert!((w.data[1] - hyper.lr).abs() < 1e-6 * hyper.lr);
    }

    /// Straight-from-the-reference Adam trace on a single tensor, written
    /// independently of `AdamState` (scalar loop, textbook update rule).
    fn reference_adam_trace(w0: &[f64], grads: &[Vec<f64>], h: AdamHyper) -> Vec<f64> {
        let n = w0.len();
        let mut w = w0.to_vec();
        let mut m = vec![0.0; n];
        let mut v = vec![0.0; n];
        for (step, g) in grads.iter().enumerate() {
            let t = (step + 1) as i32;
            for i in 0..n {
                m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
                v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
                let m_hat = m[i] / (1.0 - h.beta1.powi(t));
                let v_hat = v[i] / (1.0 - h.beta2.powi(t));
                w[i] -= h.lr * m_hat / (v_hat.sqrt() + h.epsilon);
            }
        }
        w
    }

    #[test]
    fn ten_step_trace_matches_reference() {
        use rand::Rng;
        let h = AdamHyper {
            lr: 0.01,
            ..AdamHyper::default()
        };
        let mut rng = crate::rng::seeded_rng(11);
        let w0 = vec![0.3, -1.2, 2.5];
        let grads: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();

        let mut w = Tensor::from_vec(&[3], w0.clone()).unwrap();
        let mut st = AdamState::new(&[vec![3]], h);
        for g in &grads {
            let gt = Tensor::from_vec(&[3], g.clone()).unwrap();
            st.apply(&mut [&mut w], &[gt]).unwrap();
        }
        let expect = reference_adam_trace(&w0, &grads, h);
        for (a, b) in w.data.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert_eq!(st.step, 10);
    }
}
