use crate::error::{shape, Result};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    /// Learning rate 2e-4 with momentum parameters (0, 0.9).
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.0,
            beta2: 0.9,
            epsilon: 1e-8,
        }
    }
}

/// First and second moments for a list of flat parameter buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zero moments for parameters with the given entry counts.
    pub fn new(config: AdamConfig, lens: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            m: lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn first_moment(&self, idx: usize) -> &[f64] {
        &self.m[idx]
    }

    pub fn second_moment(&self, idx: usize) -> &[f64] {
        &self.v[idx]
    }

    /// One bias-corrected Adam update of every parameter.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(shape(
                "adam_step",
                format!(
                    "{} parameters and {} gradients for {} moment buffers",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(shape(
                    "adam_step",
                    format!("parameter {i}: {} entries, gradient {}, moments {}", p.len(), g.len(), self.m[i].len()),
                ));
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for k in 0..p.len() {
                let gk = g[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }

    /// Clears both moments wherever `values` is exactly zero.
    pub fn reset_zeroed(&mut self, idx: usize, values: &[f64]) {
        for (k, &x) in values.iter().enumerate() {
            if x == 0.0 {
                self.m[idx][k] = 0.0;
                self.v[idx][k] = 0.0;
            }
        }
    }
}

/// Applies one Adam update in place.
pub fn adam_step(state: &mut AdamState, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
    state.step(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::new(AdamConfig::default(), &[3]);
        let mut p = vec![1.0, -2.0, 0.5];
        let g = vec![0.0; 3];
        for _ in 0..5 {
            s.step(&mut [&mut p[..]], &[&g[..]]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_hand_value() {
        let mut s = AdamState::new(AdamConfig::default(), &[1]);
        let mut p = vec![0.0];
        s.step(&mut [&mut p[..]], &[&[1.0][..]]).unwrap();
        // m̂ = 1, v̂ = 0.1 / 0.1 = 1
        let expected = -2e-4 * 1.0 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamState::new(AdamConfig::default(), &[2]);
        let mut p = vec![0.0; 3];
        assert!(s.step(&mut [&mut p[..]], &[&[0.0, 0.0, 0.0][..]]).is_err());
        let mut p = vec![0.0; 2];
        assert!(s.step(&mut [&mut p[..]], &[&[0.0][..]]).is_err());
    }

    #[test]
    fn reset_clears_moments_of_zeroed_entries() {
        let mut s = AdamState::new(AdamConfig::default(), &[2]);
        let mut p = vec![1.0, 1.0];
        s.step(&mut [&mut p[..]], &[&[0.5, 0.5][..]]).unwrap();
        p[0] = 0.0;
        s.reset_zeroed(0, &p);
        assert_eq!(s.first_moment(0)[0], 0.0);
        assert_eq!(s.second_moment(0)[0], 0.0);
        assert!(s.first_moment(0)[1] != 0.0);
        // with zero moments and zero gradient the entry stays put
        s.step(&mut [&mut p[..]], &[&[0.0, 0.5][..]]).unwrap();
        assert_eq!(p[0], 0.0);
    }
}
