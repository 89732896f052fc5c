//! Generator and discriminator models.

mod checkpoint;
mod discriminator;
mod generator;

use rand::Rng;
use rand_distr::{Distribution, Normal};

pub use checkpoint::Checkpoint;
pub use discriminator::{
    init_discriminator, sigma_estimate, spectral_normalize, DiscriminatorModel, Regularization,
    SpectralState, SIGMA_FLOOR,
};
pub use generator::{
    generator_bias_id, generator_weight_id, init_generator, GeneratorModel, INPUT_MAP_ID,
};

use crate::error::{Error, Result};
use crate::numcore::DenseMatrix;

/// Parameter initialization: weights i.i.d. `N(0, weight_std²)`, biases constant.
#[derive(Clone, Debug, PartialEq)]
pub struct InitSpec {
    pub weight_std: f64,
    pub bias_value: f64,
    pub seed: u64,
}

/// Default weight std: `N(0, 0.004)` read as a variance.
pub const DEFAULT_WEIGHT_STD: f64 = 0.063_245_553_203_367_58;

impl Default for InitSpec {
    fn default() -> Self {
        Self {
            weight_std: DEFAULT_WEIGHT_STD,
            bias_value: 0.0,
            seed: 0,
        }
    }
}

impl InitSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight_std > 0.0) || !self.weight_std.is_finite() {
            return Err(Error::Contract(format!(
                "weight std must be positive, got {}",
                self.weight_std
            )));
        }
        Ok(())
    }
}

pub(crate) fn normal_matrix<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> DenseMatrix {
    let dist = Normal::new(0.0, std).expect("validated std");
    DenseMatrix::from_fn(rows, cols, |_, _| dist.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::DenseVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_std_is_sqrt_of_variance() {
        assert!((DEFAULT_WEIGHT_STD * DEFAULT_WEIGHT_STD - 0.004).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_std() {
        let spec = InitSpec {
            weight_std: 0.0,
            ..InitSpec::default()
        };
        assert!(init_generator(2, 2, 1, 2, &spec).is_err());
    }

    #[test]
    fn generator_is_piecewise_linear() {
        let g = init_generator(
            3,
            6,
            2,
            4,
            &InitSpec {
                weight_std: 0.7,
                bias_value: 0.1,
                seed: 12,
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut checked = 0;
        for _ in 0..200 {
            let z1: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let z2: Vec<f64> = z1.iter().map(|v| v + rng.random_range(-1e-3..1e-3)).collect();
            let pattern = |z: &[f64]| {
                let bz = g.input_map.matvec(&DenseVector::new(z.to_vec()).unwrap()).unwrap();
                let (_, pre) = crate::numcore::forward_batch_scaled(
                    &g.layers,
                    None,
                    &DenseMatrix::row_vector(&bz),
                );
                pre.iter()
                    .flat_map(|p| p.as_slice().iter().map(|&v| v > 0.0).collect::<Vec<_>>())
                    .collect::<Vec<_>>()
            };
            if pattern(&z1) != pattern(&z2) {
                continue;
            }
            checked += 1;
            let alpha = 0.3;
            let mix: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
            let f = |z: &[f64]| g.forward(&DenseVector::new(z.to_vec()).unwrap()).unwrap();
            let (f1, f2, fm) = (f(&z1), f(&z2), f(&mix));
            for i in 0..fm.len() {
                let lin = alpha * f1[i] + (1.0 - alpha) * f2[i];
                assert!((fm[i] - lin).abs() < 1e-10);
            }
        }
        assert!(checked > 50);
    }
}
