use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{normal_matrix, InitSpec};
use crate::error::{shape, Error, Result};
use crate::numcore::{
    activation_masks, bias_id, check_chain, forward_batch_scaled, weight_id, Affine, DenseMatrix,
    DenseVector, GradTape, Var,
};

/// Floor on the estimated top singular value.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// How the critic's Lipschitz constant is controlled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regularization {
    GradientPenalty,
    SpectralNorm,
}

impl fmt::Display for Regularization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regularization::GradientPenalty => "gradient-penalty",
            Regularization::SpectralNorm => "spectral-norm",
        })
    }
}

impl FromStr for Regularization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient-penalty" | "gp" | "wgan-gp" => Ok(Regularization::GradientPenalty),
            "spectral-norm" | "sn" | "sngan" => Ok(Regularization::SpectralNorm),
            other => Err(Error::Config(format!("unknown regularization mode `{other}`"))),
        }
    }
}

/// Power-iteration state of one weight matrix: left and right singular vector estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralState {
    pub u: DenseVector,
    pub v: DenseVector,
}

/// Scalar critic `f_w`, a dense ReLU chain.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorModel {
    pub layers: Vec<Affine>,
    pub mode: Regularization,
    /// One entry per layer in spectral-norm mode, empty otherwise.
    pub spectral: Vec<SpectralState>,
}

/// Draws a critic on R^`in_dim` with `depth` hidden layers of size `width`.
pub fn init_discriminator(
    in_dim: usize,
    width: usize,
    depth: usize,
    mode: Regularization,
    spec: &InitSpec,
) -> Result<DiscriminatorModel> {
    if in_dim == 0 || width == 0 || depth == 0 {
        return Err(Error::Contract(format!(
            "discriminator dimensions must be positive (in={in_dim}, width={width}, depth={depth})"
        )));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut layers = Vec::with_capacity(depth + 1);
    for l in 0..=depth {
        let fan_in = if l == 0 { in_dim } else { width };
        let fan_out = if l == depth { 1 } else { width };
        layers.push(Affine {
            weight: normal_matrix(fan_out, fan_in, spec.weight_std, &mut rng),
            bias: DenseVector::filled(fan_out, spec.bias_value),
        });
    }
    let spectral = match mode {
        Regularization::GradientPenalty => Vec::new(),
        Regularization::SpectralNorm => layers
            .iter()
            .map(|layer| SpectralState {
                u: random_unit(layer.out_dim(), &mut rng),
                v: random_unit(layer.in_dim(), &mut rng),
            })
            .collect(),
    };
    let mut dm = DiscriminatorModel {
        layers,
        mode,
        spectral,
    };
    if mode == Regularization::SpectralNorm {
        dm.power_iteration_step();
    }
    Ok(dm)
}

fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> DenseVector {
    let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    } else {
        v[0] = 1.0;
    }
    DenseVector::from_raw(v)
}

fn normalize_into(target: &mut DenseVector, raw: DenseVector) {
    let norm = raw.norm();
    // a zero image keeps the previous estimate
    if norm > 0.0 && norm.is_finite() {
        *target = raw.map(|x| x / norm);
    }
}

/// `uᵀ A v`, floored.
pub fn sigma_estimate(weight: &DenseMatrix, state: &SpectralState) -> f64 {
    let av = weight.matvec(&state.v).expect("spectral state matches weight");
    state.u.dot(&av).max(SIGMA_FLOOR)
}

/// One power-iteration step on every layer; returns the updated critic.
pub fn spectral_normalize(dm: &DiscriminatorModel) -> Result<DiscriminatorModel> {
    if dm.mode != Regularization::SpectralNorm {
        return Err(Error::Contract("spectral_normalize needs spectral-norm mode".into()));
    }
    let mut out = dm.clone();
    out.power_iteration_step();
    Ok(out)
}

impl DiscriminatorModel {
    pub fn validate(&self) -> Result<()> {
        check_chain(&self.layers)?;
        if self.layers.last().map(Affine::out_dim) != Some(1) {
            return Err(shape("discriminator", "output is not scalar"));
        }
        match self.mode {
            Regularization::GradientPenalty => Ok(()),
            Regularization::SpectralNorm => {
                if self.spectral.len() != self.layers.len() {
                    return Err(shape("discriminator", "one spectral state per layer required"));
                }
                for (layer, s) in self.layers.iter().zip(&self.spectral) {
                    if s.u.len() != layer.out_dim() || s.v.len() != layer.in_dim() {
                        return Err(shape("discriminator", "spectral vector length"));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn width(&self) -> usize {
        self.layers[0].out_dim()
    }

    /// `v ← Aᵀu/‖Aᵀu‖`, `u ← Av/‖Av‖` on every layer. No-op in gradient-penalty mode.
    pub fn power_iteration_step(&mut self) {
        for (layer, state) in self.layers.iter().zip(self.spectral.iter_mut()) {
            let v = layer.weight.matvec_t(&state.u).expect("spectral state shape");
            normalize_into(&mut state.v, v);
            let u = layer.weight.matvec(&state.v).expect("spectral state shape");
            normalize_into(&mut state.u, u);
        }
    }

    /// Per-layer multipliers applied to the weights in the forward pass.
    pub fn weight_scales(&self) -> Vec<f64> {
        match self.mode {
            Regularization::GradientPenalty => vec![1.0; self.layers.len()],
            Regularization::SpectralNorm => self
                .layers
                .iter()
                .zip(&self.spectral)
                .map(|(l, s)| 1.0 / sigma_estimate(&l.weight, s))
                .collect(),
        }
    }

    /// The chain actually evaluated: weights divided by σ̂ in spectral-norm mode.
    pub fn effective_layers(&self) -> Vec<Affine> {
        self.layers
            .iter()
            .zip(self.weight_scales())
            .map(|(l, s)| Affine {
                weight: l.weight.scale(s),
                bias: l.bias.clone(),
            })
            .collect()
    }

    fn check_input(&self, x: &DenseMatrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(shape(
                "discriminator_forward",
                format!("input width {} for a critic on R^{}", x.cols(), self.input_dim()),
            ));
        }
        Ok(())
    }

    /// Critic values for a batch, as a b×1 column.
    pub fn forward_batch(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_input(x)?;
        let scales = self.weight_scales();
        Ok(forward_batch_scaled(&self.layers, Some(&scales), x).0)
    }

    /// Critic value of one sample.
    pub fn forward(&self, x: &DenseVector) -> Result<f64> {
        Ok(self.forward_batch(&DenseMatrix::row_vector(x))?.as_slice()[0])
    }

    /// Activation masks of the effective chain at every row of `x`.
    pub fn masks(&self, x: &DenseMatrix) -> Result<Vec<DenseMatrix>> {
        self.check_input(x)?;
        let scales = self.weight_scales();
        let (_, pre) = forward_batch_scaled(&self.layers, Some(&scales), x);
        Ok(activation_masks(&pre))
    }

    /// Puts the effective weights and biases on `tape`.
    ///
    /// With `trainable`, raw weights and biases are registered under
    /// [`weight_id`]/[`bias_id`] and σ̂ is differentiated through (with `u`, `v`
    /// held fixed); otherwise everything is a constant.
    pub fn record_weights(&self, tape: &mut GradTape, trainable: bool) -> Result<Vec<(Var, Var)>> {
        let mut out = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let bias = DenseMatrix::row_vector(&layer.bias);
            if !trainable {
                let s = self.weight_scales()[l];
                let w = tape.constant(layer.weight.scale(s));
                let b = tape.constant(bias);
                out.push((w, b));
                continue;
            }
            let raw = tape.param(weight_id(l), layer.weight.clone());
            let b = tape.param(bias_id(l), bias);
            let w = match self.mode {
                Regularization::GradientPenalty => raw,
                Regularization::SpectralNorm => {
                    let s = &self.spectral[l];
                    let uv = DenseMatrix::from_fn(layer.out_dim(), layer.in_dim(), |i, j| {
                        s.u[i] * s.v[j]
                    });
                    let sigma = tape.dot_const(raw, uv)?;
                    let inv = tape.recip(sigma, SIGMA_FLOOR)?;
                    tape.mul_scalar(raw, inv)?
                }
            };
            out.push((w, b));
        }
        Ok(out)
    }

    /// Mutable views of every parameter in id order: `A_0`, `c_0`, `A_1`, ...
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * self.layers.len());
        for layer in &mut self.layers {
            out.push(layer.weight.as_mut_slice());
            out.push(layer.bias.as_mut_slice());
        }
        out
    }

    pub fn param_lens(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.len(), l.bias.len()])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, SymmetricEigen};
    use rand::Rng;

    fn spec(seed: u64) -> InitSpec {
        InitSpec {
            weight_std: 0.5,
            bias_value: 0.0,
            seed,
        }
    }

    fn top_singular_value(a: &DenseMatrix) -> f64 {
        let m = DMatrix::from_row_slice(a.rows(), a.cols(), a.as_slice());
        let ata = m.transpose() * &m;
        let eig = SymmetricEigen::new(ata);
        eig.eigenvalues.iter().cloned().fold(0.0, f64::max).sqrt()
    }

    #[test]
    fn zero_weights_give_zero() {
        let mut dm = init_discriminator(3, 4, 2, Regularization::GradientPenalty, &spec(1)).unwrap();
        for l in &mut dm.layers {
            l.weight.map_inplace(|_| 0.0);
        }
        for x in [[1.0, 2.0, 3.0], [-5.0, 0.0, 7.0]] {
            assert_eq!(dm.forward(&DenseVector::new(x.to_vec()).unwrap()).unwrap(), 0.0);
        }
    }

    #[test]
    fn single_layer_hand_value() {
        let dm = DiscriminatorModel {
            layers: vec![Affine::new(
                DenseMatrix::from_rows(&[[1.0, -2.0, 0.5]]).unwrap(),
                DenseVector::new(vec![0.25]).unwrap(),
            )
            .unwrap()],
            mode: Regularization::GradientPenalty,
            spectral: vec![],
        };
        let x = DenseVector::new(vec![2.0, 1.0, 4.0]).unwrap();
        assert_eq!(dm.forward(&x).unwrap(), 2.0 - 2.0 + 2.0 + 0.25);
    }

    #[test]
    fn diagonal_sigma() {
        let dm = DiscriminatorModel {
            layers: vec![
                Affine::new(
                    DenseMatrix::from_rows(&[[2.0, 0.0], [0.0, 1.0]]).unwrap(),
                    DenseVector::zeros(2),
                )
                .unwrap(),
                Affine::new(DenseMatrix::from_rows(&[[1.0, 0.0]]).unwrap(), DenseVector::zeros(1))
                    .unwrap(),
            ],
            mode: Regularization::SpectralNorm,
            spectral: vec![
                SpectralState {
                    u: DenseVector::new(vec![1.0, 0.0]).unwrap(),
                    v: DenseVector::new(vec![1.0, 0.0]).unwrap(),
                },
                SpectralState {
                    u: DenseVector::new(vec![1.0]).unwrap(),
                    v: DenseVector::new(vec![1.0, 0.0]).unwrap(),
                },
            ],
        };
        let dm = spectral_normalize(&dm).unwrap();
        assert!((sigma_estimate(&dm.layers[0].weight, &dm.spectral[0]) - 2.0).abs() < 1e-15);
        let eff = dm.effective_layers();
        assert!((top_singular_value(&eff[0].weight) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unit_spectral_norm_is_fixed_point() {
        // orthogonal matrix: every singular value is 1
        let (c, s) = (0.6f64, 0.8f64);
        let a = DenseMatrix::from_rows(&[[c, -s], [s, c]]).unwrap();
        let mut dm = DiscriminatorModel {
            layers: vec![
                Affine::new(a.clone(), DenseVector::zeros(2)).unwrap(),
                Affine::new(DenseMatrix::from_rows(&[[1.0, 0.0]]).unwrap(), DenseVector::zeros(1))
                    .unwrap(),
            ],
            mode: Regularization::SpectralNorm,
            spectral: vec![
                SpectralState {
                    u: DenseVector::new(vec![0.0, 1.0]).unwrap(),
                    v: DenseVector::new(vec![1.0, 0.0]).unwrap(),
                },
                SpectralState {
                    u: DenseVector::new(vec![1.0]).unwrap(),
                    v: DenseVector::new(vec![1.0, 0.0]).unwrap(),
                },
            ],
        };
        for _ in 0..5 {
            dm.power_iteration_step();
        }
        let eff = dm.effective_layers();
        for (x, y) in eff[0].weight.as_slice().iter().zip(a.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn power_iteration_converges_to_top_singular_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let a = DenseMatrix::from_fn(8, 8, |_, _| rng.random_range(-1.0..1.0));
        let mut dm = DiscriminatorModel {
            layers: vec![
                Affine::new(a.clone(), DenseVector::zeros(8)).unwrap(),
                Affine::new(DenseMatrix::filled(1, 8, 1.0), DenseVector::zeros(1)).unwrap(),
            ],
            mode: Regularization::SpectralNorm,
            spectral: vec![
                SpectralState {
                    u: random_unit(8, &mut rng),
                    v: random_unit(8, &mut rng),
                },
                SpectralState {
                    u: random_unit(1, &mut rng),
                    v: random_unit(8, &mut rng),
                },
            ],
        };
        for _ in 0..50 {
            dm.power_iteration_step();
        }
        let sigma = sigma_estimate(&dm.layers[0].weight, &dm.spectral[0]);
        let oracle = top_singular_value(&a);
        assert!((sigma - oracle).abs() < 1e-6, "{sigma} vs {oracle}");

        // the normalized map does not stretch its top right singular vector
        let eff = dm.effective_layers();
        let stretched = eff[0].weight.matvec(&dm.spectral[0].v).unwrap().norm();
        assert!(stretched <= 1.0 + 1e-4);
        for s in &dm.spectral {
            assert!((s.u.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_matrix_uses_sigma_floor() {
        let mut dm = init_discriminator(3, 2, 1, Regularization::SpectralNorm, &spec(2)).unwrap();
        dm.layers[0].weight = DenseMatrix::zeros(2, 3);
        dm.power_iteration_step();
        assert_eq!(sigma_estimate(&dm.layers[0].weight, &dm.spectral[0]), SIGMA_FLOOR);
        let y = dm.forward(&DenseVector::new(vec![1.0, 1.0, 1.0]).unwrap()).unwrap();
        assert!(y.is_finite());
    }

    #[test]
    fn forward_matches_replay_oracle() {
        let dm = init_discriminator(5, 6, 3, Regularization::GradientPenalty, &spec(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut h = x.clone();
        for (l, layer) in dm.layers.iter().enumerate() {
            h = (0..layer.out_dim())
                .map(|i| {
                    let z = layer.bias[i]
                        + (0..layer.in_dim()).map(|j| layer.weight.get(i, j) * h[j]).sum::<f64>();
                    if l + 1 < dm.layers.len() {
                        z.max(0.0)
                    } else {
                        z
                    }
                })
                .collect();
        }
        let y = dm.forward(&DenseVector::new(x).unwrap()).unwrap();
        assert!((y - h[0]).abs() <= 1e-12);
    }

    #[test]
    fn spectral_forward_uses_normalized_weights() {
        let dm = init_discriminator(4, 5, 2, Regularization::SpectralNorm, &spec(5)).unwrap();
        let x = DenseVector::new(vec![0.3, -0.1, 0.9, 0.4]).unwrap();
        let via_effective = crate::numcore::forward(&dm.effective_layers(), &x).unwrap();
        assert!((dm.forward(&x).unwrap() - via_effective[0]).abs() < 1e-14);
    }

    #[test]
    fn rejects_wrong_input_width() {
        let dm = init_discriminator(4, 5, 2, Regularization::GradientPenalty, &spec(5)).unwrap();
        assert!(matches!(dm.forward(&DenseVector::zeros(3)), Err(Error::Shape { .. })));
    }
}
