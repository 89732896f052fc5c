use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{normal_matrix, InitSpec};
use crate::error::{shape, Error, Result};
use crate::numcore::{
    check_chain, forward_batch_scaled, Affine, DenseMatrix, DenseVector, GradTape, ParamId, Var,
};

/// Generator `z ↦ clamp(g_θ(B z))` with a square input map `B`.
///
/// `layers[0]` maps R^d to the hidden width, `layers[1..L]` are square hidden
/// layers and `layers[L]` maps to the output space, so `L = layers.len() - 1`
/// is the depth.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorModel {
    pub input_map: DenseMatrix,
    pub layers: Vec<Affine>,
    /// Elementwise output bound; `f64::INFINITY` disables the clamp.
    pub output_bound: f64,
    /// Optional sup-norm cap on the entries of `B`.
    pub input_map_cap: Option<f64>,
}

/// Id of `B` in generator gradient maps.
pub const INPUT_MAP_ID: ParamId = ParamId(0);

/// Id of `A_l` in generator gradient maps.
pub fn generator_weight_id(l: usize) -> ParamId {
    ParamId(1 + 2 * l)
}

/// Id of `c_l` in generator gradient maps.
pub fn generator_bias_id(l: usize) -> ParamId {
    ParamId(2 + 2 * l)
}

/// Draws a generator with `depth` hidden layers of size `width`.
pub fn init_generator(
    d: usize,
    width: usize,
    depth: usize,
    out_dim: usize,
    spec: &InitSpec,
) -> Result<GeneratorModel> {
    if d == 0 || width == 0 || depth == 0 || out_dim == 0 {
        return Err(Error::Contract(format!(
            "generator dimensions must be positive (d={d}, width={width}, depth={depth}, out={out_dim})"
        )));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let input_map = normal_matrix(d, d, spec.weight_std, &mut rng);
    let mut layers = Vec::with_capacity(depth + 1);
    for l in 0..=depth {
        let fan_in = if l == 0 { d } else { width };
        let fan_out = if l == depth { out_dim } else { width };
        layers.push(Affine {
            weight: normal_matrix(fan_out, fan_in, spec.weight_std, &mut rng),
            bias: DenseVector::filled(fan_out, spec.bias_value),
        });
    }
    Ok(GeneratorModel {
        input_map,
        layers,
        output_bound: f64::INFINITY,
        input_map_cap: None,
    })
}

impl GeneratorModel {
    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let d = self.input_map.rows();
        if self.input_map.cols() != d {
            return Err(shape("generator", "input map is not square"));
        }
        check_chain(&self.layers)?;
        if self.layers[0].in_dim() != d {
            return Err(shape(
                "generator",
                format!("first layer expects {} inputs, B is {d}x{d}", self.layers[0].in_dim()),
            ));
        }
        let depth = self.depth();
        for (l, layer) in self.layers.iter().enumerate().take(depth).skip(1) {
            if layer.in_dim() != layer.out_dim() {
                return Err(Error::Contract(format!(
                    "hidden layer {l} is {}x{}, expected square",
                    layer.out_dim(),
                    layer.in_dim()
                )));
            }
        }
        if !(self.output_bound > 0.0) {
            return Err(Error::Contract("output bound must be positive".into()));
        }
        Ok(())
    }

    /// Initial noise dimension `d`.
    pub fn input_dim(&self) -> usize {
        self.input_map.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Affine::out_dim)
    }

    /// Number of hidden layers `L_G`.
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn width(&self) -> usize {
        self.layers[0].out_dim()
    }

    /// Entry count of θ = {A_l, c_l}; `B` is not part of θ.
    pub fn theta_len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn with_output_bound(mut self, bound: f64) -> Self {
        self.output_bound = bound;
        self
    }

    /// Outputs for a batch of noise rows.
    pub fn forward_batch(&self, z: &DenseMatrix) -> Result<DenseMatrix> {
        if z.cols() != self.input_dim() {
            return Err(shape(
                "generator_forward",
                format!("noise of width {} for d = {}", z.cols(), self.input_dim()),
            ));
        }
        let mut bz = DenseMatrix::zeros(z.rows(), self.input_dim());
        crate::numcore::gemm_acc(
            1.0,
            z,
            crate::numcore::Trans::No,
            &self.input_map,
            crate::numcore::Trans::Yes,
            &mut bz,
        );
        let (mut out, _) = forward_batch_scaled(&self.layers, None, &bz);
        if self.output_bound.is_finite() {
            let b = self.output_bound;
            out.map_inplace(|v| v.clamp(-b, b));
        }
        Ok(out)
    }

    /// `g_θ(B z)` for one noise vector.
    pub fn forward(&self, z: &DenseVector) -> Result<DenseVector> {
        let out = self.forward_batch(&DenseMatrix::row_vector(z))?;
        Ok(DenseVector::from_raw(out.into_vec()))
    }

    /// Records the batched forward pass, registering `B` (when `train_input_map`)
    /// and θ as parameters.
    pub fn record(&self, tape: &mut GradTape, z: Var, train_input_map: bool) -> Result<Var> {
        let b = if train_input_map {
            tape.param(INPUT_MAP_ID, self.input_map.clone())
        } else {
            tape.constant(self.input_map.clone())
        };
        let params: Vec<(Var, Var)> = self
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                let w = tape.param(generator_weight_id(l), layer.weight.clone());
                let c = tape.param(generator_bias_id(l), DenseMatrix::row_vector(&layer.bias));
                (w, c)
            })
            .collect();
        let bz = tape.matmul_t(z, crate::numcore::Trans::No, b, crate::numcore::Trans::Yes)?;
        let out = crate::numcore::record_forward(tape, &params, bz)?;
        Ok(if self.output_bound.is_finite() {
            tape.clamp(out, self.output_bound)
        } else {
            out
        })
    }

    /// Mutable views of every parameter, ordered by id: `B`, then `A_l`, `c_l`.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(1 + 2 * self.layers.len());
        out.push(self.input_map.as_mut_slice());
        for layer in &mut self.layers {
            out.push(layer.weight.as_mut_slice());
            out.push(layer.bias.as_mut_slice());
        }
        out
    }

    /// Entry counts of every parameter in id order.
    pub fn param_lens(&self) -> Vec<usize> {
        let mut out = vec![self.input_map.len()];
        for layer in &self.layers {
            out.push(layer.weight.len());
            out.push(layer.bias.len());
        }
        out
    }

    /// Clips `B` into the configured sup-norm ball, if any.
    pub fn apply_input_map_cap(&mut self) {
        if let Some(cap) = self.input_map_cap {
            self.input_map.map_inplace(|v| v.clamp(-cap, cap));
        }
    }

    /// All θ entries, layer by layer (weights then biases).
    pub fn theta_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| {
            l.weight
                .as_slice()
                .iter()
                .chain(l.bias.as_slice())
                .copied()
        })
    }
}
