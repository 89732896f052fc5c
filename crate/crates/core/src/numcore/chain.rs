//! Affine-ReLU chains: `T_L ∘ σ ∘ T_{L-1} ∘ ⋯ ∘ σ ∘ T_0`.
//!
//! The input gradient of such a chain is the product
//! `A_L D_{L-1} A_{L-1} ⋯ D_0 A_0`, where `D_l` is the diagonal 0/1 mask of
//! positive pre-activations. Holding the masks fixed makes that product a
//! polynomial in the weights, which is how the gradient penalty is
//! differentiated here.

use super::matrix::{gemm_acc, DenseMatrix, DenseVector, Trans};
use super::tape::{GradTape, Gradients, ParamId, Var};
use crate::error::{shape, Result};

/// One affine map `x ↦ A x + c`, with `A` stored out×in.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub weight: DenseMatrix,
    pub bias: DenseVector,
}

impl Affine {
    pub fn new(weight: DenseMatrix, bias: DenseVector) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(shape(
                "Affine::new",
                format!("{}x{} weight with bias of length {}", weight.rows(), weight.cols(), bias.len()),
            ));
        }
        Ok(Self { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Checks that consecutive layers compose.
pub fn check_chain(layers: &[Affine]) -> Result<()> {
    if layers.is_empty() {
        return Err(shape("affine chain", "no layers"));
    }
    for (l, pair) in layers.windows(2).enumerate() {
        if pair[0].out_dim() != pair[1].in_dim() {
            return Err(shape(
                "affine chain",
                format!(
                    "layer {l} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    l + 1,
                    pair[1].in_dim()
                ),
            ));
        }
    }
    Ok(())
}

/// Batched forward pass over rows of `x`, with an optional per-layer weight scale.
///
/// Returns the output and the pre-activation of every hidden layer.
pub(crate) fn forward_batch_scaled(
    layers: &[Affine],
    scales: Option<&[f64]>,
    x: &DenseMatrix,
) -> (DenseMatrix, Vec<DenseMatrix>) {
    let mut h = x.clone();
    let mut pre = Vec::with_capacity(layers.len().saturating_sub(1));
    for (l, layer) in layers.iter().enumerate() {
        let mut out = DenseMatrix::zeros(h.rows(), layer.out_dim());
        let alpha = scales.map_or(1.0, |s| s[l]);
        gemm_acc(alpha, &h, Trans::No, &layer.weight, Trans::Yes, &mut out);
        let b = layer.bias.as_slice();
        for i in 0..out.rows() {
            for (o, c) in out.row_mut(i).iter_mut().zip(b) {
                *o += c;
            }
        }
        if l + 1 < layers.len() {
            pre.push(out.clone());
            out.map_inplace(|v| v.max(0.0));
        }
        h = out;
    }
    (h, pre)
}

/// Batched forward pass; one sample per row.
pub fn forward_batch(layers: &[Affine], x: &DenseMatrix) -> Result<DenseMatrix> {
    check_chain(layers)?;
    if x.cols() != layers[0].in_dim() {
        return Err(shape(
            "chain forward",
            format!("input width {} but chain expects {}", x.cols(), layers[0].in_dim()),
        ));
    }
    Ok(forward_batch_scaled(layers, None, x).0)
}

/// Forward pass for a single input vector.
pub fn forward(layers: &[Affine], x: &DenseVector) -> Result<DenseVector> {
    let out = forward_batch(layers, &DenseMatrix::row_vector(x))?;
    Ok(DenseVector::from_raw(out.into_vec()))
}

/// 0/1 masks of positive pre-activations, one b×N matrix per hidden layer.
pub fn activation_masks(pre: &[DenseMatrix]) -> Vec<DenseMatrix> {
    pre.iter()
        .map(|p| p.map(|v| if v > 0.0 { 1.0 } else { 0.0 }))
        .collect()
}

/// Records a forward pass on `tape` given tape-resident weights and 1×n biases.
pub fn record_forward(tape: &mut GradTape, layers: &[(Var, Var)], x: Var) -> Result<Var> {
    let mut h = x;
    for (l, &(w, b)) in layers.iter().enumerate() {
        h = tape.matmul_t(h, Trans::No, w, Trans::Yes)?;
        h = tape.add_row(h, b)?;
        if l + 1 < layers.len() {
            h = tape.relu(h);
        }
    }
    Ok(h)
}

/// Records the rows `∇_x f(x_i)` of a scalar-output chain with frozen masks.
///
/// `weights` are the tape-resident weight matrices in layer order and
/// `masks[l]` the b×N_{l+1} activation masks of hidden layer `l`. The result
/// is a b×D node.
pub fn record_input_gradients(
    tape: &mut GradTape,
    weights: &[Var],
    masks: &[DenseMatrix],
    batch: usize,
) -> Result<Var> {
    let last = *weights
        .last()
        .ok_or_else(|| shape("input gradient", "no layers"))?;
    if tape.value(last).rows() != 1 {
        return Err(shape("input gradient", "chain output is not scalar"));
    }
    if masks.len() + 1 != weights.len() {
        return Err(shape(
            "input gradient",
            format!("{} masks for {} layers", masks.len(), weights.len()),
        ));
    }
    let mut g = tape.broadcast_rows(last, batch)?;
    for l in (0..masks.len()).rev() {
        g = tape.mul_const(g, masks[l].clone())?;
        g = tape.matmul(g, weights[l])?;
    }
    Ok(g)
}

/// Parameter id of layer `l`'s weight in chain-level gradient maps.
pub fn weight_id(l: usize) -> ParamId {
    ParamId(2 * l)
}

/// Parameter id of layer `l`'s bias in chain-level gradient maps.
pub fn bias_id(l: usize) -> ParamId {
    ParamId(2 * l + 1)
}

fn register(tape: &mut GradTape, layers: &[Affine]) -> Vec<(Var, Var)> {
    layers
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let w = tape.param(weight_id(l), layer.weight.clone());
            let b = tape.param(bias_id(l), DenseMatrix::row_vector(&layer.bias));
            (w, b)
        })
        .collect()
}

/// `∇_x f(x)` for a chain `f: R^D → R`, by reverse mode.
pub fn input_gradient(layers: &[Affine], x: &DenseVector) -> Result<DenseVector> {
    check_chain(layers)?;
    if layers.last().map(Affine::out_dim) != Some(1) {
        return Err(shape("input_gradient", "chain output is not scalar"));
    }
    if x.len() != layers[0].in_dim() {
        return Err(shape(
            "input_gradient",
            format!("input of length {} for a chain on R^{}", x.len(), layers[0].in_dim()),
        ));
    }
    let mut tape = GradTape::new();
    let params: Vec<(Var, Var)> = layers
        .iter()
        .map(|layer| {
            let w = tape.constant(layer.weight.clone());
            let b = tape.constant(DenseMatrix::row_vector(&layer.bias));
            (w, b)
        })
        .collect();
    let input_id = ParamId(usize::MAX);
    let xv = tape.param(input_id, DenseMatrix::row_vector(x));
    let out = record_forward(&mut tape, &params, xv)?;
    let grads = tape.backward(out)?;
    let g = grads
        .get(input_id)
        .expect("input registered as a parameter")
        .clone();
    Ok(DenseVector::from_raw(g.into_vec()))
}

/// `(‖∇_x f(x)‖₂ − 1)²` and its gradient with respect to every weight and bias.
///
/// Activation masks are held at their values at `x`. Gradients are keyed by
/// [`weight_id`] and [`bias_id`]; biases only enter through the masks, so
/// their gradients are zero.
pub fn grad_of_input_grad_norm(layers: &[Affine], x: &DenseVector) -> Result<(f64, Gradients)> {
    check_chain(layers)?;
    if x.len() != layers[0].in_dim() {
        return Err(shape(
            "grad_of_input_grad_norm",
            format!("input of length {} for a chain on R^{}", x.len(), layers[0].in_dim()),
        ));
    }
    let (_, pre) = forward_batch_scaled(layers, None, &DenseMatrix::row_vector(x));
    let masks = activation_masks(&pre);
    let mut tape = GradTape::new();
    let params = register(&mut tape, layers);
    let weights: Vec<Var> = params.iter().map(|p| p.0).collect();
    let g = record_input_gradients(&mut tape, &weights, &masks, 1)?;
    let norm = tape.row_norms(g);
    let dev = tape.add_scalar(norm, -1.0);
    let sq = tape.square(dev);
    let loss = tape.sum(sq);
    let value = tape.scalar(loss);
    Ok((value, tape.backward(loss)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_chain(dims: &[usize], rng: &mut ChaCha8Rng) -> Vec<Affine> {
        dims.windows(2)
            .map(|w| Affine {
                weight: DenseMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-1.0..1.0)),
                bias: DenseVector::from_raw((0..w[1]).map(|_| rng.random_range(-0.5..0.5)).collect()),
            })
            .collect()
    }

    // A_L D_{L-1} A_{L-1} ⋯ D_0 A_0 evaluated by explicit matrix products.
    fn mask_product(layers: &[Affine], x: &DenseVector) -> Vec<f64> {
        let mut h = x.clone();
        let mut acc = DenseMatrix::identity(x.len());
        for (l, layer) in layers.iter().enumerate() {
            let z = layer.weight.matvec(&h).unwrap();
            let z = DenseVector::from_raw(
                z.as_slice().iter().zip(layer.bias.as_slice()).map(|(a, b)| a + b).collect(),
            );
            acc = layer.weight.matmul(&acc).unwrap();
            if l + 1 < layers.len() {
                let d = DenseMatrix::from_fn(z.len(), z.len(), |i, j| {
                    if i == j && z[i] > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                });
                acc = d.matmul(&acc).unwrap();
                h = z.map(|v| v.max(0.0));
            }
        }
        acc.into_vec()
    }

    #[test]
    fn single_affine_layer_gradient_is_weight() {
        let layer = Affine {
            weight: DenseMatrix::from_rows(&[[0.5, -2.0, 3.0]]).unwrap(),
            bias: DenseVector::new(vec![4.0]).unwrap(),
        };
        let x = DenseVector::new(vec![1.0, 1.0, -1.0]).unwrap();
        let g = input_gradient(std::slice::from_ref(&layer), &x).unwrap();
        assert_eq!(g.as_slice(), &[0.5, -2.0, 3.0]);
    }

    #[test]
    fn dead_network_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut layers = random_chain(&[3, 4, 1], &mut rng);
        layers[0].bias = DenseVector::filled(4, -100.0);
        let x = DenseVector::new(vec![0.1, -0.2, 0.3]).unwrap();
        let g = input_gradient(&layers, &x).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reverse_mode_matches_mask_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let layers = random_chain(&[6, 8, 5, 1], &mut rng);
            let x = DenseVector::from_raw((0..6).map(|_| rng.random_range(-2.0..2.0)).collect());
            let g = input_gradient(&layers, &x).unwrap();
            let oracle = mask_product(&layers, &x);
            for (a, b) in g.as_slice().iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn penalty_gradient_of_linear_critic() {
        // f(x) = aᵀx: penalty (‖a‖ − 1)², gradient 2(‖a‖ − 1) a / ‖a‖
        let a = [0.3, -1.2, 2.0];
        let layer = Affine {
            weight: DenseMatrix::from_rows(&[a]).unwrap(),
            bias: DenseVector::zeros(1),
        };
        let x = DenseVector::new(vec![0.4, 0.1, -0.7]).unwrap();
        let (value, grads) = grad_of_input_grad_norm(std::slice::from_ref(&layer), &x).unwrap();
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((value - (norm - 1.0).powi(2)).abs() < 1e-14);
        let g = grads.get(weight_id(0)).unwrap();
        for (gi, ai) in g.as_slice().iter().zip(&a) {
            assert!((gi - 2.0 * (norm - 1.0) * ai / norm).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_norm_critic_has_zero_penalty_gradient() {
        let layer = Affine {
            weight: DenseMatrix::from_rows(&[[0.6, 0.8]]).unwrap(),
            bias: DenseVector::zeros(1),
        };
        let x = DenseVector::new(vec![1.0, 2.0]).unwrap();
        let (value, grads) = grad_of_input_grad_norm(std::slice::from_ref(&layer), &x).unwrap();
        assert!(value.abs() < 1e-15);
        assert!(grads.get(weight_id(0)).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn zero_input_gradient_uses_zero_subgradient() {
        let layer = Affine {
            weight: DenseMatrix::zeros(1, 2),
            bias: DenseVector::zeros(1),
        };
        let x = DenseVector::new(vec![1.0, 2.0]).unwrap();
        let (value, grads) = grad_of_input_grad_norm(std::slice::from_ref(&layer), &x).unwrap();
        assert_eq!(value, 1.0);
        assert_eq!(grads.get(weight_id(0)).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn rejects_non_scalar_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layers = random_chain(&[3, 2], &mut rng);
        let x = DenseVector::zeros(3);
        assert!(input_gradient(&layers, &x).is_err());
    }

    #[test]
    fn forward_matches_vector_replay() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let layers = random_chain(&[4, 6, 6, 3], &mut rng);
        let x = DenseVector::from_raw((0..4).map(|_| rng.random_range(-1.0..1.0)).collect());
        let mut h = x.clone();
        for (l, layer) in layers.iter().enumerate() {
            let z = layer.weight.matvec(&h).unwrap();
            h = DenseVector::from_raw(
                z.as_slice().iter().zip(layer.bias.as_slice()).map(|(a, b)| a + b).collect(),
            );
            if l + 1 < layers.len() {
                h = h.map(|v| v.max(0.0));
            }
        }
        let out = forward(&layers, &x).unwrap();
        for (a, b) in out.as_slice().iter().zip(h.as_slice()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}
