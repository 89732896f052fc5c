//! Structured regularizers on the generator, their subgradients, truncation,
//! and the expand-then-shrink schedule for the penalty weights.
//!
//! * `M(B) = Σ_i ‖B[i,:]‖₂` (row groups of the input map),
//! * `P(θ) = Σ_{l=1}^{L-1} ‖A_l − I‖₁ + ‖c_l‖₁` (hidden layers toward identity),
//! * `Q(θ) = ‖θ‖₁` over all `A_l`, `c_l` (not `B`).
//!
//! Subgradients take the zero element wherever a penalty is not
//! differentiable, so entries sitting exactly at their target stay there.

use crate::error::{Error, Result};
use crate::nets::{generator_bias_id, generator_weight_id, GeneratorModel, INPUT_MAP_ID};
use crate::numcore::{Affine, DenseMatrix, DenseVector, Gradients};

/// Penalty weights and truncation thresholds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenaltyConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub tau1: f64,
    pub tau2: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            tau1: 0.01,
            tau2: 0.01,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda1, self.lambda2, self.lambda3, self.tau1, self.tau2];
        if all.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Contract(format!(
                "penalty weights and thresholds must be finite and nonnegative: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn is_unpenalized(&self) -> bool {
        self.lambda1 == 0.0 && self.lambda2 == 0.0 && self.lambda3 == 0.0
    }
}

/// Position in the penalty-weight schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleState {
    /// Expansion factor applied during the first half (> 1).
    pub delta1: f64,
    /// Shrinkage factor applied during the second half (in (0, 1)).
    pub delta2: f64,
    /// Interval Δ between changes.
    pub interval: usize,
    /// Total number of iterations T.
    pub total: usize,
    /// Current iteration t, counted from 0.
    pub t: usize,
}

impl ScheduleState {
    pub fn new(delta1: f64, delta2: f64, interval: usize, total: usize) -> Result<Self> {
        let s = Self {
            delta1,
            delta2,
            interval,
            total,
            t: 0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta1 > 1.0) || !(self.delta2 > 0.0 && self.delta2 < 1.0) || self.interval == 0 {
            return Err(Error::Contract(format!(
                "schedule needs delta1 > 1, 0 < delta2 < 1, interval >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn at(mut self, t: usize) -> Self {
        self.t = t;
        self
    }

    /// Whether `t` falls in the second half of training.
    pub fn in_second_half(&self) -> bool {
        2 * self.t >= self.total
    }

    pub fn on_boundary(&self) -> bool {
        self.t.is_multiple_of(self.interval)
    }
}

/// Penalty weights to use from iteration `s.t` on.
///
/// At multiples of Δ every λ is multiplied by δ₁ during the first half
/// (`t < T/2`) and by δ₂ afterwards; other iterations leave them unchanged.
pub fn schedule_step(cfg: &PenaltyConfig, s: &ScheduleState) -> PenaltyConfig {
    if !s.on_boundary() || s.t > s.total {
        return *cfg;
    }
    let factor = if s.in_second_half() { s.delta2 } else { s.delta1 };
    PenaltyConfig {
        lambda1: cfg.lambda1 * factor,
        lambda2: cfg.lambda2 * factor,
        lambda3: cfg.lambda3 * factor,
        ..*cfg
    }
}

/// `M(B)`: sum of Euclidean row norms.
pub fn group_row_penalty(b: &DenseMatrix) -> f64 {
    b.row_norms().iter().sum()
}

/// Subgradient of `M` at `B`: `B[i,:]/‖B[i,:]‖` per nonzero row, zero rows stay zero.
pub fn group_row_subgradient(b: &DenseMatrix) -> DenseMatrix {
    let norms = b.row_norms();
    let mut out = DenseMatrix::zeros(b.rows(), b.cols());
    for (i, &n) in norms.iter().enumerate() {
        if n > 0.0 {
            for (o, v) in out.row_mut(i).iter_mut().zip(b.row(i)) {
                *o = v / n;
            }
        }
    }
    out
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn hidden_layers(layers: &[Affine]) -> Result<&[Affine]> {
    let depth = layers.len().saturating_sub(1);
    let hidden = if depth >= 2 { &layers[1..depth] } else { &[] };
    for (l, layer) in hidden.iter().enumerate() {
        if layer.in_dim() != layer.out_dim() {
            return Err(Error::Contract(format!(
                "depth penalty needs square hidden layers; layer {} is {}x{}",
                l + 1,
                layer.out_dim(),
                layer.in_dim()
            )));
        }
    }
    Ok(hidden)
}

/// `P(θ)` over hidden layers `1..L-1`.
pub fn depth_penalty(layers: &[Affine]) -> Result<f64> {
    let mut total = 0.0;
    for layer in hidden_layers(layers)? {
        let n = layer.in_dim();
        for i in 0..n {
            for (j, &a) in layer.weight.row(i).iter().enumerate() {
                total += (a - if i == j { 1.0 } else { 0.0 }).abs();
            }
        }
        total += layer.bias.as_slice().iter().map(|c| c.abs()).sum::<f64>();
    }
    Ok(total)
}

/// Subgradient of `P`; one `(dA_l, dc_l)` per layer, zero outside `1..L-1`.
pub fn depth_subgradient(layers: &[Affine]) -> Result<Vec<(DenseMatrix, DenseVector)>> {
    hidden_layers(layers)?;
    let depth = layers.len().saturating_sub(1);
    Ok(layers
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            if l == 0 || l >= depth {
                return (
                    DenseMatrix::zeros(layer.out_dim(), layer.in_dim()),
                    DenseVector::zeros(layer.out_dim()),
                );
            }
            let da = DenseMatrix::from_fn(layer.out_dim(), layer.in_dim(), |i, j| {
                sign(layer.weight.get(i, j) - if i == j { 1.0 } else { 0.0 })
            });
            (da, layer.bias.map(sign))
        })
        .collect())
}

/// `Q(θ)`: entrywise L1 norm of every weight and bias.
pub fn sparsity_penalty(layers: &[Affine]) -> f64 {
    layers
        .iter()
        .map(|l| {
            l.weight.as_slice().iter().map(|v| v.abs()).sum::<f64>()
                + l.bias.as_slice().iter().map(|v| v.abs()).sum::<f64>()
        })
        .sum()
}

/// Subgradient of `Q`: elementwise sign with `sign(0) = 0`.
pub fn sparsity_subgradient(layers: &[Affine]) -> Vec<(DenseMatrix, DenseVector)> {
    layers
        .iter()
        .map(|l| (l.weight.map(sign), l.bias.map(sign)))
        .collect()
}

/// Values of the three penalties at one generator.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PenaltyValues {
    pub group: f64,
    pub depth: f64,
    pub sparsity: f64,
}

impl PenaltyValues {
    pub fn of(g: &GeneratorModel) -> Result<Self> {
        Ok(Self {
            group: group_row_penalty(&g.input_map),
            depth: depth_penalty(&g.layers)?,
            sparsity: sparsity_penalty(&g.layers),
        })
    }

    /// `λ₁M + λ₂P + λ₃Q`.
    pub fn weighted(&self, cfg: &PenaltyConfig) -> f64 {
        cfg.lambda1 * self.group + cfg.lambda2 * self.depth + cfg.lambda3 * self.sparsity
    }
}

/// Adds the subgradient of `λ₁M(B) + λ₂P(θ) + λ₃Q(θ)` to generator gradients
/// and returns the penalty values.
pub fn add_regularizer_subgradient(
    g: &GeneratorModel,
    cfg: &PenaltyConfig,
    grads: &mut Gradients,
    include_input_map: bool,
) -> Result<PenaltyValues> {
    let values = PenaltyValues::of(g)?;
    if include_input_map && cfg.lambda1 != 0.0 {
        grads.accumulate(INPUT_MAP_ID, cfg.lambda1, &group_row_subgradient(&g.input_map))?;
    }
    if cfg.lambda2 != 0.0 {
        for (l, (da, dc)) in depth_subgradient(&g.layers)?.into_iter().enumerate() {
            grads.accumulate(generator_weight_id(l), cfg.lambda2, &da)?;
            grads.accumulate(generator_bias_id(l), cfg.lambda2, &DenseMatrix::row_vector(&dc))?;
        }
    }
    if cfg.lambda3 != 0.0 {
        for (l, (da, dc)) in sparsity_subgradient(&g.layers).into_iter().enumerate() {
            grads.accumulate(generator_weight_id(l), cfg.lambda3, &da)?;
            grads.accumulate(generator_bias_id(l), cfg.lambda3, &DenseMatrix::row_vector(&dc))?;
        }
    }
    Ok(values)
}

/// Zeroes every row of `B` whose Euclidean norm is at most `tau1`.
pub fn truncate_rows(b: &DenseMatrix, tau1: f64) -> DenseMatrix {
    let mut out = b.clone();
    truncate_rows_in_place(&mut out, tau1);
    out
}

/// In-place [`truncate_rows`]; returns the indices of rows that were zeroed.
pub fn truncate_rows_in_place(b: &mut DenseMatrix, tau1: f64) -> Vec<usize> {
    let norms = b.row_norms();
    let mut zeroed = Vec::new();
    for (i, n) in norms.into_iter().enumerate() {
        if n <= tau1 {
            b.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
            zeroed.push(i);
        }
    }
    zeroed
}

/// Zeroes every weight and bias entry with `|entry| <= tau2`.
pub fn truncate_params(layers: &[Affine], tau2: f64) -> Vec<Affine> {
    let mut out = layers.to_vec();
    truncate_params_in_place(&mut out, tau2);
    out
}

/// In-place [`truncate_params`]; returns how many entries were set to zero.
pub fn truncate_params_in_place(layers: &mut [Affine], tau2: f64) -> usize {
    let mut count = 0;
    let mut cut = |v: &mut f64| {
        if v.abs() <= tau2 {
            if *v != 0.0 {
                count += 1;
            }
            *v = 0.0;
        }
    };
    for l in layers.iter_mut() {
        l.weight.as_mut_slice().iter_mut().for_each(&mut cut);
        l.bias.as_mut_slice().iter_mut().for_each(&mut cut);
    }
    count
}
