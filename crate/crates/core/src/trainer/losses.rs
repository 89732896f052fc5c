use crate::error::{shape, Error, Result};
use crate::nets::{DiscriminatorModel, GeneratorModel, Regularization};
use crate::numcore::{record_forward, record_input_gradients, DenseMatrix, GradTape, Gradients, Var};
use crate::penalties::{add_regularizer_subgradient, PenaltyConfig, PenaltyValues};

/// Critic objective value, its parts, and gradients keyed by critic parameter id.
#[derive(Clone, Debug)]
pub struct CriticLoss {
    pub value: f64,
    /// `mean f(fake) − mean f(real)`.
    pub adversarial: f64,
    /// Mean `(‖∇f(x̂)‖ − 1)²` over interpolates; zero outside gradient-penalty mode.
    pub gradient_penalty: f64,
    pub grads: Gradients,
}

/// Generator objective value, its parts, and gradients keyed by generator parameter id.
#[derive(Clone, Debug)]
pub struct GeneratorLoss {
    pub value: f64,
    /// `−mean f(g(BZ))`.
    pub adversarial: f64,
    pub penalties: PenaltyValues,
    pub grads: Gradients,
}

/// Interpolates `u_i x_i + (1 − u_i) x̃_i`, one mixing weight per row.
pub fn interpolate(real: &DenseMatrix, fake: &DenseMatrix, mix: &[f64]) -> Result<DenseMatrix> {
    real.check_same_shape(fake, "interpolate")?;
    if mix.len() != real.rows() {
        return Err(shape(
            "interpolate",
            format!("{} mixing weights for {} rows", mix.len(), real.rows()),
        ));
    }
    let mut out = fake.clone();
    for (i, &u) in mix.iter().enumerate() {
        for (o, r) in out.row_mut(i).iter_mut().zip(real.row(i)) {
            *o = u * r + (1.0 - u) * *o;
        }
    }
    Ok(out)
}

/// Critic loss `−[mean f(X) − mean f(X̃)]`, plus in gradient-penalty mode
/// `gp_weight · mean (‖∇_x f(x̂)‖₂ − 1)²` over interpolates built from `mix`.
///
/// Minimizing it ascends the critic's adversarial objective. Activation masks
/// at the interpolates are held fixed when differentiating the penalty.
pub fn discriminator_loss(
    dm: &DiscriminatorModel,
    real: &DenseMatrix,
    fake: &DenseMatrix,
    gp_weight: f64,
    mix: &[f64],
) -> Result<CriticLoss> {
    if real.shape() != fake.shape() {
        return Err(shape(
            "discriminator_loss",
            format!("real batch {:?} vs fake batch {:?}", real.shape(), fake.shape()),
        ));
    }
    let b = real.rows();
    if b == 0 {
        return Err(Error::Contract("empty critic batch".into()));
    }
    let mut tape = GradTape::new();
    let weights = dm.record_weights(&mut tape, true)?;

    // real and fake share one pass: rows 0..b real, b..2b fake
    let mut both = DenseMatrix::zeros(2 * b, real.cols());
    both.as_mut_slice()[..real.len()].copy_from_slice(real.as_slice());
    both.as_mut_slice()[real.len()..].copy_from_slice(fake.as_slice());
    let x = tape.constant(both);
    let out = record_forward(&mut tape, &weights, x)?;
    let inv_b = 1.0 / b as f64;
    let signs = DenseMatrix::from_fn(2 * b, 1, |i, _| if i < b { -inv_b } else { inv_b });
    let adversarial = tape.dot_const(out, signs)?;
    let adversarial_value = tape.scalar(adversarial);

    let (loss, penalty_value) = match dm.mode {
        Regularization::SpectralNorm => (adversarial, 0.0),
        Regularization::GradientPenalty => {
            let xhat = interpolate(real, fake, mix)?;
            let masks = dm.masks(&xhat)?;
            let ws: Vec<Var> = weights.iter().map(|w| w.0).collect();
            let g = record_input_gradients(&mut tape, &ws, &masks, b)?;
            let norms = tape.row_norms(g);
            let dev = tape.add_scalar(norms, -1.0);
            let sq = tape.square(dev);
            let penalty = tape.mean(sq);
            let penalty_value = tape.scalar(penalty);
            let weighted = tape.scale(penalty, gp_weight);
            (tape.add(adversarial, weighted)?, penalty_value)
        }
    };
    let value = tape.scalar(loss);
    let grads = tape.backward(loss)?;
    Ok(CriticLoss {
        value,
        adversarial: adversarial_value,
        gradient_penalty: penalty_value,
        grads,
    })
}

/// Generator loss `−mean f(g(BZ)) + λ₁M(B) + λ₂P(θ) + λ₃Q(θ)`.
///
/// With `train_input_map = false`, `B` is held constant and gets no gradient
/// (and no group penalty gradient).
pub fn generator_loss(
    g: &GeneratorModel,
    dm: &DiscriminatorModel,
    noise: &DenseMatrix,
    cfg: &PenaltyConfig,
    train_input_map: bool,
) -> Result<GeneratorLoss> {
    if noise.cols() != g.input_dim() {
        return Err(shape(
            "generator_loss",
            format!("noise width {} for d = {}", noise.cols(), g.input_dim()),
        ));
    }
    if noise.rows() == 0 {
        return Err(Error::Contract("empty noise batch".into()));
    }
    let mut tape = GradTape::new();
    let z = tape.constant(noise.clone());
    let fake = g.record(&mut tape, z, train_input_map)?;
    let critic = dm.record_weights(&mut tape, false)?;
    let scores = record_forward(&mut tape, &critic, fake)?;
    let mean = tape.mean(scores);
    let loss = tape.scale(mean, -1.0);
    let adversarial = tape.scalar(loss);
    let mut grads = tape.backward(loss)?;
    let penalties = add_regularizer_subgradient(g, cfg, &mut grads, train_input_map)?;
    let value = adversarial + penalties.weighted(cfg);
    Ok(GeneratorLoss {
        value,
        adversarial,
        penalties,
        grads,
    })
}
