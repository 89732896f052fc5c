use std::io::Write;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::adam::{AdamConfig, AdamState};
use super::losses::{discriminator_loss, generator_loss};
use crate::error::{Error, Result};
use crate::data::TRAINING_STREAM;
use crate::metrics::estimated_dim;
use crate::nets::{DiscriminatorModel, GeneratorModel, Regularization};
use crate::numcore::{DenseMatrix, Gradients, ParamId};
use crate::penalties::{
    schedule_step, truncate_params_in_place, truncate_rows_in_place, PenaltyConfig,
    PenaltyValues, ScheduleState,
};

/// When parameters are hard-truncated during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TruncationPolicy {
    /// Never truncate.
    Never,
    /// Every Δ iterations in the second half of training, and once after the last update.
    SecondHalf,
}

/// Everything the training loop needs besides data and initial models.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Critic updates per generator update (k).
    pub critic_steps: usize,
    pub batch_size: usize,
    /// Generator updates T.
    pub updates: usize,
    pub gp_weight: f64,
    pub mode: Regularization,
    /// Initial penalty weights λ⁽⁰⁾ and thresholds.
    pub penalty: PenaltyConfig,
    pub delta1: f64,
    pub delta2: f64,
    /// Schedule and truncation interval Δ.
    pub interval: usize,
    pub seed: u64,
    pub truncation: TruncationPolicy,
    pub adam: AdamConfig,
    /// When false, `B` stays at its initial value.
    pub train_input_map: bool,
    pub log_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            critic_steps: 5,
            batch_size: 512,
            updates: 20_000,
            gp_weight: 10.0,
            mode: Regularization::SpectralNorm,
            penalty: PenaltyConfig::default(),
            delta1: 1.1,
            delta2: 0.9,
            interval: 100,
            seed: 0,
            truncation: TruncationPolicy::SecondHalf,
            adam: AdamConfig::default(),
            train_input_map: true,
            log_interval: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.critic_steps == 0 || self.batch_size == 0 || self.log_interval == 0 {
            return Err(Error::Contract(
                "critic steps, batch size and log interval must be at least 1".into(),
            ));
        }
        if !(self.gp_weight >= 0.0) {
            return Err(Error::Contract("gradient penalty weight must be nonnegative".into()));
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && a.epsilon > 0.0)
            || !(0.0..1.0).contains(&a.beta1)
            || !(0.0..1.0).contains(&a.beta2)
        {
            return Err(Error::Contract(
                "Adam needs positive learning rate and epsilon, and betas in [0, 1)".into(),
            ));
        }
        self.penalty.validate()?;
        self.schedule().validate()
    }

    pub fn schedule(&self) -> ScheduleState {
        ScheduleState {
            delta1: self.delta1,
            delta2: self.delta2,
            interval: self.interval,
            total: self.updates,
            t: 0,
        }
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub iteration: usize,
    pub critic_loss: f64,
    pub generator_loss: f64,
    pub group: f64,
    pub depth: f64,
    pub sparsity: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub nonzero_rows: usize,
}

pub const LOG_HEADER: [&str; 10] = [
    "iteration",
    "critic_loss",
    "generator_loss",
    "group_penalty",
    "depth_penalty",
    "sparsity_penalty",
    "lambda1",
    "lambda2",
    "lambda3",
    "nonzero_rows",
];

/// Writes the training log as CSV.
pub fn write_training_log(path: impl AsRef<Path>, history: &[LogRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{}", LOG_HEADER.join(","))?;
    for r in history {
        writeln!(
            w,
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{}",
            r.iteration,
            r.critic_loss,
            r.generator_loss,
            r.group,
            r.depth,
            r.sparsity,
            r.lambda1,
            r.lambda2,
            r.lambda3,
            r.nonzero_rows
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Output of [`train`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub generator: GeneratorModel,
    pub discriminator: DiscriminatorModel,
    pub history: Vec<LogRecord>,
    /// Penalty weights in effect at the end of training.
    pub final_penalty: PenaltyConfig,
}

/// Adversarial training state: models, optimizers and the current penalty weights.
///
/// [`Trainer::critic_step`] and [`Trainer::generator_step`] take explicit
/// minibatches; [`Trainer::run`] draws them from the seeded RNG.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub generator: GeneratorModel,
    pub discriminator: DiscriminatorModel,
    pub penalty: PenaltyConfig,
    config: TrainConfig,
    gen_adam: AdamState,
    critic_adam: AdamState,
    rng: ChaCha8Rng,
    history: Vec<LogRecord>,
    last_critic_loss: f64,
}

fn grad_slices<'a>(grads: &'a Gradients, lens: &[usize], zeros: &'a [f64], offset: usize) -> Vec<&'a [f64]> {
    lens.iter()
        .enumerate()
        .map(|(i, &n)| match grads.get(ParamId(i + offset)) {
            Some(g) => g.as_slice(),
            None => &zeros[..n],
        })
        .collect()
}

fn training_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TRAINING_STREAM);
    rng
}

impl Trainer {
    pub fn new(config: TrainConfig, generator: GeneratorModel, discriminator: DiscriminatorModel) -> Result<Self> {
        config.validate()?;
        generator.validate()?;
        discriminator.validate()?;
        if discriminator.mode != config.mode {
            return Err(Error::Contract(format!(
                "config mode {} but discriminator mode {}",
                config.mode, discriminator.mode
            )));
        }
        if discriminator.input_dim() != generator.output_dim() {
            return Err(Error::Contract(format!(
                "generator emits {} values, critic expects {}",
                generator.output_dim(),
                discriminator.input_dim()
            )));
        }
        let gen_adam = AdamState::new(config.adam, &generator.param_lens());
        let critic_adam = AdamState::new(config.adam, &discriminator.param_lens());
        Ok(Self {
            penalty: config.penalty,
            rng: training_rng(config.seed),
            config,
            generator,
            discriminator,
            gen_adam,
            critic_adam,
            history: Vec::new(),
            last_critic_loss: f64::NAN,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn history(&self) -> &[LogRecord] {
        &self.history
    }

    pub fn generator(&self) -> &GeneratorModel {
        &self.generator
    }

    pub fn discriminator(&self) -> &DiscriminatorModel {
        &self.discriminator
    }

    /// The current models and log, as [`Trainer::run`] would return them.
    pub fn into_model(self) -> TrainedModel {
        TrainedModel {
            generator: self.generator,
            discriminator: self.discriminator,
            history: self.history,
            final_penalty: self.penalty,
        }
    }

    /// One critic update on the given real batch and noise.
    ///
    /// In spectral-norm mode one power-iteration step runs first. `mix` holds
    /// one interpolation weight per row and is only read in gradient-penalty mode.
    pub fn critic_step(&mut self, real: &DenseMatrix, noise: &DenseMatrix, mix: &[f64]) -> Result<f64> {
        if self.discriminator.mode == Regularization::SpectralNorm {
            self.discriminator.power_iteration_step();
        }
        let fake = self.generator.forward_batch(noise)?;
        let loss = discriminator_loss(&self.discriminator, real, &fake, self.config.gp_weight, mix)?;
        let lens = self.discriminator.param_lens();
        let zeros = vec![0.0; lens.iter().copied().max().unwrap_or(0)];
        let grads = grad_slices(&loss.grads, &lens, &zeros, 0);
        let mut params = self.discriminator.param_slices_mut();
        self.critic_adam.step(&mut params, &grads)?;
        self.last_critic_loss = loss.value;
        Ok(loss.value)
    }

    /// One generator update, including the penalty subgradients.
    pub fn generator_step(&mut self, noise: &DenseMatrix) -> Result<f64> {
        let train_b = self.config.train_input_map;
        let loss = generator_loss(&self.generator, &self.discriminator, noise, &self.penalty, train_b)?;
        let lens = self.generator.param_lens();
        let zeros = vec![0.0; lens.iter().copied().max().unwrap_or(0)];
        let grads = grad_slices(&loss.grads, &lens, &zeros, 0);
        if train_b {
            let mut params = self.generator.param_slices_mut();
            self.gen_adam.step(&mut params, &grads)?;
            self.generator.apply_input_map_cap();
        } else {
            // B frozen: give it a zero gradient so its moments stay at zero
            let mut grads = grads;
            grads[0] = &zeros[..lens[0]];
            let mut params = self.generator.param_slices_mut();
            self.gen_adam.step(&mut params, &grads)?;
        }
        Ok(loss.value)
    }

    /// Truncates `B` rows with τ₁ and θ entries with τ₂, resetting Adam moments of zeroed entries.
    pub fn truncate(&mut self) {
        if self.config.train_input_map {
            truncate_rows_in_place(&mut self.generator.input_map, self.penalty.tau1);
        }
        truncate_params_in_place(&mut self.generator.layers, self.penalty.tau2);
        let mut idx = 0;
        if self.config.train_input_map {
            self.gen_adam.reset_zeroed(0, self.generator.input_map.as_slice());
        }
        idx += 1;
        for layer in &self.generator.layers {
            self.gen_adam.reset_zeroed(idx, layer.weight.as_slice());
            self.gen_adam.reset_zeroed(idx + 1, layer.bias.as_slice());
            idx += 2;
        }
    }

    fn sample_noise(&mut self, rows: usize) -> DenseMatrix {
        let d = self.generator.input_dim();
        let rng = &mut self.rng;
        DenseMatrix::from_fn(rows, d, |_, _| rng.sample(StandardNormal))
    }

    fn sample_real(&mut self, data: &DenseMatrix) -> DenseMatrix {
        let idx = sample_indices(&mut self.rng, data.rows(), self.config.batch_size).into_vec();
        data.select_rows(&idx)
    }

    fn log(&mut self, iteration: usize, generator_loss: f64) -> Result<()> {
        let v = PenaltyValues::of(&self.generator)?;
        self.history.push(LogRecord {
            iteration,
            critic_loss: self.last_critic_loss,
            generator_loss,
            group: v.group,
            depth: v.depth,
            sparsity: v.sparsity,
            lambda1: self.penalty.lambda1,
            lambda2: self.penalty.lambda2,
            lambda3: self.penalty.lambda3,
            nonzero_rows: estimated_dim(&self.generator.input_map),
        });
        Ok(())
    }

    /// Runs the full loop on `data` (one sample per row).
    ///
    /// Per iteration `t`: update the penalty weights on schedule; `k` critic
    /// steps, each drawing a real batch, a noise batch and (gradient-penalty
    /// mode) mixing weights in that order; one generator step on fresh noise;
    /// truncation per policy.
    pub fn run(mut self, data: &DenseMatrix) -> Result<TrainedModel> {
        let b = self.config.batch_size;
        if data.rows() < b {
            return Err(Error::Contract(format!(
                "{} training samples for batch size {b}",
                data.rows()
            )));
        }
        if data.cols() != self.generator.output_dim() {
            return Err(Error::Contract(format!(
                "data has {} columns, generator emits {}",
                data.cols(),
                self.generator.output_dim()
            )));
        }
        let total = self.config.updates;
        let schedule = self.config.schedule();
        let gp = self.discriminator.mode == Regularization::GradientPenalty;
        for t in 0..total {
            self.penalty = schedule_step(&self.penalty, &schedule.at(t));
            for _ in 0..self.config.critic_steps {
                let real = self.sample_real(data);
                let noise = self.sample_noise(b);
                let mix: Vec<f64> = if gp {
                    (0..b).map(|_| self.rng.random::<f64>()).collect()
                } else {
                    Vec::new()
                };
                let loss = self.critic_step(&real, &noise, &mix)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        iteration: t,
                        term: "critic loss",
                    });
                }
            }
            let noise = self.sample_noise(b);
            let gen_loss = self.generator_step(&noise)?;
            if !gen_loss.is_finite() {
                return Err(Error::Diverged {
                    iteration: t,
                    term: "generator loss",
                });
            }
            let st = schedule.at(t);
            if self.config.truncation == TruncationPolicy::SecondHalf
                && st.in_second_half()
                && st.on_boundary()
            {
                self.truncate();
            }
            if t + 1 == total && self.config.truncation != TruncationPolicy::Never {
                self.truncate();
            }
            if t % self.config.log_interval == 0 || t + 1 == total {
                self.log(t, gen_loss)?;
            }
        }
        Ok(self.into_model())
    }
}

/// Trains `gen` against `dm` on `data`; deterministic given `cfg.seed`.
pub fn train(
    data: &DenseMatrix,
    cfg: &TrainConfig,
    gen: GeneratorModel,
    dm: DiscriminatorModel,
) -> Result<TrainedModel> {
    Trainer::new(cfg.clone(), gen, dm)?.run(data)
}
