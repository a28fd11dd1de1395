//! Hosts (discriminators), pathogens (generators) and one-epoch adversarial
//! training.

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{DataSource, DATA_DIM};
use crate::fitness::InfectionState;
use crate::linalg::Matrix;
use crate::nn::{adam_step, init_network, Activation, AdamConfig, AdamState, LayerSpec, NetworkParams, NnError, OutputGrad};
use crate::rng::SeededStream;

/// Decision threshold on discriminator output for both error rates.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IndividualId(pub u32);

impl fmt::Display for IndividualId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Host,
    Pathogen,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    Base,
    /// Half the hidden width of `Base`.
    Light,
    /// `Base` widths with PReLU hidden activations.
    Prelu,
}

impl VariantName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Base => "base",
            Self::Light => "light",
            Self::Prelu => "prelu",
        }
    }
}

/// Discriminator architecture variant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchVariant {
    pub name: VariantName,
    pub hidden_width: usize,
}

impl ArchVariant {
    pub fn new(name: VariantName, base_width: usize) -> Self {
        let hidden_width = match name {
            VariantName::Light => (base_width / 2).max(1),
            VariantName::Base | VariantName::Prelu => base_width,
        };
        Self { name, hidden_width }
    }

    pub fn hidden_activation(&self) -> Activation {
        match self.name {
            VariantName::Base | VariantName::Light => Activation::leaky_relu(),
            VariantName::Prelu => Activation::prelu(),
        }
    }
}

/// Learner sizes. Defaults: latent 16, three hidden layers of 64 in both nets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub latent_dim: usize,
    pub generator_hidden_width: usize,
    pub generator_hidden_layers: usize,
    /// Hidden width of the `base` discriminator variant.
    pub discriminator_base_width: usize,
    pub discriminator_hidden_layers: usize,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            generator_hidden_width: 64,
            generator_hidden_layers: 3,
            discriminator_base_width: 64,
            discriminator_hidden_layers: 3,
        }
    }
}

impl ArchitectureConfig {
    pub fn is_valid(&self) -> bool {
        self.latent_dim > 0
            && self.generator_hidden_width > 0
            && self.generator_hidden_layers > 0
            && self.discriminator_base_width > 1
            && self.discriminator_hidden_layers > 0
    }

    pub fn variant(&self, name: VariantName) -> ArchVariant {
        ArchVariant::new(name, self.discriminator_base_width)
    }

    /// ReLU hidden layers, identity output into data space.
    pub fn generator_layers(&self) -> Vec<LayerSpec> {
        let w = self.generator_hidden_width;
        let mut layers = Vec::with_capacity(self.generator_hidden_layers + 1);
        layers.push(LayerSpec::new(self.latent_dim, w, Activation::Relu));
        for _ in 1..self.generator_hidden_layers {
            layers.push(LayerSpec::new(w, w, Activation::Relu));
        }
        layers.push(LayerSpec::new(w, DATA_DIM, Activation::Identity));
        layers
    }

    /// Variant hidden activations, sigmoid scalar output.
    pub fn discriminator_layers(&self, variant: &ArchVariant) -> Vec<LayerSpec> {
        let w = variant.hidden_width;
        let act = variant.hidden_activation();
        let mut layers = Vec::with_capacity(self.discriminator_hidden_layers + 1);
        layers.push(LayerSpec::new(DATA_DIM, w, act));
        for _ in 1..self.discriminator_hidden_layers {
            layers.push(LayerSpec::new(w, w, act));
        }
        layers.push(LayerSpec::new(w, 1, Activation::Sigmoid));
        layers
    }
}

/// A host or a pathogen with its network, optimizer and bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub id: IndividualId,
    pub role: Role,
    /// Hosts only.
    pub variant: Option<ArchVariant>,
    pub net: NetworkParams,
    pub optimizer: AdamState,
    pub fitness: f64,
    /// Pathogens infecting this host; always empty for pathogens.
    pub infection: InfectionState,
    /// Most recent autoimmunity error measured for this host.
    pub last_err_real: Option<f64>,
    pub epochs_trained: u64,
}

impl Individual {
    pub fn is_host(&self) -> bool {
        self.role == Role::Host
    }

    pub fn latent_dim(&self) -> usize {
        self.net.input_width()
    }

    /// Standard-normal latent batch, row by row.
    pub fn sample_latents(&self, n: usize, stream: &mut SeededStream) -> Matrix {
        let mut z = Matrix::zeros(n, self.latent_dim());
        for v in z.as_mut_slice() {
            *v = stream.normal();
        }
        z
    }

    /// `n` generated samples from fresh latents. Pathogens only.
    pub fn generate(&self, n: usize, latents: &mut SeededStream) -> Result<Matrix, NnError> {
        debug_assert_eq!(self.role, Role::Pathogen);
        let z = self.sample_latents(n, latents);
        self.net.predict(&z)
    }

    /// Probability that each row is real. Hosts only.
    pub fn discriminate(&self, x: &Matrix) -> Result<Matrix, NnError> {
        debug_assert_eq!(self.role, Role::Host);
        self.net.predict(x)
    }
}

pub fn build_generator(id: IndividualId, seed: u64, arch: &ArchitectureConfig, adam: AdamConfig) -> Individual {
    let net = init_network(&arch.generator_layers(), seed).expect("generator layer chain is valid by construction");
    Individual {
        id,
        role: Role::Pathogen,
        variant: None,
        optimizer: AdamState::new(&net, adam),
        net,
        fitness: 0.0,
        infection: InfectionState::new(id),
        last_err_real: None,
        epochs_trained: 0,
    }
}

pub fn build_discriminator(
    id: IndividualId,
    variant: ArchVariant,
    seed: u64,
    arch: &ArchitectureConfig,
    adam: AdamConfig,
) -> Individual {
    let net = init_network(&arch.discriminator_layers(&variant), seed)
        .expect("discriminator layer chain is valid by construction");
    Individual {
        id,
        role: Role::Host,
        variant: Some(variant),
        optimizer: AdamState::new(&net, adam),
        net,
        fitness: 1.0,
        infection: InfectionState::new(id),
        last_err_real: None,
        epochs_trained: 0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub batches_per_epoch: usize,
    pub generator_adam: AdamConfig,
    pub discriminator_adam: AdamConfig,
    /// Leave the host's parameters untouched (the 5% rule).
    #[serde(skip)]
    pub skip_discriminator: bool,
    /// Leave the pathogen's parameters untouched; evaluation harnesses only.
    #[serde(skip)]
    pub skip_generator: bool,
}

impl Default for TrainConfig {
    /// DCGAN optimizer convention: Adam, learning rate 2e-4, beta1 0.5.
    fn default() -> Self {
        let adam = AdamConfig { learning_rate: 2e-4, beta1: 0.5, beta2: 0.999, epsilon: 1e-8 };
        Self {
            batch_size: 64,
            batches_per_epoch: 128,
            generator_adam: adam,
            discriminator_adam: adam,
            skip_discriminator: false,
            skip_generator: false,
        }
    }
}

impl TrainConfig {
    pub fn samples_per_epoch(&self) -> usize {
        self.batch_size * self.batches_per_epoch
    }
}

/// Outcome of one (host, pathogen) training epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub host_id: IndividualId,
    pub pathogen_id: IndividualId,
    pub population_index: usize,
    pub epoch_index: usize,
    pub skip_discriminator: bool,
    pub err_real: f64,
    pub err_gen: f64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub host_fitness_after: f64,
    pub pathogen_fitness_after: f64,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite loss at batch {batch} (d_loss {d_loss}, g_loss {g_loss})")]
    NonFiniteLoss { batch: usize, d_loss: f64, g_loss: f64 },
    #[error("expected a host and a pathogen")]
    RoleMismatch,
    #[error("batch_size and batches_per_epoch must be positive")]
    EmptyEpoch,
    #[error("n_eval must be at least 1")]
    EmptyEvaluation,
    #[error(transparent)]
    Network(#[from] NnError),
}

/// `log(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-x.abs()))
}

fn stack_rows(top: &Matrix, bottom: &Matrix) -> Matrix {
    let mut data = Vec::with_capacity(top.as_slice().len() + bottom.as_slice().len());
    data.extend_from_slice(top.as_slice());
    data.extend_from_slice(bottom.as_slice());
    Matrix::from_vec(top.rows() + bottom.rows(), top.cols(), data)
}

/// Error counts over one batch: real rows judged fake, generated rows judged real.
fn count_errors(probs_real: impl Iterator<Item = f64>, probs_fake: impl Iterator<Item = f64>) -> (usize, usize) {
    let real = probs_real.filter(|p| *p < DECISION_THRESHOLD).count();
    let fake = probs_fake.filter(|p| *p >= DECISION_THRESHOLD).count();
    (real, fake)
}

/// Draws one minibatch: `n` real rows first, then `n` latent vectors.
fn draw_minibatch(pathogen: &Individual, data: &mut DataSource, latents: &mut SeededStream, n: usize) -> (Matrix, Matrix) {
    let real = data.draw(n);
    let z = pathogen.sample_latents(n, latents);
    (real, z)
}

/// One epoch of alternating updates: discriminator on binary cross-entropy
/// (real = 1, generated = 0), then generator on the non-saturating loss.
///
/// The error rates are counted on the discriminator's pre-update outputs of
/// each minibatch and averaged over the epoch. Fitness fields of the returned
/// record hold the individuals' current fitness; callers that track fitness
/// overwrite them.
pub fn train_epoch(
    host: &mut Individual,
    pathogen: &mut Individual,
    data: &mut DataSource,
    latents: &mut SeededStream,
    cfg: &TrainConfig,
    epoch_index: usize,
) -> Result<MatchRecord, TrainError> {
    if host.role != Role::Host || pathogen.role != Role::Pathogen {
        return Err(TrainError::RoleMismatch);
    }
    if cfg.batch_size == 0 || cfg.batches_per_epoch == 0 {
        return Err(TrainError::EmptyEpoch);
    }
    let b = cfg.batch_size;
    let inv_b = 1.0 / b as f64;
    let (mut real_errors, mut gen_errors) = (0usize, 0usize);
    let (mut d_loss_sum, mut g_loss_sum) = (0.0, 0.0);

    for batch in 0..cfg.batches_per_epoch {
        let (real, z) = draw_minibatch(pathogen, data, latents, b);
        let g_cache = pathogen.net.forward(&z)?;
        let fake = g_cache.output().clone();

        // Discriminator step on [real; fake].
        let d_cache = host.net.forward(&stack_rows(&real, &fake))?;
        let probs = d_cache.output().as_slice();
        let logits = d_cache.output_preactivation().as_slice();
        let (re, ge) = count_errors(probs[..b].iter().copied(), probs[b..].iter().copied());
        real_errors += re;
        gen_errors += ge;
        let d_loss = inv_b * (logits[..b].iter().map(|&l| softplus(-l)).sum::<f64>()
            + logits[b..].iter().map(|&l| softplus(l)).sum::<f64>());
        if !cfg.skip_discriminator {
            let dlogits: Vec<f64> = probs
                .iter()
                .enumerate()
                .map(|(i, p)| (p - if i < b { 1.0 } else { 0.0 }) * inv_b)
                .collect();
            let dlogits = Matrix::from_vec(2 * b, 1, dlogits);
            let pass = host.net.backward_full(&d_cache, OutputGrad::PreActivation(&dlogits), false)?;
            adam_step(&mut host.net, &pass.gradients, &mut host.optimizer)?;
        }

        // Generator step through the (possibly updated) discriminator.
        let d_fake = host.net.forward(&fake)?;
        let fake_logits = d_fake.output_preactivation().as_slice();
        let g_loss = inv_b * fake_logits.iter().map(|&l| softplus(-l)).sum::<f64>();
        if !(d_loss.is_finite() && g_loss.is_finite()) {
            return Err(TrainError::NonFiniteLoss { batch, d_loss, g_loss });
        }
        if !cfg.skip_generator {
            let dlogits: Vec<f64> = d_fake.output().as_slice().iter().map(|p| (p - 1.0) * inv_b).collect();
            let dlogits = Matrix::from_vec(b, 1, dlogits);
            let through_d = host.net.backward_full(&d_fake, OutputGrad::PreActivation(&dlogits), true)?;
            let grad_fake = through_d.input_grad.expect("input gradient requested");
            let g_grads = pathogen.net.backward(&g_cache, &grad_fake)?;
            adam_step(&mut pathogen.net, &g_grads, &mut pathogen.optimizer)?;
        }
        d_loss_sum += d_loss;
        g_loss_sum += g_loss;
    }

    host.epochs_trained += 1;
    pathogen.epochs_trained += 1;
    let total = cfg.samples_per_epoch() as f64;
    let batches = cfg.batches_per_epoch as f64;
    Ok(MatchRecord {
        host_id: host.id,
        pathogen_id: pathogen.id,
        population_index: 0,
        epoch_index,
        skip_discriminator: cfg.skip_discriminator,
        err_real: real_errors as f64 / total,
        err_gen: gen_errors as f64 / total,
        d_loss: d_loss_sum / batches,
        g_loss: g_loss_sum / batches,
        host_fitness_after: host.fitness,
        pathogen_fitness_after: pathogen.fitness,
    })
}

/// Evaluation-only error rates over `n_eval` real and `n_eval` generated
/// samples, drawn in minibatches of `batch_size` exactly as [`train_epoch`]
/// draws them.
pub fn measure_errors(
    host: &Individual,
    pathogen: &Individual,
    data: &mut DataSource,
    latents: &mut SeededStream,
    n_eval: usize,
    batch_size: usize,
) -> Result<(f64, f64), TrainError> {
    if host.role != Role::Host || pathogen.role != Role::Pathogen {
        return Err(TrainError::RoleMismatch);
    }
    if n_eval == 0 || batch_size == 0 {
        return Err(TrainError::EmptyEvaluation);
    }
    let (mut real_errors, mut gen_errors) = (0usize, 0usize);
    let mut remaining = n_eval;
    while remaining > 0 {
        let n = remaining.min(batch_size);
        let (real, z) = draw_minibatch(pathogen, data, latents, n);
        let fake = pathogen.net.predict(&z)?;
        let probs = host.net.predict(&stack_rows(&real, &fake))?;
        let p = probs.as_slice();
        let (re, ge) = count_errors(p[..n].iter().copied(), p[n..].iter().copied());
        real_errors += re;
        gen_errors += ge;
        remaining -= n;
    }
    Ok((real_errors as f64 / n_eval as f64, gen_errors as f64 / n_eval as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::MixtureSpec;

    fn arch() -> ArchitectureConfig {
        ArchitectureConfig::default()
    }

    #[test]
    fn generator_is_deterministic() {
        let a = build_generator(IndividualId(0), 9, &arch(), AdamConfig::default());
        let b = build_generator(IndividualId(0), 9, &arch(), AdamConfig::default());
        assert_eq!(a.net, b.net);
        let c = build_generator(IndividualId(0), 10, &arch(), AdamConfig::default());
        assert_ne!(a.net, c.net);
    }

    #[test]
    fn generator_output_shape() {
        let g = build_generator(IndividualId(0), 1, &arch(), AdamConfig::default());
        let x = g.generate(37, &mut SeededStream::new(2)).unwrap();
        assert_eq!((x.rows(), x.cols()), (37, 2));
        assert_eq!(g.latent_dim(), 16);
        assert_eq!(g.net.layers().len(), 4);
    }

    #[test]
    fn discriminator_variants() {
        let a = arch();
        let base = build_discriminator(IndividualId(0), a.variant(VariantName::Base), 1, &a, AdamConfig::default());
        let light = build_discriminator(IndividualId(1), a.variant(VariantName::Light), 1, &a, AdamConfig::default());
        let prelu = build_discriminator(IndividualId(2), a.variant(VariantName::Prelu), 1, &a, AdamConfig::default());
        assert!(light.net.param_count() < base.net.param_count());
        assert_eq!(light.variant.unwrap().hidden_width, 32);
        for (lb, lp) in base.net.layers().iter().zip(prelu.net.layers()) {
            assert_eq!(lb.weights().len(), lp.weights().len());
            assert_eq!(lb.biases().len(), lp.biases().len());
        }
        // one slope per hidden layer
        assert_eq!(prelu.net.param_count(), base.net.param_count() + 3);
        assert!(matches!(prelu.net.layers()[0].spec().activation, Activation::Prelu { .. }));
        assert!(matches!(base.net.layers()[1].spec().activation, Activation::LeakyRelu { slope } if slope == 0.2));
    }

    #[test]
    fn discriminator_output_in_unit_interval() {
        let a = arch();
        let d = build_discriminator(IndividualId(0), a.variant(VariantName::Base), 5, &a, AdamConfig::default());
        let x = Matrix::from_rows(&[[0.0, 0.0], [100.0, -100.0], [-1e4, 3.0], [2.0, 2.0]]);
        for p in d.discriminate(&x).unwrap().as_slice() {
            assert!((0.0..=1.0).contains(p), "{p}");
        }
    }

    #[test]
    fn untrained_generator_is_centered() {
        let g = build_generator(IndividualId(0), 3, &arch(), AdamConfig::default());
        let x = g.generate(10_000, &mut SeededStream::new(4)).unwrap();
        for c in 0..2 {
            let m: f64 = (0..x.rows()).map(|r| x[(r, c)]).sum::<f64>() / x.rows() as f64;
            assert!(m.abs() < 0.5, "column {c} mean {m}");
        }
    }

    #[test]
    fn skip_discriminator_leaves_host_untouched() {
        let a = arch();
        let mut host = build_discriminator(IndividualId(0), a.variant(VariantName::Light), 1, &a, AdamConfig::default());
        let mut path = build_generator(IndividualId(1), 2, &a, AdamConfig::default());
        let before = host.net.clone();
        let gen_before = path.net.clone();
        let mut data = DataSource::new(MixtureSpec::default(), 3).unwrap();
        let cfg = TrainConfig { batches_per_epoch: 4, skip_discriminator: true, ..TrainConfig::default() };
        let rec = train_epoch(&mut host, &mut path, &mut data, &mut SeededStream::new(4), &cfg, 0).unwrap();
        assert_eq!(host.net.to_flat(), before.to_flat());
        assert_ne!(path.net.to_flat(), gen_before.to_flat());
        assert!(rec.skip_discriminator);
        assert_eq!((host.epochs_trained, path.epochs_trained), (1, 1));
    }

    #[test]
    fn epoch_consumes_exact_sample_counts() {
        let a = arch();
        let mut host = build_discriminator(IndividualId(0), a.variant(VariantName::Base), 1, &a, AdamConfig::default());
        let mut path = build_generator(IndividualId(1), 2, &a, AdamConfig::default());
        let mut data = DataSource::new(MixtureSpec::default(), 3).unwrap();
        let mut latents = SeededStream::new(4);
        let cfg = TrainConfig { batch_size: 16, batches_per_epoch: 5, ..TrainConfig::default() };
        train_epoch(&mut host, &mut path, &mut data, &mut latents, &cfg, 0).unwrap();
        assert_eq!(data.samples_drawn(), 80);
        // each latent coordinate is one Box-Muller normal = two words
        assert_eq!(latents.counter(), 80 * 16 * 2);
    }

    #[test]
    fn role_mismatch_rejected() {
        let a = arch();
        let mut g1 = build_generator(IndividualId(0), 1, &a, AdamConfig::default());
        let mut g2 = build_generator(IndividualId(1), 2, &a, AdamConfig::default());
        let mut data = DataSource::new(MixtureSpec::default(), 3).unwrap();
        let r = train_epoch(&mut g1, &mut g2, &mut data, &mut SeededStream::new(1), &TrainConfig::default(), 0);
        assert_eq!(r, Err(TrainError::RoleMismatch));
    }
}
