//! Pathogen propagation structures: who trains against whom, in what order,
//! under an exact epoch budget.
//!
//! Every structure is written once as a driver over an [`Arena`]. The
//! training arena runs real epochs; the dry-run arena only records the
//! directives, which is how budgets are checked without training.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::adversarial::{
    build_discriminator, build_generator, measure_errors, train_epoch, ArchVariant, ArchitectureConfig, Individual,
    IndividualId, MatchRecord, TrainConfig, TrainError, VariantName,
};
use crate::data::{DataError, DataSource, MixtureSpec};
use crate::fitness::{host_fitness, pathogen_fitness, should_train_host, FitnessError, FitnessParams};
use crate::metrics::{score_generator, MetricsError, DEFAULT_EVAL_SAMPLES};
use crate::rng::{derive_seed, SeededStream};

const TAG_PATHOGEN: u64 = 0x5041_5448;
const TAG_HOST: u64 = 0x484f_5354;
const TAG_DATA: u64 = 0x4441_5441;
const TAG_LATENT: u64 = 0x4c41_5445;
const TAG_SCHEDULE: u64 = 0x5343_4845;
const TAG_SCORE: u64 = 0x5343_4f52;
const TAG_MEASURE: u64 = 0x4d45_4153;

/// Host architectures of successive populations in heterogeneous structures.
pub const HETERO_ORDER: [VariantName; 3] = [VariantName::Light, VariantName::Prelu, VariantName::Base];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureKind {
    StandardRr,
    StochasticRr,
    JumpRr,
    HeteroJumpRr,
    EvolutionHetero,
    Reference,
}

impl StructureKind {
    pub const ALL: [StructureKind; 6] = [
        Self::StandardRr,
        Self::StochasticRr,
        Self::JumpRr,
        Self::HeteroJumpRr,
        Self::EvolutionHetero,
        Self::Reference,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::StandardRr => "standard_rr",
            Self::StochasticRr => "stochastic_rr",
            Self::JumpRr => "jump_rr",
            Self::HeteroJumpRr => "hetero_jump_rr",
            Self::EvolutionHetero => "evolution_hetero",
            Self::Reference => "reference",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == name)
    }

    /// The four round-robin structures without a selection phase.
    pub fn is_round_robin(self) -> bool {
        matches!(self, Self::StandardRr | Self::StochasticRr | Self::JumpRr | Self::HeteroJumpRr)
    }
}

impl fmt::Display for StructureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Shape and budget of one propagation structure. Fields a structure does
/// not use are ignored by it and keep their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawStructureSpec")]
pub struct StructureSpec {
    pub kind: StructureKind,
    pub hosts_per_population: usize,
    pub n_pathogens: usize,
    pub n_populations: usize,
    /// Full cross-match rounds (standard round-robin).
    pub rounds: usize,
    /// Additional cross-match rounds for the last population (jump structures).
    pub extra_rounds: usize,
    /// Random matches after the first round (stochastic round-robin).
    pub random_matches: usize,
    /// Roulette matches per population (evolutionary structure).
    pub evo_epochs_per_step: usize,
    /// Epochs each pair trains for (reference).
    pub epochs_per_pair: usize,
    /// Must equal [`closed_form_budget`](Self::closed_form_budget).
    pub epoch_budget: usize,
    pub rng_seed: u64,
}

/// Config-file form: everything but `kind` defaults per kind.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStructureSpec {
    kind: StructureKind,
    hosts_per_population: Option<usize>,
    n_pathogens: Option<usize>,
    n_populations: Option<usize>,
    rounds: Option<usize>,
    extra_rounds: Option<usize>,
    random_matches: Option<usize>,
    evo_epochs_per_step: Option<usize>,
    epochs_per_pair: Option<usize>,
    epoch_budget: Option<usize>,
    rng_seed: Option<u64>,
}

impl From<RawStructureSpec> for StructureSpec {
    fn from(raw: RawStructureSpec) -> Self {
        let d = StructureSpec::defaults(raw.kind);
        let mut spec = StructureSpec {
            kind: raw.kind,
            hosts_per_population: raw.hosts_per_population.unwrap_or(d.hosts_per_population),
            n_pathogens: raw.n_pathogens.unwrap_or(d.n_pathogens),
            n_populations: raw.n_populations.unwrap_or(d.n_populations),
            rounds: raw.rounds.unwrap_or(d.rounds),
            extra_rounds: raw.extra_rounds.unwrap_or(d.extra_rounds),
            random_matches: raw.random_matches.unwrap_or(d.random_matches),
            evo_epochs_per_step: raw.evo_epochs_per_step.unwrap_or(d.evo_epochs_per_step),
            epochs_per_pair: raw.epochs_per_pair.unwrap_or(d.epochs_per_pair),
            epoch_budget: 0,
            rng_seed: raw.rng_seed.unwrap_or(d.rng_seed),
        };
        // An omitted budget means "whatever the shape costs"; a stated one is
        // checked by `validate`.
        spec.epoch_budget = raw.epoch_budget.unwrap_or_else(|| spec.closed_form_budget());
        spec
    }
}

impl StructureSpec {
    /// Published sizes: 75, 75, 125, 125, 72 and 150 epochs.
    pub fn defaults(kind: StructureKind) -> Self {
        let mut spec = StructureSpec {
            kind,
            hosts_per_population: 5,
            n_pathogens: 5,
            n_populations: 1,
            rounds: 1,
            extra_rounds: 0,
            random_matches: 0,
            evo_epochs_per_step: 0,
            epochs_per_pair: 0,
            epoch_budget: 0,
            rng_seed: 0,
        };
        match kind {
            StructureKind::StandardRr => spec.rounds = 3,
            StructureKind::StochasticRr => spec.random_matches = 50,
            StructureKind::JumpRr | StructureKind::HeteroJumpRr => {
                spec.n_populations = 3;
                spec.extra_rounds = 2;
            }
            StructureKind::EvolutionHetero => {
                spec.hosts_per_population = 3;
                spec.n_pathogens = 4;
                spec.n_populations = 3;
                spec.evo_epochs_per_step = 12;
            }
            StructureKind::Reference => {
                spec.hosts_per_population = 10;
                spec.n_pathogens = 10;
                spec.epochs_per_pair = 15;
            }
        }
        spec.epoch_budget = spec.closed_form_budget();
        spec
    }

    /// Epochs the structure consumes given its shape.
    pub fn closed_form_budget(&self) -> usize {
        let cross = self.hosts_per_population * self.n_pathogens;
        match self.kind {
            StructureKind::StandardRr => self.rounds * cross,
            StructureKind::StochasticRr => cross + self.random_matches,
            StructureKind::JumpRr | StructureKind::HeteroJumpRr => cross * (self.n_populations + self.extra_rounds),
            StructureKind::EvolutionHetero => self.n_populations * (cross + self.evo_epochs_per_step),
            StructureKind::Reference => self.n_pathogens * self.epochs_per_pair,
        }
    }

    pub fn validate(&self) -> Result<(), PropagationError> {
        if self.hosts_per_population == 0 || self.n_pathogens == 0 {
            return Err(PropagationError::InvalidSpec(format!("{}: populations must be non-empty", self.kind)));
        }
        let populated = matches!(
            self.kind,
            StructureKind::JumpRr | StructureKind::HeteroJumpRr | StructureKind::EvolutionHetero
        );
        if populated && self.n_populations == 0 {
            return Err(PropagationError::InvalidSpec(format!("{}: n_populations must be at least 1", self.kind)));
        }
        if self.kind == StructureKind::Reference && self.hosts_per_population != self.n_pathogens {
            return Err(PropagationError::InvalidSpec(format!(
                "reference: pairs need equal host and pathogen counts ({} vs {})",
                self.hosts_per_population, self.n_pathogens
            )));
        }
        let expected = self.closed_form_budget();
        if self.epoch_budget != expected {
            return Err(PropagationError::BudgetMismatch { kind: self.kind, expected, found: self.epoch_budget });
        }
        Ok(())
    }

    /// Host architecture of population `index`.
    pub fn population_variant(&self, index: usize) -> VariantName {
        match self.kind {
            StructureKind::HeteroJumpRr | StructureKind::EvolutionHetero => HETERO_ORDER[index % HETERO_ORDER.len()],
            _ => VariantName::Base,
        }
    }

    fn population_count(&self) -> usize {
        match self.kind {
            StructureKind::JumpRr | StructureKind::HeteroJumpRr | StructureKind::EvolutionHetero => self.n_populations,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    CrossMatch,
    Random,
    Evolution,
    Pair,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::CrossMatch => "cross_match",
            Self::Random => "random",
            Self::Evolution => "evolution",
            Self::Pair => "pair",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchDirective {
    pub host_id: IndividualId,
    pub pathogen_id: IndividualId,
    pub population_index: usize,
    pub skip_discriminator: bool,
    pub phase: Phase,
}

/// Realized sequence of matches.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub directives: Vec<MatchDirective>,
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.directives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directives.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum PropagationError {
    #[error("{kind}: epoch_budget is {found} but the structure costs {expected}")]
    BudgetMismatch { kind: StructureKind, expected: usize, found: usize },
    #[error("invalid structure: {0}")]
    InvalidSpec(String),
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("schedule realized {found} matches, budget is {expected}")]
    BudgetOverrun { expected: usize, found: usize },
    #[error("training failed: {0}")]
    Train(#[from] TrainError),
    #[error(transparent)]
    Fitness(#[from] FitnessError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Index into a fitness vector chosen with probability `w[i] / Σw`. Returns
/// `true` in the second slot when the weights were unusable and a uniform
/// draw was taken instead.
pub fn roulette(weights: &[f64], stream: &mut SeededStream) -> (usize, bool) {
    assert!(!weights.is_empty(), "roulette over an empty population");
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) || weights.iter().any(|w| !(*w >= 0.0)) {
        return (stream.below(weights.len()), true);
    }
    let target = stream.uniform() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return (i, false);
        }
    }
    // Rounding can leave `target` just above the running sum.
    let last = weights.iter().rposition(|w| *w > 0.0).unwrap_or(weights.len() - 1);
    (last, false)
}

/// What a structure driver needs from its environment.
pub trait Arena {
    /// Replaces the host population with a naive one.
    fn begin_population(&mut self, index: usize, variant: VariantName) -> Result<(), PropagationError>;
    fn host_ids(&self) -> Vec<IndividualId>;
    fn pathogen_ids(&self) -> Vec<IndividualId>;
    fn host_fitness(&self) -> Vec<f64>;
    fn pathogen_fitness(&self) -> Vec<f64>;
    /// The learning-deficit rule for the next match of this pair.
    fn skip_discriminator(&self, host: IndividualId, pathogen: IndividualId) -> Result<bool, PropagationError>;
    fn play(&mut self, directive: MatchDirective) -> Result<(), PropagationError>;
    /// Called when roulette had to fall back to uniform sampling.
    fn note_fallback(&mut self) {}
}

/// Runs `spec` against `arena`. Schedule randomness comes from `stream`.
pub fn drive<A: Arena>(spec: &StructureSpec, arena: &mut A, stream: &mut SeededStream) -> Result<(), PropagationError> {
    spec.validate()?;
    let directive = |h, p, pop, skip, phase| MatchDirective {
        host_id: h,
        pathogen_id: p,
        population_index: pop,
        skip_discriminator: skip,
        phase,
    };
    match spec.kind {
        StructureKind::Reference => {
            arena.begin_population(0, VariantName::Base)?;
            let hosts = arena.host_ids();
            for (h, p) in hosts.into_iter().zip(arena.pathogen_ids()) {
                for _ in 0..spec.epochs_per_pair {
                    arena.play(directive(h, p, 0, false, Phase::Pair))?;
                }
            }
        }
        _ => {
            let populations = spec.population_count();
            for pop in 0..populations {
                arena.begin_population(pop, spec.population_variant(pop))?;
                let rounds = match spec.kind {
                    StructureKind::StandardRr => spec.rounds,
                    StructureKind::JumpRr | StructureKind::HeteroJumpRr if pop + 1 == populations => {
                        1 + spec.extra_rounds
                    }
                    _ => 1,
                };
                let hosts = arena.host_ids();
                let pathogens = arena.pathogen_ids();
                for _ in 0..rounds {
                    for &p in &pathogens {
                        for &h in &hosts {
                            arena.play(directive(h, p, pop, false, Phase::CrossMatch))?;
                        }
                    }
                }
                match spec.kind {
                    StructureKind::StochasticRr => {
                        for _ in 0..spec.random_matches {
                            let h = hosts[stream.below(hosts.len())];
                            let p = pathogens[stream.below(pathogens.len())];
                            arena.play(directive(h, p, pop, false, Phase::Random))?;
                        }
                    }
                    StructureKind::EvolutionHetero => {
                        for _ in 0..spec.evo_epochs_per_step {
                            let (hi, hf) = roulette(&arena.host_fitness(), stream);
                            let (pi, pf) = roulette(&arena.pathogen_fitness(), stream);
                            for fallback in [hf, pf] {
                                if fallback {
                                    arena.note_fallback();
                                }
                            }
                            let (h, p) = (hosts[hi], pathogens[pi]);
                            let skip = arena.skip_discriminator(h, p)?;
                            arena.play(directive(h, p, pop, skip, Phase::Evolution))?;
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    Ok(())
}

/// Records directives without training; every fitness is 1 and no host is
/// ever skipped.
#[derive(Debug)]
struct DryArena {
    hosts_per_population: usize,
    pathogens: Vec<IndividualId>,
    hosts: Vec<IndividualId>,
    next_host_id: u32,
    schedule: Schedule,
}

impl Arena for DryArena {
    fn begin_population(&mut self, _index: usize, _variant: VariantName) -> Result<(), PropagationError> {
        self.hosts = (0..self.hosts_per_population)
            .map(|i| IndividualId(self.next_host_id + i as u32))
            .collect();
        self.next_host_id += self.hosts_per_population as u32;
        Ok(())
    }
    fn host_ids(&self) -> Vec<IndividualId> {
        self.hosts.clone()
    }
    fn pathogen_ids(&self) -> Vec<IndividualId> {
        self.pathogens.clone()
    }
    fn host_fitness(&self) -> Vec<f64> {
        vec![1.0; self.hosts.len()]
    }
    fn pathogen_fitness(&self) -> Vec<f64> {
        vec![1.0; self.pathogens.len()]
    }
    fn skip_discriminator(&self, _: IndividualId, _: IndividualId) -> Result<bool, PropagationError> {
        Ok(false)
    }
    fn play(&mut self, directive: MatchDirective) -> Result<(), PropagationError> {
        self.schedule.directives.push(directive);
        Ok(())
    }
}

/// Pathogen ids are `0..n_pathogens`; host ids continue from there, one
/// fresh block per population.
pub fn plan(spec: &StructureSpec, run_seed: u64) -> Result<Schedule, PropagationError> {
    let mut arena = DryArena {
        hosts_per_population: spec.hosts_per_population,
        pathogens: (0..spec.n_pathogens as u32).map(IndividualId).collect(),
        hosts: Vec::new(),
        next_host_id: spec.n_pathogens as u32,
        schedule: Schedule::default(),
    };
    drive(spec, &mut arena, &mut schedule_stream(spec, run_seed))?;
    Ok(arena.schedule)
}

fn schedule_stream(spec: &StructureSpec, run_seed: u64) -> SeededStream {
    SeededStream::new(derive_seed(run_seed, TAG_SCHEDULE, spec.rng_seed))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorSource {
    /// Averages over the training minibatches of the match.
    #[default]
    Training,
    /// A separate evaluation pass after the match.
    Evaluation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Samples per side for every Fréchet score.
    pub n_eval: usize,
    /// Samples per side for error-measurement passes.
    pub error_samples: usize,
    pub error_source: ErrorSource,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_eval: DEFAULT_EVAL_SAMPLES, error_samples: 1024, error_source: ErrorSource::Training }
    }
}

/// Everything one run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub structure: StructureSpec,
    pub training: TrainConfig,
    pub architecture: ArchitectureConfig,
    pub fitness: FitnessParams,
    pub mixture: MixtureSpec,
    pub eval: EvalConfig,
    pub seed: u64,
}

impl RunConfig {
    pub fn new(structure: StructureSpec, seed: u64) -> Self {
        Self {
            structure,
            training: TrainConfig::default(),
            architecture: ArchitectureConfig::default(),
            fitness: FitnessParams::default(),
            mixture: MixtureSpec::default(),
            eval: EvalConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), PropagationError> {
        self.structure.validate()?;
        self.fitness.validate()?;
        self.mixture.validate()?;
        if self.training.batch_size == 0 || self.training.batches_per_epoch == 0 {
            return Err(PropagationError::InvalidConfig("batch_size and batches_per_epoch must be positive".into()));
        }
        if !self.training.generator_adam.is_valid() || !self.training.discriminator_adam.is_valid() {
            return Err(PropagationError::InvalidConfig("invalid Adam hyper-parameters".into()));
        }
        if !self.architecture.is_valid() {
            return Err(PropagationError::InvalidConfig("architecture sizes must be positive".into()));
        }
        if self.eval.n_eval < crate::metrics::MIN_EVAL_SAMPLES {
            return Err(PropagationError::Metrics(MetricsError::EvalTooSmall(self.eval.n_eval)));
        }
        if self.eval.error_samples == 0 {
            return Err(PropagationError::InvalidConfig("eval.error_samples must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    /// Matches completed in the run when the score was taken.
    pub epoch: usize,
    pub fd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub pathogen_id: IndividualId,
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn best(&self) -> f64 {
        self.points.iter().map(|p| p.fd).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitnessEventKind {
    /// Measurement pass when a naive population arrives.
    Measurement,
    Match,
}

/// One fitness evaluation with its inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitnessEvent {
    pub epoch: usize,
    pub kind: FitnessEventKind,
    pub host_id: IndividualId,
    pub pathogen_id: IndividualId,
    pub err_real: f64,
    pub err_gen: f64,
    pub infected: bool,
    pub host_infections: usize,
    pub host_fitness: f64,
    pub pathogen_fitness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub structure: StructureSpec,
    pub seed: u64,
    pub schedule: Schedule,
    pub match_records: Vec<MatchRecord>,
    pub fitness_events: Vec<FitnessEvent>,
    pub fd_trajectories: Vec<Trajectory>,
    pub best_fd: f64,
    pub roulette_fallbacks: usize,
    /// Filled in by callers that can read a clock.
    #[serde(skip)]
    pub wallclock_seconds: f64,
}

impl RunResult {
    /// Best score of every pathogen, in id order.
    pub fn pathogen_best_fd(&self) -> Vec<f64> {
        self.fd_trajectories.iter().map(Trajectory::best).collect()
    }
}

/// Arena that trains real networks.
struct TrainingArena<'a> {
    cfg: &'a RunConfig,
    pathogens: Vec<Individual>,
    hosts: Vec<Individual>,
    next_host_id: u32,
    data: DataSource,
    latents: SeededStream,
    schedule: Schedule,
    records: Vec<MatchRecord>,
    events: Vec<FitnessEvent>,
    trajectories: Vec<Trajectory>,
    fallbacks: usize,
    score_seed: u64,
}

impl<'a> TrainingArena<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self, PropagationError> {
        let spec = &cfg.structure;
        let pathogens: Vec<Individual> = (0..spec.n_pathogens as u32)
            .map(|i| {
                let id = IndividualId(i);
                build_generator(
                    id,
                    derive_seed(cfg.seed, TAG_PATHOGEN, u64::from(i)),
                    &cfg.architecture,
                    cfg.training.generator_adam,
                )
            })
            .collect();
        let mut arena = Self {
            cfg,
            next_host_id: spec.n_pathogens as u32,
            hosts: Vec::new(),
            data: DataSource::new(cfg.mixture.clone(), derive_seed(cfg.seed, TAG_DATA, 0))?,
            latents: SeededStream::new(derive_seed(cfg.seed, TAG_LATENT, 0)),
            schedule: Schedule::default(),
            records: Vec::new(),
            events: Vec::new(),
            trajectories: pathogens.iter().map(|p| Trajectory { pathogen_id: p.id, points: Vec::new() }).collect(),
            pathogens,
            fallbacks: 0,
            score_seed: derive_seed(cfg.seed, TAG_SCORE, 0),
        };
        for i in 0..arena.pathogens.len() {
            arena.score(i)?;
        }
        Ok(arena)
    }

    fn score(&mut self, pathogen_index: usize) -> Result<(), PropagationError> {
        let fd = score_generator(&self.pathogens[pathogen_index], &self.cfg.mixture, self.cfg.eval.n_eval, self.score_seed)?;
        let epoch = self.records.len();
        self.trajectories[pathogen_index].points.push(TrajectoryPoint { epoch, fd });
        Ok(())
    }

    fn host_index(&self, id: IndividualId) -> usize {
        self.hosts.iter().position(|h| h.id == id).expect("directive names a live host")
    }

    fn pathogen_index(&self, id: IndividualId) -> usize {
        self.pathogens.iter().position(|p| p.id == id).expect("directive names a live pathogen")
    }

    fn measure(&mut self, h: usize, p: usize, tag: u64) -> Result<(f64, f64), PropagationError> {
        let seed = derive_seed(self.cfg.seed, TAG_MEASURE, tag);
        let mut data = self.data.fork(seed);
        let mut latents = SeededStream::new(seed);
        Ok(measure_errors(
            &self.hosts[h],
            &self.pathogens[p],
            &mut data,
            &mut latents,
            self.cfg.eval.error_samples,
            self.cfg.training.batch_size,
        )?)
    }

    /// Folds one (err_real, err_gen) observation into host and pathogen state.
    fn observe(
        &mut self,
        h: usize,
        p: usize,
        err_real: f64,
        err_gen: f64,
        kind: FitnessEventKind,
    ) -> Result<(), PropagationError> {
        let fp = &self.cfg.fitness;
        let pathogen_id = self.pathogens[p].id;
        let host = &mut self.hosts[h];
        let infected = host.infection.update(pathogen_id, err_gen, fp)?;
        host.last_err_real = Some(err_real);
        host.fitness = host_fitness(err_real, &host.infection.loads(), fp)?;
        let pf = pathogen_fitness(err_gen, fp)?;
        self.pathogens[p].fitness = pf;
        self.events.push(FitnessEvent {
            epoch: self.records.len(),
            kind,
            host_id: host.id,
            pathogen_id,
            err_real,
            err_gen,
            infected,
            host_infections: host.infection.infecting.len(),
            host_fitness: host.fitness,
            pathogen_fitness: pf,
        });
        Ok(())
    }
}

impl Arena for TrainingArena<'_> {
    fn begin_population(&mut self, index: usize, variant: VariantName) -> Result<(), PropagationError> {
        let cfg = self.cfg;
        let arch_variant: ArchVariant = cfg.architecture.variant(variant);
        self.hosts = (0..cfg.structure.hosts_per_population as u32)
            .map(|i| {
                let id = IndividualId(self.next_host_id + i);
                build_discriminator(
                    id,
                    arch_variant,
                    derive_seed(cfg.seed, TAG_HOST, u64::from(id.0)),
                    &cfg.architecture,
                    cfg.training.discriminator_adam,
                )
            })
            .collect();
        self.next_host_id += cfg.structure.hosts_per_population as u32;
        if cfg.structure.kind == StructureKind::EvolutionHetero {
            // Roulette needs defined weights before any match in this
            // population: measure every pair once.
            let (nh, np) = (self.hosts.len(), self.pathogens.len());
            let mut real_sum = vec![0.0; nh];
            let mut path_sum = vec![0.0; np];
            for p in 0..np {
                for h in 0..nh {
                    let tag = ((index as u64) << 32) | (h * np + p) as u64;
                    let (er, eg) = self.measure(h, p, tag)?;
                    self.observe(h, p, er, eg, FitnessEventKind::Measurement)?;
                    real_sum[h] += er;
                    path_sum[p] += self.pathogens[p].fitness;
                }
            }
            let fp = cfg.fitness;
            for (h, host) in self.hosts.iter_mut().enumerate() {
                let err_real = real_sum[h] / np as f64;
                host.last_err_real = Some(err_real);
                host.fitness = host_fitness(err_real, &host.infection.loads(), &fp)?;
            }
            for (p, path) in self.pathogens.iter_mut().enumerate() {
                path.fitness = path_sum[p] / nh as f64;
            }
        }
        Ok(())
    }

    fn host_ids(&self) -> Vec<IndividualId> {
        self.hosts.iter().map(|h| h.id).collect()
    }

    fn pathogen_ids(&self) -> Vec<IndividualId> {
        self.pathogens.iter().map(|p| p.id).collect()
    }

    fn host_fitness(&self) -> Vec<f64> {
        self.hosts.iter().map(|h| h.fitness).collect()
    }

    fn pathogen_fitness(&self) -> Vec<f64> {
        self.pathogens.iter().map(|p| p.fitness).collect()
    }

    fn skip_discriminator(&self, host: IndividualId, pathogen: IndividualId) -> Result<bool, PropagationError> {
        let h = &self.hosts[self.host_index(host)];
        let err_real = h.last_err_real.unwrap_or(0.0);
        let (without, with) = h.infection.marginal_fitness(err_real, pathogen, &self.cfg.fitness)?;
        Ok(!should_train_host(without, with, &self.cfg.fitness))
    }

    fn play(&mut self, directive: MatchDirective) -> Result<(), PropagationError> {
        let budget = self.cfg.structure.epoch_budget;
        if self.records.len() >= budget {
            return Err(PropagationError::BudgetOverrun { expected: budget, found: self.records.len() + 1 });
        }
        let h = self.host_index(directive.host_id);
        let p = self.pathogen_index(directive.pathogen_id);
        let cfg = TrainConfig { skip_discriminator: directive.skip_discriminator, ..self.cfg.training };
        let epoch_index = self.records.len();
        let mut record = train_epoch(
            &mut self.hosts[h],
            &mut self.pathogens[p],
            &mut self.data,
            &mut self.latents,
            &cfg,
            epoch_index,
        )?;
        if self.cfg.eval.error_source == ErrorSource::Evaluation {
            let (er, eg) = self.measure(h, p, (1u64 << 63) | epoch_index as u64)?;
            record.err_real = er;
            record.err_gen = eg;
        }
        self.observe(h, p, record.err_real, record.err_gen, FitnessEventKind::Match)?;
        record.population_index = directive.population_index;
        record.host_fitness_after = self.hosts[h].fitness;
        record.pathogen_fitness_after = self.pathogens[p].fitness;
        self.records.push(record);
        self.schedule.directives.push(directive);
        self.score(p)
    }

    fn note_fallback(&mut self) {
        self.fallbacks += 1;
    }
}

/// Trains one full run of `cfg.structure`.
pub fn execute(cfg: &RunConfig) -> Result<RunResult, PropagationError> {
    cfg.validate()?;
    let mut arena = TrainingArena::new(cfg)?;
    drive(&cfg.structure, &mut arena, &mut schedule_stream(&cfg.structure, cfg.seed))?;
    let budget = cfg.structure.epoch_budget;
    if arena.records.len() != budget {
        return Err(PropagationError::BudgetOverrun { expected: budget, found: arena.records.len() });
    }
    let best_fd = arena.trajectories.iter().map(Trajectory::best).fold(f64::INFINITY, f64::min);
    Ok(RunResult {
        structure: cfg.structure.clone(),
        seed: cfg.seed,
        schedule: arena.schedule,
        match_records: arena.records,
        fitness_events: arena.events,
        fd_trajectories: arena.trajectories,
        best_fd,
        roulette_fallbacks: arena.fallbacks,
        wallclock_seconds: 0.0,
    })
}

fn execute_kind(cfg: &RunConfig, kind: StructureKind) -> Result<RunResult, PropagationError> {
    if cfg.structure.kind != kind {
        return Err(PropagationError::InvalidConfig(format!("expected a {kind} structure, got {}", cfg.structure.kind)));
    }
    execute(cfg)
}

pub fn run_standard_rr(cfg: &RunConfig) -> Result<RunResult, PropagationError> {
    execute_kind(cfg, StructureKind::StandardRr)
}

pub fn run_stochastic_rr(cfg: &RunConfig) -> Result<RunResult, PropagationError> {
    execute_kind(cfg, StructureKind::StochasticRr)
}

pub fn run_jump_rr(cfg: &RunConfig) -> Result<RunResult, PropagationError> {
    execute_kind(cfg, StructureKind::JumpRr)
}

pub fn run_hetero_jump_rr(cfg: &RunConfig) -> Result<RunResult, PropagationError> {
    execute_kind(cfg, StructureKind::HeteroJumpRr)
}

pub fn run_evolution_hetero(cfg: &RunConfig) -> Result<RunResult, PropagationError> {
    execute_kind(cfg, StructureKind::EvolutionHetero)
}

pub fn run_reference(cfg: &RunConfig) -> Result<RunResult, PropagationError> {
    execute_kind(cfg, StructureKind::Reference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;

    #[test]
    fn default_budgets() {
        let budgets: Vec<usize> =
            StructureKind::ALL.iter().map(|k| StructureSpec::defaults(*k).closed_form_budget()).collect();
        assert_eq!(budgets, vec![75, 75, 125, 125, 72, 150]);
    }

    #[test]
    fn planned_lengths_match_budgets() {
        for kind in StructureKind::ALL {
            let spec = StructureSpec::defaults(kind);
            assert_eq!(plan(&spec, 1).unwrap().len(), spec.epoch_budget, "{kind}");
        }
    }

    #[test]
    fn budget_mismatch_is_a_config_error() {
        let mut spec = StructureSpec::defaults(StructureKind::StandardRr);
        spec.epoch_budget = 74;
        assert_eq!(
            plan(&spec, 0),
            Err(PropagationError::BudgetMismatch { kind: StructureKind::StandardRr, expected: 75, found: 74 })
        );
    }

    #[test]
    fn single_pair_three_rounds() {
        let mut spec = StructureSpec::defaults(StructureKind::StandardRr);
        spec.hosts_per_population = 1;
        spec.n_pathogens = 1;
        spec.epoch_budget = 3;
        let s = plan(&spec, 0).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.directives.iter().all(|d| d.host_id == IndividualId(1) && d.pathogen_id == IndividualId(0)));
    }

    #[test]
    fn cross_product_pathogen_major() {
        let mut spec = StructureSpec::defaults(StructureKind::StandardRr);
        spec.hosts_per_population = 2;
        spec.n_pathogens = 3;
        spec.rounds = 1;
        spec.epoch_budget = 6;
        let s = plan(&spec, 0).unwrap();
        let pairs: Vec<(u32, u32)> = s.directives.iter().map(|d| (d.pathogen_id.0, d.host_id.0)).collect();
        assert_eq!(pairs, vec![(0, 3), (0, 4), (1, 3), (1, 4), (2, 3), (2, 4)]);
    }

    #[test]
    fn stochastic_is_seeded() {
        let spec = StructureSpec::defaults(StructureKind::StochasticRr);
        assert_eq!(plan(&spec, 5).unwrap(), plan(&spec, 5).unwrap());
        assert_ne!(plan(&spec, 5).unwrap(), plan(&spec, 6).unwrap());
        let s = plan(&spec, 5).unwrap();
        assert!(s.directives[..25].iter().all(|d| d.phase == Phase::CrossMatch));
        assert!(s.directives[25..].iter().all(|d| d.phase == Phase::Random));
    }

    #[test]
    fn jump_populations_and_pairing_order() {
        let jump = plan(&StructureSpec::defaults(StructureKind::JumpRr), 3).unwrap();
        let hetero = plan(&StructureSpec::defaults(StructureKind::HeteroJumpRr), 3).unwrap();
        assert_eq!(jump, hetero);
        let per_pop: Vec<usize> =
            (0..3).map(|p| jump.directives.iter().filter(|d| d.population_index == p).count()).collect();
        assert_eq!(per_pop, vec![25, 25, 75]);
        // pathogens persist, hosts are replaced
        for p in 0..3 {
            let paths: BTreeSet<u32> =
                jump.directives.iter().filter(|d| d.population_index == p).map(|d| d.pathogen_id.0).collect();
            assert_eq!(paths, (0..5).collect());
        }
        let hosts: BTreeSet<u32> = jump.directives.iter().map(|d| d.host_id.0).collect();
        assert_eq!(hosts.len(), 15);
    }

    #[test]
    fn hetero_variant_order() {
        let spec = StructureSpec::defaults(StructureKind::HeteroJumpRr);
        let v: Vec<VariantName> = (0..3).map(|i| spec.population_variant(i)).collect();
        assert_eq!(v, vec![VariantName::Light, VariantName::Prelu, VariantName::Base]);
        let jump = StructureSpec::defaults(StructureKind::JumpRr);
        assert!((0..3).all(|i| jump.population_variant(i) == VariantName::Base));
    }

    #[test]
    fn evolution_phases() {
        let s = plan(&StructureSpec::defaults(StructureKind::EvolutionHetero), 2).unwrap();
        assert_eq!(s.len(), 72);
        for pop in 0..3 {
            let phases: Vec<Phase> =
                s.directives.iter().filter(|d| d.population_index == pop).map(|d| d.phase).collect();
            assert_eq!(phases.len(), 24);
            assert!(phases[..12].iter().all(|p| *p == Phase::CrossMatch));
            assert!(phases[12..].iter().all(|p| *p == Phase::Evolution));
        }
    }

    #[test]
    fn reference_pairs_are_exclusive() {
        let s = plan(&StructureSpec::defaults(StructureKind::Reference), 0).unwrap();
        assert_eq!(s.len(), 150);
        for d in &s.directives {
            assert_eq!(d.host_id.0, d.pathogen_id.0 + 10);
        }
    }

    #[test]
    fn roulette_uniform_and_fallback() {
        let mut s = SeededStream::new(1);
        assert_eq!(roulette(&[0.0, 5.0, 0.0], &mut s), (1, false));
        let (i, fell_back) = roulette(&[0.0, 0.0], &mut s);
        assert!(fell_back && i < 2);
        let mut counts = [0usize; 4];
        for _ in 0..4000 {
            counts[roulette(&[1.0; 4], &mut s).0] += 1;
        }
        assert!(counts.iter().all(|c| (*c as i64 - 1000).abs() < 100), "{counts:?}");
    }

    #[test]
    fn spec_from_partial_json() {
        let spec: StructureSpec = serde_json::from_str(r#"{"kind":"jump_rr"}"#).unwrap();
        assert_eq!(spec, StructureSpec::defaults(StructureKind::JumpRr));
        let spec: StructureSpec =
            serde_json::from_str(r#"{"kind":"standard_rr","hosts_per_population":2,"n_pathogens":2}"#).unwrap();
        assert_eq!(spec.epoch_budget, 12);
        let spec: StructureSpec = serde_json::from_str(r#"{"kind":"reference","epoch_budget":100}"#).unwrap();
        assert!(spec.validate().is_err());
        assert!(serde_json::from_str::<StructureSpec>(r#"{"kind":"standard_rr","bogus":1}"#).is_err());
    }
}
