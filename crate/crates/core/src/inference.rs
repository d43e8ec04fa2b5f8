//! Alternating optimisation: full-batch momentum gradient descent on the
//! continuous parameters with topic assignments held fixed, then one
//! resampling sweep of the assignments with θ and φ held fixed. Five descent
//! epochs plus one sweep make a pass.

use std::io::Write;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{rebuild_counts, Assignments, Corpus, ModelParams, TopicCounts};
use crate::error::{Error, Result};
use crate::model::{gradients, objective, Gradients, TrainingSet, VariantConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrPolicy {
    /// Plain momentum descent with a constant step.
    Fixed,
    /// Reject any epoch that raises the objective, halve the step and retry.
    HalveOnIncrease,
}

impl std::str::FromStr for LrPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(LrPolicy::Fixed),
            "halve-on-increase" => Ok(LrPolicy::HalveOnIncrease),
            _ => Err(Error::InvalidArgument(format!(
                "unknown lr policy {s:?} (expected fixed or halve-on-increase)"
            ))),
        }
    }
}

impl std::fmt::Display for LrPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LrPolicy::Fixed => "fixed",
            LrPolicy::HalveOnIncrease => "halve-on-increase",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub n_factors: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub passes: usize,
    pub epochs_per_pass: usize,
    pub seed: u64,
    /// Seed of the topic-sampling stream; derived from `seed` when unset.
    pub sampling_seed: Option<u64>,
    /// Standard deviation of the Gaussian used to initialise U, V, H and ψ.
    pub init_std: f64,
    pub variant: VariantConfig,
    pub lr_policy: LrPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_factors: 10,
            learning_rate: 0.0007,
            momentum: 0.8,
            passes: 50,
            epochs_per_pass: 5,
            seed: 0,
            sampling_seed: None,
            init_std: 0.1,
            variant: VariantConfig::mr3(0.5, 0.001, 0.05),
            lr_policy: LrPolicy::HalveOnIncrease,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.n_factors == 0 {
            return bad("number of factors must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.passes == 0 || self.epochs_per_pass == 0 {
            return bad("passes and epochs per pass must be at least 1");
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return bad("init_std must be finite and non-negative");
        }
        self.variant.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: Gradients,
    pub pass: usize,
    pub epoch: usize,
    /// Objective after every epoch, in order.
    pub history: Vec<f64>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        OptimizerState {
            velocity: Gradients::zeros_like(params),
            pass: 0,
            epoch: 0,
            history: Vec::new(),
        }
    }
}

/// One momentum step: `v ← momentum·v − lr·grad`, `p ← p + v`.
pub fn gd_step(
    params: &ModelParams,
    grads: &Gradients,
    state: &OptimizerState,
    lr: f64,
    momentum: f64,
) -> Result<(ModelParams, OptimizerState)> {
    if !grads.matches_shape(params) || !state.velocity.matches_shape(params) {
        return Err(Error::InvalidArgument(
            "gradient or velocity shape does not match parameters".into(),
        ));
    }
    let mut v = state.velocity.clone();
    let mut p = params.clone();

    macro_rules! step {
        ($field:ident) => {
            v.$field *= momentum;
            v.$field.scaled_add(-lr, &grads.$field);
            p.$field += &v.$field;
        };
    }
    step!(b_user);
    step!(b_item);
    step!(u);
    step!(v);
    step!(h);
    step!(psi);
    v.kappa = momentum * v.kappa - lr * grads.kappa;
    p.kappa += v.kappa;

    if !p.is_finite() {
        return Err(Error::NonFinite("parameter"));
    }
    Ok((
        p,
        OptimizerState {
            velocity: v,
            ..state.clone()
        },
    ))
}

/// Redraws every token's topic from `p(f) ∝ θ_(d,f) φ_(f,w)`.
///
/// `theta` is J×F and `phi` is F×L. One `u64` is taken from `rng` and each
/// document then uses its own derived stream, so the result does not depend
/// on how documents are spread over threads.
pub fn sample_assignments<R: Rng + ?Sized>(
    theta: &Array2<f64>,
    phi: &Array2<f64>,
    corpus: &Corpus,
    rng: &mut R,
) -> Result<Assignments> {
    let n_topics = phi.nrows();
    if theta.nrows() != corpus.n_docs()
        || theta.ncols() != n_topics
        || phi.ncols() != corpus.vocab_len()
    {
        return Err(Error::InvalidArgument(format!(
            "theta {:?} / phi {:?} do not fit {} docs over {} words",
            theta.dim(),
            phi.dim(),
            corpus.n_docs(),
            corpus.vocab_len()
        )));
    }
    let sweep_seed = rng.next_u64();
    let z = corpus
        .docs()
        .par_iter()
        .enumerate()
        .map(|(d, words)| {
            let mut doc_rng = ChaCha8Rng::seed_from_u64(sweep_seed);
            doc_rng.set_stream(d as u64);
            let th = theta.row(d);
            let mut weights = vec![0.0; n_topics];
            words
                .iter()
                .enumerate()
                .map(|(pos, &w)| {
                    let mut total = 0.0;
                    for f in 0..n_topics {
                        total += th[f] * phi[[f, w as usize]];
                        weights[f] = total;
                    }
                    if !(total > 0.0 && total.is_finite()) {
                        return Err(Error::DegenerateToken {
                            doc: d,
                            position: pos,
                        });
                    }
                    let u = doc_rng.random::<f64>() * total;
                    let f = weights.iter().position(|&c| u < c).unwrap_or(n_topics - 1);
                    Ok(f as u32)
                })
                .collect::<Result<Vec<u32>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Assignments::new(corpus, n_topics, z)
}

/// Hooks called while training runs.
pub trait TrainObserver {
    fn on_epoch(&mut self, _pass: usize, _epoch: usize, _objective: f64, _lr: f64) {}

    /// After the descent epochs of a pass, before its resampling sweep.
    fn on_pass(&mut self, _pass: usize, _params: &ModelParams) {}

    /// After the resampling sweep that ends a pass.
    fn on_sweep(&mut self, _pass: usize, _assignments: &Assignments, _counts: &TopicCounts) {}
}

impl TrainObserver for () {}

/// Writes `pass  epoch  objective  lr` lines.
pub struct TsvProgress<W: Write>(pub W);

impl<W: Write> TrainObserver for TsvProgress<W> {
    fn on_epoch(&mut self, pass: usize, epoch: usize, objective: f64, lr: f64) {
        let _ = writeln!(self.0, "{pass}\t{epoch}\t{objective}\t{lr}");
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest recorded objective.
    pub best: ModelParams,
    pub best_objective: f64,
    /// `(pass, epoch)` at which `best` was recorded.
    pub best_at: (usize, usize),
    pub last: ModelParams,
    pub history: Vec<f64>,
    pub assignments: Assignments,
    pub counts: TopicCounts,
    pub final_lr: f64,
    /// Epoch attempts rejected under the halving policy.
    pub rejected_steps: usize,
}

pub fn train(data: &TrainingSet, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(data, config, &mut ())
}

pub fn train_with(
    data: &TrainingSet,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    config.validate()?;
    let cfg = &config.variant;
    let (n_users, n_items) = (data.ratings.n_users(), data.ratings.n_items());

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_rng.set_stream(0);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(config.sampling_seed.unwrap_or(config.seed));
    sample_rng.set_stream(1);

    let mut params = ModelParams::random(
        n_users,
        n_items,
        config.n_factors,
        data.corpus.vocab_len(),
        data.mu(),
        config.init_std,
        &mut init_rng,
    );
    let mut assignments = Assignments::uniform(&data.corpus, config.n_factors, &mut sample_rng);
    let mut counts = rebuild_counts(&data.corpus, &assignments)?;
    let mut state = OptimizerState::new(&params);
    let mut lr = config.learning_rate;
    let min_lr = config.learning_rate * 1e-12;
    let mut rejected = 0;
    let mut best: Option<(f64, ModelParams, (usize, usize))> = None;

    for pass in 0..config.passes {
        let diverged = |epoch: usize, last: &ModelParams| Error::Divergence {
            pass,
            epoch,
            last_finite: Box::new(last.clone()),
        };
        let mut current = match objective(&params, data, &counts, cfg) {
            Ok(o) => o,
            Err(e) if e.is_divergence() => return Err(diverged(0, &params)),
            Err(e) => return Err(e),
        };
        for epoch in 0..config.epochs_per_pass {
            state.pass = pass;
            state.epoch = epoch;
            let grads =
                gradients(&params, data, &counts, cfg).map_err(|_| diverged(epoch, &params))?;
            match config.lr_policy {
                LrPolicy::Fixed => {
                    let (p, s) = gd_step(&params, &grads, &state, lr, config.momentum)
                        .map_err(|_| diverged(epoch, &params))?;
                    current =
                        objective(&p, data, &counts, cfg).map_err(|_| diverged(epoch, &params))?;
                    params = p;
                    state = s;
                }
                LrPolicy::HalveOnIncrease => loop {
                    let attempt = gd_step(&params, &grads, &state, lr, config.momentum)
                        .ok()
                        .and_then(|(p, s)| {
                            objective(&p, data, &counts, cfg).ok().map(|o| (p, s, o))
                        });
                    match attempt {
                        Some((p, s, o)) if o <= current => {
                            params = p;
                            state = s;
                            current = o;
                            break;
                        }
                        _ => {
                            rejected += 1;
                            lr *= 0.5;
                            state.velocity = Gradients::zeros_like(&params);
                            if lr < min_lr {
                                break;
                            }
                        }
                    }
                },
            }
            state.history.push(current);
            observer.on_epoch(pass, epoch, current, lr);
            if best.as_ref().is_none_or(|b| current < b.0) {
                best = Some((current, params.clone(), (pass, epoch)));
            }
        }
        observer.on_pass(pass, &params);

        let theta = params.theta();
        let phi = params.phi();
        assignments = sample_assignments(&theta, &phi, &data.corpus, &mut sample_rng)?;
        counts = rebuild_counts(&data.corpus, &assignments)?;
        observer.on_sweep(pass, &assignments, &counts);
    }

    let (best_objective, best_params, best_at) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best: best_params,
        best_objective,
        best_at,
        last: params,
        history: state.history,
        assignments,
        counts,
        final_lr: lr,
        rejected_steps: rejected,
    })
}
