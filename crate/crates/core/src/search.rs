//! Augmentation policy search: space accounting, PPO-trained controller and a
//! uniform random-search baseline, scored by a pluggable reward.
//!
//! Runs are deterministic in the seed. Each batch draws from its own ChaCha
//! stream, so a run resumed from a [`SearchState`] checkpoint reproduces the
//! history of an uninterrupted run exactly.

mod controller;
mod proxy;

pub use controller::{
    decode, encode, ppo_update, surrogate, surrogate_grad, Adam, Baseline, Controller,
    ControllerConfig, ControllerState, Decision, PpoConfig, PpoStats, Sampled, Trajectory, STEPS,
};
pub use proxy::ProxyEvaluator;

use std::path::Path;

use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{AugOpSpec, OpKind, Policy, SubPolicy, MAG_LEVELS, OP_COUNT, PROB_LEVELS};
use crate::error::{Error, Result};
use crate::weights::write_atomic;

/// `(n_ops * mags * probs)^(2 * n_subs)`, exactly.
pub fn search_space_size(n_ops: u64, mags: u64, probs: u64, n_subs: u32) -> BigUint {
    (BigUint::from(n_ops) * mags * probs).pow(2 * n_subs)
}

/// Scores a policy. Must be deterministic for a given `seed`.
pub trait RewardEvaluator {
    fn evaluate(&self, policy: &Policy, seed: u64) -> Result<f64>;
}

impl<F: Fn(&Policy, u64) -> Result<f64>> RewardEvaluator for F {
    fn evaluate(&self, policy: &Policy, seed: u64) -> Result<f64> {
        self(policy, seed)
    }
}

/// Fraction of the ten op slots whose kind equals `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticReward {
    pub target: OpKind,
}

impl Default for SyntheticReward {
    fn default() -> Self {
        SyntheticReward { target: OpKind::TranslateX }
    }
}

impl RewardEvaluator for SyntheticReward {
    fn evaluate(&self, policy: &Policy, _seed: u64) -> Result<f64> {
        let hits = policy.ops().filter(|o| o.kind == self.target).count();
        Ok(hits as f64 / 10.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Ppo,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub seed: u64,
    /// Total number of policy evaluations.
    pub budget: usize,
    pub algo: Algo,
    pub batch_size: usize,
    pub ppo: PpoConfig,
    pub controller: ControllerConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            seed: 0,
            budget: 300,
            algo: Algo::Ppo,
            batch_size: 8,
            ppo: PpoConfig::default(),
            controller: ControllerConfig::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::invalid("search budget must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("search batch_size must be >= 1"));
        }
        if !(self.ppo.lr >= 0.0 && self.ppo.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be finite and >= 0", self.ppo.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    /// Batch the evaluation belonged to.
    pub iteration: usize,
    pub evaluation: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Best {
    pub policy: Policy,
    pub reward: f64,
    pub evaluation: usize,
}

/// Everything needed to continue a run; serialized as the checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub seed: u64,
    pub algo: Algo,
    pub iteration: usize,
    pub evaluations: usize,
    pub baseline: Baseline,
    pub controller: Option<ControllerState>,
    pub best: Option<Best>,
    pub history: Vec<HistoryEntry>,
}

impl SearchState {
    pub fn new(cfg: &SearchConfig) -> Result<Self> {
        cfg.validate()?;
        let controller = match cfg.algo {
            Algo::Ppo => Some(Controller::random(cfg.controller, cfg.seed)?.to_state()),
            Algo::Random => None,
        };
        Ok(SearchState {
            seed: cfg.seed,
            algo: cfg.algo,
            iteration: 0,
            evaluations: 0,
            baseline: Baseline::default(),
            controller,
            best: None,
            history: Vec::new(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &serde_json::to_vec_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: Best,
    pub history: Vec<HistoryEntry>,
    /// Argmax decode of the trained controller; the best sampled policy for
    /// random search.
    pub final_policy: Policy,
    pub state: SearchState,
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Seed handed to the evaluator for a given evaluation index.
pub fn evaluation_seed(seed: u64, evaluation: usize) -> u64 {
    stream(seed ^ 0x5eed_e7a1, evaluation as u64).random()
}

pub fn uniform_policy<R: Rng + ?Sized>(rng: &mut R) -> Policy {
    let mut op = || {
        AugOpSpec::new(
            OpKind::from_index(rng.random_range(0..OP_COUNT)).expect("index in range"),
            rng.random_range(0..PROB_LEVELS),
            rng.random_range(0..MAG_LEVELS),
        )
        .expect("levels in range")
    };
    let mut sub = || SubPolicy { ops: [op(), op()] };
    Policy { subs: [sub(), sub(), sub(), sub(), sub()] }
}

fn score(evaluator: &(impl RewardEvaluator + ?Sized), policy: &Policy, seed: u64) -> Result<f64> {
    let fail = |reason: String| Error::Evaluation {
        policy: serde_json::to_string(policy).unwrap_or_default(),
        reason,
    };
    match evaluator.evaluate(policy, seed) {
        Ok(r) if r.is_finite() => Ok(r),
        Ok(r) => Err(fail(format!("non-finite reward {r}"))),
        Err(e) => Err(fail(e.to_string())),
    }
}

/// Runs one batch, advancing `state`. Returns `false` once the budget is spent.
pub fn step(evaluator: &(impl RewardEvaluator + ?Sized), cfg: &SearchConfig, state: &mut SearchState) -> Result<bool> {
    cfg.validate()?;
    if state.seed != cfg.seed || state.algo != cfg.algo {
        return Err(Error::invalid("checkpoint seed/algo differ from the search config"));
    }
    let n = cfg.batch_size.min(cfg.budget.saturating_sub(state.evaluations));
    if n == 0 {
        return Ok(false);
    }
    let mut rng = stream(cfg.seed, state.iteration as u64);
    let mut controller = state.controller.as_ref().map(Controller::from_state).transpose()?;
    let mut batch = Vec::with_capacity(n);
    for _ in 0..n {
        let (policy, traj) = match &controller {
            Some(c) => {
                let s = c.sample(&mut rng)?;
                (s.policy, Some((s.trace, s.log_prob)))
            }
            None => (uniform_policy(&mut rng), None),
        };
        let reward = score(evaluator, &policy, evaluation_seed(cfg.seed, state.evaluations))?;
        state.history.push(HistoryEntry { iteration: state.iteration, evaluation: state.evaluations, reward });
        if state.best.as_ref().is_none_or(|b| reward > b.reward) {
            state.best = Some(Best { policy, reward, evaluation: state.evaluations });
        }
        state.evaluations += 1;
        if let Some((trace, log_prob_old)) = traj {
            batch.push(Trajectory { trace, log_prob_old, reward });
        }
    }
    if let Some(c) = controller.as_mut() {
        ppo_update(c, &batch, &mut state.baseline, &cfg.ppo)?;
        state.controller = Some(c.to_state());
    }
    state.iteration += 1;
    Ok(true)
}

/// Continues `state` until the budget is spent.
pub fn resume(evaluator: &(impl RewardEvaluator + ?Sized), cfg: &SearchConfig, mut state: SearchState) -> Result<SearchOutcome> {
    while step(evaluator, cfg, &mut state)? {}
    let best = state.best.clone().ok_or_else(|| Error::invalid("search finished without evaluations"))?;
    let final_policy = match &state.controller {
        Some(c) => Controller::from_state(c)?.greedy()?.policy,
        None => best.policy,
    };
    Ok(SearchOutcome { best, history: state.history.clone(), final_policy, state })
}

pub fn search(evaluator: &(impl RewardEvaluator + ?Sized), cfg: &SearchConfig) -> Result<SearchOutcome> {
    resume(evaluator, cfg, SearchState::new(cfg)?)
}
