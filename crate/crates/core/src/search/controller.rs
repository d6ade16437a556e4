//! Recurrent policy sampler and its PPO update.
//!
//! A single tanh cell runs for 30 steps. Each step reads the embedding of the
//! previous decision (a learned start vector at step 0) and emits logits from
//! the head matching the decision type. Per operation the order is kind,
//! magnitude level, probability level.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{AugOpSpec, OpKind, Policy, SubPolicy, MAG_LEVELS, OP_COUNT, PROB_LEVELS};
use crate::error::{Error, Result};

/// 5 sub-policies x 2 ops x (kind, magnitude, probability).
pub const STEPS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Kind,
    Magnitude,
    Probability,
}

impl Decision {
    const ALL: [Decision; 3] = [Decision::Kind, Decision::Magnitude, Decision::Probability];

    pub fn at(step: usize) -> Decision {
        Self::ALL[step % 3]
    }

    pub fn arity(self) -> usize {
        match self {
            Decision::Kind => OP_COUNT,
            Decision::Magnitude => MAG_LEVELS as usize,
            Decision::Probability => PROB_LEVELS as usize,
        }
    }

    fn slot(self) -> usize {
        self as usize
    }

    fn tag(self) -> &'static str {
        match self {
            Decision::Kind => "kind",
            Decision::Magnitude => "mag",
            Decision::Probability => "prob",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub hidden: usize,
    pub embed: usize,
    /// Parameters start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig { hidden: 64, embed: 32, init_scale: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    e: usize,
    h: usize,
    start: usize,
    emb: [usize; 3],
    w_x: usize,
    w_h: usize,
    b: usize,
    head_w: [usize; 3],
    head_b: [usize; 3],
    len: usize,
}

impl Layout {
    fn new(cfg: &ControllerConfig) -> Layout {
        let (e, h) = (cfg.embed, cfg.hidden);
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let start = take(e);
        let emb = Decision::ALL.map(|d| take(d.arity() * e));
        let w_x = take(h * e);
        let w_h = take(h * h);
        let b = take(h);
        let head_w = Decision::ALL.map(|d| take(d.arity() * h));
        let head_b = Decision::ALL.map(|d| take(d.arity()));
        Layout { e, h, start, emb, w_x, w_h, b, head_w, head_b, len: at }
    }

    fn segments(&self) -> Vec<(String, Range<usize>)> {
        let mut out = vec![("embed.start".to_string(), self.start..self.start + self.e)];
        for d in Decision::ALL {
            let o = self.emb[d.slot()];
            out.push((format!("embed.{}", d.tag()), o..o + d.arity() * self.e));
        }
        out.push(("rnn.w_x".into(), self.w_x..self.w_x + self.h * self.e));
        out.push(("rnn.w_h".into(), self.w_h..self.w_h + self.h * self.h));
        out.push(("rnn.b".into(), self.b..self.b + self.h));
        for d in Decision::ALL {
            let (w, b) = (self.head_w[d.slot()], self.head_b[d.slot()]);
            out.push((format!("head.{}.w", d.tag()), w..w + d.arity() * self.h));
            out.push((format!("head.{}.b", d.tag()), b..b + d.arity()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(len: usize) -> Adam {
        Adam { step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    /// Gradient ascent step on `params`.
    fn ascend(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step as i32);
        let c2 = 1.0 - BETA2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grad[i];
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grad[i] * grad[i];
            params[i] += lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + ADAM_EPS);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    cfg: ControllerConfig,
    layout: Layout,
    params: Vec<f64>,
    pub adam: Adam,
}

/// Result of one 30-step rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub policy: Policy,
    pub log_prob: f64,
    pub trace: Vec<usize>,
}

struct Pass {
    trace: Vec<usize>,
    log_prob: f64,
    inputs: Vec<usize>,
    hs: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Controller {
    pub fn zeros(cfg: ControllerConfig) -> Result<Self> {
        if cfg.hidden == 0 || cfg.embed == 0 {
            return Err(Error::invalid("controller hidden and embed widths must be >= 1"));
        }
        let layout = Layout::new(&cfg);
        let len = layout.len;
        Ok(Controller { cfg, layout, params: vec![0.0; len], adam: Adam::new(len) })
    }

    pub fn random(cfg: ControllerConfig, seed: u64) -> Result<Self> {
        let mut c = Self::zeros(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = cfg.init_scale;
        if s > 0.0 {
            c.params.iter_mut().for_each(|p| *p = rng.random_range(-s..=s));
        }
        Ok(c)
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_names(&self) -> Vec<String> {
        self.layout.segments().into_iter().map(|(n, _)| n).collect()
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let (_, r) = self.layout.segments().into_iter().find(|(n, _)| n == name)?;
        Some(&mut self.params[r])
    }

    fn run(&self, mut choose: impl FnMut(usize, &[f64]) -> Result<usize>) -> Result<Pass> {
        let l = &self.layout;
        let p = &self.params;
        let mut pass = Pass {
            trace: Vec::with_capacity(STEPS),
            log_prob: 0.0,
            inputs: Vec::with_capacity(STEPS),
            hs: Vec::with_capacity(STEPS),
            probs: Vec::with_capacity(STEPS),
        };
        let mut h_prev = vec![0.0; l.h];
        let mut input = l.start;
        for t in 0..STEPS {
            let d = Decision::at(t);
            let x = &p[input..input + l.e];
            let h: Vec<f64> = (0..l.h)
                .map(|i| {
                    let z = p[l.b + i]
                        + dot(&p[l.w_x + i * l.e..][..l.e], x)
                        + dot(&p[l.w_h + i * l.h..][..l.h], &h_prev);
                    z.tanh()
                })
                .collect();
            let (hw, hb) = (l.head_w[d.slot()], l.head_b[d.slot()]);
            let logits: Vec<f64> = (0..d.arity())
                .map(|j| p[hb + j] + dot(&p[hw + j * l.h..][..l.h], &h))
                .collect();
            if !logits.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("controller logits"));
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            let probs: Vec<f64> = logits.iter().map(|v| (v - lse).exp()).collect();
            let a = choose(t, &probs)?;
            if a >= d.arity() {
                return Err(Error::invalid(format!("decision {a} at step {t} exceeds arity {}", d.arity())));
            }
            pass.log_prob += logits[a] - lse;
            pass.trace.push(a);
            pass.inputs.push(input);
            pass.hs.push(h.clone());
            pass.probs.push(probs);
            input = l.emb[d.slot()] + a * l.e;
            h_prev = h;
        }
        Ok(pass)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Sampled> {
        let pass = self.run(|_, probs| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return Ok(i);
                }
            }
            Ok(probs.len() - 1)
        })?;
        Ok(Sampled { policy: decode(&pass.trace)?, log_prob: pass.log_prob, trace: pass.trace })
    }

    /// Argmax at every step, feeding each choice forward.
    pub fn greedy(&self) -> Result<Sampled> {
        let pass = self.run(|_, probs| {
            let mut best = 0;
            for (i, p) in probs.iter().enumerate() {
                if *p > probs[best] {
                    best = i;
                }
            }
            Ok(best)
        })?;
        Ok(Sampled { policy: decode(&pass.trace)?, log_prob: pass.log_prob, trace: pass.trace })
    }

    /// Log-probability of replaying `trace`.
    pub fn log_prob(&self, trace: &[usize]) -> Result<f64> {
        check_trace(trace)?;
        Ok(self.run(|t, _| Ok(trace[t]))?.log_prob)
    }

    /// Log-probability of `trace` and its gradient with respect to every
    /// parameter, by backpropagation through the 30 steps.
    pub fn log_prob_grad(&self, trace: &[usize]) -> Result<(f64, Vec<f64>)> {
        check_trace(trace)?;
        let pass = self.run(|t, _| Ok(trace[t]))?;
        let l = &self.layout;
        let p = &self.params;
        let mut g = vec![0.0; l.len];
        let mut dh_next = vec![0.0; l.h];
        let zeros = vec![0.0; l.h];
        for t in (0..STEPS).rev() {
            let d = Decision::at(t);
            let h = &pass.hs[t];
            let (hw, hb) = (l.head_w[d.slot()], l.head_b[d.slot()]);
            let mut dh = dh_next.clone();
            for j in 0..d.arity() {
                let dl = (j == pass.trace[t]) as u8 as f64 - pass.probs[t][j];
                g[hb + j] += dl;
                for i in 0..l.h {
                    g[hw + j * l.h + i] += dl * h[i];
                    dh[i] += dl * p[hw + j * l.h + i];
                }
            }
            let h_prev = if t > 0 { &pass.hs[t - 1] } else { &zeros };
            let x = pass.inputs[t];
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..l.h {
                let dz = dh[i] * (1.0 - h[i] * h[i]);
                if dz == 0.0 {
                    continue;
                }
                g[l.b + i] += dz;
                for e in 0..l.e {
                    g[l.w_x + i * l.e + e] += dz * p[x + e];
                    g[x + e] += dz * p[l.w_x + i * l.e + e];
                }
                for m in 0..l.h {
                    g[l.w_h + i * l.h + m] += dz * h_prev[m];
                    dh_next[m] += dz * p[l.w_h + i * l.h + m];
                }
            }
        }
        Ok((pass.log_prob, g))
    }

    pub fn to_state(&self) -> ControllerState {
        let mut params = BTreeMap::new();
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (name, r) in self.layout.segments() {
            params.insert(name.clone(), self.params[r.clone()].to_vec());
            m.insert(name.clone(), self.adam.m[r.clone()].to_vec());
            v.insert(name, self.adam.v[r].to_vec());
        }
        ControllerState { config: self.cfg, params, adam_step: self.adam.step, adam_m: m, adam_v: v }
    }

    pub fn from_state(state: &ControllerState) -> Result<Self> {
        let mut c = Self::zeros(state.config)?;
        for (name, r) in c.layout.segments() {
            for (src, dst) in [
                (&state.params, &mut c.params),
                (&state.adam_m, &mut c.adam.m),
                (&state.adam_v, &mut c.adam.v),
            ] {
                let vals = src
                    .get(&name)
                    .ok_or_else(|| Error::invalid(format!("controller state lacks `{name}`")))?;
                if vals.len() != r.len() {
                    return Err(Error::invalid(format!(
                        "controller state `{name}` has {} values, expected {}",
                        vals.len(),
                        r.len()
                    )));
                }
                dst[r.clone()].copy_from_slice(vals);
            }
        }
        c.adam.step = state.adam_step;
        Ok(c)
    }
}

/// Serialized controller: parameters and Adam moments as named flat arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub config: ControllerConfig,
    pub params: BTreeMap<String, Vec<f64>>,
    pub adam_step: u64,
    pub adam_m: BTreeMap<String, Vec<f64>>,
    pub adam_v: BTreeMap<String, Vec<f64>>,
}

fn check_trace(trace: &[usize]) -> Result<()> {
    if trace.len() != STEPS {
        return Err(Error::invalid(format!("trace has {} decisions, expected {STEPS}", trace.len())));
    }
    Ok(())
}

/// Policy described by a 30-decision trace.
pub fn decode(trace: &[usize]) -> Result<Policy> {
    check_trace(trace)?;
    let op = |j: usize| -> Result<AugOpSpec> {
        let t = &trace[3 * j..3 * j + 3];
        let kind = OpKind::from_index(t[0]).ok_or_else(|| Error::invalid(format!("op kind {} out of range", t[0])))?;
        let level = |v: usize| u8::try_from(v).map_err(|_| Error::invalid(format!("level {v} out of range")));
        AugOpSpec::new(kind, level(t[2])?, level(t[1])?)
    };
    let sub = |s: usize| -> Result<SubPolicy> { Ok(SubPolicy { ops: [op(2 * s)?, op(2 * s + 1)?] }) };
    Ok(Policy { subs: [sub(0)?, sub(1)?, sub(2)?, sub(3)?, sub(4)?] })
}

pub fn encode(policy: &Policy) -> Vec<usize> {
    policy
        .ops()
        .flat_map(|o| [o.kind.index(), o.mag_level as usize, o.prob_level as usize])
        .collect()
}

/// One sampled policy with the log-probability it had when drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub trace: Vec<usize>,
    pub log_prob_old: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub lr: f64,
    /// Optimizer steps taken on each batch against its fixed old log-probs.
    pub epochs: usize,
    /// Exponential moving average factor of the reward baseline.
    pub baseline_decay: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig { clip_eps: 0.2, lr: 0.00035, epochs: 10, baseline_decay: 0.9 }
    }
}

/// Running reward mean; unset until the first batch arrives, which then
/// serves as its own baseline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub value: Option<f64>,
}

impl Baseline {
    pub fn update(&mut self, batch_mean: f64, decay: f64) {
        self.value = Some(match self.value {
            None => batch_mean,
            Some(b) => decay * b + (1.0 - decay) * batch_mean,
        });
    }
}

/// Mean clipped surrogate over the batch at the controller's current parameters.
pub fn surrogate(c: &Controller, batch: &[Trajectory], advantages: &[f64], clip_eps: f64) -> Result<f64> {
    let mut total = 0.0;
    for (tr, &a) in batch.iter().zip(advantages) {
        let r = (c.log_prob(&tr.trace)? - tr.log_prob_old).exp();
        total += (r * a).min(r.clamp(1.0 - clip_eps, 1.0 + clip_eps) * a);
    }
    Ok(total / batch.len() as f64)
}

/// Gradient of [`surrogate`]. Terms where the clipped branch is the minimum
/// are constant in the parameters and contribute nothing.
pub fn surrogate_grad(c: &Controller, batch: &[Trajectory], advantages: &[f64], clip_eps: f64) -> Result<Vec<f64>> {
    let mut g = vec![0.0; c.params.len()];
    let n = batch.len() as f64;
    for (tr, &a) in batch.iter().zip(advantages) {
        if a == 0.0 {
            continue;
        }
        let (lp, grad) = c.log_prob_grad(&tr.trace)?;
        let r = (lp - tr.log_prob_old).exp();
        let clipped = r.clamp(1.0 - clip_eps, 1.0 + clip_eps);
        if r * a > clipped * a {
            continue;
        }
        let coef = a * r / n;
        g.iter_mut().zip(&grad).for_each(|(gi, d)| *gi += coef * d);
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoStats {
    pub advantages: Vec<f64>,
    pub surrogate_before: f64,
    pub steps: usize,
}

/// Advantages against the current baseline, `epochs` Adam ascent steps on the
/// clipped surrogate, then a baseline update with the batch mean reward. A
/// batch whose advantages are all zero leaves parameters and optimizer state
/// untouched.
pub fn ppo_update(c: &mut Controller, batch: &[Trajectory], baseline: &mut Baseline, cfg: &PpoConfig) -> Result<PpoStats> {
    if batch.is_empty() {
        return Err(Error::invalid("ppo_update needs a non-empty batch"));
    }
    if !(cfg.clip_eps > 0.0 && cfg.clip_eps < 1.0) {
        return Err(Error::invalid(format!("clip_eps {} must lie in (0, 1)", cfg.clip_eps)));
    }
    if !(0.0..1.0).contains(&cfg.baseline_decay) {
        return Err(Error::invalid(format!("baseline_decay {} must lie in [0, 1)", cfg.baseline_decay)));
    }
    if batch.iter().any(|t| !t.reward.is_finite() || !t.log_prob_old.is_finite()) {
        return Err(Error::NonFinite("ppo batch"));
    }
    let mean = batch.iter().map(|t| t.reward).sum::<f64>() / batch.len() as f64;
    let b = baseline.value.unwrap_or(mean);
    let advantages: Vec<f64> = batch.iter().map(|t| t.reward - b).collect();
    let surrogate_before = surrogate(c, batch, &advantages, cfg.clip_eps)?;
    let mut steps = 0;
    if advantages.iter().any(|&a| a != 0.0) {
        for _ in 0..cfg.epochs {
            let g = surrogate_grad(c, batch, &advantages, cfg.clip_eps)?;
            if g.iter().all(|&v| v == 0.0) {
                break;
            }
            c.adam.ascend(&mut c.params, &g, cfg.lr);
            steps += 1;
        }
    }
    baseline.update(mean, cfg.baseline_decay);
    Ok(PpoStats { advantages, surrogate_before, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_grad;

    fn small(scale: f64, seed: u64) -> Controller {
        Controller::random(ControllerConfig { hidden: 6, embed: 4, init_scale: scale }, seed).unwrap()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Straightforward forward pass over the named parameter arrays.
    fn naive_log_prob(state: &ControllerState, trace: &[usize]) -> f64 {
        let (h_n, e_n) = (state.config.hidden, state.config.embed);
        let p = |n: &str| &state.params[n];
        let mut h = vec![0.0; h_n];
        let mut x = p("embed.start").clone();
        let mut total = 0.0;
        for (t, &a) in trace.iter().enumerate() {
            let tag = ["kind", "mag", "prob"][t % 3];
            let mut next = vec![0.0; h_n];
            for i in 0..h_n {
                let mut z = p("rnn.b")[i];
                for e in 0..e_n {
                    z += p("rnn.w_x")[i * e_n + e] * x[e];
                }
                for m in 0..h_n {
                    z += p("rnn.w_h")[i * h_n + m] * h[m];
                }
                next[i] = z.tanh();
            }
            h = next;
            let w = p(&format!("head.{tag}.w"));
            let b = p(&format!("head.{tag}.b"));
            let logits: Vec<f64> = (0..b.len())
                .map(|j| b[j] + (0..h_n).map(|i| w[j * h_n + i] * h[i]).sum::<f64>())
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            total += logits[a] - z.ln();
            x = p(&format!("embed.{tag}"))[a * e_n..(a + 1) * e_n].to_vec();
        }
        total
    }

    #[test]
    fn layout_counts_thirty_decisions() {
        let c = Controller::zeros(ControllerConfig::default()).unwrap();
        let s = c.sample(&mut rng(0)).unwrap();
        assert_eq!(s.trace.len(), STEPS);
        assert_eq!(STEPS, 5 * 2 * 3);
        let (e, h) = (32, 64);
        let expected = e + (15 + 11 + 10) * e + h * e + h * h + h + (15 + 11 + 10) * (h + 1);
        assert_eq!(c.params().len(), expected);
        assert_eq!(c.param_names().len(), 13);
    }

    #[test]
    fn saturated_logits_force_the_trace() {
        let mut c = small(0.3, 1);
        for (name, idx) in [("head.kind.b", 3), ("head.mag.b", 10), ("head.prob.b", 0)] {
            c.param_mut(name).unwrap()[idx] = 1e6;
        }
        let mut r = rng(9);
        for _ in 0..20 {
            let s = c.sample(&mut r).unwrap();
            for (t, &a) in s.trace.iter().enumerate() {
                assert_eq!(a, [3, 10, 0][t % 3]);
            }
            assert!(s.policy.ops().all(|o| o.kind == OpKind::Rotate && o.mag_level == 10 && o.prob_level == 0));
        }
    }

    #[test]
    fn non_finite_logits_are_rejected() {
        let mut c = small(0.1, 2);
        c.param_mut("head.mag.b").unwrap()[0] = f64::NAN;
        assert!(matches!(c.sample(&mut rng(0)), Err(Error::NonFinite(_))));
    }

    #[test]
    fn zero_parameters_sample_uniformly() {
        let c = Controller::zeros(ControllerConfig { hidden: 4, embed: 2, init_scale: 0.0 }).unwrap();
        let mut r = rng(123);
        let mut counts = [0usize; OP_COUNT];
        let draws = 20_000;
        for _ in 0..draws {
            counts[c.sample(&mut r).unwrap().trace[0]] += 1;
        }
        for n in counts {
            assert!((n as f64 / draws as f64 - 1.0 / 15.0).abs() <= 0.01, "{counts:?}");
        }
    }

    #[test]
    fn log_prob_matches_replay_and_naive_forward() {
        let c = small(0.8, 3);
        let state = c.to_state();
        let mut r = rng(4);
        for _ in 0..10 {
            let s = c.sample(&mut r).unwrap();
            assert!(s.log_prob <= 0.0);
            assert!((c.log_prob(&s.trace).unwrap() - s.log_prob).abs() < 1e-12);
            assert!((naive_log_prob(&state, &s.trace) - s.log_prob).abs() < 1e-9);
            assert_eq!(decode(&s.trace).unwrap(), s.policy);
            assert_eq!(encode(&s.policy), s.trace);
        }
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let c = small(0.7, 5);
        let trace = c.sample(&mut rng(6)).unwrap().trace;
        let (_, analytic) = c.log_prob_grad(&trace).unwrap();
        let f = |p: &[f64]| {
            let mut d = c.clone();
            d.params_mut().copy_from_slice(p);
            d.log_prob(&trace).unwrap()
        };
        let numeric = finite_diff_grad(f, c.params(), 1e-5).unwrap();
        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            assert!((a - n).abs() <= 1e-6 + 1e-4 * n.abs(), "param {i}: {a} vs {n}");
        }
    }

    fn batch_for(c: &Controller, seed: u64, rewards: &[f64]) -> Vec<Trajectory> {
        let mut r = rng(seed);
        rewards
            .iter()
            .map(|&reward| {
                let s = c.sample(&mut r).unwrap();
                Trajectory { trace: s.trace, log_prob_old: s.log_prob, reward }
            })
            .collect()
    }

    #[test]
    fn zero_advantage_is_a_fixed_point() {
        let mut c = small(0.5, 7);
        let batch = batch_for(&c, 8, &[0.3, 0.6]);
        let mut baseline = Baseline::default();
        ppo_update(&mut c, &batch, &mut baseline, &PpoConfig::default()).unwrap();
        let before = c.clone();
        let flat = batch_for(&c, 9, &[baseline.value.unwrap(); 4]);
        let stats = ppo_update(&mut c, &flat, &mut baseline, &PpoConfig::default()).unwrap();
        assert!(stats.advantages.iter().all(|&a| a == 0.0));
        assert_eq!(stats.steps, 0);
        assert_eq!(c, before);
    }

    #[test]
    fn zero_learning_rate_is_identity_on_parameters() {
        let mut c = small(0.5, 10);
        let batch = batch_for(&c, 11, &[0.0, 1.0, 0.5]);
        let before = c.params().to_vec();
        let cfg = PpoConfig { lr: 0.0, ..PpoConfig::default() };
        ppo_update(&mut c, &batch, &mut Baseline::default(), &cfg).unwrap();
        assert_eq!(c.params(), &before[..]);
    }

    #[test]
    fn positive_advantage_raises_the_trace_probability() {
        let mut c = small(0.5, 12);
        let batch = batch_for(&c, 13, &[1.0]);
        let before = c.log_prob(&batch[0].trace).unwrap();
        let mut baseline = Baseline { value: Some(0.0) };
        let cfg = PpoConfig { epochs: 1, ..PpoConfig::default() };
        ppo_update(&mut c, &batch, &mut baseline, &cfg).unwrap();
        assert!(c.log_prob(&batch[0].trace).unwrap() > before);
        assert!((baseline.value.unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let c = small(0.5, 14);
        let mut batch = batch_for(&c, 15, &[1.0, 0.0, 0.4]);
        // move the old log-probs a little so ratios differ from one but stay unclipped
        batch[0].log_prob_old += 0.05;
        batch[1].log_prob_old -= 0.1;
        let adv = [0.6, -0.4, 0.0];
        let g = surrogate_grad(&c, &batch, &adv, 0.2).unwrap();
        let f = |p: &[f64]| {
            let mut d = c.clone();
            d.params_mut().copy_from_slice(p);
            surrogate(&d, &batch, &adv, 0.2).unwrap()
        };
        let numeric = finite_diff_grad(f, c.params(), 1e-6).unwrap();
        for (a, n) in g.iter().zip(&numeric) {
            assert!((a - n).abs() <= 1e-6 + 1e-4 * n.abs(), "{a} vs {n}");
        }
    }

    #[test]
    fn clipped_ratio_has_zero_gradient() {
        let c = small(0.5, 16);
        let mut batch = batch_for(&c, 17, &[1.0]);
        // ratio e > 1 + eps with positive advantage: the clipped constant is the minimum
        batch[0].log_prob_old -= 1.0;
        let g = surrogate_grad(&c, &batch, &[1.0], 0.2).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        let f = |p: &[f64]| {
            let mut d = c.clone();
            d.params_mut().copy_from_slice(p);
            surrogate(&d, &batch, &[1.0], 0.2).unwrap()
        };
        let numeric = finite_diff_grad(f, c.params(), 1e-5).unwrap();
        assert!(numeric.iter().all(|v| v.abs() < 1e-9));
        assert!((surrogate(&c, &batch, &[1.0], 0.2).unwrap() - 1.2).abs() < 1e-12);
    }

    #[test]
    fn update_rejects_bad_input() {
        let mut c = small(0.1, 18);
        let mut b = Baseline::default();
        assert!(ppo_update(&mut c, &[], &mut b, &PpoConfig::default()).is_err());
        let batch = batch_for(&c, 19, &[f64::NAN]);
        assert!(ppo_update(&mut c, &batch, &mut b, &PpoConfig::default()).is_err());
        let batch = batch_for(&c, 19, &[1.0]);
        let cfg = PpoConfig { clip_eps: 1.0, ..PpoConfig::default() };
        assert!(ppo_update(&mut c, &batch, &mut b, &cfg).is_err());
        assert!(c.log_prob(&[0; 29]).is_err());
        assert!(decode(&[20; 30]).is_err());
    }

    #[test]
    fn state_round_trip_is_exact() {
        let mut c = small(0.5, 20);
        let batch = batch_for(&c, 21, &[1.0, 0.0]);
        ppo_update(&mut c, &batch, &mut Baseline::default(), &PpoConfig::default()).unwrap();
        let json = serde_json::to_string(&c.to_state()).unwrap();
        let back: ControllerState = serde_json::from_str(&json).unwrap();
        assert_eq!(Controller::from_state(&back).unwrap(), c);
        let mut broken = back.clone();
        broken.params.get_mut("rnn.b").unwrap().pop();
        assert!(Controller::from_state(&broken).is_err());
    }
}
