//! Per-link double DQN: state assembly, composite actions, replay buffer and
//! the double-Q learning step.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::config::AgentConfig;
use crate::env::sinr::Choice;
use crate::error::{LabError, Result};
use crate::graph::GraphTopology;
use crate::nn::{squared_error, Activation, Checkpoint, LrSchedule, Mlp, NamedArray};

/// Raw (unscaled) components of an agent's state.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    /// GraphSAGE embedding `h_v` (all zeros for the plain DQN).
    pub embedding: Vec<f64>,
    /// Scaled node feature `x_v`.
    pub feature: Vec<f64>,
    /// `N_{t-1}`: how many neighbours used each subchannel in the last slot.
    pub neighbor_counts: Vec<f64>,
    /// `L_t`: remaining / total payload bits.
    pub remaining_fraction: f64,
    /// `U_t` in seconds.
    pub remaining_time: f64,
}

impl AgentState {
    pub fn dim(embed: usize, subchannels: usize) -> usize {
        embed + 3 * subchannels + subchannels + 2
    }

    /// `h_v || x_v || N_{t-1} / fanout || L_t || U_t / T0`.
    pub fn to_vector(&self, count_scale: f64, deadline_s: f64) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.embedding.len() + self.feature.len() + self.neighbor_counts.len() + 2);
        v.extend_from_slice(&self.embedding);
        v.extend_from_slice(&self.feature);
        v.extend(self.neighbor_counts.iter().map(|c| c / count_scale));
        v.push(self.remaining_fraction);
        v.push(self.remaining_time / deadline_s);
        v
    }

    pub fn check(&self, embed: usize, subchannels: usize) -> Result<()> {
        if self.embedding.len() != embed || self.feature.len() != 3 * subchannels || self.neighbor_counts.len() != subchannels {
            return Err(LabError::structural(format!(
                "state parts have lengths {}/{}/{}, expected {embed}/{}/{subchannels}",
                self.embedding.len(),
                self.feature.len(),
                self.neighbor_counts.len(),
                3 * subchannels
            )));
        }
        Ok(())
    }
}

/// Per-subchannel count of `node`'s neighbours by their current choice.
pub fn neighbor_counts(topo: &GraphTopology, node: usize, choices: &[Option<Choice>], subchannels: usize) -> Vec<f64> {
    let mut counts = vec![0.0; subchannels];
    for &u in topo.neighbors(node) {
        if let Some(c) = choices[u] {
            counts[c.subchannel] += 1.0;
        }
    }
    counts
}

/// Joint subchannel/power action `a = a_p * m + a_r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct CompositeAction(pub usize);

impl CompositeAction {
    pub fn compose(choice: Choice, subchannels: usize) -> Self {
        CompositeAction(choice.power_level * subchannels + choice.subchannel)
    }

    pub fn decompose(self, subchannels: usize) -> Choice {
        Choice { subchannel: self.0 % subchannels, power_level: self.0 / subchannels }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// epsilon-greedy over the network's Q-values.
pub fn select_action<R: Rng + ?Sized>(q: &Mlp, state: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
    let explore: f64 = rng.gen();
    if explore < epsilon {
        return Ok(rng.gen_range(0..q.output_dim()));
    }
    Ok(argmax(&q.forward(state)?))
}

/// Linear anneal from `start` to `end` over the first `fraction` of
/// `total` iterations, constant afterwards.
pub fn epsilon_at(cfg: &AgentConfig, iteration: u64, total: u64) -> f64 {
    let horizon = (cfg.epsilon_anneal_fraction * total as f64).max(1.0);
    let t = (iteration as f64 / horizon).min(1.0);
    cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * t
}

/// Double-Q targets: the online net picks `a*` on the next state, the target
/// net values it, discounted by `discounts[k]`. No terminal masking.
pub fn double_q_targets(online_next: &Array2<f64>, target_next: &Array2<f64>, rewards: &[f64], discounts: &[f64]) -> Vec<f64> {
    rewards
        .iter()
        .zip(discounts)
        .enumerate()
        .map(|(k, (r, d))| {
            let row = online_next.row(k);
            let best = argmax(row.as_slice().expect("contiguous"));
            r + d * target_next[[k, best]]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Slots between `state` and `next_state`; the bootstrap term is
    /// discounted once per slot.
    pub slots: u32,
}

/// Fixed-capacity ring buffer with uniform sampling (with replacement).
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Experience>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), items: Vec::new(), next: 0 }
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.next] = e;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Experience] {
        &self.items
    }

    pub fn sample<'a, R: Rng + ?Sized>(&'a self, n: usize, rng: &mut R) -> Vec<&'a Experience> {
        (0..n).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect()
    }
}

/// Online and target Q-networks with their update schedule.
#[derive(Debug, Clone)]
pub struct DdqnAgent {
    pub online: Mlp,
    pub target: Mlp,
    pub schedule: LrSchedule,
    pub discount: f64,
    pub batch_size: usize,
    pub target_sync_every: u64,
    pub learn_steps: u64,
}

/// Outcome of one learning step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnReport {
    pub loss: f64,
    pub synced: bool,
}

impl DdqnAgent {
    pub fn new<R: Rng + ?Sized>(cfg: &AgentConfig, state_dim: usize, actions: usize, rng: &mut R) -> Self {
        let mut dims = vec![state_dim];
        dims.extend_from_slice(&cfg.hidden);
        dims.push(actions);
        let online = Mlp::xavier(&dims, Activation::Relu, Activation::Identity, rng);
        Self::from_networks(cfg, online.clone(), online)
    }

    pub fn from_networks(cfg: &AgentConfig, online: Mlp, target: Mlp) -> Self {
        Self {
            online,
            target,
            schedule: LrSchedule {
                initial: cfg.learning_rate,
                floor: cfg.learning_rate_floor,
                decay: cfg.lr_decay,
                every: cfg.lr_decay_every,
            },
            discount: cfg.discount,
            batch_size: cfg.batch_size,
            target_sync_every: cfg.target_sync_every,
            learn_steps: 0,
        }
    }

    /// Mean over the batch of `(y_Q - Q(s, a))^2` where only the taken
    /// action's output enters, and its gradient.
    pub fn loss_and_gradients(&self, batch: &[&Experience]) -> Result<(f64, crate::nn::Gradients)> {
        let states = stack(batch.iter().map(|e| e.state.as_slice()), self.online.input_dim())?;
        let next = stack(batch.iter().map(|e| e.next_state.as_slice()), self.online.input_dim())?;
        let online_next = self.online.predict_batch(next.view())?;
        let target_next = self.target.predict_batch(next.view())?;
        let rewards: Vec<f64> = batch.iter().map(|e| e.reward).collect();
        let discounts: Vec<f64> = batch.iter().map(|e| self.discount.powi(e.slots.max(1) as i32)).collect();
        let y = double_q_targets(&online_next, &target_next, &rewards, &discounts);
        let (q, cache) = self.online.forward_batch(states.view())?;
        let mut target = q.clone();
        let mut mask = Array2::zeros(q.raw_dim());
        for (k, e) in batch.iter().enumerate() {
            target[[k, e.action]] = y[k];
            mask[[k, e.action]] = 1.0;
        }
        let (loss, mut grad) = squared_error(&q, &target, Some(&mask));
        let n = batch.len().max(1) as f64;
        grad /= n;
        let (grads, _) = self.online.backward(&cache, &grad);
        Ok((loss / n, grads))
    }

    /// Samples a minibatch and takes one SGD step; `None` (and no change)
    /// while the buffer holds fewer than `batch_size` experiences.
    pub fn learn_step<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<Option<LearnReport>> {
        if buffer.len() < self.batch_size {
            return Ok(None);
        }
        let batch = buffer.sample(self.batch_size, rng);
        let (loss, grads) = self.loss_and_gradients(&batch)?;
        if !loss.is_finite() {
            return Err(LabError::numerical(format!("TD loss became {loss} at learn step {}", self.learn_steps)));
        }
        self.online.sgd_step(&grads, self.schedule.rate(self.learn_steps))?;
        self.learn_steps += 1;
        let synced = self.target_sync_every > 0 && self.learn_steps % self.target_sync_every == 0;
        if synced {
            self.target = self.online.clone();
        }
        Ok(Some(LearnReport { loss, synced }))
    }

    pub fn to_arrays(&self) -> (Vec<NamedArray>, Vec<NamedArray>) {
        (self.online.to_arrays("q.online"), self.target.to_arrays("q.target"))
    }

    pub fn from_checkpoints(cfg: &AgentConfig, online: &Checkpoint, target: &Checkpoint) -> Result<Self> {
        Ok(Self::from_networks(
            cfg,
            Mlp::from_checkpoint(online, "q.online")?,
            Mlp::from_checkpoint(target, "q.target")?,
        ))
    }
}

fn stack<'a>(rows: impl Iterator<Item = &'a [f64]>, width: usize) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        if r.len() != width {
            return Err(LabError::structural(format!("state has {} entries, expected {width}", r.len())));
        }
        data.extend_from_slice(r);
        n += 1;
    }
    Ok(ArrayView2::from_shape((n, width), &data).expect("shape").to_owned())
}
