//! Training and evaluation loops.
//!
//! One iteration is one small-scale slot. In every slot one of
//! `decision_batches` rotating groups of links re-decides; the others keep
//! their previous choice. Links that have no choice yet (fresh environment,
//! new link after a graph rebuild) decide immediately.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::Instant;

use log::{debug, info};
use ndarray::Array2;
use rand::Rng;

use crate::agent::{
    epsilon_at, neighbor_counts, select_action, AgentState, CompositeAction, DdqnAgent, Experience, ReplayBuffer,
};
use crate::config::LabConfig;
use crate::env::sinr::{AllocationMatrix, Choice};
use crate::env::{Environment, LinkOutcome, Mode, PopulationEvent};
use crate::error::{LabError, Result};
use crate::graph::{full_neighborhood, sample_neighborhood, GraphMode, GraphTopology, LinkLabel};
use crate::nn::Checkpoint;
use crate::rng::{self, LabRng, Stream};
use crate::sage::{node_features, reward_batch, RewardMatrix, SageNet, SageTrainer};

/// Episode keys of evaluation environments start here so they never
/// coincide with training placements.
pub const TEST_EPISODE_BASE: u64 = 1 << 32;
pub const DYNAMIC_EPISODE_BASE: u64 = 1 << 33;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Policy {
    /// Q-network fed with the GraphSAGE embedding.
    GnnDdqn,
    /// Same Q-network with the embedding slot held at zero.
    PlainDqn,
    /// Uniform random channel and power.
    Random,
}

impl Policy {
    pub fn label(self) -> &'static str {
        match self {
            Policy::GnnDdqn => "gnn-ddqn",
            Policy::PlainDqn => "dqn",
            Policy::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gnn-ddqn" | "gnn" => Some(Policy::GnnDdqn),
            "dqn" => Some(Policy::PlainDqn),
            "random" => Some(Policy::Random),
            _ => None,
        }
    }
}

/// Trained networks of one policy.
#[derive(Debug, Clone)]
pub struct Models {
    pub agent: DdqnAgent,
    pub sage: Option<SageTrainer>,
}

pub const CKPT_Q_ONLINE: &str = "q.online";
pub const CKPT_Q_TARGET: &str = "q.target";
pub const CKPT_SAGE_LIVE: &str = "sage.live";
pub const CKPT_SAGE_LAGGED: &str = "sage.lagged";

impl Models {
    pub fn init(cfg: &LabConfig, policy: Policy, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, Stream::Init, 0);
        let m = cfg.env.subchannels;
        let embed = cfg.sage.embed_dim;
        let agent = DdqnAgent::new(&cfg.agent, AgentState::dim(embed, m), cfg.env.action_count(), &mut rng);
        let sage = match policy {
            Policy::GnnDdqn => {
                let net = SageNet::new(cfg.env.feature_dim(), cfg.sage.hidden_dim, embed, m, &mut rng);
                Some(SageTrainer::new(net, &cfg.sage)?)
            }
            _ => None,
        };
        Ok(Self { agent, sage })
    }

    pub fn policy(&self) -> Policy {
        if self.sage.is_some() {
            Policy::GnnDdqn
        } else {
            Policy::PlainDqn
        }
    }

    /// Writes `q.online`, `q.target` and, for the GNN policy, `sage.live`
    /// and `sage.lagged` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let (online, target) = self.agent.to_arrays();
        Checkpoint::new(online).save(&dir.join(CKPT_Q_ONLINE))?;
        Checkpoint::new(target).save(&dir.join(CKPT_Q_TARGET))?;
        if let Some(s) = &self.sage {
            Checkpoint::new(s.live.to_arrays(CKPT_SAGE_LIVE)).save(&dir.join(CKPT_SAGE_LIVE))?;
            Checkpoint::new(s.lagged.to_arrays(CKPT_SAGE_LAGGED)).save(&dir.join(CKPT_SAGE_LAGGED))?;
        }
        Ok(())
    }

    pub fn load(cfg: &LabConfig, dir: &Path) -> Result<Self> {
        let online = Checkpoint::load(&dir.join(CKPT_Q_ONLINE))?;
        let target = Checkpoint::load(&dir.join(CKPT_Q_TARGET))?;
        let agent = DdqnAgent::from_checkpoints(&cfg.agent, &online, &target)?;
        let expected = AgentState::dim(cfg.sage.embed_dim, cfg.env.subchannels);
        if agent.online.input_dim() != expected || agent.online.output_dim() != cfg.env.action_count() {
            return Err(LabError::config(format!(
                "checkpoint network is {:?}, configuration needs {expected} inputs and {} actions",
                agent.online.dims(),
                cfg.env.action_count()
            )));
        }
        let live_path = dir.join(CKPT_SAGE_LIVE);
        let sage = if live_path.exists() {
            let live = SageNet::from_checkpoint(&Checkpoint::load(&live_path)?, CKPT_SAGE_LIVE)?;
            let lagged = SageNet::from_checkpoint(&Checkpoint::load(&dir.join(CKPT_SAGE_LAGGED))?, CKPT_SAGE_LAGGED)?;
            if live.feature_dim() != cfg.env.feature_dim() || live.embed_dim() != cfg.sage.embed_dim {
                return Err(LabError::config("GraphSAGE checkpoint dimensions do not match the configuration"));
            }
            let mut t = SageTrainer::new(live, &cfg.sage)?;
            t.lagged = lagged;
            Some(t)
        } else {
            None
        };
        Ok(Self { agent, sage })
    }
}

/// One row of a metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub mode: &'static str,
    pub policy: Policy,
    pub seed: u64,
    /// Iteration (training) or sample index (evaluation).
    pub index: u64,
    pub vehicle_count: usize,
    pub v2i_sum_rate_bps: f64,
    /// Success rate of the payload period the slot belongs to.
    pub v2v_success_rate: f64,
    pub decision_latency_us: Option<f64>,
}

/// One decision, for strategy analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionLog {
    pub slot: u64,
    pub link: LinkLabel,
    pub subchannel: usize,
    pub power_level: usize,
    /// Slots left before the deadline when the decision was taken.
    pub remaining_slots: usize,
    /// Mean scaled reward of the slots the decision was in force and the
    /// link transmitted (filled when it is replaced).
    pub reward: Option<f64>,
}

/// A decision currently in force.
#[derive(Debug, Clone)]
struct Held {
    action: usize,
    reward_sum: f64,
    slots: u32,
    log_index: Option<usize>,
}

/// A transition waiting for its link's next decision.
#[derive(Debug, Clone)]
struct Open {
    state: Vec<f64>,
    action: usize,
    /// Discounted reward accumulated since the decision.
    reward: f64,
    /// Discount of the next slot's reward.
    weight: f64,
    slots: u32,
}

/// Result of one simulated slot.
#[derive(Debug, Clone, Default)]
pub struct SlotResult {
    pub experiences: Vec<Experience>,
    /// (link, subchannel, scaled reward) for the reward matrix.
    pub reward_labels: Vec<(LinkLabel, usize, f64)>,
    pub v2i_sum_rate_bps: f64,
    pub mean_reward: f64,
    pub vehicle_count: usize,
    pub decisions: usize,
    pub decision_time_us: f64,
    /// (delivered, links) when the slot closed a payload period.
    pub period: Option<(usize, usize)>,
}

/// Environment plus the per-link decision state of one run.
pub struct Runner {
    cfg: LabConfig,
    policy: Policy,
    seed: u64,
    mode: Mode,
    vehicles: usize,
    pub env: Environment,
    choices: BTreeMap<LinkLabel, Choice>,
    held: BTreeMap<LinkLabel, Held>,
    open: BTreeMap<LinkLabel, Open>,
    policy_rng: LabRng,
    sampling_rng: LabRng,
    slot: u64,
    keep_logs: bool,
    pub logs: Vec<DecisionLog>,
}

impl Runner {
    pub fn new(cfg: &LabConfig, policy: Policy, seed: u64, mode: Mode, vehicles: usize, episode: u64) -> Result<Self> {
        let env = Environment::new(&cfg.env, mode, vehicles, cfg.graph.destinations_per_vehicle, seed, episode)?;
        Ok(Self {
            cfg: cfg.clone(),
            policy,
            seed,
            mode,
            vehicles,
            env,
            choices: BTreeMap::new(),
            held: BTreeMap::new(),
            open: BTreeMap::new(),
            policy_rng: rng::stream(seed, Stream::Policy, episode),
            sampling_rng: rng::stream(seed, Stream::Sampling, episode),
            slot: 0,
            keep_logs: false,
            logs: Vec::new(),
        })
    }

    pub fn with_logs(mut self) -> Self {
        self.keep_logs = true;
        self
    }

    /// Fresh environment for `episode`; choices and unfinished experiences
    /// are dropped, learned state lives outside the runner.
    pub fn reset(&mut self, episode: u64) -> Result<()> {
        self.env = Environment::new(
            &self.cfg.env,
            self.mode,
            self.vehicles,
            self.cfg.graph.destinations_per_vehicle,
            self.seed,
            episode,
        )?;
        self.choices.clear();
        self.held.clear();
        self.open.clear();
        self.policy_rng = rng::stream(self.seed, Stream::Policy, episode);
        self.sampling_rng = rng::stream(self.seed, Stream::Sampling, episode);
        Ok(())
    }

    pub fn choice(&self, label: &LinkLabel) -> Option<Choice> {
        self.choices.get(label).copied()
    }

    /// Links deciding in the current slot.
    pub fn deciders(&self) -> Vec<usize> {
        let batches = self.cfg.run.decision_batches.max(1) as u64;
        let turn = (self.slot % batches) as usize;
        let states = self.env.link_states();
        self.env
            .links()
            .iter()
            .enumerate()
            .filter(|(j, l)| {
                !self.choices.contains_key(l) || (j % batches as usize == turn && states[*j].is_active())
            })
            .map(|(j, _)| j)
            .collect()
    }

    /// Decides for this slot's batch and steps the environment once. A
    /// transition runs from one decision of a link to its next one: the
    /// discounted rewards of the slots in between, with idle slots after
    /// delivery credited, and the number of slots for the bootstrap discount.
    pub fn step(&mut self, models: Option<&Models>, epsilon: f64) -> Result<SlotResult> {
        let m = self.cfg.env.subchannels;
        let labels: Vec<LinkLabel> = self.env.links().to_vec();
        let mut result = SlotResult { vehicle_count: self.env.vehicle_count(), ..SlotResult::default() };
        let learned = match (self.policy, models) {
            (Policy::Random, _) => None,
            (_, Some(models)) => Some(models),
            (_, None) => return Err(LabError::config("learned policy needs trained models")),
        };

        let deciders = self.deciders();
        let started = Instant::now();
        let states = match learned {
            Some(md) => self.observe(md, &deciders)?,
            None => BTreeMap::new(),
        };
        for (&j, state) in &states {
            if let Some(o) = self.open.remove(&labels[j]) {
                result.experiences.push(Experience {
                    state: o.state,
                    action: o.action,
                    reward: o.reward,
                    next_state: state.clone(),
                    slots: o.slots,
                });
            }
        }
        for &j in &deciders {
            let label = labels[j];
            let action = match learned {
                Some(md) => select_action(&md.agent.online, &states[&j], epsilon, &mut self.policy_rng)?,
                None => self.policy_rng.gen_range(0..self.cfg.env.action_count()),
            };
            self.release(&label);
            let choice = CompositeAction(action).decompose(m);
            self.choices.insert(label, choice);
            let log_index = self.keep_logs.then(|| {
                self.logs.push(DecisionLog {
                    slot: self.slot,
                    link: label,
                    subchannel: choice.subchannel,
                    power_level: choice.power_level,
                    remaining_slots: self.env.link_states()[j].remaining_slots,
                    reward: None,
                });
                self.logs.len() - 1
            });
            self.held.insert(label, Held { action, reward_sum: 0.0, slots: 0, log_index });
            if let Some(state) = states.get(&j) {
                self.open.insert(label, Open { state: state.clone(), action, reward: 0.0, weight: 1.0, slots: 0 });
            }
        }
        result.decisions = deciders.len();
        result.decision_time_us = started.elapsed().as_secs_f64() * 1e6;

        let alloc = AllocationMatrix { choices: labels.iter().map(|l| self.choices.get(l).copied()).collect() };
        let out = self.env.step_small(&alloc)?;
        let scale = self.cfg.agent.reward_scale;
        let discount = self.cfg.agent.discount;
        let idle_credit = scale * (1.0 - self.cfg.env.lambda_c) * self.cfg.env.delivered_efficiency;
        let link_states = self.env.link_states();
        for (j, label) in labels.iter().enumerate() {
            let r = match out.link_sinr[j] {
                Some(_) => {
                    // the shared term is swapped for the link's marginal contribution to it
                    let r = scale * (out.rewards[j] - out.shared + out.marginal[j]);
                    let held = self.held.get_mut(label).expect("transmitting link holds a decision");
                    held.reward_sum += r;
                    held.slots += 1;
                    result.reward_labels.push((*label, held.action % m, r));
                    r
                }
                // a delivered link idles with the credit the shared term gives it
                None if link_states[j].outcome == LinkOutcome::Delivered => idle_credit,
                None => 0.0,
            };
            if let Some(o) = self.open.get_mut(label) {
                o.reward += o.weight * r;
                o.weight *= discount;
                o.slots += 1;
            }
        }
        result.mean_reward = scale * out.rewards.iter().sum::<f64>() / out.rewards.len().max(1) as f64;
        result.v2i_sum_rate_bps = out.v2i_sum_rate_bps;
        self.slot += 1;

        if let Some(summary) = out.period {
            result.period = Some((summary.delivered, summary.links));
            self.env.next_period()?;
            let present: BTreeSet<LinkLabel> = self.env.links().iter().copied().collect();
            let gone: Vec<LinkLabel> = self.choices.keys().filter(|l| !present.contains(l)).copied().collect();
            for l in gone {
                self.release(&l);
                self.choices.remove(&l);
                self.open.remove(&l);
            }
        }
        Ok(result)
    }

    /// Agent states of the given links (all share one neighbourhood draw
    /// per link).
    fn observe(&mut self, models: &Models, links: &[usize]) -> Result<BTreeMap<usize, Vec<f64>>> {
        let m = self.cfg.env.subchannels;
        let fanout = self.cfg.graph.fanout;
        let deadline = self.cfg.env.deadline_s;
        let labels = self.env.links();
        let transmitting: Vec<Option<Choice>> = labels
            .iter()
            .enumerate()
            .map(|(j, l)| self.choices.get(l).copied().filter(|_| self.env.link_states()[j].is_active()))
            .collect();
        let features = node_features(&self.env);
        let embeddings = match (self.policy, &models.sage) {
            (Policy::GnnDdqn, Some(sage)) => {
                let topo = self.env.graph();
                let nbs: Vec<_> =
                    links.iter().map(|&j| sample_neighborhood(topo, j, fanout, &mut self.sampling_rng)).collect();
                Some(sage.live.embed_batch(topo, &features, &nbs)?.0)
            }
            (Policy::GnnDdqn, None) => return Err(LabError::config("GNN-DDQN policy needs GraphSAGE checkpoints")),
            _ => None,
        };
        let mut out = BTreeMap::new();
        for (k, &j) in links.iter().enumerate() {
            let link = self.env.link_states()[j];
            let state = AgentState {
                embedding: embeddings.as_ref().map_or(vec![0.0; self.cfg.sage.embed_dim], |e| e.row(k).to_vec()),
                feature: features.row(j).to_vec(),
                neighbor_counts: neighbor_counts(self.env.graph(), j, &transmitting, m),
                remaining_fraction: link.remaining_bits / self.cfg.env.payload_bits,
                remaining_time: self.env.remaining_time(j),
            };
            out.insert(j, state.to_vector(fanout as f64, deadline));
        }
        Ok(out)
    }

    /// Ends the decision in force for `label`, writing its mean per-slot
    /// reward into the decision log.
    fn release(&mut self, label: &LinkLabel) {
        if let Some(h) = self.held.remove(label) {
            if let (Some(k), true) = (h.log_index, h.slots > 0) {
                self.logs[k].reward = Some(h.reward_sum / h.slots as f64);
            }
        }
    }
}

/// Buffers rows of the running payload period until its success rate is
/// known.
#[derive(Debug, Default)]
struct PeriodAttribution {
    open: Vec<usize>,
}

impl PeriodAttribution {
    fn push(&mut self, rows: &mut Vec<MetricsRow>, row: MetricsRow, period: Option<(usize, usize)>) {
        rows.push(row);
        self.open.push(rows.len() - 1);
        if let Some((delivered, links)) = period {
            let rate = if links == 0 { 1.0 } else { delivered as f64 / links as f64 };
            for k in self.open.drain(..) {
                rows[k].v2v_success_rate = rate;
            }
        }
    }

    fn close_with(&mut self, rows: &mut [MetricsRow], rate: f64) {
        for k in self.open.drain(..) {
            rows[k].v2v_success_rate = rate;
        }
    }

    fn is_open(&self) -> bool {
        !self.open.is_empty()
    }
}

fn provisional_success(env: &Environment) -> f64 {
    let states = env.link_states();
    if states.is_empty() {
        return 1.0;
    }
    states.iter().filter(|s| s.outcome == LinkOutcome::Delivered).count() as f64 / states.len() as f64
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub rows: Vec<MetricsRow>,
    /// Mean scaled reward per slot.
    pub reward_trace: Vec<f64>,
    /// (iteration, mean TD loss of the iteration's learn step)
    pub td_losses: Vec<(u64, f64)>,
    /// (iteration, mean GraphSAGE loss of the update round)
    pub sage_losses: Vec<(u64, f64)>,
}

/// Progress hook called after every reset-period block.
pub type Checkpointer<'a> = dyn FnMut(u64, &Models) -> Result<()> + 'a;

/// Trains `policy` from scratch for `iterations` slots at the configured
/// vehicle count. The environment is reset every `reset_period` iterations;
/// replay buffer and networks persist across resets.
pub fn train(cfg: &LabConfig, policy: Policy, seed: u64, iterations: u64, mut on_block: Option<&mut Checkpointer<'_>>) -> Result<(Models, TrainReport)> {
    if policy == Policy::Random {
        return Err(LabError::config("the random baseline has nothing to train"));
    }
    cfg.validate()?;
    let mut models = Models::init(cfg, policy, seed)?;
    let mut replay = ReplayBuffer::new(cfg.agent.replay_capacity);
    let mut replay_rng = rng::stream(seed, Stream::Replay, 0);
    let mut rg = RewardMatrix::new(cfg.env.subchannels);
    let mut episode = 0;
    let mut runner = Runner::new(cfg, policy, seed, Mode::Static, cfg.run.vehicles, episode)?;
    let mut report = TrainReport::default();
    let mut attribution = PeriodAttribution::default();
    let reset_period = cfg.run.reset_period.max(1);

    for it in 0..iterations {
        if it > 0 && it % reset_period == 0 {
            if attribution.is_open() {
                attribution.close_with(&mut report.rows, provisional_success(&runner.env));
            }
            if let Some(hook) = on_block.as_deref_mut() {
                hook(it, &models)?;
            }
            episode += 1;
            runner.reset(episode)?;
            rg.clear();
            debug!("iteration {it}: environment reset (episode {episode})");
        }
        let eps = epsilon_at(&cfg.agent, it, iterations);
        let res = runner.step(Some(&models), eps)?;
        for e in res.experiences.iter().cloned() {
            replay.push(e);
        }
        for &(label, sub, r) in &res.reward_labels {
            rg.record(label, sub, r, it);
        }
        if let Some(rep) = models.agent.learn_step(&replay, &mut replay_rng)? {
            report.td_losses.push((it, rep.loss));
        }
        if let Some(sage) = models.sage.as_mut() {
            if (it + 1) % cfg.sage.train_every.max(1) == 0 {
                if let Some(loss) = sage_round(cfg, sage, &runner.env, &rg, it, &mut replay_rng)? {
                    report.sage_losses.push((it, loss));
                }
            }
        }
        report.reward_trace.push(res.mean_reward);
        let row = MetricsRow {
            mode: "train",
            policy,
            seed,
            index: it,
            vehicle_count: res.vehicle_count,
            v2i_sum_rate_bps: res.v2i_sum_rate_bps,
            v2v_success_rate: 0.0,
            decision_latency_us: latency(cfg, &res),
        };
        attribution.push(&mut report.rows, row, res.period);
        if it % 1000 == 999 {
            let recent = &report.rows[report.rows.len().saturating_sub(1000)..];
            let success = recent.iter().map(|r| r.v2v_success_rate).sum::<f64>() / recent.len() as f64;
            info!("{} seed {seed}: iteration {} eps {eps:.3} success {success:.3}", policy.label(), it + 1);
        }
    }
    if attribution.is_open() {
        attribution.close_with(&mut report.rows, provisional_success(&runner.env));
    }
    if let Some(hook) = on_block.as_deref_mut() {
        hook(iterations, &models)?;
    }
    Ok((models, report))
}

fn latency(cfg: &LabConfig, res: &SlotResult) -> Option<f64> {
    (cfg.run.record_latency && res.decisions > 0).then(|| res.decision_time_us / res.decisions as f64)
}

/// `updates_per_round` GraphSAGE steps on minibatches of links holding fresh
/// reward labels. Returns the mean loss, or `None` when no link has labels.
fn sage_round(
    cfg: &LabConfig,
    sage: &mut SageTrainer,
    env: &Environment,
    rg: &RewardMatrix,
    now: u64,
    rng: &mut LabRng,
) -> Result<Option<f64>> {
    let topo = env.graph();
    let labelled: Vec<usize> =
        (0..topo.len()).filter(|&j| rg.has_fresh(&topo.nodes()[j], now, cfg.sage.stale_after)).collect();
    if labelled.is_empty() {
        return Ok(None);
    }
    let features = node_features(env);
    let mut total = 0.0;
    for _ in 0..cfg.sage.updates_per_round {
        let picks: Vec<usize> = (0..cfg.sage.minibatch).map(|_| labelled[rng.gen_range(0..labelled.len())]).collect();
        let nbs: Vec<_> = picks.iter().map(|&j| sample_neighborhood(topo, j, cfg.graph.fanout, rng)).collect();
        let rows: Vec<_> = picks.iter().map(|&j| rg.row(&topo.nodes()[j], now, cfg.sage.stale_after)).collect();
        let (values, mask) = reward_batch(&rows);
        total += sage.train_step(topo, &features, &nbs, &values, &mask)?;
    }
    Ok(Some(total / cfg.sage.updates_per_round.max(1) as f64))
}

/// Mean and standard error over resets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, se: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return Self { mean, se: 0.0 };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Self { mean, se: (var / n as f64).sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub policy: Policy,
    pub vehicles: usize,
    pub resets: usize,
    pub samples: usize,
    pub v2i_sum_rate_bps: MeanSe,
    pub v2v_success_rate: MeanSe,
}

#[derive(Debug, Clone)]
pub struct EvalResult {
    pub rows: Vec<MetricsRow>,
    pub decisions: Vec<DecisionLog>,
    pub summary: EvalSummary,
}

/// Greedy evaluation: `resets` fresh static environments with `samples`
/// slots each. Each sample is credited with the success rate of its payload
/// period; the last period is simulated to its end (unrecorded) so that
/// every sample has a final outcome.
pub fn evaluate_static(
    cfg: &LabConfig,
    models: Option<&Models>,
    policy: Policy,
    seed: u64,
    vehicles: usize,
    resets: usize,
    samples: usize,
) -> Result<EvalResult> {
    let mut rows = Vec::with_capacity(resets * samples);
    let mut decisions = Vec::new();
    let mut per_reset_rate = Vec::with_capacity(resets);
    let mut per_reset_success = Vec::with_capacity(resets);
    for r in 0..resets {
        let mut runner = Runner::new(cfg, policy, seed, Mode::Static, vehicles, TEST_EPISODE_BASE + r as u64)?.with_logs();
        let start = rows.len();
        let mut attribution = PeriodAttribution::default();
        for s in 0..samples {
            let res = runner.step(models, 0.0)?;
            let row = MetricsRow {
                mode: "test",
                policy,
                seed,
                index: (r * samples + s) as u64,
                vehicle_count: res.vehicle_count,
                v2i_sum_rate_bps: res.v2i_sum_rate_bps,
                v2v_success_rate: 0.0,
                decision_latency_us: latency(cfg, &res),
            };
            attribution.push(&mut rows, row, res.period);
        }
        while attribution.is_open() {
            let res = runner.step(models, 0.0)?;
            if let Some((delivered, links)) = res.period {
                attribution.close_with(&mut rows, delivered as f64 / links.max(1) as f64);
            }
        }
        let chunk = &rows[start..];
        per_reset_rate.push(chunk.iter().map(|x| x.v2i_sum_rate_bps).sum::<f64>() / chunk.len().max(1) as f64);
        per_reset_success.push(chunk.iter().map(|x| x.v2v_success_rate).sum::<f64>() / chunk.len().max(1) as f64);
        decisions.append(&mut runner.logs);
    }
    Ok(EvalResult {
        rows,
        decisions,
        summary: EvalSummary {
            policy,
            vehicles,
            resets,
            samples,
            v2i_sum_rate_bps: MeanSe::of(&per_reset_rate),
            v2v_success_rate: MeanSe::of(&per_reset_success),
        },
    })
}

/// Five-number summary plus mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl BoxStats {
    /// Quartiles by linear interpolation between order statistics.
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            if v.is_empty() {
                return f64::NAN;
            }
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        let mean = if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
        Self { min: q(0.0), q1: q(0.25), median: q(0.5), q3: q(0.75), max: q(1.0), mean }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSummary {
    pub segment: usize,
    pub first_sample: usize,
    pub samples: usize,
    pub vehicle_count: BoxStats,
    pub v2i_sum_rate_bps: BoxStats,
    pub v2v_success_rate: BoxStats,
}

#[derive(Debug, Clone)]
pub struct DynamicResult {
    pub rows: Vec<MetricsRow>,
    pub segments: Vec<SegmentSummary>,
    pub events: Vec<PopulationEvent>,
}

/// Splits rows into `segments` equal consecutive chunks (the last one takes
/// the remainder).
pub fn segment_summaries(rows: &[MetricsRow], segments: usize) -> Vec<SegmentSummary> {
    let segments = segments.max(1);
    let size = rows.len() / segments;
    (0..segments)
        .map(|k| {
            let start = k * size;
            let end = if k + 1 == segments { rows.len() } else { start + size };
            let chunk = &rows[start..end];
            let col = |f: fn(&MetricsRow) -> f64| BoxStats::of(&chunk.iter().map(f).collect::<Vec<_>>());
            SegmentSummary {
                segment: k,
                first_sample: start,
                samples: chunk.len(),
                vehicle_count: col(|r| r.vehicle_count as f64),
                v2i_sum_rate_bps: col(|r| r.v2i_sum_rate_bps),
                v2v_success_rate: col(|r| r.v2v_success_rate),
            }
        })
        .collect()
}

/// Dynamic-population run with a fixed policy (no online learning). The
/// vehicle trace depends only on `seed`, so different policies see the same
/// arrivals and departures.
pub fn evaluate_dynamic(cfg: &LabConfig, models: Option<&Models>, policy: Policy, seed: u64, steps: usize) -> Result<DynamicResult> {
    let mut runner = Runner::new(cfg, policy, seed, Mode::Dynamic, cfg.run.vehicles, DYNAMIC_EPISODE_BASE)?;
    let mut rows = Vec::with_capacity(steps);
    let mut attribution = PeriodAttribution::default();
    for s in 0..steps {
        let res = runner.step(models, 0.0)?;
        let row = MetricsRow {
            mode: "dynamic",
            policy,
            seed,
            index: s as u64,
            vehicle_count: res.vehicle_count,
            v2i_sum_rate_bps: res.v2i_sum_rate_bps,
            v2v_success_rate: 0.0,
            decision_latency_us: latency(cfg, &res),
        };
        attribution.push(&mut rows, row, res.period);
    }
    while attribution.is_open() {
        let res = runner.step(models, 0.0)?;
        if let Some((delivered, links)) = res.period {
            attribution.close_with(&mut rows, delivered as f64 / links.max(1) as f64);
        }
    }
    let segments = segment_summaries(&rows, cfg.run.dynamic_segments);
    Ok(DynamicResult { rows, segments, events: runner.env.population_events().to_vec() })
}

/// Share of each power level among decisions, binned by remaining time.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyBin {
    /// Remaining time range `(lower_s, upper_s]`.
    pub lower_s: f64,
    pub upper_s: f64,
    pub decisions: usize,
    pub shares: Vec<f64>,
}

/// Bins decisions by remaining time in `bin_slots`-slot bins; bin `k`
/// covers remaining times in `(k * bin, (k + 1) * bin]`. Empty bins are
/// omitted.
pub fn strategy_histogram(logs: &[DecisionLog], bin_slots: usize, slot_s: f64, power_levels: usize) -> Vec<StrategyBin> {
    let bin_slots = bin_slots.max(1);
    let mut counts: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for d in logs {
        if d.remaining_slots == 0 || d.power_level >= power_levels {
            continue;
        }
        let bin = (d.remaining_slots - 1) / bin_slots;
        counts.entry(bin).or_insert_with(|| vec![0; power_levels])[d.power_level] += 1;
    }
    counts
        .into_iter()
        .map(|(bin, c)| {
            let total: usize = c.iter().sum();
            StrategyBin {
                lower_s: (bin * bin_slots) as f64 * slot_s,
                upper_s: ((bin + 1) * bin_slots) as f64 * slot_s,
                decisions: total,
                shares: c.iter().map(|&k| k as f64 / total as f64).collect(),
            }
        })
        .collect()
}

/// Average wall-clock time of one decision (neighbourhood sampling,
/// embedding, state assembly, Q forward pass, argmax) in microseconds.
/// `GraphMode::Complete` aggregates over every other link at both layers.
pub fn decision_latency_us(cfg: &LabConfig, models: &Models, vehicles: usize, mode: GraphMode, decisions: usize, seed: u64) -> Result<f64> {
    let env = Environment::new(&cfg.env, Mode::Static, vehicles, cfg.graph.destinations_per_vehicle, seed, TEST_EPISODE_BASE)?;
    let topo = match mode {
        GraphMode::Implicit => env.graph().clone(),
        GraphMode::Complete => {
            let positions = env.vehicles().map(|v| (v.id, v.position)).collect();
            GraphTopology::from_links(env.links().to_vec(), &positions, GraphMode::Complete)?
        }
    };
    let features = node_features(&env);
    let sage = models.sage.as_ref().ok_or_else(|| LabError::config("latency measurement needs GraphSAGE models"))?;
    let m = cfg.env.subchannels;
    let mut rng = rng::stream(seed, Stream::Sampling, 7);
    let silent: Vec<Option<Choice>> = vec![None; topo.len()];
    let started = Instant::now();
    let mut sink = 0usize;
    for k in 0..decisions {
        let j = k % topo.len();
        let nb = match mode {
            GraphMode::Implicit => sample_neighborhood(&topo, j, cfg.graph.fanout, &mut rng),
            GraphMode::Complete => full_neighborhood(&topo, j),
        };
        let h = sage.live.embed(&topo, &features, &nb)?;
        let state = AgentState {
            embedding: h.to_vec(),
            feature: features.row(j).to_vec(),
            neighbor_counts: neighbor_counts(&topo, j, &silent, m),
            remaining_fraction: 1.0,
            remaining_time: cfg.env.deadline_s,
        };
        let v = state.to_vector(cfg.graph.fanout as f64, cfg.env.deadline_s);
        sink += select_action(&models.agent.online, &v, 0.0, &mut rng)?;
    }
    let elapsed = started.elapsed().as_secs_f64() * 1e6 / decisions.max(1) as f64;
    debug!("latency probe checksum {sink}");
    Ok(elapsed)
}

/// Embeddings of every node of the current slot (diagnostics and tests).
pub fn embed_all(models: &Models, env: &Environment, fanout: usize, rng: &mut LabRng) -> Result<Option<Array2<f64>>> {
    let Some(sage) = &models.sage else { return Ok(None) };
    let topo = env.graph();
    let features = node_features(env);
    let nbs: Vec<_> = (0..topo.len()).map(|j| sample_neighborhood(topo, j, fanout, rng)).collect();
    Ok(Some(sage.live.embed_batch(topo, &features, &nbs)?.0))
}
