//! Lab configuration.
//!
//! Every tunable lives here and is read from a TOML file in which all keys are
//! optional. Values not present fall back to the defaults below. Keys can also
//! be overridden from the process environment using the `V2X__` prefix with a
//! double underscore between section and key, e.g.
//! `V2X__ENV__PAYLOAD_BITS=8480` or `V2X__SEED=11`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Prefix recognised by [`LabConfig::apply_overrides`].
pub const ENV_OVERRIDE_PREFIX: &str = "V2X__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    pub seed: u64,
    pub env: EnvConfig,
    pub graph: GraphConfig,
    pub sage: SageConfig,
    pub agent: AgentConfig,
    pub run: RunConfig,
}

impl Default for LabConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            env: EnvConfig::default(),
            graph: GraphConfig::default(),
            sage: SageConfig::default(),
            agent: AgentConfig::default(),
            run: RunConfig::default(),
        }
    }
}

/// Radio, geometry and reward parameters of the simulated intersection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Number of subchannels, equal to the number of cellular users.
    pub subchannels: usize,
    /// V2V transmit power levels in dBm, strictly decreasing.
    pub power_levels_dbm: Vec<f64>,
    /// Assumed cellular uplink transmit power (not given by the source model).
    pub cue_power_dbm: f64,
    pub bandwidth_hz: f64,
    pub noise_power_dbm: f64,
    /// V2V delivery deadline T0 in seconds.
    pub deadline_s: f64,
    /// Bits each V2V link must deliver per payload period.
    pub payload_bits: f64,
    pub lambda_c: f64,
    pub lambda_p: f64,
    /// Penalty added to a link's reward in the slot its deadline expires undelivered.
    pub failure_penalty: f64,
    /// Spectral efficiency credited to a link once its payload is delivered.
    pub delivered_efficiency: f64,
    pub carrier_ghz: f64,
    pub vehicle_antenna_height_m: f64,
    pub bs_antenna_height_m: f64,
    pub vehicle_antenna_gain_dbi: f64,
    pub bs_antenna_gain_dbi: f64,
    pub vehicle_noise_figure_db: f64,
    pub bs_noise_figure_db: f64,
    pub speed_min_mps: f64,
    pub speed_max_mps: f64,
    pub neighbor_threshold_m: f64,
    pub shadow_std_v2i_db: f64,
    pub shadow_std_v2v_db: f64,
    /// Mobility / shadowing / graph refresh interval.
    pub large_step_s: f64,
    /// Fast-fading and decision slot.
    pub small_step_s: f64,
    /// Per-step increment of the vehicle arrival probability in dynamic mode.
    pub arrival_prob_increment: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            subchannels: 20,
            power_levels_dbm: vec![23.0, 10.0, 5.0],
            cue_power_dbm: 23.0,
            bandwidth_hz: 1.5e6,
            noise_power_dbm: -114.0,
            deadline_s: 0.1,
            payload_bits: 2.0 * 1060.0 * 8.0,
            lambda_c: 0.3,
            lambda_p: 1.0,
            failure_penalty: 10.0,
            delivered_efficiency: 20.0,
            carrier_ghz: 2.0,
            vehicle_antenna_height_m: 1.5,
            bs_antenna_height_m: 25.0,
            vehicle_antenna_gain_dbi: 3.0,
            bs_antenna_gain_dbi: 8.0,
            vehicle_noise_figure_db: 9.0,
            bs_noise_figure_db: 5.0,
            speed_min_mps: 10.0,
            speed_max_mps: 15.0,
            neighbor_threshold_m: 150.0,
            shadow_std_v2i_db: 8.0,
            shadow_std_v2v_db: 3.0,
            large_step_s: 0.1,
            small_step_s: 0.001,
            arrival_prob_increment: 0.02,
        }
    }
}

impl EnvConfig {
    pub fn power_level_count(&self) -> usize {
        self.power_levels_dbm.len()
    }

    pub fn action_count(&self) -> usize {
        self.subchannels * self.power_level_count()
    }

    /// Length of a node feature vector (three per-subchannel arrays).
    pub fn feature_dim(&self) -> usize {
        3 * self.subchannels
    }

    /// Number of small-scale slots in one payload period.
    pub fn slots_per_period(&self) -> usize {
        (self.deadline_s / self.small_step_s).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.subchannels == 0 {
            return Err(LabError::config("env.subchannels must be >= 1"));
        }
        if self.power_levels_dbm.is_empty() {
            return Err(LabError::config("env.power_levels_dbm must not be empty"));
        }
        if self.power_levels_dbm.windows(2).any(|w| w[0] <= w[1]) {
            return Err(LabError::config(
                "env.power_levels_dbm must be strictly decreasing",
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda_c) {
            return Err(LabError::config("env.lambda_c must lie in [0, 1]"));
        }
        if self.deadline_s <= 0.0 {
            return Err(LabError::config("env.deadline_s must be > 0"));
        }
        if self.small_step_s <= 0.0 || self.small_step_s > self.deadline_s {
            return Err(LabError::config(
                "env.small_step_s must be in (0, deadline_s]",
            ));
        }
        let ratio = self.deadline_s / self.small_step_s;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(LabError::config(
                "env.deadline_s must be a whole number of small steps",
            ));
        }
        if self.large_step_s <= 0.0 {
            return Err(LabError::config("env.large_step_s must be > 0"));
        }
        if self.payload_bits <= 0.0 {
            return Err(LabError::config("env.payload_bits must be > 0"));
        }
        if self.bandwidth_hz <= 0.0 {
            return Err(LabError::config("env.bandwidth_hz must be > 0"));
        }
        if self.speed_min_mps < 0.0 || self.speed_max_mps < self.speed_min_mps {
            return Err(LabError::config("env speed range is empty or negative"));
        }
        if !(0.0..=1.0).contains(&self.arrival_prob_increment) {
            return Err(LabError::config(
                "env.arrival_prob_increment must lie in [0, 1]",
            ));
        }
        Ok(())
    }
}

/// Link-graph construction and neighbour sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// Neighbours sampled per node at each GraphSAGE layer.
    pub fanout: usize,
    pub destinations_per_vehicle: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            fanout: 5,
            destinations_per_vehicle: 3,
        }
    }
}

/// GraphSAGE network and its smoothed-label trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SageConfig {
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub learning_rate: f64,
    pub learning_rate_floor: f64,
    pub lr_decay: f64,
    pub lr_decay_every: u64,
    /// Weight of the lagged network's output in the smoothed label.
    pub kappa: f64,
    pub lagged_sync_every: u64,
    /// Environment iterations between training rounds.
    pub train_every: u64,
    pub updates_per_round: usize,
    pub minibatch: usize,
    /// Reward-matrix entries older than this many iterations are ignored.
    pub stale_after: u64,
}

impl Default for SageConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 60,
            embed_dim: 20,
            learning_rate: 0.01,
            learning_rate_floor: 1e-4,
            lr_decay: 0.99,
            lr_decay_every: 100,
            kappa: 0.9,
            lagged_sync_every: 200,
            train_every: 50,
            updates_per_round: 120,
            minibatch: 32,
            stale_after: 500,
        }
    }
}

/// DDQN agent shared by every link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub learning_rate_floor: f64,
    pub lr_decay: f64,
    pub lr_decay_every: u64,
    pub discount: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of training over which epsilon anneals linearly.
    pub epsilon_anneal_fraction: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub target_sync_every: u64,
    /// Multiplier applied to environment rewards before they enter the
    /// replay buffer and the reward matrix.
    pub reward_scale: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: vec![500, 250, 120],
            learning_rate: 0.005,
            learning_rate_floor: 1e-4,
            lr_decay: 0.99,
            lr_decay_every: 100,
            discount: 0.95,
            epsilon_start: 1.0,
            epsilon_end: 0.02,
            epsilon_anneal_fraction: 0.8,
            replay_capacity: 50_000,
            batch_size: 64,
            target_sync_every: 500,
            reward_scale: 0.01,
        }
    }
}

/// Run lengths and test campaign sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub iterations: u64,
    pub reset_period: u64,
    pub vehicles: usize,
    /// Number of rotating decision batches.
    pub decision_batches: usize,
    pub test_resets: usize,
    pub test_samples: usize,
    pub vehicle_sweep: Vec<usize>,
    pub dynamic_steps: usize,
    pub dynamic_segments: usize,
    /// Measure wall-clock decision latency into the metrics CSV. Off by
    /// default because timings break byte-for-byte reproducibility.
    pub record_latency: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            reset_period: 2000,
            vehicles: 20,
            decision_batches: 10,
            test_resets: 20,
            test_samples: 100,
            vehicle_sweep: vec![10, 20, 30],
            dynamic_steps: 5000,
            dynamic_segments: 5,
            record_latency: false,
        }
    }
}

impl LabConfig {
    /// Parses TOML text; errors carry the line and column of the offending key.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: LabConfig =
            toml::from_str(text).map_err(|e| LabError::config(e.to_string().trim().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                LabError::MissingArtifact(path.to_path_buf())
            } else {
                LabError::Io(e)
            }
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Applies `V2X__SECTION__KEY=value` style overrides. Values are parsed as
    /// TOML literals, falling back to plain strings.
    pub fn apply_overrides<I, K, V>(&self, vars: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut root = toml::Value::try_from(self)
            .map_err(|e| LabError::config(format!("cannot serialize config: {e}")))?;
        let mut touched = false;
        for (key, value) in vars {
            let Some(path) = key.as_ref().strip_prefix(ENV_OVERRIDE_PREFIX) else {
                continue;
            };
            let parts: Vec<String> = path.split("__").map(|p| p.to_ascii_lowercase()).collect();
            let parsed = parse_literal(value.as_ref());
            set_path(&mut root, &parts, parsed).map_err(|msg| {
                LabError::config(format!("override {}: {msg}", key.as_ref()))
            })?;
            touched = true;
        }
        if !touched {
            return Ok(self.clone());
        }
        let cfg: LabConfig = root
            .try_into()
            .map_err(|e: toml::de::Error| LabError::config(e.to_string().trim().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.graph.fanout == 0 {
            return Err(LabError::config("graph.fanout must be >= 1"));
        }
        if self.graph.destinations_per_vehicle == 0 {
            return Err(LabError::config("graph.destinations_per_vehicle must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.sage.kappa) {
            return Err(LabError::config("sage.kappa must lie in [0, 1]"));
        }
        if self.sage.embed_dim == 0 || self.sage.hidden_dim == 0 {
            return Err(LabError::config("sage dimensions must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.agent.discount) {
            return Err(LabError::config("agent.discount must lie in [0, 1]"));
        }
        for eps in [self.agent.epsilon_start, self.agent.epsilon_end] {
            if !(0.0..=1.0).contains(&eps) {
                return Err(LabError::config("agent epsilon values must lie in [0, 1]"));
            }
        }
        if self.agent.batch_size == 0 || self.agent.replay_capacity < self.agent.batch_size {
            return Err(LabError::config(
                "agent.replay_capacity must be >= agent.batch_size >= 1",
            ));
        }
        if self.run.reset_period == 0 {
            return Err(LabError::config("run.reset_period must be > 0"));
        }
        if self.run.iterations == 0 {
            return Err(LabError::config("run.iterations must be > 0"));
        }
        if self.run.decision_batches == 0 {
            return Err(LabError::config("run.decision_batches must be >= 1"));
        }
        if self.run.dynamic_segments == 0 {
            return Err(LabError::config("run.dynamic_segments must be >= 1"));
        }
        Ok(())
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(root: &mut toml::Value, parts: &[String], value: toml::Value) -> std::result::Result<(), String> {
    let (last, prefix) = parts.split_last().ok_or("empty key")?;
    let mut cursor = root;
    for part in prefix {
        cursor = cursor
            .get_mut(part.as_str())
            .ok_or_else(|| format!("unknown section `{part}`"))?;
    }
    let table = cursor.as_table_mut().ok_or("not a table")?;
    if !table.contains_key(last.as_str()) {
        return Err(format!("unknown key `{last}`"));
    }
    table.insert(last.clone(), value);
    Ok(())
}
