//! Discrete-time V2X environment.
//!
//! Two time scales drive the simulator. Every large-scale step (100 ms by
//! default) vehicles move, shadowing is redrawn, each vehicle re-picks its
//! three nearest receivers and the link graph is rebuilt. Every small-scale
//! slot (1 ms) Rayleigh fading is redrawn and the current allocation is
//! scored: SINRs, capacities, payload bookkeeping and per-link rewards.
//!
//! Payload periods last `deadline_s` and always start on a large-scale
//! boundary, so the link set is frozen for the lifetime of a payload.

pub mod channel;
pub mod geometry;
pub mod sinr;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::config::EnvConfig;
use crate::error::{LabError, Result};
use crate::graph::{GraphTopology, LinkLabel};
use crate::rng::{self, LabRng, Stream};
use channel::{dbm_to_mw, mw_to_dbm, shadowing_db, v2i_path_loss_db, v2v_path_loss_db};
use geometry::{base_station, random_lane_point, Lane, Motion, Point, Vehicle, VehicleId};
use sinr::{all_sinrs, capacity, marginal_efficiency, received_interference, AllocationMatrix, Choice, RadioParams, SlotGains};

/// Smallest population for which every vehicle can have three receivers.
pub const MIN_VEHICLES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Fixed population: vehicles leaving the map re-enter on a random lane.
    Static,
    /// Vehicles leave for good and new ones arrive with a ramping probability.
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkOutcome {
    Pending,
    Delivered,
    Failed,
}

/// Payload bookkeeping of one link within the current period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkTransmissionState {
    pub remaining_bits: f64,
    /// Slots left before the deadline; `U_t = remaining_slots * small_step`.
    pub remaining_slots: usize,
    pub outcome: LinkOutcome,
}

impl LinkTransmissionState {
    pub fn fresh(payload_bits: f64, slots: usize) -> Self {
        Self { remaining_bits: payload_bits, remaining_slots: slots, outcome: LinkOutcome::Pending }
    }

    pub fn is_active(&self) -> bool {
        self.outcome == LinkOutcome::Pending
    }
}

/// Per-subchannel local observation of one link, all in dB / dBm.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelObservation {
    /// G_t: V2V gain on each subchannel.
    pub link_gain_db: Vec<f64>,
    /// H_t: transmitter-to-BS gain on each subchannel.
    pub bs_gain_db: Vec<f64>,
    /// I_{t-1}: interference received on each subchannel in the previous slot.
    pub interference_dbm: Vec<f64>,
}

impl ChannelObservation {
    /// `G_t || H_t || I_{t-1}`.
    pub fn concat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.link_gain_db.len());
        out.extend_from_slice(&self.link_gain_db);
        out.extend_from_slice(&self.bs_gain_db);
        out.extend_from_slice(&self.interference_dbm);
        out
    }
}

/// Everything one small-scale slot produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub rewards: Vec<f64>,
    /// Part of each link's reward it would lose by staying silent this slot
    /// (shared term only; zero for links that did not transmit).
    pub marginal: Vec<f64>,
    /// Shared term of the reward, identical for every link.
    pub shared: f64,
    pub cue_sinr: Vec<f64>,
    pub link_sinr: Vec<Option<f64>>,
    pub v2i_sum_rate_bps: f64,
    pub delivered_now: Vec<usize>,
    pub failed_now: Vec<usize>,
    /// Set on the last slot of a payload period.
    pub period: Option<PeriodSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodSummary {
    pub links: usize,
    pub delivered: usize,
    pub failed: usize,
}

impl PeriodSummary {
    pub fn success_rate(&self) -> f64 {
        if self.links == 0 {
            1.0
        } else {
            self.delivered as f64 / self.links as f64
        }
    }
}

/// Vehicle population change at a large-scale step (dynamic mode).
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationEvent {
    pub slot: u64,
    pub added: Vec<VehicleId>,
    pub removed: Vec<VehicleId>,
    pub vehicles_after: usize,
}

/// Large-scale (path loss + shadowing + antennas) gains in dB, per vehicle.
#[derive(Debug, Clone)]
struct LargeScale {
    slot_of: BTreeMap<VehicleId, usize>,
    v2v_db: Array2<f64>,
    vehicle_bs_db: Vec<f64>,
    cue_vehicle_db: Array2<f64>,
    cue_bs_db: Vec<f64>,
}

/// Link-indexed linear large-scale gains.
#[derive(Debug, Clone)]
struct LinkGains {
    own: Vec<f64>,
    to_bs: Vec<f64>,
    cue_bs: Vec<f64>,
    cue_rx: Array2<f64>,
    cross: Array2<f64>,
}

pub struct Environment {
    cfg: EnvConfig,
    radio: RadioParams,
    mode: Mode,
    destinations: usize,
    mobility_rng: LabRng,
    shadow_rng: LabRng,
    fading_rng: LabRng,
    arrival_rng: LabRng,
    destination_rng: LabRng,
    vehicles: BTreeMap<VehicleId, Vehicle>,
    next_id: VehicleId,
    cues: Vec<Point>,
    graph: GraphTopology,
    large: LargeScale,
    link_gains: LinkGains,
    gains: SlotGains,
    link_states: Vec<LinkTransmissionState>,
    last_choices: BTreeMap<LinkLabel, Choice>,
    prev_interference: Array2<f64>,
    slot_in_period: usize,
    slot: u64,
    periods_done: u64,
    arrival_prob: f64,
    events: Vec<PopulationEvent>,
}

impl Environment {
    /// Places `vehicles` vehicles and `m` CUEs uniformly on the lanes. The
    /// `episode` key separates resets of the same run.
    pub fn new(cfg: &EnvConfig, mode: Mode, vehicles: usize, destinations: usize, seed: u64, episode: u64) -> Result<Self> {
        cfg.validate()?;
        if vehicles < destinations + 1 {
            return Err(LabError::config(format!(
                "need at least {} vehicles for {destinations} destinations each, got {vehicles}",
                destinations + 1
            )));
        }
        let periods_per_large = cfg.large_step_s / cfg.deadline_s;
        if periods_per_large < 1.0 - 1e-9 || (periods_per_large - periods_per_large.round()).abs() > 1e-9 {
            return Err(LabError::config("env.large_step_s must be a whole multiple of env.deadline_s"));
        }
        let mut placement = rng::stream(seed, Stream::Placement, episode);
        let mut fleet = BTreeMap::new();
        for id in 0..vehicles {
            let (lane, position) = random_lane_point(&mut placement);
            let speed = placement.gen_range(cfg.speed_min_mps..=cfg.speed_max_mps);
            fleet.insert(id, Vehicle { id, position, lane, speed, destinations: Vec::new() });
        }
        let cues = (0..cfg.subchannels).map(|_| random_lane_point(&mut placement).1).collect();
        let mut env = Self {
            cfg: cfg.clone(),
            radio: RadioParams::from_config(cfg),
            mode,
            destinations,
            mobility_rng: rng::stream(seed, Stream::Mobility, episode),
            shadow_rng: rng::stream(seed, Stream::Shadowing, episode),
            fading_rng: rng::stream(seed, Stream::Fading, episode),
            arrival_rng: rng::stream(seed, Stream::Arrivals, episode),
            destination_rng: rng::stream(seed, Stream::Destinations, episode),
            vehicles: fleet,
            next_id: vehicles,
            cues,
            graph: GraphTopology::from_links(Vec::new(), &BTreeMap::new(), crate::graph::GraphMode::Implicit)?,
            large: LargeScale {
                slot_of: BTreeMap::new(),
                v2v_db: Array2::zeros((0, 0)),
                vehicle_bs_db: Vec::new(),
                cue_vehicle_db: Array2::zeros((0, 0)),
                cue_bs_db: Vec::new(),
            },
            link_gains: LinkGains {
                own: Vec::new(),
                to_bs: Vec::new(),
                cue_bs: Vec::new(),
                cue_rx: Array2::zeros((0, 0)),
                cross: Array2::zeros((0, 0)),
            },
            gains: SlotGains {
                cue_to_bs: Array1::zeros(0),
                link_to_bs: Array2::zeros((0, 0)),
                link_own: Array2::zeros((0, 0)),
                cue_to_rx: Array2::zeros((0, 0)),
                cross: Array2::zeros((0, 0)),
            },
            link_states: Vec::new(),
            last_choices: BTreeMap::new(),
            prev_interference: Array2::zeros((0, 0)),
            slot_in_period: 0,
            slot: 0,
            periods_done: 0,
            arrival_prob: 0.0,
            events: Vec::new(),
        };
        env.refresh_topology()?;
        env.begin_period();
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn radio(&self) -> &RadioParams {
        &self.radio
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn graph(&self) -> &GraphTopology {
        &self.graph
    }

    pub fn links(&self) -> &[LinkLabel] {
        self.graph.nodes()
    }

    pub fn link_count(&self) -> usize {
        self.graph.len()
    }

    pub fn vehicle_count(&self) -> usize {
        self.vehicles.len()
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &Vehicle> {
        self.vehicles.values()
    }

    pub fn cues(&self) -> &[Point] {
        &self.cues
    }

    pub fn link_states(&self) -> &[LinkTransmissionState] {
        &self.link_states
    }

    pub fn gains(&self) -> &SlotGains {
        &self.gains
    }

    /// Total small-scale slots simulated since construction.
    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn slot_in_period(&self) -> usize {
        self.slot_in_period
    }

    pub fn arrival_probability(&self) -> f64 {
        self.arrival_prob
    }

    pub fn set_arrival_probability(&mut self, p: f64) {
        self.arrival_prob = p.clamp(0.0, 1.0);
    }

    pub fn population_events(&self) -> &[PopulationEvent] {
        &self.events
    }

    /// Overrides every vehicle's speed (analysis hook, e.g. freezing mobility).
    pub fn force_speed(&mut self, speed: f64) {
        for v in self.vehicles.values_mut() {
            v.speed = speed;
        }
    }

    /// Remaining time `U_t` of link `j` in seconds.
    pub fn remaining_time(&self, j: usize) -> f64 {
        self.link_states[j].remaining_slots as f64 * self.cfg.small_step_s
    }

    /// Elapsed time of the current payload period in seconds.
    pub fn elapsed_time(&self) -> f64 {
        self.slot_in_period as f64 * self.cfg.small_step_s
    }

    pub fn period_finished(&self) -> bool {
        self.slot_in_period >= self.cfg.slots_per_period()
    }

    /// Observation of link `j` for the current slot.
    pub fn observation(&self, j: usize) -> ChannelObservation {
        let m = self.cfg.subchannels;
        ChannelObservation {
            link_gain_db: (0..m).map(|i| mw_to_dbm(self.gains.link_own[[j, i]])).collect(),
            bs_gain_db: (0..m).map(|i| mw_to_dbm(self.gains.link_to_bs[[j, i]])).collect(),
            interference_dbm: (0..m).map(|i| mw_to_dbm(self.prev_interference[[j, i]])).collect(),
        }
    }

    /// Current choices carried by the environment (last allocation it scored).
    pub fn last_choice(&self, label: &LinkLabel) -> Option<Choice> {
        self.last_choices.get(label).copied()
    }

    /// Advances to the next payload period, running a large-scale step first
    /// when one is due. Call once [`Environment::period_finished`] is true.
    pub fn next_period(&mut self) -> Result<()> {
        let periods_per_large = (self.cfg.large_step_s / self.cfg.deadline_s).round() as u64;
        self.periods_done += 1;
        if self.periods_done % periods_per_large == 0 {
            self.step_large_scale()?;
        }
        self.begin_period();
        Ok(())
    }

    /// Moves vehicles, handles departures/arrivals, redraws shadowing and
    /// rebuilds destinations, link graph and large-scale gains.
    pub fn step_large_scale(&mut self) -> Result<()> {
        let dt = self.cfg.large_step_s;
        let mut removed = Vec::new();
        let mut added = Vec::new();
        let ids: Vec<VehicleId> = self.vehicles.keys().copied().collect();
        for id in ids {
            let motion = self.vehicles.get_mut(&id).expect("id").advance(dt, &mut self.mobility_rng);
            if motion == Motion::Exited {
                let can_leave = self.mode == Mode::Dynamic && self.vehicles.len() > MIN_VEHICLES.max(self.destinations + 1);
                if can_leave {
                    self.vehicles.remove(&id);
                    removed.push(id);
                } else {
                    self.respawn(id);
                }
            }
        }
        if self.mode == Mode::Dynamic {
            if let Some(id) = self.dynamic_arrivals() {
                added.push(id);
            }
            self.events.push(PopulationEvent {
                slot: self.slot,
                added,
                removed,
                vehicles_after: self.vehicles.len(),
            });
        }
        self.refresh_topology()
    }

    /// One arrival draw: with probability `p` a vehicle enters on a random
    /// lane and `p` drops to 0; otherwise `p` grows by the configured step.
    pub fn dynamic_arrivals(&mut self) -> Option<VehicleId> {
        let draw: f64 = self.arrival_rng.gen();
        if draw < self.arrival_prob {
            let lane = Lane(self.arrival_rng.gen_range(0..geometry::LANE_COUNT as u8));
            let speed = self.arrival_rng.gen_range(self.cfg.speed_min_mps..=self.cfg.speed_max_mps);
            let id = self.next_id;
            self.next_id += 1;
            self.vehicles.insert(id, Vehicle { id, position: lane.entry(), lane, speed, destinations: Vec::new() });
            self.arrival_prob = 0.0;
            Some(id)
        } else {
            self.arrival_prob = (self.arrival_prob + self.cfg.arrival_prob_increment).min(1.0);
            None
        }
    }

    fn respawn(&mut self, id: VehicleId) {
        let lane = Lane(self.mobility_rng.gen_range(0..geometry::LANE_COUNT as u8));
        let v = self.vehicles.get_mut(&id).expect("id");
        v.lane = lane;
        v.position = lane.entry();
    }

    fn assign_destinations(&mut self) {
        let snapshot: Vec<(VehicleId, Point)> = self.vehicles.values().map(|v| (v.id, v.position)).collect();
        let threshold = self.cfg.neighbor_threshold_m;
        let want = self.destinations;
        for v in self.vehicles.values_mut() {
            let mut others: Vec<(f64, VehicleId)> = snapshot
                .iter()
                .filter(|(id, _)| *id != v.id)
                .map(|(id, p)| (v.position.distance(p), *id))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let within: Vec<VehicleId> = others.iter().filter(|(d, _)| *d <= threshold).map(|&(_, id)| id).collect();
            v.destinations = if within.len() >= want {
                let mut picked: Vec<VehicleId> =
                    index::sample(&mut self.destination_rng, within.len(), want).into_iter().map(|k| within[k]).collect();
                picked.sort_unstable();
                picked
            } else {
                others.iter().take(want).map(|&(_, id)| id).collect()
            };
        }
    }

    fn refresh_topology(&mut self) -> Result<()> {
        self.assign_destinations();
        let fleet: Vec<Vehicle> = self.vehicles.values().cloned().collect();
        self.graph = GraphTopology::build(&fleet, self.destinations)?;
        self.draw_large_scale();
        self.project_link_gains();
        self.draw_fading();
        Ok(())
    }

    fn draw_large_scale(&mut self) {
        let cfg = &self.cfg;
        let bs = base_station();
        let positions: Vec<Point> = self.vehicles.values().map(|v| v.position).collect();
        let s = positions.len();
        let m = self.cues.len();
        let v2v_fixed = 2.0 * cfg.vehicle_antenna_gain_dbi - cfg.vehicle_noise_figure_db;
        let v2i_fixed = cfg.vehicle_antenna_gain_dbi + cfg.bs_antenna_gain_dbi - cfg.bs_noise_figure_db;
        let mut v2v_db = Array2::zeros((s, s));
        for a in 0..s {
            for b in a..s {
                let (pl, _) = v2v_path_loss_db(cfg, &positions[a], &positions[b]);
                let shadow = if a == b { 0.0 } else { shadowing_db(&mut self.shadow_rng, cfg.shadow_std_v2v_db) };
                let g = v2v_fixed - pl - shadow;
                v2v_db[[a, b]] = g;
                v2v_db[[b, a]] = g;
            }
        }
        let vehicle_bs_db = positions
            .iter()
            .map(|p| v2i_fixed - v2i_path_loss_db(cfg, p, &bs) - shadowing_db(&mut self.shadow_rng, cfg.shadow_std_v2i_db))
            .collect();
        let mut cue_vehicle_db = Array2::zeros((m, s));
        for i in 0..m {
            for a in 0..s {
                let (pl, _) = v2v_path_loss_db(cfg, &self.cues[i], &positions[a]);
                cue_vehicle_db[[i, a]] = v2v_fixed - pl - shadowing_db(&mut self.shadow_rng, cfg.shadow_std_v2v_db);
            }
        }
        let cue_bs_db = self
            .cues
            .iter()
            .map(|p| v2i_fixed - v2i_path_loss_db(cfg, p, &bs) - shadowing_db(&mut self.shadow_rng, cfg.shadow_std_v2i_db))
            .collect();
        let slot_of = self.vehicles.keys().enumerate().map(|(k, &id)| (id, k)).collect();
        self.large = LargeScale { slot_of, v2v_db, vehicle_bs_db, cue_vehicle_db, cue_bs_db };
    }

    fn project_link_gains(&mut self) {
        let lin = |db: f64| dbm_to_mw(db);
        let links = self.graph.nodes();
        let l = links.len();
        let m = self.cues.len();
        let slot = |id: &VehicleId| self.large.slot_of[id];
        let own = links.iter().map(|k| lin(self.large.v2v_db[[slot(&k.tx), slot(&k.rx)]])).collect();
        let to_bs = links.iter().map(|k| lin(self.large.vehicle_bs_db[slot(&k.tx)])).collect();
        let cue_bs = self.large.cue_bs_db.iter().map(|&g| lin(g)).collect();
        let cue_rx = Array2::from_shape_fn((m, l), |(i, j)| lin(self.large.cue_vehicle_db[[i, slot(&links[j].rx)]]));
        let cross = Array2::from_shape_fn((l, l), |(k, j)| lin(self.large.v2v_db[[slot(&links[k].tx), slot(&links[j].rx)]]));
        self.link_gains = LinkGains { own, to_bs, cue_bs, cue_rx, cross };
    }

    /// Redraws Rayleigh fading for every gain the next slot can use. The
    /// number of draws depends only on the link count, so the fading stream
    /// stays aligned across policies.
    fn draw_fading(&mut self) {
        let l = self.graph.len();
        let m = self.cues.len();
        let rng = &mut self.fading_rng;
        let lg = &self.link_gains;
        let mut fade = || -> f64 { Exp1.sample(rng) };
        let link_own = Array2::from_shape_fn((l, m), |(j, _)| lg.own[j] * fade());
        let link_to_bs = Array2::from_shape_fn((l, m), |(j, _)| lg.to_bs[j] * fade());
        let cue_to_bs = Array1::from_shape_fn(m, |i| lg.cue_bs[i] * fade());
        let cue_to_rx = Array2::from_shape_fn((m, l), |(i, j)| lg.cue_rx[[i, j]] * fade());
        let cross = Array2::from_shape_fn((l, l), |(k, j)| lg.cross[[k, j]] * fade());
        self.gains = SlotGains { cue_to_bs, link_to_bs, link_own, cue_to_rx, cross };
    }

    /// Resets every link's payload and deadline, and recomputes the
    /// previous-slot interference from the choices carried over.
    pub fn begin_period(&mut self) {
        let slots = self.cfg.slots_per_period();
        self.link_states = vec![LinkTransmissionState::fresh(self.cfg.payload_bits, slots); self.graph.len()];
        self.slot_in_period = 0;
        let carried = AllocationMatrix {
            choices: self.graph.nodes().iter().map(|l| self.last_choices.get(l).copied()).collect(),
        };
        self.last_choices.retain(|l, _| self.graph.node_index(l).is_some());
        self.prev_interference = received_interference(&self.gains, &self.radio, &carried);
    }

    /// Scores one slot of `alloc` (aligned with [`Environment::links`]) and
    /// advances time by one small step. Choices of inactive links are
    /// ignored; every active link must have one.
    pub fn step_small(&mut self, alloc: &AllocationMatrix) -> Result<StepOutcome> {
        let l = self.graph.len();
        if alloc.len() != l {
            return Err(LabError::config(format!(
                "allocation covers {} links but the environment has {l}",
                alloc.len()
            )));
        }
        if self.period_finished() {
            return Err(LabError::config("payload period finished; call next_period first"));
        }
        alloc.validate(self.cfg.subchannels, self.cfg.power_level_count())?;
        let mut effective = AllocationMatrix::silent(l);
        for j in 0..l {
            if self.link_states[j].is_active() {
                match alloc.choices[j] {
                    Some(c) => effective.choices[j] = Some(c),
                    None => {
                        return Err(LabError::config(format!("active link {} has no allocation", self.graph.nodes()[j])))
                    }
                }
            }
        }
        for (j, c) in alloc.choices.iter().enumerate() {
            if let Some(c) = c {
                self.last_choices.insert(self.graph.nodes()[j], *c);
            }
        }

        let (cue_sinr, link_sinr) = all_sinrs(&self.gains, &self.radio, &effective);
        let bandwidth = self.cfg.bandwidth_hz;
        let dt = self.cfg.small_step_s;
        let v2i_sum_rate_bps: f64 = cue_sinr.iter().map(|&g| capacity(g, bandwidth)).sum();
        let cue_efficiency: f64 = cue_sinr.iter().map(|&g| (1.0 + g).log2()).sum();

        let mut v2v_efficiency = 0.0;
        let mut delivered_now = Vec::new();
        let mut failed_now = Vec::new();
        let mut time_used = vec![0.0; l];
        for j in 0..l {
            let state = &mut self.link_states[j];
            time_used[j] = self.cfg.deadline_s - state.remaining_slots as f64 * dt;
            match (state.outcome, link_sinr[j]) {
                (LinkOutcome::Pending, Some(g)) => {
                    v2v_efficiency += (1.0 + g).log2();
                    state.remaining_bits = (state.remaining_bits - capacity(g, bandwidth) * dt).max(0.0);
                    state.remaining_slots = state.remaining_slots.saturating_sub(1);
                    if state.remaining_bits <= 0.0 {
                        state.outcome = LinkOutcome::Delivered;
                        delivered_now.push(j);
                    } else if state.remaining_slots == 0 {
                        state.outcome = LinkOutcome::Failed;
                        failed_now.push(j);
                    }
                }
                (LinkOutcome::Delivered, _) => {
                    v2v_efficiency += self.cfg.delivered_efficiency;
                    state.remaining_slots = state.remaining_slots.saturating_sub(1);
                }
                _ => {
                    state.remaining_slots = state.remaining_slots.saturating_sub(1);
                }
            }
        }

        let shared = self.cfg.lambda_c * cue_efficiency + (1.0 - self.cfg.lambda_c) * v2v_efficiency;
        let mut rewards: Vec<f64> = time_used.iter().map(|&used| shared - self.cfg.lambda_p * used).collect();
        for &j in &failed_now {
            rewards[j] -= self.cfg.failure_penalty;
        }

        let marginal = marginal_efficiency(&self.gains, &self.radio, &effective, self.cfg.lambda_c);
        self.prev_interference = received_interference(&self.gains, &self.radio, &effective);
        self.slot += 1;
        self.slot_in_period += 1;
        self.draw_fading();

        let period = self.period_finished().then(|| {
            let delivered = self.link_states.iter().filter(|s| s.outcome == LinkOutcome::Delivered).count();
            PeriodSummary { links: l, delivered, failed: l - delivered }
        });
        Ok(StepOutcome { rewards, marginal, shared, cue_sinr, link_sinr, v2i_sum_rate_bps, delivered_now, failed_now, period })
    }
}
