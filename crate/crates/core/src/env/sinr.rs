//! SINR and Shannon capacity over one slot's channel gains.
//!
//! All gains here are linear power ratios for the current slot (path loss,
//! shadowing, antenna gains, receiver noise figure and fast fading already
//! folded in). Powers are in mW.

use ndarray::{Array1, Array2};

use crate::error::{LabError, Result};

/// Subchannel and power level picked by one V2V link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Choice {
    pub subchannel: usize,
    pub power_level: usize,
}

/// Per-link resource choice; `None` means the link is silent this slot
/// (payload delivered or deadline expired).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AllocationMatrix {
    pub choices: Vec<Option<Choice>>,
}

impl AllocationMatrix {
    pub fn silent(links: usize) -> Self {
        Self { choices: vec![None; links] }
    }

    pub fn len(&self) -> usize {
        self.choices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choices.is_empty()
    }

    /// Indicator rho_j[i].
    pub fn indicator(&self, link: usize, subchannel: usize) -> f64 {
        match self.choices[link] {
            Some(c) if c.subchannel == subchannel => 1.0,
            _ => 0.0,
        }
    }

    pub fn validate(&self, subchannels: usize, power_levels: usize) -> Result<()> {
        for (j, c) in self.choices.iter().enumerate() {
            if let Some(c) = c {
                if c.subchannel >= subchannels || c.power_level >= power_levels {
                    return Err(LabError::config(format!(
                        "link {j}: choice {c:?} outside {subchannels} subchannels x {power_levels} power levels"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Linear channel gains of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotGains {
    /// h_i: CUE i to the base station on its own subchannel i. `[m]`
    pub cue_to_bs: Array1<f64>,
    /// h~_j per subchannel: V2V transmitter j to the base station. `[links, m]`
    pub link_to_bs: Array2<f64>,
    /// g_j per subchannel: V2V transmitter j to its own receiver. `[links, m]`
    pub link_own: Array2<f64>,
    /// g_{i,j}: CUE i to receiver of link j (on subchannel i). `[m, links]`
    pub cue_to_rx: Array2<f64>,
    /// g^v_{k,j}: transmitter of link k to receiver of link j, on the
    /// subchannel k transmits on. `[links, links]`
    pub cross: Array2<f64>,
}

impl SlotGains {
    pub fn subchannels(&self) -> usize {
        self.cue_to_bs.len()
    }

    pub fn links(&self) -> usize {
        self.link_own.nrows()
    }
}

/// Powers and noise in mW, bandwidth in Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioParams {
    pub noise_mw: f64,
    pub cue_power_mw: f64,
    pub power_levels_mw: Vec<f64>,
    pub bandwidth_hz: f64,
}

impl RadioParams {
    pub fn from_config(cfg: &crate::config::EnvConfig) -> Self {
        use super::channel::dbm_to_mw;
        Self {
            noise_mw: dbm_to_mw(cfg.noise_power_dbm),
            cue_power_mw: dbm_to_mw(cfg.cue_power_dbm),
            power_levels_mw: cfg.power_levels_dbm.iter().map(|&p| dbm_to_mw(p)).collect(),
            bandwidth_hz: cfg.bandwidth_hz,
        }
    }

    fn link_power(&self, c: Choice) -> f64 {
        self.power_levels_mw[c.power_level]
    }
}

/// B log2(1 + sinr) in bits/s.
pub fn capacity(sinr: f64, bandwidth_hz: f64) -> f64 {
    bandwidth_hz * (1.0 + sinr).log2()
}

/// SINR of CUE `i` on its uplink subchannel.
pub fn cue_sinr(gains: &SlotGains, radio: &RadioParams, alloc: &AllocationMatrix, i: usize) -> f64 {
    let mut interference = 0.0;
    for (j, c) in alloc.choices.iter().enumerate() {
        if let Some(c) = c {
            if c.subchannel == i {
                interference += radio.link_power(*c) * gains.link_to_bs[[j, i]];
            }
        }
    }
    radio.cue_power_mw * gains.cue_to_bs[i] / (radio.noise_mw + interference)
}

/// SINR of V2V link `j`; `None` when the link is silent.
pub fn vue_sinr(gains: &SlotGains, radio: &RadioParams, alloc: &AllocationMatrix, j: usize) -> Option<f64> {
    let own = alloc.choices[j]?;
    let i = own.subchannel;
    let signal = radio.link_power(own) * gains.link_own[[j, i]];
    let v2i = radio.cue_power_mw * gains.cue_to_rx[[i, j]];
    let mut v2v = 0.0;
    for (k, c) in alloc.choices.iter().enumerate() {
        if k == j {
            continue;
        }
        if let Some(c) = c {
            if c.subchannel == i {
                v2v += radio.link_power(*c) * gains.cross[[k, j]];
            }
        }
    }
    Some(signal / (radio.noise_mw + v2i + v2v))
}

/// SINRs of every CUE and every V2V link, grouping links by subchannel.
pub fn all_sinrs(gains: &SlotGains, radio: &RadioParams, alloc: &AllocationMatrix) -> (Vec<f64>, Vec<Option<f64>>) {
    let m = gains.subchannels();
    let groups = group_by_subchannel(alloc, m);
    let cue = (0..m)
        .map(|i| {
            let interference: f64 = groups[i]
                .iter()
                .map(|&(j, p)| radio.power_levels_mw[p] * gains.link_to_bs[[j, i]])
                .sum();
            radio.cue_power_mw * gains.cue_to_bs[i] / (radio.noise_mw + interference)
        })
        .collect();
    let mut vue = vec![None; alloc.len()];
    for (i, group) in groups.iter().enumerate() {
        for &(j, p) in group {
            let signal = radio.power_levels_mw[p] * gains.link_own[[j, i]];
            let mut denom = radio.noise_mw + radio.cue_power_mw * gains.cue_to_rx[[i, j]];
            for &(k, pk) in group {
                if k != j {
                    denom += radio.power_levels_mw[pk] * gains.cross[[k, j]];
                }
            }
            vue[j] = Some(signal / denom);
        }
    }
    (cue, vue)
}

/// Change of `lambda_c * sum_i log2(1 + cue_i) + (1 - lambda_c) * sum_j log2(1 + vue_j)`
/// when each transmitting link is silenced on its own, all others unchanged.
/// Zero for silent links.
pub fn marginal_efficiency(gains: &SlotGains, radio: &RadioParams, alloc: &AllocationMatrix, lambda_c: f64) -> Vec<f64> {
    let m = gains.subchannels();
    let groups = group_by_subchannel(alloc, m);
    let mut out = vec![0.0; alloc.len()];
    for (i, group) in groups.iter().enumerate() {
        let tx = |j: usize, p: usize| radio.power_levels_mw[p] * gains.link_to_bs[[j, i]];
        let cue_signal = radio.cue_power_mw * gains.cue_to_bs[i];
        let cue_total: f64 = group.iter().map(|&(j, p)| tx(j, p)).sum();
        let denoms: Vec<f64> = group
            .iter()
            .map(|&(j, _)| {
                let mut d = radio.noise_mw + radio.cue_power_mw * gains.cue_to_rx[[i, j]];
                for &(k, pk) in group {
                    if k != j {
                        d += radio.power_levels_mw[pk] * gains.cross[[k, j]];
                    }
                }
                d
            })
            .collect();
        let signals: Vec<f64> = group.iter().map(|&(j, p)| radio.power_levels_mw[p] * gains.link_own[[j, i]]).collect();
        for (a, &(j, p)) in group.iter().enumerate() {
            let without = radio.noise_mw + cue_total - tx(j, p);
            let cue_gain = (1.0 + cue_signal / (radio.noise_mw + cue_total)).log2() - (1.0 + cue_signal / without).log2();
            let mut v2v = (1.0 + signals[a] / denoms[a]).log2();
            for (b, &(k, _)) in group.iter().enumerate() {
                if k != j {
                    let reduced = denoms[b] - radio.power_levels_mw[p] * gains.cross[[j, k]];
                    v2v += (1.0 + signals[b] / denoms[b]).log2() - (1.0 + signals[b] / reduced).log2();
                }
            }
            out[j] = lambda_c * cue_gain + (1.0 - lambda_c) * v2v;
        }
    }
    out
}

/// Interference power (mW) each link's receiver sees on every subchannel:
/// the subchannel's CUE plus all other transmitting links on it. `[links, m]`
pub fn received_interference(gains: &SlotGains, radio: &RadioParams, alloc: &AllocationMatrix) -> Array2<f64> {
    let m = gains.subchannels();
    let links = alloc.len();
    let mut out = Array2::zeros((links, m));
    for j in 0..links {
        for i in 0..m {
            out[[j, i]] = radio.cue_power_mw * gains.cue_to_rx[[i, j]];
        }
    }
    for (k, c) in alloc.choices.iter().enumerate() {
        if let Some(c) = c {
            let p = radio.link_power(*c);
            for j in 0..links {
                if j != k {
                    out[[j, c.subchannel]] += p * gains.cross[[k, j]];
                }
            }
        }
    }
    out
}

/// Per-subchannel V2V-to-V2V interference, summed from the receiving side
/// (over transmitting receivers only) and from the emitting side.
pub fn v2v_interference_balance(gains: &SlotGains, radio: &RadioParams, alloc: &AllocationMatrix) -> (Vec<f64>, Vec<f64>) {
    let m = gains.subchannels();
    let mut received = vec![0.0; m];
    let mut contributed = vec![0.0; m];
    for (j, cj) in alloc.choices.iter().enumerate() {
        let Some(cj) = cj else { continue };
        for (k, ck) in alloc.choices.iter().enumerate() {
            let Some(ck) = ck else { continue };
            if k != j && ck.subchannel == cj.subchannel {
                received[cj.subchannel] += radio.link_power(*ck) * gains.cross[[k, j]];
            }
        }
    }
    for (k, ck) in alloc.choices.iter().enumerate() {
        let Some(ck) = ck else { continue };
        let p = radio.link_power(*ck);
        for (j, cj) in alloc.choices.iter().enumerate() {
            if let Some(cj) = cj {
                if j != k && cj.subchannel == ck.subchannel {
                    contributed[ck.subchannel] += p * gains.cross[[k, j]];
                }
            }
        }
    }
    (received, contributed)
}

fn group_by_subchannel(alloc: &AllocationMatrix, m: usize) -> Vec<Vec<(usize, usize)>> {
    let mut groups = vec![Vec::new(); m];
    for (j, c) in alloc.choices.iter().enumerate() {
        if let Some(c) = c {
            groups[c.subchannel].push((j, c.power_level));
        }
    }
    groups
}
