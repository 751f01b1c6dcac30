//! Edge-weighted two-layer GraphSAGE over the link graph and its
//! smoothed-label trainer.
//!
//! One round for node `v` with sampled neighbours `N_s(v)`:
//!
//! ```text
//! z_v = relu(W_a * sum_u(delta_uv * x_u) / |N_s(v)| + b_a)
//! h_v = relu(W_u * (z_v + x_v) + b_u)
//! ```
//!
//! The inner round maps features to `hidden_dim`, the outer round aggregates
//! the inner outputs back to feature width, adds `x_v` and maps to
//! `embed_dim`.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use crate::config::SageConfig;
use crate::env::{ChannelObservation, Environment};
use crate::error::{LabError, Result};
use crate::graph::{sample_neighbors, GraphTopology, LinkLabel, SampledNeighborhood};
use crate::nn::{
    fingerprint, layers_from_checkpoint, layers_to_arrays, sgd_update, squared_error, Activation, Checkpoint,
    DenseLayer, Gradients, LrSchedule, NamedArray,
};

/// Gains and interference enter the networks as dB / 60.
pub const FEATURE_SCALE_DB: f64 = 60.0;

/// Scaled node feature `x_v = (G_t || H_t || I_{t-1}) / 60`.
pub fn node_feature(obs: &ChannelObservation) -> Vec<f64> {
    obs.concat().into_iter().map(|v| v / FEATURE_SCALE_DB).collect()
}

/// Features of every link of the current slot, one row per graph node.
pub fn node_features(env: &Environment) -> Array2<f64> {
    let l = env.link_count();
    let d = 3 * env.config().subchannels;
    let mut out = Array2::zeros((l, d));
    for j in 0..l {
        let row = node_feature(&env.observation(j));
        out.row_mut(j).assign(&ArrayView1::from(&row));
    }
    out
}

const AGG1: usize = 0;
const UPD1: usize = 1;
const AGG2: usize = 2;
const UPD2: usize = 3;
const HEAD: usize = 4;

/// Parameters: inner aggregate/update, outer aggregate/update and, when the
/// label width differs from the embedding width, a linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct SageNet {
    layers: Vec<DenseLayer>,
}

/// Forward intermediates of a batch of embeddings.
#[derive(Debug, Clone)]
pub struct SageCache {
    inner_in: Array2<f64>,
    inner_pre_a: Array2<f64>,
    inner_sum: Array2<f64>,
    inner_pre_u: Array2<f64>,
    outer_in: Array2<f64>,
    outer_pre_a: Array2<f64>,
    outer_sum: Array2<f64>,
    outer_pre_u: Array2<f64>,
    embeddings: Array2<f64>,
    /// (batch row, inner row, coefficient delta / |N_s(v)|)
    outer_terms: Vec<(usize, usize, f64)>,
}

impl SageNet {
    pub fn new<R: Rng + ?Sized>(feature_dim: usize, hidden_dim: usize, embed_dim: usize, label_dim: usize, rng: &mut R) -> Self {
        let mut layers = vec![
            DenseLayer::xavier(feature_dim, feature_dim, Activation::Relu, rng),
            DenseLayer::xavier(feature_dim, hidden_dim, Activation::Relu, rng),
            DenseLayer::xavier(hidden_dim, feature_dim, Activation::Relu, rng),
            DenseLayer::xavier(feature_dim, embed_dim, Activation::Relu, rng),
        ];
        if label_dim != embed_dim {
            layers.push(DenseLayer::xavier(embed_dim, label_dim, Activation::Identity, rng));
        }
        Self { layers }
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if !(4..=5).contains(&layers.len()) {
            return Err(LabError::structural(format!("GraphSAGE net needs 4 or 5 layers, got {}", layers.len())));
        }
        let f = layers[AGG1].input_dim();
        let ok = layers[AGG1].output_dim() == f
            && layers[UPD1].input_dim() == f
            && layers[AGG2].input_dim() == layers[UPD1].output_dim()
            && layers[AGG2].output_dim() == f
            && layers[UPD2].input_dim() == f
            && layers.get(HEAD).map_or(true, |h| h.input_dim() == layers[UPD2].output_dim());
        if !ok {
            return Err(LabError::structural("inconsistent GraphSAGE layer shapes"));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[AGG1].input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.layers[UPD2].output_dim()
    }

    pub fn label_dim(&self) -> usize {
        self.layers.get(HEAD).map_or(self.embed_dim(), |h| h.output_dim())
    }

    pub fn has_head(&self) -> bool {
        self.layers.len() > HEAD
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.layers)
    }

    pub fn to_arrays(&self, prefix: &str) -> Vec<NamedArray> {
        layers_to_arrays(&self.layers, prefix)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        Self::from_layers(layers_from_checkpoint(ckpt, prefix)?)
    }

    /// Single-round aggregate of `inputs` weighted by `weights`.
    pub fn aggregate(layer: &DenseLayer, inputs: &[ArrayView1<f64>], weights: &[f64]) -> Array1<f64> {
        let mut mean = Array1::zeros(layer.input_dim());
        for (x, &w) in inputs.iter().zip(weights) {
            mean.scaled_add(w, x);
        }
        mean /= inputs.len().max(1) as f64;
        let act = layer.activation;
        (layer.w.dot(&mean) + &layer.b).mapv(|v| act.apply(v))
    }

    /// Sum-combine update `act(W_u (z + x) + b_u)`.
    pub fn update(layer: &DenseLayer, z: ArrayView1<f64>, x: ArrayView1<f64>) -> Array1<f64> {
        let act = layer.activation;
        (layer.w.dot(&(&z + &x)) + &layer.b).mapv(|v| act.apply(v))
    }

    pub fn inner_aggregate(&self) -> &DenseLayer {
        &self.layers[AGG1]
    }

    pub fn inner_update(&self) -> &DenseLayer {
        &self.layers[UPD1]
    }

    pub fn outer_aggregate(&self) -> &DenseLayer {
        &self.layers[AGG2]
    }

    pub fn outer_update(&self) -> &DenseLayer {
        &self.layers[UPD2]
    }

    /// Two-layer embedding of one node.
    pub fn embed(&self, topo: &GraphTopology, features: &Array2<f64>, nb: &SampledNeighborhood) -> Result<Array1<f64>> {
        let (h, _) = self.embed_batch(topo, features, std::slice::from_ref(nb))?;
        Ok(h.row(0).to_owned())
    }

    /// Embeddings (one row per neighbourhood) plus the cache for backprop.
    pub fn embed_batch(
        &self,
        topo: &GraphTopology,
        features: &Array2<f64>,
        batch: &[SampledNeighborhood],
    ) -> Result<(Array2<f64>, SageCache)> {
        let f = self.feature_dim();
        if features.ncols() != f || features.nrows() != topo.len() {
            return Err(LabError::structural(format!(
                "features are {}x{}, expected {}x{f}",
                features.nrows(),
                features.ncols(),
                topo.len()
            )));
        }
        let inner_rows: usize = batch.iter().map(|nb| nb.layer1.len()).sum();
        let mut inner_in = Array2::zeros((inner_rows, f));
        let mut inner_self = Array2::zeros((inner_rows, f));
        let mut outer_terms = Vec::with_capacity(inner_rows);
        let mut r = 0;
        for (b, nb) in batch.iter().enumerate() {
            if nb.layer1.is_empty() || nb.layer2.len() != nb.layer1.len() {
                return Err(LabError::structural(format!("malformed neighbourhood for node {}", nb.node)));
            }
            let outer_scale = 1.0 / nb.layer1.len() as f64;
            for (k, &u) in nb.layer1.iter().enumerate() {
                let second = &nb.layer2[k];
                if second.is_empty() {
                    return Err(LabError::structural(format!("empty second-layer sample under node {u}")));
                }
                let inner_scale = 1.0 / second.len() as f64;
                let mut row = inner_in.row_mut(r);
                for &n in second {
                    row.scaled_add(topo.proximity(u, n) * inner_scale, &features.row(n));
                }
                inner_self.row_mut(r).assign(&features.row(u));
                outer_terms.push((b, r, topo.proximity(nb.node, u) * outer_scale));
                r += 1;
            }
        }
        let (inner_pre_a, inner_z) = self.layers[AGG1].forward(inner_in.view());
        let inner_sum = inner_z + &inner_self;
        let (inner_pre_u, inner_h) = self.layers[UPD1].forward(inner_sum.view());

        let mut outer_in = Array2::zeros((batch.len(), inner_h.ncols()));
        for &(b, r, c) in &outer_terms {
            outer_in.row_mut(b).scaled_add(c, &inner_h.row(r));
        }
        let (outer_pre_a, outer_z) = self.layers[AGG2].forward(outer_in.view());
        let mut outer_sum = outer_z;
        for (b, nb) in batch.iter().enumerate() {
            let mut row = outer_sum.row_mut(b);
            row += &features.row(nb.node);
        }
        let (outer_pre_u, embeddings) = self.layers[UPD2].forward(outer_sum.view());
        let cache = SageCache {
            inner_in,
            inner_pre_a,
            inner_sum,
            inner_pre_u,
            outer_in,
            outer_pre_a,
            outer_sum,
            outer_pre_u,
            embeddings: embeddings.clone(),
            outer_terms,
        };
        Ok((embeddings, cache))
    }

    /// Maps embeddings to label width (identity when no head exists).
    pub fn label_output(&self, embeddings: &Array2<f64>) -> Array2<f64> {
        match self.layers.get(HEAD) {
            Some(head) => head.forward(embeddings.view()).1,
            None => embeddings.clone(),
        }
    }

    /// Gradients of a loss whose derivative w.r.t. the label output is
    /// `grad_out`.
    pub fn backward(&self, cache: &SageCache, grad_out: &Array2<f64>) -> Gradients {
        let mut grads = Gradients::zeros_for(&self.layers);
        let grad_h = match self.layers.get(HEAD) {
            Some(head) => {
                let pre = head.forward(cache.embeddings.view()).0;
                let (gw, gb, gi) = head.backward(cache.embeddings.view(), &pre, grad_out);
                grads.w[HEAD] = gw;
                grads.b[HEAD] = gb;
                gi
            }
            None => grad_out.clone(),
        };
        let (gw, gb, g_outer_sum) = self.layers[UPD2].backward(cache.outer_sum.view(), &cache.outer_pre_u, &grad_h);
        grads.w[UPD2] = gw;
        grads.b[UPD2] = gb;
        let (gw, gb, g_outer_in) = self.layers[AGG2].backward(cache.outer_in.view(), &cache.outer_pre_a, &g_outer_sum);
        grads.w[AGG2] = gw;
        grads.b[AGG2] = gb;
        let mut g_inner_h = Array2::zeros((cache.inner_in.nrows(), self.layers[UPD1].output_dim()));
        for &(b, r, c) in &cache.outer_terms {
            g_inner_h.row_mut(r).scaled_add(c, &g_outer_in.row(b));
        }
        let (gw, gb, g_inner_sum) = self.layers[UPD1].backward(cache.inner_sum.view(), &cache.inner_pre_u, &g_inner_h);
        grads.w[UPD1] = gw;
        grads.b[UPD1] = gb;
        let (gw, gb, _) = self.layers[AGG1].backward(cache.inner_in.view(), &cache.inner_pre_a, &g_inner_sum);
        grads.w[AGG1] = gw;
        grads.b[AGG1] = gb;
        grads
    }
}

/// Single-round aggregation over every node written in the per-neighbour
/// projection form `act(sum_u delta_uv * (W x_u) / n + b)`, with an explicit
/// multiplication counter on the projection. Each node aggregates `fanout`
/// sampled neighbours, or its whole neighbourhood when `fanout` is `None`.
pub fn aggregate_all_counted<R: Rng + ?Sized>(
    topo: &GraphTopology,
    features: &Array2<f64>,
    layer: &DenseLayer,
    fanout: Option<usize>,
    rng: &mut R,
    multiplications: &mut u64,
) -> Array2<f64> {
    let d_out = layer.output_dim();
    let d_in = layer.input_dim();
    let mut out = Array2::zeros((topo.len(), d_out));
    let mut projected = vec![0.0; d_out];
    for v in 0..topo.len() {
        let picks = match fanout {
            Some(s) => sample_neighbors(topo, v, s, rng).0,
            None if topo.neighbors(v).is_empty() => vec![v],
            None => topo.neighbors(v).to_vec(),
        };
        let scale = 1.0 / picks.len() as f64;
        let mut acc = vec![0.0; d_out];
        for &u in &picks {
            let x = features.row(u);
            for (o, p) in projected.iter_mut().enumerate() {
                let w = layer.w.row(o);
                let mut sum = 0.0;
                for i in 0..d_in {
                    sum += w[i] * x[i];
                }
                *p = sum;
            }
            *multiplications += (d_in * d_out) as u64;
            let c = topo.proximity(v, u) * scale;
            for (a, p) in acc.iter_mut().zip(&projected) {
                *a += c * p;
            }
        }
        let act = layer.activation;
        for o in 0..d_out {
            out[[v, o]] = act.apply(acc[o] + layer.b[o]);
        }
    }
    out
}

/// Smoothed label `kappa * h_old + (1 - kappa) * r`.
pub fn smoothed_label(h_old: &[f64], rewards: &[f64], kappa: f64) -> Vec<f64> {
    h_old.iter().zip(rewards).map(|(h, r)| kappa * h + (1.0 - kappa) * r).collect()
}

/// Latest reward each link observed on each subchannel, with the iteration
/// it was recorded at.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RewardMatrix {
    subchannels: usize,
    entries: BTreeMap<LinkLabel, Vec<Option<(f64, u64)>>>,
}

impl RewardMatrix {
    pub fn new(subchannels: usize) -> Self {
        Self { subchannels, entries: BTreeMap::new() }
    }

    pub fn record(&mut self, link: LinkLabel, subchannel: usize, reward: f64, iteration: u64) {
        let m = self.subchannels;
        self.entries.entry(link).or_insert_with(|| vec![None; m])[subchannel] = Some((reward, iteration));
    }

    /// Row `R_g^v`: rewards with 0 where nothing (fresh) was recorded, and
    /// a 0/1 mask of the usable entries.
    pub fn row(&self, link: &LinkLabel, now: u64, stale_after: u64) -> (Vec<f64>, Vec<f64>) {
        let mut values = vec![0.0; self.subchannels];
        let mut mask = vec![0.0; self.subchannels];
        if let Some(row) = self.entries.get(link) {
            for (i, e) in row.iter().enumerate() {
                if let Some((r, at)) = e {
                    values[i] = *r;
                    if now.saturating_sub(*at) <= stale_after {
                        mask[i] = 1.0;
                    }
                }
            }
        }
        (values, mask)
    }

    pub fn has_fresh(&self, link: &LinkLabel, now: u64, stale_after: u64) -> bool {
        self.entries
            .get(link)
            .is_some_and(|row| row.iter().flatten().any(|&(_, at)| now.saturating_sub(at) <= stale_after))
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Live network, lagged copy and the update schedule.
#[derive(Debug, Clone)]
pub struct SageTrainer {
    pub live: SageNet,
    pub lagged: SageNet,
    pub kappa: f64,
    pub schedule: LrSchedule,
    pub sync_every: u64,
    pub steps: u64,
}

impl SageTrainer {
    pub fn new(net: SageNet, cfg: &SageConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&cfg.kappa) {
            return Err(LabError::config(format!("sage.kappa must lie in [0, 1], got {}", cfg.kappa)));
        }
        Ok(Self {
            lagged: net.clone(),
            live: net,
            kappa: cfg.kappa,
            schedule: LrSchedule {
                initial: cfg.learning_rate,
                floor: cfg.learning_rate_floor,
                decay: cfg.lr_decay,
                every: cfg.lr_decay_every,
            },
            sync_every: cfg.lagged_sync_every,
            steps: 0,
        })
    }

    /// Smoothed targets for `batch`: lagged output blended with `rewards`.
    pub fn targets(
        &self,
        topo: &GraphTopology,
        features: &Array2<f64>,
        batch: &[SampledNeighborhood],
        rewards: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        let (h, _) = self.lagged.embed_batch(topo, features, batch)?;
        let h_old = self.lagged.label_output(&h);
        Ok(&h_old * self.kappa + rewards * (1.0 - self.kappa))
    }

    /// Mean (over the batch) masked squared error against `targets`, and its
    /// gradient.
    pub fn loss_and_gradients(
        net: &SageNet,
        topo: &GraphTopology,
        features: &Array2<f64>,
        batch: &[SampledNeighborhood],
        targets: &Array2<f64>,
        mask: &Array2<f64>,
    ) -> Result<(f64, Gradients)> {
        let (h, cache) = net.embed_batch(topo, features, batch)?;
        let pred = net.label_output(&h);
        let (loss, mut grad) = squared_error(&pred, targets, Some(mask));
        let n = batch.len().max(1) as f64;
        grad /= n;
        Ok((loss / n, net.backward(&cache, &grad)))
    }

    /// One gradient step on the smoothed-label loss; returns the loss.
    pub fn train_step(
        &mut self,
        topo: &GraphTopology,
        features: &Array2<f64>,
        batch: &[SampledNeighborhood],
        rewards: &Array2<f64>,
        mask: &Array2<f64>,
    ) -> Result<f64> {
        let targets = self.targets(topo, features, batch, rewards)?;
        let (loss, grads) = Self::loss_and_gradients(&self.live, topo, features, batch, &targets, mask)?;
        if !loss.is_finite() {
            return Err(LabError::numerical(format!("GraphSAGE loss became {loss}")));
        }
        sgd_update(self.live.layers_mut(), &grads, self.schedule.rate(self.steps))?;
        self.steps += 1;
        if self.sync_every > 0 && self.steps % self.sync_every == 0 {
            self.lagged = self.live.clone();
        }
        Ok(loss)
    }
}

/// Stacks per-node reward rows and masks into matrices.
pub fn reward_batch(rows: &[(Vec<f64>, Vec<f64>)]) -> (Array2<f64>, Array2<f64>) {
    let m = rows.first().map_or(0, |r| r.0.len());
    let mut values = Array2::zeros((rows.len(), m));
    let mut mask = Array2::zeros((rows.len(), m));
    for (k, (v, msk)) in rows.iter().enumerate() {
        values.slice_mut(s![k, ..]).assign(&ArrayView1::from(v));
        mask.slice_mut(s![k, ..]).assign(&ArrayView1::from(msk));
    }
    (values, mask)
}

/// Mean of each column (used to summarise embeddings in diagnostics).
pub fn column_mean(a: &Array2<f64>) -> Array1<f64> {
    a.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(a.ncols()))
}
