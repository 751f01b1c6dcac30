//! Dense feed-forward networks with hand-written backpropagation, plain SGD
//! and a flat named-array checkpoint format.
//!
//! Batches are row-major: one sample per row.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    fn code(self) -> f64 {
        match self {
            Activation::Relu => 1.0,
            Activation::Identity => 0.0,
        }
    }

    fn from_code(code: f64) -> Option<Self> {
        match code as i64 {
            1 => Some(Activation::Relu),
            0 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Affine map `y = act(W x + b)` with `W` of shape `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(w: Array2<f64>, b: Array1<f64>, activation: Activation) -> Result<Self> {
        if w.nrows() != b.len() {
            return Err(LabError::structural(format!(
                "bias length {} does not match {} output rows",
                b.len(),
                w.nrows()
            )));
        }
        Ok(Self { w, b, activation })
    }

    /// Uniform Xavier/Glorot initialisation, zero bias.
    pub fn xavier<R: Rng + ?Sized>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let w = Array2::from_shape_fn((output, input), |_| rng.gen_range(-limit..=limit));
        Self { w, b: Array1::zeros(output), activation }
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.nrows()
    }

    /// Returns (pre-activation, activation) for a batch.
    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let mut pre = x.dot(&self.w.t());
        pre += &self.b;
        let act = self.activation;
        let out = pre.mapv(|v| act.apply(v));
        (pre, out)
    }

    /// Given the forward input, the pre-activation and dLoss/dOutput, returns
    /// (dLoss/dW, dLoss/db, dLoss/dInput) summed over the batch.
    pub fn backward(
        &self,
        input: ArrayView2<f64>,
        pre: &Array2<f64>,
        grad_out: &Array2<f64>,
    ) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
        let mut delta = grad_out.clone();
        let act = self.activation;
        if act != Activation::Identity {
            Zip::from(&mut delta).and(pre).for_each(|d, &z| *d *= act.derivative(z));
        }
        let gw = delta.t().dot(&input);
        let gb = delta.sum_axis(Axis(0));
        let gi = delta.dot(&self.w);
        (gw, gb, gi)
    }
}

/// Per-layer gradients, same shapes as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self::zeros_for(&net.layers)
    }

    pub fn zeros_for(layers: &[DenseLayer]) -> Self {
        Self {
            w: layers.iter().map(|l| Array2::zeros(l.w.raw_dim())).collect(),
            b: layers.iter().map(|l| Array1::zeros(l.b.raw_dim())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            *a += b;
        }
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.w.iter_mut().for_each(|g| *g *= factor);
        self.b.iter_mut().for_each(|g| *g *= factor);
    }

    /// Index of the first layer holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<usize> {
        (0..self.w.len()).find(|&k| self.w[k].iter().chain(self.b[k].iter()).any(|v| !v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.w
            .iter()
            .flat_map(|g| g.iter())
            .chain(self.b.iter().flat_map(|g| g.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Intermediates kept by [`Mlp::forward_batch`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

/// Stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(LabError::structural("network needs at least one layer"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(LabError::structural(format!(
                    "layer {k} outputs {} values but layer {} expects {}",
                    pair[0].output_dim(),
                    k + 1,
                    pair[1].input_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// `dims = [in, h1, ..., out]`; hidden layers use `hidden`, the last `output`.
    pub fn xavier<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "need input and output dims");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let act = if k + 1 == n { output } else { hidden };
                DenseLayer::xavier(dims[k], dims[k + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.output_dim()));
        d
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(LabError::structural(format!(
                "input has {cols} features, network expects {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let batch = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.predict_batch(batch)?.into_raw_vec_and_offset().0)
    }

    /// Forward pass without keeping intermediates.
    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut cur = self.layers[0].forward(x).1;
        for layer in &self.layers[1..] {
            cur = layer.forward(cur.view()).1;
        }
        Ok(cur)
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(x.ncols())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_owned();
        for layer in &self.layers {
            let (z, a) = layer.forward(cur.view());
            inputs.push(cur);
            pre.push(z);
            cur = a;
        }
        Ok((cur, ForwardCache { inputs, pre }))
    }

    /// Backpropagates `grad_out` (dLoss/dOutput, one row per sample) and
    /// returns parameter gradients summed over the batch plus dLoss/dInput.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Array2<f64>) -> (Gradients, Array2<f64>) {
        let n = self.layers.len();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        let mut delta = grad_out.clone();
        for k in (0..n).rev() {
            let (w, b, gi) = self.layers[k].backward(cache.inputs[k].view(), &cache.pre[k], &delta);
            gw.push(w);
            gb.push(b);
            delta = gi;
        }
        gw.reverse();
        gb.reverse();
        (Gradients { w: gw, b: gb }, delta)
    }

    /// Plain gradient descent, see [`sgd_update`].
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        sgd_update(&mut self.layers, grads, lr)
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.layers)
    }

    pub fn to_arrays(&self, prefix: &str) -> Vec<NamedArray> {
        layers_to_arrays(&self.layers, prefix)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        Self::new(layers_from_checkpoint(ckpt, prefix)?)
    }
}

/// Plain gradient descent `p <- p - lr * g` over a layer stack. Refuses
/// (leaving the parameters untouched) if any gradient entry is non-finite.
pub fn sgd_update(layers: &mut [DenseLayer], grads: &Gradients, lr: f64) -> Result<()> {
    if grads.w.len() != layers.len() || grads.b.len() != layers.len() {
        return Err(LabError::structural("gradient layer count does not match network"));
    }
    for (k, layer) in layers.iter().enumerate() {
        if grads.w[k].raw_dim() != layer.w.raw_dim() || grads.b[k].raw_dim() != layer.b.raw_dim() {
            return Err(LabError::structural(format!("gradient shape mismatch in layer {k}")));
        }
    }
    if let Some(k) = grads.first_non_finite() {
        return Err(LabError::numerical(format!("non-finite gradient in layer {k}")));
    }
    for (layer, (w, b)) in layers.iter_mut().zip(grads.w.iter().zip(&grads.b)) {
        layer.w.scaled_add(-lr, w);
        layer.b.scaled_add(-lr, b);
    }
    Ok(())
}

/// Hex SHA-256 over the parameter bit patterns.
pub fn fingerprint(layers: &[DenseLayer]) -> String {
    let mut h = Sha256::new();
    for layer in layers {
        for v in layer.w.iter().chain(layer.b.iter()) {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Flattens into named arrays `prefix.k.w`, `prefix.k.b`, `prefix.k.act`.
pub fn layers_to_arrays(layers: &[DenseLayer], prefix: &str) -> Vec<NamedArray> {
    let mut out = Vec::new();
    for (k, layer) in layers.iter().enumerate() {
        out.push(NamedArray {
            name: format!("{prefix}.{k}.w"),
            shape: vec![layer.w.nrows(), layer.w.ncols()],
            data: layer.w.iter().copied().collect(),
        });
        out.push(NamedArray { name: format!("{prefix}.{k}.b"), shape: vec![layer.b.len()], data: layer.b.to_vec() });
        out.push(NamedArray { name: format!("{prefix}.{k}.act"), shape: vec![1], data: vec![layer.activation.code()] });
    }
    out
}

pub fn layers_from_checkpoint(ckpt: &Checkpoint, prefix: &str) -> Result<Vec<DenseLayer>> {
    let bad = |reason: String| LabError::CorruptCheckpoint { path: ckpt.origin.clone().into(), reason };
    let mut layers = Vec::new();
    for k in 0.. {
        let Some(w) = ckpt.get(&format!("{prefix}.{k}.w")) else { break };
        let b = ckpt.require(&format!("{prefix}.{k}.b"))?;
        let act = ckpt.require(&format!("{prefix}.{k}.act"))?;
        if w.shape.len() != 2 || b.shape.len() != 1 {
            return Err(bad(format!("layer {k} has malformed shapes")));
        }
        let w = Array2::from_shape_vec((w.shape[0], w.shape[1]), w.data.clone())
            .map_err(|e| bad(format!("layer {k}: {e}")))?;
        let activation = act
            .data
            .first()
            .and_then(|&c| Activation::from_code(c))
            .ok_or_else(|| bad(format!("layer {k} has an unknown activation")))?;
        layers.push(DenseLayer::new(w, Array1::from(b.data.clone()), activation)?);
    }
    if layers.is_empty() {
        return Err(bad(format!("no layers under prefix {prefix}")));
    }
    Ok(layers)
}

/// Sum of squared errors over the unmasked entries and its gradient with
/// respect to `pred`.
pub fn squared_error(pred: &Array2<f64>, target: &Array2<f64>, mask: Option<&Array2<f64>>) -> (f64, Array2<f64>) {
    let mut grad = pred - target;
    if let Some(m) = mask {
        grad *= m;
    }
    let loss = grad.iter().map(|d| d * d).sum();
    grad *= 2.0;
    (loss, grad)
}

/// Step decay: `initial * decay^(step / every)`, never below `floor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    pub floor: f64,
    pub decay: f64,
    pub every: u64,
}

impl LrSchedule {
    pub fn rate(&self, step: u64) -> f64 {
        let k = (step / self.every.max(1)).min(i32::MAX as u64) as i32;
        (self.initial * self.decay.powi(k)).max(self.floor)
    }
}

/// One named row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

const MAGIC: &[u8; 8] = b"V2XPARAM";
const FORMAT_VERSION: u32 = 1;

/// Flat container of named arrays. Layout (little endian): magic, version,
/// array count, then per array name length + UTF-8 name, rank, dims (u64),
/// doubles; a trailing SHA-256 of everything before it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub arrays: Vec<NamedArray>,
    origin: String,
}

impl Checkpoint {
    pub fn new(arrays: Vec<NamedArray>) -> Self {
        Self { arrays, origin: String::new() }
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&NamedArray> {
        self.get(name).ok_or_else(|| LabError::CorruptCheckpoint {
            path: self.origin.clone().into(),
            reason: format!("missing array {name}"),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.arrays.len() as u64).to_le_bytes());
        for a in &self.arrays {
            buf.extend_from_slice(&(a.name.len() as u64).to_le_bytes());
            buf.extend_from_slice(a.name.as_bytes());
            buf.extend_from_slice(&(a.shape.len() as u64).to_le_bytes());
            for &d in &a.shape {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &a.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        buf
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let corrupt = |reason: &str| LabError::CorruptCheckpoint { path: origin.into(), reason: reason.to_string() };
        if bytes.len() < MAGIC.len() + 4 + 8 + 32 || &bytes[..8] != MAGIC {
            return Err(corrupt("not a parameter checkpoint"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let version = u32::from_le_bytes(r.take(4).ok_or_else(|| corrupt("truncated header"))?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(corrupt(&format!("unsupported format version {version}")));
        }
        let count = r.u64().ok_or_else(|| corrupt("truncated header"))?;
        let mut arrays = Vec::new();
        for _ in 0..count {
            let name_len = r.u64().ok_or_else(|| corrupt("truncated array name"))? as usize;
            let name = r.take(name_len).ok_or_else(|| corrupt("truncated array name"))?;
            let name = String::from_utf8(name.to_vec()).map_err(|_| corrupt("array name is not UTF-8"))?;
            let rank = r.u64().ok_or_else(|| corrupt("truncated shape"))? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64().ok_or_else(|| corrupt("truncated shape"))? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n * 8).ok_or_else(|| corrupt("truncated array data"))?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            arrays.push(NamedArray { name, shape, data });
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self { arrays, origin: origin.to_string() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => LabError::MissingArtifact(path.to_path_buf()),
            _ => LabError::Io(e),
        })?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use ndarray::array;

    #[test]
    fn identity_network_passes_input_through() {
        let layer = DenseLayer::new(Array2::eye(3), Array1::zeros(3), Activation::Identity).unwrap();
        let net = Mlp::new(vec![layer]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.5]).unwrap(), vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let layer = DenseLayer::new(Array2::eye(2), Array1::zeros(2), Activation::Relu).unwrap();
        let net = Mlp::new(vec![layer]).unwrap();
        assert_eq!(net.forward(&[-1.0, 2.0]).unwrap(), vec![0.0, 2.0]);
    }

    #[test]
    fn shape_errors_are_structural() {
        let mut rng = stream(1, Stream::Init, 0);
        let net = Mlp::xavier(&[4, 3, 2], Activation::Relu, Activation::Identity, &mut rng);
        assert!(matches!(net.forward(&[1.0; 5]), Err(LabError::Structural(_))));
        let a = DenseLayer::xavier(4, 3, Activation::Relu, &mut rng);
        let b = DenseLayer::xavier(2, 1, Activation::Relu, &mut rng);
        assert!(Mlp::new(vec![a, b]).is_err());
    }

    #[test]
    fn scalar_neuron_gradient() {
        let w = 0.7;
        let layer = DenseLayer::new(array![[w]], array![0.0], Activation::Identity).unwrap();
        let net = Mlp::new(vec![layer]).unwrap();
        let x = array![[1.0]];
        let y = array![[2.5]];
        let (out, cache) = net.forward_batch(x.view()).unwrap();
        let (_, g) = squared_error(&out, &y, None);
        let (grads, _) = net.backward(&cache, &g);
        assert!((grads.w[0][[0, 0]] - 2.0 * (w - 2.5)).abs() < 1e-15);
    }

    #[test]
    fn sgd_arithmetic_and_zero_gradient() {
        let layer = DenseLayer::new(array![[1.0]], array![0.0], Activation::Identity).unwrap();
        let mut net = Mlp::new(vec![layer]).unwrap();
        let before = net.clone();
        net.sgd_step(&Gradients::zeros_like(&before), 0.01).unwrap();
        assert_eq!(net, before);
        let g = Gradients { w: vec![array![[2.0]]], b: vec![array![0.0]] };
        net.sgd_step(&g, 0.01).unwrap();
        assert!((net.layers()[0].w[[0, 0]] - 0.98).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts_without_change() {
        let mut rng = stream(2, Stream::Init, 0);
        let mut net = Mlp::xavier(&[3, 2], Activation::Relu, Activation::Identity, &mut rng);
        let before = net.clone();
        let mut g = Gradients::zeros_like(&net);
        g.b[0][1] = f64::NAN;
        assert!(matches!(net.sgd_step(&g, 0.1), Err(LabError::Numerical(_))));
        assert_eq!(net, before);
    }

    #[test]
    fn schedule_decays_to_floor() {
        let s = LrSchedule { initial: 0.01, floor: 1e-4, decay: 0.99, every: 100 };
        assert_eq!(s.rate(0), 0.01);
        assert_eq!(s.rate(99), 0.01);
        assert!((s.rate(100) - 0.0099).abs() < 1e-15);
        assert_eq!(s.rate(1_000_000), 1e-4);
        let mut last = f64::INFINITY;
        for step in (0..100_000).step_by(50) {
            let r = s.rate(step);
            assert!(r <= last && r >= 1e-4);
            last = r;
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = stream(3, Stream::Init, 0);
        let net = Mlp::xavier(&[5, 7, 2], Activation::Relu, Activation::Identity, &mut rng);
        let ckpt = Checkpoint::new(net.to_arrays("q"));
        let back = Checkpoint::from_bytes(&ckpt.to_bytes(), "mem").unwrap();
        let net2 = Mlp::from_checkpoint(&back, "q").unwrap();
        assert_eq!(net, net2);
        let x = [0.3, -1.0, 2.0, 0.0, 1e-3];
        let a = net.forward(&x).unwrap();
        let b = net2.forward(&x).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn corrupted_checkpoint_is_rejected() {
        let mut rng = stream(4, Stream::Init, 0);
        let net = Mlp::xavier(&[2, 2], Activation::Relu, Activation::Identity, &mut rng);
        let mut bytes = Checkpoint::new(net.to_arrays("q")).to_bytes();
        bytes[30] ^= 0xff;
        assert!(matches!(Checkpoint::from_bytes(&bytes, "x"), Err(LabError::CorruptCheckpoint { .. })));
        assert!(Checkpoint::from_bytes(&bytes[..20], "x").is_err());
        assert!(matches!(Checkpoint::load(Path::new("/nonexistent/ckpt")), Err(LabError::MissingArtifact(_))));
    }
}
