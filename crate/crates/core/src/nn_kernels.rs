//! Dense NCHW kernels for group normalization, batch normalization, 1×1
//! convolution and their composition (GN followed by a 1×1 projection, no
//! activation), each with an exact reverse-mode backward pass.
//!
//! Everything is `f64` with a fixed summation order: statistics are summed
//! sequentially in memory order, so results are bit-reproducible and a
//! sample's GN output does not depend on the rest of the batch.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("tensor file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = KernelError> = std::result::Result<T, E>;

fn mismatch<T>(msg: impl Into<String>) -> Result<T> {
    Err(KernelError::ShapeMismatch(msg.into()))
}

/// Rank-4 tensor in (batch, channel, height, width) row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return mismatch(format!("zero-sized dimension in {shape:?}"));
        }
        if data.len() != shape.iter().product::<usize>() {
            return mismatch(format!("{} elements for shape {shape:?}", data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return mismatch("non-finite entry");
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self { shape, data: vec![0.0; shape.iter().product()] }
    }

    pub fn filled(shape: [usize; 4], v: f64) -> Self {
        Self { shape, data: vec![v; shape.iter().product()] }
    }

    /// Uniform entries on `[-scale, scale]`.
    pub fn random(shape: [usize; 4], scale: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        Self { shape, data: (0..n).map(|_| rng.gen_range(-scale..=scale)).collect() }
    }

    pub fn seeded(shape: [usize; 4], seed: u64) -> Self {
        Self::random(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn spatial(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    fn sample_len(&self) -> usize {
        self.shape[1] * self.spatial()
    }

    pub fn sample(&self, n: usize) -> Tensor4 {
        let len = self.sample_len();
        Tensor4 {
            shape: [1, self.shape[1], self.shape[2], self.shape[3]],
            data: self.data[n * len..(n + 1) * len].to_vec(),
        }
    }

    /// Concatenate along the batch axis.
    pub fn stack(parts: &[&Tensor4]) -> Result<Tensor4> {
        let first = parts.first().ok_or_else(|| KernelError::ShapeMismatch("empty stack".into()))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if p.shape[1..] != [c, h, w] {
                return mismatch(format!("cannot stack {:?} with {:?}", p.shape, first.shape));
            }
            n += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor4 { shape: [n, c, h, w], data })
    }

    pub fn max_abs_diff(&self, other: &Tensor4) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Write little-endian float64 data to `path` and a JSON sidecar
    /// `{shape, dtype}` next to it (`<path>.json`).
    pub fn write_raw(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(path, bytes)?;
        let meta = TensorMeta { shape: self.shape.to_vec(), dtype: "float64".into() };
        std::fs::write(sidecar(path), serde_json::to_string(&meta).expect("serializable"))?;
        Ok(())
    }

    pub fn read_raw(path: impl AsRef<Path>) -> Result<Tensor4> {
        let path = path.as_ref();
        let meta: TensorMeta = serde_json::from_str(&std::fs::read_to_string(sidecar(path))?)
            .map_err(|e| KernelError::Format(e.to_string()))?;
        if meta.dtype != "float64" {
            return Err(KernelError::Format(format!("unsupported dtype {}", meta.dtype)));
        }
        let shape: [usize; 4] = meta
            .shape
            .try_into()
            .map_err(|s: Vec<usize>| KernelError::Format(format!("rank {} shape, expected 4", s.len())))?;
        let bytes = std::fs::read(path)?;
        if bytes.len() % 8 != 0 {
            return Err(KernelError::Format("payload not a multiple of 8 bytes".into()));
        }
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Tensor4::new(shape, data)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    shape: Vec<usize>,
    dtype: String,
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Largest divisor of `channels` not exceeding `requested`.
pub fn effective_groups(channels: usize, requested: usize) -> usize {
    (1..=requested.min(channels).max(1)).rev().find(|g| channels.is_multiple_of(*g)).unwrap_or(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GNParams {
    pub groups: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

impl GNParams {
    /// γ = 1, β = 0, G = 32, ε = 1e-5.
    pub fn identity(channels: usize) -> Self {
        Self { groups: 32, gamma: vec![1.0; channels], beta: vec![0.0; channels], eps: 1e-5 }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    fn check(&self, channels: usize) -> Result<usize> {
        if self.gamma.len() != channels || self.beta.len() != channels {
            return mismatch(format!(
                "gamma/beta lengths {}/{} for {channels} channels",
                self.gamma.len(),
                self.beta.len()
            ));
        }
        if self.groups == 0 || self.eps.is_nan() || self.eps <= 0.0 {
            return mismatch("groups must be ≥ 1 and eps > 0");
        }
        Ok(effective_groups(channels, self.groups))
    }
}

/// Saved forward state for [`gn_backward`].
#[derive(Debug, Clone)]
pub struct GnCache {
    pub groups: usize,
    /// Per (sample, group).
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub x_hat: Tensor4,
}

pub fn gn_forward(x: &Tensor4, p: &GNParams) -> Result<(Tensor4, GnCache)> {
    let [n, c, _, _] = x.shape;
    let groups = p.check(c)?;
    let hw = x.spatial();
    let group_len = (c / groups) * hw;
    let mut mean = Vec::with_capacity(n * groups);
    let mut var = Vec::with_capacity(n * groups);
    let mut x_hat = Tensor4::zeros(x.shape);
    let mut y = Tensor4::zeros(x.shape);

    for (g_idx, chunk) in x.data.chunks(group_len).enumerate() {
        let m = chunk.iter().sum::<f64>() / group_len as f64;
        // Biased (population) variance.
        let v = chunk.iter().map(|&e| (e - m) * (e - m)).sum::<f64>() / group_len as f64;
        let inv_std = 1.0 / (v + p.eps).sqrt();
        let base = g_idx * group_len;
        let first_channel = (g_idx % groups) * (c / groups);
        for (k, &e) in chunk.iter().enumerate() {
            let ch = first_channel + k / hw;
            let xh = (e - m) * inv_std;
            x_hat.data[base + k] = xh;
            y.data[base + k] = p.gamma[ch] * xh + p.beta[ch];
        }
        mean.push(m);
        var.push(v);
    }
    Ok((y, GnCache { groups, mean, var, x_hat }))
}

pub struct GnGrads {
    pub grad_x: Tensor4,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
}

pub fn gn_backward(grad_y: &Tensor4, cache: &GnCache, p: &GNParams) -> Result<GnGrads> {
    if grad_y.shape != cache.x_hat.shape {
        return mismatch(format!("grad {:?} vs forward {:?}", grad_y.shape, cache.x_hat.shape));
    }
    let [_, c, _, _] = grad_y.shape;
    p.check(c)?;
    let groups = cache.groups;
    let hw = grad_y.spatial();
    let group_len = (c / groups) * hw;
    let m = group_len as f64;

    let mut grad_gamma = vec![0.0; c];
    let mut grad_beta = vec![0.0; c];
    let mut grad_x = Tensor4::zeros(grad_y.shape);
    for g_idx in 0..grad_y.data.len() / group_len {
        let base = g_idx * group_len;
        let first_channel = (g_idx % groups) * (c / groups);
        let inv_std = 1.0 / (cache.var[g_idx] + p.eps).sqrt();
        let gy = &grad_y.data[base..base + group_len];
        let xh = &cache.x_hat.data[base..base + group_len];

        // dL/dx̂ = γ·dy; dx = inv_std·(dx̂ − mean(dx̂) − x̂·mean(dx̂·x̂))
        let mut sum_d = 0.0;
        let mut sum_dx = 0.0;
        for k in 0..group_len {
            let ch = first_channel + k / hw;
            let d = p.gamma[ch] * gy[k];
            sum_d += d;
            sum_dx += d * xh[k];
            grad_gamma[ch] += gy[k] * xh[k];
            grad_beta[ch] += gy[k];
        }
        let mean_d = sum_d / m;
        let mean_dx = sum_dx / m;
        for k in 0..group_len {
            let ch = first_channel + k / hw;
            let d = p.gamma[ch] * gy[k];
            grad_x.data[base + k] = inv_std * (d - mean_d - xh[k] * mean_dx);
        }
    }
    Ok(GnGrads { grad_x, grad_gamma, grad_beta })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1x1Params {
    /// Row-major `c_out × c_in`.
    pub weight: Vec<f64>,
    pub c_out: usize,
    pub c_in: usize,
    pub bias: Option<Vec<f64>>,
}

impl Conv1x1Params {
    pub fn new(c_out: usize, c_in: usize, weight: Vec<f64>, bias: Option<Vec<f64>>) -> Result<Self> {
        if weight.len() != c_out * c_in {
            return mismatch(format!("weight has {} entries for {c_out}x{c_in}", weight.len()));
        }
        if bias.as_ref().is_some_and(|b| b.len() != c_out) {
            return mismatch("bias length differs from c_out");
        }
        Ok(Self { weight, c_out, c_in, bias })
    }

    pub fn identity(c: usize) -> Self {
        let mut w = vec![0.0; c * c];
        (0..c).for_each(|i| w[i * c + i] = 1.0);
        Self { weight: w, c_out: c, c_in: c, bias: None }
    }

    pub fn seeded(c_out: usize, c_in: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weight = (0..c_out * c_in).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let bias = Some((0..c_out).map(|_| rng.gen_range(-1.0..=1.0)).collect());
        Self { weight, c_out, c_in, bias }
    }
}

pub struct Conv1x1Grads {
    pub grad_x: Tensor4,
    pub grad_weight: Vec<f64>,
    pub grad_bias: Vec<f64>,
}

pub fn conv1x1_forward(x: &Tensor4, q: &Conv1x1Params) -> Result<Tensor4> {
    let [n, c, h, w] = x.shape;
    if c != q.c_in {
        return mismatch(format!("input has {c} channels, conv expects {}", q.c_in));
    }
    let hw = h * w;
    let mut y = Tensor4::zeros([n, q.c_out, h, w]);
    for b in 0..n {
        for o in 0..q.c_out {
            let out = &mut y.data[(b * q.c_out + o) * hw..(b * q.c_out + o + 1) * hw];
            let bias = q.bias.as_ref().map_or(0.0, |v| v[o]);
            out.fill(bias);
            for i in 0..c {
                let wv = q.weight[o * c + i];
                let inp = &x.data[(b * c + i) * hw..(b * c + i + 1) * hw];
                for (y, &xv) in out.iter_mut().zip(inp) {
                    *y += wv * xv;
                }
            }
        }
    }
    Ok(y)
}

pub fn conv1x1_backward(grad_y: &Tensor4, x: &Tensor4, q: &Conv1x1Params) -> Result<Conv1x1Grads> {
    let [n, c, h, w] = x.shape;
    if c != q.c_in || grad_y.shape != [n, q.c_out, h, w] {
        return mismatch(format!("grad {:?} for input {:?}", grad_y.shape, x.shape));
    }
    let hw = h * w;
    let mut grad_x = Tensor4::zeros(x.shape);
    let mut grad_weight = vec![0.0; q.c_out * c];
    let mut grad_bias = vec![0.0; q.c_out];
    for b in 0..n {
        for o in 0..q.c_out {
            let gy = &grad_y.data[(b * q.c_out + o) * hw..(b * q.c_out + o + 1) * hw];
            grad_bias[o] += gy.iter().sum::<f64>();
            for i in 0..c {
                let xin = &x.data[(b * c + i) * hw..(b * c + i + 1) * hw];
                grad_weight[o * c + i] += gy.iter().zip(xin).map(|(g, v)| g * v).sum::<f64>();
                let wv = q.weight[o * c + i];
                let gx = &mut grad_x.data[(b * c + i) * hw..(b * c + i + 1) * hw];
                for (d, &g) in gx.iter_mut().zip(gy) {
                    *d += wv * g;
                }
            }
        }
    }
    Ok(Conv1x1Grads { grad_x, grad_weight, grad_bias })
}

/// Forward state of the GN → 1×1 conv composite.
pub struct GnCbLinearCache {
    pub gn: GnCache,
    pub normalized: Tensor4,
}

/// 1×1 projection of the group-normalized input; linear after normalization.
pub fn gn_cblinear_forward(x: &Tensor4, p: &GNParams, q: &Conv1x1Params) -> Result<(Tensor4, GnCbLinearCache)> {
    let (normalized, gn) = gn_forward(x, p)?;
    let y = conv1x1_forward(&normalized, q)?;
    Ok((y, GnCbLinearCache { gn, normalized }))
}

pub struct GnCbLinearGrads {
    pub grad_x: Tensor4,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
    pub grad_weight: Vec<f64>,
    pub grad_bias: Vec<f64>,
}

pub fn gn_cblinear_backward(
    grad_y: &Tensor4,
    cache: &GnCbLinearCache,
    p: &GNParams,
    q: &Conv1x1Params,
) -> Result<GnCbLinearGrads> {
    let conv = conv1x1_backward(grad_y, &cache.normalized, q)?;
    let gn = gn_backward(&conv.grad_x, &cache.gn, p)?;
    Ok(GnCbLinearGrads {
        grad_x: gn.grad_x,
        grad_gamma: gn.grad_gamma,
        grad_beta: gn.grad_beta,
        grad_weight: conv.grad_weight,
        grad_bias: conv.grad_bias,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BNParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

impl BNParams {
    pub fn identity(channels: usize) -> Self {
        Self { gamma: vec![1.0; channels], beta: vec![0.0; channels], eps: 1e-5 }
    }
}

/// Batch normalization in training mode with no running averages: each
/// channel is normalized by statistics over the whole batch (N·H·W values).
pub fn bn_forward(x: &Tensor4, p: &BNParams) -> Result<Tensor4> {
    let [n, c, _, _] = x.shape;
    if p.gamma.len() != c || p.beta.len() != c {
        return mismatch("gamma/beta length differs from channel count");
    }
    let hw = x.spatial();
    let count = (n * hw) as f64;
    let mut y = Tensor4::zeros(x.shape);
    for ch in 0..c {
        let plane = |b: usize| &x.data[(b * c + ch) * hw..(b * c + ch + 1) * hw];
        let mut sum = 0.0;
        for b in 0..n {
            sum += plane(b).iter().sum::<f64>();
        }
        let mean = sum / count;
        let mut sq = 0.0;
        for b in 0..n {
            sq += plane(b).iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>();
        }
        let inv_std = 1.0 / (sq / count + p.eps).sqrt();
        for b in 0..n {
            let start = (b * c + ch) * hw;
            for k in 0..hw {
                y.data[start + k] = p.gamma[ch] * (x.data[start + k] - mean) * inv_std + p.beta[ch];
            }
        }
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub companion: usize,
    pub gn_drift: f64,
    pub bn_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub gn_drift: f64,
    pub bn_drift: f64,
    pub rows: Vec<StabilityRow>,
}

/// Pair `sample` with each companion in a batch of two and measure how far
/// the sample's normalized output moves from its batch-of-one output.
pub fn stability_experiment(
    sample: &Tensor4,
    companions: &[Tensor4],
    gn: &GNParams,
    bn: &BNParams,
) -> Result<StabilityReport> {
    if sample.shape[0] != 1 {
        return mismatch("sample must have batch size 1");
    }
    let gn_solo = gn_forward(sample, gn)?.0;
    let bn_solo = bn_forward(sample, bn)?;
    let mut rows = Vec::with_capacity(companions.len());
    for (i, comp) in companions.iter().enumerate() {
        let batch = Tensor4::stack(&[sample, comp])?;
        let gn_out = gn_forward(&batch, gn)?.0.sample(0);
        let bn_out = bn_forward(&batch, bn)?.sample(0);
        rows.push(StabilityRow {
            companion: i,
            gn_drift: gn_out.max_abs_diff(&gn_solo),
            bn_drift: bn_out.max_abs_diff(&bn_solo),
        });
    }
    Ok(StabilityReport {
        gn_drift: rows.iter().fold(0.0, |m, r| m.max(r.gn_drift)),
        bn_drift: rows.iter().fold(0.0, |m, r| m.max(r.bn_drift)),
        rows,
    })
}
