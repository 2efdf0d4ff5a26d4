//! Stride and receptive-field accounting for declarative convolution stacks.
//!
//! The theoretical receptive field (TRF) comes from the usual recurrence over
//! kernel, dilation and cumulative stride ("jump"). The effective receptive
//! field (ERF) is measured on a purely linear network realising the stack:
//! the magnitude of the input gradient of the centre output cell, summed over
//! output channels and averaged over random weight draws.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RfError {
    #[error("unknown level `{0}`")]
    UnknownLevel(String),
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("gradient support ({support} px) clipped by the {input}x{input} input")]
    InputTooSmall { support: u64, input: usize },
}

pub type Result<T, E = RfError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    /// Average pooling; linear, so it stays inside the ERF network.
    Pool,
    /// Nearest-neighbour upsampling by `stride`.
    Upsample,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    #[serde(default = "one")]
    pub kernel: u32,
    #[serde(default = "one")]
    pub stride: u32,
    #[serde(default = "one")]
    pub dilation: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_channels: Option<u32>,
    /// Shorthand for that many identical consecutive layers.
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub repeat: u32,
}

fn is_one(v: &u32) -> bool {
    *v == 1
}

impl LayerSpec {
    pub fn conv(kernel: u32, stride: u32) -> Self {
        Self { kind: LayerKind::Conv, kernel, stride, dilation: 1, out_channels: None, repeat: 1 }
    }

    pub fn pool(kernel: u32, stride: u32) -> Self {
        Self { kind: LayerKind::Pool, ..Self::conv(kernel, stride) }
    }

    pub fn upsample(factor: u32) -> Self {
        Self { kind: LayerKind::Upsample, ..Self::conv(1, factor) }
    }

    pub fn dilated(mut self, dilation: u32) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn channels(mut self, c: u32) -> Self {
        self.out_channels = Some(c);
        self
    }

    pub fn repeated(mut self, n: u32) -> Self {
        self.repeat = n;
        self
    }

    fn padding(&self) -> i64 {
        ((self.kernel as i64 - 1) * self.dilation as i64) / 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: String,
    #[serde(default = "one")]
    pub in_channels: u32,
    pub layers: Vec<LayerSpec>,
    /// Level name → index into `layers`; the level is that layer's output.
    pub taps: BTreeMap<String, usize>,
}

/// Pyramid level number of names like `P3`.
pub fn level_number(name: &str) -> Option<u32> {
    name.strip_prefix('P').or_else(|| name.strip_prefix('p'))?.parse().ok()
}

impl ArchSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let arch: ArchSpec = serde_json::from_str(text).map_err(|e| RfError::InvalidArch(e.to_string()))?;
        arch.validate()?;
        Ok(arch)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| RfError::InvalidArch(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(RfError::InvalidArch("no layers".into()));
        }
        if self.in_channels == 0 {
            return Err(RfError::InvalidArch("in_channels must be positive".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.kernel == 0 || l.stride == 0 || l.dilation == 0 || l.repeat == 0 {
                return Err(RfError::InvalidArch(format!(
                    "layer {i}: kernel, stride, dilation and repeat must be ≥ 1"
                )));
            }
            if l.kind == LayerKind::Conv && l.kernel % 2 == 0 {
                return Err(RfError::InvalidArch(format!("layer {i}: conv kernel must be odd")));
            }
            if l.out_channels == Some(0) {
                return Err(RfError::InvalidArch(format!("layer {i}: zero out_channels")));
            }
        }
        if self.taps.is_empty() {
            return Err(RfError::InvalidArch("no taps".into()));
        }
        for (name, &idx) in &self.taps {
            if idx >= self.layers.len() {
                return Err(RfError::InvalidArch(format!("tap {name} → layer {idx} out of range")));
            }
            if let Some(n) = level_number(name) {
                let stride = self.geometry_at(idx).stride;
                if n >= 63 || stride != Ratio::from_integer(1u64 << n) {
                    return Err(RfError::InvalidArch(format!(
                        "tap {name} has cumulative stride {stride}, expected {}",
                        1u128 << n.min(127)
                    )));
                }
            }
        }
        Ok(())
    }

    /// Layers with `repeat` expanded, each paired with the index of the
    /// spec entry it came from.
    pub fn expanded(&self) -> Vec<(usize, LayerSpec)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                let single = LayerSpec { repeat: 1, ..l.clone() };
                std::iter::repeat_n((i, single), l.repeat as usize)
            })
            .collect()
    }

    fn expanded_through(&self, tap: usize) -> Vec<LayerSpec> {
        self.expanded().into_iter().filter(|(i, _)| *i <= tap).map(|(_, l)| l).collect()
    }

    fn tap(&self, level: &str) -> Result<usize> {
        self.taps.get(level).copied().ok_or_else(|| RfError::UnknownLevel(level.to_string()))
    }

    fn geometry_at(&self, tap: usize) -> RfGeometry {
        rf_recurrence(&self.expanded_through(tap))
    }

    /// Taps ordered by cumulative stride (then name).
    pub fn levels_by_stride(&self) -> Vec<(String, RfGeometry)> {
        let mut v: Vec<_> = self.taps.iter().map(|(n, &i)| (n.clone(), self.geometry_at(i))).collect();
        v.sort_by(|a, b| a.1.stride.cmp(&b.1.stride).then(a.0.cmp(&b.0)));
        v
    }
}

/// Cumulative stride and theoretical receptive field, kept as exact
/// rationals so upsampling layers are accounted for without rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RfGeometry {
    pub stride: Ratio<u64>,
    pub trf: Ratio<u64>,
}

impl RfGeometry {
    pub fn stride_px(&self) -> f64 {
        *self.stride.numer() as f64 / *self.stride.denom() as f64
    }

    pub fn trf_px(&self) -> f64 {
        *self.trf.numer() as f64 / *self.trf.denom() as f64
    }
}

fn rf_recurrence(layers: &[LayerSpec]) -> RfGeometry {
    let mut jump = Ratio::from_integer(1u64);
    let mut rf = Ratio::from_integer(1u64);
    for l in layers {
        match l.kind {
            LayerKind::Conv | LayerKind::Pool => {
                let extent = u64::from(l.kernel - 1) * u64::from(l.dilation);
                rf += jump * extent;
                jump *= u64::from(l.stride);
            }
            LayerKind::Upsample => jump /= u64::from(l.stride),
        }
    }
    RfGeometry { stride: jump, trf: rf }
}

pub fn trf_and_stride(arch: &ArchSpec, level: &str) -> Result<RfGeometry> {
    let tap = arch.tap(level)?;
    Ok(arch.geometry_at(tap))
}

/// Summary for one pyramid level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RFResult {
    pub level: String,
    pub stride: f64,
    pub trf: f64,
    pub erf_diameter: Option<f64>,
    pub erf_mass_fraction: f64,
    /// The gradient support touched the input border.
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErfConfig {
    pub input_size: usize,
    pub draws: usize,
    pub mass: f64,
    pub seed: u64,
    /// All weights +1 and a single channel: maximal, cancellation-free support.
    pub deterministic: bool,
    /// Upper bound on channels per layer in the measurement network.
    pub channel_cap: u32,
}

impl Default for ErfConfig {
    fn default() -> Self {
        Self { input_size: 64, draws: 64, mass: 0.95, seed: 42, deterministic: false, channel_cap: 4 }
    }
}

/// Square grid of per-pixel gradient magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap {
    pub size: usize,
    pub data: Vec<f64>,
}

impl GradientMap {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.size + col]
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Bounding box `(row0, col0, row1, col1)` of strictly positive entries.
    pub fn support_bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for r in 0..self.size {
            for c in 0..self.size {
                if self.at(r, c) > 0.0 {
                    bb = Some(match bb {
                        None => (r, c, r, c),
                        Some((r0, c0, r1, c1)) => (r0.min(r), c0.min(c), r1.max(r), c1.max(c)),
                    });
                }
            }
        }
        bb
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.data.len() * 8);
        for row in self.data.chunks(self.size) {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v:e}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErfEstimate {
    pub result: RFResult,
    pub map: GradientMap,
    /// Pixel the centred squares are grown around.
    pub center: (usize, usize),
}

/// Per-layer shape of the measurement network.
#[derive(Debug, Clone)]
struct NetLayer {
    spec: LayerSpec,
    in_c: usize,
    out_c: usize,
    in_hw: usize,
    out_hw: usize,
}

fn build_net(layers: &[LayerSpec], in_channels: usize, input: usize, cap: usize) -> Result<Vec<NetLayer>> {
    let mut net = Vec::with_capacity(layers.len());
    let (mut c, mut hw) = (in_channels, input);
    for l in layers {
        let (out_c, out_hw) = match l.kind {
            LayerKind::Conv | LayerKind::Pool => {
                let span = (l.kernel as usize - 1) * l.dilation as usize;
                let padded = hw + 2 * l.padding() as usize;
                if padded <= span {
                    return Err(RfError::InputTooSmall { support: span as u64 + 1, input });
                }
                let oc = match l.kind {
                    LayerKind::Conv => (l.out_channels.map_or(c, |v| v as usize)).min(cap).max(1),
                    _ => c,
                };
                (oc, (padded - span - 1) / l.stride as usize + 1)
            }
            LayerKind::Upsample => (c, hw * l.stride as usize),
        };
        net.push(NetLayer { spec: l.clone(), in_c: c, out_c, in_hw: hw, out_hw });
        c = out_c;
        hw = out_hw;
    }
    Ok(net)
}

/// Conv weights per layer (`None` for fixed-weight layers), `[co][ci][ky][kx]`.
fn draw_weights(net: &[NetLayer], rng: Option<&mut ChaCha8Rng>) -> Vec<Option<Vec<f64>>> {
    let mut rng = rng;
    net.iter()
        .map(|l| match l.spec.kind {
            LayerKind::Conv => {
                let k = l.spec.kernel as usize;
                let n = l.out_c * l.in_c * k * k;
                Some(match rng.as_deref_mut() {
                    Some(r) => (0..n).map(|_| r.gen_range(-1.0..=1.0)).collect(),
                    None => vec![1.0; n],
                })
            }
            _ => None,
        })
        .collect()
}

#[derive(Clone, Copy)]
struct Window {
    r0: usize,
    r1: usize,
    c0: usize,
    c1: usize,
}

/// Back-propagate a unit seed at `(channel, row, col)` of the last layer to
/// the input. Returns the input gradient `[c][h][w]` and whether any layer's
/// support was cut by the border.
fn backward_seed(net: &[NetLayer], weights: &[Option<Vec<f64>>], seed: (usize, usize, usize)) -> (Vec<f64>, bool) {
    let last = net.last().expect("non-empty network");
    let mut hw = last.out_hw;
    let mut grad = vec![0.0; last.out_c * hw * hw];
    grad[(seed.0 * hw + seed.1) * hw + seed.2] = 1.0;
    let mut win = Window { r0: seed.1, r1: seed.1, c0: seed.2, c1: seed.2 };
    let mut truncated = false;

    for (layer, w) in net.iter().zip(weights).rev() {
        let in_hw = layer.in_hw;
        let mut gin = vec![0.0; layer.in_c * in_hw * in_hw];
        let l = &layer.spec;
        let s = l.stride as i64;
        let new_win = match l.kind {
            LayerKind::Conv | LayerKind::Pool => {
                let k = l.kernel as usize;
                let d = l.dilation as i64;
                let p = l.padding();
                let span = (k as i64 - 1) * d;
                let lo_r = win.r0 as i64 * s - p;
                let hi_r = win.r1 as i64 * s - p + span;
                let lo_c = win.c0 as i64 * s - p;
                let hi_c = win.c1 as i64 * s - p + span;
                let max = in_hw as i64 - 1;
                if lo_r < 0 || lo_c < 0 || hi_r > max || hi_c > max {
                    truncated = true;
                }
                let pool_w = 1.0 / (k * k) as f64;
                for co in 0..layer.out_c {
                    for oy in win.r0..=win.r1 {
                        for ox in win.c0..=win.c1 {
                            let g = grad[(co * hw + oy) * hw + ox];
                            if g == 0.0 {
                                continue;
                            }
                            for ky in 0..k {
                                let iy = oy as i64 * s - p + ky as i64 * d;
                                if iy < 0 || iy > max {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = ox as i64 * s - p + kx as i64 * d;
                                    if ix < 0 || ix > max {
                                        continue;
                                    }
                                    let (iy, ix) = (iy as usize, ix as usize);
                                    match w {
                                        Some(w) => {
                                            for ci in 0..layer.in_c {
                                                let wv = w[((co * layer.in_c + ci) * k + ky) * k + kx];
                                                gin[(ci * in_hw + iy) * in_hw + ix] += wv * g;
                                            }
                                        }
                                        None => gin[(co * in_hw + iy) * in_hw + ix] += pool_w * g,
                                    }
                                }
                            }
                        }
                    }
                }
                Window {
                    r0: lo_r.max(0) as usize,
                    r1: hi_r.min(max) as usize,
                    c0: lo_c.max(0) as usize,
                    c1: hi_c.min(max) as usize,
                }
            }
            LayerKind::Upsample => {
                let s = s as usize;
                for c in 0..layer.out_c {
                    for oy in win.r0..=win.r1 {
                        for ox in win.c0..=win.c1 {
                            let g = grad[(c * hw + oy) * hw + ox];
                            gin[(c * in_hw + oy / s) * in_hw + ox / s] += g;
                        }
                    }
                }
                Window { r0: win.r0 / s, r1: win.r1 / s, c0: win.c0 / s, c1: win.c1 / s }
            }
        };
        grad = gin;
        hw = in_hw;
        win = new_win;
    }
    (grad, truncated)
}

/// Σ over output channels of |∂h_center,c / ∂x| (summed over input channels).
fn gradient_magnitude(net: &[NetLayer], weights: &[Option<Vec<f64>>]) -> (Vec<f64>, bool) {
    let last = net.last().expect("non-empty network");
    let center = (last.out_hw - 1) / 2;
    let input = net[0].in_hw;
    let mut acc = vec![0.0; input * input];
    let mut truncated = false;
    for c in 0..last.out_c {
        let (g, t) = backward_seed(net, weights, (c, center, center));
        truncated |= t;
        for ch in g.chunks(input * input) {
            for (a, v) in acc.iter_mut().zip(ch) {
                *a += v.abs();
            }
        }
    }
    (acc, truncated)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for draw `index` derived from the master seed.
pub fn draw_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(1)))
}

fn deterministic_map(arch: &ArchSpec, level: &str, input_size: usize) -> Result<(GradientMap, bool)> {
    let tap = arch.tap(level)?;
    let layers = arch.expanded_through(tap);
    let net = build_net(&layers, 1, input_size, 1)?;
    let weights = draw_weights(&net, None);
    let (data, truncated) = gradient_magnitude(&net, &weights);
    Ok((GradientMap { size: input_size, data }, truncated))
}

/// Side of the bounding square of non-zero input gradients under all-ones
/// weights. Equals the analytic TRF whenever the border does not clip it.
pub fn gradient_support(arch: &ArchSpec, level: &str, input_size: usize) -> Result<u64> {
    if input_size == 0 {
        return Err(RfError::InvalidArgument("input_size must be positive".into()));
    }
    let (map, truncated) = deterministic_map(arch, level, input_size)?;
    let (r0, c0, r1, c1) = map.support_bbox().expect("unit seed reaches the input");
    let side = ((r1 - r0).max(c1 - c0) + 1) as u64;
    if truncated {
        return Err(RfError::InputTooSmall { support: side, input: input_size });
    }
    Ok(side)
}

/// Smallest odd side `2r + 1` of a square centred on `center` holding at
/// least `mass` of the map's total.
pub fn centered_mass_diameter(map: &GradientMap, center: (usize, usize), mass: f64) -> f64 {
    let n = map.size;
    // Integral image with a zero border row/column.
    let mut integral = vec![0.0; (n + 1) * (n + 1)];
    for r in 0..n {
        let mut row_sum = 0.0;
        for c in 0..n {
            row_sum += map.at(r, c);
            integral[(r + 1) * (n + 1) + c + 1] = integral[r * (n + 1) + c + 1] + row_sum;
        }
    }
    let total = integral[n * (n + 1) + n];
    if total <= 0.0 {
        return 0.0;
    }
    let box_sum = |r0: usize, c0: usize, r1: usize, c1: usize| {
        integral[(r1 + 1) * (n + 1) + c1 + 1] - integral[r0 * (n + 1) + c1 + 1] - integral[(r1 + 1) * (n + 1) + c0]
            + integral[r0 * (n + 1) + c0]
    };
    let target = mass * total;
    for r in 0..n {
        let r0 = center.0.saturating_sub(r);
        let c0 = center.1.saturating_sub(r);
        let r1 = (center.0 + r).min(n - 1);
        let c1 = (center.1 + r).min(n - 1);
        // Relative slack absorbs rounding in the prefix sums.
        if box_sum(r0, c0, r1, c1) >= target * (1.0 - 1e-12) {
            return (2 * r + 1) as f64;
        }
    }
    (2 * n - 1) as f64
}

/// Empirical ERF of `level`, averaged over `cfg.draws` random linear networks.
pub fn erf_estimate(arch: &ArchSpec, level: &str, cfg: &ErfConfig) -> Result<ErfEstimate> {
    if cfg.draws == 0 {
        return Err(RfError::InvalidArgument("draws must be ≥ 1".into()));
    }
    if !(cfg.mass > 0.0 && cfg.mass < 1.0) {
        return Err(RfError::InvalidArgument(format!("mass {} not in (0, 1)", cfg.mass)));
    }
    if cfg.input_size == 0 || cfg.channel_cap == 0 {
        return Err(RfError::InvalidArgument("input_size and channel_cap must be positive".into()));
    }
    let geom = trf_and_stride(arch, level)?;
    let (support_map, support_truncated) = deterministic_map(arch, level, cfg.input_size)?;
    let center = support_map
        .support_bbox()
        .map(|(r0, c0, r1, c1)| ((r0 + r1) / 2, (c0 + c1) / 2))
        .expect("unit seed reaches the input");

    let map = if cfg.deterministic {
        support_map
    } else {
        let layers = arch.expanded_through(arch.tap(level)?);
        let net = build_net(&layers, arch.in_channels as usize, cfg.input_size, cfg.channel_cap as usize)?;
        let per_draw: Vec<Vec<f64>> = (0..cfg.draws as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(draw_seed(cfg.seed, i));
                let weights = draw_weights(&net, Some(&mut rng));
                gradient_magnitude(&net, &weights).0
            })
            .collect();
        // Reduce in draw order so the result does not depend on scheduling.
        let mut mean = vec![0.0; cfg.input_size * cfg.input_size];
        for d in &per_draw {
            for (m, v) in mean.iter_mut().zip(d) {
                *m += v;
            }
        }
        let inv = 1.0 / cfg.draws as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        GradientMap { size: cfg.input_size, data: mean }
    };

    let diameter = centered_mass_diameter(&map, center, cfg.mass);
    Ok(ErfEstimate {
        result: RFResult {
            level: level.to_string(),
            stride: geom.stride_px(),
            trf: geom.trf_px(),
            erf_diameter: Some(diameter),
            erf_mass_fraction: cfg.mass,
            truncated: support_truncated,
        },
        map,
        center,
    })
}

/// Illustrative P2–P5 backbone loosely shaped like a large YOLO detector:
/// stride-2 downsampling convs separated by runs of 3×3 convs. It is not the
/// real YOLOv9-E layer graph.
pub const BUNDLED_ARCH_JSON: &str = include_str!("../assets/yolov9e_like.json");

pub fn bundled_arch() -> ArchSpec {
    ArchSpec::from_json(BUNDLED_ARCH_JSON).expect("bundled arch is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(layers: Vec<LayerSpec>) -> ArchSpec {
        let last = layers.len() - 1;
        ArchSpec { name: "t".into(), in_channels: 1, layers, taps: [("out".to_string(), last)].into_iter().collect() }
    }

    #[test]
    fn hand_recurrence() {
        // 1 → 3 → 5 (jump 2 afterwards) → 9
        let a = arch(vec![LayerSpec::conv(3, 1), LayerSpec::conv(3, 2), LayerSpec::conv(3, 1)]);
        let g = trf_and_stride(&a, "out").unwrap();
        assert_eq!(g.stride, Ratio::from_integer(2));
        assert_eq!(g.trf, Ratio::from_integer(9));
        assert_eq!(gradient_support(&a, "out", 32).unwrap(), 9);
    }

    #[test]
    fn pointwise_conv_has_unit_field() {
        let a = arch(vec![LayerSpec::conv(1, 1)]);
        let g = trf_and_stride(&a, "out").unwrap();
        assert_eq!((g.stride_px(), g.trf_px()), (1.0, 1.0));
        assert_eq!(gradient_support(&a, "out", 8).unwrap(), 1);
    }

    #[test]
    fn k5_support() {
        assert_eq!(gradient_support(&arch(vec![LayerSpec::conv(5, 1)]), "out", 16).unwrap(), 5);
    }

    #[test]
    fn dilation_widens_field() {
        let a = arch(vec![LayerSpec::conv(3, 1).dilated(2), LayerSpec::conv(3, 1)]);
        assert_eq!(trf_and_stride(&a, "out").unwrap().trf, Ratio::from_integer(7));
        assert_eq!(gradient_support(&a, "out", 32).unwrap(), 7);
    }

    #[test]
    fn upsample_uses_rational_jump() {
        let a = arch(vec![LayerSpec::conv(3, 2), LayerSpec::conv(3, 2), LayerSpec::upsample(2), LayerSpec::conv(3, 1)]);
        let g = trf_and_stride(&a, "out").unwrap();
        assert_eq!(g.stride, Ratio::from_integer(2));
        // 1 + 2·1 + 2·2 + 2·2 = 11
        assert_eq!(g.trf, Ratio::from_integer(11));

        let b = arch(vec![LayerSpec::conv(3, 2), LayerSpec::upsample(4), LayerSpec::conv(3, 1)]);
        let g = trf_and_stride(&b, "out").unwrap();
        assert_eq!(g.stride, Ratio::new(1, 2));
        assert_eq!(g.trf, Ratio::from_integer(4));
    }

    #[test]
    fn unknown_level() {
        let a = arch(vec![LayerSpec::conv(3, 1)]);
        assert_eq!(trf_and_stride(&a, "P9"), Err(RfError::UnknownLevel("P9".into())));
    }

    #[test]
    fn clipped_support_is_reported() {
        let a = arch(vec![LayerSpec::conv(9, 1)]);
        assert!(matches!(gradient_support(&a, "out", 5), Err(RfError::InputTooSmall { .. })));
        let est = erf_estimate(&a, "out", &ErfConfig { input_size: 5, draws: 2, ..Default::default() }).unwrap();
        assert!(est.result.truncated);
    }

    #[test]
    fn validation_checks_level_strides() {
        let mut a = arch(vec![LayerSpec::conv(3, 2), LayerSpec::conv(3, 2)]);
        a.taps = [("P2".to_string(), 1)].into_iter().collect();
        assert!(a.validate().is_ok());
        a.taps = [("P3".to_string(), 1)].into_iter().collect();
        assert!(matches!(a.validate(), Err(RfError::InvalidArch(_))));
        let even = arch(vec![LayerSpec::conv(2, 1)]);
        assert!(matches!(even.validate(), Err(RfError::InvalidArch(_))));
    }

    #[test]
    fn repeat_expands() {
        let a = arch(vec![LayerSpec::conv(3, 1).repeated(8)]);
        assert_eq!(trf_and_stride(&a, "out").unwrap().trf, Ratio::from_integer(17));
    }

    #[test]
    fn deterministic_k3_diameter_is_three() {
        let a = arch(vec![LayerSpec::conv(3, 1)]);
        let cfg = ErfConfig { input_size: 15, deterministic: true, ..Default::default() };
        let est = erf_estimate(&a, "out", &cfg).unwrap();
        assert_eq!(est.result.erf_diameter, Some(3.0));
        assert_eq!(est.center, (7, 7));
    }

    #[test]
    fn erf_arguments_validated() {
        let a = arch(vec![LayerSpec::conv(3, 1)]);
        for cfg in [
            ErfConfig { mass: 1.01, ..Default::default() },
            ErfConfig { mass: 0.0, ..Default::default() },
            ErfConfig { draws: 0, ..Default::default() },
        ] {
            assert!(matches!(erf_estimate(&a, "out", &cfg), Err(RfError::InvalidArgument(_))));
        }
    }

    #[test]
    fn draw_seeds_differ() {
        assert_ne!(draw_seed(42, 0), draw_seed(42, 1));
        assert_ne!(draw_seed(42, 0), draw_seed(43, 0));
    }

    #[test]
    fn bundled_arch_levels() {
        let a = bundled_arch();
        let levels = a.levels_by_stride();
        let names: Vec<_> = levels.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["P2", "P3", "P4", "P5"]);
        let trf = |l: &str| trf_and_stride(&a, l).unwrap().trf_px();
        assert!(trf("P3") < 1024.0);
        assert!(trf("P4") >= 1024.0);
    }
}
