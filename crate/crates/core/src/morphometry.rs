//! Major/minor axis measurement of oriented boxes and the per-dataset axis
//! statistics (min, mean, max, CV, 95% range) used to size the pyramid.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{Corpus, OrientedBox};
use crate::geometry::min_area_rect;

#[derive(Debug, Error, PartialEq)]
pub enum MorphometryError {
    /// The hull collapsed to a segment; the pair carries `minor = 0`.
    #[error("degenerate box: hull collapses to a segment (major {:.3})", .0.major)]
    DegenerateBox(AxisPair),
    #[error("empty corpus")]
    EmptyCorpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisPair {
    pub major: f64,
    pub minor: f64,
}

impl AxisPair {
    pub fn aspect_ratio(&self) -> f64 {
        self.major / self.minor
    }

    pub fn get(&self, axis: Axis) -> f64 {
        match axis {
            Axis::Major => self.major,
            Axis::Minor => self.minor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Major,
    Minor,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axis::Major => "major",
            Axis::Minor => "minor",
        })
    }
}

/// Side lengths of the minimum-area rectangle enclosing the box.
pub fn axis_lengths(obb: &OrientedBox) -> Result<AxisPair, MorphometryError> {
    let rect = min_area_rect(&obb.vertices).expect("four vertices");
    let pair = AxisPair { major: rect.length, minor: rect.width };
    if rect.width <= 0.0 {
        return Err(MorphometryError::DegenerateBox(AxisPair { minor: 0.0, ..pair }));
    }
    Ok(pair)
}

/// Axis pairs for every instance of a corpus, plus a tally of instances
/// excluded because their hull collapsed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusAxes {
    pub pairs: Vec<AxisPair>,
    pub degenerate: usize,
}

impl CorpusAxes {
    pub fn samples(&self, axis: Axis) -> Vec<f64> {
        self.pairs.iter().map(|p| p.get(axis)).collect()
    }
}

pub fn corpus_axes(corpus: &Corpus) -> CorpusAxes {
    let measured: Vec<Result<AxisPair, MorphometryError>> =
        corpus.scenes.par_iter().flat_map_iter(|s| s.boxes.iter().map(axis_lengths)).collect();
    let mut out = CorpusAxes::default();
    for m in measured {
        match m {
            Ok(p) => out.pairs.push(p),
            Err(_) => out.degenerate += 1,
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisStats {
    pub axis: Axis,
    pub n: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub std: f64,
    /// Coefficient of variation in percent.
    pub cv: f64,
    /// 2.5th percentile.
    pub q_low: f64,
    /// 97.5th percentile.
    pub q_high: f64,
    /// `[q_low, q_high]` widened outward to powers of two.
    pub range95_snapped: [f64; 2],
    pub degenerate: usize,
}

/// Pairwise summation; error grows as O(log n) rather than O(n).
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Inclusive linear-interpolation quantile of an ascending sample.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn snap_down_pow2(x: f64) -> f64 {
    2f64.powf(x.log2().floor())
}

pub fn snap_up_pow2(x: f64) -> f64 {
    2f64.powf(x.log2().ceil())
}

pub fn axis_stats(samples: &[f64], axis: Axis) -> Result<AxisStats, MorphometryError> {
    if samples.is_empty() {
        return Err(MorphometryError::EmptyCorpus);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = pairwise_sum(&sorted) / n as f64;
    let sq: Vec<f64> = sorted.iter().map(|x| (x - mean) * (x - mean)).collect();
    let std = (pairwise_sum(&sq) / n as f64).sqrt();
    let cv = if mean > 0.0 { 100.0 * std / mean } else { 0.0 };
    let q_low = quantile_sorted(&sorted, 0.025);
    let q_high = quantile_sorted(&sorted, 0.975);
    Ok(AxisStats {
        axis,
        n,
        min: sorted[0],
        mean,
        max: sorted[n - 1],
        std,
        cv,
        q_low,
        q_high,
        range95_snapped: [snap_down_pow2(q_low), snap_up_pow2(q_high)],
        degenerate: 0,
    })
}

pub fn corpus_axis_stats(corpus: &Corpus, axis: Axis) -> Result<AxisStats, MorphometryError> {
    let axes = corpus_axes(corpus);
    let mut stats = axis_stats(&axes.samples(axis), axis)?;
    stats.degenerate = axes.degenerate;
    Ok(stats)
}

/// CSV header for [`stats_csv_row`], in the usual summary order
/// (min, mean, max, 95% range, CV) with the raw quantiles appended.
pub const STATS_CSV_HEADER: &str =
    "dataset,axis,n,min,mean,max,range95_low,range95_high,cv,std,q_low,q_high,degenerate";

pub fn stats_csv_row(dataset: &str, s: &AxisStats) -> String {
    format!(
        "{},{},{},{:.4},{:.4},{:.4},{},{},{:.4},{:.4},{:.4},{:.4},{}",
        dataset,
        s.axis,
        s.n,
        s.min,
        s.mean,
        s.max,
        s.range95_snapped[0],
        s.range95_snapped[1],
        s.cv,
        s.std,
        s.q_low,
        s.q_high,
        s.degenerate
    )
}

/// Joint major × minor histogram over power-of-two pixel bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram2D {
    /// Major-axis bin edges.
    pub x_edges: Vec<f64>,
    /// Minor-axis bin edges.
    pub y_edges: Vec<f64>,
    /// `counts[iy][ix]`.
    pub counts: Vec<Vec<u64>>,
}

/// Power-of-two edges 1, 2, 4, …, 2048.
pub fn log2_edges() -> Vec<f64> {
    (0..=11).map(|k| f64::from(1u32 << k)).collect()
}

fn bin_index(edges: &[f64], v: f64) -> usize {
    let bins = edges.len() - 1;
    if v < edges[0] {
        return 0;
    }
    // Values past the last edge land in the final bin.
    (v.log2().floor().max(0.0) as usize).min(bins - 1)
}

impl Histogram2D {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// CSV matrix: first row holds x edges, first column the lower y edge of
    /// each row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("minor_lo\\major_lo");
        for e in &self.x_edges[..self.x_edges.len() - 1] {
            let _ = write!(out, ",{e}");
        }
        out.push('\n');
        for (iy, row) in self.counts.iter().enumerate() {
            let _ = write!(out, "{}", self.y_edges[iy]);
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn histogram_from_pairs(pairs: &[AxisPair]) -> Histogram2D {
    let edges = log2_edges();
    let bins = edges.len() - 1;
    let mut counts = vec![vec![0u64; bins]; bins];
    for p in pairs {
        counts[bin_index(&edges, p.minor)][bin_index(&edges, p.major)] += 1;
    }
    Histogram2D { x_edges: edges.clone(), y_edges: edges, counts }
}

pub fn axis_histogram(corpus: &Corpus) -> Result<Histogram2D, MorphometryError> {
    let axes = corpus_axes(corpus);
    if axes.pairs.is_empty() {
        return Err(MorphometryError::EmptyCorpus);
    }
    Ok(histogram_from_pairs(&axes.pairs))
}
