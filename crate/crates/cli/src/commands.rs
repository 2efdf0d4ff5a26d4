use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use limforge::annotations::{load_datasets, load_scenes, Corpus, Manifest};
use limforge::gradcheck::{run_gncheck, CheckOptions, GnCheckReport};
use limforge::morphometry::{
    axis_histogram, corpus_axes, corpus_axis_stats, stats_csv_row, Axis, AxisStats, STATS_CSV_HEADER,
};
use limforge::pyramid_advisor::{
    audit_levels, dilution_csv_row, recommend_levels, simulate_dilution, BarSpec, DilutionResult, Placement,
    PyramidReport, RfSource, DILUTION_CSV_HEADER,
};
use limforge::raster::Raster;
use limforge::rf_engine::{bundled_arch, erf_estimate, ArchSpec, ErfConfig, RFResult};
use limforge::tiler::{tile_scene, write_patches, TileConfig, TilingManifest};

use crate::error::CliError;
use crate::report::{sub_seed, Meta, OutDir};

fn read_manifest(path: &Path, meta: &mut Meta) -> Result<Manifest, CliError> {
    meta.digest(path)?;
    let manifest = Manifest::read(path)?;
    for e in &manifest.entries {
        let p = manifest.resolve(&e.annotation_file);
        if p.exists() {
            meta.digest(&p)?;
        }
    }
    Ok(manifest)
}

fn load_arch(path: Option<&Path>, meta: &mut Meta) -> Result<ArchSpec, CliError> {
    match path {
        Some(p) => {
            meta.digest(p)?;
            Ok(ArchSpec::from_path(p)?)
        }
        None => Ok(bundled_arch()),
    }
}

// ---------------------------------------------------------------- stats

#[derive(Serialize)]
struct StatsRow {
    dataset: String,
    #[serde(flatten)]
    stats: AxisStats,
}

#[derive(Serialize)]
struct StatsReport {
    rows: Vec<StatsRow>,
    warnings: Vec<String>,
}

pub fn stats(manifest_path: &Path, out: &OutDir, seed: u64) -> Result<String, CliError> {
    let mut meta = Meta::new("stats", seed);
    read_manifest(manifest_path, &mut meta)?;
    let datasets = load_datasets(manifest_path)?;
    let all_scenes = datasets.iter().flat_map(|c| c.scenes.iter().cloned()).collect();
    let overall = Corpus::new("overall", all_scenes)?;
    if overall.instance_count() == 0 {
        return Err(CliError::input("empty corpus"));
    }

    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for corpus in datasets.iter().chain(std::iter::once(&overall)) {
        for axis in [Axis::Major, Axis::Minor] {
            match corpus_axis_stats(corpus, axis) {
                Ok(stats) => rows.push(StatsRow { dataset: corpus.name.clone(), stats }),
                Err(e) => {
                    if axis == Axis::Major {
                        warnings.push(format!("dataset `{}`: {e}", corpus.name));
                    }
                }
            }
        }
    }
    let degenerate = corpus_axes(&overall).degenerate;
    if degenerate > 0 {
        warnings.push(format!("{degenerate} degenerate boxes excluded from statistics"));
    }

    let mut csv = String::from(STATS_CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&stats_csv_row(&r.dataset, &r.stats));
        csv.push('\n');
    }
    out.write("stats.csv", &csv)?;
    out.write("histogram.csv", axis_histogram(&overall)?.to_csv())?;

    let mut table = String::new();
    let _ = writeln!(
        table,
        "{:<16} {:<6} {:>7} {:>9} {:>9} {:>9} {:>14} {:>8}",
        "dataset", "axis", "n", "min", "mean", "max", "95% range", "cv%"
    );
    for r in &rows {
        let s = &r.stats;
        let range = format!("[{}, {}]", s.range95_snapped[0], s.range95_snapped[1]);
        let _ = writeln!(
            table,
            "{:<16} {:<6} {:>7} {:>9.2} {:>9.2} {:>9.2} {:>14} {:>8.2}",
            r.dataset, s.axis, s.n, s.min, s.mean, s.max, range, s.cv
        );
    }
    for w in &warnings {
        let _ = writeln!(table, "! {w}");
    }
    out.write("stats.txt", &table)?;
    out.write_json("stats.json", &meta, &StatsReport { rows, warnings })?;
    Ok(table)
}

// ---------------------------------------------------------------- audit

pub struct AuditArgs<'a> {
    pub manifest: &'a Path,
    pub arch: Option<&'a Path>,
    pub image_size: u32,
    pub rf_source: RfSource,
    pub erf_files: &'a [PathBuf],
}

/// ERF diameters keyed by level, from `limforge erf` reports or a plain
/// `{"P3": 120.0, ...}` object.
fn read_erf_measurements(paths: &[PathBuf], meta: &mut Meta) -> Result<BTreeMap<String, f64>, CliError> {
    let mut out = BTreeMap::new();
    for p in paths {
        meta.digest(p)?;
        let text = std::fs::read_to_string(p).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
        let bad = || CliError::input(format!("{}: not an ERF report or level→diameter map", p.display()));
        if let Some(result) = value.get("result") {
            let r: RFResult = serde_json::from_value(result.clone()).map_err(|_| bad())?;
            if let Some(d) = r.erf_diameter {
                out.insert(r.level, d);
            }
        } else if let Some(obj) = value.as_object() {
            for (k, v) in obj {
                out.insert(k.clone(), v.as_f64().ok_or_else(bad)?);
            }
        } else {
            return Err(bad());
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct AuditReport<'a> {
    arch: &'a str,
    image_size: u32,
    rf_source: RfSource,
    minor: &'a AxisStats,
    major: &'a AxisStats,
    #[serde(flatten)]
    report: &'a PyramidReport,
}

pub fn audit(args: &AuditArgs<'_>, out: &OutDir, seed: u64) -> Result<String, CliError> {
    let mut meta = Meta::new("audit", seed);
    let manifest = read_manifest(args.manifest, &mut meta)?;
    let arch = load_arch(args.arch, &mut meta)?;
    let erf = read_erf_measurements(args.erf_files, &mut meta)?;
    if args.image_size == 0 {
        return Err(CliError::input("--image-size must be positive"));
    }

    let corpus = Corpus::new(manifest.default_dataset(), load_scenes(&manifest)?)?;
    let minor = corpus_axis_stats(&corpus, Axis::Minor)?;
    let major = corpus_axis_stats(&corpus, Axis::Major)?;
    let minor_samples = corpus_axes(&corpus).samples(Axis::Minor);

    let mut report =
        recommend_levels(&minor, &major, &arch, args.image_size, args.rf_source, (!erf.is_empty()).then_some(&erf));
    let strides: Vec<(String, f64)> = arch.levels_by_stride().into_iter().map(|(n, g)| (n, g.stride_px())).collect();
    report.audits = audit_levels(&minor, &strides, Some(&minor_samples));

    let table = report.to_table();
    out.write("audit.txt", &table)?;
    out.write_json(
        "audit.json",
        &meta,
        &AuditReport {
            arch: &arch.name,
            image_size: args.image_size,
            rf_source: args.rf_source,
            minor: &minor,
            major: &major,
            report: &report,
        },
    )?;
    Ok(table)
}

// ---------------------------------------------------------------- erf

pub struct ErfArgs<'a> {
    pub arch: Option<&'a Path>,
    pub level: &'a str,
    pub draws: usize,
    pub mass: f64,
    pub input_size: usize,
    pub deterministic: bool,
    pub channel_cap: u32,
}

#[derive(Serialize)]
struct ErfReport<'a> {
    arch: &'a str,
    config: &'a ErfConfig,
    center: (usize, usize),
    result: &'a RFResult,
}

pub fn erf(args: &ErfArgs<'_>, out: &OutDir, seed: u64) -> Result<String, CliError> {
    let mut meta = Meta::new("erf", seed);
    let arch = load_arch(args.arch, &mut meta)?;
    let cfg = ErfConfig {
        input_size: args.input_size,
        draws: args.draws,
        mass: args.mass,
        seed: sub_seed(seed, "erf"),
        deterministic: args.deterministic,
        channel_cap: args.channel_cap,
    };
    let est = erf_estimate(&arch, args.level, &cfg)?;
    let r = &est.result;

    let mut table = String::new();
    let _ = writeln!(
        table,
        "{:<6} {:>8} {:>9} {:>12} {:>6} {:>10}",
        "level", "stride", "trf", "erf_diameter", "mass", "truncated"
    );
    let erf_d = r.erf_diameter.map_or("-".to_string(), |d| format!("{d}"));
    let _ = writeln!(
        table,
        "{:<6} {:>8} {:>9} {:>12} {:>6} {:>10}",
        r.level, r.stride, r.trf, erf_d, r.erf_mass_fraction, r.truncated
    );
    if r.truncated {
        let _ = writeln!(table, "! gradient support reaches the input border; raise --image-size");
    }
    out.write("erf.txt", &table)?;
    out.write("erf_map.csv", est.map.to_csv())?;
    out.write_json("erf.json", &meta, &ErfReport { arch: &arch.name, config: &cfg, center: est.center, result: r })?;
    Ok(table)
}

// ---------------------------------------------------------------- tile

#[derive(Serialize)]
struct TileReport<'a> {
    config: &'a TileConfig,
    patch_count: usize,
    scenes: &'a [TilingManifest],
}

pub fn tile(manifest_path: &Path, cfg: &TileConfig, out: &OutDir, seed: u64) -> Result<String, CliError> {
    cfg.validate()?;
    let mut meta = Meta::new("tile", seed);
    let manifest = read_manifest(manifest_path, &mut meta)?;
    let mut rasters = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let rel = e
            .image_file
            .as_ref()
            .ok_or_else(|| CliError::input(format!("scene `{}` has no image_file", e.image_id)))?;
        let path = manifest.resolve(rel);
        if !path.exists() {
            return Err(CliError::input(format!("missing raster {}", path.display())));
        }
        meta.digest(&path)?;
        rasters.push(path);
    }
    let scenes = load_scenes(&manifest)?;
    Corpus::new(manifest.default_dataset(), scenes.clone())?;

    let patch_dir = out.path("patches");
    let tiled: Vec<Result<TilingManifest, CliError>> = scenes
        .par_iter()
        .zip(rasters.par_iter())
        .map(|(scene, path)| {
            let raster = Raster::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            let patches = tile_scene(scene, &raster, cfg)?;
            Ok(write_patches(&patch_dir, scene, &patches, cfg)?)
        })
        .collect();
    let manifests = tiled.into_iter().collect::<Result<Vec<_>, _>>()?;
    let patch_count = manifests.iter().map(|m| m.patches.len()).sum();

    let mut table = String::new();
    let _ = writeln!(table, "{:<24} {:>8} {:>14}", "scene", "patches", "padded_extent");
    for m in &manifests {
        let extent = format!("{}x{}", m.padded_extent.0, m.padded_extent.1);
        let _ = writeln!(table, "{:<24} {:>8} {:>14}", m.parent_id, m.patches.len(), extent);
    }
    let _ = writeln!(table, "total patches: {patch_count}");
    out.write("tile.txt", &table)?;
    out.write_json("tile.json", &meta, &TileReport { config: cfg, patch_count, scenes: &manifests })?;
    Ok(table)
}

// ---------------------------------------------------------------- gncheck

pub fn gncheck(out: &OutDir, seed: u64, inject_bug: bool) -> Result<String, CliError> {
    let meta = Meta::new("gncheck", seed);
    let report: GnCheckReport = run_gncheck(sub_seed(seed, "gncheck"), CheckOptions { inject_bug });
    let table = report.to_table();
    out.write("gncheck.txt", &table)?;
    out.write_json("gncheck.json", &meta, &report)?;
    if !report.passed {
        return Err(CliError::Verification(format!("gradient or stability checks failed\n{table}")));
    }
    Ok(table)
}

// ---------------------------------------------------------------- dilution

pub struct DilutionArgs<'a> {
    pub widths: &'a [f64],
    pub strides: &'a [u32],
    pub length: f64,
    pub angles: &'a [f64],
    pub canvas: u32,
    pub centered: bool,
}

#[derive(Serialize)]
struct DilutionReport<'a> {
    canvas: u32,
    placement: &'static str,
    rows: &'a [DilutionResult],
}

pub fn dilution(args: &DilutionArgs<'_>, out: &OutDir, seed: u64) -> Result<String, CliError> {
    let meta = Meta::new("dilution", seed);
    let placement = if args.centered { Placement::Centered } else { Placement::GridAligned };
    let mut specs = Vec::new();
    for &width in args.widths {
        for &angle_deg in args.angles {
            for &stride in args.strides {
                specs.push(BarSpec { width, length: args.length, angle_deg, stride, canvas: args.canvas, placement });
            }
        }
    }
    let rows = specs.par_iter().map(simulate_dilution).collect::<Result<Vec<_>, _>>()?;

    let mut csv = String::from(DILUTION_CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&dilution_csv_row(r));
        csv.push('\n');
    }
    out.write("dilution.csv", &csv)?;
    out.write_json(
        "dilution.json",
        &meta,
        &DilutionReport {
            canvas: args.canvas,
            placement: if args.centered { "centered" } else { "grid" },
            rows: &rows,
        },
    )?;
    Ok(csv)
}
