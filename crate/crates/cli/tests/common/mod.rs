#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_limforge"))
}

/// Run the binary with `--out <out>` followed by `args`.
pub fn run(out: &Path, args: &[&str]) -> Output {
    bin().arg("--out").arg(out).args(args).output().expect("spawn limforge")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Axis-aligned box text line `x0 y0 x1 y0 x1 y1 x0 y1 label`.
pub fn rect_line(cx: f64, cy: f64, major: f64, minor: f64) -> String {
    let (hx, hy) = (major / 2.0, minor / 2.0);
    let (x0, y0, x1, y1) = (cx - hx, cy - hy, cx + hx, cy + hy);
    format!("{x0} {y0} {x1} {y0} {x1} {y1} {x0} {y1} ship 0\n")
}

pub struct SceneSpec {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub lines: String,
    pub dataset: Option<String>,
    pub raster: bool,
}

impl SceneSpec {
    pub fn new(id: &str, width: u32, height: u32, lines: String) -> Self {
        Self { id: id.into(), width, height, lines, dataset: None, raster: false }
    }
}

/// Deterministic 8-bit noise as a binary PGM.
pub fn noise_pgm(width: u32, height: u32, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend((0..width as usize * height as usize).map(|_| rng.gen::<u8>()));
    out
}

/// Write annotation files, optional rasters and a manifest named
/// `<name>.json` into `dir`; returns the manifest path.
pub fn write_corpus(dir: &Path, name: &str, scenes: &[SceneSpec]) -> PathBuf {
    fs::create_dir_all(dir.join("labels")).unwrap();
    fs::create_dir_all(dir.join("images")).unwrap();
    let mut entries = Vec::new();
    for (i, s) in scenes.iter().enumerate() {
        let label = format!("labels/{}.txt", s.id);
        fs::write(dir.join(&label), &s.lines).unwrap();
        let mut e = serde_json::json!({
            "image_id": s.id, "width": s.width, "height": s.height, "annotation_file": label,
        });
        if let Some(d) = &s.dataset {
            e["dataset"] = d.clone().into();
        }
        if s.raster {
            let img = format!("images/{}.pgm", s.id);
            fs::write(dir.join(&img), noise_pgm(s.width, s.height, i as u64)).unwrap();
            e["image_file"] = img.into();
        }
        entries.push(e);
    }
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, serde_json::to_string_pretty(&entries).unwrap()).unwrap();
    path
}

/// Corpus whose 95% ranges snap to minor [4, 64] and major [8, 256], the
/// aggregate object statistics used for the recommendation checks.
pub fn aggregate_stats_corpus(dir: &Path) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut lines = String::new();
    for _ in 0..400 {
        let minor = 2f64.powf(rng.gen_range(2.2..5.9));
        let aspect = 2f64.powf(rng.gen_range(0.9..2.0));
        let major = (minor * aspect).min(250.0);
        let cx = rng.gen_range(200.0..824.0);
        let cy = rng.gen_range(200.0..824.0);
        lines.push_str(&rect_line(cx, cy, major, minor));
    }
    write_corpus(dir, "aggregate", &[SceneSpec::new("scene", 1024, 1024, lines)])
}

/// The 2048×1536 tiling scene with one box at the centre of each train
/// window so every window survives the empty-patch filter.
pub fn tiling_corpus(dir: &Path) -> PathBuf {
    let mut lines = String::new();
    for cy in [512.0, 1024.0] {
        for cx in [512.0, 1280.0, 1536.0] {
            lines.push_str(&rect_line(cx, cy, 40.0, 12.0));
        }
    }
    let mut s = SceneSpec::new("big", 2048, 1536, lines);
    s.raster = true;
    write_corpus(dir, "tiling", &[s])
}

pub fn k3_arch(dir: &Path, depth: usize) -> PathBuf {
    let layers: Vec<_> = (0..depth).map(|_| serde_json::json!({"kind": "conv", "kernel": 3})).collect();
    let arch = serde_json::json!({"name": format!("k3x{depth}"), "layers": layers, "taps": {"out": depth - 1}});
    let path = dir.join(format!("k3x{depth}.json"));
    fs::write(&path, arch.to_string()).unwrap();
    path
}

/// P2..P5 toy backbone: four stride-2 convs tapped after the 2nd to 5th.
pub fn toy_arch(dir: &Path) -> PathBuf {
    let arch = serde_json::json!({
        "name": "toy",
        "layers": [
            {"kind": "conv", "kernel": 3, "stride": 2},
            {"kind": "conv", "kernel": 3, "stride": 2},
            {"kind": "conv", "kernel": 3, "stride": 2},
            {"kind": "conv", "kernel": 3, "stride": 2},
            {"kind": "conv", "kernel": 3, "stride": 2}
        ],
        "taps": {"P2": 1, "P3": 2, "P4": 3, "P5": 4}
    });
    let path = dir.join("toy.json");
    fs::write(&path, arch.to_string()).unwrap();
    path
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}
