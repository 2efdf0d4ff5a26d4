use std::collections::BTreeMap;

use limforge::rf_engine::{erf_estimate, gradient_support, trf_and_stride, ArchSpec, ErfConfig, LayerSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_arch(rng: &mut ChaCha8Rng) -> ArchSpec {
    let n = rng.gen_range(1..=5);
    let layers: Vec<LayerSpec> = (0..n)
        .map(|_| {
            let k = [1, 3, 5][rng.gen_range(0..3)];
            let s = rng.gen_range(1..=2);
            LayerSpec::conv(k, s)
        })
        .collect();
    let mut taps = BTreeMap::new();
    taps.insert("out".to_string(), n - 1);
    ArchSpec { name: "random".into(), in_channels: 1, layers, taps }
}

fn stack(depth: usize) -> ArchSpec {
    let mut taps = BTreeMap::new();
    taps.insert("out".to_string(), depth - 1);
    ArchSpec { name: "k3 stack".into(), in_channels: 1, layers: vec![LayerSpec::conv(3, 1); depth], taps }
}

#[test]
fn trf_equals_gradient_support_on_random_archs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = Vec::new();
    for i in 0..50 {
        let arch = random_arch(&mut rng);
        let trf = trf_and_stride(&arch, "out").unwrap().trf_px();
        let support = gradient_support(&arch, "out", 160).unwrap();
        if trf != support as f64 {
            mismatches.push((i, trf, support));
        }
    }
    assert!(mismatches.is_empty(), "{mismatches:?}");
}

#[test]
fn dilated_and_pooled_archs_match_support() {
    let arch = ArchSpec {
        name: "mixed".into(),
        in_channels: 1,
        layers: vec![
            LayerSpec::conv(3, 1),
            LayerSpec::pool(2, 2),
            LayerSpec::conv(3, 1).dilated(2),
            LayerSpec::conv(5, 2),
        ],
        taps: [("out".to_string(), 3)].into(),
    };
    let trf = trf_and_stride(&arch, "out").unwrap().trf_px();
    // r: 1 → 3 → 4 (pool, j=1) → 12 (k3 d2, j=2) → 20 (k5, j=2)
    assert_eq!(trf, 20.0);
    assert_eq!(gradient_support(&arch, "out", 128).unwrap() as f64, trf);
}

#[test]
fn erf_is_inside_trf() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10 {
        let arch = random_arch(&mut rng);
        let trf = trf_and_stride(&arch, "out").unwrap().trf_px();
        let cfg = ErfConfig { input_size: 96, draws: 8, ..ErfConfig::default() };
        let est = erf_estimate(&arch, "out", &cfg).unwrap();
        assert!(!est.result.truncated);
        assert!(est.result.erf_diameter.unwrap() <= trf, "{:?} trf {trf}", est.result);
    }
}

#[test]
fn k3_stack_is_center_concentrated() {
    let arch = stack(8);
    let est = erf_estimate(&arch, "out", &ErfConfig::default()).unwrap();
    let (cy, cx) = est.center;
    let d = est.result.erf_diameter.unwrap();
    assert!(d < 17.0, "diameter {d}");
    let center = est.map.at(cy, cx);
    let edge = est.map.at(cy, cx + 8);
    assert!(center > 2.0 * edge, "center {center} edge {edge}");
}

#[test]
fn averaged_map_is_point_symmetric() {
    let arch = stack(4);
    let cfg = ErfConfig { input_size: 33, draws: 2048, ..ErfConfig::default() };
    let est = erf_estimate(&arch, "out", &cfg).unwrap();
    let m = &est.map;
    let peak = m.data.iter().cloned().fold(0.0, f64::max);
    let (cy, cx) = est.center;
    for dy in -4i64..=4 {
        for dx in -4i64..=4 {
            let a = m.at((cy as i64 + dy) as usize, (cx as i64 + dx) as usize);
            let b = m.at((cy as i64 - dy) as usize, (cx as i64 - dx) as usize);
            assert!((a - b).abs() <= 5e-2 * peak, "({dy},{dx}): {a} vs {b}");
        }
    }
}

#[test]
fn erf_is_deterministic_per_seed() {
    let arch = stack(3);
    let cfg = ErfConfig { input_size: 32, draws: 16, seed: 5, ..ErfConfig::default() };
    let a = erf_estimate(&arch, "out", &cfg).unwrap();
    let b = erf_estimate(&arch, "out", &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(serde_json::to_string(&a.result).unwrap(), serde_json::to_string(&b.result).unwrap());
    let c = erf_estimate(&arch, "out", &ErfConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(a.map, c.map);
}

#[test]
fn deterministic_mode_reproduces_trf() {
    for depth in 1..=6 {
        let arch = stack(depth);
        let cfg = ErfConfig { input_size: 41, draws: 1, deterministic: true, mass: 0.999, ..ErfConfig::default() };
        let est = erf_estimate(&arch, "out", &cfg).unwrap();
        let (r0, c0, r1, c1) = est.map.support_bbox().unwrap();
        assert_eq!((r1 - r0 + 1, c1 - c0 + 1), (2 * depth + 1, 2 * depth + 1));
    }
}
