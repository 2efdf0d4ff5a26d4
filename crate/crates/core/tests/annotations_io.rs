use std::fs;

use limforge::annotations::{
    load_corpus, load_datasets, parse_dota_obb, parse_dota_obb_with, serialize_dota_obb, AnnotationError, OrientedBox,
    ParseOptions, SceneAnnotation,
};
use limforge::geometry::Point;
use proptest::prelude::*;

fn coord() -> impl Strategy<Value = f64> {
    // Quarter-pixel grid keeps every box non-degenerate after the filter below
    // and exercises fractional formatting.
    (0u32..4000).prop_map(|v| f64::from(v) * 0.25)
}

fn obb() -> impl Strategy<Value = OrientedBox> {
    (proptest::array::uniform4((coord(), coord())), "[a-z][a-z-]{0,10}", proptest::option::of(0i32..3))
        .prop_map(|(pts, label, difficulty)| OrientedBox {
            vertices: pts.map(|(x, y)| Point { x, y }),
            class_label: label,
            difficulty,
        })
        .prop_filter("non-degenerate", |b| !b.is_degenerate())
}

proptest! {
    #[test]
    fn serialize_parse_roundtrip(
        boxes in proptest::collection::vec(obb(), 0..12),
        gsd in proptest::option::of(0.05f64..5.0),
    ) {
        let scene = SceneAnnotation { image_id: "p".into(), image_width: 1000, image_height: 1000, gsd, boxes };
        let text = serialize_dota_obb(&scene);
        let back = parse_dota_obb(&text, "p", 1000, 1000).unwrap();
        prop_assert_eq!(back, scene);
    }

    #[test]
    fn parser_never_panics(text in "\\PC{0,400}") {
        let _ = parse_dota_obb(&text, "fuzz", 512, 512);
        let _ = parse_dota_obb_with(&text, "fuzz", 512, 512, ParseOptions { strict_bounds: true });
    }

    #[test]
    fn parser_handles_token_soup(
        lines in proptest::collection::vec(
            proptest::collection::vec(prop_oneof!["-?[0-9]{1,4}(\\.[0-9]{1,3})?", "[a-z]{1,6}", Just("nan".to_string())], 0..12),
            0..8,
        )
    ) {
        let text: String = lines.iter().map(|l| l.join(" ") + "\n").collect();
        if let Ok(scene) = parse_dota_obb(&text, "soup", 256, 256) {
            for b in &scene.boxes {
                prop_assert!(!b.is_degenerate());
                for v in &b.vertices {
                    prop_assert!(v.x.is_finite() && v.y.is_finite());
                    prop_assert!((0.0..=256.0).contains(&v.x) && (0.0..=256.0).contains(&v.y));
                }
            }
        }
    }
}

fn write_manifest(dir: &std::path::Path, entries: &str) -> std::path::PathBuf {
    let path = dir.join("corpus.json");
    fs::write(&path, entries).unwrap();
    path
}

#[test]
fn load_corpus_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("labels")).unwrap();
    fs::write(dir.path().join("labels/a.txt"), "imagesource:synthetic\ngsd:0.5\n10 10 50 10 50 20 10 20 ship 0\n")
        .unwrap();
    fs::write(dir.path().join("labels/b.txt"), "0 0 8 0 8 4 0 4 boat\n1 1 9 1 9 5 1 5 ship 1\n").unwrap();
    let manifest = write_manifest(
        dir.path(),
        r#"[
          {"image_id": "a", "width": 100, "height": 100, "annotation_file": "labels/a.txt", "dataset": "one"},
          {"image_id": "b", "width": 64, "height": 64, "annotation_file": "labels/b.txt", "dataset": "two"}
        ]"#,
    );
    let corpus = load_corpus(&manifest).unwrap();
    assert_eq!(corpus.scenes.len(), 2);
    assert_eq!(corpus.instance_count(), 3);
    assert_eq!(corpus.scenes[0].gsd, Some(0.5));
    assert_eq!(corpus.class_set.iter().cloned().collect::<Vec<_>>(), vec!["boat", "ship"]);

    let sets = load_datasets(&manifest).unwrap();
    let names: Vec<&str> = sets.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, vec!["one", "two"]);
    assert_eq!(sets[1].instance_count(), 2);
}

#[test]
fn load_corpus_reports_every_bad_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.txt"), "1 2 3 ship\n").unwrap();
    let manifest = write_manifest(
        dir.path(),
        r#"[
          {"image_id": "a", "width": 10, "height": 10, "annotation_file": "missing.txt"},
          {"image_id": "b", "width": 10, "height": 10, "annotation_file": "bad.txt"}
        ]"#,
    );
    match load_corpus(&manifest) {
        Err(AnnotationError::Aggregate(errs)) => assert_eq!(errs.len(), 2),
        other => panic!("expected aggregate error, got {other:?}"),
    }
}

#[test]
fn duplicate_ids_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.txt"), "").unwrap();
    let manifest = write_manifest(
        dir.path(),
        r#"[
          {"image_id": "a", "width": 10, "height": 10, "annotation_file": "a.txt"},
          {"image_id": "a", "width": 10, "height": 10, "annotation_file": "a.txt"}
        ]"#,
    );
    assert!(matches!(load_corpus(&manifest), Err(AnnotationError::DuplicateImageId(id)) if id == "a"));
}
