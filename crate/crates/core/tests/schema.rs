use std::collections::BTreeMap;
use std::path::Path;

use kidforge::schema::{
    parse_manifest, parse_manifest_unchecked, partition_by_annotation, validate_federation, AnnotationSpec, DatasetManifest,
    Federation, GlobalSchema, SampleRecord, ViolationKind,
};
use kidforge::Error;
use proptest::prelude::*;

fn schema() -> GlobalSchema {
    GlobalSchema::new(vec![
        AnnotationSpec::categorical("color", &["red", "blue", "white"]),
        AnnotationSpec::categorical("type", &["sedan", "suv"]),
        AnnotationSpec::cluster("make"),
    ])
    .unwrap()
}

fn rec(id: &str, labels: &[(&str, Option<&str>)]) -> SampleRecord {
    SampleRecord {
        sample_id: id.into(),
        image: None,
        feature_ref: Some("f.txt".into()),
        annotations: labels.iter().map(|(k, v)| (k.to_string(), v.map(str::to_string))).collect(),
    }
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn empty_file_is_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = parse_manifest(&write(dir.path(), "e.jsonl", ""), &schema()).unwrap();
    assert!(m.samples.is_empty());
    assert!(m.declared_annotations.is_empty());
}

#[test]
fn two_line_manifest_reads_back_field_by_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = concat!(
        "{\"dataset_id\":\"vcolors\",\"declared_annotations\":[\"color\",\"type\"]}\n",
        "{\"sample_id\":\"a\",\"image\":\"a.png\",\"feature_ref\":null,\"annotations\":{\"color\":\"Red\",\"type\":\"sedan\"}}\n",
        "{\"sample_id\":\"b\",\"image\":null,\"feature_ref\":\"f.txt\",\"annotations\":{\"color\":\"blue\",\"type\":\"suv\"}}\n",
    );
    let m = parse_manifest(&write(dir.path(), "v.jsonl", text), &schema()).unwrap();
    assert_eq!(m.dataset_id, "vcolors");
    assert_eq!(m.declared_annotations.iter().map(String::as_str).collect::<Vec<_>>(), ["color", "type"]);
    assert_eq!(m.samples.len(), 2);
    assert_eq!(m.samples[0].sample_id, "a");
    assert_eq!(m.samples[0].image.as_deref(), Some("a.png"));
    assert_eq!(m.samples[0].label("color"), Some("red"));
    assert_eq!(m.samples[0].label("type"), Some("sedan"));
    assert_eq!(m.samples[1].feature_ref.as_deref(), Some("f.txt"));
    assert_eq!(m.samples[1].label("type"), Some("suv"));
}

#[test]
fn malformed_line_and_bad_label_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "m.jsonl", "{\"sample_id\":\"a\",\"annotations\":{}}\nnot json\n");
    match parse_manifest(&p, &schema()) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected parse error, got {other:?}"),
    }
    let p = write(dir.path(), "b.jsonl", "{\"sample_id\":\"a\",\"annotations\":{\"color\":\"magenta\"}}\n");
    assert!(matches!(parse_manifest(&p, &schema()), Err(Error::Schema(_))));
}

#[test]
fn null_labels_survive_parsing() {
    let dir = tempfile::tempdir().unwrap();
    let text = "{\"dataset_id\":\"d\",\"declared_annotations\":[\"color\"]}\n{\"sample_id\":\"a\",\"annotations\":{\"color\":null}}\n";
    let m = parse_manifest(&write(dir.path(), "d.jsonl", text), &schema()).unwrap();
    assert_eq!(m.samples[0].annotations.get("color"), Some(&None));
}

fn vehicle_federation() -> Federation {
    let color_type = |id: &str, n: usize| {
        DatasetManifest::new(
            id,
            &["color", "type"],
            (0..n).map(|i| rec(&format!("s{i}"), &[("color", Some("red")), ("type", Some("suv"))])).collect(),
        )
    };
    let make_only = |id: &str| DatasetManifest::new(id, &["make"], vec![rec("s0", &[("make", Some("ford"))])]);
    Federation::new(
        schema(),
        vec![
            color_type("vcolors", 3),
            color_type("veri", 2),
            color_type("cvehicles", 2),
            make_only("compcars"),
            DatasetManifest::new("boxcars", &["type"], vec![rec("s0", &[("type", Some("sedan"))])]),
            DatasetManifest::new("stanford", &[], vec![rec("s0", &[])]),
        ],
    )
    .unwrap()
}

#[test]
fn color_partition_of_vehicle_federation() {
    let fed = vehicle_federation();
    let p = partition_by_annotation(&fed, "color").unwrap();
    let ids: Vec<&str> = p.annotated.iter().map(|d| d.dataset_id.as_str()).collect();
    assert_eq!(ids, ["vcolors", "veri", "cvehicles"]);
    assert_eq!(p.unannotated.len(), 3);
}

#[test]
fn partition_edge_cases() {
    let fed = Federation::new(schema(), vec![DatasetManifest::new("a", &["color"], vec![rec("x", &[("color", Some("red"))])])]).unwrap();
    assert!(partition_by_annotation(&fed, "color").unwrap().unannotated.is_empty());
    assert!(matches!(partition_by_annotation(&fed, "type"), Err(Error::NoSource(_))));
}

fn valid_fed(dir: &Path) -> Federation {
    write(dir, "f.txt", "dim=1\n");
    let mut a = DatasetManifest::new("a", &["color"], vec![rec("x", &[("color", Some("red"))]), rec("y", &[("color", Some("blue"))])]);
    let mut b = DatasetManifest::new("b", &[], vec![rec("z", &[])]);
    a.root = Some(dir.to_path_buf());
    b.root = Some(dir.to_path_buf());
    Federation::new(schema(), vec![a, b]).unwrap()
}

#[test]
fn validation_examples() {
    let dir = tempfile::tempdir().unwrap();
    let fed = valid_fed(dir.path());
    assert!(validate_federation(&fed).is_valid());

    let mut dup = fed.clone();
    dup.datasets[0].samples[1].sample_id = "x".into();
    dup.datasets[0].samples[1].annotations = BTreeMap::from([("color".into(), Some("red".into()))]);
    let r = validate_federation(&dup);
    assert_eq!(r.violations.len(), 1);
    assert_eq!(r.violations[0].kind, ViolationKind::DuplicateSampleId);
    assert!(r.violations[0].detail.contains("`x`"));

    let mut bad = fed.clone();
    bad.datasets[0].samples[0].annotations.insert("color".into(), Some("magenta".into()));
    let r = validate_federation(&bad);
    assert_eq!(r.violations.len(), 1);
    assert_eq!(r.violations[0].kind, ViolationKind::LabelOutsideSet);

    let mut missing = fed.clone();
    missing.datasets[1].samples[0].feature_ref = Some("nope.txt".into());
    assert_eq!(validate_federation(&missing).violations[0].kind, ViolationKind::MissingFile);
}

#[test]
fn validation_is_pure() {
    let dir = tempfile::tempdir().unwrap();
    let mut fed = valid_fed(dir.path());
    fed.datasets[0].samples[0].annotations.insert("color".into(), Some("magenta".into()));
    assert_eq!(validate_federation(&fed), validate_federation(&fed));
}

#[test]
fn duplicate_dataset_ids_rejected() {
    let d = DatasetManifest::new("a", &[], vec![]);
    assert!(Federation::new(schema(), vec![d.clone(), d]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_is_a_partition(mask in proptest::collection::vec(any::<bool>(), 1..8)) {
        let datasets: Vec<DatasetManifest> = mask
            .iter()
            .enumerate()
            .map(|(i, &has)| {
                let declared: &[&str] = if has { &["color"] } else { &[] };
                let label = has.then_some("red");
                DatasetManifest::new(&format!("d{i}"), declared, vec![rec("s", &[("color", label)])])
            })
            .collect();
        let fed = Federation::new(schema(), datasets).unwrap();
        match partition_by_annotation(&fed, "color") {
            Ok(p) => {
                prop_assert_eq!(p.annotated.len() + p.unannotated.len(), mask.len());
                prop_assert_eq!(p.annotated.len(), mask.iter().filter(|m| **m).count());
                for d in &p.annotated {
                    prop_assert!(!p.unannotated.iter().any(|u| u.dataset_id == d.dataset_id));
                }
            }
            Err(e) => {
                prop_assert!(mask.iter().all(|m| !m));
                prop_assert!(matches!(e, Error::NoSource(_)));
            }
        }
    }

    #[test]
    fn manifest_roundtrip(labels in proptest::collection::vec(proptest::option::of(prop_oneof![Just("red"), Just("blue"), Just("white")]), 0..20), seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let samples = labels.iter().enumerate().map(|(i, l)| rec(&format!("s{i:03}"), &[("color", *l)])).collect();
        let mut m = DatasetManifest::new("rt", &["color"], samples);
        m.split_seed = seed;
        let path = dir.path().join("rt.jsonl");
        m.write(&path).unwrap();
        let mut back = parse_manifest_unchecked(&path).unwrap();
        back.root = None;
        prop_assert_eq!(back, m);
    }
}
