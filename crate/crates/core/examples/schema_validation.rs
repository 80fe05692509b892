//! Load a schema and two manifests from disk, validate the federation and
//! partition it by annotation.

use std::collections::BTreeMap;

use kidforge::schema::{
    parse_manifest_unchecked, partition_by_annotation, validate_federation, AnnotationSpec, DatasetManifest, Federation,
    GlobalSchema, SampleRecord,
};

fn record(id: &str, color: Option<&str>) -> SampleRecord {
    SampleRecord {
        sample_id: id.into(),
        image: None,
        feature_ref: Some("embeddings.txt".into()),
        annotations: BTreeMap::from([("color".to_string(), color.map(str::to_string))]),
    }
}

/// Returns (violations on the clean federation, violations after a bad label).
pub fn run_example() -> anyhow::Result<(usize, usize)> {
    let dir = tempfile::tempdir()?;
    let schema = GlobalSchema::new(vec![AnnotationSpec::categorical("color", &["red", "blue"]), AnnotationSpec::cluster("make")])?;
    std::fs::write(dir.path().join("schema.json"), schema.to_json())?;
    std::fs::write(dir.path().join("embeddings.txt"), "dim=2\na 0.1 0.2\nb 0.3 0.1\nc 0.9 0.8\n")?;

    let labeled = DatasetManifest::new("veri", &["color"], vec![record("a", Some("Red")), record("b", Some("blue"))]);
    let bare = DatasetManifest::new("cars", &[], vec![record("c", None)]);
    labeled.write(&dir.path().join("veri.jsonl"))?;
    bare.write(&dir.path().join("cars.jsonl"))?;

    let schema = GlobalSchema::load(&dir.path().join("schema.json"))?;
    let datasets = ["veri", "cars"].iter().map(|d| parse_manifest_unchecked(&dir.path().join(format!("{d}.jsonl")))).collect::<Result<Vec<_>, _>>()?;
    let fed = Federation::new(schema, datasets)?;
    let clean = validate_federation(&fed).violations.len();
    let part = partition_by_annotation(&fed, "color")?;
    println!("color sources: {:?}", part.annotated.iter().map(|d| &d.dataset_id).collect::<Vec<_>>());
    println!("color gaps:    {:?}", part.unannotated.iter().map(|d| &d.dataset_id).collect::<Vec<_>>());

    let mut broken = fed.clone();
    broken.datasets[0].samples[0].annotations.insert("color".into(), Some("green".into()));
    let report = validate_federation(&broken);
    print!("{}", report.render());
    Ok((clean, report.violations.len()))
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example().map(|_| ())
}
