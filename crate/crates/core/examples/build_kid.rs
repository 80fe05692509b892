//! Hide the labels of one synthetic dataset, fill them with a team trained
//! on the others, and round-trip the resulting KID through JSON lines.

use std::collections::BTreeMap;

use kidforge::eval::synthetic::{generate_synthetic_federation, SyntheticSpec};
use kidforge::features::CODEC_ID;
use kidforge::kid::{build_kid, kid_stats, BuildMeta, KidManifest, LabelSource};
use kidforge::team::build_team;

/// Returns (coverage of `color`, accuracy of the inferred labels).
pub fn run_example() -> anyhow::Result<(f64, f64)> {
    let synth = generate_synthetic_federation(&SyntheticSpec::features_default(11))?;
    let fed = synth.hide_labels("synth-2");
    let team = build_team("color", &fed, &synth.store, &Default::default())?;
    let teams = BTreeMap::from([("color".to_string(), team)]);
    let meta = BuildMeta { seeds: vec![11], config_hash: "example".into(), codec: CODEC_ID.into() };
    let kid = build_kid(&fed, &teams, None, &synth.store, meta)?;

    let (mut inferred, mut correct) = (0usize, 0usize);
    for r in kid.records.iter().filter(|r| r.source_dataset == "synth-2") {
        let a = &r.annotations["color"];
        if a.source == LabelSource::Inferred {
            inferred += 1;
            let local = r.sample_id.trim_start_matches("synth-2/");
            correct += usize::from(a.value.as_deref() == Some(synth.truth[&("synth-2".to_string(), local.to_string())].as_str()));
        }
    }
    let stats = kid_stats(&kid);
    let coverage = stats.coverage["color"];
    let reparsed = KidManifest::from_jsonl(&kid.to_jsonl(), &kid.schema)?;
    assert_eq!(reparsed.to_jsonl(), kid.to_jsonl());
    println!("{} records, color coverage {coverage:.3}, inferred accuracy {:.3}", stats.total, correct as f64 / inferred as f64);
    Ok((coverage, correct as f64 / inferred as f64))
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example().map(|_| ())
}
