//! Train one team member on a synthetic dataset with a peer for early
//! stopping and fine-tuning, then score it on every validation split.

use kidforge::eval::synthetic::{generate_synthetic_federation, SyntheticSpec};
use kidforge::expert::{cross_val_fscore, member_predict, train_member, DatasetSplits, TrainConfig};

/// Returns (member f-score, accuracy on the home test split).
pub fn run_example() -> anyhow::Result<(f64, f64)> {
    let synth = generate_synthetic_federation(&SyntheticSpec::features_default(7))?;
    let fed = &synth.federation;
    let home = DatasetSplits::from_manifest(&fed.datasets[0], "color", &synth.store)?;
    let peer = DatasetSplits::from_manifest(&fed.datasets[1], "color", &synth.store)?;
    let member = train_member(&home, std::slice::from_ref(&peer), &TrainConfig { seed: 7, ..TrainConfig::default() })?;
    let fscore = cross_val_fscore(&member, &[&home.val, &peer.val])?;
    let mut correct = 0;
    for l in &home.test {
        let (label, _) = member_predict(&member, std::slice::from_ref(l.x))?;
        correct += usize::from(label == l.y);
    }
    let accuracy = correct as f64 / home.test.len() as f64;
    println!(
        "member {}: {} classifiers, {} home + {} fine-tune epochs, f-score {fscore:.3}, home test accuracy {accuracy:.3}",
        member.member_id,
        member.ensemble.len(),
        member.home_epochs_run,
        member.finetune_epochs_run
    );
    Ok((fscore, accuracy))
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example().map(|_| ())
}
