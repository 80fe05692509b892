//! Confidence weights, f-score priors and the agreement threshold on a
//! worked example, then one weighted vote of a trained team.

use kidforge::eval::synthetic::{generate_synthetic_federation, SyntheticSpec};
use kidforge::features::FeatureVector;
use kidforge::schema::Split;
use kidforge::team::{agreement_alpha, build_team, confidence_weights, initial_weights, label_sample, DEFAULT_BETA};

/// Returns (weights, priors, threshold) of the worked example.
pub fn run_example() -> anyhow::Result<(Vec<f64>, Vec<f64>, f64)> {
    let x = FeatureVector::new(vec![0.0])?;
    let centers: Vec<FeatureVector> = [1.0, -1.0, 4.0].iter().map(|c| FeatureVector::new(vec![*c])).collect::<Result<_, _>>()?;
    let w = confidence_weights(&x, &centers.iter().collect::<Vec<_>>());
    let q = initial_weights(&[0.9, 0.8, 0.7], DEFAULT_BETA);
    let uniform = vec![1.0 / 3.0; 3];
    let threshold = 0.5 + agreement_alpha(&w, &uniform);
    println!("weights   {w:.4?}");
    println!("priors    {q:.4?}");
    println!("threshold {threshold:.4} with uniform priors");

    let synth = generate_synthetic_federation(&SyntheticSpec::features_default(3))?;
    let team = build_team("color", &synth.federation, &synth.store, &Default::default())?;
    let d = &synth.federation.datasets[0];
    let s = d.samples_in(Split::Test).next().expect("test split is non-empty");
    let vs = synth.store.get(&d.dataset_id, &s.sample_id)?;
    let dec = label_sample(&team, &s.sample_id, vs.original(), &vs.views)?;
    for v in &dec.member_votes {
        println!("  {} votes {} with weight {:.4}", v.member_id, v.label, v.weight);
    }
    println!("fraction {:.3} vs threshold {:.3}: {:?} (truth {})", dec.winning_fraction, dec.threshold.unwrap_or(0.5), dec.label(), s.label("color").unwrap_or("-"));
    Ok((w, q, threshold))
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example().map(|_| ())
}
