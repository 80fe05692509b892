//! Leave-one-dataset-out evaluation: three rounds, each labeling the test
//! split of the dataset no member saw.

use kidforge::eval::synthetic::{generate_synthetic_federation, SyntheticSpec};
use kidforge::eval::{held_out_eval, score_decisions, LabelingConfig};

/// Returns the mean accuracy on assigned samples.
pub fn run_example() -> anyhow::Result<f64> {
    let synth = generate_synthetic_federation(&SyntheticSpec::features_default(5))?;
    let result = held_out_eval("color", &synth.federation, &synth.store, &LabelingConfig::default())?;
    for round in &result.rounds {
        println!("held out {}: members {:?}", round.held_out, round.trained_on().collect::<std::collections::BTreeSet<_>>());
    }
    let (pooled, coverage) = score_decisions(&result.decisions);
    println!("pooled accuracy {:.3}, coverage {coverage:.3}", pooled.unwrap_or(f64::NAN));
    print!("{}", result.report.to_markdown());
    let mean = result.report.aggregate("heldout").and_then(|a| a.accuracy).unwrap_or(0.0);
    Ok(mean)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example().map(|_| ())
}
