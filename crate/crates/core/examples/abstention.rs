//! Abstention on in-distribution test samples versus the same samples
//! displaced five spreads away from every training center.

use kidforge::eval::synthetic::SyntheticSpec;
use kidforge::eval::{abstention_run, AbstentionReport, LabelingConfig};

pub fn run_example(seeds: u64) -> anyhow::Result<AbstentionReport> {
    let seeds: Vec<u64> = (0..seeds).collect();
    let report = abstention_run(&SyntheticSpec::features_default(0), &seeds, &LabelingConfig::default(), 5.0)?;
    for s in &report.seeds {
        println!(
            "seed {}: abstain in {:.3} ood {:.3}; accuracy dynamic {:.3} off {:.3}",
            s.seed,
            s.in_abstention,
            s.ood_abstention,
            s.accuracy_dynamic.unwrap_or(f64::NAN),
            s.accuracy_off
        );
    }
    println!("mean abstention: in {:.3} ood {:.3}", report.mean_in_abstention, report.mean_ood_abstention);
    Ok(report)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    let seeds = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(3);
    run_example(seeds).map(|_| ())
}
