//! The seven-stage mitigation ladder on the synthetic feature benchmark.
//! Pass a seed count to average over more runs.

use kidforge::eval::synthetic::SyntheticSpec;
use kidforge::eval::{synthetic_ablation, AblationStage, EvalReport, LabelingConfig};

pub fn run_example(seeds: u64) -> anyhow::Result<EvalReport> {
    let seeds: Vec<u64> = (0..seeds).collect();
    let result = synthetic_ablation(&SyntheticSpec::features_default(0), &AblationStage::LADDER, &seeds, &LabelingConfig::default())?;
    print!("{}", result.report.to_markdown());
    Ok(result.report)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    let seeds = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(2);
    run_example(seeds).map(|_| ())
}
