//! Drive the command line end to end: write a synthetic federation, train
//! its teams, then evaluate them on held-out datasets.

use kidforge::cli::main_with_args;

/// Returns the exit status of each step.
pub fn run_example() -> anyhow::Result<Vec<i32>> {
    let dir = tempfile::tempdir()?;
    let root = dir.path();
    let p = |rel: &str| root.join(rel).to_string_lossy().into_owned();
    let data = p("data");
    let mut codes = vec![main_with_args(["kidforge", "synth", "--synthetic", "features", "--seed", "4", "--out", &data])];
    let fed_args = |cmd: &str, out: String| {
        let mut a: Vec<String> = vec!["kidforge".into(), cmd.into(), "--schema".into(), p("data/schema.json")];
        for d in 0..3 {
            a.push("--manifest".into());
            a.push(p(&format!("data/synth-{d}.jsonl")));
        }
        a.extend(["--seed".into(), "4".into(), "--out".into(), out]);
        a
    };
    codes.push(main_with_args(fed_args("validate", p("validate"))));
    codes.push(main_with_args(fed_args("train-team", p("teams"))));
    codes.push(main_with_args(fed_args("eval-heldout", p("heldout"))));
    println!("{}", std::fs::read_to_string(root.join("heldout/heldout.csv"))?);
    println!("exit codes {codes:?}");
    Ok(codes)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example().map(|_| ())
}
