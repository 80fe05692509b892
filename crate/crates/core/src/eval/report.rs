use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::RoundScore;

/// Per (stage, held-out dataset) means over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub stage: String,
    pub dataset: String,
    /// `None` when no seed assigned any sample.
    pub accuracy: Option<f64>,
    pub accuracy_std: Option<f64>,
    pub coverage: f64,
    pub coverage_std: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageAggregate {
    pub stage: String,
    /// Unweighted mean of the per-dataset accuracies.
    pub accuracy: Option<f64>,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub annotation: String,
    pub datasets: Vec<String>,
    pub rows: Vec<EvalRow>,
    pub aggregates: Vec<StageAggregate>,
    pub seeds: Vec<u64>,
    pub config_hash: String,
}

fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "null".into())
}

impl EvalReport {
    pub fn from_scores(
        annotation: &str,
        stages: &[String],
        datasets: &[String],
        seeds: &[u64],
        scores: &[RoundScore],
        config_hash: String,
    ) -> Self {
        let mut grouped: BTreeMap<(&str, &str), Vec<&RoundScore>> = BTreeMap::new();
        for s in scores {
            grouped.entry((&s.stage, &s.held_out)).or_default().push(s);
        }
        let mut rows = Vec::new();
        let mut aggregates = Vec::new();
        for stage in stages {
            let mut accs = Vec::new();
            let mut covs = Vec::new();
            for dataset in datasets {
                let group = grouped.get(&(stage.as_str(), dataset.as_str())).cloned().unwrap_or_default();
                let acc: Vec<f64> = group.iter().filter_map(|s| s.accuracy()).collect();
                let cov: Vec<f64> = group.iter().map(|s| s.coverage()).collect();
                let a = mean_std(&acc);
                let (c, c_std) = mean_std(&cov).unwrap_or((0.0, 0.0));
                rows.push(EvalRow {
                    stage: stage.clone(),
                    dataset: dataset.clone(),
                    accuracy: a.map(|x| x.0),
                    accuracy_std: a.map(|x| x.1),
                    coverage: c,
                    coverage_std: c_std,
                    seeds: group.len(),
                });
                if let Some((m, _)) = a {
                    accs.push(m);
                }
                covs.push(c);
            }
            aggregates.push(StageAggregate {
                stage: stage.clone(),
                accuracy: mean_std(&accs).map(|x| x.0),
                coverage: mean_std(&covs).map(|x| x.0).unwrap_or(0.0),
            });
        }
        EvalReport {
            annotation: annotation.to_string(),
            datasets: datasets.to_vec(),
            rows,
            aggregates,
            seeds: seeds.to_vec(),
            config_hash,
        }
    }

    pub fn aggregate(&self, stage: &str) -> Option<&StageAggregate> {
        self.aggregates.iter().find(|a| a.stage == stage)
    }

    fn seed_list(&self) -> String {
        self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" ")
    }

    /// One row per (stage, dataset), then one `mean` row per stage.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# annotation={} config_hash={} seeds={}\n", self.annotation, self.config_hash, self.seed_list());
        out.push_str("stage,dataset,accuracy,accuracy_std,coverage,coverage_std,seeds\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.4},{:.4},{}",
                r.stage,
                r.dataset,
                fmt_opt(r.accuracy),
                fmt_opt(r.accuracy_std),
                r.coverage,
                r.coverage_std,
                r.seeds
            );
        }
        for a in &self.aggregates {
            let _ = writeln!(out, "{},mean,{},,{:.4},,{}", a.stage, fmt_opt(a.accuracy), a.coverage, self.seeds.len());
        }
        out
    }

    /// Stages as rows, held-out datasets as columns; cells are
    /// `accuracy (coverage)`.
    pub fn to_markdown(&self) -> String {
        let mut header = vec!["Strategy".to_string()];
        header.extend(self.datasets.iter().cloned());
        header.push("Mean".into());
        let mut table: Vec<Vec<String>> = vec![header];
        for a in &self.aggregates {
            let mut line = vec![a.stage.clone()];
            for d in &self.datasets {
                let r = self.rows.iter().find(|r| r.stage == a.stage && &r.dataset == d).expect("row per dataset");
                line.push(format!("{} ({:.2})", fmt_opt(r.accuracy), r.coverage));
            }
            line.push(format!("{} ({:.2})", fmt_opt(a.accuracy), a.coverage));
            table.push(line);
        }
        let widths: Vec<usize> =
            (0..table[0].len()).map(|c| table.iter().map(|row| row[c].len()).max().unwrap_or(0)).collect();
        let mut out = format!(
            "<!-- annotation={} config_hash={} seeds={} -->\n\n",
            self.annotation,
            self.config_hash,
            self.seed_list()
        );
        for (i, row) in table.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, w))| if c == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            let _ = writeln!(out, "| {} |", cells.join(" | "));
            if i == 0 {
                let rule: Vec<String> = widths
                    .iter()
                    .enumerate()
                    .map(|(c, w)| if c == 0 { "-".repeat(*w) } else { format!("{}:", "-".repeat(w - 1)) })
                    .collect();
                let _ = writeln!(out, "| {} |", rule.join(" | "));
            }
        }
        out.push_str("\nCells: accuracy on assigned samples (coverage).\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(stage: &str, seed: u64, d: &str, n: usize, a: usize, c: usize) -> RoundScore {
        RoundScore { stage: stage.into(), seed, held_out: d.into(), n_test: n, n_assigned: a, n_correct: c }
    }

    #[test]
    fn zero_coverage_is_null_not_zero() {
        let scores = vec![score("s", 0, "a", 10, 0, 0), score("s", 0, "b", 10, 10, 5)];
        let r = EvalReport::from_scores("k", &["s".into()], &["a".into(), "b".into()], &[0], &scores, "h".into());
        assert_eq!(r.rows[0].accuracy, None);
        assert_eq!(r.aggregates[0].accuracy, Some(0.5));
        assert!(r.to_csv().contains("s,a,null,"));
    }

    #[test]
    fn markdown_is_aligned() {
        let scores = vec![score("initial", 0, "a", 4, 4, 3), score("initial", 0, "bb", 4, 4, 4)];
        let r = EvalReport::from_scores("k", &["initial".into()], &["a".into(), "bb".into()], &[0], &scores, "h".into());
        let md = r.to_markdown();
        let lines: Vec<&str> = md.lines().filter(|l| l.starts_with('|')).collect();
        assert_eq!(lines.len(), 3);
        assert!(lines.iter().all(|l| l.len() == lines[0].len()));
    }
}
