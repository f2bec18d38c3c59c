use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;

use super::{run_single, ExperimentConfig, ExperimentError, RunResult, StepRecord};
use crate::acquisition::Strategy;

/// Mean and sample standard deviation; `std` is `None` for one value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: Option<f64>,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() >= 2).then(|| {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1.0)).sqrt()
        });
        Some(Self { mean, std })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellFailure {
    pub seed: u64,
    pub message: String,
}

/// Final-step metrics of one `(strategy, λ)` configuration across seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub strategy: Strategy,
    pub lambda: f64,
    pub seeds: usize,
    pub failures: Vec<CellFailure>,
    pub n_labelled: Option<MeanStd>,
    pub accuracy: Option<MeanStd>,
    pub predictive_parity: Option<MeanStd>,
    pub equalized_odds_gap: Option<MeanStd>,
    pub equal_opportunity_gap: Option<MeanStd>,
    pub nll: Option<MeanStd>,
    pub epistemic_gap: Option<MeanStd>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    /// Successful runs in `(config, seed)` order.
    pub runs: Vec<RunResult>,
    pub summary: Vec<SummaryRow>,
}

impl SuiteResult {
    pub fn has_failures(&self) -> bool {
        self.summary.iter().any(|r| !r.failures.is_empty())
    }
}

fn summary_row(
    strategy: Strategy,
    lambda: f64,
    runs: &[&RunResult],
    failures: Vec<CellFailure>,
) -> SummaryRow {
    let finals: Vec<&StepRecord> = runs.iter().filter_map(|r| r.records.last()).collect();
    let stat =
        |f: fn(&StepRecord) -> f64| MeanStd::of(&finals.iter().map(|r| f(r)).collect::<Vec<_>>());
    SummaryRow {
        strategy,
        lambda,
        seeds: finals.len(),
        failures,
        n_labelled: stat(|r| r.n_labelled as f64),
        accuracy: stat(|r| r.accuracy),
        predictive_parity: stat(|r| r.predictive_parity),
        equalized_odds_gap: stat(|r| r.equalized_odds_gap),
        equal_opportunity_gap: stat(|r| r.equal_opportunity_gap),
        nll: stat(|r| r.nll),
        epistemic_gap: stat(|r| r.epistemic_gap),
    }
}

/// Groups runs by `(strategy, λ)` in order of first appearance and
/// aggregates their final steps.
pub fn summarize(runs: &[RunResult]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Strategy, f64)> = Vec::new();
    for r in runs {
        if !keys.contains(&(r.strategy, r.lambda)) {
            keys.push((r.strategy, r.lambda));
        }
    }
    keys.into_iter()
        .map(|(s, l)| {
            let members: Vec<&RunResult> = runs
                .iter()
                .filter(|r| r.strategy == s && r.lambda == l)
                .collect();
            summary_row(s, l, &members, Vec::new())
        })
        .collect()
}

/// Runs every `(config, seed)` cell, in parallel, and aggregates each
/// config's final steps. A failing cell is recorded in its summary row and
/// does not stop the others. Configuration errors abort before any run.
pub fn run_suite(configs: &[ExperimentConfig]) -> Result<SuiteResult, ExperimentError> {
    if configs.is_empty() {
        return Err(ExperimentError::Config(
            "suite needs at least one config".into(),
        ));
    }
    let mut seen = Vec::new();
    for c in configs {
        c.validate()?;
        let key = (c.strategy, c.model.lambda);
        if seen.contains(&key) {
            return Err(ExperimentError::Config(format!(
                "duplicate (strategy, lambda) = ({}, {}) in one suite",
                key.0, key.1
            )));
        }
        seen.push(key);
    }

    let cells: Vec<(usize, u64)> = configs
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let outcomes: Vec<Result<RunResult, ExperimentError>> = cells
        .par_iter()
        .map(|&(i, seed)| run_single(&configs[i], seed))
        .collect();

    let mut runs = Vec::new();
    let mut summary = Vec::new();
    let mut outcomes = outcomes.into_iter();
    for config in configs {
        let mut ok = Vec::new();
        let mut failures = Vec::new();
        for &seed in &config.seeds {
            match outcomes.next().expect("one outcome per cell") {
                Ok(run) => ok.push(run),
                Err(e) => failures.push(CellFailure {
                    seed,
                    message: e.to_string(),
                }),
            }
        }
        let refs: Vec<&RunResult> = ok.iter().collect();
        summary.push(summary_row(
            config.strategy,
            config.model.lambda,
            &refs,
            failures,
        ));
        runs.extend(ok);
    }
    Ok(SuiteResult { runs, summary })
}

fn cell(v: Option<MeanStd>, scale: f64, decimals: usize) -> String {
    match v {
        None => "failed".into(),
        Some(MeanStd { mean, std: None }) => format!("{:.*}", decimals, mean * scale),
        Some(MeanStd { mean, std: Some(s) }) => {
            format!("{:.*} ± {:.*}", decimals, mean * scale, decimals, s * scale)
        }
    }
}

/// Plain-text table of final-step means (± std), rates in percent.
pub fn render_table(rows: &[SummaryRow]) -> String {
    let headers = [
        "strategy",
        "lambda",
        "seeds",
        "pred. parity",
        "accuracy %",
        "eq. odds",
        "eq. opp.",
        "nll",
        "epistemic gap",
    ];
    let body: Vec<[String; 9]> = rows
        .iter()
        .map(|r| {
            [
                r.strategy.to_string(),
                r.lambda.to_string(),
                if r.failures.is_empty() {
                    r.seeds.to_string()
                } else {
                    format!("{} ({} failed)", r.seeds, r.failures.len())
                },
                cell(r.predictive_parity, 100.0, 2),
                cell(r.accuracy, 100.0, 2),
                cell(r.equalized_odds_gap, 100.0, 2),
                cell(r.equal_opportunity_gap, 100.0, 2),
                cell(r.nll, 1.0, 4),
                cell(r.epistemic_gap, 1.0, 4),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &mut headers.iter().copied());
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    line(&mut out, &mut rule.iter().map(String::as_str));
    for row in &body {
        line(&mut out, &mut row.iter().map(String::as_str));
    }
    out
}

/// `summary.csv`: one row per configuration; rates in percent, empty std
/// cells for single-seed rows, empty metric cells when every seed failed.
pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], mut out: W) -> std::io::Result<()> {
    let metrics = [
        "accuracy",
        "predictive_parity",
        "eq_odds_gap",
        "eq_opp_gap",
        "nll",
        "epistemic_gap",
    ];
    let mut header = vec![
        "strategy".to_string(),
        "lambda".into(),
        "seeds".into(),
        "failed".into(),
    ];
    for m in metrics {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    writeln!(out, "{}", header.join(","))?;
    for r in rows {
        let mut cells = vec![
            r.strategy.to_string(),
            r.lambda.to_string(),
            r.seeds.to_string(),
            r.failures.len().to_string(),
        ];
        let stats = [
            (r.accuracy, 100.0, 2),
            (r.predictive_parity, 100.0, 2),
            (r.equalized_odds_gap, 100.0, 2),
            (r.equal_opportunity_gap, 100.0, 2),
            (r.nll, 1.0, 4),
            (r.epistemic_gap, 1.0, 4),
        ];
        for (stat, scale, dec) in stats {
            match stat {
                Some(s) => {
                    cells.push(format!("{:.*}", dec, s.mean * scale));
                    cells.push(
                        s.std
                            .map_or(String::new(), |v| format!("{:.*}", dec, v * scale)),
                    );
                }
                None => cells.extend([String::new(), String::new()]),
            }
        }
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()
}
