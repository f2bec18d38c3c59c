use std::io::{Read, Write};

use super::{ExperimentError, RunResult, StepRecord};
use crate::acquisition::Strategy;

pub const CSV_HEADER: &str = "strategy,lambda,seed,step,n_labelled,accuracy,predictive_parity,\
eq_odds_gap,eq_opp_gap,nll,epistemic_gap,labelled_g0,labelled_g1,wall_ms";

fn percent(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

fn format_line(run: &RunResult, r: &StepRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{:.4},{:.4},{},{},{}",
        run.strategy,
        run.lambda,
        run.seed,
        r.step,
        r.n_labelled,
        percent(r.accuracy),
        percent(r.predictive_parity),
        percent(r.equalized_odds_gap),
        percent(r.equal_opportunity_gap),
        r.nll,
        r.epistemic_gap,
        r.labelled_per_group[0],
        r.labelled_per_group[1],
        r.wall_ms,
    )
}

/// Writes one line per step, rates in percent with two decimals and
/// `nll`/`epistemic_gap` in nats with four. Rows follow the order of
/// `runs`, then step.
pub fn write_csv<W: Write>(runs: &[RunResult], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for run in runs {
        for r in &run.records {
            writeln!(out, "{}", format_line(run, r))?;
        }
    }
    out.flush()
}

/// Parses a file written by [`write_csv`]. Values come back at written
/// precision; consecutive rows sharing `(strategy, lambda, seed)` form one
/// run.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<RunResult>, ExperimentError> {
    let bad = |m: String| ExperimentError::Format(m);
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers().map_err(|e| bad(e.to_string()))?;
    if header.iter().ne(CSV_HEADER.split(',')) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut runs: Vec<RunResult> = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |i: usize| -> Result<&str, ExperimentError> {
            rec.get(i)
                .ok_or_else(|| bad(format!("row {}: missing column {i}", line + 2)))
        };
        let num = |i: usize| -> Result<f64, ExperimentError> {
            field(i)?
                .parse::<f64>()
                .map_err(|_| bad(format!("row {}: bad number in column {i}", line + 2)))
        };
        let int = |i: usize| -> Result<u64, ExperimentError> {
            field(i)?
                .parse::<u64>()
                .map_err(|_| bad(format!("row {}: bad integer in column {i}", line + 2)))
        };
        let strategy: Strategy = field(0)?.parse().map_err(bad)?;
        let lambda = num(1)?;
        let seed = int(2)?;
        let record = StepRecord {
            step: int(3)? as usize,
            n_labelled: int(4)? as usize,
            accuracy: num(5)? / 100.0,
            predictive_parity: num(6)? / 100.0,
            equalized_odds_gap: num(7)? / 100.0,
            equal_opportunity_gap: num(8)? / 100.0,
            nll: num(9)?,
            epistemic_gap: num(10)?,
            labelled_per_group: [int(11)? as usize, int(12)? as usize],
            wall_ms: int(13)?,
        };
        match runs.last_mut() {
            Some(run) if run.strategy == strategy && run.lambda == lambda && run.seed == seed => {
                run.records.push(record)
            }
            _ => runs.push(RunResult {
                strategy,
                lambda,
                seed,
                records: vec![record],
                truncated: false,
            }),
        }
    }
    Ok(runs)
}
