//! Group-fairness and performance metrics. Every rate is a fraction in
//! `[0, 1]`; undefined cells are errors rather than zeros.

use crate::acquisition::AcquisitionScores;
use crate::autodiff::LOG_CLAMP;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricError {
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("batch length mismatch: {0}")]
    Length(String),
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Predictions, probabilities, labels and groups of one evaluation set.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalBatch {
    predicted: Vec<usize>,
    /// Row-major `n × classes`.
    probabilities: Vec<f64>,
    classes: usize,
    labels: Vec<usize>,
    groups: Vec<usize>,
}

impl EvalBatch {
    pub fn new(
        probabilities: Vec<f64>,
        classes: usize,
        labels: Vec<usize>,
        groups: Vec<usize>,
    ) -> Result<Self, MetricError> {
        let n = labels.len();
        if classes == 0 || probabilities.len() != n * classes || groups.len() != n {
            return Err(MetricError::Length(format!(
                "{} probabilities ({classes} classes), {n} labels, {} groups",
                probabilities.len(),
                groups.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(MetricError::Length(format!(
                "label {bad} with {classes} classes"
            )));
        }
        let predicted = probabilities.chunks(classes).map(argmax).collect();
        Ok(Self {
            predicted,
            probabilities,
            classes,
            labels,
            groups,
        })
    }

    /// Builds a batch from hard binary predictions; probabilities are the
    /// matching one-hot rows.
    pub fn from_predictions(
        predicted: &[usize],
        labels: Vec<usize>,
        groups: Vec<usize>,
    ) -> Result<Self, MetricError> {
        let probabilities = predicted
            .iter()
            .flat_map(|&p| if p == 1 { [0.0, 1.0] } else { [1.0, 0.0] })
            .collect();
        Self::new(probabilities, 2, labels, groups)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn predicted(&self) -> &[usize] {
        &self.predicted
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    fn num_groups(&self) -> usize {
        self.groups.iter().map(|g| g + 1).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FairnessReport {
    pub accuracy: f64,
    pub predictive_parity: f64,
    pub equalized_odds_gap: f64,
    pub equal_opportunity_gap: f64,
    pub nll: f64,
    /// `None` for groups without samples.
    pub group_accuracy: Vec<Option<f64>>,
    pub group_counts: Vec<usize>,
}

pub fn accuracy(batch: &EvalBatch) -> Result<f64, MetricError> {
    if batch.is_empty() {
        return Err(MetricError::Undefined("accuracy of an empty batch".into()));
    }
    let correct = batch
        .predicted
        .iter()
        .zip(&batch.labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / batch.len() as f64)
}

/// Accuracy per group id; `None` when the group has no samples.
pub fn group_accuracies(batch: &EvalBatch) -> Vec<Option<f64>> {
    let g = batch.num_groups();
    let mut correct = vec![0usize; g];
    let mut total = vec![0usize; g];
    for i in 0..batch.len() {
        total[batch.groups[i]] += 1;
        correct[batch.groups[i]] += usize::from(batch.predicted[i] == batch.labels[i]);
    }
    correct
        .iter()
        .zip(&total)
        .map(|(&c, &t)| (t > 0).then(|| c as f64 / t as f64))
        .collect()
}

/// Max minus min per-group accuracy over the groups present.
pub fn predictive_parity(batch: &EvalBatch) -> Result<f64, MetricError> {
    let acc: Vec<f64> = group_accuracies(batch).into_iter().flatten().collect();
    if acc.is_empty() {
        return Err(MetricError::Undefined(
            "predictive parity with no groups".into(),
        ));
    }
    let max = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = acc.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

/// `P̂(ŷ=1 | y=γ, a=group)`, or `None` if that cell is empty.
fn positive_rate(batch: &EvalBatch, gamma: usize, group: usize) -> Option<f64> {
    let (mut pos, mut total) = (0usize, 0usize);
    for i in 0..batch.len() {
        if batch.labels[i] == gamma && batch.groups[i] == group {
            total += 1;
            pos += usize::from(batch.predicted[i] == 1);
        }
    }
    (total > 0).then(|| pos as f64 / total as f64)
}

fn rate_gap(batch: &EvalBatch, gamma: usize) -> Option<f64> {
    Some((positive_rate(batch, gamma, 0)? - positive_rate(batch, gamma, 1)?).abs())
}

/// `max_γ |P̂(ŷ=1|y=γ,a=0) − P̂(ŷ=1|y=γ,a=1)|` over the γ for which both
/// groups have samples.
pub fn equalized_odds_gap(batch: &EvalBatch) -> Result<f64, MetricError> {
    [0, 1]
        .into_iter()
        .filter_map(|gamma| rate_gap(batch, gamma))
        .reduce(f64::max)
        .ok_or_else(|| MetricError::Undefined("equalized odds: no label has both groups".into()))
}

/// `|P̂(ŷ=1|y=1,a=0) − P̂(ŷ=1|y=1,a=1)|`.
pub fn equal_opportunity_gap(batch: &EvalBatch) -> Result<f64, MetricError> {
    rate_gap(batch, 1)
        .ok_or_else(|| MetricError::Undefined("equal opportunity: a group has no positives".into()))
}

/// Mean `−ln p(y)` with the log clamp.
pub fn nll(batch: &EvalBatch) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let c = batch.classes;
    let total: f64 = batch
        .labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -batch.probabilities[i * c + y].max(LOG_CLAMP).ln())
        .sum();
    // −ln 1 is −0.0; report it as 0.
    (total / batch.len() as f64).max(0.0)
}

/// Absolute difference of mean mutual information between groups 0 and 1.
pub fn epistemic_gap(scores: &AcquisitionScores, groups: &[usize]) -> Result<f64, MetricError> {
    if scores.len() != groups.len() {
        return Err(MetricError::Length(format!(
            "{} scores for {} groups",
            scores.len(),
            groups.len()
        )));
    }
    let mut sum = [0.0f64; 2];
    let mut count = [0usize; 2];
    for (&mi, &g) in scores.mutual_information.iter().zip(groups) {
        if g < 2 {
            sum[g] += mi;
            count[g] += 1;
        }
    }
    if count.contains(&0) {
        return Err(MetricError::Undefined(
            "epistemic gap needs both groups".into(),
        ));
    }
    Ok((sum[0] / count[0] as f64 - sum[1] / count[1] as f64).abs())
}

pub fn evaluate(batch: &EvalBatch) -> Result<FairnessReport, MetricError> {
    let group_accuracy = group_accuracies(batch);
    let mut group_counts = vec![0; group_accuracy.len()];
    for &g in &batch.groups {
        group_counts[g] += 1;
    }
    Ok(FairnessReport {
        accuracy: accuracy(batch)?,
        predictive_parity: predictive_parity(batch)?,
        equalized_odds_gap: equalized_odds_gap(batch)?,
        equal_opportunity_gap: equal_opportunity_gap(batch)?,
        nll: nll(batch),
        group_accuracy,
        group_counts,
    })
}
