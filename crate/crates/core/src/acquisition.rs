//! Uncertainty scores over MC-Dropout predictions and query-batch
//! selection strategies.

use std::fmt;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::McPredictions;

/// Slack allowed on the `0 ≤ MI ≤ H ≤ ln C` ordering.
pub const SCORE_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Bald,
    Entropy,
    Uniform,
    BalancedUniform,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Bald => "bald",
            Strategy::Entropy => "entropy",
            Strategy::Uniform => "uniform",
            Strategy::BalancedUniform => "balanced_uniform",
        }
    }

    /// Whether selection needs MC-Dropout predictions over the pool.
    pub fn uses_predictions(self) -> bool {
        matches!(self, Strategy::Bald | Strategy::Entropy)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bald" => Ok(Strategy::Bald),
            "entropy" => Ok(Strategy::Entropy),
            "uniform" => Ok(Strategy::Uniform),
            "balanced_uniform" => Ok(Strategy::BalancedUniform),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

/// Per-sample uncertainty decomposition, all in nats.
#[derive(Clone, Debug, PartialEq)]
pub struct AcquisitionScores {
    /// Entropy of the pass-averaged prediction.
    pub total_entropy: Vec<f64>,
    /// Mean per-pass entropy.
    pub aleatoric: Vec<f64>,
    /// `total_entropy − aleatoric`, floored at zero.
    pub mutual_information: Vec<f64>,
}

impl AcquisitionScores {
    pub fn len(&self) -> usize {
        self.total_entropy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total_entropy.is_empty()
    }
}

/// Entropy in nats with `0·ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// BALD mutual information between the label and the dropout weights.
pub fn bald_scores(preds: &McPredictions) -> AcquisitionScores {
    let n = preds.samples();
    let c = preds.classes();
    let t = preds.passes();
    let mean = preds.mean();

    let mut aleatoric = vec![0.0; n];
    for pass in 0..t {
        for (slot, row) in aleatoric.iter_mut().zip(preds.pass(pass).chunks(c)) {
            *slot += entropy(row);
        }
    }
    aleatoric.iter_mut().for_each(|v| *v /= t as f64);

    let total_entropy: Vec<f64> = mean.chunks(c).map(entropy).collect();
    let mutual_information = (0..n)
        .map(|i| {
            // When every pass agrees the posterior is degenerate. Rounding
            // in the mean would otherwise leave a residue of order 1e-17.
            let first = preds.row(0, i);
            if (1..t).all(|pass| preds.row(pass, i) == first) {
                0.0
            } else {
                (total_entropy[i] - aleatoric[i]).max(0.0)
            }
        })
        .collect();
    AcquisitionScores {
        total_entropy,
        aleatoric,
        mutual_information,
    }
}

/// Predictive entropy of the pass-averaged prediction.
pub fn entropy_scores(preds: &McPredictions) -> Vec<f64> {
    preds.mean().chunks(preds.classes()).map(entropy).collect()
}

/// Pool indices chosen for labelling at one step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryBatch {
    pub indices: Vec<usize>,
    pub strategy: Strategy,
    pub step: usize,
}

impl QueryBatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    /// An empty batch means the pool is exhausted.
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// The `k` highest-scoring pool entries; `scores[i]` belongs to `pool[i]`.
/// Ties go to the lowest pool index, NaN scores rank last.
pub fn select_topk(
    scores: &[f64],
    k: usize,
    pool: &[usize],
    strategy: Strategy,
    step: usize,
) -> QueryBatch {
    assert_eq!(scores.len(), pool.len(), "one score per pool entry");
    let key = |s: f64| if s.is_nan() { f64::NEG_INFINITY } else { s };
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&i, &j| {
        key(scores[j])
            .total_cmp(&key(scores[i]))
            .then(pool[i].cmp(&pool[j]))
    });
    QueryBatch {
        indices: order.into_iter().take(k).map(|i| pool[i]).collect(),
        strategy,
        step,
    }
}

/// `k` pool indices drawn uniformly without replacement.
pub fn uniform_select<R: Rng + ?Sized>(
    pool: &[usize],
    k: usize,
    rng: &mut R,
    step: usize,
) -> QueryBatch {
    let k = k.min(pool.len());
    let indices = index::sample(rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    QueryBatch {
        indices,
        strategy: Strategy::Uniform,
        step,
    }
}

/// Splits `k` across groups as evenly as supply allows, then samples
/// uniformly inside each group. `groups` is indexed by dataset row.
///
/// Quotas start at `k / G`; the `k mod G` leftover slots go to groups in a
/// random order. Any group short of its quota hands the deficit to the
/// groups that still have supply, split the same way.
pub fn balanced_uniform_select<R: Rng + ?Sized>(
    pool: &[usize],
    k: usize,
    groups: &[usize],
    rng: &mut R,
    step: usize,
) -> QueryBatch {
    let num_groups = pool.iter().map(|&i| groups[i] + 1).max().unwrap_or(0);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_groups];
    for &i in pool {
        members[groups[i]].push(i);
    }

    let mut quota = vec![0usize; num_groups];
    let mut remaining = k.min(pool.len());
    // Every round either satisfies the request or exhausts at least one group.
    while remaining > 0 {
        let mut open: Vec<usize> = (0..num_groups)
            .filter(|&g| quota[g] < members[g].len())
            .collect();
        let share = remaining / open.len();
        let extra = remaining % open.len();
        open.shuffle(rng);
        for (rank, &g) in open.iter().enumerate() {
            let want = share + usize::from(rank < extra);
            let take = want.min(members[g].len() - quota[g]);
            quota[g] += take;
            remaining -= take;
        }
    }

    let mut indices = Vec::with_capacity(k);
    for (g, list) in members.iter().enumerate() {
        indices.extend(
            index::sample(rng, list.len(), quota[g])
                .into_iter()
                .map(|i| list[i]),
        );
    }
    QueryBatch {
        indices,
        strategy: Strategy::BalancedUniform,
        step,
    }
}
