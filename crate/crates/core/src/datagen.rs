//! Synthetic binary classification data with a binary group attribute.
//!
//! Axis 0 carries the class (means at `±class_separation / 2`), axis 1 the
//! group (shifted by `group_signal · (2a − 1)`); every axis has unit
//! Gaussian noise. The two bias kinds differ only in how `a` is assigned:
//!
//! * `minority_group`: `a ~ Bernoulli(minority_fraction)`, independent of
//!   the class.
//! * `sensitive_attribute`: `a = y` with probability `ρ`, else `1 − y`.
//!
//! Observed labels are then flipped with probability `label_noise`.
//!
//! A generated [`Dataset`] holds `n_train` biased pool rows followed by
//! `n_test` held-out rows drawn with exactly `n_test / 4` rows per observed
//! `(y, a)` cell, so carving out the balanced test set never drains the
//! scarce cells of the pool.

use std::io::{Read, Write};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

const MAX_ATTEMPTS: u64 = 10;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid dataset spec: {0}")]
    Spec(String),
    #[error("generation realised a single class or group in {0} attempts")]
    Degenerate(u64),
    #[error("cell (y={y}, a={a}) has {available} rows, need {needed}")]
    InsufficientCell {
        y: usize,
        a: usize,
        available: usize,
        needed: usize,
    },
    #[error("{available} rows left for the initial labelled set, need {needed}")]
    InsufficientPool { available: usize, needed: usize },
    #[error("test size {0} is not a multiple of 4")]
    TestSize(usize),
    #[error("index {0} is not in the unlabelled pool")]
    NotUnlabelled(usize),
    #[error("dataset CSV: {0}")]
    Csv(String),
}

impl From<csv::Error> for DataError {
    fn from(e: csv::Error) -> Self {
        DataError::Csv(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasKind {
    MinorityGroup,
    SensitiveAttribute,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub bias_kind: BiasKind,
    #[serde(default = "DatasetSpec::default_n_train")]
    pub n_train: usize,
    #[serde(default = "DatasetSpec::default_n_test")]
    pub n_test: usize,
    #[serde(default = "DatasetSpec::default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "DatasetSpec::default_two")]
    pub class_separation: f64,
    #[serde(default = "DatasetSpec::default_label_noise")]
    pub label_noise: f64,
    #[serde(default = "DatasetSpec::default_minority_fraction")]
    pub minority_fraction: f64,
    #[serde(default = "DatasetSpec::default_correlation")]
    pub correlation_strength: f64,
    #[serde(default = "DatasetSpec::default_two")]
    pub group_signal: f64,
    #[serde(default)]
    pub seed: u64,
}

impl DatasetSpec {
    fn default_n_train() -> usize {
        4000
    }
    fn default_n_test() -> usize {
        1000
    }
    fn default_feature_dim() -> usize {
        8
    }
    fn default_two() -> f64 {
        2.0
    }
    fn default_label_noise() -> f64 {
        0.02
    }
    fn default_minority_fraction() -> f64 {
        0.1
    }
    fn default_correlation() -> f64 {
        0.9
    }

    pub fn new(bias_kind: BiasKind) -> Self {
        Self {
            bias_kind,
            n_train: Self::default_n_train(),
            n_test: Self::default_n_test(),
            feature_dim: Self::default_feature_dim(),
            class_separation: 2.0,
            label_noise: Self::default_label_noise(),
            minority_fraction: Self::default_minority_fraction(),
            correlation_strength: Self::default_correlation(),
            group_signal: 2.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |m: String| Err(DataError::Spec(m));
        if self.feature_dim < 2 {
            return fail("feature_dim must be at least 2 (class and group axes)".into());
        }
        if self.n_train < 2 {
            return fail("n_train must be at least 2".into());
        }
        if !self.n_test.is_multiple_of(4) {
            return Err(DataError::TestSize(self.n_test));
        }
        if !(self.minority_fraction > 0.0 && self.minority_fraction <= 0.5) {
            return fail(format!(
                "minority_fraction {} outside (0, 0.5]",
                self.minority_fraction
            ));
        }
        if !(0.5..1.0).contains(&self.correlation_strength) {
            return fail(format!(
                "correlation_strength {} outside [0.5, 1)",
                self.correlation_strength
            ));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return fail(format!("label_noise {} outside [0, 0.5)", self.label_noise));
        }
        if !self.class_separation.is_finite() || !self.group_signal.is_finite() {
            return fail("class_separation and group_signal must be finite".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    feature_dim: usize,
    /// Row-major `n × feature_dim`.
    features: Vec<f64>,
    labels: Vec<usize>,
    groups: Vec<usize>,
    /// Rows `pool_len..` are the balanced held-out reserve.
    pool_len: usize,
    spec: Option<DatasetSpec>,
}

impl Dataset {
    /// Builds a dataset from raw rows; every row belongs to the pool.
    pub fn from_parts(
        feature_dim: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
        groups: Vec<usize>,
    ) -> Result<Self, DataError> {
        let n = labels.len();
        if feature_dim == 0 || features.len() != n * feature_dim || groups.len() != n {
            return Err(DataError::Spec(format!(
                "{} features for {n} rows of width {feature_dim} with {} groups",
                features.len(),
                groups.len()
            )));
        }
        if labels.iter().chain(&groups).any(|&v| v > 1) {
            return Err(DataError::Spec("labels and groups must be 0 or 1".into()));
        }
        Ok(Self {
            feature_dim,
            features,
            labels,
            groups,
            pool_len: n,
            spec: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    /// Number of biased pool rows; the rest is the held-out reserve.
    pub fn pool_len(&self) -> usize {
        self.pool_len
    }

    pub fn spec(&self) -> Option<&DatasetSpec> {
        self.spec.as_ref()
    }

    /// Feature rows for the given indices, as an `n × d` tensor.
    pub fn features_of(&self, rows: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(rows.len() * self.feature_dim);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Tensor::matrix(rows.len(), self.feature_dim, data).expect("rows have feature_dim values")
    }

    pub fn labels_of(&self, rows: &[usize]) -> Vec<usize> {
        rows.iter().map(|&r| self.labels[r]).collect()
    }

    pub fn groups_of(&self, rows: &[usize]) -> Vec<usize> {
        rows.iter().map(|&r| self.groups[r]).collect()
    }

    /// Writes `f0,…,f{d-1},y,a` rows in dataset order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.feature_dim).map(|j| format!("f{j}")).collect();
        header.push("y".into());
        header.push("a".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.labels[i].to_string());
            rec.push(self.groups[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| DataError::Csv(e.to_string()))?;
        Ok(())
    }

    /// Reads a CSV written by [`Dataset::write_csv`]. The pool/reserve
    /// boundary is not stored, so every row is treated as pool.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, DataError> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let d = header
            .len()
            .checked_sub(2)
            .filter(|&d| d > 0)
            .ok_or_else(|| DataError::Csv("header needs at least one feature plus y,a".into()))?;
        let expected: Vec<String> = (0..d)
            .map(|j| format!("f{j}"))
            .chain(["y".to_string(), "a".to_string()])
            .collect();
        if header.iter().ne(expected.iter().map(String::as_str)) {
            return Err(DataError::Csv(format!("unexpected header {header:?}")));
        }
        let (mut features, mut labels, mut groups) = (Vec::new(), Vec::new(), Vec::new());
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| DataError::Csv(format!("row {}: bad {what}", line + 1));
            for j in 0..d {
                features.push(rec[j].parse::<f64>().map_err(|_| bad("feature"))?);
            }
            labels.push(rec[d].parse::<usize>().map_err(|_| bad("label"))?);
            groups.push(rec[d + 1].parse::<usize>().map_err(|_| bad("group"))?);
        }
        Self::from_parts(d, features, labels, groups)
    }
}

fn sample_row<R: Rng + ?Sized>(
    spec: &DatasetSpec,
    class: usize,
    group: usize,
    rng: &mut R,
    out: &mut Vec<f64>,
) {
    let sign = |v: usize| if v == 1 { 1.0 } else { -1.0 };
    for j in 0..spec.feature_dim {
        let noise: f64 = rng.sample(StandardNormal);
        let shift = match j {
            0 => sign(class) * spec.class_separation / 2.0,
            1 => sign(group) * spec.group_signal,
            _ => 0.0,
        };
        out.push(shift + noise);
    }
}

fn flip<R: Rng + ?Sized>(class: usize, p: f64, rng: &mut R) -> usize {
    if rng.random::<f64>() < p {
        1 - class
    } else {
        class
    }
}

fn generate_attempt(spec: &DatasetSpec, rng: &mut ChaCha8Rng) -> Dataset {
    let n = spec.n_train + spec.n_test;
    let mut features = Vec::with_capacity(n * spec.feature_dim);
    let mut labels = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);

    for _ in 0..spec.n_train {
        let class = usize::from(rng.random::<f64>() < 0.5);
        let group = match spec.bias_kind {
            BiasKind::MinorityGroup => usize::from(rng.random::<f64>() < spec.minority_fraction),
            BiasKind::SensitiveAttribute => flip(class, 1.0 - spec.correlation_strength, rng),
        };
        sample_row(spec, class, group, rng, &mut features);
        labels.push(flip(class, spec.label_noise, rng));
        groups.push(group);
    }

    // Held-out rows: group independent of class and uniform. Conditional on
    // the observed label, the latent class differs with prob. label_noise.
    let per_cell = spec.n_test / 4;
    let mut cells: Vec<(usize, usize)> = (0..4)
        .flat_map(|c| std::iter::repeat_n((c / 2, c % 2), per_cell))
        .collect();
    cells.shuffle(rng);
    for (observed, group) in cells {
        let class = flip(observed, spec.label_noise, rng);
        sample_row(spec, class, group, rng, &mut features);
        labels.push(observed);
        groups.push(group);
    }

    Dataset {
        feature_dim: spec.feature_dim,
        features,
        labels,
        groups,
        pool_len: spec.n_train,
        spec: Some(spec.clone()),
    }
}

/// Generates a dataset from `spec`. If the pool realises only one class or
/// one group, generation is retried on a fresh sub-stream, up to 10 times.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset, DataError> {
    spec.validate()?;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(attempt);
        let data = generate_attempt(spec, &mut rng);
        let pool = 0..data.pool_len;
        let has_both = |v: &[usize]| v[pool.clone()].contains(&0) && v[pool.clone()].contains(&1);
        if has_both(&data.labels) && has_both(&data.groups) {
            return Ok(data);
        }
    }
    Err(DataError::Degenerate(MAX_ATTEMPTS))
}

/// Partition of a dataset into labelled, unlabelled and test rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolState {
    /// Labelled rows in the order they were added.
    labelled: Vec<usize>,
    /// Unlabelled rows, ascending.
    unlabelled: Vec<usize>,
    /// Test rows, ascending.
    test: Vec<usize>,
}

impl PoolState {
    pub fn labelled(&self) -> &[usize] {
        &self.labelled
    }

    pub fn unlabelled(&self) -> &[usize] {
        &self.unlabelled
    }

    pub fn test(&self) -> &[usize] {
        &self.test
    }

    /// `|D| + |U|`, constant across labelling steps.
    pub fn pool_size(&self) -> usize {
        self.labelled.len() + self.unlabelled.len()
    }

    /// Moves `indices` from the unlabelled pool to the labelled set. Fails
    /// without changes if any index is not currently unlabelled.
    pub fn label(&mut self, indices: &[usize]) -> Result<(), DataError> {
        let mut positions = Vec::with_capacity(indices.len());
        for &i in indices {
            match self.unlabelled.binary_search(&i) {
                Ok(pos) if !positions.contains(&pos) => positions.push(pos),
                _ => return Err(DataError::NotUnlabelled(i)),
            }
        }
        self.labelled.extend_from_slice(indices);
        positions.sort_unstable();
        for pos in positions.into_iter().rev() {
            self.unlabelled.remove(pos);
        }
        Ok(())
    }

    /// Labelled counts per group.
    pub fn labelled_per_group(&self, groups: &[usize], num_groups: usize) -> Vec<usize> {
        let mut counts = vec![0; num_groups];
        for &i in &self.labelled {
            counts[groups[i]] += 1;
        }
        counts
    }
}

/// Draws a test set with exactly `n_test / 4` rows per `(y, a)` cell, then
/// an initial labelled set uniformly from the remaining pool rows; the rest
/// is unlabelled. Test rows come from the held-out reserve when the dataset
/// has one, otherwise from all rows. Reserve rows not used for testing join
/// the unlabelled pool.
pub fn split_pools<R: Rng + ?Sized>(
    dataset: &Dataset,
    n_test: usize,
    initial_labelled: usize,
    rng: &mut R,
) -> Result<PoolState, DataError> {
    if !n_test.is_multiple_of(4) {
        return Err(DataError::TestSize(n_test));
    }
    let per_cell = n_test / 4;
    let candidates = if dataset.pool_len < dataset.len() {
        dataset.pool_len..dataset.len()
    } else {
        0..dataset.len()
    };

    let mut in_test = vec![false; dataset.len()];
    for y in 0..2 {
        for a in 0..2 {
            let cell: Vec<usize> = candidates
                .clone()
                .filter(|&i| dataset.labels[i] == y && dataset.groups[i] == a)
                .collect();
            if cell.len() < per_cell {
                return Err(DataError::InsufficientCell {
                    y,
                    a,
                    available: cell.len(),
                    needed: per_cell,
                });
            }
            for k in index::sample(rng, cell.len(), per_cell) {
                in_test[cell[k]] = true;
            }
        }
    }

    let rest: Vec<usize> = (0..dataset.len()).filter(|&i| !in_test[i]).collect();
    if rest.len() < initial_labelled {
        return Err(DataError::InsufficientPool {
            available: rest.len(),
            needed: initial_labelled,
        });
    }
    let mut is_labelled = vec![false; dataset.len()];
    let labelled: Vec<usize> = index::sample(rng, rest.len(), initial_labelled)
        .into_iter()
        .map(|k| rest[k])
        .inspect(|&i| is_labelled[i] = true)
        .collect();
    let unlabelled = rest.into_iter().filter(|&i| !is_labelled[i]).collect();
    let test = (0..dataset.len()).filter(|&i| in_test[i]).collect();
    Ok(PoolState {
        labelled,
        unlabelled,
        test,
    })
}
