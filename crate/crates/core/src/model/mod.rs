//! Two-headed MLP classifier with MC-Dropout inference and an adversarial
//! group head behind a gradient-reversal layer.
//!
//! The network is `z = h(x)` (ReLU hidden layers, each followed by dropout),
//! a task head `f_y(z)` and, when enabled, a group head `f_a(rev(z))` where
//! `rev` is the identity forward and scales gradients by `-λ` backward.

mod predictions;
mod snapshot;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_rows, AutodiffError, DropoutMode, Graph, ParameterSet, Tensor, Var};

pub use predictions::{McPredictions, ROW_SUM_TOLERANCE};
pub use snapshot::{read_parameters, write_parameters, SnapshotError, SNAPSHOT_MAGIC};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("training diverged in epoch {epoch}: {source}")]
    Training {
        epoch: usize,
        #[source]
        source: AutodiffError,
    },
    #[error("need at least 2 labelled samples to train, got {0}")]
    TooFewSamples(usize),
    #[error("prediction row (pass {pass}, sample {sample}) is not a probability vector")]
    NotAProbability { pass: usize, sample: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
}

const INFERENCE_BLOCK: usize = 256;

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

fn default_adversary_hidden() -> Vec<usize> {
    vec![64]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "ModelConfig::default_input_dim")]
    pub input_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "ModelConfig::default_two")]
    pub num_classes: usize,
    #[serde(default = "ModelConfig::default_two")]
    pub num_groups: usize,
    #[serde(default = "ModelConfig::default_dropout")]
    pub dropout_rate: f64,
    /// Gradient-reversal weight; 0 disables the adversarial head unless
    /// `group_head` asks for it.
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "ModelConfig::default_lr")]
    pub lr: f64,
    #[serde(default = "ModelConfig::default_momentum")]
    pub momentum: f64,
    #[serde(default = "ModelConfig::default_batch")]
    pub batch_size: usize,
    #[serde(default = "ModelConfig::default_epochs")]
    pub epochs: usize,
    /// Build the group head even when `lambda == 0`.
    #[serde(default)]
    pub group_head: bool,
    /// ReLU hidden widths of the group head, without dropout. Empty gives a
    /// linear adversary, which the encoder can overpower at `lambda = 1`.
    #[serde(default = "default_adversary_hidden")]
    pub adversary_hidden_dims: Vec<usize>,
}

impl ModelConfig {
    fn default_input_dim() -> usize {
        8
    }
    fn default_two() -> usize {
        2
    }
    fn default_dropout() -> f64 {
        0.5
    }
    fn default_lr() -> f64 {
        0.01
    }
    fn default_momentum() -> f64 {
        0.9
    }
    fn default_batch() -> usize {
        32
    }
    fn default_epochs() -> usize {
        20
    }

    pub fn with_input_dim(input_dim: usize) -> Self {
        Self {
            input_dim,
            ..Self::default()
        }
    }

    pub fn has_group_head(&self) -> bool {
        self.lambda > 0.0 || self.group_head
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.input_dim == 0 {
            return fail("input_dim must be at least 1".into());
        }
        if self.hidden_dims.contains(&0) || self.adversary_hidden_dims.contains(&0) {
            return fail("hidden layer widths must be positive".into());
        }
        if self.num_classes < 2 || self.num_groups < 2 {
            return fail("num_classes and num_groups must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda {} must be finite and >= 0", self.lambda));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr {} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return fail("batch_size and epochs must be at least 1".into());
        }
        Ok(())
    }

    /// Closed-form number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        let mut width = self.input_dim;
        let mut total = 0;
        for &h in &self.hidden_dims {
            total += width * h + h;
            width = h;
        }
        total += width * self.num_classes + self.num_classes;
        if self.has_group_head() {
            for &h in &self.adversary_hidden_dims {
                total += width * h + h;
                width = h;
            }
            total += width * self.num_groups + self.num_groups;
        }
        total
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: Self::default_input_dim(),
            hidden_dims: default_hidden(),
            num_classes: 2,
            num_groups: 2,
            dropout_rate: Self::default_dropout(),
            lambda: 0.0,
            lr: Self::default_lr(),
            momentum: Self::default_momentum(),
            batch_size: Self::default_batch(),
            epochs: Self::default_epochs(),
            group_head: false,
            adversary_hidden_dims: default_adversary_hidden(),
        }
    }
}

/// Indices of a dense layer's weight and bias inside the parameter set.
#[derive(Clone, Copy, Debug)]
struct Dense {
    weight: usize,
    bias: usize,
}

#[derive(Clone, Debug)]
struct GroupHead {
    hidden: Vec<Dense>,
    out: Dense,
}

/// Borrowed view of a labelled training set.
#[derive(Clone, Copy, Debug)]
pub struct TrainingData<'a> {
    /// `n × input_dim` features.
    pub features: &'a Tensor,
    pub labels: &'a [usize],
    pub groups: &'a [usize],
}

/// Loss values of one minibatch. `group` is the unweighted adversary loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchLoss {
    pub task: f64,
    pub group: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub task: f64,
    pub group: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLoss>,
}

struct Forward {
    z: Var,
    task_logits: Var,
    params: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParameterSet,
    encoder: Vec<Dense>,
    task: Dense,
    group: Option<GroupHead>,
    initial: ParameterSet,
}

fn uniform_tensor<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

impl Model {
    /// Builds the network. Hidden weights use `U(±√(6/fan_in))`, head
    /// weights `U(±1/√fan_in)`, biases start at zero. Parameters are drawn
    /// encoder first, then task head, then group head, so the group head
    /// never changes the other initial values.
    pub fn build<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = ParameterSet::new();
        let push_dense = |params: &mut ParameterSet,
                          name: &str,
                          fan_in: usize,
                          fan_out: usize,
                          bound: f64,
                          rng: &mut R| {
            let weight = params.push(
                format!("{name}.weight"),
                uniform_tensor(fan_in, fan_out, bound, rng),
            );
            let bias = params.push(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
            Dense { weight, bias }
        };

        let mut encoder = Vec::with_capacity(config.hidden_dims.len());
        let mut width = config.input_dim;
        for (i, &h) in config.hidden_dims.iter().enumerate() {
            let bound = (6.0 / width as f64).sqrt();
            encoder.push(push_dense(
                &mut params,
                &format!("encoder.{i}"),
                width,
                h,
                bound,
                rng,
            ));
            width = h;
        }
        let head_bound = 1.0 / (width as f64).sqrt();
        let task = push_dense(
            &mut params,
            "task",
            width,
            config.num_classes,
            head_bound,
            rng,
        );
        let group = config.has_group_head().then(|| {
            let mut hidden = Vec::with_capacity(config.adversary_hidden_dims.len());
            let mut width = width;
            for (i, &h) in config.adversary_hidden_dims.iter().enumerate() {
                let bound = (6.0 / width as f64).sqrt();
                hidden.push(push_dense(
                    &mut params,
                    &format!("group.{i}"),
                    width,
                    h,
                    bound,
                    rng,
                ));
                width = h;
            }
            let bound = 1.0 / (width as f64).sqrt();
            let out = push_dense(&mut params, "group", width, config.num_groups, bound, rng);
            GroupHead { hidden, out }
        });

        let initial = params.clone();
        Ok(Self {
            config,
            params,
            encoder,
            task,
            group,
            initial,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameters(&self) -> &ParameterSet {
        &self.params
    }

    /// Mutable access for gradient checks and snapshot loading. Layout
    /// (names, order, shapes) must not be changed.
    pub fn parameters_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn initial_snapshot(&self) -> &ParameterSet {
        &self.initial
    }

    pub fn has_group_head(&self) -> bool {
        self.group.is_some()
    }

    /// Restores every parameter bit-exactly to its construction value and
    /// clears momentum and gradients.
    pub fn reset_weights(&mut self) {
        self.params
            .restore_from(&self.initial)
            .expect("snapshot shares the live layout");
    }

    pub fn matches_initial(&self) -> bool {
        self.params.values_bit_equal(&self.initial)
    }

    fn forward<R: Rng + ?Sized>(
        &self,
        graph: &mut Graph,
        features: Tensor,
        mode: DropoutMode,
        trainable: bool,
        rng: &mut R,
    ) -> Result<Forward, ModelError> {
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    graph.parameter(p.value.clone())
                } else {
                    graph.constant(p.value.clone())
                }
            })
            .collect();
        let mut h = graph.constant(features);
        for layer in &self.encoder {
            h = graph.matmul(h, params[layer.weight])?;
            h = graph.add_bias(h, params[layer.bias])?;
            h = graph.relu(h)?;
            h = graph.dropout(h, self.config.dropout_rate, mode, rng)?;
        }
        let logits = graph.matmul(h, params[self.task.weight])?;
        let task_logits = graph.add_bias(logits, params[self.task.bias])?;
        Ok(Forward {
            z: h,
            task_logits,
            params,
        })
    }

    fn check_input(&self, features: &Tensor) -> Result<usize, ModelError> {
        match features.dims2() {
            Some((n, d)) if d == self.config.input_dim => Ok(n),
            _ => Err(ModelError::Config(format!(
                "expected n×{} features, got shape {:?}",
                self.config.input_dim,
                features.shape()
            ))),
        }
    }

    /// Forward pass of a minibatch in train mode, returning the graph, the
    /// losses, and the node to backpropagate from.
    fn batch_graph<R: Rng + ?Sized>(
        &self,
        features: Tensor,
        labels: &[usize],
        groups: &[usize],
        rng: &mut R,
    ) -> Result<(Graph, Forward, Var, BatchLoss), ModelError> {
        let mut graph = Graph::new();
        let fwd = self.forward(&mut graph, features, DropoutMode::Train, true, rng)?;
        let task_loss = graph.softmax_cross_entropy(fwd.task_logits, labels)?;
        let task = graph.value(task_loss).data()[0];
        let (root, group) = match &self.group {
            Some(head) => {
                let mut h = graph.grad_reverse(fwd.z, self.config.lambda)?;
                for layer in &head.hidden {
                    h = graph.matmul(h, fwd.params[layer.weight])?;
                    h = graph.add_bias(h, fwd.params[layer.bias])?;
                    h = graph.relu(h)?;
                }
                let logits = graph.matmul(h, fwd.params[head.out.weight])?;
                let logits = graph.add_bias(logits, fwd.params[head.out.bias])?;
                let group_loss = graph.softmax_cross_entropy(logits, groups)?;
                let value = graph.value(group_loss).data()[0];
                (graph.add(task_loss, group_loss)?, Some(value))
            }
            None => (task_loss, None),
        };
        Ok((graph, fwd, root, BatchLoss { task, group }))
    }

    /// Minibatch losses without touching gradients. Dropout masks are drawn
    /// from `rng` exactly as [`Model::batch_gradients`] draws them.
    pub fn batch_losses<R: Rng + ?Sized>(
        &self,
        features: &Tensor,
        labels: &[usize],
        groups: &[usize],
        rng: &mut R,
    ) -> Result<BatchLoss, ModelError> {
        self.check_input(features)?;
        let (_, _, _, loss) = self.batch_graph(features.clone(), labels, groups, rng)?;
        Ok(loss)
    }

    /// Overwrites every parameter gradient with the gradient of one
    /// minibatch.
    ///
    /// The task head receives `∂l_y`, the group head `∂l_a`, and the encoder
    /// `∂l_y − λ·∂l_a`: the adversary fits the group labels while the
    /// encoder is pushed to remove group information from `z`.
    pub fn batch_gradients<R: Rng + ?Sized>(
        &mut self,
        features: &Tensor,
        labels: &[usize],
        groups: &[usize],
        rng: &mut R,
    ) -> Result<BatchLoss, ModelError> {
        self.check_input(features)?;
        let (mut graph, fwd, root, loss) =
            self.batch_graph(features.clone(), labels, groups, rng)?;
        graph.backward(root)?;
        self.params.zero_grad();
        for (idx, var) in fwd.params.iter().enumerate() {
            if let Some(g) = graph.grad(*var) {
                self.params.accumulate_grad(idx, g)?;
            }
        }
        Ok(loss)
    }

    /// Runs `epochs` epochs of shuffled minibatch SGD with momentum on the
    /// labelled data. `shuffle` orders the batches, `dropout` draws masks.
    pub fn train<R1, R2>(
        &mut self,
        data: TrainingData<'_>,
        shuffle: &mut R1,
        dropout: &mut R2,
    ) -> Result<TrainingLog, ModelError>
    where
        R1: Rng + ?Sized,
        R2: Rng + ?Sized,
    {
        let n = self.check_input(data.features)?;
        if n < 2 {
            return Err(ModelError::TooFewSamples(n));
        }
        if data.labels.len() != n || data.groups.len() != n {
            return Err(ModelError::Config(format!(
                "{n} feature rows but {} labels and {} groups",
                data.labels.len(),
                data.groups.len()
            )));
        }

        let mut order: Vec<usize> = (0..n).collect();
        let mut log = TrainingLog::default();
        for epoch in 0..self.config.epochs {
            order.shuffle(shuffle);
            let mut task_sum = 0.0;
            let mut group_sum = 0.0;
            for batch in order.chunks(self.config.batch_size) {
                let x = data.features.select_rows(batch);
                let y: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
                let a: Vec<usize> = batch.iter().map(|&i| data.groups[i]).collect();
                let loss = self
                    .batch_gradients(&x, &y, &a, dropout)
                    .map_err(|e| match e {
                        ModelError::Autodiff(source) => ModelError::Training { epoch, source },
                        other => other,
                    })?;
                self.params
                    .sgd_step(self.config.lr, self.config.momentum)
                    .map_err(|source| ModelError::Training { epoch, source })?;
                let w = batch.len() as f64;
                task_sum += loss.task * w;
                group_sum += loss.group.unwrap_or(0.0) * w;
            }
            log.epochs.push(EpochLoss {
                task: task_sum / n as f64,
                group: self.group.as_ref().map(|_| group_sum / n as f64),
            });
        }
        Ok(log)
    }

    fn task_probabilities<R: Rng + ?Sized>(
        &self,
        features: &Tensor,
        mode: DropoutMode,
        rng: &mut R,
    ) -> Result<Vec<f64>, ModelError> {
        // Row blocks keep every intermediate small enough to be served from
        // the allocator's free lists instead of fresh mappings.
        let n = features.dims2().map_or(0, |(n, _)| n);
        let mut out = Vec::with_capacity(n * self.config.num_classes);
        let mut rows: Vec<usize> = Vec::with_capacity(INFERENCE_BLOCK);
        for start in (0..n).step_by(INFERENCE_BLOCK) {
            rows.clear();
            rows.extend(start..(start + INFERENCE_BLOCK).min(n));
            let mut graph = Graph::new();
            let fwd = self.forward(&mut graph, features.select_rows(&rows), mode, false, rng)?;
            out.extend(softmax_rows(
                graph.value(fwd.task_logits).data(),
                self.config.num_classes,
            ));
        }
        Ok(out)
    }

    /// `passes` stochastic forward passes of the task head with dropout
    /// active and fresh masks per pass.
    pub fn mc_predict<R: Rng + ?Sized>(
        &self,
        features: &Tensor,
        passes: usize,
        rng: &mut R,
    ) -> Result<McPredictions, ModelError> {
        let n = self.check_input(features)?;
        if passes == 0 {
            return Err(ModelError::Config("need at least one MC pass".into()));
        }
        let c = self.config.num_classes;
        let mut probs = Vec::with_capacity(passes * n * c);
        for _ in 0..passes {
            probs.extend(self.task_probabilities(features, DropoutMode::Train, rng)?);
        }
        McPredictions::new(passes, n, c, probs)
    }

    /// Deterministic task-head probabilities with dropout disabled, `n × C`.
    pub fn predict_eval(&self, features: &Tensor) -> Result<Vec<f64>, ModelError> {
        self.check_input(features)?;
        // Eval-mode dropout draws nothing, so any generator works here.
        let mut unused = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        self.task_probabilities(features, DropoutMode::Eval, &mut unused)
    }

    pub fn save_parameters(&self, path: &Path) -> Result<(), ModelError> {
        let file = File::create(path).map_err(SnapshotError::Io)?;
        write_parameters(&self.params, BufWriter::new(file))?;
        Ok(())
    }

    /// Replaces the live parameter values with those stored at `path`. The
    /// stored layout must match this model's.
    pub fn load_parameters(&mut self, path: &Path) -> Result<(), ModelError> {
        let file = File::open(path).map_err(SnapshotError::Io)?;
        let loaded = read_parameters(BufReader::new(file))?;
        self.params.restore_from(&loaded)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn two_clusters(n: usize, seed: u64) -> (Tensor, Vec<usize>, Vec<usize>) {
        let mut r = rng(seed);
        let mut data = Vec::with_capacity(n * 2);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = i % 2;
            let centre = if y == 0 { -2.0 } else { 2.0 };
            data.push(centre + r.random_range(-1.0..1.0));
            data.push(r.random_range(-1.0..1.0));
            labels.push(y);
        }
        let groups = (0..n).map(|i| (i / 2) % 2).collect();
        (Tensor::matrix(n, 2, data).unwrap(), labels, groups)
    }

    #[test]
    fn build_is_deterministic() {
        let cfg = ModelConfig::with_input_dim(5);
        let a = Model::build(cfg.clone(), &mut rng(3)).unwrap();
        let b = Model::build(cfg, &mut rng(3)).unwrap();
        assert!(a.parameters().values_bit_equal(b.parameters()));
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            ModelConfig {
                input_dim: 0,
                ..ModelConfig::default()
            },
            ModelConfig {
                dropout_rate: 1.0,
                ..ModelConfig::default()
            },
            ModelConfig {
                lambda: -0.1,
                ..ModelConfig::default()
            },
            ModelConfig {
                epochs: 0,
                ..ModelConfig::default()
            },
            ModelConfig {
                hidden_dims: vec![4, 0],
                ..ModelConfig::default()
            },
        ] {
            assert!(matches!(
                Model::build(cfg, &mut rng(0)),
                Err(ModelError::Config(_))
            ));
        }
    }

    #[test]
    fn empty_hidden_dims_is_logistic_regression() {
        let cfg = ModelConfig {
            input_dim: 3,
            hidden_dims: vec![],
            ..ModelConfig::default()
        };
        let model = Model::build(cfg, &mut rng(0)).unwrap();
        let names: Vec<&str> = model.parameters().iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["task.weight", "task.bias"]);
        assert_eq!(model.parameters().get(0).value.shape(), &[3, 2]);
    }

    #[test]
    fn parameter_count_matches_layer_sum() {
        for (hidden, lambda) in [(vec![64, 64], 0.0), (vec![7], 1.0), (vec![], 0.5)] {
            let cfg = ModelConfig {
                input_dim: 8,
                hidden_dims: hidden.clone(),
                lambda,
                ..ModelConfig::default()
            };
            // (8·64+64) + (64·64+64) + (64·2+2) etc., written out per layer.
            let mut widths = vec![8];
            widths.extend(&hidden);
            let mut expected: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
            let last = *widths.last().unwrap();
            expected += last * 2 + 2;
            if lambda > 0.0 {
                // adversary: last → 64 → 2
                expected += last * 64 + 64 + 64 * 2 + 2;
            }
            let model = Model::build(cfg.clone(), &mut rng(1)).unwrap();
            assert_eq!(model.parameters().scalar_count(), expected);
            assert_eq!(cfg.parameter_count(), expected);
        }
    }

    #[test]
    fn trains_separable_clusters() {
        let (x, y, a) = two_clusters(200, 11);
        let cfg = ModelConfig::with_input_dim(2);
        let mut model = Model::build(cfg, &mut rng(0)).unwrap();
        let log = model
            .train(
                TrainingData {
                    features: &x,
                    labels: &y,
                    groups: &a,
                },
                &mut rng(1),
                &mut rng(2),
            )
            .unwrap();
        assert_eq!(log.epochs.len(), 20);
        assert!(log.epochs.iter().all(|e| e.group.is_none()));
        let probs = model.predict_eval(&x).unwrap();
        let correct = probs
            .chunks(2)
            .zip(&y)
            .filter(|(p, &label)| usize::from(p[1] > p[0]) == label)
            .count();
        assert!(
            correct as f64 / 200.0 >= 0.95,
            "accuracy {}",
            correct as f64 / 200.0
        );
    }

    #[test]
    fn one_step_matches_manual_sgd() {
        let (x, y, a) = two_clusters(8, 5);
        let cfg = ModelConfig {
            input_dim: 2,
            hidden_dims: vec![4],
            epochs: 1,
            batch_size: 8,
            lr: 0.05,
            ..ModelConfig::default()
        };
        let mut trained = Model::build(cfg.clone(), &mut rng(9)).unwrap();
        let mut manual = trained.clone();

        // A full batch visits every row, so the shuffle only permutes rows;
        // replay the same permutation for the manual step.
        let mut order: Vec<usize> = (0..8).collect();
        order.shuffle(&mut rng(1));
        let xb = x.select_rows(&order);
        let yb: Vec<usize> = order.iter().map(|&i| y[i]).collect();
        let ab: Vec<usize> = order.iter().map(|&i| a[i]).collect();
        manual.batch_gradients(&xb, &yb, &ab, &mut rng(2)).unwrap();
        let expected: Vec<Vec<f64>> = manual
            .parameters()
            .iter()
            .map(|p| {
                p.value
                    .data()
                    .iter()
                    .zip(p.grad.data())
                    .map(|(w, g)| w - 0.05 * g)
                    .collect()
            })
            .collect();

        trained
            .train(
                TrainingData {
                    features: &x,
                    labels: &y,
                    groups: &a,
                },
                &mut rng(1),
                &mut rng(2),
            )
            .unwrap();
        for (p, want) in trained.parameters().iter().zip(&expected) {
            assert_eq!(p.value.data(), want.as_slice(), "{}", p.name);
        }
    }

    #[test]
    fn zero_lambda_group_head_does_not_touch_encoder() {
        let (x, y, a) = two_clusters(16, 4);
        let base = ModelConfig::with_input_dim(2);
        let with_head = ModelConfig {
            group_head: true,
            ..base.clone()
        };
        let mut plain = Model::build(base, &mut rng(6)).unwrap();
        let mut adv = Model::build(with_head, &mut rng(6)).unwrap();
        assert!(adv.has_group_head() && !plain.has_group_head());

        plain.batch_gradients(&x, &y, &a, &mut rng(8)).unwrap();
        let loss = adv.batch_gradients(&x, &y, &a, &mut rng(8)).unwrap();
        assert!(loss.group.is_some());
        for p in plain.parameters().iter() {
            let q = adv.parameters().by_name(&p.name).unwrap();
            assert_eq!(p.grad.data(), q.grad.data(), "{}", p.name);
        }
        // the adversary itself still learns
        let g = adv.parameters().by_name("group.weight").unwrap();
        assert!(g.grad.data().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn too_few_samples() {
        let x = Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap();
        let mut model = Model::build(ModelConfig::with_input_dim(2), &mut rng(0)).unwrap();
        let err = model
            .train(
                TrainingData {
                    features: &x,
                    labels: &[0],
                    groups: &[0],
                },
                &mut rng(1),
                &mut rng(2),
            )
            .unwrap_err();
        assert!(matches!(err, ModelError::TooFewSamples(1)));
    }

    #[test]
    fn degenerate_single_class_set_trains() {
        let x = Tensor::matrix(3, 2, vec![0.0, 1.0, 1.0, 0.0, 0.5, 0.5]).unwrap();
        let mut model = Model::build(ModelConfig::with_input_dim(2), &mut rng(0)).unwrap();
        model
            .train(
                TrainingData {
                    features: &x,
                    labels: &[1, 1, 1],
                    groups: &[0, 0, 1],
                },
                &mut rng(1),
                &mut rng(2),
            )
            .unwrap();
    }

    #[test]
    fn divergence_reports_epoch() {
        let (x, y, a) = two_clusters(16, 2);
        let cfg = ModelConfig {
            input_dim: 2,
            lr: 1e200,
            momentum: 0.0,
            ..ModelConfig::default()
        };
        let mut model = Model::build(cfg, &mut rng(0)).unwrap();
        let err = model
            .train(
                TrainingData {
                    features: &x,
                    labels: &y,
                    groups: &a,
                },
                &mut rng(1),
                &mut rng(2),
            )
            .unwrap_err();
        assert!(matches!(err, ModelError::Training { .. }), "{err}");
    }

    #[test]
    fn mc_predict_stochasticity() {
        let (x, _, _) = two_clusters(10, 1);
        let det = Model::build(
            ModelConfig {
                input_dim: 2,
                dropout_rate: 0.0,
                ..ModelConfig::default()
            },
            &mut rng(0),
        )
        .unwrap();
        let preds = det.mc_predict(&x, 5, &mut rng(1)).unwrap();
        for t in 1..5 {
            assert_eq!(preds.pass(t), preds.pass(0));
        }
        assert_eq!(det.predict_eval(&x).unwrap(), preds.pass(0));

        let noisy = Model::build(ModelConfig::with_input_dim(2), &mut rng(0)).unwrap();
        let preds = noisy.mc_predict(&x, 20, &mut rng(1)).unwrap();
        assert!((1..20).any(|t| preds.pass(t) != preds.pass(0)));

        let single = noisy.mc_predict(&x, 1, &mut rng(1)).unwrap();
        assert_eq!(single.pass(0), preds.pass(0));
    }

    #[test]
    fn predict_eval_is_normalized_and_repeatable() {
        let (x, _, _) = two_clusters(10, 1);
        let model = Model::build(ModelConfig::with_input_dim(2), &mut rng(0)).unwrap();
        let p = model.predict_eval(&x).unwrap();
        for row in p.chunks(2) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let q = model.predict_eval(&x).unwrap();
        assert!(p.iter().zip(&q).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn reset_restores_snapshot() {
        let (x, y, a) = two_clusters(40, 3);
        let mut model = Model::build(ModelConfig::with_input_dim(2), &mut rng(0)).unwrap();
        model.reset_weights();
        assert!(model.matches_initial());

        let data = TrainingData {
            features: &x,
            labels: &y,
            groups: &a,
        };
        let first = model.train(data, &mut rng(1), &mut rng(2)).unwrap();
        let after_first = model.parameters().clone();
        assert!(!model.matches_initial());
        model.reset_weights();
        assert!(model.matches_initial());
        assert!(model
            .parameters()
            .iter()
            .all(|p| p.velocity.data().iter().all(|v| *v == 0.0)));
        model.reset_weights();
        assert!(model.matches_initial());

        let second = model.train(data, &mut rng(1), &mut rng(2)).unwrap();
        assert_eq!(first, second);
        assert!(model.parameters().values_bit_equal(&after_first));
    }

    #[test]
    fn parameter_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        let (x, y, a) = two_clusters(20, 3);
        let mut model = Model::build(ModelConfig::with_input_dim(2), &mut rng(0)).unwrap();
        model
            .train(
                TrainingData {
                    features: &x,
                    labels: &y,
                    groups: &a,
                },
                &mut rng(1),
                &mut rng(2),
            )
            .unwrap();
        model.save_parameters(&path).unwrap();
        let trained = model.parameters().clone();
        model.reset_weights();
        model.load_parameters(&path).unwrap();
        assert!(model.parameters().values_bit_equal(&trained));

        let mut other = Model::build(ModelConfig::with_input_dim(3), &mut rng(0)).unwrap();
        assert!(other.load_parameters(&path).is_err());
    }
}
