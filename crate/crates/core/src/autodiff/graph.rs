use rand::Rng;

use super::tensor::{gemm, Tensor};
use super::AutodiffError;

/// Probabilities are clamped below by this value before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Dropout {
        input: usize,
        mask: Vec<f64>,
    },
    GradReverse {
        input: usize,
        lambda: f64,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Dropout { .. } => "dropout",
            Op::GradReverse { .. } => "grad_reverse",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
}

/// Tape of tensor operations recorded in execution order.
///
/// Nodes are appended after their inputs, so reverse insertion order is a
/// valid reverse topological order and the graph cannot contain cycles.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a constant input; no gradient is accumulated for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// Adds a trainable input whose gradient is kept after `backward`.
    pub fn parameter(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            grad: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[usize]) -> Result<Var, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            grad: None,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` root with respect to `v`, if any
    /// gradient reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize), AutodiffError> {
        self.value(v).dims2().ok_or_else(|| AutodiffError::Rank {
            op,
            expected: 2,
            shape: self.value(v).shape().to_vec(),
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (n, k) = self.matrix_dims(a, "matmul")?;
        let (k2, m) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                left: vec![n, k],
                right: vec![k2, m],
            });
        }
        let out = gemm(
            self.value(a).data(),
            self.value(b).data(),
            n,
            k,
            m,
            false,
            false,
        );
        let value = Tensor::matrix(n, m, out)?;
        self.push(Op::MatMul(a.0, b.0), value, &[a.0, b.0])
    }

    /// Adds a length-`M` bias vector to every row of an `N×M` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (n, m) = self.matrix_dims(x, "add_bias")?;
        if self.value(bias).len() != m {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_bias",
                left: vec![n, m],
                right: self.value(bias).shape().to_vec(),
            });
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(m) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let value = Tensor::matrix(n, m, out)?;
        self.push(Op::AddBias(x.0, bias.0), value, &[x.0, bias.0])
    }

    /// Elementwise sum of two same-shaped tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "add",
                left: self.value(a).shape().to_vec(),
                right: self.value(b).shape().to_vec(),
            });
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), out)?;
        self.push(Op::Add(a.0, b.0), value, &[a.0, b.0])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, AutodiffError> {
        let src = self.value(x);
        let value = Tensor::new(
            src.shape().to_vec(),
            src.data().iter().map(|v| v * factor).collect(),
        )?;
        self.push(Op::Scale(x.0, factor), value, &[x.0])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let src = self.value(x);
        let value = Tensor::new(
            src.shape().to_vec(),
            src.data()
                .iter()
                .map(|&v| if v > 0.0 { v } else { 0.0 })
                .collect(),
        )?;
        self.push(Op::Relu(x.0), value, &[x.0])
    }

    /// Inverted dropout. In train mode every element is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 - rate)`; one
    /// uniform draw is consumed per element. Eval mode, or `rate == 0`, is
    /// the identity and draws nothing.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        mode: DropoutMode,
        rng: &mut R,
    ) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AutodiffError::InvalidRate(rate));
        }
        let src = self.value(x);
        let mask: Vec<f64> = if mode == DropoutMode::Eval || rate == 0.0 {
            vec![1.0; src.len()]
        } else {
            let keep = 1.0 / (1.0 - rate);
            (0..src.len())
                .map(|_| {
                    if rng.random::<f64>() < rate {
                        0.0
                    } else {
                        keep
                    }
                })
                .collect()
        };
        let value = Tensor::new(
            src.shape().to_vec(),
            src.data().iter().zip(&mask).map(|(v, m)| v * m).collect(),
        )?;
        self.push(Op::Dropout { input: x.0, mask }, value, &[x.0])
    }

    /// Identity forward; backward multiplies the upstream gradient by
    /// `-lambda`.
    pub fn grad_reverse(&mut self, x: Var, lambda: f64) -> Result<Var, AutodiffError> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(AutodiffError::InvalidLambda(lambda));
        }
        let value = self.value(x).clone();
        self.push(Op::GradReverse { input: x.0, lambda }, value, &[x.0])
    }

    /// Mean over rows of `-ln softmax(logits)[label]`, returned as a
    /// one-element tensor.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
    ) -> Result<Var, AutodiffError> {
        let (n, c) = self.matrix_dims(logits, "softmax_cross_entropy")?;
        if labels.len() != n {
            return Err(AutodiffError::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: vec![n, c],
                right: vec![labels.len()],
            });
        }
        if n == 0 {
            return Err(AutodiffError::Empty {
                op: "softmax_cross_entropy",
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(AutodiffError::LabelOutOfRange {
                label: bad,
                classes: c,
            });
        }
        let probs = softmax_rows(self.value(logits).data(), c);
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -probs[i * c + l].max(LOG_CLAMP).ln())
            .sum::<f64>()
            / n as f64;
        self.push(
            Op::SoftmaxCrossEntropy {
                logits: logits.0,
                labels: labels.to_vec(),
                probs,
            },
            Tensor::scalar(loss),
            &[logits.0],
        )
    }

    /// Backpropagates from a one-element root with seed gradient 1.
    pub fn backward(&mut self, root: Var) -> Result<(), AutodiffError> {
        if self.value(root).len() != 1 {
            return Err(AutodiffError::NotScalar {
                shape: self.value(root).shape().to_vec(),
            });
        }
        let seed = Tensor::filled(self.value(root).shape(), 1.0);
        self.backward_with(root, seed)
    }

    /// Backpropagates an arbitrary upstream gradient of the root's shape,
    /// i.e. computes gradients of `sum(root ⊙ seed)`.
    pub fn backward_with(&mut self, root: Var, seed: Tensor) -> Result<(), AutodiffError> {
        if seed.shape() != self.value(root).shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "backward",
                left: self.value(root).shape().to_vec(),
                right: seed.shape().to_vec(),
            });
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[root.0].grad = Some(seed);

        for idx in (0..=root.0).rev() {
            let Some(upstream) = self.nodes[idx].grad.take() else {
                continue;
            };
            if !upstream.is_finite() {
                return Err(AutodiffError::NonFiniteGradient {
                    op: self.nodes[idx].op.name(),
                });
            }
            if self.nodes[idx].requires_grad {
                self.propagate(idx, &upstream)?;
            }
            self.nodes[idx].grad = Some(upstream);
        }
        Ok(())
    }

    fn accumulate(&mut self, target: usize, delta: Vec<f64>) {
        let node = &mut self.nodes[target];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => {
                for (a, d) in g.data_mut().iter_mut().zip(delta) {
                    *a += d;
                }
            }
            None => {
                let shape = node.value.shape().to_vec();
                node.grad = Some(Tensor::new(shape, delta).expect("gradient matches value shape"));
            }
        }
    }

    fn needs(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    fn propagate(&mut self, idx: usize, up: &Tensor) -> Result<(), AutodiffError> {
        let g = up.data();
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (n, k) = self.nodes[a]
                    .value
                    .dims2()
                    .expect("rank checked in forward");
                let m = self.nodes[b]
                    .value
                    .dims2()
                    .expect("rank checked in forward")
                    .1;
                if self.needs(a) {
                    let da = gemm(g, self.nodes[b].value.data(), n, m, k, false, true);
                    self.accumulate(a, da);
                }
                if self.needs(b) {
                    let db = gemm(self.nodes[a].value.data(), g, k, n, m, true, false);
                    self.accumulate(b, db);
                }
            }
            &Op::AddBias(x, b) => {
                let m = self.nodes[b].value.len();
                if self.needs(b) {
                    let mut db = vec![0.0; m];
                    for row in g.chunks(m) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(b, db);
                }
                self.accumulate(x, g.to_vec());
            }
            &Op::Add(a, b) => {
                self.accumulate(a, g.to_vec());
                self.accumulate(b, g.to_vec());
            }
            &Op::Scale(x, factor) => {
                self.accumulate(x, g.iter().map(|v| v * factor).collect());
            }
            &Op::Relu(x) => {
                let dx = self.nodes[x]
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &u)| if v > 0.0 { u } else { 0.0 })
                    .collect();
                self.accumulate(x, dx);
            }
            Op::Dropout { input, mask } => {
                let input = *input;
                let dx = mask.iter().zip(g).map(|(m, u)| m * u).collect();
                self.accumulate(input, dx);
            }
            &Op::GradReverse { input, lambda } => {
                // λ = 0 blocks the path entirely.
                if lambda != 0.0 {
                    self.accumulate(input, g.iter().map(|u| -lambda * u).collect());
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let logits = *logits;
                let c = self.nodes[logits].value.dims2().expect("rank checked").1;
                let n = labels.len();
                let scale = g[0] / n as f64;
                let mut dx = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    // The clamp is flat below LOG_CLAMP, so the gradient there is zero.
                    if probs[i * c + l] < LOG_CLAMP {
                        dx[i * c..(i + 1) * c].iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    dx[i * c + l] -= 1.0;
                }
                dx.iter_mut().for_each(|v| *v *= scale);
                self.accumulate(logits, dx);
            }
        }
        self.nodes[idx].op = op;
        Ok(())
    }
}

/// Row-wise softmax of an `N×C` buffer with max subtraction.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut total = 0.0;
        for &v in row {
            let e = (v - max).exp();
            total += e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|e| *e /= total);
    }
    out
}
