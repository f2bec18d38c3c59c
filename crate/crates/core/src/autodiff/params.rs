use super::{AutodiffError, Tensor};

/// A named trainable tensor with its gradient slot and momentum buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub velocity: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        let velocity = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
            velocity,
        }
    }
}

/// Ordered collection of parameters. Order is the order of insertion and is
/// what the snapshot format and optimizer iterate over.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    params: Vec<Parameter>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.params.push(Parameter::new(name, value));
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn get(&self, index: usize) -> &Parameter {
        &self.params[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Parameter {
        &mut self.params[index]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Total number of scalar weights.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Adds `delta` into the gradient slot of parameter `index`.
    pub fn accumulate_grad(&mut self, index: usize, delta: &Tensor) -> Result<(), AutodiffError> {
        let p = &mut self.params[index];
        if p.grad.shape() != delta.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "accumulate_grad",
                left: p.grad.shape().to_vec(),
                right: delta.shape().to_vec(),
            });
        }
        for (g, d) in p.grad.data_mut().iter_mut().zip(delta.data()) {
            *g += d;
        }
        Ok(())
    }

    /// Heavy-ball SGD: `v ← momentum·v + grad; p ← p − lr·v`, then clears
    /// the gradients. Nothing is modified if any gradient is non-finite.
    pub fn sgd_step(&mut self, lr: f64, momentum: f64) -> Result<(), AutodiffError> {
        if let Some(bad) = self.params.iter().find(|p| !p.grad.is_finite()) {
            return Err(AutodiffError::NonFiniteParameterGradient {
                name: bad.name.clone(),
            });
        }
        for p in &mut self.params {
            let grads = p.grad.data();
            for ((v, w), g) in p
                .velocity
                .data_mut()
                .iter_mut()
                .zip(p.value.data_mut().iter_mut())
                .zip(grads)
            {
                *v = momentum * *v + g;
                *w -= lr * *v;
            }
            p.grad.fill(0.0);
        }
        Ok(())
    }

    /// Copies values from `other` (matched by position and name) and clears
    /// gradients and momentum.
    pub fn restore_from(&mut self, other: &ParameterSet) -> Result<(), AutodiffError> {
        if self.params.len() != other.params.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "restore",
                left: vec![self.params.len()],
                right: vec![other.params.len()],
            });
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name {
                return Err(AutodiffError::UnknownParameter(src.name.clone()));
            }
            if dst.value.shape() != src.value.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "restore",
                    left: dst.value.shape().to_vec(),
                    right: src.value.shape().to_vec(),
                });
            }
            dst.value = src.value.clone();
            dst.grad.fill(0.0);
            dst.velocity.fill(0.0);
        }
        Ok(())
    }

    /// Bitwise equality of all values with `other`.
    pub fn values_bit_equal(&self, other: &ParameterSet) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.name == b.name
                    && a.value.shape() == b.value.shape()
                    && a.value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}
