use super::ModelError;

/// Tolerance on per-row probability sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Class probabilities from `passes` stochastic forward passes over
/// `samples` inputs, stored pass-major: `[pass][sample][class]`.
#[derive(Clone, Debug, PartialEq)]
pub struct McPredictions {
    passes: usize,
    samples: usize,
    classes: usize,
    probs: Vec<f64>,
}

impl McPredictions {
    /// Validates shape and that every row is a probability vector.
    pub fn new(
        passes: usize,
        samples: usize,
        classes: usize,
        probs: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if passes == 0 || classes == 0 {
            return Err(ModelError::Config(
                "predictions need at least one pass and one class".into(),
            ));
        }
        if probs.len() != passes * samples * classes {
            return Err(ModelError::Config(format!(
                "expected {passes}×{samples}×{classes} probabilities, got {}",
                probs.len()
            )));
        }
        for (row_idx, row) in probs.chunks(classes).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| p.is_nan() || p < 0.0) || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(ModelError::NotAProbability {
                    pass: row_idx / samples.max(1),
                    sample: row_idx % samples.max(1),
                });
            }
        }
        Ok(Self {
            passes,
            samples,
            classes,
            probs,
        })
    }

    pub fn passes(&self) -> usize {
        self.passes
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Probability row for one pass and one sample.
    pub fn row(&self, pass: usize, sample: usize) -> &[f64] {
        let start = (pass * self.samples + sample) * self.classes;
        &self.probs[start..start + self.classes]
    }

    /// All `samples × classes` probabilities of one pass.
    pub fn pass(&self, pass: usize) -> &[f64] {
        let width = self.samples * self.classes;
        &self.probs[pass * width..(pass + 1) * width]
    }

    /// Mean over passes, `samples × classes`.
    pub fn mean(&self) -> Vec<f64> {
        let width = self.samples * self.classes;
        let mut out = vec![0.0; width];
        for t in 0..self.passes {
            for (o, p) in out.iter_mut().zip(self.pass(t)) {
                *o += p;
            }
        }
        let inv = 1.0 / self.passes as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        out
    }
}
