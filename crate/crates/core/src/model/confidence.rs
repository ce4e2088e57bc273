use crate::numerics::{log_sigmoid, logistic};

/// Largest confidence a predicted (non-final) state may report. Keeps
/// predicted entries strictly inside `(0, 1)` so a threshold of `1.0` only
/// ever passes the forced final state.
pub const MAX_PREDICTED_CONFIDENCE: f64 = 1.0 - f64::EPSILON;
pub const MIN_PREDICTED_CONFIDENCE: f64 = f64::MIN_POSITIVE;

/// Selection confidences `c[i][k]` with the last column forced to exactly 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceMatrix {
    rows: usize,
    states: usize,
    values: Vec<f64>,
}

impl ConfidenceMatrix {
    /// From raw probabilities; the last column is overwritten with 1 and the
    /// rest clamped into the open unit interval.
    pub fn from_probabilities(rows: usize, states: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * states, "confidence matrix size");
        let mut values = values;
        for i in 0..rows {
            for k in 0..states {
                let v = &mut values[i * states + k];
                *v = if k + 1 == states {
                    1.0
                } else {
                    v.clamp(MIN_PREDICTED_CONFIDENCE, MAX_PREDICTED_CONFIDENCE)
                };
            }
        }
        Self { rows, states, values }
    }

    pub fn from_logits(rows: usize, states: usize, logits: &[f64]) -> Self {
        Self::from_probabilities(rows, states, logits.iter().map(|&a| logistic(a)).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.states + k]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.states..(i + 1) * self.states]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// `ln c` and `ln (1 - c)` per state, plus `c` itself, in the form the
/// dynamic programs consume. The final state has `ln c = 0`, `ln (1-c) = -inf`.
#[derive(Clone, Debug)]
pub struct LogConfidence {
    rows: usize,
    states: usize,
    prob: Vec<f64>,
    log_select: Vec<f64>,
    log_reject: Vec<f64>,
}

impl LogConfidence {
    /// From pre-sigmoid scores; uses `ln sigmoid(a)` and `ln sigmoid(-a)`
    /// directly so extreme scores do not round to `ln 0`.
    pub fn from_logits(rows: usize, states: usize, logits: &[f64]) -> Self {
        assert_eq!(logits.len(), rows * states, "confidence logits size");
        let mut prob = Vec::with_capacity(logits.len());
        let mut log_select = Vec::with_capacity(logits.len());
        let mut log_reject = Vec::with_capacity(logits.len());
        for (idx, &a) in logits.iter().enumerate() {
            if (idx % states) + 1 == states {
                prob.push(1.0);
                log_select.push(0.0);
                log_reject.push(f64::NEG_INFINITY);
            } else {
                prob.push(logistic(a));
                log_select.push(log_sigmoid(a));
                log_reject.push(log_sigmoid(-a));
            }
        }
        Self {
            rows,
            states,
            prob,
            log_select,
            log_reject,
        }
    }

    pub fn from_confidences(c: &ConfidenceMatrix) -> Self {
        let mut log_select = Vec::with_capacity(c.values.len());
        let mut log_reject = Vec::with_capacity(c.values.len());
        for (idx, &v) in c.values.iter().enumerate() {
            if (idx % c.states) + 1 == c.states {
                log_select.push(0.0);
                log_reject.push(f64::NEG_INFINITY);
            } else {
                log_select.push(v.ln());
                log_reject.push((-v).ln_1p());
            }
        }
        Self {
            rows: c.rows,
            states: c.states,
            prob: c.values.clone(),
            log_select,
            log_reject,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn prob(&self, i: usize, k: usize) -> f64 {
        self.prob[i * self.states + k]
    }

    pub fn log_select(&self, i: usize, k: usize) -> f64 {
        self.log_select[i * self.states + k]
    }

    pub fn log_reject(&self, i: usize, k: usize) -> f64 {
        self.log_reject[i * self.states + k]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_column_forced_to_one() {
        let c = ConfidenceMatrix::from_logits(2, 3, &[0.0, 5.0, -9.0, 1.0, 2.0, -40.0]);
        assert_eq!(c.get(0, 2), 1.0);
        assert_eq!(c.get(1, 2), 1.0);
        assert_eq!(c.get(0, 0), 0.5);
    }

    #[test]
    fn saturated_logits_stay_below_one() {
        let c = ConfidenceMatrix::from_logits(1, 2, &[80.0, 0.0]);
        assert!(c.get(0, 0) < 1.0);
        let c = ConfidenceMatrix::from_logits(1, 2, &[-800.0, 0.0]);
        assert!(c.get(0, 0) > 0.0);
    }

    #[test]
    fn log_forms_agree() {
        let logits = [0.3, -1.2, 0.0, 2.5, 0.7, 0.0];
        let a = LogConfidence::from_logits(2, 3, &logits);
        let b = LogConfidence::from_confidences(&ConfidenceMatrix::from_logits(2, 3, &logits));
        for i in 0..2 {
            for k in 0..3 {
                assert!((a.log_select(i, k) - b.log_select(i, k)).abs() < 1e-12);
                let (ra, rb) = (a.log_reject(i, k), b.log_reject(i, k));
                assert!(ra == rb || (ra - rb).abs() < 1e-12);
            }
        }
    }
}
