//! Tape ops wrapping the selection dynamic programs.
//!
//! Inputs are the emission log-probabilities (`rows x K`) and the
//! pre-sigmoid confidence scores (`rows x K`, last column ignored because
//! `c_{i,K}` is fixed at 1). Gradients are computed with the forward value and
//! scaled by the upstream gradient in `backward`.

use super::dp::{expected_latency_with_grad, marginal_with_grad, viterbi};
use super::transition::{transition_logit_vjp, TransitionTensor};
use crate::error::{Error, Result};
use crate::model::{LogConfidence, MomentGrid};
use crate::numerics::{Array, CustomOp, Tape, Var};

fn check(tape: &Tape<'_>, v: Var, grid: &MomentGrid, what: &str) -> Result<()> {
    let a = tape.value(v);
    if a.len() != grid.rows() * grid.states() {
        return Err(Error::shape(what, a.shape(), &[grid.rows(), grid.states()]));
    }
    Ok(())
}

struct ScaledGrads {
    name: &'static str,
    emissions: Option<Vec<f64>>,
    logits: Vec<f64>,
    shape: Vec<usize>,
}

impl CustomOp for ScaledGrads {
    fn name(&self) -> &'static str {
        self.name
    }

    fn backward(&self, _inputs: &[&Array], _output: &Array, grad_output: &Array) -> Vec<Option<Array>> {
        let g = grad_output.data()[0];
        let scale = |v: &[f64]| Array::new(self.shape.clone(), v.iter().map(|x| x * g).collect()).expect("grad shape");
        let mut out = Vec::new();
        if let Some(e) = &self.emissions {
            out.push(Some(scale(e)));
        }
        out.push(Some(scale(&self.logits)));
        out
    }
}

/// `ln p(y | x)` marginalized over selection paths.
pub fn marginal_log_likelihood(
    tape: &mut Tape<'_>,
    emissions: Var,
    conf_logits: Var,
    grid: &MomentGrid,
) -> Result<Var> {
    check(tape, emissions, grid, "marginal emissions")?;
    check(tape, conf_logits, grid, "marginal confidences")?;
    let conf = LogConfidence::from_logits(grid.rows(), grid.states(), tape.value(conf_logits).data());
    let trans = TransitionTensor::new(&conf, grid);
    let mg = marginal_with_grad(tape.value(emissions).data(), &trans)?;
    let logits = transition_logit_vjp(&conf, grid, &mg.transitions);
    let op = ScaledGrads {
        name: "marginal_log_likelihood",
        emissions: Some(mg.emissions),
        logits,
        shape: tape.value(emissions).shape().to_vec(),
    };
    Ok(tape.custom(
        &[emissions, conf_logits],
        Array::scalar(mg.log_likelihood),
        Box::new(op),
    ))
}

/// `max_z ln [p(y|x,z) p(z)]`; the gradient follows the best path.
pub fn max_path_log_likelihood(
    tape: &mut Tape<'_>,
    emissions: Var,
    conf_logits: Var,
    grid: &MomentGrid,
) -> Result<Var> {
    check(tape, emissions, grid, "max-path emissions")?;
    check(tape, conf_logits, grid, "max-path confidences")?;
    let (rows, states) = (grid.rows(), grid.states());
    let conf = LogConfidence::from_logits(rows, states, tape.value(conf_logits).data());
    let trans = TransitionTensor::new(&conf, grid);
    let (best, path) = viterbi(tape.value(emissions).data(), &trans)?;
    let mut d_emission = vec![0.0; rows * states];
    let mut d_trans = vec![0.0; rows * states * states];
    for (i, &k) in path.iter().enumerate() {
        d_emission[i * states + k] = 1.0;
        let kp = if i == 0 { 0 } else { path[i - 1] };
        d_trans[(i * states + kp) * states + k] = 1.0;
    }
    let logits = transition_logit_vjp(&conf, grid, &d_trans);
    let op = ScaledGrads {
        name: "max_path_log_likelihood",
        emissions: Some(d_emission),
        logits,
        shape: tape.value(emissions).shape().to_vec(),
    };
    Ok(tape.custom(&[emissions, conf_logits], Array::scalar(best), Box::new(op)))
}

/// Expected lag behind the lower boundary under the selection prior.
pub fn expected_latency_var(tape: &mut Tape<'_>, conf_logits: Var, grid: &MomentGrid) -> Result<Var> {
    check(tape, conf_logits, grid, "latency confidences")?;
    let conf = LogConfidence::from_logits(grid.rows(), grid.states(), tape.value(conf_logits).data());
    let trans = TransitionTensor::new(&conf, grid);
    let (value, d_trans) = expected_latency_with_grad(&trans, grid);
    let logits = transition_logit_vjp(&conf, grid, &d_trans);
    let op = ScaledGrads {
        name: "expected_latency",
        emissions: None,
        logits,
        shape: tape.value(conf_logits).shape().to_vec(),
    };
    Ok(tape.custom(&[conf_logits], Array::scalar(value), Box::new(op)))
}
