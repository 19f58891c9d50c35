use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EditLoss {
    pub total: f64,
    pub reg: f64,
    pub content: f64,
}

/// Loss vars on a tape, for a batch of edits.
#[derive(Clone, Copy, Debug)]
pub struct EditLossVars {
    pub total: Var,
    pub reg: Var,
    pub content: Var,
}

/// `lambda_reg * BCE(target, pred) + lambda_content * mean_b |z'_b - z_b|^2`.
///
/// `pred` and `target` are `B x n_attr`; `z` and `z_edit` are `B x d`.
pub fn edit_loss_tape(
    tape: &mut Tape,
    pred: Var,
    target: Var,
    z: Var,
    z_edit: Var,
    lambda_reg: f64,
    lambda_content: f64,
    swapped: bool,
) -> EditLossVars {
    let reg = tape.bce(pred, target, swapped);
    let diff = tape.sub(z_edit, z);
    let sq = tape.sum_squares_rows(diff);
    let content = tape.mean(sq);
    let a = tape.scale(reg, lambda_reg);
    let b = tape.scale(content, lambda_content);
    let total = tape.add(a, b);
    EditLossVars { total, reg, content }
}

/// Editing loss for a single edit: predicted attributes `pred = R(z')`
/// against pseudo ground truth `target = alpha + eps`.
#[allow(clippy::too_many_arguments)]
pub fn edit_loss(pred: &[f64], target: &[f64], z: &[f64], z_edit: &[f64], lambda_reg: f64, lambda_content: f64, swapped: bool) -> Result<EditLoss> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::shape("edit_loss attributes", &[target.len()], &[pred.len()]));
    }
    if z.len() != z_edit.len() {
        return Err(Error::shape("edit_loss latents", &[z.len()], &[z_edit.len()]));
    }
    if let Some(t) = target.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::OutOfRange {
            name: "target attribute".into(),
            value: *t,
            min: 0.0,
            max: 1.0,
        });
    }
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::row(pred));
    let t = tape.constant(Tensor::row(target));
    let a = tape.constant(Tensor::row(z));
    let b = tape.constant(Tensor::row(z_edit));
    let v = edit_loss_tape(&mut tape, p, t, a, b, lambda_reg, lambda_content, swapped);
    Ok(EditLoss {
        total: tape.value(v.total).item(),
        reg: tape.value(v.reg).item(),
        content: tape.value(v.content).item(),
    })
}
