//! Differentiating an outer loss through one inner gradient step.

use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaOrder {
    /// Full MAML: the Hessian-vector term of the inner step is kept.
    SecondOrder,
    /// FOMAML: the adapted parameters are treated as independent leaves.
    FirstOrder,
}

#[derive(Clone, Debug)]
pub struct MetaGradient {
    pub grads: Vec<Tensor>,
    pub inner_loss: f64,
    pub outer_loss: f64,
}

/// `d outer(p - alpha * grad inner(p)) / dp`.
///
/// `inner` and `outer` record their loss on the tape given the parameter
/// vars they should use. For [`MetaOrder::SecondOrder`] the inner gradient is
/// recorded on the tape and differentiated through; for
/// [`MetaOrder::FirstOrder`] it is not.
///
/// ```
/// use dynpop::grad::{grad_through_update, MetaOrder, Tensor};
///
/// // inner = outer = x^2 gives 2x(1 - 2 alpha)^2
/// let sq = |t: &mut dynpop::grad::Tape, p: &[dynpop::grad::Var]| t.mul(p[0], p[0]);
/// let g = grad_through_update(&[Tensor::scalar(1.0)], 0.1, MetaOrder::SecondOrder, sq, sq).unwrap();
/// assert!((g.grads[0].item() - 1.28).abs() < 1e-12);
/// ```
pub fn grad_through_update<I, O>(
    params: &[Tensor],
    alpha: f64,
    order: MetaOrder,
    mut inner: I,
    mut outer: O,
) -> Result<MetaGradient>
where
    I: FnMut(&mut Tape, &[Var]) -> Result<Var>,
    O: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "inner step size must be non-negative, got {alpha}"
        )));
    }
    let mut tape = Tape::new();
    let leaves: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let inner_loss = inner(&mut tape, &leaves)?;
    let inner_value = tape.value(inner_loss).item();

    match order {
        MetaOrder::SecondOrder => {
            let g = tape.grad(inner_loss, &leaves, true)?;
            let mut adapted = Vec::with_capacity(leaves.len());
            for (&p, &gp) in leaves.iter().zip(&g) {
                let step = tape.scale(gp, alpha)?;
                adapted.push(tape.sub(p, step)?);
            }
            let outer_loss = outer(&mut tape, &adapted)?;
            let outer_value = tape.value(outer_loss).item();
            let grads = tape.backward(outer_loss, &leaves)?;
            Ok(MetaGradient {
                grads,
                inner_loss: inner_value,
                outer_loss: outer_value,
            })
        }
        MetaOrder::FirstOrder => {
            let g = tape.backward(inner_loss, &leaves)?;
            let mut outer_tape = Tape::new();
            let adapted: Vec<Var> = params
                .iter()
                .zip(&g)
                .map(|(p, gp)| outer_tape.leaf(p.zip(gp, |x, d| x - alpha * d)))
                .collect();
            let outer_loss = outer(&mut outer_tape, &adapted)?;
            let outer_value = outer_tape.value(outer_loss).item();
            let grads = outer_tape.backward(outer_loss, &adapted)?;
            Ok(MetaGradient {
                grads,
                inner_loss: inner_value,
                outer_loss: outer_value,
            })
        }
    }
}

/// One plain gradient step `p - alpha * grad`, without tape bookkeeping.
pub fn sgd_step(params: &[Tensor], grads: &[Tensor], alpha: f64) -> Vec<Tensor> {
    params
        .iter()
        .zip(grads)
        .map(|(p, g)| p.zip(g, |x, d| x - alpha * d))
        .collect()
}
