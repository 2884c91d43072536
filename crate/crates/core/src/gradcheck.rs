//! Finite-difference gradient checking.
//!
//! The checker re-evaluates the loss with each parameter element perturbed
//! by ±h and compares the central difference against the tape's analytic
//! gradient. It shares no code with the backward pass: the numeric side only
//! ever runs forward.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Builds the scalar loss from a tape and the node ids of the registered
/// parameters (same iteration order as the parameter map).
pub type LossFn<'a> = dyn Fn(&mut Tape, &BTreeMap<String, NodeId>) -> Result<NodeId> + 'a;

/// Max over all parameter elements of
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check(params: &BTreeMap<String, Tensor>, f: &LossFn) -> Result<f64> {
    let analytic = {
        let mut tape = Tape::new(true);
        let mut ids = BTreeMap::new();
        for (name, t) in params {
            ids.insert(name.clone(), tape.param(name, t)?);
        }
        let loss = f(&mut tape, &ids)?;
        tape.backward(loss)?
    };

    let eval = |perturbed: &BTreeMap<String, Tensor>| -> Result<f64> {
        let mut tape = Tape::new(true);
        let mut ids = BTreeMap::new();
        for (name, t) in perturbed {
            // forward-only: leaves need no gradient
            ids.insert(name.clone(), tape.leaf(t)?);
        }
        let loss = f(&mut tape, &ids)?;
        Ok(tape.data(loss)[0])
    };

    let mut worst = 0.0f64;
    let mut work = params.clone();
    let names: Vec<String> = params.keys().cloned().collect();
    for name in &names {
        let numel = params[name].numel();
        for idx in 0..numel {
            let orig = params[name].data()[idx];
            work.get_mut(name).unwrap().data_mut()[idx] = orig + FD_STEP;
            let up = eval(&work)?;
            work.get_mut(name).unwrap().data_mut()[idx] = orig - FD_STEP;
            let down = eval(&work)?;
            work.get_mut(name).unwrap().data_mut()[idx] = orig;

            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[name].data()[idx];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}
