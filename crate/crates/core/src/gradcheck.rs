//! Central finite-difference verification of tape gradients.
//!
//! The builder closure reconstructs the scalar graph from the current store
//! contents, so numeric differentiation perturbs a parameter and replays the
//! whole forward pass.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

pub const FD_STEP: f64 = 1e-5;

/// Max over all parameter scalars of |analytic - numeric| / max(|numeric|, 1e-8),
/// with numeric gradients from central differences of step [`FD_STEP`].
pub fn finite_difference_check<F>(store: &mut ParamStore, build: F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = build(&mut tape, store)?;
        if tape.value(out).len() != 1 {
            return Err(Error::InvalidArgument(
                "finite-difference check needs a scalar-valued graph".into(),
            ));
        }
        Ok(tape.scalar_value(out))
    };

    // Analytic gradients once.
    let mut tape = Tape::new();
    let out = build(&mut tape, store)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<(usize, Vec<f64>)> = grads
        .params()
        .map(|(id, g)| (id.index(), g.data().to_vec()))
        .collect();
    // Merge duplicate leaves of the same parameter.
    let mut merged: Vec<Option<Vec<f64>>> = vec![None; store.len()];
    for (idx, g) in analytic {
        match &mut merged[idx] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            slot => *slot = Some(g),
        }
    }

    let mut worst: f64 = 0.0;
    for id in store.ids() {
        let n = store.value(id).numel();
        let zeros = vec![0.0; n];
        let a = merged[id.index()].as_deref().unwrap_or(&zeros);
        for j in 0..n {
            let orig = store.value(id).data()[j];
            store.value_mut(id).data_mut()[j] = orig + FD_STEP;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[j] = orig - FD_STEP;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = (a[j] - numeric).abs() / numeric.abs().max(1e-8);
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}
