//! Finite-difference gradient verification.
//!
//! The numeric side only ever evaluates forward passes, so it is independent
//! of the backward code it audits. Everything here is `f64`: central
//! differences at h = 1e-3 leave roughly 1e-7 of headroom in f64, which a
//! 1e-4 relative tolerance absorbs comfortably.
//!
//! "Relative" error uses a floored denominator, `max(|a|, |n|, floor)`.
//! The floor keeps coordinates whose true gradient is near zero from turning
//! finite-difference noise into an unbounded ratio; below the floor the
//! comparison degrades to an absolute check at `tol * floor`, far above FD
//! noise and far below any plausible formula error.

use rand::Rng;

use crate::error::TensorError;
use crate::graph::{Graph, NodeId};
use crate::param::{ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct CheckCfg {
    pub h: f64,
    pub tol: f64,
    pub floor: f64,
}

impl Default for CheckCfg {
    fn default() -> Self {
        Self {
            h: 1e-3,
            tol: 1e-4,
            floor: 1e-2,
        }
    }
}

/// The coordinate with the largest relative error, plus that error.
#[derive(Clone, Debug)]
pub struct Worst {
    pub param: String,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub err: f64,
}

/// Samples `per_tensor` coordinates from every parameter so each tensor is
/// represented in the check.
pub fn sample_coords(
    store: &ParamStore<f64>,
    per_tensor: usize,
    rng: &mut impl Rng,
) -> Vec<(ParamId, usize)> {
    let mut coords = Vec::new();
    for id in store.ids() {
        let numel = store.value(id).numel();
        if numel <= per_tensor {
            coords.extend((0..numel).map(|i| (id, i)));
        } else {
            for _ in 0..per_tensor {
                coords.push((id, rng.gen_range(0..numel)));
            }
        }
    }
    coords
}

/// Compares the tape gradient against central differences at the given
/// coordinates. `build` must construct the loss afresh from the store's
/// current values on every call.
pub fn max_grad_err<F>(
    store: &mut ParamStore<f64>,
    coords: &[(ParamId, usize)],
    cfg: &CheckCfg,
    mut build: F,
) -> Result<Worst, TensorError>
where
    F: FnMut(&mut Graph<f64>, &ParamStore<f64>) -> Result<NodeId, TensorError>,
{
    store.zero_grads();
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    g.backward(loss, store)?;
    let analytic: Vec<f64> = coords
        .iter()
        .map(|&(p, i)| store.grad(p)[i])
        .collect();

    let eval = |store: &ParamStore<f64>, build: &mut F| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let loss = build(&mut g, store)?;
        Ok(g.value(loss).data()[0])
    };

    let mut worst = Worst {
        param: String::new(),
        coord: 0,
        analytic: 0.0,
        numeric: 0.0,
        err: 0.0,
    };
    for (ci, &(p, i)) in coords.iter().enumerate() {
        let orig = store.value(p).data()[i];
        store.value_mut(p).data_mut()[i] = orig + cfg.h;
        let fp = eval(store, &mut build)?;
        store.value_mut(p).data_mut()[i] = orig - cfg.h;
        let fm = eval(store, &mut build)?;
        store.value_mut(p).data_mut()[i] = orig;
        let numeric = (fp - fm) / (2.0 * cfg.h);
        let a = analytic[ci];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
        if err > worst.err {
            worst = Worst {
                param: store.get(p).name().to_string(),
                coord: i,
                analytic: a,
                numeric,
                err,
            };
        }
    }
    Ok(worst)
}
