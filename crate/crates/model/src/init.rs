//! Parameter registration helpers.
//!
//! Every tensor draws from its own RNG substream keyed by a hash of its
//! name, so initial values depend only on (seed, name). Ablation variants
//! that share a parameter name therefore share its initial value, no matter
//! which other parameters exist around it.

use dtrn_tensor::{Graph, NodeId, ParamStore, Real, Tensor};

use crate::error::ModelError;

/// Graph node for a named parameter; the name must be registered.
pub(crate) fn param_node<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    name: &str,
) -> Result<NodeId, ModelError> {
    let id = store
        .id(name)
        .ok_or_else(|| ModelError::config(format!("parameter `{name}` not registered")))?;
    Ok(g.param(store, id))
}

fn name_stream(name: &str) -> u64 {
    // FNV-1a, 64-bit.
    let mut h: u64 = 0xcbf29ce484222325;
    for byte in name.bytes() {
        h ^= byte as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Uniform init in [-bound, +bound]; draws in f64 and narrows, so f32 and
/// f64 stores see identical sequences.
pub(crate) fn add_uniform<T: Real>(
    store: &mut ParamStore<T>,
    seed: u64,
    name: &str,
    shape: &[usize],
    bound: f64,
) -> Result<(), ModelError> {
    let mut rng = dtrn_tensor::stream_rng(seed, name_stream(name));
    let value = Tensor::uniform(shape, -bound, bound, &mut rng);
    store.add(name, value)?;
    Ok(())
}

pub(crate) fn add_zeros<T: Real>(
    store: &mut ParamStore<T>,
    name: &str,
    shape: &[usize],
) -> Result<(), ModelError> {
    store.add(name, Tensor::zeros(shape))?;
    Ok(())
}

pub(crate) fn add_filled<T: Real>(
    store: &mut ParamStore<T>,
    name: &str,
    shape: &[usize],
    v: f64,
) -> Result<(), ModelError> {
    store.add(name, Tensor::filled(shape, T::of(v)))?;
    Ok(())
}

/// Fan-in scaled bound 1/sqrt(fan_in).
pub(crate) fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}
