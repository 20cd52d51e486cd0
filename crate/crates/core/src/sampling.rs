//! Streaming evaluation of the network over perturbation samples.

use rayon::prelude::*;

use crate::error::Result;
use crate::model::MlpNetwork;
use crate::perturb::PerturbationSpec;

/// Inputs held in memory at once, counted in f64 values.
const CHUNK_VALUES: usize = 1 << 22;

/// Applies `f` to the network output of samples `indices` of the stage seeded
/// with `stage_seed`, in index order. Only one chunk of inputs and outputs is
/// alive at a time.
pub fn map_outputs<T, F>(
    model: &MlpNetwork,
    spec: &PerturbationSpec,
    stage_seed: u64,
    indices: std::ops::Range<u64>,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, &[f64]) -> Result<T> + Sync,
{
    let chunk = (CHUNK_VALUES / spec.base_image().len().max(1)).clamp(16, 4096) as u64;
    let mut results = Vec::with_capacity((indices.end - indices.start) as usize);
    let mut start = indices.start;
    while start < indices.end {
        let end = (start + chunk).min(indices.end);
        let inputs = (start..end)
            .into_par_iter()
            .map(|i| {
                let lambda = spec.sample_lambda(stage_seed, i);
                let mut x = Vec::new();
                spec.apply_into(&lambda, &mut x)?;
                Ok(x)
            })
            .collect::<Result<Vec<_>>>()?;
        let outputs = model.infer_batch(&inputs)?;
        drop(inputs);
        let mapped = outputs
            .par_iter()
            .enumerate()
            .map(|(k, y)| f(start + k as u64, y))
            .collect::<Result<Vec<_>>>()?;
        results.extend(mapped);
        start = end;
    }
    Ok(results)
}

/// Network outputs of samples `0..count`.
pub fn sample_outputs(
    model: &MlpNetwork,
    spec: &PerturbationSpec,
    stage_seed: u64,
    count: usize,
) -> Result<Vec<Vec<f64>>> {
    map_outputs(model, spec, stage_seed, 0..count as u64, |_, y| Ok(y.to_vec()))
}
