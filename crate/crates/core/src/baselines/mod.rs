//! Reference decompositions: the 9/7 wavelet transform, learned
//! decomposition without the transform loss, and plain down-sampling.

mod dwt97;
mod resize;

pub use dwt97::{dwt97_forward, dwt97_inverse, DwtBands, ALPHA, BETA, DELTA, GAMMA, ZETA};
pub use resize::downsample_bilinear;

use rand::Rng;

use crate::error::Result;
use crate::pipeline::{Pipeline, PipelineKind};
use crate::tensor::Real;

/// Builds an untrained baseline pipeline. `wae` is rejected: it is the
/// method under comparison, not a baseline.
pub fn build_baseline<T: Real, R: Rng>(
    kind: PipelineKind,
    channels: usize,
    classes: usize,
    rng: &mut R,
) -> Result<Pipeline<T>> {
    if kind == PipelineKind::Wae {
        return Err(crate::Error::invalid(
            "baseline kind must be wavelet|decomposition|lowres|fullres",
        ));
    }
    Ok(Pipeline::new(kind, channels, classes, rng))
}
