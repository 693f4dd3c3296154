//! Shared generators for the property tests.

use std::sync::Arc;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{CenterField, FaceField, OrderParameterField, VectorPotentialField, VoxelDomain};

/// Connected random voxel masks on small anisotropic grids.
pub fn random_domain() -> impl Strategy<Value = Arc<VoxelDomain>> {
    ([2usize..5, 2usize..5, 2usize..5], any::<u64>()).prop_filter_map("disconnected mask", |(n, bits)| {
        let total = n[0] * n[1] * n[2];
        // keep cell 0 so the mask is never empty
        let mask = (0..total).map(|c| c == 0 || (bits.rotate_left(c as u32) & 0b111) != 0).collect();
        VoxelDomain::build_from_mask(n, [1.0, 0.7, 1.3], mask).ok().map(Arc::new)
    })
}

pub fn real_center(dom: &Arc<VoxelDomain>, seed: u64) -> CenterField<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CenterField::from_fn(dom, |_| rng.random_range(-1.0..1.0))
}

pub fn complex_center(dom: &Arc<VoxelDomain>, seed: u64) -> OrderParameterField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CenterField::from_fn(dom, |_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

pub fn faces(dom: &Arc<VoxelDomain>, seed: u64) -> VectorPotentialField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FaceField::from_fn_interior(dom, |_, _| rng.random_range(-1.0..1.0))
}
