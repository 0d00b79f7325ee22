//! Synthetic scenes with known scale, and the Monte Carlo experiments built
//! on them.
//!
//! Objects are boxes or elliptic cylinders with sizes drawn from category
//! priors, surface-sampled, placed upright without overlap and observed by a
//! circular zero-roll camera orbit.

mod scene;
mod shapes;
mod trials;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use scene::{
    draw_dims, generate_scene, DimsMm, DimsMode, ObjectTruth, SceneOptions, SceneTruth, SimObject, SimScene,
    CAMERA_DISTANCE, DEFAULT_CAMERAS, DEFAULT_POINTS_PER_OBJECT, GAP_FRAC, IMAGE_SIZE, INTRINSICS,
};
pub use shapes::{sample_surface, truncate, LocalSize, Shape, Truncation, FADE_BAND};
pub use trials::{
    ablation_bbox_vs_extraction, estimate_scene_scale, run_trials, AblationOptions, AblationReport, Summary,
    TrialOptions, TrialReport, SCALE_RANGE,
};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with indices into an independent stream seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(base), |acc, p| splitmix64(acc ^ splitmix64(*p)))
}

pub(crate) fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
