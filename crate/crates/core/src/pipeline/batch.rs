use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::render::{frame_loss, LossBreakdown, LossContext, MapModel, RgbdFrame};
use crate::se3::Pose;

/// Independent stream for one (purpose, a, b) triple of a run seed.
pub fn derive_rng(seed: u64, purpose: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut x = seed;
    for v in [purpose, a, b] {
        // splitmix64 step
        x = x.wrapping_add(v.wrapping_add(0x9E37_79B9_7F4A_7C15));
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^= x >> 31;
    }
    ChaCha8Rng::seed_from_u64(x)
}

/// Pixels with a depth measurement, or every pixel if there are none.
pub fn valid_pixels(frame: &RgbdFrame) -> Vec<usize> {
    let v: Vec<usize> = (0..frame.depth.len()).filter(|i| frame.has_depth(*i)).collect();
    if v.is_empty() {
        (0..frame.depth.len()).collect()
    } else {
        v
    }
}

/// Uniform subsample of `n` candidates without replacement, in index order.
pub fn sample_pixels(candidates: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n >= candidates.len() {
        return candidates.to_vec();
    }
    let mut picked: Vec<usize> = rand::seq::index::sample(rng, candidates.len(), n)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Summed loss of several frames; returns the per-frame pose gradients.
pub fn evaluate_frames(
    map: &dyn MapModel,
    frames: &[RgbdFrame],
    items: &[(usize, Pose, Vec<usize>)],
    ctx: &LossContext,
    mut map_grad: Option<&mut [f64]>,
) -> Result<(LossBreakdown, Vec<[f64; 6]>)> {
    let mut total = LossBreakdown::default();
    let mut grads = Vec::with_capacity(items.len());
    for (index, pose, pixels) in items {
        let fl = frame_loss(map, &frames[*index], *index, pose, pixels, ctx, 1.0, map_grad.as_deref_mut())?;
        total.accumulate(&fl.breakdown, 1.0);
        grads.push(fl.pose_gradient);
    }
    Ok((total, grads))
}
