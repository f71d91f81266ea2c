use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::camera::RgbdFrame;
use super::map::{MapModel, Stencil};
use super::ray::{evaluate_ray, pixel_ray, sample_depths, sample_weight_slope, RaySample, RenderSettings, MIN_WEIGHT_SUM};
use crate::error::{Error, Result};
use crate::se3::Pose;

/// Rays per work unit. Partial sums are merged in chunk order, so results
/// do not depend on the number of threads.
const CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub rgb: f64,
    pub depth: f64,
    pub sdf: f64,
    pub fs: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rgb: 1.0,
            depth: 0.1,
            sdf: 10.0,
            fs: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.rgb, self.depth, self.sdf, self.fs].iter().all(|w| *w >= 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")))
        }
    }
}

/// Unweighted loss terms and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rgb: f64,
    pub depth: f64,
    pub sdf: f64,
    pub free_space: f64,
    pub dynamics: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_terms(rgb: f64, depth: f64, sdf: f64, free_space: f64, dynamics: f64, w: &LossWeights) -> Self {
        Self {
            rgb,
            depth,
            sdf,
            free_space,
            dynamics,
            total: w.rgb * rgb + w.depth * depth + w.sdf * sdf + w.fs * free_space + dynamics,
        }
    }

    /// Term-wise `self + other * scale`.
    pub fn accumulate(&mut self, other: &LossBreakdown, scale: f64) {
        self.rgb += other.rgb * scale;
        self.depth += other.depth * scale;
        self.sdf += other.sdf * scale;
        self.free_space += other.free_space * scale;
        self.dynamics += other.dynamics * scale;
        self.total += other.total * scale;
    }

    /// Name of the first non-finite term.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("rgb", self.rgb),
            ("depth", self.depth),
            ("sdf", self.sdf),
            ("free_space", self.free_space),
            ("dynamics", self.dynamics),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Fixed inputs shared by every loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossContext {
    pub settings: RenderSettings,
    /// Resolved far bound, meters.
    pub far: f64,
    pub weights: LossWeights,
    /// Seed for stratification jitter when `settings.jitter` is set.
    pub jitter_seed: u64,
    /// When set, rays whose rendered depth misses the measurement by more
    /// than this multiple of the batch median miss are left out.
    pub outlier_factor: Option<f64>,
}

impl LossContext {
    pub fn new(settings: RenderSettings, far: f64, weights: LossWeights) -> Self {
        Self {
            settings,
            far,
            weights,
            jitter_seed: 0,
            outlier_factor: None,
        }
    }
}

/// Loss of one frame and the gradient with respect to its pose tangent
/// (rotation, translation).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameLoss {
    pub breakdown: LossBreakdown,
    pub pose_gradient: [f64; 6],
}

struct RayRecord {
    pixel: usize,
    ray_cam: nalgebra::Vector3<f64>,
    samples: Vec<RaySample>,
    color: [f64; 3],
    depth: f64,
    weight_sum: f64,
    skip: bool,
}

#[derive(Default)]
struct Counts {
    rgb: usize,
    depth: usize,
    sdf: usize,
    fs: usize,
}

struct ChunkOut {
    loss: [f64; 4],
    pose: [f64; 6],
    scatter: Vec<(Stencil, f64, [f64; 3])>,
}

fn forward(
    map: &dyn MapModel,
    frame: &RgbdFrame,
    pose: &Pose,
    pixels: &[usize],
    ctx: &LossContext,
    chunk_index: usize,
) -> Result<Vec<RayRecord>> {
    let k = &frame.intrinsics;
    let mut rng = ctx
        .settings
        .jitter
        .then(|| rand_chacha::ChaCha8Rng::seed_from_u64(ctx.jitter_seed ^ (chunk_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
    let mut out = Vec::with_capacity(pixels.len());
    for &p in pixels {
        let (u, v) = k.pixel_uv(p);
        let (origin, ray) = pixel_ray(u, v, k, pose)?;
        let measured = frame.depth[p];
        let depths = sample_depths(
            &ctx.settings,
            ctx.far,
            (measured > 0.0).then_some(measured),
            rng.as_mut().map(|r| r as &mut dyn rand::RngCore),
        )?;
        let mut samples = Vec::with_capacity(depths.len());
        evaluate_ray(map, &origin, &ray, &depths, ctx.settings.weight_scale, &mut samples);
        let mut color = [0.0; 3];
        let mut depth = 0.0;
        let mut total = 0.0;
        for s in samples.iter().filter(|s| s.visible) {
            total += s.weight;
            depth += s.weight * s.depth;
            for c in 0..3 {
                color[c] += s.weight * s.query.sample.color[c];
            }
        }
        if total >= MIN_WEIGHT_SUM {
            color = color.map(|c| c / total);
            depth /= total;
        }
        out.push(RayRecord {
            pixel: p,
            ray_cam: k.backproject(u, v),
            samples,
            color,
            depth,
            weight_sum: total,
            skip: false,
        });
    }
    Ok(out)
}

fn in_band(measured: f64, d: f64, tr: f64) -> bool {
    (measured - d).abs() <= tr
}

fn in_free_space(measured: f64, d: f64, tr: f64) -> bool {
    d < measured - tr
}

fn backward(
    rays: &[RayRecord],
    frame: &RgbdFrame,
    pose: &Pose,
    ctx: &LossContext,
    counts: &Counts,
    scale: f64,
    want_map: bool,
) -> ChunkOut {
    let w = &ctx.weights;
    let tr = ctx.settings.truncation;
    let tau = ctx.settings.weight_scale;
    let inv = |n: usize| if n > 0 { 1.0 / n as f64 } else { 0.0 };
    let a_rgb = inv(counts.rgb) / 3.0;
    let a_depth = inv(counts.depth);
    let a_sdf = inv(counts.sdf);
    let a_fs = inv(counts.fs);
    let rt = pose.rotation.matrix().transpose();

    let mut out = ChunkOut {
        loss: [0.0; 4],
        pose: [0.0; 6],
        scatter: Vec::new(),
    };
    for ray in rays.iter().filter(|r| !r.skip) {
        let measured = frame.depth[ray.pixel];
        let observed = frame.color[ray.pixel];
        let rendered = ray.weight_sum >= MIN_WEIGHT_SUM;
        let mut g_color = [0.0; 3];
        let mut g_depth = 0.0;
        if rendered {
            for c in 0..3 {
                let e = ray.color[c] - observed[c];
                out.loss[0] += a_rgb * e * e;
                g_color[c] = 2.0 * w.rgb * a_rgb * e;
            }
            if measured > 0.0 {
                let e = ray.depth - measured;
                out.loss[1] += a_depth * e * e;
                g_depth = 2.0 * w.depth * a_depth * e;
            }
        }
        let inv_w = if rendered { 1.0 / ray.weight_sum } else { 0.0 };
        for s in &ray.samples {
            let sdf = s.query.sample.sdf;
            let mut d_sdf = 0.0;
            let mut d_color = [0.0; 3];
            if rendered && s.visible {
                let mut d_w = g_depth * (s.depth - ray.depth) * inv_w;
                for c in 0..3 {
                    d_w += g_color[c] * (s.query.sample.color[c] - ray.color[c]) * inv_w;
                    d_color[c] = g_color[c] * s.weight * inv_w;
                }
                d_sdf += d_w * sample_weight_slope(sdf, tau);
            }
            if measured > 0.0 {
                if in_band(measured, s.depth, tr) {
                    let e = sdf - (measured - s.depth);
                    out.loss[2] += a_sdf * e * e;
                    d_sdf += 2.0 * w.sdf * a_sdf * e;
                } else if in_free_space(measured, s.depth, tr) {
                    let e = sdf - tr;
                    out.loss[3] += a_fs * e * e;
                    d_sdf += 2.0 * w.fs * a_fs * e;
                }
            }
            if d_sdf == 0.0 && d_color == [0.0; 3] {
                continue;
            }
            d_sdf *= scale;
            let d_color = d_color.map(|c| c * scale);
            let grad = &s.query.gradient;
            let g_x = grad.sdf * d_sdf + grad.color[0] * d_color[0] + grad.color[1] * d_color[1] + grad.color[2] * d_color[2];
            // x = t + d R r  =>  dL/d(rot) = d * r x (R^T g_x)
            let local = rt * g_x;
            let g_rot = ray.ray_cam.cross(&local) * s.depth;
            for a in 0..3 {
                out.pose[a] += g_rot[a];
                out.pose[3 + a] += g_x[a];
            }
            if want_map {
                if let Some(st) = s.query.stencil {
                    out.scatter.push((st, d_sdf, d_color));
                }
            }
        }
    }
    out
}

/// Floor of the median depth miss, meters, so that a perfect fit does
/// not reject everything else.
const MIN_MEDIAN_MISS: f64 = 1e-3;

fn reject_outliers(records: &mut [Vec<RayRecord>], frame: &RgbdFrame, factor: f64) {
    let miss = |r: &RayRecord| {
        let m = frame.depth[r.pixel];
        (m > 0.0 && r.weight_sum >= MIN_WEIGHT_SUM).then(|| (r.depth - m).abs())
    };
    let mut all: Vec<f64> = records.iter().flatten().filter_map(miss).collect();
    if all.is_empty() {
        return;
    }
    let mid = all.len() / 2;
    let median = *all.select_nth_unstable_by(mid, f64::total_cmp).1;
    let limit = factor * median.max(MIN_MEDIAN_MISS);
    for r in records.iter_mut().flatten() {
        if miss(r).is_some_and(|e| e > limit) {
            r.skip = true;
        }
    }
}

/// Evaluates the reconstruction loss of `frame` seen from `pose` over the
/// listed pixels. Gradients are multiplied by `scale`; the pose gradient
/// is returned and the map gradient, if requested, is added to `map_grad`.
pub fn frame_loss(
    map: &dyn MapModel,
    frame: &RgbdFrame,
    frame_index: usize,
    pose: &Pose,
    pixels: &[usize],
    ctx: &LossContext,
    scale: f64,
    map_grad: Option<&mut [f64]>,
) -> Result<FrameLoss> {
    if pixels.is_empty() {
        return Err(Error::EmptyBatch { frame: frame_index });
    }
    let n = frame.intrinsics.pixel_count();
    if let Some(p) = pixels.iter().find(|p| **p >= n) {
        return Err(Error::InvalidArgument(format!("pixel index {p} outside {n}-pixel frame {frame_index}")));
    }
    let chunks: Vec<&[usize]> = pixels.chunks(CHUNK).collect();
    let mut records: Vec<Vec<RayRecord>> = chunks
        .par_iter()
        .enumerate()
        .map(|(i, c)| forward(map, frame, pose, c, ctx, i))
        .collect::<Result<_>>()?;
    if let Some(k) = ctx.outlier_factor {
        reject_outliers(&mut records, frame, k);
    }

    let tr = ctx.settings.truncation;
    let mut counts = Counts::default();
    for ray in records.iter().flatten().filter(|r| !r.skip) {
        let measured = frame.depth[ray.pixel];
        if ray.weight_sum >= MIN_WEIGHT_SUM {
            counts.rgb += 1;
            if measured > 0.0 {
                counts.depth += 1;
            }
        }
        if measured > 0.0 {
            for s in &ray.samples {
                if in_band(measured, s.depth, tr) {
                    counts.sdf += 1;
                } else if in_free_space(measured, s.depth, tr) {
                    counts.fs += 1;
                }
            }
        }
    }
    if counts.rgb == 0 && counts.sdf == 0 && counts.fs == 0 {
        return Err(Error::EmptyBatch { frame: frame_index });
    }

    let want_map = map_grad.is_some() && map.parameter_count() > 0;
    let partials: Vec<ChunkOut> = records
        .par_iter()
        .map(|r| backward(r, frame, pose, ctx, &counts, scale, want_map))
        .collect();

    let mut terms = [0.0; 4];
    let mut pose_gradient = [0.0; 6];
    for p in &partials {
        for i in 0..4 {
            terms[i] += p.loss[i];
        }
        for i in 0..6 {
            pose_gradient[i] += p.pose[i];
        }
    }
    let breakdown = LossBreakdown::from_terms(terms[0], terms[1], terms[2], terms[3], 0.0, &ctx.weights);
    if let Some(term) = breakdown.non_finite_term() {
        return Err(Error::NonFiniteLoss {
            term,
            context: format!(" at frame {frame_index}"),
        });
    }
    if let Some(g) = map_grad {
        if want_map {
            for p in &partials {
                for (st, d_sdf, d_color) in &p.scatter {
                    map.scatter_gradient(st, *d_sdf, d_color, g);
                }
            }
        }
    }
    Ok(FrameLoss {
        breakdown,
        pose_gradient,
    })
}

/// Loss value only.
pub fn reconstruction_loss(
    map: &dyn MapModel,
    frame: &RgbdFrame,
    frame_index: usize,
    pose: &Pose,
    pixels: &[usize],
    ctx: &LossContext,
) -> Result<LossBreakdown> {
    Ok(frame_loss(map, frame, frame_index, pose, pixels, ctx, 1.0, None)?.breakdown)
}
