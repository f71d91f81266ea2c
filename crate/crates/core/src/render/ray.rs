use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::camera::CameraIntrinsics;
use super::map::{MapModel, MapQuery};
use crate::error::{Error, Result};
use crate::se3::Pose;

/// Pixels whose weight sum falls below this are not rendered.
pub const MIN_WEIGHT_SUM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSettings {
    /// Truncation distance `tr`, meters.
    pub truncation: f64,
    /// Temperature of the bell-shaped sample weight, meters.
    pub weight_scale: f64,
    pub n_uniform: usize,
    pub n_surface: usize,
    pub near: f64,
    /// `None` resolves to the scene diameter.
    pub far: Option<f64>,
    /// Random offsets inside each stratum instead of midpoints.
    pub jitter: bool,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            truncation: 0.1,
            weight_scale: 0.01,
            n_uniform: 24,
            n_surface: 8,
            near: 0.05,
            far: None,
            jitter: false,
        }
    }
}

impl RenderSettings {
    pub fn far_or(&self, fallback: f64) -> f64 {
        self.far.unwrap_or(fallback)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.truncation > 0.0
            && self.weight_scale > 0.0
            && self.n_uniform + self.n_surface >= 2
            && self.n_uniform >= 1
            && self.near > 0.0
            && self.far.is_none_or(|f| f > self.near && f.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid render settings {self:?}")))
        }
    }
}

/// Ray through pixel `(u, v)`: camera center and the unnormalized world
/// direction `R K^-1 [u, v, 1]^T`, so that `origin + d * ray` has z-depth `d`.
pub fn pixel_ray(u: f64, v: f64, intrinsics: &CameraIntrinsics, pose: &Pose) -> Result<(Vector3<f64>, Vector3<f64>)> {
    if !intrinsics.contains(u, v) {
        return Err(Error::InvalidArgument(format!(
            "pixel ({u}, {v}) outside {}x{} image",
            intrinsics.width, intrinsics.height
        )));
    }
    Ok((pose.translation, pose.rotation.matrix() * intrinsics.backproject(u, v)))
}

fn strata(lo: f64, hi: f64, n: usize, rng: &mut Option<&mut dyn rand::RngCore>, out: &mut Vec<f64>) {
    let step = (hi - lo) / n as f64;
    for i in 0..n {
        let f = match rng {
            Some(r) => r.random::<f64>(),
            None => 0.5,
        };
        out.push(lo + (i as f64 + f) * step);
    }
}

/// Stratified sample depths: `n_uniform` in `[near, far]` and, with a depth
/// measurement, `n_surface` in `[surface - tr, surface + tr]`. Returned
/// sorted and strictly increasing. `rng` enables jitter.
pub fn sample_depths(
    settings: &RenderSettings,
    far: f64,
    surface_depth: Option<f64>,
    mut rng: Option<&mut dyn rand::RngCore>,
) -> Result<Vec<f64>> {
    if !(settings.near < far) || settings.n_uniform + settings.n_surface < 2 || settings.n_uniform == 0 {
        return Err(Error::InvalidArgument(format!(
            "bad sampling bounds near {} far {far} with {} + {} samples",
            settings.near, settings.n_uniform, settings.n_surface
        )));
    }
    let mut out = Vec::with_capacity(settings.n_uniform + settings.n_surface);
    strata(settings.near, far, settings.n_uniform, &mut rng, &mut out);
    if let Some(d) = surface_depth.filter(|d| *d > 0.0) {
        let tr = settings.truncation;
        strata(d - tr, d + tr, settings.n_surface, &mut rng, &mut out);
    }
    out.retain(|d| *d > 0.0);
    out.sort_by(f64::total_cmp);
    out.dedup();
    Ok(out)
}

/// Sample weight `sigmoid(s/scale) * sigmoid(-s/scale)`.
#[inline]
pub fn sample_weight(s: f64, scale: f64) -> f64 {
    let e = (-(s / scale).abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// Derivative of [`sample_weight`] with respect to `s`.
#[inline]
pub fn sample_weight_slope(s: f64, scale: f64) -> f64 {
    let w = sample_weight(s, scale);
    let sig = 1.0 / (1.0 + (-s / scale).exp());
    w * (1.0 - 2.0 * sig) / scale
}

/// Samples past the first entry into a surface (positive to negative
/// sdf) by more than `tr` are occluded and get zero weight. Returns the
/// number of visible samples.
pub fn visible_prefix(depths: &[f64], sdf: &[f64], truncation: f64) -> usize {
    let crossing = sdf.windows(2).position(|w| w[0] > 0.0 && w[1] <= 0.0);
    match crossing {
        Some(i) => {
            let limit = depths[i + 1] + truncation;
            depths.iter().take_while(|d| **d < limit).count()
        }
        None => depths.len(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelRender {
    pub color: [f64; 3],
    pub depth: f64,
    pub weight_sum: f64,
}

/// Weighted average of sample colors and depths; `None` when the weights
/// vanish.
pub fn render_pixel(
    map: &dyn MapModel,
    origin: &Vector3<f64>,
    ray: &Vector3<f64>,
    depths: &[f64],
    weight_scale: f64,
) -> Option<PixelRender> {
    let samples: Vec<_> = depths.iter().map(|d| map.query(&(origin + ray * *d))).collect();
    let sdf: Vec<f64> = samples.iter().map(|s| s.sdf).collect();
    let visible = visible_prefix(depths, &sdf, map.truncation());
    let mut color = [0.0; 3];
    let mut depth = 0.0;
    let mut total = 0.0;
    for (s, d) in samples.iter().zip(depths).take(visible) {
        let w = sample_weight(s.sdf, weight_scale);
        total += w;
        depth += w * d;
        for c in 0..3 {
            color[c] += w * s.color[c];
        }
    }
    if total < MIN_WEIGHT_SUM {
        return None;
    }
    Some(PixelRender {
        color: color.map(|c| c / total),
        depth: depth / total,
        weight_sum: total,
    })
}

/// One evaluated sample along a ray, kept for back-propagation.
#[derive(Clone, Copy, Debug)]
pub(crate) struct RaySample {
    pub depth: f64,
    pub query: MapQuery,
    pub weight: f64,
    pub visible: bool,
}

pub(crate) fn evaluate_ray(
    map: &dyn MapModel,
    origin: &Vector3<f64>,
    ray: &Vector3<f64>,
    depths: &[f64],
    weight_scale: f64,
    out: &mut Vec<RaySample>,
) {
    out.clear();
    for d in depths {
        let query = map.query_diff(&(origin + ray * *d));
        out.push(RaySample {
            depth: *d,
            weight: sample_weight(query.sample.sdf, weight_scale),
            query,
            visible: true,
        });
    }
    // the occlusion test needs every sdf first
    if let Some(i) = out.windows(2).position(|w| w[0].query.sample.sdf > 0.0 && w[1].query.sample.sdf <= 0.0) {
        let limit = out[i + 1].depth + map.truncation();
        for s in out.iter_mut() {
            if s.depth >= limit {
                s.visible = false;
            }
        }
    }
}

/// Renders a whole image by sphere tracing the surface, then placing the
/// regular ray samples around it. Pixels with nothing visible get depth 0.
pub fn render_image(
    map: &dyn MapModel,
    intrinsics: &CameraIntrinsics,
    pose: &Pose,
    settings: &RenderSettings,
    far: f64,
    surface: impl Fn(&Vector3<f64>, &Vector3<f64>) -> Option<f64>,
) -> Result<(Vec<[f64; 3]>, Vec<f64>)> {
    let n = intrinsics.pixel_count();
    let mut color = vec![[0.0; 3]; n];
    let mut depth = vec![0.0; n];
    for i in 0..n {
        let (u, v) = intrinsics.pixel_uv(i);
        let (o, r) = pixel_ray(u, v, intrinsics, pose)?;
        let Some(hit) = surface(&o, &r) else {
            continue;
        };
        let depths = sample_depths(settings, far, Some(hit), None)?;
        if let Some(px) = render_pixel(map, &o, &r, &depths, settings.weight_scale) {
            color[i] = px.color;
            depth[i] = px.depth;
        }
    }
    Ok((color, depth))
}
