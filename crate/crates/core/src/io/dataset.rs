//! Synthetic RGB-D sequences rendered from an analytic scene.
//!
//! A dataset directory holds `manifest.json`, `rgb/NNNNNN.ppm`,
//! `depth/NNNNNN.pfm` (meters, 0 = no measurement), the ground-truth
//! trajectory `groundtruth.txt` and its control points
//! `groundtruth_controls.txt` (+ `.json` knot sidecar).

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::image::{read_pfm, read_ppm, write_pfm, write_ppm};
use super::tum::{load_trajectory, save_control_trajectory, save_trajectory};
use super::{read_text, write_text};
use crate::error::{Error, Result};
use crate::eval::{smoothness_report, TimedTrajectory};
use crate::pipeline::batch::derive_rng;
use crate::pipeline::Sequence;
use crate::render::{pixel_ray, render_pixel, sample_depths, AnalyticScene, CameraIntrinsics, RenderSettings, RgbdFrame};
use crate::se3::{Pose, Rotation};
use crate::spline::ControlTrajectory;

pub const MANIFEST: &str = "manifest.json";
pub const GROUND_TRUTH: &str = "groundtruth.txt";
pub const GROUND_TRUTH_CONTROLS: &str = "groundtruth_controls.txt";

const STREAM_ORBIT: u64 = 11;
const STREAM_DEPTH: u64 = 12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    /// Additive Gaussian depth noise, meters; noisy depths are clamped at 0.
    pub depth_sigma: f64,
    /// Tracked-pose jitter for stress tests, meters and radians. Stored in
    /// the manifest and applied by the pipeline, not to the images.
    pub jitter_trans: f64,
    pub jitter_rot: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            depth_sigma: 0.01,
            jitter_trans: 0.0,
            jitter_rot: 0.0,
        }
    }
}

/// Camera path: an arc around a vertical axis through `target`, looking
/// at `target`, with seeded perturbations of the control points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrbitSpec {
    pub target: [f64; 3],
    pub radius: f64,
    /// Camera height (world y, pointing down).
    pub height: f64,
    /// Start azimuth, radians, and azimuth rate, rad/s.
    pub start_angle: f64,
    pub angular_speed: f64,
    /// Vertical oscillation amplitude, meters, and period, seconds.
    pub bob: f64,
    pub bob_period: f64,
    /// Knot spacing of the ground-truth spline, seconds.
    pub control_dt: f64,
    /// Std. dev. of control position / look-at target perturbations, meters.
    pub perturb: f64,
    /// Upper bound on sampled linear acceleration, m/s^2.
    pub max_acceleration: f64,
}

impl Default for OrbitSpec {
    fn default() -> Self {
        Self {
            target: [0.0, 0.4, 0.0],
            radius: 1.0,
            height: -0.2,
            start_angle: -0.6,
            angular_speed: 0.24,
            bob: 0.05,
            bob_period: 5.0,
            control_dt: 0.4,
            perturb: 0.01,
            max_acceleration: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub scene: AnalyticScene,
    pub intrinsics: CameraIntrinsics,
    pub fps: f64,
    pub frames: usize,
    pub orbit: OrbitSpec,
    pub noise: NoiseSpec,
    pub render: RenderSettings,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        let render = RenderSettings::default();
        Self {
            scene: AnalyticScene::desk(render.truncation),
            intrinsics: CameraIntrinsics::centered(64, 48, 50.0),
            fps: 30.0,
            frames: 150,
            orbit: OrbitSpec::default(),
            noise: NoiseSpec::default(),
            render,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    /// Defaults to `index / fps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<f64>,
    pub color: String,
    pub depth: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub scene: AnalyticScene,
    pub intrinsics: CameraIntrinsics,
    pub fps: f64,
    pub frame_count: usize,
    pub frames: Vec<FrameEntry>,
    pub ground_truth: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_controls: Option<String>,
    pub noise: NoiseSpec,
    /// Far bound for ray sampling, meters.
    pub far: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<DatasetSpec>,
}

impl DatasetManifest {
    pub fn validate(&self, dir: &Path) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::InvalidArgument(format!("fps {} must be positive", self.fps)));
        }
        if self.frames.len() != self.frame_count {
            return Err(Error::InvalidArgument(format!(
                "frame_count {} but {} frame entries",
                self.frame_count,
                self.frames.len()
            )));
        }
        self.intrinsics.validate()?;
        self.scene.validate()?;
        let mut files = vec![&self.ground_truth];
        files.extend(self.ground_truth_controls.iter());
        for f in &self.frames {
            files.push(&f.color);
            files.push(&f.depth);
        }
        for f in files {
            let p = dir.join(f);
            if !p.is_file() {
                return Err(Error::InvalidArgument(format!("missing dataset file {}", p.display())));
            }
        }
        Ok(())
    }

    pub fn timestamp(&self, index: usize) -> f64 {
        self.frames[index].timestamp.unwrap_or(index as f64 / self.fps)
    }
}

/// A loaded dataset directory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    pub sequence: Sequence,
}

impl Dataset {
    pub fn ground_truth(&self) -> Result<TimedTrajectory> {
        load_trajectory(&self.dir.join(&self.manifest.ground_truth))
    }
}

/// Camera-to-world pose at `eye` looking at `target` with image rows
/// pointing along world +y.
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>) -> Result<Pose> {
    let z = (target - eye)
        .try_normalize(1e-9)
        .ok_or_else(|| Error::InvalidArgument("look-at target coincides with the eye".into()))?;
    let x = Vector3::y()
        .cross(&z)
        .try_normalize(1e-9)
        .ok_or_else(|| Error::InvalidArgument("viewing direction is vertical".into()))?;
    let y = z.cross(&x);
    Ok(Pose::new(Rotation::from_matrix(Matrix3::from_columns(&[x, y, z]))?, *eye))
}

/// Ground-truth control points covering `[0, duration]`.
pub fn orbit_controls(orbit: &OrbitSpec, duration: f64, seed: u64) -> Result<ControlTrajectory> {
    let dt = orbit.control_dt;
    if !(dt > 0.0) || !(orbit.radius > 0.0) || !(orbit.bob_period > 0.0) || !(duration >= 0.0) {
        return Err(Error::InvalidArgument(format!("bad orbit {orbit:?} for duration {duration}")));
    }
    let count = (duration / dt).floor() as usize + 4;
    let t0 = -dt;
    let mut rng = derive_rng(seed, STREAM_ORBIT, 0, 0);
    let noise = Normal::new(0.0, orbit.perturb.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let target = Vector3::from(orbit.target);
    let mut controls = Vec::with_capacity(count);
    for k in 0..count {
        let t = t0 + k as f64 * dt;
        let theta = orbit.start_angle + orbit.angular_speed * t;
        let y = orbit.height + orbit.bob * (std::f64::consts::TAU * t / orbit.bob_period).sin();
        let mut eye = Vector3::new(target.x + orbit.radius * theta.sin(), y, target.z - orbit.radius * theta.cos());
        let mut look = target;
        for i in 0..3 {
            eye[i] += noise.sample(&mut rng);
            look[i] += noise.sample(&mut rng);
        }
        controls.push(look_at(&eye, &look)?);
    }
    ControlTrajectory::new(t0, dt, controls)
}

fn frame_name(dir: &str, index: usize, ext: &str) -> String {
    format!("{dir}/{index:06}.{ext}")
}

/// Pixels whose rendered depth strays further than this fraction of the
/// truncation from the traced surface get no depth measurement. This
/// happens on rays grazing a silhouette.
pub const DEPTH_CONSISTENCY: f64 = 0.25;

/// Renders one frame of `scene` as the dataset generator does: samples
/// are placed around the traced surface, and depth is dropped where the
/// rendered value disagrees with it.
pub fn render_frame(
    scene: &AnalyticScene,
    intrinsics: &CameraIntrinsics,
    pose: &Pose,
    settings: &RenderSettings,
    far: f64,
) -> Result<(Vec<[f64; 3]>, Vec<f64>)> {
    let n = intrinsics.pixel_count();
    let mut color = vec![[0.0; 3]; n];
    let mut depth = vec![0.0; n];
    let limit = DEPTH_CONSISTENCY * settings.truncation;
    for i in 0..n {
        let (u, v) = intrinsics.pixel_uv(i);
        let (o, r) = pixel_ray(u, v, intrinsics, pose)?;
        let Some(hit) = scene.trace(&o, &r, settings.near, far) else {
            continue;
        };
        let depths = sample_depths(settings, far, Some(hit), None)?;
        if let Some(px) = render_pixel(scene, &o, &r, &depths, settings.weight_scale) {
            color[i] = px.color;
            if (px.depth - hit).abs() <= limit {
                depth[i] = px.depth;
            }
        }
    }
    Ok((color, depth))
}

/// Writes a dataset to `out_dir` and returns its manifest. Output is a
/// pure function of `spec`.
pub fn generate_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.scene.validate()?;
    spec.intrinsics.validate()?;
    spec.render.validate()?;
    if !(spec.fps > 0.0 && spec.fps.is_finite()) || spec.frames == 0 {
        return Err(Error::InvalidArgument("need a positive fps and at least one frame".into()));
    }
    if !(spec.noise.depth_sigma >= 0.0) {
        return Err(Error::InvalidArgument("depth noise must be non-negative".into()));
    }
    if (spec.scene.truncation - spec.render.truncation).abs() > 1e-12 {
        return Err(Error::InvalidArgument("scene and renderer truncation differ".into()));
    }
    let times: Vec<f64> = (0..spec.frames).map(|k| k as f64 / spec.fps).collect();
    let duration = *times.last().expect("non-empty");
    let gt = orbit_controls(&spec.orbit, duration, spec.seed)?;
    let (lo, hi) = gt.domain();
    let stats = smoothness_report(&gt, (lo, hi))?;
    if stats.max_acceleration >= spec.orbit.max_acceleration {
        return Err(Error::InvalidArgument(format!(
            "ground-truth acceleration {:.3} m/s^2 exceeds the bound {}",
            stats.max_acceleration, spec.orbit.max_acceleration
        )));
    }
    let poses: Vec<Pose> = times.iter().map(|t| gt.eval_pose(*t)).collect::<Result<_>>()?;
    for (k, p) in poses.iter().enumerate() {
        if spec.scene.sdf(&p.translation) <= spec.render.near {
            return Err(Error::CameraOutOfBounds { frame: k });
        }
    }
    let far = spec.render.far_or(spec.scene.diameter());
    let k = spec.intrinsics;
    let rendered: Vec<(Vec<[f64; 3]>, Vec<f64>)> = poses
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let (color, mut depth) = render_frame(&spec.scene, &k, p, &spec.render, far)?;
            if color.iter().any(|c| *c == [0.0; 3]) && depth.iter().all(|d| *d <= 0.0) {
                return Err(Error::CameraOutOfBounds { frame: i });
            }
            add_depth_noise(&mut depth, spec.noise.depth_sigma, spec.seed, i);
            Ok((color, depth))
        })
        .collect::<Result<_>>()?;

    let mut frames = Vec::with_capacity(spec.frames);
    for (i, (color, depth)) in rendered.iter().enumerate() {
        let entry = FrameEntry {
            timestamp: Some(times[i]),
            color: frame_name("rgb", i, "ppm"),
            depth: frame_name("depth", i, "pfm"),
        };
        write_ppm(&out_dir.join(&entry.color), k.width, k.height, color)?;
        write_pfm(&out_dir.join(&entry.depth), k.width, k.height, 1, depth)?;
        frames.push(entry);
    }
    let gt_traj = TimedTrajectory::new(times.iter().copied().zip(poses).collect())?;
    save_trajectory(&out_dir.join(GROUND_TRUTH), &gt_traj)?;
    save_control_trajectory(&out_dir.join(GROUND_TRUTH_CONTROLS), &gt)?;
    let manifest = DatasetManifest {
        scene: spec.scene.clone(),
        intrinsics: k,
        fps: spec.fps,
        frame_count: spec.frames,
        frames,
        ground_truth: GROUND_TRUTH.into(),
        ground_truth_controls: Some(GROUND_TRUTH_CONTROLS.into()),
        noise: spec.noise,
        far,
        generator: Some(spec.clone()),
    };
    write_text(&out_dir.join(MANIFEST), &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    Ok(manifest)
}

/// Loads `dir/manifest.json` and every frame it references.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join(MANIFEST);
    let manifest: DatasetManifest = serde_json::from_str(&read_text(&mpath)?).map_err(|e| Error::Parse {
        path: mpath.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    manifest.validate(dir)?;
    let k = manifest.intrinsics;
    let frames = (0..manifest.frame_count)
        .into_par_iter()
        .map(|i| {
            let e = &manifest.frames[i];
            let cpath = dir.join(&e.color);
            let (w, h, color) = read_ppm(&cpath)?;
            let dpath = dir.join(&e.depth);
            let (dw, dh, ch, depth) = read_pfm(&dpath)?;
            let size_err = |p: &Path, msg: String| Error::Parse {
                path: p.to_path_buf(),
                line: 0,
                msg,
            };
            if (w, h) != (k.width, k.height) {
                return Err(size_err(&cpath, format!("image is {w}x{h}, intrinsics say {}x{}", k.width, k.height)));
            }
            if (dw, dh, ch) != (k.width, k.height, 1) {
                return Err(size_err(&dpath, format!("depth is {dw}x{dh}x{ch}, expected one channel at {}x{}", k.width, k.height)));
            }
            RgbdFrame::new(manifest.timestamp(i), k, color, depth).map_err(|e| size_err(&dpath, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let sequence = Sequence {
        frames,
        fps: manifest.fps,
        far: manifest.far,
        jitter_trans: manifest.noise.jitter_trans,
        jitter_rot: manifest.noise.jitter_rot,
    };
    Ok(Dataset {
        dir: dir.to_path_buf(),
        manifest,
        sequence,
    })
}

/// In-memory variant of [`generate_dataset`] used by tests and benches:
/// frames are rendered without quantization or files.
pub fn synthesize_sequence(spec: &DatasetSpec) -> Result<(Sequence, TimedTrajectory, ControlTrajectory)> {
    let times: Vec<f64> = (0..spec.frames).map(|k| k as f64 / spec.fps).collect();
    let gt = orbit_controls(&spec.orbit, *times.last().unwrap_or(&0.0), spec.seed)?;
    let far = spec.render.far_or(spec.scene.diameter());
    let poses: Vec<Pose> = times.iter().map(|t| gt.eval_pose(*t)).collect::<Result<_>>()?;
    let frames = poses
        .par_iter()
        .zip(&times)
        .enumerate()
        .map(|(i, (p, t))| {
            let (color, mut depth) = render_frame(&spec.scene, &spec.intrinsics, p, &spec.render, far)?;
            add_depth_noise(&mut depth, spec.noise.depth_sigma, spec.seed, i);
            RgbdFrame::new(*t, spec.intrinsics, color, depth)
        })
        .collect::<Result<Vec<_>>>()?;
    let gt_traj = TimedTrajectory::new(times.into_iter().zip(poses).collect())?;
    let seq = Sequence {
        frames,
        fps: spec.fps,
        far,
        jitter_trans: spec.noise.jitter_trans,
        jitter_rot: spec.noise.jitter_rot,
    };
    Ok((seq, gt_traj, gt))
}

fn add_depth_noise(depth: &mut [f64], sigma: f64, seed: u64, frame: usize) {
    if sigma <= 0.0 {
        return;
    }
    let mut rng = derive_rng(seed, STREAM_DEPTH, frame as u64, 0);
    for d in depth.iter_mut().filter(|d| **d > 0.0) {
        let n: f64 = rng.sample(StandardNormal);
        *d = (*d + sigma * n).max(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetSpec {
        DatasetSpec {
            intrinsics: CameraIntrinsics::centered(16, 12, 12.5),
            frames: 6,
            noise: NoiseSpec {
                depth_sigma: 0.0,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn timestamps_follow_fps() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset(&small(), dir.path()).unwrap();
        for i in 0..6 {
            assert_eq!(m.timestamp(i), i as f64 / 30.0);
        }
        let d = load_dataset(dir.path()).unwrap();
        assert_eq!(d.sequence.frames.len(), 6);
        assert_eq!(d.ground_truth().unwrap().len(), 6);
    }

    #[test]
    fn generation_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let mut spec = small();
        spec.noise.depth_sigma = 0.01;
        generate_dataset(&spec, a.path()).unwrap();
        generate_dataset(&spec, b.path()).unwrap();
        for f in ["manifest.json", "groundtruth.txt", "rgb/000003.ppm", "depth/000005.pfm"] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn camera_outside_room_rejected() {
        let mut spec = small();
        spec.orbit.radius = 2.0;
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(generate_dataset(&spec, dir.path()), Err(Error::CameraOutOfBounds { frame: 0 })));
    }

    #[test]
    fn look_at_axes() {
        let p = look_at(&Vector3::zeros(), &Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert!((p.rotation.matrix() - Matrix3::identity()).norm() < 1e-12);
    }
}
