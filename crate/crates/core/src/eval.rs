//! Trajectory alignment and error metrics.

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::{Pose, Rotation};
use crate::spline::ControlTrajectory;

/// Number of samples used by [`smoothness_report`].
pub const SMOOTHNESS_SAMPLES: usize = 1000;

/// Poses ordered by strictly increasing timestamp.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TimedTrajectory {
    entries: Vec<(f64, Pose)>,
}

impl TimedTrajectory {
    pub fn new(entries: Vec<(f64, Pose)>) -> Result<Self> {
        if let Some(w) = entries.windows(2).find(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::InvalidArgument(format!(
                "timestamps must increase strictly ({} then {})",
                w[0].0, w[1].0
            )));
        }
        if entries.iter().any(|(t, p)| !t.is_finite() || !p.is_finite()) {
            return Err(Error::NonFinite("trajectory entry".into()));
        }
        Ok(Self { entries })
    }

    /// Samples a spline at the given times.
    pub fn from_spline(traj: &ControlTrajectory, times: &[f64]) -> Result<Self> {
        let entries = times
            .iter()
            .map(|t| Ok((*t, traj.eval_pose(*t)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }

    pub fn entries(&self) -> &[(f64, Pose)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.0).collect()
    }

    /// Applies `transform * pose` to every entry.
    pub fn transformed(&self, transform: &Pose) -> Self {
        Self {
            entries: self.entries.iter().map(|(t, p)| (*t, transform.compose(p))).collect(),
        }
    }
}

/// Pairs `(est index, gt index)` matched by nearest timestamp within
/// `tolerance` seconds.
pub fn associate(est: &TimedTrajectory, gt: &TimedTrajectory, tolerance: f64) -> Vec<(usize, usize)> {
    let gt_times = gt.timestamps();
    let mut out: Vec<(usize, usize)> = Vec::new();
    for (i, (t, _)) in est.entries.iter().enumerate() {
        let j = gt_times.partition_point(|g| g < t);
        let best = [j.checked_sub(1), (j < gt_times.len()).then_some(j)]
            .into_iter()
            .flatten()
            .min_by(|a, b| (gt_times[*a] - t).abs().total_cmp(&(gt_times[*b] - t).abs()));
        if let Some(j) = best {
            if (gt_times[j] - t).abs() <= tolerance && out.last().is_none_or(|l| l.1 < j) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Association tolerance for a frame rate: half a frame period.
pub fn association_tolerance(fps: f64) -> f64 {
    0.5 / fps
}

/// Rigid transform `T` minimizing `sum |gt_i - T est_i|^2` (closed-form
/// quaternion solution, no scale).
pub fn horn_align(est: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Pose> {
    if est.len() != gt.len() {
        return Err(Error::InvalidArgument("point sets differ in size".into()));
    }
    if est.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "alignment needs at least 3 associated pairs, got {}",
            est.len()
        )));
    }
    let n = est.len() as f64;
    let ce = est.iter().sum::<Vector3<f64>>() / n;
    let cg = gt.iter().sum::<Vector3<f64>>() / n;
    let mut s = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (e, g) in est.iter().zip(gt) {
        let a = e - ce;
        s += a * (g - cg).transpose();
        spread += a * a.transpose();
    }
    let ev = spread.symmetric_eigenvalues();
    let (lo, hi) = (ev.min(), ev.max());
    let mid = ev.sum() - lo - hi;
    if hi <= 0.0 || mid <= 1e-12 * hi {
        return Err(Error::DegenerateAlignment("associated positions are collinear".into()));
    }
    let (sxx, sxy, sxz) = (s[(0, 0)], s[(0, 1)], s[(0, 2)]);
    let (syx, syy, syz) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
    let (szx, szy, szz) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);
    #[rustfmt::skip]
    let nmat = Matrix4::new(
        sxx + syy + szz, syz - szy,       szx - sxz,       sxy - syx,
        syz - szy,       sxx - syy - szz, sxy + syx,       szx + sxz,
        szx - sxz,       sxy + syx,       -sxx + syy - szz, syz + szy,
        sxy - syx,       szx + sxz,       syz + szy,       -sxx - syy + szz,
    );
    let eig = nmat.symmetric_eigen();
    let k = eig.eigenvalues.imax();
    let q = eig.eigenvectors.column(k);
    let uq = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
    let rotation = Rotation::from_matrix(*uq.to_rotation_matrix().matrix())?;
    let translation = cg - rotation * ce;
    Ok(Pose::new(rotation, translation))
}

/// Associated, aligned position pairs of two trajectories.
#[derive(Clone, Debug)]
pub struct Alignment {
    pub pairs: Vec<(usize, usize)>,
    /// Maps estimate coordinates onto ground truth.
    pub transform: Pose,
}

pub fn align_trajectories(est: &TimedTrajectory, gt: &TimedTrajectory, tolerance: f64) -> Result<Alignment> {
    let pairs = associate(est, gt, tolerance);
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no timestamps could be associated".into()));
    }
    let pe: Vec<_> = pairs.iter().map(|(i, _)| est.entries[*i].1.translation).collect();
    let pg: Vec<_> = pairs.iter().map(|(_, j)| gt.entries[*j].1.translation).collect();
    let transform = horn_align(&pe, &pg)?;
    Ok(Alignment { pairs, transform })
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    (sum / n as f64).sqrt()
}

/// Absolute trajectory error after rigid alignment, in centimeters.
pub fn ate_rmse(est: &TimedTrajectory, gt: &TimedTrajectory, tolerance: f64) -> Result<f64> {
    let al = align_trajectories(est, gt, tolerance)?;
    Ok(ate_with_alignment(est, gt, &al))
}

fn ate_with_alignment(est: &TimedTrajectory, gt: &TimedTrajectory, al: &Alignment) -> f64 {
    100.0
        * rms(al.pairs.iter().map(|(i, j)| {
            (gt.entries[*j].1.translation - al.transform.transform_point(&est.entries[*i].1.translation)).norm()
        }))
}

/// Relative pose error over `interval` associated frames: translational
/// RMSE in centimeters and rotational RMSE in degrees.
pub fn rpe(est: &TimedTrajectory, gt: &TimedTrajectory, interval: usize, tolerance: f64) -> Result<(f64, f64)> {
    let pairs = associate(est, gt, tolerance);
    if interval == 0 || pairs.len() < interval + 1 {
        return Err(Error::InsufficientData(format!(
            "relative error at interval {interval} needs {} associated frames, got {}",
            interval + 1,
            pairs.len()
        )));
    }
    let mut trans = Vec::new();
    let mut rot = Vec::new();
    for k in 0..pairs.len() - interval {
        let (pa, qa) = pairs[k];
        let (pb, qb) = pairs[k + interval];
        let dp = est.entries[pa].1.inverse().compose(&est.entries[pb].1);
        let dq = gt.entries[qa].1.inverse().compose(&gt.entries[qb].1);
        let e = dq.inverse().compose(&dp);
        trans.push(e.translation.norm());
        rot.push(e.rotation.angle().to_degrees());
    }
    Ok((100.0 * rms(trans.into_iter()), rms(rot.into_iter())))
}

/// Translational relative pose error in centimeters.
pub fn rpe_rmse(est: &TimedTrajectory, gt: &TimedTrajectory, interval: usize, tolerance: f64) -> Result<f64> {
    Ok(rpe(est, gt, interval, tolerance)?.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessStats {
    /// m/s^2
    pub max_acceleration: f64,
    pub mean_acceleration: f64,
    /// rad/s^2
    pub max_angular_acceleration: f64,
    pub mean_angular_acceleration: f64,
    /// rad/s
    pub max_angular_velocity: f64,
}

/// Kinematic extrema over [`SMOOTHNESS_SAMPLES`] evenly spaced midpoints
/// of `[ta, tb)`.
pub fn smoothness_report(traj: &ControlTrajectory, domain: (f64, f64)) -> Result<SmoothnessStats> {
    let (ta, tb) = domain;
    let (start, end) = traj.domain();
    if !(ta < tb) || ta < start || tb > end {
        return Err(Error::OutOfDomain {
            t: if ta < start { ta } else { tb },
            start,
            end,
        });
    }
    let mut s = SmoothnessStats::default();
    for t in crate::dynamics::sample_times(ta, tb, SMOOTHNESS_SAMPLES) {
        let k = traj.kinematics(t)?;
        let a = k.acceleration.norm();
        let w = k.angular_acceleration.norm();
        s.max_acceleration = s.max_acceleration.max(a);
        s.max_angular_acceleration = s.max_angular_acceleration.max(w);
        s.max_angular_velocity = s.max_angular_velocity.max(k.angular_velocity.norm());
        s.mean_acceleration += a;
        s.mean_angular_acceleration += w;
    }
    s.mean_acceleration /= SMOOTHNESS_SAMPLES as f64;
    s.mean_angular_acceleration /= SMOOTHNESS_SAMPLES as f64;
    Ok(s)
}

/// Rigid transform in file-friendly form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub translation: [f64; 3],
    /// x, y, z, w
    pub quaternion: [f64; 4],
}

impl From<&Pose> for TransformRecord {
    fn from(p: &Pose) -> Self {
        Self {
            translation: [p.translation.x, p.translation.y, p.translation.z],
            quaternion: p.rotation.to_quaternion_xyzw(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub pairs: usize,
    pub ate_rmse_cm: f64,
    pub rpe_interval: usize,
    pub rpe_rmse_cm: f64,
    pub rpe_rot_rmse_deg: f64,
    pub alignment: TransformRecord,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub smoothness: Option<SmoothnessStats>,
}

impl TrajectoryReport {
    pub fn compute(
        est: &TimedTrajectory,
        gt: &TimedTrajectory,
        fps: f64,
        rpe_interval: usize,
        spline: Option<&ControlTrajectory>,
    ) -> Result<Self> {
        let tol = association_tolerance(fps);
        let al = align_trajectories(est, gt, tol)?;
        let (rpe_t, rpe_r) = rpe(est, gt, rpe_interval, tol)?;
        let smoothness = match spline {
            Some(s) => Some(smoothness_report(s, s.domain())?),
            None => None,
        };
        Ok(Self {
            pairs: al.pairs.len(),
            ate_rmse_cm: ate_with_alignment(est, gt, &al),
            rpe_interval,
            rpe_rmse_cm: rpe_t,
            rpe_rot_rmse_deg: rpe_r,
            alignment: TransformRecord::from(&al.transform),
            smoothness,
        })
    }

    /// Human-readable table.
    pub fn table(&self) -> String {
        let mut rows = vec![
            ("associated pairs".to_string(), format!("{}", self.pairs)),
            ("ATE RMSE [cm]".to_string(), format!("{:.4}", self.ate_rmse_cm)),
            (format!("RPE({}) RMSE [cm]", self.rpe_interval), format!("{:.4}", self.rpe_rmse_cm)),
            (format!("RPE({}) RMSE [deg]", self.rpe_interval), format!("{:.4}", self.rpe_rot_rmse_deg)),
        ];
        if let Some(s) = &self.smoothness {
            rows.push(("max |a| [m/s^2]".into(), format!("{:.4}", s.max_acceleration)));
            rows.push(("mean |a| [m/s^2]".into(), format!("{:.4}", s.mean_acceleration)));
            rows.push(("max |w_dot| [rad/s^2]".into(), format!("{:.4}", s.max_angular_acceleration)));
            rows.push(("mean |w_dot| [rad/s^2]".into(), format!("{:.4}", s.mean_angular_acceleration)));
        }
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        rows.iter()
            .map(|(k, v)| format!("{k:<width$}  {v}\n"))
            .collect()
    }
}

/// Top-down (x, z) line plot of aligned trajectories as an SVG document.
pub fn plot_svg(series: &[(&str, &str, Vec<Vector3<f64>>)]) -> String {
    const SIZE: f64 = 480.0;
    const PAD: f64 = 24.0;
    let pts = series.iter().flat_map(|s| s.2.iter());
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in pts {
        for (a, c) in [p.x, p.z].into_iter().enumerate() {
            lo[a] = lo[a].min(c);
            hi[a] = hi[a].max(c);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-6);
    let scale = (SIZE - 2.0 * PAD) / span;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    for (k, (name, color, points)) in series.iter().enumerate() {
        let coords: Vec<String> = points
            .iter()
            .map(|p| {
                let x = PAD + (p.x - lo[0]) * scale;
                let y = SIZE - PAD - (p.z - lo[1]) * scale;
                format!("{x:.2},{y:.2}")
            })
            .collect();
        out += &format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n\
             <text x=\"{PAD}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{name}</text>\n",
            coords.join(" "),
            PAD + 14.0 * k as f64
        );
    }
    out += "</svg>\n";
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::exp_so3;

    fn ramp(n: usize) -> TimedTrajectory {
        let entries = (0..n)
            .map(|k| {
                let f = k as f64;
                let r = exp_so3(&Vector3::new(0.01 * f, 0.02, -0.005 * f)).unwrap();
                (f / 30.0, Pose::new(r, Vector3::new(0.1 * f, (0.3 * f).sin(), 0.02 * f * f)))
            })
            .collect();
        TimedTrajectory::new(entries).unwrap()
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let t = ramp(20);
        let tol = association_tolerance(30.0);
        assert!(ate_rmse(&t, &t, tol).unwrap() < 1e-12);
        assert!(rpe_rmse(&t, &t, 1, tol).unwrap() < 1e-12);
        let al = align_trajectories(&t, &t, tol).unwrap();
        assert!((al.transform.rotation.matrix() - Matrix3::identity()).amax() < 1e-12);
    }

    #[test]
    fn rejects_collinear_and_short_inputs() {
        let line: Vec<_> = (0..5).map(|k| Vector3::new(k as f64, 0.0, 0.0)).collect();
        assert!(matches!(horn_align(&line, &line), Err(Error::DegenerateAlignment(_))));
        assert!(matches!(horn_align(&line[..2], &line[..2]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn association_skips_far_timestamps() {
        let gt = ramp(10);
        let est = TimedTrajectory::new(vec![
            (0.001, Pose::identity()),
            (2.0 / 30.0, Pose::identity()),
            (1.0, Pose::identity()),
        ])
        .unwrap();
        assert_eq!(associate(&est, &gt, association_tolerance(30.0)), vec![(0, 0), (1, 2)]);
    }

    #[test]
    fn rejects_unordered_timestamps() {
        assert!(TimedTrajectory::new(vec![(1.0, Pose::identity()), (1.0, Pose::identity())]).is_err());
    }

    #[test]
    fn stationary_smoothness_is_zero() {
        let traj = ControlTrajectory::new(0.0, 0.3, vec![Pose::identity(); 6]).unwrap();
        let s = smoothness_report(&traj, traj.domain()).unwrap();
        assert_eq!(s, SmoothnessStats::default());
        assert!(smoothness_report(&traj, (0.0, 1.0)).is_err());
    }

    #[test]
    fn report_table_and_json() {
        let t = ramp(20);
        let r = TrajectoryReport::compute(&t, &t, 30.0, 1, None).unwrap();
        assert!(r.table().contains("ATE RMSE [cm]"));
        let back: TrajectoryReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn svg_contains_polylines() {
        let pts = vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 1.0)];
        let svg = plot_svg(&[("gt", "black", pts.clone()), ("est", "red", pts)]);
        assert_eq!(svg.matches("<polyline").count(), 2);
    }
}
