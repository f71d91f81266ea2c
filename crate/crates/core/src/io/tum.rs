//! TUM trajectory text: `timestamp tx ty tz qx qy qz qw` per line, `#`
//! starts a comment.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{read_text, write_text};
use crate::error::{Error, Result};
use crate::eval::TimedTrajectory;
use crate::se3::{Pose, Rotation};
use crate::spline::ControlTrajectory;

fn field(v: f64) -> String {
    // shortest representation that parses back to the same value
    if v == 0.0 {
        "0".into()
    } else {
        format!("{v}")
    }
}

/// One line, no trailing newline.
pub fn format_line(t: f64, pose: &Pose) -> String {
    let q = pose.rotation.to_quaternion_xyzw();
    let p = pose.translation;
    let mut s = format!("{t:.9}");
    for v in [p.x, p.y, p.z, q[0], q[1], q[2], q[3]] {
        s.push(' ');
        s.push_str(&field(v));
    }
    s
}

pub fn format_trajectory(traj: &TimedTrajectory) -> String {
    let mut s = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for (t, p) in traj.entries() {
        let _ = writeln!(s, "{}", format_line(*t, p));
    }
    s
}

/// Parses trajectory text; `path` only labels errors.
pub fn parse_trajectory(text: &str, path: &Path) -> Result<TimedTrajectory> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut entries: Vec<(f64, Pose)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let parts: Vec<&str> = body.split_whitespace().collect();
        if parts.len() != 8 {
            return Err(err(line, format!("expected 8 fields, found {}", parts.len())));
        }
        let mut v = [0.0; 8];
        for (k, p) in parts.iter().enumerate() {
            let x: f64 = p.parse().map_err(|_| err(line, format!("field {} is not a number: {p:?}", k + 1)))?;
            if !x.is_finite() {
                return Err(err(line, format!("field {} is not finite", k + 1)));
            }
            v[k] = x;
        }
        let rotation = Rotation::from_quaternion_xyzw([v[4], v[5], v[6], v[7]]).map_err(|e| err(line, e.to_string()))?;
        if let Some((prev, _)) = entries.last() {
            if !(v[0] > *prev) {
                return Err(err(line, format!("timestamp {} does not increase", v[0])));
            }
        }
        entries.push((v[0], Pose::new(rotation, Vector3::new(v[1], v[2], v[3]))));
    }
    TimedTrajectory::new(entries).map_err(|e| err(0, e.to_string()))
}

pub fn save_trajectory(path: &Path, traj: &TimedTrajectory) -> Result<()> {
    write_text(path, &format_trajectory(traj))
}

pub fn load_trajectory(path: &Path) -> Result<TimedTrajectory> {
    parse_trajectory(&read_text(path)?, path)
}

/// Knot layout stored next to a control-point file.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnotSidecar {
    pub t0: f64,
    pub dt: f64,
    pub count: usize,
}

/// Path of the JSON sidecar for a control-point file.
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("json")
}

/// Writes controls as TUM lines stamped `t0 + k dt`, plus the sidecar.
pub fn save_control_trajectory(path: &Path, traj: &ControlTrajectory) -> Result<()> {
    let g = traj.grid();
    let timed = TimedTrajectory::new(
        traj.controls()
            .iter()
            .enumerate()
            .map(|(k, p)| (g.knot_time(k), *p))
            .collect(),
    )?;
    save_trajectory(path, &timed)?;
    let side = KnotSidecar {
        t0: g.t0,
        dt: g.dt,
        count: traj.len(),
    };
    write_text(&sidecar_path(path), &(serde_json::to_string_pretty(&side)? + "\n"))
}

pub fn load_control_trajectory(path: &Path) -> Result<ControlTrajectory> {
    let side_path = sidecar_path(path);
    let side: KnotSidecar = serde_json::from_str(&read_text(&side_path)?)?;
    let timed = load_trajectory(path)?;
    if timed.len() != side.count {
        return Err(Error::Parse {
            path: side_path,
            line: 0,
            msg: format!("count {} but {} control lines", side.count, timed.len()),
        });
    }
    for (k, (t, _)) in timed.entries().iter().enumerate() {
        let expect = side.t0 + k as f64 * side.dt;
        if (t - expect).abs() > 1e-6 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: format!("control {k} stamped {t}, expected {expect}"),
            });
        }
    }
    ControlTrajectory::new(side.t0, side.dt, timed.entries().iter().map(|(_, p)| *p).collect())
}
