use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics. Pixel `(col, row)` has its center at `(col, row)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    /// Principal point at the image center.
    pub fn centered(width: usize, height: usize, focal: f64) -> Self {
        Self {
            fx: focal,
            fy: focal,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidArgument(format!("bad focal lengths in {self:?}")));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("empty image".into()));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::InvalidArgument(format!(
                "principal point ({}, {}) outside the image",
                self.cx, self.cy
            )));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        (0.0..self.width as f64).contains(&u) && (0.0..self.height as f64).contains(&v)
    }

    /// `K^-1 [u, v, 1]^T`: the back-projected ray with unit z.
    #[inline]
    pub fn backproject(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Pixel center of a row-major pixel index.
    #[inline]
    pub fn pixel_uv(&self, index: usize) -> (f64, f64) {
        ((index % self.width) as f64, (index / self.width) as f64)
    }

    /// Projects a camera-frame point; `None` behind the camera or outside.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        let u = self.fx * p.x / p.z + self.cx;
        let v = self.fy * p.y / p.z + self.cy;
        self.contains(u, v).then_some((u, v))
    }
}

/// One RGB-D observation. Images are row-major; depth is z-depth in
/// meters with 0 marking invalid pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbdFrame {
    pub timestamp: f64,
    pub intrinsics: CameraIntrinsics,
    pub color: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
}

impl RgbdFrame {
    pub fn new(
        timestamp: f64,
        intrinsics: CameraIntrinsics,
        color: Vec<[f64; 3]>,
        depth: Vec<f64>,
    ) -> Result<Self> {
        let frame = Self {
            timestamp,
            intrinsics,
            color,
            depth,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        let n = self.intrinsics.pixel_count();
        if self.color.len() != n || self.depth.len() != n {
            return Err(Error::InvalidArgument(format!(
                "image buffers have {} color / {} depth entries for {n} pixels",
                self.color.len(),
                self.depth.len()
            )));
        }
        if !self.timestamp.is_finite() {
            return Err(Error::NonFinite("frame timestamp".into()));
        }
        if self.color.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("color image".into()));
        }
        if self.depth.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidArgument("depth must be finite and non-negative".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn has_depth(&self, index: usize) -> bool {
        self.depth[index] > 0.0
    }
}
