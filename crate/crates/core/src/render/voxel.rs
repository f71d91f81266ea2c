use nalgebra::Vector3;

use super::map::{MapGradient, MapModel, MapQuery, MapSample, Stencil};
use crate::error::{Error, Result};

/// Values stored per voxel: sdf, r, g, b.
pub const CHANNELS: usize = 4;

/// Dense grid of (sdf, rgb) samples with trilinear interpolation.
///
/// Voxel `(i, j, k)` sits at `origin + cell_size * (i, j, k)`. Queries
/// outside the grid return the background color and `+truncation`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelMap {
    origin: Vector3<f64>,
    cell_size: f64,
    dims: [usize; 3],
    truncation: f64,
    background: [f64; 3],
    params: Vec<f64>,
}

pub const INIT_COLOR: f64 = 0.5;

impl VoxelMap {
    /// Free-space prior: every sdf at `+truncation`, every color mid-gray.
    pub fn new(
        origin: Vector3<f64>,
        cell_size: f64,
        dims: [usize; 3],
        truncation: f64,
        background: [f64; 3],
    ) -> Result<Self> {
        if !(cell_size > 0.0) || !(truncation > 0.0) || dims.iter().any(|d| *d < 2) {
            return Err(Error::InvalidArgument(format!(
                "voxel grid needs positive cell size and truncation and >= 2 voxels per axis \
                 (cell {cell_size}, tr {truncation}, dims {dims:?})"
            )));
        }
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("voxel grid origin".into()));
        }
        let n = dims[0] * dims[1] * dims[2];
        let mut params = Vec::with_capacity(n * CHANNELS);
        for _ in 0..n {
            params.extend_from_slice(&[truncation, INIT_COLOR, INIT_COLOR, INIT_COLOR]);
        }
        Ok(Self {
            origin,
            cell_size,
            dims,
            truncation,
            background,
            params,
        })
    }

    /// Cube of side `2 * half_extent` centered on `center`.
    pub fn cube(center: Vector3<f64>, half_extent: f64, cell_size: f64, truncation: f64) -> Result<Self> {
        let n = ((2.0 * half_extent / cell_size).ceil() as usize + 1).max(2);
        let span = (n - 1) as f64 * cell_size;
        let origin = center - Vector3::repeat(span / 2.0);
        Self::new(origin, cell_size, [n, n, n], truncation, [INIT_COLOR; 3])
    }

    pub fn origin(&self) -> &Vector3<f64> {
        &self.origin
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    #[inline]
    pub fn voxel_index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn voxel_position(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.origin + Vector3::new(i as f64, j as f64, k as f64) * self.cell_size
    }

    /// Sets the (sdf, rgb) of one voxel.
    pub fn set_voxel(&mut self, i: usize, j: usize, k: usize, sdf: f64, color: [f64; 3]) {
        let b = CHANNELS * self.voxel_index(i, j, k);
        self.params[b] = sdf;
        self.params[b + 1..b + 4].copy_from_slice(&color);
    }

    /// Fills every voxel from a function of its position.
    pub fn fill_with(&mut self, f: impl Fn(&Vector3<f64>) -> (f64, [f64; 3])) {
        for k in 0..self.dims[2] {
            for j in 0..self.dims[1] {
                for i in 0..self.dims[0] {
                    let (s, c) = f(&self.voxel_position(i, j, k));
                    self.set_voxel(i, j, k, s, c);
                }
            }
        }
    }

    #[inline]
    fn locate(&self, x: &Vector3<f64>) -> Option<Stencil> {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let p = (x[a] - self.origin[a]) / self.cell_size;
            let max = (self.dims[a] - 1) as f64;
            if !(p >= 0.0 && p <= max) {
                return None;
            }
            let i = (p.floor() as usize).min(self.dims[a] - 2);
            base[a] = i;
            frac[a] = p - i as f64;
        }
        Some(Stencil {
            base: self.voxel_index(base[0], base[1], base[2]),
            frac,
        })
    }

    /// Parameter offsets of the 8 corners, ordered by (dz, dy, dx) bits.
    #[inline]
    fn corners(&self, base: usize) -> [usize; 8] {
        let sx = 1;
        let sy = self.dims[0];
        let sz = self.dims[0] * self.dims[1];
        let mut out = [0; 8];
        for (c, o) in out.iter_mut().enumerate() {
            let off = (c & 1) * sx + ((c >> 1) & 1) * sy + ((c >> 2) & 1) * sz;
            *o = CHANNELS * (base + off);
        }
        out
    }

    #[inline]
    fn corner_weights(frac: &[f64; 3]) -> [f64; 8] {
        let [fx, fy, fz] = *frac;
        let wx = [1.0 - fx, fx];
        let wy = [1.0 - fy, fy];
        let wz = [1.0 - fz, fz];
        std::array::from_fn(|c| wx[c & 1] * wy[(c >> 1) & 1] * wz[(c >> 2) & 1])
    }

    fn outside(&self) -> MapSample {
        MapSample {
            color: self.background,
            sdf: self.truncation,
        }
    }
}

impl MapModel for VoxelMap {
    fn truncation(&self) -> f64 {
        self.truncation
    }

    fn query(&self, x: &Vector3<f64>) -> MapSample {
        let Some(st) = self.locate(x) else {
            return self.outside();
        };
        let w = Self::corner_weights(&st.frac);
        let mut v = [0.0; CHANNELS];
        for (o, wc) in self.corners(st.base).iter().zip(w.iter()) {
            for ch in 0..CHANNELS {
                v[ch] += wc * self.params[o + ch];
            }
        }
        MapSample {
            color: [v[1], v[2], v[3]],
            sdf: v[0],
        }
    }

    fn query_diff(&self, x: &Vector3<f64>) -> MapQuery {
        let Some(st) = self.locate(x) else {
            return MapQuery {
                sample: self.outside(),
                gradient: MapGradient::zero(),
                stencil: None,
            };
        };
        let [fx, fy, fz] = st.frac;
        let corners = self.corners(st.base);
        let c: [[f64; CHANNELS]; 8] = std::array::from_fn(|n| {
            let o = corners[n];
            [self.params[o], self.params[o + 1], self.params[o + 2], self.params[o + 3]]
        });
        let inv = 1.0 / self.cell_size;
        let mut v = [0.0; CHANNELS];
        let mut g = [[0.0; 3]; CHANNELS];
        for ch in 0..CHANNELS {
            // interpolate along x, then y, then z, keeping partials
            let x00 = c[0][ch] + fx * (c[1][ch] - c[0][ch]);
            let x10 = c[2][ch] + fx * (c[3][ch] - c[2][ch]);
            let x01 = c[4][ch] + fx * (c[5][ch] - c[4][ch]);
            let x11 = c[6][ch] + fx * (c[7][ch] - c[6][ch]);
            let y0 = x00 + fy * (x10 - x00);
            let y1 = x01 + fy * (x11 - x01);
            v[ch] = y0 + fz * (y1 - y0);

            let dx00 = c[1][ch] - c[0][ch];
            let dx10 = c[3][ch] - c[2][ch];
            let dx01 = c[5][ch] - c[4][ch];
            let dx11 = c[7][ch] - c[6][ch];
            let dx0 = dx00 + fy * (dx10 - dx00);
            let dx1 = dx01 + fy * (dx11 - dx01);
            g[ch][0] = (dx0 + fz * (dx1 - dx0)) * inv;
            let dy0 = x10 - x00;
            let dy1 = x11 - x01;
            g[ch][1] = (dy0 + fz * (dy1 - dy0)) * inv;
            g[ch][2] = (y1 - y0) * inv;
        }
        let vec = |a: [f64; 3]| Vector3::new(a[0], a[1], a[2]);
        MapQuery {
            sample: MapSample {
                color: [v[1], v[2], v[3]],
                sdf: v[0],
            },
            gradient: MapGradient {
                sdf: vec(g[0]),
                color: [vec(g[1]), vec(g[2]), vec(g[3])],
            },
            stencil: Some(st),
        }
    }

    fn parameter_count(&self) -> usize {
        self.params.len()
    }

    #[inline]
    fn scatter_gradient(&self, stencil: &Stencil, d_sdf: f64, d_color: &[f64; 3], out: &mut [f64]) {
        let w = Self::corner_weights(&stencil.frac);
        for (o, wc) in self.corners(stencil.base).iter().zip(w.iter()) {
            out[*o] += wc * d_sdf;
            out[o + 1] += wc * d_color[0];
            out[o + 2] += wc * d_color[1];
            out[o + 3] += wc * d_color[2];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_map() -> VoxelMap {
        let mut m = VoxelMap::new(Vector3::new(-1.0, -1.0, -1.0), 0.5, [5, 5, 5], 0.1, [0.0; 3]).unwrap();
        m.fill_with(|p| (p.x + 2.0 * p.y - p.z, [p.x, p.y * p.z, 0.3]));
        m
    }

    #[test]
    fn initial_map_is_free_space() {
        let m = VoxelMap::cube(Vector3::zeros(), 1.0, 0.25, 0.1).unwrap();
        let s = m.query(&Vector3::new(0.1, -0.3, 0.2));
        assert!((s.sdf - 0.1).abs() < 1e-15);
        assert!(s.color.iter().all(|c| (*c - 0.5).abs() < 1e-15));
    }

    #[test]
    fn trilinear_reproduces_linear_fields() {
        let m = ramp_map();
        let x = Vector3::new(0.13, -0.41, 0.77);
        let q = m.query_diff(&x);
        assert!((q.sample.sdf - (x.x + 2.0 * x.y - x.z)).abs() < 1e-12);
        assert!((q.gradient.sdf - Vector3::new(1.0, 2.0, -1.0)).amax() < 1e-12);
        assert!((q.sample.color[0] - x.x).abs() < 1e-12);
        assert_eq!(m.query(&x), q.sample);
    }

    #[test]
    fn outside_returns_background_and_truncation() {
        let m = ramp_map();
        let q = m.query_diff(&Vector3::new(1.01, 0.0, 0.0));
        assert_eq!(q.sample.sdf, 0.1);
        assert_eq!(q.sample.color, [0.0; 3]);
        assert!(q.stencil.is_none());
        // the far face itself is inside
        assert!(m.query_diff(&Vector3::new(1.0, 1.0, 1.0)).stencil.is_some());
    }

    #[test]
    fn spatial_gradient_matches_finite_differences() {
        let mut m = ramp_map();
        m.fill_with(|p| ((3.0 * p.x).sin() * p.y + p.z * p.z, [p.x * p.y, (p.z).cos(), p.y]));
        let x = Vector3::new(0.31, 0.12, -0.43);
        let q = m.query_diff(&x);
        let h = 1e-7;
        for a in 0..3 {
            let mut e = Vector3::zeros();
            e[a] = h;
            let p = m.query(&(x + e));
            let n = m.query(&(x - e));
            assert!(((p.sdf - n.sdf) / (2.0 * h) - q.gradient.sdf[a]).abs() < 1e-6);
            for ch in 0..3 {
                let fd = (p.color[ch] - n.color[ch]) / (2.0 * h);
                assert!((fd - q.gradient.color[ch][a]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn scatter_is_adjoint_of_query() {
        let m = ramp_map();
        let x = Vector3::new(-0.2, 0.6, 0.05);
        let q = m.query_diff(&x);
        let mut g = vec![0.0; m.parameter_count()];
        m.scatter_gradient(&q.stencil.unwrap(), 1.0, &[0.0, 0.0, 0.0], &mut g);
        let dot: f64 = g.iter().zip(m.params()).map(|(a, b)| a * b).sum();
        assert!((dot - q.sample.sdf).abs() < 1e-12);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
