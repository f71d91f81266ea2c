use nalgebra::Vector3;

/// Color and signed distance at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapSample {
    pub color: [f64; 3],
    pub sdf: f64,
}

/// Spatial derivatives of a [`MapSample`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapGradient {
    pub sdf: Vector3<f64>,
    pub color: [Vector3<f64>; 3],
}

impl MapGradient {
    pub fn zero() -> Self {
        Self {
            sdf: Vector3::zeros(),
            color: [Vector3::zeros(); 3],
        }
    }
}

/// Location of a query inside a parameterized map: first voxel of the
/// 2x2x2 cell and the fractional position inside it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stencil {
    pub base: usize,
    pub frac: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapQuery {
    pub sample: MapSample,
    pub gradient: MapGradient,
    /// Present only for maps with optimizable parameters.
    pub stencil: Option<Stencil>,
}

/// A scene function `x -> (color, sdf)`.
pub trait MapModel: Send + Sync {
    /// Truncation distance in meters.
    fn truncation(&self) -> f64;

    fn query(&self, x: &Vector3<f64>) -> MapSample;

    fn query_diff(&self, x: &Vector3<f64>) -> MapQuery;

    /// Number of optimizable scalars; zero for fixed maps.
    fn parameter_count(&self) -> usize {
        0
    }

    /// Adds `d_sdf` / `d_color` (loss derivatives with respect to the
    /// queried values) to the parameter gradient `out`.
    fn scatter_gradient(&self, _stencil: &Stencil, _d_sdf: f64, _d_color: &[f64; 3], _out: &mut [f64]) {}
}
