use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::map::{MapGradient, MapModel, MapQuery, MapSample};
use crate::error::{Error, Result};

/// Spatial period of the procedural texture, meters.
pub const TEXTURE_PERIOD: f64 = 0.4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    /// Interior of an axis-aligned box; the walls face inward.
    Room {
        center: [f64; 3],
        half_extents: [f64; 3],
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    Cuboid {
        center: [f64; 3],
        half_extents: [f64; 3],
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Primitive {
    pub shape: Shape,
    pub albedo: [f64; 3],
}

/// Exact signed distance of an axis-aligned box and its gradient.
fn box_sdf(x: &Vector3<f64>, center: &[f64; 3], half: &[f64; 3]) -> (f64, Vector3<f64>) {
    let p = x - Vector3::from(*center);
    let q = Vector3::from_fn(|a, _| p[a].abs() - half[a]);
    let sign = Vector3::from_fn(|a, _| if p[a] < 0.0 { -1.0 } else { 1.0 });
    let outside = q.map(|v| v.max(0.0));
    let n = outside.norm();
    if n > 0.0 {
        let g = outside.component_mul(&sign) / n;
        return (n, g);
    }
    // inside: distance to the nearest face
    let a = q.imax();
    let mut g = Vector3::zeros();
    g[a] = sign[a];
    (q[a], g)
}

impl Shape {
    pub fn sdf_and_gradient(&self, x: &Vector3<f64>) -> (f64, Vector3<f64>) {
        match self {
            Shape::Room { center, half_extents } => {
                let (s, g) = box_sdf(x, center, half_extents);
                (-s, -g)
            }
            Shape::Sphere { center, radius } => {
                let p = x - Vector3::from(*center);
                let n = p.norm();
                let g = if n > 0.0 { p / n } else { Vector3::z() };
                (n - radius, g)
            }
            Shape::Cuboid { center, half_extents } => box_sdf(x, center, half_extents),
        }
    }

    fn validate(&self) -> Result<()> {
        let (c, sizes): (&[f64; 3], Vec<f64>) = match self {
            Shape::Room { center, half_extents } | Shape::Cuboid { center, half_extents } => {
                (center, half_extents.to_vec())
            }
            Shape::Sphere { center, radius } => (center, vec![*radius]),
        };
        if c.iter().chain(sizes.iter()).any(|v| !v.is_finite()) || sizes.iter().any(|v| *v <= 0.0) {
            return Err(Error::InvalidArgument(format!("bad primitive {self:?}")));
        }
        Ok(())
    }
}

/// Closed-form scene: union of primitives with a procedural texture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticScene {
    pub primitives: Vec<Primitive>,
    /// Per-axis texture phases.
    pub phases: [f64; 3],
    pub truncation: f64,
}

impl AnalyticScene {
    pub fn new(primitives: Vec<Primitive>, phases: [f64; 3], truncation: f64) -> Result<Self> {
        let scene = Self {
            primitives,
            phases,
            truncation,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::InvalidArgument("scene has no primitives".into()));
        }
        if !(self.truncation > 0.0) {
            return Err(Error::InvalidArgument("truncation must be positive".into()));
        }
        for p in &self.primitives {
            p.shape.validate()?;
            if p.albedo.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(Error::InvalidArgument(format!("albedo {:?} outside [0, 1]", p.albedo)));
            }
        }
        Ok(())
    }

    /// Desk-sized room with a table, a box and two spheres.
    pub fn desk(truncation: f64) -> Self {
        let prim = |shape, albedo| Primitive { shape, albedo };
        Self {
            primitives: vec![
                prim(
                    Shape::Room {
                        center: [0.0, 0.0, 0.0],
                        half_extents: [1.5, 1.0, 1.5],
                    },
                    [0.85, 0.8, 0.7],
                ),
                prim(
                    Shape::Cuboid {
                        center: [0.0, 0.55, 0.0],
                        half_extents: [0.6, 0.05, 0.4],
                    },
                    [0.6, 0.4, 0.25],
                ),
                prim(
                    Shape::Cuboid {
                        center: [-0.25, 0.35, 0.1],
                        half_extents: [0.12, 0.15, 0.12],
                    },
                    [0.2, 0.45, 0.8],
                ),
                prim(
                    Shape::Sphere {
                        center: [0.25, 0.35, -0.1],
                        radius: 0.15,
                    },
                    [0.85, 0.25, 0.2],
                ),
                prim(
                    Shape::Sphere {
                        center: [0.1, 0.42, 0.25],
                        radius: 0.08,
                    },
                    [0.3, 0.75, 0.3],
                ),
            ],
            phases: [0.3, 1.7, 4.1],
            truncation,
        }
    }

    /// Longest distance inside the bounding room, or the extent of all
    /// primitives when there is no room.
    pub fn diameter(&self) -> f64 {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in &self.primitives {
            let (c, h) = match p.shape {
                Shape::Room { center, half_extents } | Shape::Cuboid { center, half_extents } => {
                    (Vector3::from(center), Vector3::from(half_extents))
                }
                Shape::Sphere { center, radius } => (Vector3::from(center), Vector3::repeat(radius)),
            };
            lo = lo.inf(&(c - h));
            hi = hi.sup(&(c + h));
        }
        (hi - lo).norm()
    }

    fn closest(&self, x: &Vector3<f64>) -> (usize, f64, Vector3<f64>) {
        let mut best = (0, f64::INFINITY, Vector3::zeros());
        for (i, p) in self.primitives.iter().enumerate() {
            let (s, g) = p.shape.sdf_and_gradient(x);
            if s < best.1 {
                best = (i, s, g);
            }
        }
        best
    }

    fn texture(&self, x: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let k = 2.0 * std::f64::consts::PI / TEXTURE_PERIOD;
        let mut v = 0.7;
        let mut g = Vector3::zeros();
        for a in 0..3 {
            let arg = k * x[a] + self.phases[a];
            v += 0.1 * arg.sin();
            g[a] = 0.1 * k * arg.cos();
        }
        (v, g)
    }

    pub fn sdf(&self, x: &Vector3<f64>) -> f64 {
        self.closest(x).1
    }

    /// First surface crossing along `origin + d * ray` for `d` in
    /// `[near, far]`, by sphere tracing. `d` is in units of `ray`.
    pub fn trace(&self, origin: &Vector3<f64>, ray: &Vector3<f64>, near: f64, far: f64) -> Option<f64> {
        let scale = ray.norm();
        let mut d = near;
        for _ in 0..512 {
            let s = self.sdf(&(origin + ray * d));
            if s.abs() < 1e-9 {
                return Some(d);
            }
            if s < 0.0 {
                // started inside geometry: no visible surface
                return None;
            }
            d += s / scale;
            if d > far {
                return None;
            }
        }
        Some(d)
    }
}

impl MapModel for AnalyticScene {
    fn truncation(&self) -> f64 {
        self.truncation
    }

    fn query(&self, x: &Vector3<f64>) -> MapSample {
        let (i, sdf, _) = self.closest(x);
        let (t, _) = self.texture(x);
        let a = self.primitives[i].albedo;
        MapSample {
            color: [a[0] * t, a[1] * t, a[2] * t],
            sdf: sdf.clamp(-self.truncation, self.truncation),
        }
    }

    fn query_diff(&self, x: &Vector3<f64>) -> MapQuery {
        let (i, sdf, g) = self.closest(x);
        let (t, tg) = self.texture(x);
        let a = self.primitives[i].albedo;
        let clamped = sdf.abs() > self.truncation;
        MapQuery {
            sample: MapSample {
                color: [a[0] * t, a[1] * t, a[2] * t],
                sdf: sdf.clamp(-self.truncation, self.truncation),
            },
            gradient: MapGradient {
                sdf: if clamped { Vector3::zeros() } else { g },
                color: [tg * a[0], tg * a[1], tg * a[2]],
            },
            stencil: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn room_distance_is_positive_inside() {
        let scene = AnalyticScene::desk(0.1);
        let s = Shape::Room {
            center: [0.0; 3],
            half_extents: [1.5, 1.0, 1.5],
        };
        let (d, g) = s.sdf_and_gradient(&Vector3::new(0.0, -0.5, 0.0));
        assert!((d - 0.5).abs() < 1e-12);
        assert!((g - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
        assert!(scene.sdf(&Vector3::new(0.0, 0.0, -1.0)) > 0.0);
    }

    #[test]
    fn sphere_distance() {
        let s = Shape::Sphere {
            center: [1.0, 0.0, 0.0],
            radius: 0.5,
        };
        assert!((s.sdf_and_gradient(&Vector3::new(3.0, 0.0, 0.0)).0 - 1.5).abs() < 1e-12);
        assert!((s.sdf_and_gradient(&Vector3::new(1.0, 0.0, 0.0)).0 + 0.5).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let scene = AnalyticScene::desk(0.1);
        let pts = [
            Vector3::new(0.1, -0.2, -0.7),
            Vector3::new(0.3, 0.3, -0.2),
            Vector3::new(-0.6, 0.2, 0.9),
        ];
        let h = 1e-6;
        for x in pts {
            let q = scene.query_diff(&x);
            for a in 0..3 {
                let mut e = Vector3::zeros();
                e[a] = h;
                let p = scene.query(&(x + e));
                let n = scene.query(&(x - e));
                assert!(((p.sdf - n.sdf) / (2.0 * h) - q.gradient.sdf[a]).abs() < 1e-6);
                let fd = (p.color[1] - n.color[1]) / (2.0 * h);
                assert!((fd - q.gradient.color[1][a]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn trace_hits_the_far_wall() {
        let scene = AnalyticScene::desk(0.1);
        let d = scene
            .trace(&Vector3::new(0.0, -0.5, 0.0), &Vector3::new(0.0, 0.0, 2.0), 0.05, 10.0)
            .unwrap();
        assert!((d - 0.75).abs() < 1e-8);
    }

    #[test]
    fn diameter_of_room() {
        let d = AnalyticScene::desk(0.1).diameter();
        assert!((d - (9.0f64 + 4.0 + 9.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn serde_round_trip() {
        let scene = AnalyticScene::desk(0.1);
        let text = serde_json::to_string(&scene).unwrap();
        let back: AnalyticScene = serde_json::from_str(&text).unwrap();
        assert_eq!(scene, back);
    }
}
