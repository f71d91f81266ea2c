//! Continuous-time RGB-D SLAM on uniform cubic B-splines.

pub mod error;
pub mod jet;
pub mod se3;
pub mod spline;
pub mod dynamics;
pub mod eval;
pub mod io;
pub mod optim;
pub mod pipeline;
pub mod render;

pub use error::{Error, Result};
pub use se3::{Pose, Rotation, TangentVec3};
pub use spline::{ControlTrajectory, Kinematics, KnotGrid};
