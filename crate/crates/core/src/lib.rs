//! Trajectory fields: per-pixel spline trajectories over normalized time,
//! with least-squares and gradient-based fitting, training losses,
//! benchmark metrics, an analytic ray-cast ground-truth generator and
//! derived products (scene flow, dynamic masks, forecasting, fusion,
//! camera recovery).

pub mod bundle;
pub mod camera;
pub mod curve;
pub mod derive;
pub mod error;
pub mod field;
pub mod fit;
pub mod loss;
pub mod metrics;
pub mod synth;
pub mod util;

pub use bundle::{Correspondence, GroundTruthBundle, PixelRef};
pub use camera::Camera;
pub use curve::{CurveFamily, CurveSpec};
pub use error::{Error, Result};
pub use field::{PointMap, TrajectoryField};
