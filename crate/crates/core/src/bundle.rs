//! Dense ground truth for one sequence: all-to-all cross-frame positions
//! `X^gt_{i→j}` plus the masks, labels, correspondences and cameras the
//! losses and metrics consume.

use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::field::validate_timestamps;
use crate::util::Vec3;

/// A pixel of a given frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PixelRef {
    pub frame: usize,
    pub u: usize,
    pub v: usize,
}

impl PixelRef {
    pub fn new(frame: usize, u: usize, v: usize) -> Self {
        Self { frame, u, v }
    }
}

/// Two pixels observing the same material point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Correspondence {
    pub a: PixelRef,
    pub b: PixelRef,
}

/// Label for pixels that belong to no rigid segment.
pub const NO_SEGMENT: i32 = -1;

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthBundle {
    pub num_frames: usize,
    pub height: usize,
    pub width: usize,
    pub timestamps: Vec<f64>,
    /// `N×N×H×W×3`, indexed by [`gt_index`](Self::gt_index).
    pub positions: Vec<f64>,
    /// `N×N×H×W`.
    pub valid: Vec<bool>,
    /// `N×N×H×W`; `None` when the source provides no visibility.
    pub visible: Option<Vec<bool>>,
    /// `N×H×W`.
    pub static_mask: Option<Vec<bool>>,
    /// `N×H×W` segment ids, [`NO_SEGMENT`] for unlabeled pixels.
    pub rigid_labels: Option<Vec<i32>>,
    pub correspondences: Vec<Correspondence>,
    pub cameras: Option<Vec<Camera>>,
    /// `N×H×W` camera-frame depth, 0 where nothing was hit.
    pub depth: Option<Vec<f64>>,
    /// Bounding-box diagonal of all valid self positions `X^gt_{i→i}`.
    pub scene_scale: f64,
}

impl GroundTruthBundle {
    /// Bundle with positions and validity only; the optional annotations
    /// start empty.
    pub fn new(
        num_frames: usize,
        height: usize,
        width: usize,
        timestamps: Vec<f64>,
        positions: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let mut b = Self {
            num_frames,
            height,
            width,
            timestamps,
            positions,
            valid,
            visible: None,
            static_mask: None,
            rigid_labels: None,
            correspondences: Vec::new(),
            cameras: None,
            depth: None,
            scene_scale: 0.0,
        };
        b.scene_scale = b.compute_scene_scale();
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_frames;
        let hw = self.height * self.width;
        validate_timestamps(&self.timestamps)?;
        if self.timestamps.len() != n {
            return Err(Error::Shape(format!("{} timestamps for {n} frames", self.timestamps.len())));
        }
        let check = |name: &str, len: usize, want: usize| -> Result<()> {
            if len != want {
                Err(Error::Shape(format!("{name}: expected {want} entries, got {len}")))
            } else {
                Ok(())
            }
        };
        check("positions", self.positions.len(), n * n * hw * 3)?;
        check("valid", self.valid.len(), n * n * hw)?;
        if let Some(v) = &self.visible {
            check("visible", v.len(), n * n * hw)?;
            if v.iter().zip(&self.valid).any(|(vis, val)| *vis && !*val) {
                return Err(Error::Input("visible entries must be valid".into()));
            }
        }
        if let Some(m) = &self.static_mask {
            check("static_mask", m.len(), n * hw)?;
        }
        if let Some(l) = &self.rigid_labels {
            check("rigid_labels", l.len(), n * hw)?;
        }
        if let Some(d) = &self.depth {
            check("depth", d.len(), n * hw)?;
        }
        if let Some(c) = &self.cameras {
            check("cameras", c.len(), n)?;
        }
        for c in &self.correspondences {
            for p in [c.a, c.b] {
                if p.frame >= n || p.u >= self.width || p.v >= self.height {
                    return Err(Error::Index(format!("correspondence pixel {p:?} out of range")));
                }
            }
        }
        for (idx, ok) in self.valid.iter().enumerate() {
            if *ok && self.positions[idx * 3..idx * 3 + 3].iter().any(|x| !x.is_finite()) {
                return Err(Error::Input("valid positions must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn pixels_per_frame(&self) -> usize {
        self.height * self.width
    }

    /// Flat `N×H×W` index of `(i, u, v)`; same layout as the field.
    #[inline]
    pub fn pixel_index(&self, i: usize, u: usize, v: usize) -> usize {
        (i * self.height + v) * self.width + u
    }

    /// Flat `N×N×H×W` index of `(i → j, pixel-in-frame p)`.
    #[inline]
    pub fn gt_index(&self, i: usize, j: usize, p: usize) -> usize {
        (i * self.num_frames + j) * self.pixels_per_frame() + p
    }

    #[inline]
    pub fn position(&self, i: usize, j: usize, p: usize) -> Vec3 {
        let o = self.gt_index(i, j, p) * 3;
        [self.positions[o], self.positions[o + 1], self.positions[o + 2]]
    }

    #[inline]
    pub fn is_valid(&self, i: usize, j: usize, p: usize) -> bool {
        self.valid[self.gt_index(i, j, p)]
    }

    pub fn is_visible(&self, i: usize, j: usize, p: usize) -> Option<bool> {
        self.visible.as_ref().map(|v| v[self.gt_index(i, j, p)])
    }

    pub fn is_static(&self, i: usize, p: usize) -> Option<bool> {
        self.static_mask.as_ref().map(|m| m[i * self.pixels_per_frame() + p])
    }

    /// Number of valid `(i, j, u, v)` terms.
    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// A pixel is valid if any of its cross-frame targets is.
    pub fn pixel_valid(&self, i: usize, p: usize) -> bool {
        (0..self.num_frames).any(|j| self.is_valid(i, j, p))
    }

    pub fn compute_scene_scale(&self) -> f64 {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        let mut any = false;
        for i in 0..self.num_frames {
            for p in 0..self.pixels_per_frame() {
                if self.valid.get(self.gt_index(i, i, p)).copied().unwrap_or(false) {
                    let x = self.position(i, i, p);
                    for c in 0..3 {
                        lo[c] = lo[c].min(x[c]);
                        hi[c] = hi[c].max(x[c]);
                    }
                    any = true;
                }
            }
        }
        if !any {
            return 0.0;
        }
        ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2) + (hi[2] - lo[2]).powi(2)).sqrt()
    }
}
