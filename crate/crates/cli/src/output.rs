//! Plain-file writers for derived products.
//!
//! PLY clouds are ASCII with one vertex per line:
//!
//! ```text
//! ply
//! format ascii 1.0
//! comment trajfield fused cloud, target frame J
//! element vertex K
//! property float x
//! property float y
//! property float z
//! property int frame
//! property int u
//! property int v
//! end_header
//! ```
//!
//! Masks are binary PGM (`P5`), 255 = set, one file per frame.

use std::fmt::Write as _;
use std::path::Path;

use trajfield::derive::PointCloud;

use crate::CliError;

pub fn ply_string(cloud: &PointCloud, target_frame: usize) -> String {
    let mut s = String::with_capacity(64 * cloud.points.len() + 256);
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "comment trajfield fused cloud, target frame {target_frame}");
    let _ = writeln!(s, "element vertex {}", cloud.points.len());
    for p in ["x", "y", "z"] {
        let _ = writeln!(s, "property float {p}");
    }
    for p in ["frame", "u", "v"] {
        let _ = writeln!(s, "property int {p}");
    }
    s.push_str("end_header\n");
    for (x, l) in cloud.points.iter().zip(&cloud.labels) {
        let _ = writeln!(s, "{} {} {} {} {} {}", x[0] as f32, x[1] as f32, x[2] as f32, l.frame, l.u, l.v);
    }
    s
}

pub fn pgm_bytes(mask: &[bool], width: usize, height: usize) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(mask.iter().map(|m| if *m { 255u8 } else { 0 }));
    out
}

pub fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}
