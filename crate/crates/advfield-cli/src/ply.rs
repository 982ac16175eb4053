//! ASCII polygon-format export for external viewers. With a baseline
//! cloud the per-point displacement magnitude goes out as an extra scalar
//! channel, ready for color mapping.

use advfield::geometry::PointCloud;
use advfield::{Error, Result};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub fn export_ply(path: &Path, cloud: &PointCloud, baseline: Option<&PointCloud>) -> Result<()> {
    if let Some(base) = baseline {
        if base.len() != cloud.len() {
            return Err(Error::Geometry(format!(
                "cloud has {} points but its baseline has {}; displacement needs a 1:1 pairing",
                cloud.len(),
                base.len()
            )));
        }
    }
    let mut text = String::new();
    text.push_str("ply\nformat ascii 1.0\n");
    writeln!(text, "element vertex {}", cloud.len()).unwrap();
    text.push_str("property float x\nproperty float y\nproperty float z\nproperty float intensity\n");
    if baseline.is_some() {
        text.push_str("property float displacement\n");
    }
    text.push_str("end_header\n");
    for (i, p) in cloud.points.iter().enumerate() {
        write!(text, "{} {} {} {}", p.x, p.y, p.z, cloud.intensity[i]).unwrap();
        if let Some(base) = baseline {
            write!(text, " {}", (*p - base.points[i]).norm()).unwrap();
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
