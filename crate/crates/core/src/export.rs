//! Point cloud and document serialization.
//!
//! CSV columns: `x,y,z,nx,ny,nz,label,eq_tag,beam_index,spot_index`. Normal
//! and index fields are empty when absent. Floats use Rust's shortest
//! round-trip formatting, so a write/read cycle is lossless.

use serde::Serialize;
use std::io::{self, BufRead, Write};
use thiserror::Error;

use crate::geom::{UnitVec3, Vec3};
use crate::single_beam::{PointLabel, Provenance, ReconstructedPoint};

pub const CSV_HEADER: &str = "x,y,z,nx,ny,nz,label,eq_tag,beam_index,spot_index";

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("point cloud line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_points_csv(points: &[ReconstructedPoint], mut w: impl Write) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for p in points {
        let n = p.normal.map(|n| n.into_inner());
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            p.position.x,
            p.position.y,
            p.position.z,
            opt(n.map(|n| n.x)),
            opt(n.map(|n| n.y)),
            opt(n.map(|n| n.z)),
            p.label.name(),
            p.provenance.name(),
            opt(p.beam_index),
            opt(p.spot_index),
        )?;
    }
    Ok(())
}

pub fn read_points_csv(r: impl BufRead) -> Result<Vec<ReconstructedPoint>, ExportError> {
    let mut out = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = k + 1;
        let err = |message: String| ExportError::Parse { line: lineno, message };
        if k == 0 {
            if line.trim() != CSV_HEADER {
                return Err(err(format!("unexpected header `{line}`")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(err(format!("expected 10 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("`{s}`: {e}")));
        let idx = |s: &str| -> Result<Option<usize>, ExportError> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|e| err(format!("`{s}`: {e}")))
            }
        };
        let normal = if f[3].is_empty() {
            None
        } else {
            Some(UnitVec3::new_unchecked(Vec3::new(num(f[3])?, num(f[4])?, num(f[5])?)))
        };
        out.push(ReconstructedPoint {
            position: Vec3::new(num(f[0])?, num(f[1])?, num(f[2])?),
            normal,
            label: PointLabel::from_name(f[6]).ok_or_else(|| err(format!("unknown label `{}`", f[6])))?,
            provenance: Provenance::from_name(f[7]).ok_or_else(|| err(format!("unknown eq_tag `{}`", f[7])))?,
            beam_index: idx(f[8])?,
            spot_index: idx(f[9])?,
        });
    }
    Ok(out)
}

/// ASCII PLY with the label stored as an integer vertex property.
pub fn write_points_ply(points: &[ReconstructedPoint], mut w: impl Write) -> io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    for l in PointLabel::ALL {
        writeln!(w, "comment label {} = {}", l.code(), l.name())?;
    }
    writeln!(w, "element vertex {}", points.len())?;
    for p in ["x", "y", "z", "nx", "ny", "nz"] {
        writeln!(w, "property double {p}")?;
    }
    writeln!(w, "property uchar label")?;
    writeln!(w, "property int beam_index")?;
    writeln!(w, "end_header")?;
    for p in points {
        let n = p.normal.map(|n| n.into_inner()).unwrap_or_else(Vec3::zeros);
        let beam = p.beam_index.map(|b| b as i64).unwrap_or(-1);
        writeln!(
            w,
            "{} {} {} {} {} {} {} {}",
            p.position.x,
            p.position.y,
            p.position.z,
            n.x,
            n.y,
            n.z,
            p.label.code(),
            beam
        )?;
    }
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("document serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<ReconstructedPoint> {
        vec![
            ReconstructedPoint {
                position: Vec3::new(0.1, -2.5e-7, 3.000000000000001),
                normal: Some(UnitVec3::new_normalize(Vec3::new(0.3, 0.1, -1.0))),
                label: PointLabel::SpecularObserved,
                provenance: Provenance::DiffuseFirstHighlight,
                beam_index: Some(4),
                spot_index: Some(1),
            },
            ReconstructedPoint {
                position: Vec3::new(1.0, 2.0, 3.0),
                normal: None,
                label: PointLabel::Diffuse,
                provenance: Provenance::OneBounceRange,
                beam_index: None,
                spot_index: None,
            },
        ]
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let mut buf = Vec::new();
        write_points_csv(&sample(), &mut buf).unwrap();
        let back = read_points_csv(buf.as_slice()).unwrap();
        assert_eq!(back, sample());
    }

    #[test]
    fn csv_errors_report_line() {
        let text = format!("{CSV_HEADER}\n1,2,3,,,,diffuse,one_bounce_range,,\n1,2,x,,,,diffuse,one_bounce_range,,\n");
        match read_points_csv(text.as_bytes()) {
            Err(ExportError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ply_header_counts_vertices() {
        let mut buf = Vec::new();
        write_points_ply(&sample(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("element vertex 2\n"));
        let body: Vec<&str> = text.split("end_header\n").nth(1).unwrap().lines().collect();
        assert_eq!(body.len(), 2);
        assert!(body[1].ends_with(" 0 -1"));
    }
}
