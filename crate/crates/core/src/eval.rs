//! Accuracy metrics against a reference plane and between planes.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::geom::{angle_between, fit_plane_oriented, GeomError, Plane, UnitVec3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub rms: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: 0.0, rms: 0.0, std: 0.0, min: 0.0, max: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            rms: (mean * mean + var).sqrt(),
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneErrorReport {
    /// Signed distance of each point along the reference normal, meters.
    pub displacements: Vec<f64>,
    /// Angle between each point normal and the reference normal, radians.
    pub tilts: Vec<f64>,
    /// In-plane coordinates of each point on the reference plane.
    pub projected: Vec<[f64; 2]>,
    pub displacement: Summary,
    pub tilt: Summary,
}

/// In-plane orthonormal axes for a normal.
fn plane_axes(n: &UnitVec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let a = n.cross(&helper).normalize();
    let b = n.cross(&a);
    (a, b)
}

/// Displacement and tilt of oriented points relative to `reference`.
///
/// Tilts ignore normal orientation, so a flipped normal counts as zero tilt.
pub fn plane_errors(points: &[(Vec3, UnitVec3)], reference: &Plane) -> PlaneErrorReport {
    let n = reference.normal;
    let (a, b) = plane_axes(&n);
    let origin = n.into_inner() * reference.offset;
    let displacements: Vec<f64> = points.iter().map(|(x, _)| reference.signed_distance(x)).collect();
    let tilts: Vec<f64> = points
        .iter()
        .map(|(_, m)| {
            let t = angle_between(m, &n);
            t.min(std::f64::consts::PI - t)
        })
        .collect();
    let projected = points
        .iter()
        .map(|(x, _)| {
            let d = x - origin;
            let v = Vector2::new(d.dot(&a), d.dot(&b));
            [v.x, v.y]
        })
        .collect();
    PlaneErrorReport {
        displacement: Summary::of(&displacements),
        tilt: Summary::of(&tilts),
        displacements,
        tilts,
        projected,
    }
}

/// Errors of the points against their own fitted plane.
pub fn residual_errors(points: &[(Vec3, UnitVec3)]) -> Result<(Plane, PlaneErrorReport), GeomError> {
    let fit = fit_plane_oriented(points)?;
    Ok((fit, plane_errors(points, &fit)))
}

/// Angle between the planes' normals (at most pi/2) and the offset difference
/// after orienting both normals the same way.
pub fn compare_planes(a: &Plane, b: &Plane) -> (f64, f64) {
    let b = if a.normal.dot(&b.normal) < 0.0 { b.flipped() } else { *b };
    let angle = angle_between(&a.normal, &b.normal);
    (angle, (a.offset - b.offset).abs())
}
