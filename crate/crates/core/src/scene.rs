//! Scene model and exact forward simulator for one-, two- and three-bounce
//! lidar returns.
//!
//! A beam leaves the transmitter, is deflected by at most two specular facets
//! (transparent facets additionally pass it straight through) and ends on a
//! diffuse facet. From that diffuse point light returns to the receiver either
//! directly or through one or two specular reflections, with the total number
//! of scattering events capped at three. Reflection points are found in
//! closed form by mirroring the receiver across the facet plane.

use nalgebra::{Unit, Vector2};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::geom::{
    angle_between, angles_from_dir, dir_from_angles, ray_plane_param, reflect_dir, reflect_point,
    Plane, SphericalDir, UnitVec3, Vec3,
};

/// Parametric tolerance for self-intersection along rays and segments.
const RAY_EPS: f64 = 1e-9;
/// Polygon containment edge tolerance in meters.
const EDGE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("facet `{0}` needs at least 3 vertices")]
    TooFewVertices(String),
    #[error("facet `{id}` is not planar (vertex off plane by {deviation:.3e} m)")]
    NonPlanar { id: String, deviation: f64 },
    #[error("facet `{0}` is degenerate (zero area)")]
    ZeroArea(String),
    #[error("facet `{id}`: {reason}")]
    BadMaterial { id: String, reason: String },
    #[error("facet `{0}` is diffuse and has no mirror image")]
    NotSpecular(String),
    #[error("invalid lidar configuration: {0}")]
    BadLidar(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Material {
    Diffuse { albedo: f64 },
    Specular { reflectance: f64 },
    TransparentSpecular { reflectance: f64, transmittance: f64 },
}

impl Material {
    pub fn is_specular(&self) -> bool {
        !matches!(self, Material::Diffuse { .. })
    }

    pub fn reflectance(&self) -> f64 {
        match *self {
            Material::Diffuse { .. } => 0.0,
            Material::Specular { reflectance } | Material::TransparentSpecular { reflectance, .. } => reflectance,
        }
    }

    fn validate(&self) -> Result<(), String> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("{name} {v} outside [0, 1]"))
            }
        };
        match *self {
            Material::Diffuse { albedo } => unit("albedo", albedo),
            Material::Specular { reflectance } => unit("reflectance", reflectance),
            Material::TransparentSpecular { reflectance, transmittance } => {
                unit("reflectance", reflectance)?;
                unit("transmittance", transmittance)?;
                if reflectance + transmittance > 1.0 + 1e-12 {
                    return Err(format!("reflectance + transmittance = {} exceeds 1", reflectance + transmittance));
                }
                Ok(())
            }
        }
    }
}

/// A planar polygon with a material.
#[derive(Debug, Clone, PartialEq)]
pub struct Facet {
    pub id: String,
    pub object: Option<String>,
    pub vertices: Vec<Vec3>,
    pub material: Material,
    plane: Plane,
    // 2-D projection axes (dropping the dominant normal component)
    axes: (usize, usize),
}

impl Facet {
    pub fn new(id: impl Into<String>, vertices: Vec<Vec3>, material: Material) -> Result<Self, SceneError> {
        let id = id.into();
        if vertices.len() < 3 {
            return Err(SceneError::TooFewVertices(id));
        }
        material.validate().map_err(|reason| SceneError::BadMaterial { id: id.clone(), reason })?;

        // Newell's method gives a robust normal for any simple polygon.
        let mut normal = Vec3::zeros();
        for (i, a) in vertices.iter().enumerate() {
            let b = &vertices[(i + 1) % vertices.len()];
            normal.x += (a.y - b.y) * (a.z + b.z);
            normal.y += (a.z - b.z) * (a.x + b.x);
            normal.z += (a.x - b.x) * (a.y + b.y);
        }
        if normal.norm() < 1e-15 {
            return Err(SceneError::ZeroArea(id));
        }
        let normal = Unit::new_normalize(normal);
        let centroid = vertices.iter().sum::<Vec3>() / vertices.len() as f64;
        let plane = Plane::from_point_normal(&centroid, normal);
        let deviation = vertices.iter().map(|v| plane.signed_distance(v).abs()).fold(0.0, f64::max);
        if deviation > 1e-9 {
            return Err(SceneError::NonPlanar { id, deviation });
        }
        let dominant = normal.iamax();
        let axes = match dominant {
            0 => (1, 2),
            1 => (2, 0),
            _ => (0, 1),
        };
        Ok(Self { id, object: None, vertices, material, plane, axes })
    }

    pub fn with_object(mut self, object: impl Into<String>) -> Self {
        self.object = Some(object.into());
        self
    }

    pub fn plane(&self) -> &Plane {
        &self.plane
    }

    fn project2(&self, p: &Vec3) -> Vector2<f64> {
        Vector2::new(p[self.axes.0], p[self.axes.1])
    }

    /// Containment of an on-plane point, boundary inclusive within 1e-9 m.
    pub fn contains(&self, p: &Vec3) -> bool {
        let q = self.project2(p);
        let n = self.vertices.len();
        let mut inside = false;
        for i in 0..n {
            let a = self.project2(&self.vertices[i]);
            let b = self.project2(&self.vertices[(i + 1) % n]);
            if (a.y > q.y) != (b.y > q.y) {
                let x = a.x + (q.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if q.x < x {
                    inside = !inside;
                }
            }
        }
        inside || self.on_edge(p)
    }

    fn on_edge(&self, p: &Vec3) -> bool {
        let n = self.vertices.len();
        (0..n).any(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let ab = b - a;
            let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
            (a + ab * t - p).norm() <= EDGE_TOL
        })
    }

    /// Ray parameter of the hit with this facet, if any.
    fn hit(&self, origin: &Vec3, dir: &UnitVec3) -> Option<f64> {
        let t = ray_plane_param(origin, dir, &self.plane)?;
        let p = origin + dir.into_inner() * t;
        self.contains(&p).then_some(t)
    }
}

/// Detector angular grid. Pixel `(i, j)` is centered at
/// `theta_min + (i + 0.5) * pitch_theta`, `phi_min + (j + 0.5) * pitch_phi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorGrid {
    pub theta_min: f64,
    pub theta_max: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub n_theta: usize,
    pub n_phi: usize,
}

impl DetectorGrid {
    pub fn pitch_theta(&self) -> f64 {
        (self.theta_max - self.theta_min) / self.n_theta as f64
    }

    pub fn pitch_phi(&self) -> f64 {
        (self.phi_max - self.phi_min) / self.n_phi as f64
    }

    pub fn contains(&self, a: SphericalDir) -> bool {
        (self.theta_min..=self.theta_max).contains(&a.theta) && (self.phi_min..=self.phi_max).contains(&a.phi)
    }

    pub fn pixel_center(&self, i: usize, j: usize) -> SphericalDir {
        SphericalDir::new(
            self.theta_min + (i as f64 + 0.5) * self.pitch_theta(),
            self.phi_min + (j as f64 + 0.5) * self.pitch_phi(),
        )
    }

    /// Continuous pixel coordinates; integer values fall on pixel centers.
    pub fn to_pixel(&self, a: SphericalDir) -> (f64, f64) {
        (
            (a.theta - self.theta_min) / self.pitch_theta() - 0.5,
            (a.phi - self.phi_min) / self.pitch_phi() - 0.5,
        )
    }

    pub fn from_pixel(&self, u: f64, v: f64) -> SphericalDir {
        SphericalDir::new(
            self.theta_min + (u + 0.5) * self.pitch_theta(),
            self.phi_min + (v + 0.5) * self.pitch_phi(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarConfig {
    pub transmitter: Vec3,
    pub receiver: Vec3,
    pub speed_of_light: f64,
    pub beams: Vec<UnitVec3>,
    pub detector: DetectorGrid,
}

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

impl LidarConfig {
    pub fn baseline(&self) -> f64 {
        (self.transmitter - self.receiver).norm()
    }

    /// Arrival direction at the receiver for a point in space.
    pub fn arrival_angles(&self, p: &Vec3) -> SphericalDir {
        angles_from_dir(&Unit::new_normalize(p - self.receiver))
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.speed_of_light > 0.0) {
            return Err(SceneError::BadLidar("speed of light must be positive".into()));
        }
        let g = &self.detector;
        if g.n_theta == 0 || g.n_phi == 0 || !(g.theta_max > g.theta_min) || !(g.phi_max > g.phi_min) {
            return Err(SceneError::BadLidar("detector grid must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scene {
    pub facets: Vec<Facet>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum BounceClass {
    #[serde(rename = "1B")]
    One,
    #[serde(rename = "2B")]
    Two,
    #[serde(rename = "3B")]
    Three,
}

impl BounceClass {
    fn from_count(n: usize) -> Self {
        match n {
            1 => BounceClass::One,
            2 => BounceClass::Two,
            _ => BounceClass::Three,
        }
    }
}

/// Ground-truth role of a path, used to score reconstructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    /// L-D-C with an unobstructed beam.
    Direct,
    /// L-D-C where the beam was transmitted through a transparent facet.
    BehindWindow,
    /// L-D-S-C: diffuse first, seen in a specular surface.
    DiffuseFirstMirror,
    /// L-S1-D-C: the true spot of a specular-first exposure.
    SpecularFirstTrue,
    /// L-S1-D-S2-C: mirror image of a specular-first true spot.
    SpecularFirstMirror,
    /// Two consecutive specular reflections; never inverted.
    MultiSpecular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub beam_index: usize,
    /// Ordered vertices from transmitter to receiver, inclusive.
    pub vertices: Vec<Vec3>,
    pub bounce_class: BounceClass,
    /// Facet id for every interior vertex.
    pub surface_ids: Vec<String>,
    pub path_length: f64,
    pub relative_energy: f64,
    pub kind: PathKind,
    pub multi_specular: bool,
    /// Transparent facets crossed anywhere along the path.
    #[serde(default)]
    pub transmitted_through: Vec<String>,
    /// Index into `vertices` of the diffuse scattering vertex.
    pub diffuse_index: usize,
}

impl PathRecord {
    /// The scattering vertex seen by the receiver (last interior vertex).
    pub fn last_vertex(&self) -> Vec3 {
        self.vertices[self.vertices.len() - 2]
    }

    /// The diffuse scattering vertex.
    pub fn diffuse_vertex(&self) -> Vec3 {
        self.vertices[self.diffuse_index]
    }
}

/// A detected return at the receiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spot {
    pub dir: SphericalDir,
    pub tof: f64,
    pub energy: f64,
    pub tof_sigma: f64,
    /// Beam that produced the spot when known (single-beam exposures).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beam_index: Option<usize>,
    /// Indices of the ground-truth paths merged into this spot.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub truth: Vec<usize>,
}

impl Spot {
    pub fn new(dir: SphericalDir, tof: f64, energy: f64) -> Self {
        Self { dir, tof, energy, tof_sigma: 0.0, beam_index: None, truth: Vec::new() }
    }
}

/// Light reaching a diffuse point after the transmit leg.
struct Illuminated {
    point: Vec3,
    facet: usize,
    /// Specular vertices on the transmit leg (after L).
    reflections: Vec<(Vec3, usize)>,
    factor: f64,
    transmitted: Vec<usize>,
}

impl Scene {
    pub fn new(facets: Vec<Facet>) -> Self {
        Self { facets }
    }

    fn first_hit(&self, origin: &Vec3, dir: &UnitVec3, exclude: Option<usize>) -> Option<(f64, usize)> {
        self.facets
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != exclude)
            .filter_map(|(i, f)| f.hit(origin, dir).filter(|&t| t > RAY_EPS).map(|t| (t, i)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    /// Transmission factor along the open segment `a -> b`, `None` when blocked.
    fn segment_transmission(&self, a: &Vec3, b: &Vec3, exclude: &[usize], crossed: &mut Vec<usize>) -> Option<f64> {
        let v = b - a;
        let len = v.norm();
        if len <= RAY_EPS {
            return Some(1.0);
        }
        let dir = Unit::new_unchecked(v / len);
        let mut factor = 1.0;
        for (i, f) in self.facets.iter().enumerate() {
            if exclude.contains(&i) {
                continue;
            }
            if let Some(t) = f.hit(a, &dir) {
                if t > RAY_EPS && t < len - RAY_EPS {
                    match f.material {
                        Material::TransparentSpecular { transmittance, .. } => {
                            factor *= transmittance;
                            crossed.push(i);
                        }
                        _ => return None,
                    }
                }
            }
        }
        Some(factor)
    }

    fn propagate(
        &self,
        origin: Vec3,
        dir: UnitVec3,
        exclude: Option<usize>,
        reflections: Vec<(Vec3, usize)>,
        factor: f64,
        transmitted: Vec<usize>,
        out: &mut Vec<Illuminated>,
    ) {
        let Some((t, idx)) = self.first_hit(&origin, &dir, exclude) else {
            return;
        };
        let p = origin + dir.into_inner() * t;
        let facet = &self.facets[idx];
        match facet.material {
            Material::Diffuse { albedo } => out.push(Illuminated {
                point: p,
                facet: idx,
                reflections,
                factor: factor * albedo / PI,
                transmitted,
            }),
            Material::Specular { reflectance } => {
                if reflections.len() < 2 {
                    let r = reflect_dir(&dir, &facet.plane.normal);
                    let mut refl = reflections;
                    refl.push((p, idx));
                    self.propagate(p, r, Some(idx), refl, factor * reflectance, transmitted, out);
                }
            }
            Material::TransparentSpecular { reflectance, transmittance } => {
                if reflections.len() < 2 {
                    let r = reflect_dir(&dir, &facet.plane.normal);
                    let mut refl = reflections.clone();
                    refl.push((p, idx));
                    self.propagate(p, r, Some(idx), refl, factor * reflectance, transmitted.clone(), out);
                }
                let mut trans = transmitted;
                trans.push(idx);
                self.propagate(p, dir, Some(idx), reflections, factor * transmittance, trans, out);
            }
        }
    }

    /// Reflection point on `facet` for light travelling `from -> facet -> to`.
    fn reflection_point(&self, facet: usize, from: &Vec3, to: &Vec3) -> Option<Vec3> {
        let f = &self.facets[facet];
        let da = f.plane.signed_distance(from);
        let db = f.plane.signed_distance(to);
        if da * db <= 0.0 || da.abs() < RAY_EPS || db.abs() < RAY_EPS {
            return None;
        }
        let s = from + (to - from) * (da / (da + db));
        let s = f.plane.project(&s);
        f.contains(&s).then_some(s)
    }

    /// Every valid path with at most three scattering events for one beam.
    pub fn trace_beam(&self, lidar: &LidarConfig, beam_index: usize, beam: &UnitVec3) -> Vec<PathRecord> {
        let mut lit = Vec::new();
        self.propagate(lidar.transmitter, *beam, None, Vec::new(), 1.0, Vec::new(), &mut lit);
        let c = lidar.receiver;
        let specular: Vec<usize> = (0..self.facets.len()).filter(|&i| self.facets[i].material.is_specular()).collect();

        let mut paths = Vec::new();
        for il in &lit {
            let albedo_factor = il.factor;
            let mut transmit_leg = vec![lidar.transmitter];
            transmit_leg.extend(il.reflections.iter().map(|r| r.0));
            transmit_leg.push(il.point);
            let transmit_ids: Vec<usize> = il.reflections.iter().map(|r| r.1).chain([il.facet]).collect();

            let mut emit = |return_leg: &[(Vec3, usize)], return_factor: f64, crossed: Vec<usize>| {
                let mut vertices = transmit_leg.clone();
                vertices.extend(return_leg.iter().map(|r| r.0));
                vertices.push(c);
                let ids: Vec<usize> = transmit_ids.iter().copied().chain(return_leg.iter().map(|r| r.1)).collect();
                let path_length: f64 = vertices.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
                // Unfolded distance from the diffuse vertex back to the receiver.
                let receiver_leg: f64 = vertices[transmit_leg.len() - 1..].windows(2).map(|w| (w[1] - w[0]).norm()).sum();
                let k = il.reflections.len();
                let m = return_leg.len();
                let multi = k >= 2 || m >= 2;
                let kind = match (k, m) {
                    _ if multi => PathKind::MultiSpecular,
                    (0, 0) if !il.transmitted.is_empty() => PathKind::BehindWindow,
                    (0, 0) => PathKind::Direct,
                    (0, 1) => PathKind::DiffuseFirstMirror,
                    (1, 0) => PathKind::SpecularFirstTrue,
                    _ => PathKind::SpecularFirstMirror,
                };
                let mut through: Vec<usize> = il.transmitted.iter().copied().chain(crossed).collect();
                through.sort_unstable();
                through.dedup();
                paths.push(PathRecord {
                    beam_index,
                    bounce_class: BounceClass::from_count(vertices.len() - 2),
                    surface_ids: ids.iter().map(|&i| self.facets[i].id.clone()).collect(),
                    path_length,
                    relative_energy: albedo_factor * return_factor / (receiver_leg * receiver_leg),
                    kind,
                    multi_specular: multi,
                    transmitted_through: through.iter().map(|&i| self.facets[i].id.clone()).collect(),
                    diffuse_index: k + 1,
                    vertices,
                });
            };

            let k = il.reflections.len();
            // Direct return.
            let mut crossed = Vec::new();
            if let Some(f) = self.segment_transmission(&il.point, &c, &[il.facet], &mut crossed) {
                emit(&[], f, crossed);
            }
            if k >= 2 {
                continue;
            }
            // One specular reflection on the way back.
            for &s in &specular {
                let Some(sp) = self.reflection_point(s, &il.point, &c) else { continue };
                let mut crossed = Vec::new();
                let Some(f1) = self.segment_transmission(&il.point, &sp, &[il.facet, s], &mut crossed) else {
                    continue;
                };
                let Some(f2) = self.segment_transmission(&sp, &c, &[s], &mut crossed) else { continue };
                emit(&[(sp, s)], self.facets[s].material.reflectance() * f1 * f2, crossed);
            }
            if k >= 1 {
                continue;
            }
            // Two consecutive specular reflections on the way back.
            for &a in &specular {
                for &b in &specular {
                    if a == b {
                        continue;
                    }
                    let c_b = reflect_point(&c, self.facets[b].plane());
                    let Some(sa) = self.reflection_point(a, &il.point, &reflect_point(&c_b, self.facets[a].plane()))
                    else {
                        continue;
                    };
                    let Some(sb) = self.reflection_point(b, &sa, &c) else { continue };
                    let mut crossed = Vec::new();
                    let f = [
                        self.segment_transmission(&il.point, &sa, &[il.facet, a], &mut crossed),
                        self.segment_transmission(&sa, &sb, &[a, b], &mut crossed),
                        self.segment_transmission(&sb, &c, &[b], &mut crossed),
                    ];
                    if let [Some(f1), Some(f2), Some(f3)] = f {
                        let r = self.facets[a].material.reflectance() * self.facets[b].material.reflectance();
                        emit(&[(sa, a), (sb, b)], r * f1 * f2 * f3, crossed);
                    }
                }
            }
        }
        paths
    }

    /// Traces every beam of the lidar configuration.
    pub fn trace_all(&self, lidar: &LidarConfig) -> Vec<PathRecord> {
        lidar
            .beams
            .iter()
            .enumerate()
            .flat_map(|(i, b)| self.trace_beam(lidar, i, b))
            .collect()
    }

    pub fn facet_by_id(&self, id: &str) -> Option<&Facet> {
        self.facets.iter().find(|f| f.id == id)
    }
}

/// Reflection of `p` across a specular facet's plane.
pub fn mirror_image_position(p: &Vec3, facet: &Facet) -> Result<Vec3, SceneError> {
    if !facet.material.is_specular() {
        return Err(SceneError::NotSpecular(facet.id.clone()));
    }
    Ok(reflect_point(p, facet.plane()))
}

/// Returns closer than this in path length (about one 128 ps pulse width)
/// cannot be told apart in time.
pub const MERGE_PATH_DIFFERENCE: f64 = 0.04;

/// Converts paths into ideal spots.
///
/// `paths[i]` becomes a spot with `tof = path_length / c` arriving along the
/// final path segment. Spots outside the detector field of view are dropped;
/// spots within one detector pixel of each other and less than
/// [`MERGE_PATH_DIFFERENCE`] apart in path length are merged (energies summed,
/// earliest arrival kept).
pub fn spots_from_paths(paths: &[PathRecord], lidar: &LidarConfig) -> Vec<Spot> {
    let merge_radius = lidar.detector.pitch_theta().min(lidar.detector.pitch_phi());
    let merge_tof = MERGE_PATH_DIFFERENCE / lidar.speed_of_light;
    let mut order: Vec<usize> = (0..paths.len()).collect();
    order.sort_by(|&a, &b| paths[a].path_length.total_cmp(&paths[b].path_length).then(a.cmp(&b)));

    let mut spots: Vec<Spot> = Vec::new();
    for i in order {
        let p = &paths[i];
        let dir = lidar.arrival_angles(&p.last_vertex());
        if !lidar.detector.contains(dir) {
            continue;
        }
        let tof = p.path_length / lidar.speed_of_light;
        let u = dir_from_angles(dir);
        if let Some(existing) = spots
            .iter_mut()
            .find(|s| tof - s.tof < merge_tof && angle_between(&dir_from_angles(s.dir), &u) < merge_radius)
        {
            existing.energy += p.relative_energy;
            existing.truth.push(i);
            if existing.beam_index != Some(p.beam_index) {
                existing.beam_index = None;
            }
            continue;
        }
        spots.push(Spot {
            dir,
            tof,
            energy: p.relative_energy,
            tof_sigma: 0.0,
            beam_index: Some(p.beam_index),
            truth: vec![i],
        });
    }
    spots
}
