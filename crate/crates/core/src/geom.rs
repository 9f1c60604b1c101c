//! Vector, direction and plane primitives shared by the simulator and the
//! reconstruction stages.
//!
//! Angular convention: a direction with angles `(theta, phi)` is obtained by
//! rotating the boresight `+z` by `theta` about `y` and then by `phi` about the
//! rotated `x` axis. Written out,
//!
//! ```text
//! dir(theta, phi) = (sin(theta) cos(phi), sin(phi), cos(theta) cos(phi))
//! ```
//!
//! so `theta` is the horizontal (azimuth-like) angle and `phi` the vertical
//! one. `(0, 0)` is `+z`. The simulator and every reconstruction path use only
//! this pair of functions, so the convention cancels internally.

use nalgebra::{Unit, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type UnitVec3 = Unit<Vec3>;

/// Arrival or emission angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct SphericalDir {
    pub theta: f64,
    pub phi: f64,
}

impl SphericalDir {
    pub fn new(theta: f64, phi: f64) -> Self {
        Self { theta, phi }
    }

    pub fn to_unit(self) -> UnitVec3 {
        dir_from_angles(self)
    }

    fn as_point(self) -> Vector2<f64> {
        Vector2::new(self.theta, self.phi)
    }
}

/// A plane `n . x = d` with unit normal `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: UnitVec3,
    pub offset: f64,
}

impl Plane {
    pub fn new(normal: UnitVec3, offset: f64) -> Self {
        Self { normal, offset }
    }

    pub fn from_point_normal(point: &Vec3, normal: UnitVec3) -> Self {
        Self {
            offset: normal.dot(point),
            normal,
        }
    }

    /// Signed distance along the normal; positive on the side the normal points to.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }

    /// The same plane with the normal reversed.
    pub fn flipped(&self) -> Self {
        Self {
            normal: -self.normal,
            offset: -self.offset,
        }
    }

    /// Re-orients the normal so that `p` lies on its positive side.
    pub fn facing(&self, p: &Vec3) -> Self {
        if self.signed_distance(p) < 0.0 {
            self.flipped()
        } else {
            *self
        }
    }

    pub fn project(&self, p: &Vec3) -> Vec3 {
        p - self.normal.into_inner() * self.signed_distance(p)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("degenerate geometry: {0}")]
    Degenerate(&'static str),
    #[error("empty input")]
    Empty,
    #[error("normals span opposite hemispheres (mean normal length {0:.3e})")]
    OpposedNormals(f64),
    #[error("convex hull needs at least 3 non-collinear points, got {0}")]
    HullTooSmall(usize),
}

pub fn dir_from_angles(a: SphericalDir) -> UnitVec3 {
    let (st, ct) = a.theta.sin_cos();
    let (sp, cp) = a.phi.sin_cos();
    Unit::new_unchecked(Vec3::new(st * cp, sp, ct * cp))
}

pub fn angles_from_dir(u: &UnitVec3) -> SphericalDir {
    SphericalDir {
        theta: u.x.atan2(u.z),
        phi: u.y.atan2(u.x.hypot(u.z)),
    }
}

/// Angle between two unit vectors, accurate near 0 and near pi.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Apparent angular separation between two arrival directions, in `[0, pi]`.
pub fn angular_separation(a: SphericalDir, b: SphericalDir) -> f64 {
    angle_between(&dir_from_angles(a), &dir_from_angles(b))
}

pub fn reflect_point(p: &Vec3, plane: &Plane) -> Vec3 {
    p - plane.normal.into_inner() * (2.0 * plane.signed_distance(p))
}

/// Law of reflection: `d - 2 (d . n) n`.
pub fn reflect_dir(d: &UnitVec3, n: &UnitVec3) -> UnitVec3 {
    let r = d.into_inner() - n.into_inner() * (2.0 * d.dot(n));
    Unit::new_normalize(r)
}

/// Surface normal at a specular point `s` that reflects light between `d` and `c`.
pub fn bisector_normal(d: &Vec3, c: &Vec3, s: &Vec3) -> Result<UnitVec3, GeomError> {
    let to_d = d - s;
    let to_c = c - s;
    let (nd, nc) = (to_d.norm(), to_c.norm());
    if nd == 0.0 || nc == 0.0 {
        return Err(GeomError::Degenerate("bisector endpoint coincides with vertex"));
    }
    let sum = to_d / nd + to_c / nc;
    let len = sum.norm();
    if len < 1e-12 {
        return Err(GeomError::Degenerate("bisector of antiparallel rays"));
    }
    Ok(Unit::new_unchecked(sum / len))
}

/// Ray/plane intersection with `t > 0`; `None` for parallel or backward hits.
pub fn ray_plane_intersect(origin: &Vec3, dir: &UnitVec3, plane: &Plane) -> Option<Vec3> {
    ray_plane_param(origin, dir, plane).map(|t| origin + dir.into_inner() * t)
}

pub(crate) fn ray_plane_param(origin: &Vec3, dir: &UnitVec3, plane: &Plane) -> Option<f64> {
    let denom = plane.normal.dot(dir);
    if denom.abs() < 1e-15 {
        return None;
    }
    let t = -plane.signed_distance(origin) / denom;
    (t > 0.0 && t.is_finite()).then_some(t)
}

/// Averages the per-point planes of oriented points.
///
/// Each `(x, n)` defines the plane `n . y = n . x`; the fit is the renormalized
/// mean normal together with the mean of the per-point offsets.
pub fn fit_plane_oriented(points: &[(Vec3, UnitVec3)]) -> Result<Plane, GeomError> {
    if points.is_empty() {
        return Err(GeomError::Empty);
    }
    let count = points.len() as f64;
    let mean_normal = points.iter().map(|(_, n)| n.into_inner()).sum::<Vec3>() / count;
    let len = mean_normal.norm();
    if len < 1e-6 {
        return Err(GeomError::OpposedNormals(len));
    }
    if points.iter().any(|(_, n)| n.dot(&mean_normal) <= 0.0) {
        return Err(GeomError::OpposedNormals(len));
    }
    let offset = points.iter().map(|(x, n)| n.dot(x)).sum::<f64>() / count;
    Ok(Plane::new(Unit::new_unchecked(mean_normal / len), offset))
}

fn cross2(o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Counter-clockwise convex hull of points in the flat `(theta, phi)` plane.
pub fn convex_hull(points: &[SphericalDir]) -> Result<Vec<SphericalDir>, GeomError> {
    let mut pts: Vec<Vector2<f64>> = points.iter().map(|p| p.as_point()).collect();
    if pts.len() < 3 {
        return Err(GeomError::HullTooSmall(pts.len()));
    }
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();

    let mut lower: Vec<Vector2<f64>> = Vec::with_capacity(pts.len());
    for p in &pts {
        while lower.len() >= 2 && cross2(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<Vector2<f64>> = Vec::with_capacity(pts.len());
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross2(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);

    // Area check rejects collinear sets that survive as a 2-point "hull".
    if lower.len() < 3 {
        return Err(GeomError::HullTooSmall(points.len()));
    }
    let area: f64 = (1..lower.len() - 1)
        .map(|i| cross2(&lower[0], &lower[i], &lower[i + 1]))
        .sum();
    if area.abs() < 1e-18 {
        return Err(GeomError::HullTooSmall(points.len()));
    }
    Ok(lower.into_iter().map(|v| SphericalDir::new(v.x, v.y)).collect())
}

/// Point-in-hull test for a hull returned by [`convex_hull`]; the boundary counts as inside.
pub fn hull_contains(hull: &[SphericalDir], q: SphericalDir) -> bool {
    let q = q.as_point();
    let n = hull.len();
    (0..n).all(|i| {
        let a = hull[i].as_point();
        let b = hull[(i + 1) % n].as_point();
        let edge = b - a;
        let tol = 1e-12 * edge.norm().max(1e-300);
        cross2(&a, &b, &q) >= -tol
    })
}

pub fn convex_hull_contains(hull_pts: &[SphericalDir], q: SphericalDir) -> Result<bool, GeomError> {
    let hull = convex_hull(hull_pts)?;
    Ok(hull_contains(&hull, q))
}

/// Angle subtended at `origin` between the ray direction `dir` and the point `p`.
pub fn angle_off_ray(origin: &Vec3, dir: &UnitVec3, p: &Vec3) -> f64 {
    let v = p - origin;
    if v.norm() == 0.0 {
        return 0.0;
    }
    angle_between(&v, dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_unit(rng: &mut impl Rng) -> UnitVec3 {
        loop {
            let v = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 0.1 && n <= 1.0 {
                return Unit::new_normalize(v);
            }
        }
    }

    #[test]
    fn boresight_and_quarter_turn() {
        let z = dir_from_angles(SphericalDir::new(0.0, 0.0));
        assert_abs_diff_eq!(z.into_inner(), Vec3::z(), epsilon = 1e-15);
        let q = dir_from_angles(SphericalDir::new(FRAC_PI_2, 0.0));
        assert_abs_diff_eq!(q.y, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.dot(&Vec3::z()), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn angle_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let u = random_unit(&mut rng);
            let back = dir_from_angles(angles_from_dir(&u));
            assert!((back.into_inner() - u.into_inner()).norm() < 1e-12);
        }
    }

    #[test]
    fn separation_examples() {
        let a = SphericalDir::new(0.3, -0.2);
        assert_eq!(angular_separation(a, a), 0.0);
        let e1 = SphericalDir::new(FRAC_PI_2, 0.0);
        let e2 = SphericalDir::new(FRAC_PI_2, PI);
        assert_abs_diff_eq!(angular_separation(e1, e2), PI, epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let a = angles_from_dir(&random_unit(&mut rng));
            let b = angles_from_dir(&random_unit(&mut rng));
            let oracle = dir_from_angles(a).dot(&dir_from_angles(b)).clamp(-1.0, 1.0).acos();
            let got = angular_separation(a, b);
            assert!((0.0..=PI).contains(&got));
            assert!((got - oracle).abs() < 1e-7, "{got} vs {oracle}");
        }
    }

    #[test]
    fn reflect_point_examples() {
        let z0 = Plane::new(Vec3::z_axis(), 0.0);
        let on = Vec3::new(1.0, 2.0, 0.0);
        assert_eq!(reflect_point(&on, &z0), on);
        assert_abs_diff_eq!(reflect_point(&Vec3::new(0.0, 0.0, 1.0), &z0), Vec3::new(0.0, 0.0, -1.0));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let pl = Plane::new(random_unit(&mut rng), rng.random_range(-3.0..3.0));
            let p = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let q = reflect_point(&p, &pl);
            assert!((reflect_point(&q, &pl) - p).norm() < 1e-12);
            assert!(pl.signed_distance(&((p + q) / 2.0)).abs() < 1e-12);
            assert!((q - p).cross(&pl.normal).norm() < 1e-12);
        }
    }

    #[test]
    fn reflect_dir_examples() {
        let n = Vec3::z_axis();
        let grazing = Vec3::x_axis();
        assert_abs_diff_eq!(reflect_dir(&grazing, &n).into_inner(), Vec3::x(), epsilon = 1e-15);
        assert_abs_diff_eq!(reflect_dir(&-n, &n).into_inner(), Vec3::z(), epsilon = 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let d = random_unit(&mut rng);
            let n = random_unit(&mut rng);
            let r = reflect_dir(&d, &n);
            // incidence measured against -d, reflection against r
            let incidence = angle_between(&-d.into_inner(), &n);
            let reflection = angle_between(&r, &n);
            assert!((incidence - reflection).abs() < 1e-12);
            assert!((r.norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn bisector_examples() {
        let n = bisector_normal(&Vec3::new(-1.0, 0.0, 1.0), &Vec3::new(1.0, 0.0, 1.0), &Vec3::zeros()).unwrap();
        assert_abs_diff_eq!(n.into_inner(), Vec3::z(), epsilon = 1e-15);
        let d = Vec3::new(0.3, 0.4, 1.2);
        let n = bisector_normal(&d, &d, &Vec3::zeros()).unwrap();
        assert_abs_diff_eq!(n.into_inner(), d.normalize(), epsilon = 1e-15);
        assert!(bisector_normal(&Vec3::new(-1.0, 0.0, 0.0), &Vec3::new(1.0, 0.0, 0.0), &Vec3::zeros()).is_err());
    }

    #[test]
    fn ray_plane_examples() {
        let pl = Plane::new(Vec3::z_axis(), 2.0);
        let hit = ray_plane_intersect(&Vec3::zeros(), &Vec3::z_axis(), &pl).unwrap();
        assert_abs_diff_eq!(hit, Vec3::new(0.0, 0.0, 2.0));
        assert!(ray_plane_intersect(&Vec3::zeros(), &Vec3::x_axis(), &pl).is_none());
        assert!(ray_plane_intersect(&Vec3::zeros(), &-Vec3::z_axis(), &pl).is_none());

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let pl = Plane::new(random_unit(&mut rng), rng.random_range(-3.0..3.0));
            let o = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let d = random_unit(&mut rng);
            if let Some(x) = ray_plane_intersect(&o, &d, &pl) {
                assert!(pl.signed_distance(&x).abs() < 1e-12 * (1.0 + x.norm()));
            }
        }
    }

    #[test]
    fn oriented_plane_fit() {
        let p = Vec3::new(0.2, -0.4, 1.0);
        let n = Unit::new_normalize(Vec3::new(0.1, 0.2, 1.0));
        let single = fit_plane_oriented(&[(p, n)]).unwrap();
        assert_abs_diff_eq!(single.offset, n.dot(&p), epsilon = 1e-15);

        let pts: Vec<_> = (0..10)
            .map(|i| (Vec3::new(i as f64 * 0.1, -(i as f64) * 0.3, 1.0), Vec3::z_axis()))
            .collect();
        let pl = fit_plane_oriented(&pts).unwrap();
        assert_abs_diff_eq!(pl.offset, 1.0, epsilon = 1e-12);
        assert!(angle_between(&pl.normal, &Vec3::z()) < 1e-12);

        assert_eq!(fit_plane_oriented(&[]), Err(GeomError::Empty));
        let opposed = [(Vec3::zeros(), Vec3::z_axis()), (Vec3::zeros(), -Vec3::z_axis())];
        assert!(matches!(fit_plane_oriented(&opposed), Err(GeomError::OpposedNormals(_))));
    }

    #[test]
    fn oriented_plane_fit_reported_mirror() {
        // Fitted mirror parameters reported for the large-mirror scan.
        let n = Unit::new_normalize(Vec3::new(-0.8797, -0.0048, -0.4754));
        let d = -1.406;
        let plane = Plane::new(n, d);
        let u = Unit::new_normalize(n.cross(&Vec3::y()));
        let v = n.cross(&u);
        let pts: Vec<_> = (0..22)
            .map(|i| {
                let a = (i % 5) as f64 * 0.1 - 0.2;
                let b = (i / 5) as f64 * 0.15 - 0.3;
                (plane.project(&Vec3::zeros()) + u.into_inner() * a + v * b, n)
            })
            .collect();
        let fit = fit_plane_oriented(&pts).unwrap();
        assert!((fit.offset - d).abs() < 1e-12);
        assert!(angle_between(&fit.normal, &n) < 1e-12);
    }

    fn brute_force_inside(pts: &[SphericalDir], q: SphericalDir) -> bool {
        // q is inside the hull iff for every edge direction defined by a pair of
        // points with all points on one side, q is on that side too.
        let p2: Vec<_> = pts.iter().map(|p| p.as_point()).collect();
        let q = q.as_point();
        for i in 0..p2.len() {
            for j in 0..p2.len() {
                if i == j || p2[i] == p2[j] {
                    continue;
                }
                let all_left = p2.iter().all(|p| cross2(&p2[i], &p2[j], p) >= -1e-12);
                if all_left && cross2(&p2[i], &p2[j], &q) < -1e-12 {
                    return false;
                }
            }
        }
        true
    }

    #[test]
    fn hull_examples() {
        let square = [
            SphericalDir::new(-1.0, -1.0),
            SphericalDir::new(1.0, -1.0),
            SphericalDir::new(1.0, 1.0),
            SphericalDir::new(-1.0, 1.0),
        ];
        assert!(convex_hull_contains(&square, SphericalDir::new(0.0, 0.0)).unwrap());
        assert!(convex_hull_contains(&square, SphericalDir::new(1.0, 0.3)).unwrap());
        assert!(!convex_hull_contains(&square, SphericalDir::new(5.0, 0.0)).unwrap());
        assert!(convex_hull_contains(&square[..2], SphericalDir::default()).is_err());
        let collinear = [SphericalDir::new(0.0, 0.0), SphericalDir::new(1.0, 1.0), SphericalDir::new(2.0, 2.0)];
        assert!(convex_hull_contains(&collinear, SphericalDir::default()).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let n = rng.random_range(3..12);
            let pts: Vec<_> = (0..n)
                .map(|_| SphericalDir::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)))
                .collect();
            let Ok(hull) = convex_hull(&pts) else { continue };
            for _ in 0..20 {
                let q = SphericalDir::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6));
                assert_eq!(hull_contains(&hull, q), brute_force_inside(&pts, q));
            }
        }
    }
}
