//! Multi-beam planar mirror mapping.
//!
//! All beams fire in one flash, so spots cannot be associated with beams by
//! timing. Two-bounce returns behave as single-bounce returns from the
//! transmitter mirrored across the specular plane; multilateration on those
//! returns locates the mirrored source, which fixes the plane. Reflection
//! points, the mirror's extent and unfolded three-bounce points follow.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{
    angle_off_ray, angular_separation, convex_hull, dir_from_angles, hull_contains, ray_plane_intersect,
    reflect_point, Plane, SphericalDir, UnitVec3, Vec3,
};
use crate::scene::{LidarConfig, Spot};
use crate::single_beam::{apparent_position, PointLabel, Provenance, ReconstructedPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MultiBeamError {
    #[error("no anchor spots to interpolate from")]
    NoAnchors,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("Newton iteration did not converge; best estimate {best:?}")]
    NoConvergence { best: Vec3 },
    #[error("no_consensus: no RANSAC model reached {0} inliers")]
    NoConsensus(usize),
    #[error("mirrored source coincides with the transmitter")]
    DegenerateSource,
}

/// Spot partition for one flash. Indices refer to the flash's spot slice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct MbClassification {
    /// `(spot, beam)` pairs for spots that lie on a beam.
    pub one_or_three_bounce: Vec<(usize, usize)>,
    pub two_bounce: Vec<usize>,
}

/// Splits spots into beam-matched (one- or three-bounce) and two-bounce sets.
pub fn classify_spots_mb(spots: &[Spot], lidar: &LidarConfig, beam_tol: f64) -> MbClassification {
    // best[beam] = (spot, angle)
    let mut best: Vec<Option<(usize, f64)>> = vec![None; lidar.beams.len()];
    let mut matched = vec![false; spots.len()];
    for (i, spot) in spots.iter().enumerate() {
        let Ok(p) = apparent_position(spot, lidar) else { continue };
        let nearest = lidar
            .beams
            .iter()
            .enumerate()
            .map(|(b, dir)| (b, angle_off_ray(&lidar.transmitter, dir, &p)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((b, angle)) = nearest.filter(|&(_, a)| a <= beam_tol) {
            if best[b].map_or(true, |(_, a)| angle < a) {
                best[b] = Some((i, angle));
            }
        }
    }
    let mut out = MbClassification::default();
    for (b, entry) in best.iter().enumerate() {
        if let Some((i, _)) = entry {
            matched[*i] = true;
            out.one_or_three_bounce.push((*i, b));
        }
    }
    out.one_or_three_bounce.sort_unstable();
    out.two_bounce = (0..spots.len()).filter(|&i| !matched[i]).collect();
    out
}

/// How two-bounce positions are estimated from neighbouring anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Interpolation {
    /// Inverse-angular-distance weighted range of the `k` nearest anchors.
    InverseDistance { k: usize },
    /// Plane through the `k` nearest anchors, intersected with the arrival ray.
    /// Falls back to inverse distance when the local plane is degenerate.
    LocalPlane { k: usize },
}

impl Default for Interpolation {
    fn default() -> Self {
        Interpolation::LocalPlane { k: 3 }
    }
}

/// Approximate receiver-frame positions for two-bounce spots.
///
/// `anchors` pairs an arrival direction with a known position.
pub fn interpolate_2b_positions(
    two_bounce: &[SphericalDir],
    anchors: &[(SphericalDir, Vec3)],
    receiver: &Vec3,
    mode: Interpolation,
) -> Result<Vec<Vec3>, MultiBeamError> {
    if anchors.is_empty() {
        return Err(MultiBeamError::NoAnchors);
    }
    let k = match mode {
        Interpolation::InverseDistance { k } | Interpolation::LocalPlane { k } => k.max(1),
    };
    Ok(two_bounce
        .iter()
        .map(|&dir| {
            let mut near: Vec<(f64, usize)> =
                anchors.iter().enumerate().map(|(i, a)| (angular_separation(dir, a.0), i)).collect();
            near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let u = dir_from_angles(dir);
            if let Interpolation::LocalPlane { .. } = mode {
                // Widen a collinear neighbourhood until it spans a plane.
                let limit = near.len().min(4 * k.max(3));
                for m in k.max(3)..=limit {
                    match local_plane_hit(&near[..m], anchors, receiver, &u) {
                        PlaneHit::Hit(p) => return p,
                        PlaneHit::Collinear => continue,
                        PlaneHit::NotPlanar => break,
                    }
                }
            }
            near.truncate(k);
            receiver + u.into_inner() * idw_range(&near, anchors, receiver)
        })
        .collect())
}

fn idw_range(near: &[(f64, usize)], anchors: &[(SphericalDir, Vec3)], receiver: &Vec3) -> f64 {
    if let Some(&(_, i)) = near.iter().find(|(d, _)| *d == 0.0) {
        return (anchors[i].1 - receiver).norm();
    }
    let (num, den) = near.iter().fold((0.0, 0.0), |(num, den), &(d, i)| {
        let w = 1.0 / d;
        (num + w * (anchors[i].1 - receiver).norm(), den + w)
    });
    num / den
}

/// RMS spread, in meters, below which a neighbourhood counts as flat in a
/// direction: out of plane for planarity, in plane for collinearity.
const LOCAL_PLANE_RMS: f64 = 0.02;

enum PlaneHit {
    Hit(Vec3),
    Collinear,
    NotPlanar,
}

fn local_plane_hit(near: &[(f64, usize)], anchors: &[(SphericalDir, Vec3)], receiver: &Vec3, u: &UnitVec3) -> PlaneHit {
    if near.len() < 3 {
        return PlaneHit::Collinear;
    }
    let pts: Vec<Vec3> = near.iter().map(|&(_, i)| anchors[i].1).collect();
    let centroid = pts.iter().sum::<Vec3>() / pts.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in &pts {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (small, mid, large) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    let rms = |v: f64| (v.max(0.0) / pts.len() as f64).sqrt();
    // A row of anchors jittered by noise still does not define a plane.
    if mid <= 1e-8 * large || rms(mid) < LOCAL_PLANE_RMS {
        return PlaneHit::Collinear;
    }
    // Noise roughens a flat neighbourhood by millimetres; a corner by decimetres.
    if small.max(0.0) > 1e-6 * mid && rms(small) > LOCAL_PLANE_RMS {
        return PlaneHit::NotPlanar;
    }
    let normal = UnitVec3::new_normalize(eig.eigenvectors.column(order[0]).into_owned());
    match ray_plane_intersect(receiver, u, &Plane::from_point_normal(&centroid, normal)) {
        Some(p) => PlaneHit::Hit(p),
        None => PlaneHit::NotPlanar,
    }
}

/// Multilateration inputs: receiver-frame points and their times of flight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceSample {
    pub point: Vec3,
    pub tof: f64,
    /// Timing standard deviation, used for the inlier threshold.
    pub tof_sigma: f64,
}

/// Range from the mirrored source implied by a sample.
fn source_range(s: &SourceSample, receiver: &Vec3, c: f64) -> f64 {
    c * s.tof - (s.point - receiver).norm()
}

/// Objective, gradient and Hessian of the squared multilateration residuals.
fn objective(samples: &[SourceSample], x: &Vec3, receiver: &Vec3, c: f64) -> (f64, Vec3, Matrix3<f64>) {
    let mut f = 0.0;
    let mut grad = Vec3::zeros();
    let mut hess = Matrix3::zeros();
    for s in samples {
        let rho = source_range(s, receiver, c);
        let v = x - s.point;
        let g = v.norm_squared() - rho * rho;
        f += 0.5 * g * g;
        grad += v * (2.0 * g);
        hess += v * v.transpose() * 4.0 + Matrix3::identity() * (2.0 * g);
    }
    (f, grad, hess)
}

/// Objective value of the multilateration problem at `x`.
pub fn source_objective(samples: &[SourceSample], x: &Vec3, lidar: &LidarConfig) -> f64 {
    objective(samples, x, &lidar.receiver, lidar.speed_of_light).0
}

/// Gradient of [`source_objective`].
pub fn source_gradient(samples: &[SourceSample], x: &Vec3, lidar: &LidarConfig) -> Vec3 {
    objective(samples, x, &lidar.receiver, lidar.speed_of_light).1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub grad_tol: f64,
    pub step_tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { grad_tol: 1e-9, step_tol: 1e-12, max_iter: 100 }
    }
}

/// Damped Newton minimisation of the multilateration objective.
pub fn localize_source_newton(
    samples: &[SourceSample],
    init: &Vec3,
    lidar: &LidarConfig,
) -> Result<Vec3, MultiBeamError> {
    newton_with(samples, init, lidar, NewtonOptions::default())
}

pub fn newton_with(
    samples: &[SourceSample],
    init: &Vec3,
    lidar: &LidarConfig,
    opts: NewtonOptions,
) -> Result<Vec3, MultiBeamError> {
    if samples.len() < 4 {
        return Err(MultiBeamError::TooFewPoints { needed: 4, got: samples.len() });
    }
    let (rc, c) = (lidar.receiver, lidar.speed_of_light);
    let mut x = *init;
    let (mut f, mut grad, mut hess) = objective(samples, &x, &rc, c);
    let mut mu = 0.0_f64;
    for _ in 0..opts.max_iter {
        if grad.norm() < opts.grad_tol {
            return Ok(x);
        }
        let scale = hess.diagonal().abs().max().max(1e-300);
        let mut accepted = false;
        for _ in 0..60 {
            let damped = hess + Matrix3::identity() * (mu * scale);
            let Some(chol) = damped.cholesky() else {
                mu = if mu == 0.0 { 1e-12 } else { mu * 10.0 };
                continue;
            };
            let step = chol.solve(&(-grad));
            let cand = x + step;
            let (fc, gc, hc) = objective(samples, &cand, &rc, c);
            if fc <= f {
                let small = step.norm() < opts.step_tol;
                x = cand;
                f = fc;
                grad = gc;
                hess = hc;
                mu *= 0.1;
                if mu < 1e-15 {
                    mu = 0.0;
                }
                if small {
                    return Ok(x);
                }
                accepted = true;
                break;
            }
            if step.norm() < opts.step_tol {
                // No decrease is possible at machine precision.
                return Ok(x);
            }
            mu = if mu == 0.0 { 1e-12 } else { mu * 10.0 };
        }
        if !accepted {
            break;
        }
    }
    if grad.norm() < opts.grad_tol {
        Ok(x)
    } else {
        Err(MultiBeamError::NoConvergence { best: x })
    }
}

/// Closed-form starting points from the linearised constraints.
///
/// Differencing each squared-range constraint against the mean removes the
/// quadratic term. When the points are coplanar the linear system loses a
/// rank, and the two solutions mirrored across that plane are both returned.
pub fn linear_initializers(samples: &[SourceSample], lidar: &LidarConfig) -> Vec<Vec3> {
    let n = samples.len();
    if n < 3 {
        return Vec::new();
    }
    let (rc, c) = (lidar.receiver, lidar.speed_of_light);
    let rho2: Vec<f64> = samples.iter().map(|s| source_range(s, &rc, c).powi(2)).collect();
    let mean_x = samples.iter().map(|s| s.point).sum::<Vec3>() / n as f64;
    let mean_x2 = samples.iter().map(|s| s.point.norm_squared()).sum::<f64>() / n as f64;
    let mean_rho2 = rho2.iter().sum::<f64>() / n as f64;
    let mut a = DMatrix::zeros(n, 3);
    let mut b = DVector::zeros(n);
    for (i, s) in samples.iter().enumerate() {
        let d = s.point - mean_x;
        a[(i, 0)] = 2.0 * d.x;
        a[(i, 1)] = 2.0 * d.y;
        a[(i, 2)] = 2.0 * d.z;
        b[i] = (s.point.norm_squared() - mean_x2) - (rho2[i] - mean_rho2);
    }
    let svd = a.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u.as_ref(), svd.v_t.as_ref()) else {
        return Vec::new();
    };
    let sv = &svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&p, &q| sv[q].total_cmp(&sv[p]));
    if sv[order[0]] <= 0.0 || sv[order[1]] < 1e-9 * sv[order[0]] {
        return Vec::new();
    }
    let rank3 = sv[order[2]] >= 1e-9 * sv[order[0]];
    let mut p = Vec3::zeros();
    for &k in order.iter().take(if rank3 { 3 } else { 2 }) {
        let coef = u.column(k).dot(&b) / sv[k];
        p += Vec3::new(v_t[(k, 0)], v_t[(k, 1)], v_t[(k, 2)]) * coef;
    }
    if rank3 {
        return vec![p];
    }
    // p is orthogonal to the null direction; solve the mean constraint along it.
    let k = order[2];
    let null = Vec3::new(v_t[(k, 0)], v_t[(k, 1)], v_t[(k, 2)]).normalize();
    let half_b = -mean_x.dot(&null);
    let cst = mean_x2 - 2.0 * mean_x.dot(&p) + p.norm_squared() - mean_rho2;
    let disc = (half_b * half_b - cst).max(0.0).sqrt();
    vec![p + null * (-half_b + disc), p + null * (-half_b - disc)]
}

/// Linear initialisation followed by Newton; keeps the lowest-objective result.
pub fn fit_source(samples: &[SourceSample], lidar: &LidarConfig) -> Result<Vec3, MultiBeamError> {
    let inits = linear_initializers(samples, lidar);
    let inits = if inits.is_empty() { vec![lidar.transmitter] } else { inits };
    let mut best: Option<(f64, Vec3)> = None;
    let mut last_err = None;
    for init in inits {
        match localize_source_newton(samples, &init, lidar) {
            Ok(x) => {
                let f = source_objective(samples, &x, lidar);
                if best.map_or(true, |(bf, _)| f < bf) {
                    best = Some((f, x));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.map(|(_, x)| x).ok_or_else(|| last_err.unwrap_or(MultiBeamError::TooFewPoints { needed: 4, got: samples.len() }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacParams {
    /// Points per minimal sample.
    pub n: usize,
    /// Additional inliers required to accept a model.
    pub d: usize,
    /// Iterations.
    pub k: usize,
    /// Floor of the inlier threshold, in meters.
    pub min_tol: f64,
    /// Inlier threshold in units of `c * tof_sigma`.
    pub sigma_factor: f64,
    pub seed: u64,
    pub selection: ModelSelection,
}

/// How RANSAC ranks the models that reach consensus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSelection {
    /// Lowest inlier mean squared residual.
    LowestMse,
    /// Largest inlier set; lowest mean squared residual among equals.
    #[default]
    MostInliers,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self { n: 4, d: 10, k: 1000, min_tol: 5e-3, sigma_factor: 3.0, seed: 0, selection: ModelSelection::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MirroredSourceEstimate {
    pub source: Vec3,
    pub inliers: Vec<usize>,
    /// Mean squared range residual over the inliers, m^2.
    pub mse: f64,
    pub iterations_used: usize,
    /// Set when there were too few points for a meaningful consensus.
    pub low_confidence: bool,
}

fn residual(s: &SourceSample, x: &Vec3, lidar: &LidarConfig) -> f64 {
    (s.point - x).norm() - source_range(s, &lidar.receiver, lidar.speed_of_light)
}

fn inliers_of(samples: &[SourceSample], x: &Vec3, lidar: &LidarConfig, p: &RansacParams) -> Vec<usize> {
    samples
        .iter()
        .enumerate()
        .filter(|(_, s)| {
            let tol = p.min_tol.max(p.sigma_factor * lidar.speed_of_light * s.tof_sigma);
            residual(s, x, lidar).abs() < tol
        })
        .map(|(i, _)| i)
        .collect()
}

fn mse_of(samples: &[SourceSample], idx: &[usize], x: &Vec3, lidar: &LidarConfig) -> f64 {
    idx.iter().map(|&i| residual(&samples[i], x, lidar).powi(2)).sum::<f64>() / idx.len().max(1) as f64
}

fn subset(samples: &[SourceSample], idx: &[usize]) -> Vec<SourceSample> {
    idx.iter().map(|&i| samples[i]).collect()
}

/// RANSAC around [`fit_source`]. Deterministic for a given seed.
pub fn localize_source_ransac(
    samples: &[SourceSample],
    lidar: &LidarConfig,
    params: &RansacParams,
) -> Result<MirroredSourceEstimate, MultiBeamError> {
    let n = params.n.max(4);
    if samples.len() < n {
        return Err(MultiBeamError::TooFewPoints { needed: n, got: samples.len() });
    }
    if samples.len() <= n + params.d {
        let source = fit_source(samples, lidar)?;
        let all: Vec<usize> = (0..samples.len()).collect();
        return Ok(MirroredSourceEstimate {
            source,
            mse: mse_of(samples, &all, &source, lidar),
            inliers: all,
            iterations_used: 0,
            low_confidence: true,
        });
    }
    let mut best: Option<MirroredSourceEstimate> = None;
    for iter in 0..params.k {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(iter as u64);
        let pick = sample(&mut rng, samples.len(), n).into_vec();
        let Ok(tentative) = fit_source(&subset(samples, &pick), lidar) else { continue };
        let inliers = inliers_of(samples, &tentative, lidar, params);
        if inliers.len() < n + params.d {
            continue;
        }
        let refined = fit_source(&subset(samples, &inliers), lidar).unwrap_or(tentative);
        let inliers = inliers_of(samples, &refined, lidar, params);
        if inliers.len() < n + params.d {
            continue;
        }
        let mse = mse_of(samples, &inliers, &refined, lidar);
        let better = best.as_ref().map_or(true, |b| match params.selection {
            ModelSelection::LowestMse => mse < b.mse,
            ModelSelection::MostInliers => (inliers.len(), -mse) > (b.inliers.len(), -b.mse),
        });
        if better {
            best = Some(MirroredSourceEstimate {
                source: refined,
                inliers,
                mse,
                iterations_used: iter + 1,
                low_confidence: false,
            });
        }
    }
    best.ok_or(MultiBeamError::NoConsensus(n + params.d))
}

/// Perpendicular bisector plane of the transmitter and its mirror image.
pub fn plane_from_source(transmitter: &Vec3, source: &Vec3) -> Result<Plane, MultiBeamError> {
    let v = source - transmitter;
    if v.norm() < 1e-9 {
        return Err(MultiBeamError::DegenerateSource);
    }
    let n = UnitVec3::new_normalize(v);
    Ok(Plane::from_point_normal(&((transmitter + source) / 2.0), n))
}

/// Exact position of a two-bounce spot treated as a single-bounce return
/// from the mirrored source.
pub fn position_from_source(spot: &Spot, source: &Vec3, lidar: &LidarConfig) -> Option<Vec3> {
    let mirrored = LidarConfig { transmitter: *source, ..lidar.clone() };
    apparent_position(spot, &mirrored).ok()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionPoint {
    pub position: Vec3,
    pub label: PointLabel,
    pub spot: Option<usize>,
    pub beam: Option<usize>,
}

/// Reflection points on the recovered plane.
///
/// `two_bounce` pairs spot indices with positions. Spots behind the plane
/// (seen from the receiver) give the receiver-side reflection point; spots in
/// front give the beam-side one through the mirrored source. Beam/plane
/// intersections inside the angular hull of those points are added as well.
pub fn recover_reflection_points(
    plane: &Plane,
    two_bounce: &[(usize, Vec3)],
    source: &Vec3,
    lidar: &LidarConfig,
    diagnostics: &mut Vec<String>,
) -> Vec<ReflectionPoint> {
    let rc = lidar.receiver;
    let receiver_side = plane.signed_distance(&rc).signum();
    let mut out = Vec::new();
    for &(i, x) in two_bounce {
        let dist = plane.signed_distance(&x);
        if dist.abs() < 1e-9 {
            out.push(ReflectionPoint { position: x, label: PointLabel::SpecularObserved, spot: Some(i), beam: None });
            continue;
        }
        let (origin, label) = if dist.signum() != receiver_side {
            (rc, PointLabel::SpecularObserved)
        } else {
            (*source, PointLabel::SpecularIlluminated)
        };
        let dir = UnitVec3::new_normalize(x - origin);
        match ray_plane_intersect(&origin, &dir, plane) {
            Some(p) => out.push(ReflectionPoint { position: p, label, spot: Some(i), beam: None }),
            None => diagnostics.push(format!("spot {i}: ray does not meet the mirror plane")),
        }
    }
    let angular: Vec<SphericalDir> = out.iter().map(|r| lidar.arrival_angles(&r.position)).collect();
    let Ok(hull) = convex_hull(&angular) else {
        return out;
    };
    for (b, beam) in lidar.beams.iter().enumerate() {
        let Some(p) = ray_plane_intersect(&lidar.transmitter, beam, plane) else { continue };
        if !hull_contains(&hull, lidar.arrival_angles(&p)) {
            continue;
        }
        if out.iter().any(|r| (r.position - p).norm() < 1e-6) {
            continue;
        }
        out.push(ReflectionPoint { position: p, label: PointLabel::SpecularIlluminated, spot: None, beam: Some(b) });
    }
    out
}

/// Final labelling: beam-matched spots inside the mirror's angular hull are
/// three-bounce and get unfolded; the rest are single-bounce.
///
/// The hull of sampled reflection points undercovers the mirror near its
/// edges, so a spot behind the plane whose unfolded position coincides with a
/// two-bounce position (within `match_tol`) also counts as three-bounce.
pub fn reclassify_and_unfold(
    classification: &MbClassification,
    reflection_points: &[ReflectionPoint],
    two_bounce: &[(usize, Vec3)],
    plane: &Plane,
    spots: &[Spot],
    lidar: &LidarConfig,
    match_tol: f64,
    diagnostics: &mut Vec<String>,
) -> Vec<ReconstructedPoint> {
    let receiver_side = plane.signed_distance(&lidar.receiver).signum();
    let angular: Vec<SphericalDir> = reflection_points.iter().map(|r| lidar.arrival_angles(&r.position)).collect();
    let hull = match convex_hull(&angular) {
        Ok(h) => Some(h),
        Err(e) => {
            diagnostics.push(format!("unfolding skipped: {e}"));
            None
        }
    };
    let mut out = Vec::new();
    for r in reflection_points {
        out.push(ReconstructedPoint {
            position: r.position,
            normal: Some(plane.facing(&lidar.receiver).normal),
            label: r.label,
            provenance: Provenance::MirroredSourcePlane,
            beam_index: r.beam,
            spot_index: r.spot,
        });
    }
    for &(i, b) in &classification.one_or_three_bounce {
        let Ok(p) = apparent_position(&spots[i], lidar) else {
            diagnostics.push(format!("spot {i}: impossible single-bounce range"));
            continue;
        };
        let unfolded = reflect_point(&p, plane);
        let inside = hull.as_ref().is_some_and(|h| hull_contains(h, spots[i].dir))
            || (plane.signed_distance(&p).signum() != receiver_side
                && two_bounce.iter().any(|(_, x)| (x - unfolded).norm() < match_tol));
        let (position, provenance) =
            if inside { (unfolded, Provenance::Unfolded) } else { (p, Provenance::OneBounceRange) };
        out.push(ReconstructedPoint {
            position,
            normal: None,
            label: PointLabel::Diffuse,
            provenance,
            beam_index: Some(b),
            spot_index: Some(i),
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiBeamParams {
    pub beam_tol: f64,
    pub interpolation: Interpolation,
    pub ransac: RansacParams,
    /// Distance within which a reflected two-bounce position counts as
    /// matching a one- or three-bounce position, meters.
    pub mirror_match_tol: f64,
}

impl Default for MultiBeamParams {
    fn default() -> Self {
        Self {
            beam_tol: 0.2_f64.to_radians(),
            interpolation: Interpolation::default(),
            ransac: RansacParams::default(),
            mirror_match_tol: 0.05,
        }
    }
}

/// Least-squares plane through points, with its RMS residual.
fn fit_point_plane(points: &[Vec3]) -> Option<(Plane, f64)> {
    if points.len() < 3 {
        return None;
    }
    let c = points.iter().sum::<Vec3>() / points.len() as f64;
    let cov = points.iter().fold(Matrix3::zeros(), |m, p| m + (p - c) * (p - c).transpose());
    let eig = SymmetricEigen::new(cov);
    let k = eig.eigenvalues.imin();
    let n = UnitVec3::new_normalize(eig.eigenvectors.column(k).into_owned());
    let rms = (eig.eigenvalues[k].max(0.0) / points.len() as f64).sqrt();
    Some((Plane::from_point_normal(&c, n), rms))
}

const TWIN_MISFIT_RATIO: f64 = 4.0;

/// Median distance from the reflection of each two-bounce position, in the
/// mirror implied by `source`, to the nearest observed one- or three-bounce
/// position.
fn mirror_misfit(source: &Vec3, two_bounce: &[usize], anchors: &[Vec3], spots: &[Spot], lidar: &LidarConfig) -> f64 {
    let Ok(plane) = plane_from_source(&lidar.transmitter, source) else { return f64::INFINITY };
    let mut d: Vec<f64> = two_bounce
        .iter()
        .filter_map(|&i| position_from_source(&spots[i], source, lidar))
        .map(|x| {
            let r = reflect_point(&x, &plane);
            anchors.iter().map(|a| (a - r).norm()).fold(f64::INFINITY, f64::min)
        })
        .collect();
    if d.is_empty() {
        return f64::INFINITY;
    }
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

/// When the two-bounce points are coplanar, the source and its reflection in
/// their plane explain the arrival times about equally well. Keeps whichever
/// of the two makes the two-bounce returns mirror images of observed returns.
fn resolve_coplanar_twin(
    estimate: MirroredSourceEstimate,
    samples: &[SourceSample],
    two_bounce: &[usize],
    anchors: &[Vec3],
    spots: &[Spot],
    lidar: &LidarConfig,
    params: &MultiBeamParams,
    notes: &mut Vec<String>,
) -> MirroredSourceEstimate {
    let pts: Vec<Vec3> = estimate.inliers.iter().map(|&k| samples[k].point).collect();
    let Some((support, _)) = fit_point_plane(&pts) else { return estimate };
    let mirrored = reflect_point(&estimate.source, &support);
    let mut twin = localize_source_newton(&subset(samples, &estimate.inliers), &mirrored, lidar).unwrap_or(mirrored);
    // Points that are only nearly coplanar pull the twin off; refit it on
    // the points it explains.
    let own = inliers_of(samples, &twin, lidar, &params.ransac);
    if own.len() >= params.ransac.n {
        twin = localize_source_newton(&subset(samples, &own), &twin, lidar).unwrap_or(twin);
    }
    let idx: Vec<usize> = estimate.inliers.iter().map(|&k| two_bounce[k]).collect();
    let keep = mirror_misfit(&estimate.source, &idx, anchors, spots, lidar);
    let swap = mirror_misfit(&twin, &idx, anchors, spots, lidar);
    // Without observed mirror images both misfits are arbitrary; require a
    // clear winner.
    if !(TWIN_MISFIT_RATIO * swap < keep) {
        return estimate;
    }
    notes.push(format!("coplanar two-bounce points: chose reflected source (median mirror misfit {swap:.3} m vs {keep:.3} m)"));
    // The consensus set stays: it is the same coplanar group either way.
    let mse = mse_of(samples, &estimate.inliers, &twin, lidar);
    MirroredSourceEstimate { source: twin, mse, ..estimate }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlashResult {
    pub classification: MbClassification,
    pub source: Option<MirroredSourceEstimate>,
    pub plane: Option<Plane>,
    pub points: Vec<ReconstructedPoint>,
    /// Failures that cost points.
    pub diagnostics: Vec<String>,
    /// Decisions worth reporting that are not failures.
    pub notes: Vec<String>,
}

/// Full multi-beam reconstruction of one flash.
pub fn reconstruct_flash(spots: &[Spot], lidar: &LidarConfig, params: &MultiBeamParams) -> FlashResult {
    let classification = classify_spots_mb(spots, lidar, params.beam_tol);
    let mut diagnostics = Vec::new();
    let mut result = FlashResult {
        classification: classification.clone(),
        source: None,
        plane: None,
        points: Vec::new(),
        diagnostics: Vec::new(),
        notes: Vec::new(),
    };
    let single_bounce_only = |classification: &MbClassification| -> Vec<ReconstructedPoint> {
        classification
            .one_or_three_bounce
            .iter()
            .filter_map(|&(i, b)| {
                Some(ReconstructedPoint {
                    position: apparent_position(&spots[i], lidar).ok()?,
                    normal: None,
                    label: PointLabel::Diffuse,
                    provenance: Provenance::OneBounceRange,
                    beam_index: Some(b),
                    spot_index: Some(i),
                })
            })
            .collect()
    };

    let anchors: Vec<(SphericalDir, Vec3)> = classification
        .one_or_three_bounce
        .iter()
        .filter_map(|&(i, _)| Some((spots[i].dir, apparent_position(&spots[i], lidar).ok()?)))
        .collect();
    let dirs: Vec<SphericalDir> = classification.two_bounce.iter().map(|&i| spots[i].dir).collect();
    let approx = match interpolate_2b_positions(&dirs, &anchors, &lidar.receiver, params.interpolation) {
        Ok(p) => p,
        Err(e) => {
            diagnostics.push(e.to_string());
            result.points = single_bounce_only(&classification);
            result.diagnostics = diagnostics;
            return result;
        }
    };
    let samples: Vec<SourceSample> = classification
        .two_bounce
        .iter()
        .zip(&approx)
        .map(|(&i, p)| SourceSample { point: *p, tof: spots[i].tof, tof_sigma: spots[i].tof_sigma })
        .collect();
    let estimate = match localize_source_ransac(&samples, lidar, &params.ransac) {
        Ok(e) => {
            let positions: Vec<Vec3> = anchors.iter().map(|a| a.1).collect();
            resolve_coplanar_twin(e, &samples, &classification.two_bounce, &positions, spots, lidar, params, &mut result.notes)
        }
        Err(e) => {
            diagnostics.push(e.to_string());
            result.points = single_bounce_only(&classification);
            result.diagnostics = diagnostics;
            return result;
        }
    };
    let plane = match plane_from_source(&lidar.transmitter, &estimate.source) {
        Ok(p) => p,
        Err(e) => {
            diagnostics.push(e.to_string());
            result.points = single_bounce_only(&classification);
            result.source = Some(estimate);
            result.diagnostics = diagnostics;
            return result;
        }
    };
    // With the source known each inlier's position follows exactly.
    let two_bounce: Vec<(usize, Vec3)> = estimate
        .inliers
        .iter()
        .filter_map(|&k| {
            let i = classification.two_bounce[k];
            position_from_source(&spots[i], &estimate.source, lidar).map(|p| (i, p))
        })
        .collect();
    let refl = recover_reflection_points(&plane, &two_bounce, &estimate.source, lidar, &mut diagnostics);
    result.points = reclassify_and_unfold(
        &classification,
        &refl,
        &two_bounce,
        &plane,
        spots,
        lidar,
        params.mirror_match_tol,
        &mut diagnostics,
    );
    result.source = Some(estimate);
    result.plane = Some(plane);
    result.diagnostics = diagnostics;
    result
}
