//! Single-beam reconstruction.
//!
//! Every exposure (the spots produced by one transmitted beam) is classified
//! by two rules: the spot with the earliest arrival is the true laser spot, and
//! whether that spot lies on the transmitted beam decides if a diffuse or a
//! specular surface was hit first. The matching set of range equations then
//! recovers the diffuse point, the specular reflection points and their
//! normals. Several spots along the beam signal a transparent surface and are
//! disambiguated by arrival time and range-adjusted intensity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{angle_off_ray, angular_separation, bisector_normal, dir_from_angles, GeomError, UnitVec3, Vec3};
use crate::scene::{LidarConfig, PathKind, Spot};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconError {
    #[error("range equation has non-positive denominator {0:.3e} (impossible measurement)")]
    ImpossibleRange(f64),
    #[error("mirror image arrives no later than the true spot (dt = {0:.3e} s)")]
    TimeOrder(f64),
    #[error("inconsistent measurements: recovered range {0:.3e} m is not positive")]
    NegativeRange(f64),
    #[error("degenerate geometry: {0}")]
    Degenerate(&'static str),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Point classes in a reconstructed cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum PointLabel {
    Diffuse,
    /// Reflection point seen by the receiver (S, S2).
    SpecularObserved,
    /// Reflection point hit directly by the beam (S1).
    SpecularIlluminated,
    BehindWindow,
    /// Lone two-bounce return, kept only as a diagnostic.
    Discarded2b,
    /// Single-scatter position of a return that is really multibounce.
    FalseNaive,
    Unresolved,
}

impl PointLabel {
    pub const ALL: [PointLabel; 7] = [
        PointLabel::Diffuse,
        PointLabel::SpecularObserved,
        PointLabel::SpecularIlluminated,
        PointLabel::BehindWindow,
        PointLabel::Discarded2b,
        PointLabel::FalseNaive,
        PointLabel::Unresolved,
    ];

    pub fn is_specular(self) -> bool {
        matches!(self, PointLabel::SpecularObserved | PointLabel::SpecularIlluminated)
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            PointLabel::Diffuse => "diffuse",
            PointLabel::SpecularObserved => "specular_observed",
            PointLabel::SpecularIlluminated => "specular_illuminated",
            PointLabel::BehindWindow => "behind_window",
            PointLabel::Discarded2b => "discarded_2b",
            PointLabel::FalseNaive => "false_naive",
            PointLabel::Unresolved => "unresolved",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.name() == s)
    }
}

/// Which relation produced a reconstructed point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Bistatic single-scatter range.
    OneBounceRange,
    /// Reflection point of a diffuse-first exposure (law of cosines on D, C, S).
    DiffuseFirstHighlight,
    /// True spot of a specular-first exposure, from the mirror image range.
    MirrorImageRange,
    /// Receiver-side reflection point of a specular-first exposure.
    SpecularFirstHighlight,
    /// Beam-side reflection point from the transmitter triangle.
    BeamReflection,
    /// Reflection point on a plane recovered from the mirrored source.
    MirroredSourcePlane,
    /// Apparent position reflected across a recovered mirror plane.
    Unfolded,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::OneBounceRange => "one_bounce_range",
            Provenance::DiffuseFirstHighlight => "diffuse_first_highlight",
            Provenance::MirrorImageRange => "mirror_image_range",
            Provenance::SpecularFirstHighlight => "specular_first_highlight",
            Provenance::BeamReflection => "beam_reflection",
            Provenance::MirroredSourcePlane => "mirrored_source_plane",
            Provenance::Unfolded => "unfolded",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [
            Provenance::OneBounceRange,
            Provenance::DiffuseFirstHighlight,
            Provenance::MirrorImageRange,
            Provenance::SpecularFirstHighlight,
            Provenance::BeamReflection,
            Provenance::MirroredSourcePlane,
            Provenance::Unfolded,
        ]
        .into_iter()
        .find(|p| p.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructedPoint {
    pub position: Vec3,
    pub normal: Option<UnitVec3>,
    pub label: PointLabel,
    pub provenance: Provenance,
    pub beam_index: Option<usize>,
    /// Index of the spot the point was derived from, within its exposure or flash.
    pub spot_index: Option<usize>,
}

impl ReconstructedPoint {
    fn new(position: Vec3, label: PointLabel, provenance: Provenance) -> Self {
        Self { position, normal: None, label, provenance, beam_index: None, spot_index: None }
    }

    fn with_normal(mut self, n: UnitVec3) -> Self {
        self.normal = Some(n);
        self
    }

    fn from_spot(mut self, spot: usize) -> Self {
        self.spot_index = Some(spot);
        self
    }
}

/// The interpretation assigned to one spot; comparable with [`PathKind`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum SpotRole {
    Direct,
    BehindWindow,
    DiffuseFirstMirror,
    SpecularFirstTrue,
    SpecularFirstMirror,
    Discarded,
    Unresolved,
}

impl SpotRole {
    pub fn matches(self, kind: PathKind) -> bool {
        matches!(
            (self, kind),
            (SpotRole::Direct, PathKind::Direct)
                | (SpotRole::BehindWindow, PathKind::BehindWindow)
                | (SpotRole::DiffuseFirstMirror, PathKind::DiffuseFirstMirror)
                | (SpotRole::SpecularFirstTrue, PathKind::SpecularFirstTrue)
                | (SpotRole::SpecularFirstMirror, PathKind::SpecularFirstMirror)
                // A lone two-bounce return is recognised as such, then dropped,
                // and chained reflections are never inverted.
                | (
                    SpotRole::Discarded,
                    PathKind::SpecularFirstTrue | PathKind::DiffuseFirstMirror | PathKind::MultiSpecular
                )
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SingleBeamParams {
    /// Angular tolerance (radians) for a spot to count as lying on the beam.
    pub beam_tol: f64,
    /// Guard band, in combined timing standard deviations, for arrival-time comparisons.
    pub guard_sigmas: f64,
    /// Relabel a later on-beam spot as behind-window when it is brighter
    /// (range-adjusted) than the earlier off-beam true spot.
    pub reflectance_fallback: bool,
}

impl Default for SingleBeamParams {
    fn default() -> Self {
        Self { beam_tol: 0.2_f64.to_radians(), guard_sigmas: 3.0, reflectance_fallback: false }
    }
}

/// Spot indices refer to the exposure's spot slice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum ExposureClassification {
    DiffuseFirst {
        true_spot: usize,
        mirror_spots: Vec<usize>,
    },
    SpecularFirst {
        true_spot: usize,
        /// Three-bounce image lying on the beam, when detected.
        beam_image: Option<usize>,
        /// Three-bounce images from other specular surfaces.
        other_images: Vec<usize>,
    },
    TransparentFirst {
        behind_spots: Vec<usize>,
        true_spot: usize,
        beam_image: Option<usize>,
        other_images: Vec<usize>,
    },
    TwoBounceOnly {
        spot: usize,
    },
    OneBounceOnly {
        spot: usize,
    },
    Unresolved {
        spots: Vec<usize>,
    },
    Empty,
}

/// Bistatic single-scatter range: distance from the receiver to a point whose
/// return arrives after `tof`, at an angle `theta` from the baseline
/// (receiver towards transmitter).
pub fn range_1b(tof: f64, theta: f64, lidar: &LidarConfig) -> Result<f64, ReconError> {
    range_1b_cos(tof, theta.cos(), lidar)
}

fn range_1b_cos(tof: f64, cos_theta: f64, lidar: &LidarConfig) -> Result<f64, ReconError> {
    let c = lidar.speed_of_light;
    let s = lidar.baseline();
    let ct = c * tof;
    let denom = ct - s * cos_theta;
    if !(denom > 0.0) {
        return Err(ReconError::ImpossibleRange(denom));
    }
    Ok(0.5 * (ct * ct - s * s) / denom)
}

/// Cosine of the angle between an arrival direction and the baseline.
fn baseline_cos(dir: &UnitVec3, lidar: &LidarConfig) -> f64 {
    let b = lidar.transmitter - lidar.receiver;
    let s = b.norm();
    if s == 0.0 {
        0.0
    } else {
        dir.dot(&b) / s
    }
}

/// Receiver distance of the single-scatter (apparent) position of a spot.
pub fn apparent_range(spot: &Spot, lidar: &LidarConfig) -> Result<f64, ReconError> {
    let u = dir_from_angles(spot.dir);
    range_1b_cos(spot.tof, baseline_cos(&u, lidar), lidar)
}

pub fn apparent_position(spot: &Spot, lidar: &LidarConfig) -> Result<Vec3, ReconError> {
    let r = apparent_range(spot, lidar)?;
    Ok(lidar.receiver + dir_from_angles(spot.dir).into_inner() * r)
}

/// Range-adjusted intensity, apparent range squared times energy.
pub fn range_adjusted_intensity(spot: &Spot, lidar: &LidarConfig) -> f64 {
    apparent_range(spot, lidar).map(|r| r * r * spot.energy).unwrap_or(0.0)
}

/// Receiver range of a reflection point from the law of cosines in the
/// triangle (true spot, receiver, reflection point).
fn highlight_range(dt: f64, cos_gap: f64, r_true: f64, c: f64) -> Result<f64, ReconError> {
    let denom = dt + cos_gap * r_true / c;
    if denom < 1e-15 {
        return Err(ReconError::Degenerate("reflection-point range denominator vanishes"));
    }
    Ok(c / 2.0 * dt * (dt + 2.0 * r_true / c) / denom)
}

/// `1 - cos(delta)` evaluated without cancellation.
fn one_minus_cos(delta: f64) -> f64 {
    let h = (delta / 2.0).sin();
    2.0 * h * h
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffuseFirstSolution {
    pub diffuse: Vec3,
    pub highlight: Vec3,
    pub normal: UnitVec3,
}

/// Diffuse point D, reflection point S and its normal from a one-bounce true
/// spot and a two-bounce mirror image.
pub fn solve_diffuse_first(true_spot: &Spot, mirror: &Spot, lidar: &LidarConfig) -> Result<DiffuseFirstSolution, ReconError> {
    let c = lidar.speed_of_light;
    let r_dc = apparent_range(true_spot, lidar)?;
    let u_d = dir_from_angles(true_spot.dir);
    let u_s = dir_from_angles(mirror.dir);
    let delta = angular_separation(true_spot.dir, mirror.dir);
    let dt = mirror.tof - true_spot.tof;
    let d = lidar.receiver + u_d.into_inner() * r_dc;
    if dt == 0.0 && delta == 0.0 {
        return Ok(DiffuseFirstSolution { diffuse: d, highlight: d, normal: UnitVec3::new_normalize(lidar.receiver - d) });
    }
    if dt <= 0.0 {
        return Err(ReconError::TimeOrder(dt));
    }
    let r_sc = highlight_range(dt, one_minus_cos(delta), r_dc, c)?;
    let s = lidar.receiver + u_s.into_inner() * r_sc;
    let normal = bisector_normal(&d, &lidar.receiver, &s)?;
    Ok(DiffuseFirstSolution { diffuse: d, highlight: s, normal })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecularFirstSolution {
    pub diffuse: Vec3,
    /// Reflection point seen by the receiver.
    pub highlight: Vec3,
    /// Reflection point hit by the beam.
    pub illuminated: Vec3,
    pub highlight_normal: UnitVec3,
    pub illuminated_normal: UnitVec3,
    /// Receiver range of the diffuse point.
    pub r_dc: f64,
}

/// D, S1, S2 and both normals from a two-bounce true spot and its
/// three-bounce image on the beam.
pub fn solve_specular_first(
    true_spot: &Spot,
    image: &Spot,
    beam: &UnitVec3,
    lidar: &LidarConfig,
) -> Result<SpecularFirstSolution, ReconError> {
    let c = lidar.speed_of_light;
    let dt = image.tof - true_spot.tof;
    if dt <= 0.0 {
        return Err(ReconError::TimeOrder(dt));
    }
    let r_image = apparent_range(image, lidar)?;
    let r_dc = r_image - c * dt;
    if r_dc <= 0.0 {
        return Err(ReconError::NegativeRange(r_dc));
    }
    let u_d = dir_from_angles(true_spot.dir);
    let d = lidar.receiver + u_d.into_inner() * r_dc;
    let delta = angular_separation(true_spot.dir, image.dir);
    let r_s2c = highlight_range(dt, one_minus_cos(delta), r_dc, c)?;
    let s2 = lidar.receiver + dir_from_angles(image.dir).into_inner() * r_s2c;

    // Transmitter side: apparent transmitter range of the image, then the
    // triangle (L, S1, D).
    let r_image_l = c * true_spot.tof - r_dc;
    let to_d = d - lidar.transmitter;
    let r_dl = to_d.norm();
    let cos_l = to_d.dot(beam) / r_dl;
    let denom = r_image_l - r_dl * cos_l;
    if denom.abs() < 1e-12 {
        return Err(ReconError::Degenerate("diffuse point lies on the beam axis"));
    }
    let r_ls1 = 0.5 * (r_image_l * r_image_l - r_dl * r_dl) / denom;
    if r_ls1 <= 0.0 {
        return Err(ReconError::NegativeRange(r_ls1));
    }
    let s1 = lidar.transmitter + beam.into_inner() * r_ls1;
    Ok(SpecularFirstSolution {
        diffuse: d,
        highlight: s2,
        illuminated: s1,
        highlight_normal: bisector_normal(&d, &lidar.receiver, &s2)?,
        illuminated_normal: bisector_normal(&lidar.transmitter, &d, &s1)?,
        r_dc,
    })
}

/// Reflection point on another specular surface, given the already-recovered
/// diffuse point range.
pub fn solve_extra_highlight(
    true_spot: &Spot,
    r_dc: f64,
    image: &Spot,
    lidar: &LidarConfig,
) -> Result<(Vec3, UnitVec3), ReconError> {
    let dt = image.tof - true_spot.tof;
    if dt <= 0.0 {
        return Err(ReconError::TimeOrder(dt));
    }
    let delta = angular_separation(true_spot.dir, image.dir);
    let r = highlight_range(dt, one_minus_cos(delta), r_dc, lidar.speed_of_light)?;
    let s = lidar.receiver + dir_from_angles(image.dir).into_inner() * r;
    let d = lidar.receiver + dir_from_angles(true_spot.dir).into_inner() * r_dc;
    Ok((s, bisector_normal(&d, &lidar.receiver, &s)?))
}

/// Angle between a spot's apparent position and the beam ray, seen from the
/// transmitter. Spots with impossible ranges are infinitely far off-beam.
pub fn beam_offset(spot: &Spot, beam: &UnitVec3, lidar: &LidarConfig) -> f64 {
    match apparent_position(spot, lidar) {
        Ok(p) => angle_off_ray(&lidar.transmitter, beam, &p),
        Err(_) => f64::INFINITY,
    }
}

fn earliest(spots: &[Spot], among: impl Iterator<Item = usize>) -> Option<usize> {
    among.min_by(|&a, &b| spots[a].tof.total_cmp(&spots[b].tof).then(a.cmp(&b)))
}

/// Classifies one exposure.
pub fn classify_exposure(
    spots: &[Spot],
    beam: &UnitVec3,
    lidar: &LidarConfig,
    params: &SingleBeamParams,
) -> ExposureClassification {
    if spots.is_empty() {
        return ExposureClassification::Empty;
    }
    let offsets: Vec<f64> = spots.iter().map(|s| beam_offset(s, beam, lidar)).collect();
    let mut on_beam: Vec<usize> = (0..spots.len()).filter(|&i| offsets[i] <= params.beam_tol).collect();
    on_beam.sort_by(|&a, &b| offsets[a].total_cmp(&offsets[b]).then(a.cmp(&b)));
    let off_beam: Vec<usize> = (0..spots.len()).filter(|i| !on_beam.contains(i)).collect();

    if on_beam.len() >= 2 {
        return disambiguate_transparent(spots, &on_beam, &off_beam, lidar, params);
    }
    let first = earliest(spots, 0..spots.len()).expect("non-empty");
    if spots.len() == 1 {
        return if on_beam.is_empty() {
            ExposureClassification::TwoBounceOnly { spot: first }
        } else {
            ExposureClassification::OneBounceOnly { spot: first }
        };
    }
    if on_beam.contains(&first) {
        return ExposureClassification::DiffuseFirst {
            true_spot: first,
            mirror_spots: (0..spots.len()).filter(|&i| i != first).collect(),
        };
    }
    let beam_image = on_beam.first().copied();
    let other_images: Vec<usize> = off_beam.iter().copied().filter(|&i| i != first).collect();
    if let (Some(later), true, true) = (beam_image, other_images.is_empty(), params.reflectance_fallback) {
        // Two spots and no other image: a later spot brighter than the true
        // spot cannot be its three-bounce image.
        if range_adjusted_intensity(&spots[later], lidar) > range_adjusted_intensity(&spots[first], lidar) {
            return ExposureClassification::TransparentFirst {
                behind_spots: vec![later],
                true_spot: first,
                beam_image: None,
                other_images: Vec::new(),
            };
        }
    }
    ExposureClassification::SpecularFirst { true_spot: first, beam_image, other_images }
}

/// Resolves several spots along the beam into behind-window returns and a
/// three-bounce image, using the earliest off-beam spot as the true spot.
pub fn disambiguate_transparent(
    spots: &[Spot],
    on_beam: &[usize],
    off_beam: &[usize],
    lidar: &LidarConfig,
    params: &SingleBeamParams,
) -> ExposureClassification {
    let Some(true_spot) = earliest(spots, off_beam.iter().copied()) else {
        let mut all = on_beam.to_vec();
        all.sort_unstable();
        return ExposureClassification::Unresolved { spots: all };
    };
    let t2 = &spots[true_spot];
    let (mut behind, later): (Vec<usize>, Vec<usize>) = on_beam.iter().copied().partition(|&i| {
        let s = &spots[i];
        let guard = params.guard_sigmas * s.tof_sigma.hypot(t2.tof_sigma);
        s.tof < t2.tof + guard
    });
    let beam_image = later.iter().copied().min_by(|&a, &b| {
        range_adjusted_intensity(&spots[a], lidar)
            .total_cmp(&range_adjusted_intensity(&spots[b], lidar))
            .then(a.cmp(&b))
    });
    behind.extend(later.iter().copied().filter(|&i| Some(i) != beam_image));
    behind.sort_unstable();
    ExposureClassification::TransparentFirst {
        behind_spots: behind,
        true_spot,
        beam_image,
        other_images: off_beam.iter().copied().filter(|&i| i != true_spot).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExposureResult {
    pub classification: ExposureClassification,
    pub points: Vec<ReconstructedPoint>,
    /// Role per input spot.
    pub roles: Vec<SpotRole>,
    pub errors: Vec<String>,
}

/// Classifies an exposure and applies the matching range equations.
pub fn reconstruct_exposure(
    spots: &[Spot],
    beam_index: usize,
    lidar: &LidarConfig,
    params: &SingleBeamParams,
) -> ExposureResult {
    let beam = lidar.beams[beam_index];
    let classification = classify_exposure(spots, &beam, lidar, params);
    let mut points = Vec::new();
    let mut roles = vec![SpotRole::Discarded; spots.len()];
    let mut errors = Vec::new();

    let one_bounce = |i: usize, label: PointLabel| -> Result<ReconstructedPoint, ReconError> {
        Ok(ReconstructedPoint::new(apparent_position(&spots[i], lidar)?, label, Provenance::OneBounceRange).from_spot(i))
    };
    let mut push = |r: Result<ReconstructedPoint, ReconError>, points: &mut Vec<ReconstructedPoint>| match r {
        Ok(p) => points.push(p),
        Err(e) => errors.push(e.to_string()),
    };

    match &classification {
        ExposureClassification::Empty => {}
        ExposureClassification::OneBounceOnly { spot } => {
            roles[*spot] = SpotRole::Direct;
            push(one_bounce(*spot, PointLabel::Diffuse), &mut points);
        }
        ExposureClassification::TwoBounceOnly { spot } => {
            push(one_bounce(*spot, PointLabel::Discarded2b), &mut points);
        }
        ExposureClassification::Unresolved { spots: idx } => {
            for &i in idx {
                roles[i] = SpotRole::Unresolved;
                push(one_bounce(i, PointLabel::Unresolved), &mut points);
            }
        }
        ExposureClassification::DiffuseFirst { true_spot, mirror_spots } => {
            roles[*true_spot] = SpotRole::Direct;
            push(one_bounce(*true_spot, PointLabel::Diffuse), &mut points);
            for &m in mirror_spots {
                roles[m] = SpotRole::DiffuseFirstMirror;
                let r = solve_diffuse_first(&spots[*true_spot], &spots[m], lidar).map(|sol| {
                    ReconstructedPoint::new(sol.highlight, PointLabel::SpecularObserved, Provenance::DiffuseFirstHighlight)
                        .with_normal(sol.normal)
                        .from_spot(m)
                });
                push(r, &mut points);
            }
        }
        ExposureClassification::SpecularFirst { true_spot, beam_image, other_images }
        | ExposureClassification::TransparentFirst { true_spot, beam_image, other_images, .. } => {
            if let ExposureClassification::TransparentFirst { behind_spots, .. } = &classification {
                for &b in behind_spots {
                    roles[b] = SpotRole::BehindWindow;
                    push(one_bounce(b, PointLabel::BehindWindow), &mut points);
                }
            }
            match beam_image {
                Some(img) => {
                    roles[*true_spot] = SpotRole::SpecularFirstTrue;
                    roles[*img] = SpotRole::SpecularFirstMirror;
                    match solve_specular_first(&spots[*true_spot], &spots[*img], &beam, lidar) {
                        Ok(sol) => {
                            points.push(
                                ReconstructedPoint::new(sol.diffuse, PointLabel::Diffuse, Provenance::MirrorImageRange)
                                    .from_spot(*true_spot),
                            );
                            points.push(
                                ReconstructedPoint::new(
                                    sol.highlight,
                                    PointLabel::SpecularObserved,
                                    Provenance::SpecularFirstHighlight,
                                )
                                .with_normal(sol.highlight_normal)
                                .from_spot(*img),
                            );
                            points.push(
                                ReconstructedPoint::new(
                                    sol.illuminated,
                                    PointLabel::SpecularIlluminated,
                                    Provenance::BeamReflection,
                                )
                                .with_normal(sol.illuminated_normal)
                                .from_spot(*img),
                            );
                            for &o in other_images {
                                roles[o] = SpotRole::SpecularFirstMirror;
                                let r = solve_extra_highlight(&spots[*true_spot], sol.r_dc, &spots[o], lidar).map(|(s, n)| {
                                    ReconstructedPoint::new(s, PointLabel::SpecularObserved, Provenance::SpecularFirstHighlight)
                                        .with_normal(n)
                                        .from_spot(o)
                                });
                                push(r, &mut points);
                            }
                        }
                        Err(e) => errors.push(e.to_string()),
                    }
                }
                None => {
                    // No image on the beam: the true spot cannot be located.
                    push(one_bounce(*true_spot, PointLabel::Discarded2b), &mut points);
                }
            }
        }
    }
    for p in &mut points {
        p.beam_index = Some(beam_index);
    }
    ExposureResult { classification, points, roles, errors }
}

/// Single-scatter positions of every spot, as a conventional lidar would report them.
pub fn naive_pointcloud(spots: &[Spot], lidar: &LidarConfig) -> Vec<ReconstructedPoint> {
    spots
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let mut p =
                ReconstructedPoint::new(apparent_position(s, lidar).ok()?, PointLabel::Diffuse, Provenance::OneBounceRange)
                    .from_spot(i);
            p.beam_index = s.beam_index;
            Some(p)
        })
        .collect()
}

/// Marks naive points whose spots the full pipeline treats as multibounce.
pub fn mark_false_naive(points: &mut [ReconstructedPoint], roles: &[SpotRole]) {
    for p in points {
        if let Some(i) = p.spot_index {
            if !matches!(roles[i], SpotRole::Direct | SpotRole::BehindWindow) {
                p.label = PointLabel::FalseNaive;
            }
        }
    }
}
