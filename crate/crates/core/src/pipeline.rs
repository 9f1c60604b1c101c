//! End-to-end processing: simulation, optional histogram sensing,
//! reconstruction and evaluation, plus the artifact documents exchanged
//! between those stages.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::eval::{compare_planes, plane_errors, PlaneErrorReport, Summary};
use crate::geom::{angle_between, dir_from_angles, Plane, UnitVec3, Vec3};
use crate::multi_beam::{reconstruct_flash, MbClassification, MirroredSourceEstimate, MultiBeamParams};
use crate::scene::{BounceClass, Facet, LidarConfig, PathKind, PathRecord, Scene, Spot, spots_from_paths};
use crate::sensor::{detect_pixels, extract_spots, perturb_spots, render_histograms, HistogramCube, SpotNoise, SpotParams, TimingModel};
use crate::single_beam::{
    mark_false_naive, naive_pointcloud, reconstruct_exposure, ExposureClassification, PointLabel, Provenance,
    ReconstructedPoint, SingleBeamParams, SpotRole,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    SingleBeam,
    MultiBeam,
    Naive,
    Transparent,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::SingleBeam => "single_beam",
            Mode::MultiBeam => "multi_beam",
            Mode::Naive => "naive",
            Mode::Transparent => "transparent",
        }
    }
}

/// Derives an independent stream seed from a master seed.
pub fn sub_seed(master: u64, stream: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Spots produced by one transmitted beam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exposure {
    pub beam_index: usize,
    pub spots: Vec<Spot>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SimulateOptions {
    pub noise: SpotNoise,
    /// Ideal spots with relative energy below this are not detected.
    pub detection_floor: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub paths: Vec<PathRecord>,
    pub exposures: Vec<Exposure>,
    /// Every beam fired at once; spot truth indices refer to `paths`.
    pub flash: Vec<Spot>,
}

fn finish_spots(mut spots: Vec<Spot>, offset: usize, opts: &SimulateOptions, stream: u64) -> Vec<Spot> {
    spots.retain(|s| s.energy >= opts.detection_floor);
    for s in &mut spots {
        for t in &mut s.truth {
            *t += offset;
        }
    }
    if opts.noise.is_zero() {
        spots
    } else {
        perturb_spots(&spots, &opts.noise, sub_seed(opts.seed, stream))
    }
}

/// Traces every beam, producing per-beam exposures and a combined flash.
pub fn simulate(scene: &Scene, lidar: &LidarConfig, opts: &SimulateOptions) -> Simulation {
    let mut paths = Vec::new();
    let mut exposures = Vec::new();
    for (b, beam) in lidar.beams.iter().enumerate() {
        let beam_paths = scene.trace_beam(lidar, b, beam);
        let spots = finish_spots(spots_from_paths(&beam_paths, lidar), paths.len(), opts, b as u64);
        paths.extend(beam_paths);
        exposures.push(Exposure { beam_index: b, spots });
    }
    let flash = finish_spots(spots_from_paths(&paths, lidar), 0, opts, u64::MAX);
    Simulation { paths, exposures, flash }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorParams {
    pub timing: TimingModel,
    pub fa_probability: f64,
    pub abs_threshold: f64,
    pub spot: SpotParams,
}

impl Default for SensorParams {
    fn default() -> Self {
        Self { timing: TimingModel::default(), fa_probability: 1e-3, abs_threshold: 5.0, spot: SpotParams::default() }
    }
}

/// Copies ground-truth indices from the nearest ideal spot within two pixels.
fn attach_truth(found: &mut [Spot], ideal: &[Spot], lidar: &LidarConfig) {
    let radius = 2.0 * lidar.detector.pitch_theta().max(lidar.detector.pitch_phi());
    for s in found.iter_mut() {
        let u = dir_from_angles(s.dir);
        let best = ideal
            .iter()
            .map(|t| (angle_between(&u, &dir_from_angles(t.dir)), t))
            .filter(|(a, _)| *a <= radius)
            .min_by(|a, b| a.0.total_cmp(&b.0));
        if let Some((_, t)) = best {
            s.truth = t.truth.clone();
        }
    }
}

fn cube_to_spots(cube: &HistogramCube, params: &SensorParams, beam: Option<usize>) -> Vec<Spot> {
    let det = detect_pixels(cube, &params.timing, params.fa_probability, params.abs_threshold);
    let scale = params.timing.expected_counts(1.0);
    extract_spots(&det, &params.spot)
        .into_iter()
        .map(|mut s| {
            s.energy /= scale;
            s.beam_index = beam;
            s
        })
        .collect()
}

/// Spots recovered from histograms.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensed {
    pub exposures: Vec<Exposure>,
    pub flash: Vec<Spot>,
}

/// Renders, detects and extracts every exposure, then does the same for the
/// sum of all per-beam cubes. Cubes are handed to `on_cube` as they are made
/// and are not retained, so memory stays at two cubes.
pub fn sense(
    exposures: &[Exposure],
    flash_truth: &[Spot],
    lidar: &LidarConfig,
    params: &SensorParams,
    seed: u64,
    mut on_cube: impl FnMut(usize, &HistogramCube),
) -> Sensed {
    let mut total: Option<HistogramCube> = None;
    let mut sensed = Vec::with_capacity(exposures.len());
    for e in exposures {
        let cube = render_histograms(&e.spots, &lidar.detector, &params.timing, sub_seed(seed, e.beam_index as u64));
        on_cube(e.beam_index, &cube);
        let mut spots = cube_to_spots(&cube, params, Some(e.beam_index));
        attach_truth(&mut spots, &e.spots, lidar);
        sensed.push(Exposure { beam_index: e.beam_index, spots });
        match &mut total {
            None => total = Some(cube),
            Some(t) => t.accumulate(&cube).expect("cubes share a grid"),
        }
    }
    let flash = match total {
        Some(t) => {
            let mut spots = cube_to_spots(&t, params, None);
            attach_truth(&mut spots, flash_truth, lidar);
            spots
        }
        None => Vec::new(),
    };
    Sensed { exposures: sensed, flash }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconParams {
    pub single_beam: SingleBeamParams,
    pub multi_beam: MultiBeamParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureReport {
    pub beam_index: usize,
    pub classification: ExposureClassification,
    pub roles: Vec<SpotRole>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlashReport {
    pub classification: MbClassification,
    pub source: Option<MirroredSourceEstimate>,
    pub plane: Option<Plane>,
    pub diagnostics: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub exposures: usize,
    pub points: usize,
    pub discarded_2b: usize,
    pub unresolved: usize,
    pub transparent: usize,
    pub errors: usize,
}

/// Reconstruction diagnostics document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub schema_version: u32,
    pub run_id: String,
    pub mode: Mode,
    pub counts: Counts,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exposures: Vec<ExposureReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flash: Option<FlashReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub points: Vec<ReconstructedPoint>,
    pub diagnostics: Diagnostics,
}

/// Reconstructs a run. Single-beam modes use `exposures`; multi-beam uses `flash`.
pub fn reconstruct(
    mode: Mode,
    exposures: &[Exposure],
    flash: &[Spot],
    lidar: &LidarConfig,
    params: &ReconParams,
    run_id: &str,
) -> Reconstruction {
    let mut counts = Counts::default();
    let mut points = Vec::new();
    let mut reports = Vec::new();
    let mut flash_report = None;
    match mode {
        Mode::SingleBeam | Mode::Transparent | Mode::Naive => {
            let mut sb = params.single_beam;
            if mode == Mode::Transparent {
                sb.reflectance_fallback = true;
            }
            for e in exposures {
                let res = reconstruct_exposure(&e.spots, e.beam_index, lidar, &sb);
                counts.exposures += 1;
                counts.errors += res.errors.len();
                match &res.classification {
                    ExposureClassification::TwoBounceOnly { .. } => counts.discarded_2b += 1,
                    ExposureClassification::Unresolved { .. } => counts.unresolved += 1,
                    ExposureClassification::TransparentFirst { .. } => counts.transparent += 1,
                    _ => {}
                }
                if mode == Mode::Naive {
                    let mut naive = naive_pointcloud(&e.spots, lidar);
                    mark_false_naive(&mut naive, &res.roles);
                    for p in &mut naive {
                        p.beam_index = Some(e.beam_index);
                    }
                    points.extend(naive);
                } else {
                    points.extend(res.points);
                }
                reports.push(ExposureReport {
                    beam_index: e.beam_index,
                    classification: res.classification,
                    roles: res.roles,
                    errors: res.errors,
                });
            }
        }
        Mode::MultiBeam => {
            let res = reconstruct_flash(flash, lidar, &params.multi_beam);
            counts.exposures = 1;
            counts.errors = res.diagnostics.len();
            points = res.points;
            flash_report = Some(FlashReport {
                classification: res.classification,
                source: res.source,
                plane: res.plane,
                diagnostics: res.diagnostics,
                notes: res.notes,
            });
        }
    }
    counts.points = points.len();
    Reconstruction {
        points,
        diagnostics: Diagnostics {
            schema_version: SCHEMA_VERSION,
            run_id: run_id.to_owned(),
            mode,
            counts,
            exposures: reports,
            flash: flash_report,
        },
    }
}

/// Ground truth of a specular surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceTruth {
    pub id: String,
    pub object: Option<String>,
    pub vertices: Vec<Vec3>,
    /// Plane with its normal facing the receiver.
    pub plane: Plane,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub schema_version: u32,
    pub run_id: String,
    pub receiver: Vec3,
    pub surfaces: Vec<SurfaceTruth>,
    pub paths: Vec<PathRecord>,
}

impl GroundTruth {
    pub fn new(scene: &Scene, lidar: &LidarConfig, paths: Vec<PathRecord>, run_id: &str) -> Self {
        let surfaces = scene
            .facets
            .iter()
            .filter(|f| f.material.is_specular())
            .map(|f: &Facet| SurfaceTruth {
                id: f.id.clone(),
                object: f.object.clone(),
                vertices: f.vertices.clone(),
                plane: f.plane().facing(&lidar.receiver),
            })
            .collect();
        Self { schema_version: SCHEMA_VERSION, run_id: run_id.to_owned(), receiver: lidar.receiver, surfaces, paths }
    }
}

/// Spots document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotsFile {
    pub schema_version: u32,
    pub run_id: String,
    pub exposures: Vec<Exposure>,
    pub flash: Vec<Spot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMetrics {
    /// Object name, or facet id for facets without one.
    pub surface: String,
    pub n_points: usize,
    pub report: PlaneErrorReport,
}

/// Counts of (truth, prediction) pairs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub rows: BTreeMap<String, BTreeMap<String, usize>>,
    pub total: usize,
    pub correct: usize,
}

impl Confusion {
    fn add(&mut self, truth: &str, predicted: &str, correct: bool) {
        *self.rows.entry(truth.to_owned()).or_default().entry(predicted.to_owned()).or_default() += 1;
        self.total += 1;
        if correct {
            self.correct += 1;
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// An exposure in which at least one spot was misinterpreted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Misclassification {
    pub beam_index: usize,
    /// `(spot, truth kind, predicted role)` for each wrong spot.
    pub spots: Vec<(usize, PathKind, SpotRole)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneRecovery {
    pub surface: String,
    pub normal_error: f64,
    pub offset_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub schema_version: u32,
    pub run_id: String,
    pub mode: Mode,
    pub surfaces: Vec<SurfaceMetrics>,
    /// Distance from each diffuse point to its ground-truth scattering point.
    pub diffuse_error: Summary,
    pub confusion: Confusion,
    pub misclassified: Vec<Misclassification>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plane_recovery: Option<PlaneRecovery>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("run id mismatch: {0} vs {1}")]
pub struct RunIdMismatch(pub String, pub String);

fn kind_name(k: PathKind) -> &'static str {
    match k {
        PathKind::Direct => "direct",
        PathKind::BehindWindow => "behind_window",
        PathKind::DiffuseFirstMirror => "diffuse_first_mirror",
        PathKind::SpecularFirstTrue => "specular_first_true",
        PathKind::SpecularFirstMirror => "specular_first_mirror",
        PathKind::MultiSpecular => "multi_specular",
    }
}

fn role_name(r: SpotRole) -> &'static str {
    match r {
        SpotRole::Direct => "direct",
        SpotRole::BehindWindow => "behind_window",
        SpotRole::DiffuseFirstMirror => "diffuse_first_mirror",
        SpotRole::SpecularFirstTrue => "specular_first_true",
        SpotRole::SpecularFirstMirror => "specular_first_mirror",
        SpotRole::Discarded => "discarded",
        SpotRole::Unresolved => "unresolved",
    }
}

fn bounce_name(b: BounceClass) -> &'static str {
    match b {
        BounceClass::One => "1B",
        BounceClass::Two => "2B",
        BounceClass::Three => "3B",
    }
}

/// Distance from `p` to a convex or simple polygon, approximated by the plane
/// distance when the projection falls inside and the nearest vertex otherwise.
fn polygon_distance(p: &Vec3, s: &SurfaceTruth) -> f64 {
    let proj = s.plane.project(p);
    let inside = {
        // Same crossing test as the scene model, on the plane's own axes.
        let n = s.plane.normal;
        let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let a = n.cross(&helper).normalize();
        let b = n.cross(&a);
        let q = (proj.dot(&a), proj.dot(&b));
        let poly: Vec<(f64, f64)> = s.vertices.iter().map(|v| (v.dot(&a), v.dot(&b))).collect();
        let mut inside = false;
        for i in 0..poly.len() {
            let (x1, y1) = poly[i];
            let (x2, y2) = poly[(i + 1) % poly.len()];
            if (y1 > q.1) != (y2 > q.1) && q.0 < x1 + (q.1 - y1) * (x2 - x1) / (y2 - y1) {
                inside = !inside;
            }
        }
        inside
    };
    if inside {
        s.plane.signed_distance(p).abs()
    } else {
        s.vertices.iter().map(|v| (v - p).norm()).fold(f64::INFINITY, f64::min)
    }
}

fn spot_truth<'a>(spots: &[Spot], idx: Option<usize>, paths: &'a [PathRecord]) -> Option<&'a PathRecord> {
    let s = spots.get(idx?)?;
    paths.get(*s.truth.first()?)
}

/// Scores a reconstruction against ground truth.
pub fn evaluate(
    recon: &Reconstruction,
    spots: &SpotsFile,
    truth: &GroundTruth,
) -> Result<Metrics, RunIdMismatch> {
    let diag = &recon.diagnostics;
    for other in [&spots.run_id, &truth.run_id] {
        if *other != diag.run_id {
            return Err(RunIdMismatch(diag.run_id.clone(), other.clone()));
        }
    }

    // Specular points grouped by nearest ground-truth surface.
    let mut groups: BTreeMap<String, Vec<(usize, Vec3, UnitVec3)>> = BTreeMap::new();
    for p in &recon.points {
        let (true, Some(n)) = (p.label.is_specular(), p.normal) else { continue };
        let nearest = truth
            .surfaces
            .iter()
            .enumerate()
            .min_by(|a, b| polygon_distance(&p.position, a.1).total_cmp(&polygon_distance(&p.position, b.1)));
        if let Some((k, s)) = nearest {
            let key = s.object.clone().unwrap_or_else(|| s.id.clone());
            groups.entry(key).or_default().push((k, p.position, n));
        }
    }
    let surfaces = groups
        .into_iter()
        .map(|(surface, pts)| {
            // Evaluate facet by facet, then merge for multi-facet objects.
            let mut by_facet: BTreeMap<usize, Vec<(Vec3, UnitVec3)>> = BTreeMap::new();
            for (k, x, n) in &pts {
                by_facet.entry(*k).or_default().push((*x, *n));
            }
            let mut merged: Option<PlaneErrorReport> = None;
            for (k, list) in by_facet {
                let r = plane_errors(&list, &truth.surfaces[k].plane);
                merged = Some(match merged {
                    None => r,
                    Some(mut m) => {
                        m.displacements.extend(r.displacements);
                        m.tilts.extend(r.tilts);
                        m.projected.extend(r.projected);
                        m.displacement = Summary::of(&m.displacements);
                        m.tilt = Summary::of(&m.tilts);
                        m
                    }
                });
            }
            SurfaceMetrics { surface, n_points: pts.len(), report: merged.expect("group is non-empty") }
        })
        .collect();

    let mut diffuse = Vec::new();
    let mut confusion = Confusion::default();
    let mut misclassified = Vec::new();
    let mut plane_recovery = None;
    match diag.mode {
        Mode::MultiBeam => {
            for p in &recon.points {
                if p.label == PointLabel::Diffuse {
                    if let Some(path) = spot_truth(&spots.flash, p.spot_index, &truth.paths) {
                        diffuse.push((p.position - path.diffuse_vertex()).norm());
                    }
                }
            }
            if let Some(fr) = &diag.flash {
                let unfolded: Vec<usize> = recon
                    .points
                    .iter()
                    .filter(|p| p.provenance == Provenance::Unfolded)
                    .filter_map(|p| p.spot_index)
                    .collect();
                let mut predicted: Vec<(usize, &str)> = fr.classification.two_bounce.iter().map(|&i| (i, "2B")).collect();
                for &(i, _) in &fr.classification.one_or_three_bounce {
                    predicted.push((i, if unfolded.contains(&i) { "3B" } else { "1B" }));
                }
                predicted.sort_unstable();
                for (i, pred) in predicted {
                    if let Some(path) = spot_truth(&spots.flash, Some(i), &truth.paths) {
                        let t = bounce_name(path.bounce_class);
                        confusion.add(t, pred, t == pred);
                    }
                }
                if let (Some(plane), Some(s)) = (fr.plane, truth.surfaces.first()) {
                    let (normal_error, offset_error) = compare_planes(&plane.facing(&truth.receiver), &s.plane);
                    plane_recovery = Some(PlaneRecovery {
                        surface: s.object.clone().unwrap_or_else(|| s.id.clone()),
                        normal_error,
                        offset_error,
                    });
                }
            }
        }
        _ => {
            let by_beam: BTreeMap<usize, &Exposure> = spots.exposures.iter().map(|e| (e.beam_index, e)).collect();
            for p in &recon.points {
                if matches!(p.label, PointLabel::Diffuse | PointLabel::BehindWindow) {
                    let Some(e) = p.beam_index.and_then(|b| by_beam.get(&b)) else { continue };
                    if let Some(path) = spot_truth(&e.spots, p.spot_index, &truth.paths) {
                        diffuse.push((p.position - path.diffuse_vertex()).norm());
                    }
                }
            }
            for rep in &diag.exposures {
                let Some(e) = by_beam.get(&rep.beam_index) else { continue };
                let mut wrong = Vec::new();
                for (i, role) in rep.roles.iter().enumerate() {
                    let Some(path) = spot_truth(&e.spots, Some(i), &truth.paths) else { continue };
                    let ok = role.matches(path.kind);
                    confusion.add(kind_name(path.kind), role_name(*role), ok);
                    if !ok {
                        wrong.push((i, path.kind, *role));
                    }
                }
                if !wrong.is_empty() {
                    misclassified.push(Misclassification { beam_index: rep.beam_index, spots: wrong });
                }
            }
        }
    }

    Ok(Metrics {
        schema_version: SCHEMA_VERSION,
        run_id: diag.run_id.clone(),
        mode: diag.mode,
        surfaces,
        diffuse_error: Summary::of(&diffuse),
        confusion,
        misclassified,
        plane_recovery,
    })
}
