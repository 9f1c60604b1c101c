//! Behaviour of the bundled scenes under the full pipeline.

mod common;

use common::*;
use speclidar::geom::dir_from_angles;
use speclidar::pipeline::{
    evaluate, reconstruct, simulate, GroundTruth, Metrics, Mode, ReconParams, Reconstruction, SimulateOptions, Simulation,
    SpotsFile, SCHEMA_VERSION,
};
use speclidar::scene::PathKind;
use speclidar::single_beam::{beam_offset, PointLabel, ExposureClassification as C, SingleBeamParams, SpotRole};

struct Run {
    sim: Simulation,
    rec: Reconstruction,
    metrics: Metrics,
}

fn run(name: &str, mode: Mode) -> Run {
    let spec = bundled(name);
    let opts = SimulateOptions { detection_floor: spec.detection_floor, ..SimulateOptions::default() };
    let sim = simulate(&spec.scene, &spec.lidar, &opts);
    let rec = reconstruct(mode, &sim.exposures, &sim.flash, &spec.lidar, &ReconParams::default(), name);
    let spots =
        SpotsFile { schema_version: SCHEMA_VERSION, run_id: name.into(), exposures: sim.exposures.clone(), flash: sim.flash.clone() };
    let truth = GroundTruth::new(&spec.scene, &spec.lidar, sim.paths.clone(), name);
    let metrics = evaluate(&rec, &spots, &truth).unwrap();
    Run { sim, rec, metrics }
}

fn classes(r: &Run) -> Vec<&C> {
    r.rec.diagnostics.exposures.iter().map(|e| &e.classification).collect()
}

#[test]
fn ideal_scenes_are_read_without_error() {
    let cases = [
        ("diffuse_first", Mode::SingleBeam),
        ("specular_first", Mode::SingleBeam),
        ("mirror", Mode::SingleBeam),
        ("pitcher", Mode::SingleBeam),
        ("only_mirror_image", Mode::SingleBeam),
        ("two_mirrors", Mode::SingleBeam),
        ("off_edge", Mode::SingleBeam),
        ("empty", Mode::SingleBeam),
        ("window", Mode::Transparent),
        ("two_wall_window", Mode::Transparent),
        ("mirror", Mode::MultiBeam),
        ("window_mb", Mode::MultiBeam),
    ];
    for (name, mode) in cases {
        let r = run(name, mode);
        let c = &r.metrics.confusion;
        assert_eq!(c.correct, c.total, "{name} in {}: {:?}", mode.name(), r.metrics.misclassified);
        assert!(r.metrics.diffuse_error.max.max(0.0) < 1e-6, "{name}: {:?}", r.metrics.diffuse_error);
    }
}

#[test]
fn diffuse_first_and_specular_first_examples() {
    let a = run("diffuse_first", Mode::SingleBeam);
    assert!(matches!(classes(&a)[..], [C::DiffuseFirst { .. }]));
    let b = run("specular_first", Mode::SingleBeam);
    assert!(matches!(classes(&b)[..], [C::SpecularFirst { beam_image: Some(_), .. }]));
    // D, S2 and S1.
    assert_eq!(b.rec.points.len(), 3);
}

#[test]
fn mirror_scene_mixes_exposure_types() {
    let r = run("mirror", Mode::SingleBeam);
    let cs = classes(&r);
    assert!(cs.iter().any(|c| matches!(c, C::DiffuseFirst { .. })));
    assert!(cs.iter().any(|c| matches!(c, C::SpecularFirst { beam_image: Some(_), .. })));
    let mirror_err = r.metrics.surfaces.iter().find(|s| s.surface == "mirror").unwrap();
    assert!(mirror_err.report.displacement.max < 1e-9 && mirror_err.report.tilt.max < 1e-9);
}

#[test]
fn window_scene_has_on_beam_multiplets() {
    let spec = bundled("window");
    let sim = simulate(&spec.scene, &spec.lidar, &SimulateOptions::default());
    let tol = SingleBeamParams::default().beam_tol;
    let multiplets = sim
        .exposures
        .iter()
        .filter(|e| {
            let beam = spec.lidar.beams[e.beam_index];
            e.spots.iter().filter(|s| beam_offset(s, &beam, &spec.lidar) < tol).count() >= 2
        })
        .count();
    assert!(multiplets > 0);
    let r = run("window", Mode::Transparent);
    assert!(classes(&r).iter().any(|c| matches!(c, C::TransparentFirst { .. })));
}

#[test]
fn lone_mirror_image_is_discarded() {
    let r = run("only_mirror_image", Mode::SingleBeam);
    assert!(matches!(classes(&r)[..], [C::TwoBounceOnly { .. }]));
    assert_eq!(r.rec.diagnostics.counts.discarded_2b, 1);
    assert!(r.rec.points.iter().all(|p| !p.label.is_specular()));
}

#[test]
fn double_specular_paths_are_not_inverted() {
    let r = run("two_mirrors", Mode::SingleBeam);
    assert!(r.sim.paths.iter().any(|p| p.kind == PathKind::MultiSpecular));
    for e in &r.rec.diagnostics.exposures {
        let spots = &r.sim.exposures[e.beam_index].spots;
        for (i, s) in spots.iter().enumerate() {
            if s.truth.iter().any(|&t| r.sim.paths[t].multi_specular) {
                assert_eq!(e.roles[i], SpotRole::Discarded);
                let from_spot = r.rec.points.iter().filter(|p| p.beam_index == Some(e.beam_index) && p.spot_index == Some(i));
                assert!(from_spot.into_iter().all(|p| p.label == PointLabel::Discarded2b));
            }
        }
    }
}

#[test]
fn beam_missing_the_mirror_edge_is_two_bounce_only() {
    let r = run("off_edge", Mode::SingleBeam);
    let cs = classes(&r);
    assert!(matches!(cs[0], C::TwoBounceOnly { .. }));
    assert!(cs[1..].iter().all(|c| matches!(c, C::SpecularFirst { beam_image: Some(_), .. })));
}

#[test]
fn pitcher_highlights_sit_on_its_facets() {
    let spec = bundled("pitcher");
    let r = run("pitcher", Mode::SingleBeam);
    let facets: Vec<_> = spec.scene.facets.iter().filter(|f| f.object.as_deref() == Some("pitcher")).collect();
    let highlights: Vec<_> = r.rec.points.iter().filter(|p| p.label.is_specular()).collect();
    assert!(!highlights.is_empty());
    for h in highlights {
        assert!(facets.iter().any(|f| near_facet(&h.position, f, 1e-9)), "{:?}", h.position);
    }
}

#[test]
fn empty_scene_yields_nothing() {
    let r = run("empty", Mode::SingleBeam);
    assert!(r.sim.exposures.iter().all(|e| e.spots.is_empty()));
    assert!(r.sim.flash.is_empty() && r.rec.points.is_empty());
    assert!(classes(&r).iter().all(|c| matches!(c, C::Empty)));
}

#[test]
fn naive_points_follow_the_apparent_direction() {
    let spec = bundled("mirror");
    let sim = simulate(&spec.scene, &spec.lidar, &SimulateOptions::default());
    let rec = reconstruct(Mode::Naive, &sim.exposures, &sim.flash, &spec.lidar, &ReconParams::default(), "");
    let n_spots: usize = sim.exposures.iter().map(|e| e.spots.len()).sum();
    assert_eq!(rec.points.len(), n_spots);
    for p in &rec.points {
        let s = &sim.exposures[p.beam_index.unwrap()].spots[p.spot_index.unwrap()];
        let u = dir_from_angles(s.dir);
        assert!(normal_angle(&p.position.normalize(), &u) < 1e-12);
    }
}
