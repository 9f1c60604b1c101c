//! Flash reconstruction on the bundled scenes.

mod common;

use common::*;
use speclidar::eval::compare_planes;
use speclidar::geom::{ray_plane_intersect, Vec3};
use speclidar::multi_beam::{reconstruct_flash, MultiBeamParams, RansacParams};
use speclidar::pipeline::{simulate, SimulateOptions};
use speclidar::scene::{BounceClass, PathKind};
use speclidar::sensor::SpotNoise;
use speclidar::single_beam::{PointLabel, Provenance};

fn flash(name: &str, glass: &str) {
    let spec = bundled(name);
    let sim = simulate(&spec.scene, &spec.lidar, &SimulateOptions::default());
    let res = reconstruct_flash(&sim.flash, &spec.lidar, &MultiBeamParams::default());
    let truth = spec.scene.facet_by_id(glass).unwrap().plane().facing(&spec.lidar.receiver);
    let (angle, offset) = compare_planes(&res.plane.expect("plane"), &truth);
    assert!(angle < 1e-9 && offset < 1e-9, "{name}: {angle} rad, {offset} m");

    let mut from_spots = 0;
    for p in res.points.iter().filter(|p| p.provenance == Provenance::MirroredSourcePlane) {
        let want = match (p.spot_index, p.beam_index) {
            (Some(i), _) => {
                from_spots += 1;
                let path = &sim.paths[sim.flash[i].truth[0]];
                assert_eq!(path.bounce_class, BounceClass::Two);
                if p.label == PointLabel::SpecularObserved { path.last_vertex() } else { path.vertices[1] }
            }
            (None, Some(b)) => ray_plane_intersect(&spec.lidar.transmitter, &spec.lidar.beams[b], &truth).unwrap(),
            (None, None) => panic!("reflection point without origin"),
        };
        assert!((p.position - want).norm() < 1e-6, "{name}: {:?} vs {want:?}", p.position);
        assert!(p.normal.is_some_and(|n| normal_angle(&n, &truth.normal) < 1e-9));
    }
    assert!(from_spots > 0);
}

#[test]
fn window_plane_and_reflection_points() {
    flash("window_mb", "glass");
}

#[test]
fn mirror_plane_and_reflection_points() {
    flash("mirror", "mirror");
}

#[test]
fn beam_reflections_fill_in_missing_highlights() {
    let spec = bundled("mirror");
    let sim = simulate(&spec.scene, &spec.lidar, &SimulateOptions::default());
    let truth = spec.scene.facet_by_id("mirror").unwrap().plane().facing(&spec.lidar.receiver);
    // Drop the two-bounce return of one specular-first beam from the middle
    // of the mirror; the beam itself still marks where it met the glass.
    let mut first: Vec<(usize, usize)> = sim
        .flash
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let path = &sim.paths[s.truth[0]];
            (path.kind == PathKind::SpecularFirstTrue && path.bounce_class == BounceClass::Two).then_some((i, path.beam_index))
        })
        .collect();
    assert!(first.len() > 2);
    first.sort_by(|a, b| spec.lidar.beams[a.1].x.total_cmp(&spec.lidar.beams[b.1].x));
    let (dropped, beam) = first[first.len() / 2];
    let mut spots = sim.flash.clone();
    spots.remove(dropped);

    let res = reconstruct_flash(&spots, &spec.lidar, &MultiBeamParams::default());
    let p = res
        .points
        .iter()
        .find(|p| p.beam_index == Some(beam) && p.spot_index.is_none())
        .expect("beam-only reflection point");
    let want = ray_plane_intersect(&spec.lidar.transmitter, &spec.lidar.beams[beam], &truth).unwrap();
    assert!((p.position - want).norm() < 1e-6, "{:?} vs {want:?}", p.position);
    assert_eq!(p.label, PointLabel::SpecularIlluminated);
}

#[test]
fn noisy_flash_still_finds_the_window() {
    let spec = bundled("window_mb");
    let noise = SpotNoise { tof_sigma: 5e-12, angle_sigma: 0.01f64.to_radians() };
    let truth = spec.scene.facet_by_id("glass").unwrap().plane().facing(&spec.lidar.receiver);
    for seed in 0..5 {
        let sim = simulate(&spec.scene, &spec.lidar, &SimulateOptions { noise, detection_floor: 0.0, seed });
        let params = MultiBeamParams { ransac: RansacParams { seed, ..RansacParams::default() }, ..MultiBeamParams::default() };
        let res = reconstruct_flash(&sim.flash, &spec.lidar, &params);
        let (angle, offset) = compare_planes(&res.plane.expect("plane"), &truth);
        assert!(angle.to_degrees() < 1.0 && offset < 0.02, "seed {seed}: {} deg, {offset} m", angle.to_degrees());
    }
}

#[test]
fn unfolded_points_lie_on_the_real_side_of_the_glass() {
    let spec = bundled("window_mb");
    let sim = simulate(&spec.scene, &spec.lidar, &SimulateOptions::default());
    let res = reconstruct_flash(&sim.flash, &spec.lidar, &MultiBeamParams::default());
    let plane = res.plane.unwrap();
    let receiver_side = plane.signed_distance(&spec.lidar.receiver).signum();
    let unfolded: Vec<Vec3> = res.points.iter().filter(|p| p.provenance == Provenance::Unfolded).map(|p| p.position).collect();
    assert!(!unfolded.is_empty());
    assert!(unfolded.iter().all(|p| plane.signed_distance(p).signum() == receiver_side));
}

#[test]
fn noisy_mirror_flash_does_not_pick_the_reflected_source() {
    // The mirror scene's two-bounce points all lie on the back wall, so the
    // source reflected in that wall fits the timing almost as well.
    let spec = bundled("mirror");
    let truth = spec.scene.facet_by_id("mirror").unwrap().plane().facing(&spec.lidar.receiver);
    for (tof_ps, angle_deg) in [(0.0, 0.05), (20.0, 0.02), (54.0, 0.05)] {
        let noise = SpotNoise { tof_sigma: tof_ps * 1e-12, angle_sigma: f64::to_radians(angle_deg) };
        for seed in 0..8 {
            let sim = simulate(&spec.scene, &spec.lidar, &SimulateOptions { noise, detection_floor: 0.0, seed });
            let res = reconstruct_flash(&sim.flash, &spec.lidar, &MultiBeamParams::default());
            let (angle, _) = compare_planes(&res.plane.expect("plane"), &truth);
            assert!(angle.to_degrees() < 5.0, "{tof_ps} ps, {angle_deg} deg, seed {seed}: {} deg", angle.to_degrees());
        }
    }
}
