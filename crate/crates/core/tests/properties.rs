//! Property tests over randomized geometry.

mod common;

use proptest::prelude::*;

use common::*;
use speclidar::export::{read_points_csv, write_points_csv};
use speclidar::geom::{angles_from_dir, dir_from_angles, reflect_point, SphericalDir, UnitVec3, Vec3};
use speclidar::multi_beam::{fit_source, localize_source_ransac, plane_from_source, RansacParams, SourceSample};
use speclidar::scene::{spots_from_paths, DetectorGrid, LidarConfig, Spot};
use speclidar::sensor::{perturb_spots, render_histograms, HistogramCube, SpotNoise, TimingModel};
use speclidar::single_beam::{apparent_position, reconstruct_exposure, PointLabel, Provenance, ReconstructedPoint, SingleBeamParams};

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

/// Points in front of the sensor, away from the baseline.
fn scene_point() -> impl Strategy<Value = Vec3> {
    (-2.0..2.0, -1.5..1.5, 0.5..6.0).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn angles_round_trip(theta in -3.0..3.0f64, phi in -1.5..1.5f64) {
        let a = angles_from_dir(&dir_from_angles(SphericalDir::new(theta, phi)));
        prop_assert!((a.theta - theta).abs() < 1e-12 && (a.phi - phi).abs() < 1e-12);
    }

    #[test]
    fn source_plane_reflects_transmitter_onto_source(l in vec3(1.0), s in vec3(5.0)) {
        prop_assume!((l - s).norm() > 1e-3);
        let plane = plane_from_source(&l, &s).unwrap();
        prop_assert!((reflect_point(&l, &plane) - s).norm() < 1e-12 * (1.0 + s.norm()));
        let p = Vec3::new(0.3, -0.2, 1.7);
        prop_assert!((reflect_point(&reflect_point(&p, &plane), &plane) - p).norm() < 1e-12);
    }

    #[test]
    fn single_scatter_position_is_recovered(p in scene_point()) {
        let lidar = lidar(Vec::new());
        let tof = ((p - lidar.transmitter).norm() + p.norm()) / lidar.speed_of_light;
        let spot = Spot::new(lidar.arrival_angles(&p), tof, 1.0);
        prop_assert!((apparent_position(&spot, &lidar).unwrap() - p).norm() < 1e-9);
    }

    #[test]
    fn random_mirror_exposures_invert_exactly(seed in any::<u64>(), on_mirror in any::<bool>()) {
        let mut rng = seeded(seed);
        let ms = random_mirror_scene(&mut rng);
        let lidar0 = lidar(Vec::new());
        let (a, b) = ms.half_axes;
        let target = if on_mirror {
            ms.center + a * 0.3 - b * 0.2
        } else {
            Vec3::new(0.4, 0.1, ms.wall_z)
        };
        let beam = aim(&lidar0.transmitter, target);
        let lidar = LidarConfig { beams: vec![beam], ..lidar0 };
        let paths = ms.scene.trace_beam(&lidar, 0, &beam);
        let spots = spots_from_paths(&paths, &lidar);
        prop_assume!(spots.iter().all(|s| s.truth.len() == 1));
        let res = reconstruct_exposure(&spots, 0, &lidar, &SingleBeamParams::default());
        prop_assert!(res.errors.is_empty(), "{:?}", res.errors);
        for p in res.points.iter().filter(|p| p.label != PointLabel::Discarded2b) {
            let path = &paths[spots[p.spot_index.unwrap()].truth[0]];
            let want = match p.provenance {
                Provenance::BeamReflection => path.vertices[1],
                Provenance::DiffuseFirstHighlight | Provenance::SpecularFirstHighlight => path.last_vertex(),
                _ => path.diffuse_vertex(),
            };
            prop_assert!((p.position - want).norm() < 1e-9, "{:?} off by {}", p.provenance, (p.position - want).norm());
            if let Some(n) = p.normal {
                prop_assert!(normal_angle(&n, &ms.mirror.plane().normal) < 1e-9);
            }
        }
    }

    #[test]
    fn exact_multilateration_recovers_the_source(
        source in (-4.0..-1.0, -1.0..1.0, -1.0..1.0).prop_map(|(x, y, z)| Vec3::new(x, y, z)),
        points in prop::collection::vec(scene_point(), 8..30),
    ) {
        let lidar = lidar(Vec::new());
        let samples: Vec<SourceSample> = points
            .iter()
            .map(|p| SourceSample { point: *p, tof: ((p - source).norm() + p.norm()) / lidar.speed_of_light, tof_sigma: 0.0 })
            .collect();
        let x = fit_source(&samples, &lidar).unwrap();
        prop_assert!((x - source).norm() < 1e-6, "{x:?} vs {source:?}");
    }

    #[test]
    fn ransac_is_deterministic(seed in any::<u64>()) {
        let lidar = lidar(Vec::new());
        let mut rng = seeded(seed);
        let source = Vec3::new(-2.5, 0.1, 0.2);
        let samples: Vec<SourceSample> = (0..30)
            .map(|k| {
                use rand::Rng;
                let p = Vec3::new(rng.random_range(-1.0..2.0), rng.random_range(-1.0..1.0), rng.random_range(2.0..3.5));
                let extra = if k % 5 == 0 { 0.5 } else { 0.0 };
                SourceSample { point: p, tof: ((p - source).norm() + p.norm() + extra) / lidar.speed_of_light, tof_sigma: 0.0 }
            })
            .collect();
        let params = RansacParams { k: 100, seed, ..RansacParams::default() };
        let a = localize_source_ransac(&samples, &lidar, &params).unwrap();
        let b = localize_source_ransac(&samples, &lidar, &params).unwrap();
        prop_assert_eq!(&a, &b);
        // Corrupted points are excluded and the source is exact.
        prop_assert!(a.inliers.iter().all(|i| i % 5 != 0));
        prop_assert!((a.source - source).norm() < 1e-3);
    }

    #[test]
    fn point_csv_round_trips(
        rows in prop::collection::vec((vec3(100.0), prop::option::of(vec3(1.0)), prop::option::of(0usize..1000)), 0..20)
    ) {
        let points: Vec<ReconstructedPoint> = rows
            .into_iter()
            .map(|(x, n, b)| ReconstructedPoint {
                position: x,
                normal: n.filter(|n| n.norm() > 1e-3).map(UnitVec3::new_normalize),
                label: PointLabel::SpecularObserved,
                provenance: Provenance::Unfolded,
                beam_index: b,
                spot_index: b.map(|b| b / 2),
            })
            .collect();
        let mut buf = Vec::new();
        write_points_csv(&points, &mut buf).unwrap();
        prop_assert_eq!(read_points_csv(buf.as_slice()).unwrap(), points);
    }

    #[test]
    fn spot_noise_is_seeded(seed in any::<u64>(), tof in 1e-9..3e-8f64) {
        let spots = vec![Spot::new(SphericalDir::new(0.1, -0.2), tof, 0.5); 4];
        let noise = SpotNoise { tof_sigma: 50e-12, angle_sigma: 1e-3 };
        prop_assert_eq!(perturb_spots(&spots, &noise, seed), perturb_spots(&spots, &noise, seed));
        prop_assert_eq!(perturb_spots(&spots, &SpotNoise::default(), seed)[0].tof, tof);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn cube_bytes_round_trip(seed in any::<u64>(), u in 1.0..6.0f64, v in 1.0..6.0f64) {
        let grid = DetectorGrid { theta_min: -0.1, theta_max: 0.1, phi_min: -0.1, phi_max: 0.1, n_theta: 8, n_phi: 8 };
        let timing = TimingModel { n_bins: 256, ..TimingModel::default() };
        let spot = Spot::new(grid.from_pixel(u, v), 100.0 * timing.bin_width, 0.02);
        let cube = render_histograms(std::slice::from_ref(&spot), &grid, &timing, seed);
        prop_assert_eq!(&cube, &render_histograms(&[spot], &grid, &timing, seed));
        let mut bytes = Vec::new();
        cube.write_to(&mut bytes).unwrap();
        prop_assert_eq!(HistogramCube::read_from(bytes.as_slice()).unwrap(), cube);
    }
}
