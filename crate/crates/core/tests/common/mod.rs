//! Helpers shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use speclidar::geom::{angle_between, Plane, UnitVec3, Vec3};
use speclidar::presets;
use speclidar::scene::{DetectorGrid, Facet, LidarConfig, Material, PathKind, PathRecord, Scene, SPEED_OF_LIGHT};
use speclidar::scene_file::{load_scene, SceneSpec};

pub fn bundled(name: &str) -> SceneSpec {
    load_scene(presets::bundled(name).expect("bundled scene exists")).expect("bundled scene is valid")
}

/// The reference sensor head: receiver at the origin, transmitter 25.7 cm to
/// its right, a wide and fine detector grid.
pub fn lidar(beams: Vec<UnitVec3>) -> LidarConfig {
    LidarConfig {
        transmitter: Vec3::new(0.257, 0.0, 0.0),
        receiver: Vec3::zeros(),
        speed_of_light: SPEED_OF_LIGHT,
        beams,
        detector: DetectorGrid {
            theta_min: -70f64.to_radians(),
            theta_max: 70f64.to_radians(),
            phi_min: -50f64.to_radians(),
            phi_max: 50f64.to_radians(),
            n_theta: 1400,
            n_phi: 1000,
        },
    }
}

pub fn aim(lidar_tx: &Vec3, target: Vec3) -> UnitVec3 {
    UnitVec3::new_normalize(target - lidar_tx)
}

/// Axis-aligned rectangle spanned by two in-plane directions around a center.
pub fn rect(id: &str, center: Vec3, a: Vec3, b: Vec3, material: Material) -> Facet {
    let v = vec![center - a - b, center + a - b, center + a + b, center - a + b];
    Facet::new(id, v, material).expect("valid rectangle")
}

/// Unsigned angle between two plane normals.
pub fn normal_angle(a: &Vec3, b: &Vec3) -> f64 {
    let t = angle_between(a, b);
    t.min(std::f64::consts::PI - t)
}

/// A diffuse back wall and one tilted mirror to the left, drawn at random.
pub struct MirrorScene {
    pub scene: Scene,
    pub mirror: Facet,
    pub wall_z: f64,
    pub center: Vec3,
    /// Half-extent vectors of the mirror rectangle.
    pub half_axes: (Vec3, Vec3),
}

pub fn random_mirror_scene(rng: &mut ChaCha8Rng) -> MirrorScene {
    let wall_z = rng.random_range(2.5..4.0);
    let wall = rect(
        "wall",
        Vec3::new(0.0, 0.0, wall_z),
        Vec3::new(8.0, 0.0, 0.0),
        Vec3::new(0.0, 8.0, 0.0),
        Material::Diffuse { albedo: rng.random_range(0.3..0.9) },
    );
    let center = Vec3::new(rng.random_range(-1.6..-0.9), rng.random_range(-0.3..0.3), rng.random_range(1.3..2.0));
    let n = UnitVec3::new_normalize(Vec3::new(1.0, rng.random_range(-0.25..0.25), rng.random_range(-0.3..0.3)));
    let a = n.cross(&Vec3::y()).normalize() * rng.random_range(0.4..0.7);
    let b = n.cross(&a).normalize() * rng.random_range(0.4..0.7);
    let mirror = rect("mirror", center, a, b, Material::Specular { reflectance: rng.random_range(0.5..0.95) });
    MirrorScene { scene: Scene::new(vec![wall, mirror.clone()]), mirror, wall_z, center, half_axes: (a, b) }
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn path_of(paths: &[PathRecord], kind: PathKind) -> Option<&PathRecord> {
    paths.iter().find(|p| p.kind == kind)
}

/// Mirror plane oriented towards the receiver.
pub fn facing_plane(f: &Facet, lidar: &LidarConfig) -> Plane {
    f.plane().facing(&lidar.receiver)
}

/// Whether `p` lies within `tol` of the facet polygon (above its interior).
pub fn near_facet(p: &Vec3, f: &Facet, tol: f64) -> bool {
    let plane = f.plane();
    plane.signed_distance(p).abs() <= tol && f.contains(&plane.project(p))
}
