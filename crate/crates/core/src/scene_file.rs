//! TOML scene description.
//!
//! ```toml
//! [lidar]
//! transmitter = [0.257, 0.0, 0.0]
//! receiver = [0.0, 0.0, 0.0]          # optional, default origin
//! beam_targets = [[0.5, 0.1, 3.0]]    # beams aimed at points
//! beams_deg = [[10.0, -2.0]]          # beams given as (theta, phi) in degrees
//! [lidar.beam_grid]                   # optional regular grid of beams
//! theta_deg = [-20.0, 20.0]
//! phi_deg = [-10.0, 10.0]
//! n_theta = 11
//! n_phi = 9
//! [lidar.detector]
//! theta_deg = [-60.0, 60.0]
//! phi_deg = [-40.0, 40.0]
//! pixels = [400, 200]
//!
//! [[facets]]
//! id = "wall"
//! vertices = [[-3, -2, 3], [3, -2, 3], [3, 2, 3], [-3, 2, 3]]
//! material = { kind = "diffuse", albedo = 0.8 }
//!
//! [noise]
//! tof_sigma_ps = 54.0
//! angle_sigma_deg = 0.05
//! detection_floor = 0.0              # relative energy below which spots vanish
//! ```
//!
//! Beams are listed in the order `beams_deg`, `beam_targets`, then the grid
//! (theta varying fastest). See `docs/scene-format.md` for every key.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::geom::{dir_from_angles, SphericalDir, UnitVec3, Vec3};
use crate::scene::{DetectorGrid, Facet, LidarConfig, Material, Scene, SceneError, SPEED_OF_LIGHT};
use crate::sensor::{SpotNoise, TimingModel};

#[derive(Debug, Error)]
pub enum SceneFileError {
    #[error("scene file syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("scene file `{path}`: {source}")]
    Invalid { path: String, source: SceneError },
    #[error("scene file `{path}`: {message}")]
    Field { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub lidar: LidarSection,
    #[serde(default)]
    pub facets: Vec<FacetSection>,
    #[serde(default)]
    pub lathes: Vec<LatheSection>,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub sensor: Option<TimingModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarSection {
    pub transmitter: [f64; 3],
    #[serde(default)]
    pub receiver: [f64; 3],
    #[serde(default)]
    pub speed_of_light: Option<f64>,
    #[serde(default)]
    pub beams_deg: Vec<[f64; 2]>,
    #[serde(default)]
    pub beam_targets: Vec<[f64; 3]>,
    #[serde(default)]
    pub beam_grid: Option<BeamGrid>,
    pub detector: DetectorSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamGrid {
    pub theta_deg: [f64; 2],
    pub phi_deg: [f64; 2],
    pub n_theta: usize,
    pub n_phi: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    pub theta_deg: [f64; 2],
    pub phi_deg: [f64; 2],
    pub pixels: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FacetSection {
    pub id: String,
    #[serde(default)]
    pub object: Option<String>,
    pub vertices: Vec<[f64; 3]>,
    pub material: Material,
}

/// Surface of revolution about the +y axis through `base`, triangulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatheSection {
    pub id: String,
    pub base: [f64; 3],
    /// `(radius, height)` pairs from bottom to top.
    pub profile: Vec<[f64; 2]>,
    pub segments: usize,
    pub material: Material,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub tof_sigma_ps: f64,
    #[serde(default)]
    pub angle_sigma_deg: f64,
    /// Ideal spots with relative energy below this are never detected.
    #[serde(default)]
    pub detection_floor: f64,
}

/// A fully validated scene description.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub scene: Scene,
    pub lidar: LidarConfig,
    pub noise: SpotNoise,
    pub detection_floor: f64,
    pub timing: TimingModel,
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn field(path: impl Into<String>, message: impl Into<String>) -> SceneFileError {
    SceneFileError::Field { path: path.into(), message: message.into() }
}

fn span(path: &str, range: [f64; 2]) -> Result<[f64; 2], SceneFileError> {
    if !(range[0] < range[1]) {
        return Err(field(path, format!("range {range:?} must be increasing")));
    }
    Ok([range[0].to_radians(), range[1].to_radians()])
}

fn linspace(range: [f64; 2], n: usize, i: usize) -> f64 {
    if n == 1 {
        0.5 * (range[0] + range[1])
    } else {
        range[0] + (range[1] - range[0]) * i as f64 / (n - 1) as f64
    }
}

impl LidarSection {
    pub fn build(&self) -> Result<LidarConfig, SceneFileError> {
        let transmitter = v3(self.transmitter);
        let mut beams: Vec<UnitVec3> = self
            .beams_deg
            .iter()
            .map(|a| dir_from_angles(SphericalDir::new(a[0].to_radians(), a[1].to_radians())))
            .collect();
        for (k, t) in self.beam_targets.iter().enumerate() {
            let d = v3(*t) - transmitter;
            if d.norm() == 0.0 {
                return Err(field(format!("lidar.beam_targets[{k}]"), "target coincides with the transmitter"));
            }
            beams.push(UnitVec3::new_normalize(d));
        }
        if let Some(g) = &self.beam_grid {
            if g.n_theta == 0 || g.n_phi == 0 {
                return Err(field("lidar.beam_grid", "grid dimensions must be positive"));
            }
            let th = [g.theta_deg[0].to_radians(), g.theta_deg[1].to_radians()];
            let ph = [g.phi_deg[0].to_radians(), g.phi_deg[1].to_radians()];
            for j in 0..g.n_phi {
                for i in 0..g.n_theta {
                    beams.push(dir_from_angles(SphericalDir::new(linspace(th, g.n_theta, i), linspace(ph, g.n_phi, j))));
                }
            }
        }
        let theta = span("lidar.detector.theta_deg", self.detector.theta_deg)?;
        let phi = span("lidar.detector.phi_deg", self.detector.phi_deg)?;
        if theta[0] <= -PI || theta[1] > PI || phi[0] < -PI / 2.0 || phi[1] > PI / 2.0 {
            return Err(field("lidar.detector", "field of view exceeds the angle domain"));
        }
        let [n_theta, n_phi] = self.detector.pixels;
        if n_theta == 0 || n_phi == 0 {
            return Err(field("lidar.detector.pixels", "pixel counts must be positive"));
        }
        let lidar = LidarConfig {
            transmitter,
            receiver: v3(self.receiver),
            speed_of_light: self.speed_of_light.unwrap_or(SPEED_OF_LIGHT),
            beams,
            detector: DetectorGrid {
                theta_min: theta[0],
                theta_max: theta[1],
                phi_min: phi[0],
                phi_max: phi[1],
                n_theta,
                n_phi,
            },
        };
        lidar.validate().map_err(|source| SceneFileError::Invalid { path: "lidar".into(), source })?;
        Ok(lidar)
    }
}

impl LatheSection {
    fn facets(&self, index: usize) -> Result<Vec<Facet>, SceneFileError> {
        let path = format!("lathes[{index}] ({})", self.id);
        if self.profile.len() < 2 || self.segments < 3 {
            return Err(field(path, "needs at least 2 profile points and 3 segments"));
        }
        let base = v3(self.base);
        let ring = |k: usize, p: [f64; 2]| {
            let a = 2.0 * PI * (k % self.segments) as f64 / self.segments as f64;
            base + Vec3::new(p[0] * a.cos(), p[1], p[0] * a.sin())
        };
        let mut out = Vec::new();
        for (r, w) in self.profile.windows(2).enumerate() {
            for k in 0..self.segments {
                let (a0, a1, b0, b1) = (ring(k, w[0]), ring(k + 1, w[0]), ring(k, w[1]), ring(k + 1, w[1]));
                for (t, tri) in [[a0, a1, b1], [a0, b1, b0]].into_iter().enumerate() {
                    let id = format!("{}/{r}/{k}/{t}", self.id);
                    match Facet::new(id, tri.to_vec(), self.material) {
                        Ok(f) => out.push(f.with_object(self.id.clone())),
                        // Zero-radius rings produce slivers; skip them.
                        Err(SceneError::ZeroArea(_)) => {}
                        Err(source) => return Err(SceneFileError::Invalid { path: path.clone(), source }),
                    }
                }
            }
        }
        Ok(out)
    }
}

impl SceneFile {
    pub fn parse(text: &str) -> Result<Self, SceneFileError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scene file serializes")
    }

    pub fn build(&self) -> Result<SceneSpec, SceneFileError> {
        let lidar = self.lidar.build()?;
        let mut facets = Vec::new();
        for (k, f) in self.facets.iter().enumerate() {
            let facet = Facet::new(f.id.clone(), f.vertices.iter().copied().map(v3).collect(), f.material)
                .map_err(|source| SceneFileError::Invalid { path: format!("facets[{k}]"), source })?;
            facets.push(match &f.object {
                Some(o) => facet.with_object(o.clone()),
                None => facet,
            });
        }
        for (k, l) in self.lathes.iter().enumerate() {
            facets.extend(l.facets(k)?);
        }
        let mut seen = std::collections::HashSet::new();
        for f in &facets {
            if !seen.insert(f.id.as_str()) {
                return Err(field("facets", format!("duplicate facet id `{}`", f.id)));
            }
        }
        let n = &self.noise;
        if !(n.tof_sigma_ps >= 0.0 && n.angle_sigma_deg >= 0.0 && n.detection_floor >= 0.0) {
            return Err(field("noise", "values must be non-negative"));
        }
        Ok(SceneSpec {
            scene: Scene::new(facets),
            lidar,
            noise: SpotNoise {
                tof_sigma: self.noise.tof_sigma_ps * 1e-12,
                angle_sigma: self.noise.angle_sigma_deg.to_radians(),
            },
            detection_floor: self.noise.detection_floor,
            timing: self.sensor.unwrap_or_default(),
        })
    }
}

/// Parses and validates a scene in one step.
pub fn load_scene(text: &str) -> Result<SceneSpec, SceneFileError> {
    SceneFile::parse(text)?.build()
}
