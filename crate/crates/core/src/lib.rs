//! Simulation and reconstruction of specular surfaces from multibounce
//! time-of-flight lidar returns.

pub mod eval;
pub mod export;
pub mod geom;
pub mod scene;
pub mod sensor;
pub mod multi_beam;
pub mod pipeline;
pub mod presets;
pub mod scene_file;
pub mod single_beam;
