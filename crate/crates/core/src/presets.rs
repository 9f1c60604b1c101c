//! Scenes shipped with the library, addressable by name.

/// `(name, TOML text)` for every bundled scene.
pub const BUNDLED: &[(&str, &str)] = &[
    ("diffuse_first", include_str!("../scenes/diffuse_first.toml")),
    ("specular_first", include_str!("../scenes/specular_first.toml")),
    ("mirror", include_str!("../scenes/mirror.toml")),
    ("window", include_str!("../scenes/window.toml")),
    ("window_mb", include_str!("../scenes/window_mb.toml")),
    ("two_wall_window", include_str!("../scenes/two_wall_window.toml")),
    ("two_wall_window_dark", include_str!("../scenes/two_wall_window_dark.toml")),
    ("two_wall_window_close", include_str!("../scenes/two_wall_window_close.toml")),
    ("pitcher", include_str!("../scenes/pitcher.toml")),
    ("only_mirror_image", include_str!("../scenes/only_mirror_image.toml")),
    ("two_mirrors", include_str!("../scenes/two_mirrors.toml")),
    ("off_edge", include_str!("../scenes/off_edge.toml")),
    ("empty", include_str!("../scenes/empty.toml")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_file::load_scene;

    #[test]
    fn every_bundled_scene_loads() {
        for (name, text) in BUNDLED {
            if let Err(e) = load_scene(text) {
                panic!("{name}: {e}");
            }
        }
    }

    #[test]
    fn lookup_by_name() {
        assert!(bundled("mirror").is_some());
        assert!(bundled("nope").is_none());
        assert_eq!(names().count(), BUNDLED.len());
    }
}
