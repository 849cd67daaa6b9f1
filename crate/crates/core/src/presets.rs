//! Bundled scenarios and phase profiles.

use crate::combiner::PhaseProfile;
use crate::error::{Error, Result};
use crate::metrics::Region;
use crate::scenario::{load_scenario, ArrayLayout, Scenario};

const SCENARIOS: &[(&str, &str)] = &[
    ("flipchip-60ghz", include_str!("../presets/flipchip-60ghz.json")),
    ("flipchip-110ghz", include_str!("../presets/flipchip-110ghz.json")),
    ("two-bare-monopoles", include_str!("../presets/two-bare-monopoles.json")),
    ("two-corner-arrays", include_str!("../presets/two-corner-arrays.json")),
    ("lateral-arrays", include_str!("../presets/lateral-arrays.json")),
    ("coupling-pair", include_str!("../presets/coupling-pair.json")),
    ("coupling-array", include_str!("../presets/coupling-array.json")),
    (
        "quarter-wave-silicon",
        include_str!("../presets/quarter-wave-silicon.json"),
    ),
];

const PROFILES: &[(&str, &str)] = &[
    ("table2-vertical", include_str!("../presets/table2-vertical.profile")),
    (
        "table2-horizontal",
        include_str!("../presets/table2-horizontal.profile"),
    ),
];

pub fn scenario_names() -> Vec<&'static str> {
    SCENARIOS.iter().map(|(n, _)| *n).collect()
}

pub fn scenario_text(name: &str) -> Option<&'static str> {
    SCENARIOS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn scenario(name: &str) -> Result<Scenario> {
    let text = scenario_text(name).ok_or_else(|| Error::Validation(format!("unknown scenario preset '{name}'")))?;
    load_scenario(text)
}

pub fn profile_names() -> Vec<&'static str> {
    PROFILES.iter().map(|(n, _)| *n).collect()
}

/// A bundled 16-port profile, addressed to ports 1..=16.
pub fn profile(name: &str) -> Result<PhaseProfile> {
    let text = PROFILES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| Error::Validation(format!("unknown profile preset '{name}'")))?;
    PhaseProfile::parse(text)
}

/// Side of the default target squares (mm).
pub const TARGET_SIZE_MM: f64 = 1.0;

/// Carry `profile` onto `layout`, pairing the profile's ports in ascending
/// order with the layout's row-major elements.
pub fn profile_on(profile: &PhaseProfile, layout: &ArrayLayout) -> Result<PhaseProfile> {
    let from = ArrayLayout {
        port_ids: profile.ports(),
        ..layout.clone()
    };
    profile.remapped(&from, layout)
}

/// Default channels of a multi-array scenario: every array carries the
/// Y-steering profile (so an array in the lower half aims up, and a
/// point-reflected array aims down), and each channel's target is a square
/// on the far y edge in line with its array, snapped into the corner when
/// the array sits within one target width of a side wall.
pub fn default_channels(scenario: &Scenario) -> Result<(Vec<PhaseProfile>, Vec<Region>)> {
    if scenario.arrays.len() < 2 {
        return Err(Error::Validation("default channels need at least two arrays".into()));
    }
    let base = profile("table2-vertical")?;
    let [w, h] = scenario.chip_extent_mm;
    let a = TARGET_SIZE_MM;
    let mut profiles = Vec::new();
    let mut regions = Vec::new();
    for arr in &scenario.arrays {
        profiles.push(profile_on(&base, &arr.layout)?);
        let [cx, cy] = arr.layout.center_mm();
        let mut x = (cx - a / 2.0).clamp(0.0, w - a);
        if x < a {
            x = 0.0;
        } else if x > w - 2.0 * a {
            x = w - a;
        }
        let y = if cy < h / 2.0 { h - a } else { 0.0 };
        regions.push(Region::rect(x, y, a, a));
    }
    Ok((profiles, regions))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_load() {
        for name in scenario_names() {
            let s = scenario(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(s.name, name);
        }
        for name in profile_names() {
            assert_eq!(profile(name).unwrap().len(), 16);
        }
    }

    #[test]
    fn default_channels_of_the_corner_scene() {
        let s = scenario("two-corner-arrays").unwrap();
        let (p, r) = default_channels(&s).unwrap();
        assert_eq!(r[0], Region::rect(0.0, 9.0, 1.0, 1.0));
        assert_eq!(r[1], Region::rect(9.0, 0.0, 1.0, 1.0));
        // array 2 is point-reflected: port 33-k sits opposite port k and
        // carries its phase
        for k in 1..=16 {
            assert_eq!(p[1].phase_deg(33 - k), p[0].phase_deg(k));
        }
        let lat = scenario("lateral-arrays").unwrap();
        let (_, r) = default_channels(&lat).unwrap();
        assert_eq!(r[0], Region::rect(0.0, 9.0, 1.0, 1.0));
        match r[1] {
            Region::Rect { x_mm, y_mm, .. } => assert!(x_mm > 4.0 && x_mm < 5.0 && y_mm == 9.0),
            _ => unreachable!(),
        }
        assert!(default_channels(&scenario("flipchip-60ghz").unwrap()).is_err());
    }

    #[test]
    fn unknown_preset() {
        assert!(scenario("nope").is_err());
        assert!(profile("nope").is_err());
    }
}
