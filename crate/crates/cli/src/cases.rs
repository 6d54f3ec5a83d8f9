//! Scenario files shipped inside the binary.

#[derive(Debug, Clone, Copy)]
pub struct Case {
    pub name: &'static str,
    pub source: &'static str,
    /// Planted failures exit with status 1 by design.
    pub expect_ok: bool,
}

impl Case {
    /// The first comment line of the file.
    pub fn summary(&self) -> &'static str {
        self.source
            .lines()
            .find_map(|l| l.strip_prefix('#'))
            .map_or("", str::trim)
    }
}

macro_rules! case {
    ($name:literal, $ok:expr) => {
        Case {
            name: $name,
            source: include_str!(concat!("../cases/", $name, ".case")),
            expect_ok: $ok,
        }
    };
}

pub const CASES: &[Case] = &[
    case!("eikonal", true),
    case!("nongradient", true),
    case!("burgers_quadratic", true),
    case!("burgers_tanh", true),
    case!("advection", true),
    case!("oscillator_strips", true),
    case!("oscillator", true),
    case!("shear", true),
    case!("oscillator_verlet", true),
    case!("oscillator_pair", true),
    case!("free_particle_pair", true),
    case!("mismatched_pair", false),
    case!("stretch_map", false),
];

/// Looks a case up by name, with or without the `.case` suffix.
pub fn find(name: &str) -> Option<&'static Case> {
    let stem = name.strip_suffix(".case").unwrap_or(name);
    CASES.iter().find(|c| c.name == stem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::load_spec_str;

    #[test]
    fn every_case_validates() {
        for c in CASES {
            load_spec_str(c.source, c.name).unwrap_or_else(|e| panic!("{}: {e}", c.name));
            assert!(!c.summary().is_empty(), "{}", c.name);
        }
    }

    #[test]
    fn lookup() {
        assert_eq!(find("eikonal.case").unwrap().name, "eikonal");
        assert!(find("missing").is_none());
    }
}
