//! Built-in experiment configs, embedded at compile time. Each preset is an
//! ordinary TOML document; `dpopt run --preset NAME` feeds it through the
//! same parser as a file.

use dpopt_core::error::{CoreError, Result};

pub struct Preset {
    pub name: &'static str,
    pub summary: &'static str,
    pub text: &'static str,
}

pub const PRESETS: [Preset; 5] = [
    Preset {
        name: "l2_gll_ball",
        summary: "phased SGD, hinge link, unit l2 ball",
        text: include_str!("../presets/l2_gll_ball.toml"),
    },
    Preset {
        name: "l2_gll_free",
        summary: "phased SGD, logistic link, unconstrained",
        text: include_str!("../presets/l2_gll_free.toml"),
    },
    Preset {
        name: "l1_gll_polytope",
        summary: "noisy Frank-Wolfe, hinge link, l1 cross polytope",
        text: include_str!("../presets/l1_gll_polytope.toml"),
    },
    Preset {
        name: "l1_smooth_nonconvex",
        summary: "recursive conditional gradient, smooth nonconvex, l1 cross polytope",
        text: include_str!("../presets/l1_smooth_nonconvex.toml"),
    },
    Preset {
        name: "lp_weakly_convex",
        summary: "proximal mirror descent, phase retrieval, l_1.5 ball",
        text: include_str!("../presets/lp_weakly_convex.toml"),
    },
];

pub fn preset_text(name: &str) -> Result<&'static str> {
    PRESETS.iter().find(|p| p.name == name).map(|p| p.text).ok_or_else(|| {
        let known: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        CoreError::config("preset", format!("unknown preset `{name}`; available: {}", known.join(", ")))
    })
}

// ============================================================================
// Tests
// ============================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    #[test]
    fn every_preset_parses_and_resolves() {
        for preset in &PRESETS {
            let cfg = ExperimentConfig::from_toml(preset.text)
                .unwrap_or_else(|e| panic!("{} fails to parse: {e}", preset.name));
            let rc = cfg.resolve().unwrap_or_else(|e| panic!("{} fails to resolve: {e}", preset.name));
            assert!(!rc.grid.is_empty());
            assert!(rc.csv_path.contains(preset.name), "{} writes to {}", preset.name, rc.csv_path);
        }
    }

    #[test]
    fn unknown_names_list_the_catalog() {
        let err = preset_text("nope").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("l2_gll_ball") && msg.contains("lp_weakly_convex"), "{msg}");
    }
}
