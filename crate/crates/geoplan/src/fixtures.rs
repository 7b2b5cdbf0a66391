//! Scenes and constraint plans shipped with the crate, embedded so the whole
//! test suite runs offline. `pour-loop` shares the pour-alignment scene.

/// A named scene/plan pair.
pub struct Fixture {
    pub name: &'static str,
    pub scene_toml: &'static str,
    pub plan_text: &'static str,
}

pub const FIXTURES: &[Fixture] = &[
    Fixture {
        name: "pick-place",
        scene_toml: include_str!("../fixtures/scenes/pick-place.toml"),
        plan_text: include_str!("../fixtures/plans/pick-place.plan"),
    },
    Fixture {
        name: "open-door",
        scene_toml: include_str!("../fixtures/scenes/open-door.toml"),
        plan_text: include_str!("../fixtures/plans/open-door.plan"),
    },
    Fixture {
        name: "open-drawer",
        scene_toml: include_str!("../fixtures/scenes/open-drawer.toml"),
        plan_text: include_str!("../fixtures/plans/open-drawer.plan"),
    },
    Fixture {
        name: "press-button",
        scene_toml: include_str!("../fixtures/scenes/press-button.toml"),
        plan_text: include_str!("../fixtures/plans/press-button.plan"),
    },
    Fixture {
        name: "cut-carrot",
        scene_toml: include_str!("../fixtures/scenes/cut-carrot.toml"),
        plan_text: include_str!("../fixtures/plans/cut-carrot.plan"),
    },
    Fixture {
        name: "pour-alignment",
        scene_toml: include_str!("../fixtures/scenes/pour-alignment.toml"),
        plan_text: include_str!("../fixtures/plans/pour-alignment.plan"),
    },
    Fixture {
        name: "stir",
        scene_toml: include_str!("../fixtures/scenes/stir.toml"),
        plan_text: include_str!("../fixtures/plans/stir.plan"),
    },
    Fixture {
        name: "pour-loop",
        scene_toml: include_str!("../fixtures/scenes/pour-alignment.toml"),
        plan_text: include_str!("../fixtures/plans/pour-loop.plan"),
    },
];

pub fn fixture(name: &str) -> Option<&'static Fixture> {
    FIXTURES.iter().find(|f| f.name == name)
}

pub fn fixture_names() -> Vec<&'static str> {
    FIXTURES.iter().map(|f| f.name).collect()
}

pub const SCHEME_PROMPT: &str = include_str!("../fixtures/prompts/scheme.txt");
pub const EXAMPLES_PROMPT: &str = include_str!("../fixtures/prompts/examples.txt");
pub const KNOWLEDGE_PROMPT: &str = include_str!("../fixtures/prompts/knowledge.txt");

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_plan, serialize_plan};
    use crate::sim::{build_scene, SceneSpec};

    #[test]
    fn every_fixture_parses_builds_and_roundtrips() {
        for f in FIXTURES {
            let plan = parse_plan(f.plan_text).unwrap_or_else(|e| panic!("{}: {e}", f.name));
            let reparsed = parse_plan(&serialize_plan(&plan)).unwrap();
            assert_eq!(plan, reparsed, "{} round-trip", f.name);

            let spec = SceneSpec::from_toml(f.scene_toml).unwrap_or_else(|e| panic!("{}: {e}", f.name));
            build_scene(&spec, 1).unwrap_or_else(|e| panic!("{}: {e}", f.name));
        }
    }

    #[test]
    fn fixture_lookup() {
        assert!(fixture("open-door").is_some());
        assert!(fixture("fly-to-the-moon").is_none());
        assert_eq!(fixture_names().len(), FIXTURES.len());
    }

    #[test]
    fn every_fixture_stage_compiles() {
        for f in FIXTURES {
            let plan = parse_plan(f.plan_text).unwrap();
            let spec = SceneSpec::from_toml(f.scene_toml).unwrap();
            let scene = build_scene(&spec, 1).unwrap();
            for stage in &plan.stages {
                crate::cost::compile_stage(stage, scene.registry())
                    .unwrap_or_else(|e| panic!("{} stage {}: {e}", f.name, stage.index));
            }
        }
    }
}
