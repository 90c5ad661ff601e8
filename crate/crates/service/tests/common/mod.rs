#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use csa_core::demo_synth::{generate, load_synth_spec, SynthSpec};
use csa_core::executor::InputMode;
use csa_core::formats::BehaviorBundle;
use csa_core::pipeline::{learn, LearnConfig};
use csa_core::sim_env::{load_scenario, Scenario};
use csa_service::protocol::CreateSession;
use csa_service::registry::Registry;
use csa_service::session::SessionRuntime;

pub fn repo_file(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

/// Bundle learned from the shipped cleaning demonstrations.
pub fn cleaning_bundle() -> BehaviorBundle {
    static B: OnceLock<BehaviorBundle> = OnceLock::new();
    B.get_or_init(|| {
        let spec = load_synth_spec(repo_file("cleaning.synth.json")).unwrap();
        let (set, truth) = generate(&spec).unwrap();
        learn(&set, Some(&truth.surface), &LearnConfig::default()).unwrap()
    })
    .clone()
}

/// Bundle with two planted coordinations, so more than one axis is recommended.
pub fn two_coordination_bundle() -> BehaviorBundle {
    static B: OnceLock<BehaviorBundle> = OnceLock::new();
    B.get_or_init(|| {
        let (set, truth) = generate(&SynthSpec::two_coordination(22)).unwrap();
        learn(&set, Some(&truth.surface), &LearnConfig::default()).unwrap()
    })
    .clone()
}

pub fn cleaning_scenario() -> Scenario {
    load_scenario(repo_file("cleaning.scenario.json")).unwrap()
}

pub struct Fixture {
    pub registry: Arc<Registry>,
    pub bundle_id: String,
    pub scenario_id: String,
}

pub fn fixture() -> Fixture {
    let registry = Arc::new(Registry::default());
    let bundle_id = registry.add_bundle(cleaning_bundle()).unwrap().id.clone();
    let scenario_id = registry.add_scenario(cleaning_scenario()).unwrap().id.clone();
    Fixture {
        registry,
        bundle_id,
        scenario_id,
    }
}

impl Fixture {
    pub fn request(&self, mode: InputMode) -> CreateSession {
        CreateSession {
            bundle_id: self.bundle_id.clone(),
            scenario_id: Some(self.scenario_id.clone()),
            input_mode: mode,
            config: None,
        }
    }

    pub fn session(&self, mode: InputMode) -> Arc<SessionRuntime> {
        self.registry.create_session(&self.request(mode)).unwrap()
    }
}
