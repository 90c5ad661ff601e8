//! Uploaded artifacts and live sessions.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use csa_core::formats::{parse_bundle, BehaviorBundle};
use csa_core::sim_env::{parse_scenario, Scenario};
use sha2::{Digest, Sha256};

use crate::error::ServiceError;
use crate::protocol::{BundleSummary, CreateSession, ScenarioSummary, SessionSummary};
use crate::session::{SessionLimits, SessionRuntime};

#[derive(Debug)]
pub struct BundleEntry {
    pub id: String,
    pub digest: String,
    pub bundle: Arc<BehaviorBundle>,
}

impl BundleEntry {
    pub fn summary(&self) -> BundleSummary {
        BundleSummary {
            id: self.id.clone(),
            digest: self.digest.clone(),
            task: self.bundle.provenance.task.clone(),
            segments: self.bundle.segments.iter().map(|s| s.kind).collect(),
            recommended_k: self.bundle.recommended_k,
        }
    }
}

#[derive(Debug)]
pub struct ScenarioEntry {
    pub id: String,
    pub scenario: Scenario,
}

impl ScenarioEntry {
    pub fn summary(&self) -> ScenarioSummary {
        ScenarioSummary {
            id: self.id.clone(),
            name: self.scenario.name.clone(),
            seed: self.scenario.seed,
            grid: self.scenario.grid,
            tool_radius: self.scenario.tool_radius,
        }
    }
}

/// Everything the service holds. Artifact ids are derived from content, so
/// uploading the same file twice yields the same id.
#[derive(Default)]
pub struct Registry {
    bundles: RwLock<BTreeMap<String, Arc<BundleEntry>>>,
    scenarios: RwLock<BTreeMap<String, Arc<ScenarioEntry>>>,
    sessions: RwLock<BTreeMap<String, Arc<SessionRuntime>>>,
    next_session: AtomicU64,
    next_client: AtomicU64,
    pub limits: SessionLimits,
}

fn read<T>(l: &RwLock<T>) -> std::sync::RwLockReadGuard<'_, T> {
    l.read().unwrap_or_else(|p| p.into_inner())
}

fn write<T>(l: &RwLock<T>) -> std::sync::RwLockWriteGuard<'_, T> {
    l.write().unwrap_or_else(|p| p.into_inner())
}

impl Registry {
    pub fn new(limits: SessionLimits) -> Self {
        Registry {
            limits,
            ..Registry::default()
        }
    }

    pub fn add_bundle(&self, bundle: BehaviorBundle) -> Result<Arc<BundleEntry>, ServiceError> {
        bundle.validate()?;
        let digest = bundle.digest();
        let id = format!("b-{}", &digest[..12]);
        let entry = Arc::new(BundleEntry {
            id: id.clone(),
            digest,
            bundle: Arc::new(bundle),
        });
        Ok(write(&self.bundles).entry(id).or_insert(entry).clone())
    }

    pub fn add_bundle_text(&self, text: &str) -> Result<Arc<BundleEntry>, ServiceError> {
        self.add_bundle(parse_bundle(text)?)
    }

    pub fn add_scenario(&self, scenario: Scenario) -> Result<Arc<ScenarioEntry>, ServiceError> {
        scenario.validate()?;
        let canonical = serde_json::to_string(&scenario).expect("scenario serializes");
        let id = format!("sc-{}", &hex::encode(Sha256::digest(canonical.as_bytes()))[..12]);
        let entry = Arc::new(ScenarioEntry { id: id.clone(), scenario });
        Ok(write(&self.scenarios).entry(id).or_insert(entry).clone())
    }

    pub fn add_scenario_text(&self, text: &str) -> Result<Arc<ScenarioEntry>, ServiceError> {
        self.add_scenario(parse_scenario(text)?)
    }

    pub fn bundle(&self, id: &str) -> Result<Arc<BundleEntry>, ServiceError> {
        read(&self.bundles).get(id).cloned().ok_or_else(|| ServiceError::NotFound {
            what: "bundle",
            id: id.into(),
        })
    }

    pub fn scenario(&self, id: &str) -> Result<Arc<ScenarioEntry>, ServiceError> {
        read(&self.scenarios).get(id).cloned().ok_or_else(|| ServiceError::NotFound {
            what: "scenario",
            id: id.into(),
        })
    }

    pub fn session(&self, id: &str) -> Result<Arc<SessionRuntime>, ServiceError> {
        read(&self.sessions).get(id).cloned().ok_or_else(|| ServiceError::NotFound {
            what: "session",
            id: id.into(),
        })
    }

    pub fn bundles(&self) -> Vec<BundleSummary> {
        read(&self.bundles).values().map(|b| b.summary()).collect()
    }

    pub fn scenarios(&self) -> Vec<ScenarioSummary> {
        read(&self.scenarios).values().map(|s| s.summary()).collect()
    }

    pub fn sessions(&self) -> Vec<SessionSummary> {
        read(&self.sessions).values().map(|s| s.summary()).collect()
    }

    /// Creates a session in the `created` state. The caller decides whether
    /// to pace it in real time ([`SessionRuntime::run`]) or step it directly.
    pub fn create_session(&self, req: &CreateSession) -> Result<Arc<SessionRuntime>, ServiceError> {
        let bundle = self.bundle(&req.bundle_id)?;
        let scenario = req.scenario_id.as_deref().map(|id| self.scenario(id)).transpose()?;
        let mut cfg = req.config.clone().unwrap_or_default();
        cfg.input_mode = req.input_mode;
        let n = self.next_session.fetch_add(1, Ordering::Relaxed) + 1;
        let id = format!("s-{n}");
        let rt = Arc::new(SessionRuntime::new(id.clone(), bundle, scenario, cfg, self.limits)?);
        write(&self.sessions).insert(id, rt.clone());
        Ok(rt)
    }

    pub fn next_client_id(&self) -> u64 {
        self.next_client.fetch_add(1, Ordering::Relaxed) + 1
    }
}
