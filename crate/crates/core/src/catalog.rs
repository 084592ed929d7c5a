//! Applications, environments and patches known to a project, and the
//! download manifests derived from them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ids::{AppId, EnvId, PatchId};
use crate::model::{AppRequirements, ApplicationSpec, EnvironmentBundle, Patch, Workunit};
use crate::protocol::{ManifestEntry, Purpose};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Catalog {
    apps: BTreeMap<AppId, ApplicationSpec>,
    envs: BTreeMap<EnvId, EnvironmentBundle>,
    patches: BTreeMap<PatchId, Patch>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CatalogError {
    #[error("unknown application {0}")]
    UnknownApplication(AppId),
    #[error("unknown environment {0}")]
    UnknownEnvironment(EnvId),
    #[error("unknown patch {0}")]
    UnknownPatch(PatchId),
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores (or replaces with a newer version of) an application.
    pub fn insert_app(&mut self, app: ApplicationSpec) {
        self.apps.insert(app.app_id.clone(), app);
    }

    pub fn insert_env(&mut self, env: EnvironmentBundle) {
        self.envs.insert(env.env_id.clone(), env);
    }

    pub fn insert_patch(&mut self, patch: Patch) {
        self.patches.insert(patch.patch_id.clone(), patch);
    }

    pub fn app(&self, id: &AppId) -> Option<&ApplicationSpec> {
        self.apps.get(id)
    }

    pub fn env(&self, id: &EnvId) -> Option<&EnvironmentBundle> {
        self.envs.get(id)
    }

    pub fn patch(&self, id: &PatchId) -> Option<&Patch> {
        self.patches.get(id)
    }

    pub fn apps(&self) -> impl Iterator<Item = &ApplicationSpec> {
        self.apps.values()
    }

    pub fn requirements(&self, id: &AppId) -> Option<AppRequirements> {
        self.apps.get(id).map(ApplicationSpec::requirements)
    }

    /// Checks that everything `wu` references exists.
    pub fn check_references(&self, wu: &Workunit) -> Result<(), CatalogError> {
        if !self.apps.contains_key(&wu.app_id) {
            return Err(CatalogError::UnknownApplication(wu.app_id.clone()));
        }
        if !self.envs.contains_key(&wu.env_id) {
            return Err(CatalogError::UnknownEnvironment(wu.env_id.clone()));
        }
        if let Some(p) = &wu.patch_id {
            if !self.patches.contains_key(p) {
                return Err(CatalogError::UnknownPatch(p.clone()));
            }
        }
        if let Some(g) = &wu.get_input_app {
            if !self.apps.contains_key(g) {
                return Err(CatalogError::UnknownApplication(g.clone()));
            }
        }
        Ok(())
    }

    pub fn app_manifest(&self, id: &AppId) -> Result<Vec<ManifestEntry>, CatalogError> {
        let app = self
            .apps
            .get(id)
            .ok_or_else(|| CatalogError::UnknownApplication(id.clone()))?;
        Ok(app
            .files
            .iter()
            .map(|f| ManifestEntry {
                file: f.file.clone(),
                purpose: Purpose::App,
                signature: Some(f.signature.clone()),
                entry: f.entry,
            })
            .collect())
    }

    /// Application, environment and patch files for `wu`, in that order.
    /// Required inputs are never part of a manifest.
    pub fn manifest_for(&self, wu: &Workunit) -> Result<Vec<ManifestEntry>, CatalogError> {
        let mut out = self.app_manifest(&wu.app_id)?;
        let env = self
            .envs
            .get(&wu.env_id)
            .ok_or_else(|| CatalogError::UnknownEnvironment(wu.env_id.clone()))?;
        out.extend(env.files.iter().map(|f| ManifestEntry {
            file: f.clone(),
            purpose: Purpose::Env,
            signature: None,
            entry: false,
        }));
        if let Some(pid) = &wu.patch_id {
            let patch = self
                .patches
                .get(pid)
                .ok_or_else(|| CatalogError::UnknownPatch(pid.clone()))?;
            out.extend(patch.overlay_files.iter().map(|f| ManifestEntry {
                file: f.clone(),
                purpose: Purpose::Patch,
                signature: None,
                entry: false,
            }));
        }
        Ok(out)
    }
}
