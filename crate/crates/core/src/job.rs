//! Jobs: named groups of workunits submitted together.
//!
//! A job is a list of stages. Each stage expands to `instances` workunits that
//! share an application, an environment and an optional patch. Instance `i`
//! resolves its input templates with index `i` and its output template with
//! indices `i*fan_out .. (i+1)*fan_out`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{AppId, EnvId, PatchId, WuId};
use crate::model::{EnvironmentBundle, FileId, FileTemplate, Patch, Workunit, WorkunitState};
use crate::ModelError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    pub max_result_size_bytes: u64,
    pub deadline_secs: u64,
    pub max_retries: u32,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_result_size_bytes: 64 * 1024 * 1024,
            deadline_secs: 3600,
            max_retries: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub name: String,
    pub app_id: AppId,
    pub env: Vec<FileId>,
    /// Overlay files; empty means no patch.
    pub patch: Vec<FileId>,
    pub instances: u32,
    pub inputs: Vec<FileTemplate>,
    pub output_template: FileTemplate,
    pub fan_out: u32,
    /// Stages this one runs after. A single-instance predecessor stage gates
    /// every instance; otherwise instance `i` waits for instance `i`.
    pub after: Vec<String>,
    /// Already-submitted workunits every instance waits for.
    pub after_workunits: Vec<WuId>,
    pub get_input_app: Option<AppId>,
    pub limits: Limits,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSpec {
    pub name: String,
    pub stages: Vec<StageSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JobError {
    #[error("invalid job: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A job turned into concrete records, not yet checked against existing
/// workunits.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpandedJob {
    pub name: String,
    pub workunits: Vec<Workunit>,
    pub envs: Vec<EnvironmentBundle>,
    pub patches: Vec<Patch>,
    /// Workunits no other workunit of the job depends on; their outputs are
    /// the job's deliverables.
    pub sinks: Vec<WuId>,
}

pub fn wu_id(job: &str, stage: &str, index: u32) -> WuId {
    WuId::new(format!("{job}/{stage}/{index}"))
}

fn check_label(label: &str, what: &str) -> Result<(), JobError> {
    let ok = !label.is_empty()
        && label.len() <= 64
        && label
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'));
    if ok {
        Ok(())
    } else {
        Err(JobError::Invalid(format!(
            "{what} name {label:?} must be 1-64 of [A-Za-z0-9._-]"
        )))
    }
}

/// Expands `spec` into workunits numbered from `first_seq`.
pub fn expand(spec: &JobSpec, first_seq: u64) -> Result<ExpandedJob, JobError> {
    check_label(&spec.name, "job")?;
    if spec.stages.is_empty() {
        return Err(JobError::Invalid("job has no stages".into()));
    }
    let mut by_name: BTreeMap<&str, &StageSpec> = BTreeMap::new();
    for st in &spec.stages {
        check_label(&st.name, "stage")?;
        if by_name.insert(st.name.as_str(), st).is_some() {
            return Err(JobError::Invalid(format!("duplicate stage {}", st.name)));
        }
        if st.instances == 0 || st.fan_out == 0 {
            return Err(JobError::Invalid(format!(
                "stage {}: instances and fan_out must be positive",
                st.name
            )));
        }
    }

    let mut out = ExpandedJob {
        name: spec.name.clone(),
        workunits: Vec::new(),
        envs: Vec::new(),
        patches: Vec::new(),
        sinks: Vec::new(),
    };
    let mut seq = first_seq;
    for st in &spec.stages {
        let env_id = EnvId::new(format!("{}/{}/env", spec.name, st.name));
        let env = EnvironmentBundle {
            env_id: env_id.clone(),
            app_id: st.app_id.clone(),
            files: st.env.clone(),
        };
        env.validate()?;
        out.envs.push(env);
        let patch_id = if st.patch.is_empty() {
            None
        } else {
            let patch = Patch {
                patch_id: PatchId::new(format!("{}/{}/patch", spec.name, st.name)),
                env_id: env_id.clone(),
                overlay_files: st.patch.clone(),
            };
            patch.validate()?;
            let id = patch.patch_id.clone();
            out.patches.push(patch);
            Some(id)
        };

        for i in 0..st.instances {
            let mut predecessors: Vec<WuId> = st.after_workunits.clone();
            for dep in &st.after {
                let p = by_name.get(dep.as_str()).ok_or_else(|| {
                    JobError::Invalid(format!("stage {}: unknown stage {dep}", st.name))
                })?;
                let index = if p.instances == 1 {
                    0
                } else if p.instances == st.instances {
                    i
                } else {
                    return Err(JobError::Invalid(format!(
                        "stage {} ({} instances) cannot follow {} ({} instances)",
                        st.name, st.instances, p.name, p.instances
                    )));
                };
                predecessors.push(wu_id(&spec.name, &p.name, index));
            }
            let required_inputs = st
                .inputs
                .iter()
                .map(|t| t.resolve(u64::from(i)))
                .collect::<Result<Vec<_>, _>>()?;
            let base = u64::from(i) * u64::from(st.fan_out);
            let outputs = (base..base + u64::from(st.fan_out))
                .map(|k| st.output_template.resolve(k))
                .collect::<Result<Vec<_>, _>>()?;
            let wu = Workunit {
                wu_id: wu_id(&spec.name, &st.name, i),
                app_id: st.app_id.clone(),
                env_id: env_id.clone(),
                patch_id: patch_id.clone(),
                required_inputs,
                output_template: st.output_template.clone(),
                outputs,
                get_input_app: st.get_input_app.clone(),
                predecessors,
                max_result_size_bytes: st.limits.max_result_size_bytes,
                deadline_secs: st.limits.deadline_secs,
                max_retries: st.limits.max_retries,
                submit_seq: seq,
                state: WorkunitState::Pending,
                failed_attempts: 0,
            };
            wu.validate()?;
            seq += 1;
            out.workunits.push(wu);
        }
    }

    let depended_on: BTreeSet<&WuId> = out
        .workunits
        .iter()
        .flat_map(|w| w.predecessors.iter())
        .collect();
    out.sinks = out
        .workunits
        .iter()
        .filter(|w| !depended_on.contains(&w.wu_id))
        .map(|w| w.wu_id.clone())
        .collect();
    Ok(out)
}
