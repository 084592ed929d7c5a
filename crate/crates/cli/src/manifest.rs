//! Job manifests: TOML files naming applications to register and the stages
//! of one job. Relative paths resolve against the manifest's directory.
//!
//! ```toml
//! job = "muon"
//!
//! [[application]]
//! id = "muon"
//! files = ["bin/stage.sh"]      # the first file is the entry executable
//!
//! [[stage]]
//! name = "gen"
//! app = "muon"
//! env = ["opts/gen.opts"]
//! output = "gen.part{index}.dat"
//! fan_out = 10
//!
//! [[stage]]
//! name = "sim"
//! app = "muon"
//! env = ["opts/sim.opts"]
//! instances = 10
//! inputs = ["gen.part{index}.dat"]
//! output = "sim.part{index}.dat"
//! after = ["gen"]
//! ```
//!
//! See the README for every key and its default.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use locflow_core::job::{JobSpec, Limits, StageSpec};
use locflow_core::model::{AppFile, ApplicationSpec};
use locflow_core::protocol::{Payload, SubmitApplication, SubmitJob};
use locflow_core::signing::Keypair;
use locflow_core::{AppId, FileTemplate, WuId};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub job: Option<String>,
    #[serde(default, rename = "application")]
    pub applications: Vec<AppEntry>,
    #[serde(default, rename = "stage")]
    pub stages: Vec<StageEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppEntry {
    pub id: String,
    #[serde(default = "one")]
    pub version: u32,
    pub files: Vec<PathBuf>,
    #[serde(default)]
    pub min_memory_mb: u64,
    #[serde(default)]
    pub min_disk_mb: u64,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageEntry {
    pub name: String,
    pub app: String,
    #[serde(default)]
    pub env: Vec<PathBuf>,
    #[serde(default)]
    pub patch: Vec<PathBuf>,
    #[serde(default = "one")]
    pub instances: u32,
    #[serde(default)]
    pub inputs: Vec<String>,
    pub output: String,
    #[serde(default = "one")]
    pub fan_out: u32,
    #[serde(default)]
    pub after: Vec<String>,
    #[serde(default)]
    pub after_workunits: Vec<String>,
    pub get_input_app: Option<String>,
    pub max_result_size_bytes: Option<u64>,
    pub deadline_secs: Option<u64>,
    pub max_retries: Option<u32>,
}

/// Everything a submission sends, read from disk up front.
#[derive(Debug)]
pub struct Submission {
    pub applications: Vec<SubmitApplication>,
    pub job: Option<SubmitJob>,
}

pub fn parse(text: &str) -> Result<Manifest> {
    let m: Manifest = toml::from_str(text)?;
    if m.job.is_some() != !m.stages.is_empty() {
        bail!("a manifest with stages needs a job name, and a job name needs stages");
    }
    Ok(m)
}

fn read_payload(base: &Path, path: &Path) -> Result<Payload> {
    let full = base.join(path);
    let bytes = fs::read(&full).with_context(|| format!("reading {}", full.display()))?;
    let name = full
        .file_name()
        .and_then(|n| n.to_str())
        .with_context(|| format!("{} has no usable file name", full.display()))?;
    Payload::new(name, bytes).with_context(|| format!("{}", full.display()))
}

/// Reads every referenced file and signs application files with `key`.
/// Nothing is sent, so a missing file fails before any upload.
pub fn load(path: &Path, key: Option<&Keypair>) -> Result<Submission> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let manifest = parse(&text).with_context(|| format!("parsing {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));

    let mut applications = Vec::new();
    for app in &manifest.applications {
        let key = key.context("signing applications needs --keypair")?;
        let blobs = app
            .files
            .iter()
            .map(|f| read_payload(base, f))
            .collect::<Result<Vec<_>>>()?;
        if blobs.is_empty() {
            bail!("application {} lists no files", app.id);
        }
        let files = blobs
            .iter()
            .enumerate()
            .map(|(i, p)| AppFile {
                file: p.file.clone(),
                signature: key.sign(&p.bytes),
                entry: i == 0,
            })
            .collect();
        applications.push(SubmitApplication {
            spec: ApplicationSpec {
                app_id: AppId::new(&app.id),
                version: app.version,
                files,
                min_memory_mb: app.min_memory_mb,
                min_disk_mb: app.min_disk_mb,
            },
            blobs,
        });
    }

    let job = match manifest.job {
        None => None,
        Some(name) => {
            let mut blobs: Vec<Payload> = Vec::new();
            let mut stages = Vec::new();
            for st in &manifest.stages {
                let env = st
                    .env
                    .iter()
                    .map(|f| read_payload(base, f))
                    .collect::<Result<Vec<_>>>()?;
                let patch = st
                    .patch
                    .iter()
                    .map(|f| read_payload(base, f))
                    .collect::<Result<Vec<_>>>()?;
                let defaults = Limits::default();
                stages.push(StageSpec {
                    name: st.name.clone(),
                    app_id: AppId::new(&st.app),
                    env: env.iter().map(|p| p.file.clone()).collect(),
                    patch: patch.iter().map(|p| p.file.clone()).collect(),
                    instances: st.instances,
                    inputs: st.inputs.iter().map(FileTemplate::new).collect(),
                    output_template: FileTemplate::new(&st.output),
                    fan_out: st.fan_out,
                    after: st.after.clone(),
                    after_workunits: st.after_workunits.iter().map(WuId::new).collect(),
                    get_input_app: st.get_input_app.as_ref().map(AppId::new),
                    limits: Limits {
                        max_result_size_bytes: st
                            .max_result_size_bytes
                            .unwrap_or(defaults.max_result_size_bytes),
                        deadline_secs: st.deadline_secs.unwrap_or(defaults.deadline_secs),
                        max_retries: st.max_retries.unwrap_or(defaults.max_retries),
                    },
                });
                blobs.extend(env);
                blobs.extend(patch);
            }
            let mut seen = BTreeSet::new();
            blobs.retain(|p| seen.insert(p.file.digest));
            Some(SubmitJob {
                spec: JobSpec { name, stages },
                blobs,
            })
        }
    };
    Ok(Submission { applications, job })
}
