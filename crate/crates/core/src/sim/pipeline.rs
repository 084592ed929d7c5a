use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ids::{AppId, EnvId, WuId};
use crate::model::{FileTemplate, Workunit, WorkunitState};
use crate::sim::SimError;

/// Partitions every stage after generation is split into.
pub const PARTITIONS: u64 = 10;

pub const MUON_APP: &str = "muon";
pub const FETCH_APP: &str = "fetch";
pub const EXTERNAL_INPUT: &str = "muon.seed";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Gen,
    Sim,
    Digi,
    Reco,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Gen, Stage::Sim, Stage::Digi, Stage::Reco];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Gen => "gen",
            Stage::Sim => "sim",
            Stage::Digi => "digi",
            Stage::Reco => "reco",
        }
    }
}

/// Cost-model annotation of one workunit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskProfile {
    pub stage: Stage,
    pub events: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pipeline {
    pub events: u64,
    pub workunits: Vec<Workunit>,
    pub profiles: BTreeMap<WuId, TaskProfile>,
    /// Inputs that exist on no client and only a get-input run can provide,
    /// with their sizes.
    pub external_inputs: BTreeMap<String, u64>,
}

fn stage_wu(
    stage: Stage,
    index: u64,
    inputs: Vec<String>,
    template: &str,
    out_indices: std::ops::Range<u64>,
    predecessors: Vec<WuId>,
) -> Workunit {
    let t = FileTemplate::new(template);
    Workunit {
        wu_id: WuId::new(format!("{}{}", stage.as_str(), index)),
        app_id: AppId::new(MUON_APP),
        env_id: EnvId::new(format!("env-{}", stage.as_str())),
        patch_id: None,
        required_inputs: inputs,
        output_template: t.clone(),
        outputs: out_indices
            .map(|i| t.resolve(i).expect("static template"))
            .collect(),
        get_input_app: None,
        predecessors,
        max_result_size_bytes: u64::MAX,
        deadline_secs: 86_400,
        max_retries: 3,
        submit_seq: 0,
        state: WorkunitState::Pending,
        failed_attempts: 0,
    }
}

/// The four-stage Muon chain: one generation workunit over all `events`
/// writing ten partitions, then ten simulation, ten digitization and ten
/// reconstruction workunits of `events / 10` each, every one depending on
/// the workunit that produced its input.
pub fn build_muon_pipeline(events: u64) -> Result<Pipeline, SimError> {
    if events == 0 || !events.is_multiple_of(PARTITIONS) {
        return Err(SimError::InvalidEventCount(events));
    }
    let per = events / PARTITIONS;
    let mut wus = Vec::with_capacity(31);
    let mut profiles = BTreeMap::new();

    let gen = stage_wu(
        Stage::Gen,
        0,
        vec![],
        "gen.part{index}.dat",
        0..PARTITIONS,
        vec![],
    );
    profiles.insert(
        gen.wu_id.clone(),
        TaskProfile {
            stage: Stage::Gen,
            events,
        },
    );
    let gen_id = gen.wu_id.clone();
    wus.push(gen);

    let chain = [
        (Stage::Sim, "gen", "sim"),
        (Stage::Digi, "sim", "digi"),
        (Stage::Reco, "digi", "reco"),
    ];
    for (stage, input_prefix, out_prefix) in chain {
        for i in 0..PARTITIONS {
            let pred = match stage {
                Stage::Sim => gen_id.clone(),
                _ => WuId::new(format!("{input_prefix}{i}")),
            };
            let wu = stage_wu(
                stage,
                i,
                vec![format!("{input_prefix}.part{i}.dat")],
                &format!("{out_prefix}.part{{index}}.dat"),
                i..i + 1,
                vec![pred],
            );
            profiles.insert(wu.wu_id.clone(), TaskProfile { stage, events: per });
            wus.push(wu);
        }
    }
    Ok(Pipeline {
        events,
        workunits: wus,
        profiles,
        external_inputs: BTreeMap::new(),
    })
}

impl Pipeline {
    /// Makes generation depend on an input that no client holds, obtainable
    /// only through the get-input application.
    pub fn with_external_input(mut self, size_bytes: u64) -> Self {
        if let Some(gen) = self.workunits.first_mut() {
            gen.required_inputs = vec![EXTERNAL_INPUT.to_owned()];
            gen.get_input_app = Some(AppId::new(FETCH_APP));
        }
        self.external_inputs
            .insert(EXTERNAL_INPUT.to_owned(), size_bytes);
        self
    }

    pub fn len(&self) -> usize {
        self.workunits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.workunits.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::validate_workunit_set;

    #[test]
    fn group_a_pipeline() {
        let p = build_muon_pipeline(100).unwrap();
        assert_eq!(p.workunits.len(), 31);
        let sims: Vec<_> = p
            .profiles
            .values()
            .filter(|t| t.stage == Stage::Sim)
            .collect();
        assert_eq!(sims.len(), 10);
        assert!(sims.iter().all(|t| t.events == 10));
        assert!(validate_workunit_set(&p.workunits).is_ok());
        let reco7 = p
            .workunits
            .iter()
            .find(|w| w.wu_id.as_str() == "reco7")
            .unwrap();
        assert_eq!(reco7.required_inputs, ["digi.part7.dat"]);
        assert_eq!(reco7.predecessors, [WuId::from("digi7")]);
    }

    #[test]
    fn group_b_pipeline() {
        let p = build_muon_pipeline(1000).unwrap();
        assert_eq!(p.workunits.len(), 31);
        assert_eq!(p.profiles[&WuId::from("sim3")].events, 100);
        assert_eq!(p.profiles[&WuId::from("gen0")].events, 1000);
    }

    #[test]
    fn event_count_must_divide_into_partitions() {
        assert!(matches!(
            build_muon_pipeline(15),
            Err(SimError::InvalidEventCount(15))
        ));
        assert!(build_muon_pipeline(0).is_err());
    }
}
