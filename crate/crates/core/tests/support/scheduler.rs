//! Scenario generators, a brute-force reference for `handle_work_request`
//! and a scenario runner that checks both, shared by the scheduler property
//! tests and the acceptance suite.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use locflow_core::catalog::Catalog;
use locflow_core::model::{AppFile, ApplicationSpec, EnvironmentBundle, Hardware, ResultState};
use locflow_core::protocol::{
    InventoryAnswer, ResultReport, UploadStatus, WorkReply, WorkRequest, PROTOCOL_VERSION,
};
use locflow_core::scheduler::trace::validate_trace;
use locflow_core::scheduler::{Scheduler, SchedulerPolicy};
use locflow_core::{
    AppId, ClientId, Digest, EnvId, FileId, FileTemplate, ResultId, Timestamp, UserId, Workunit,
    WorkunitState, WuId,
};
use proptest::prelude::*;

pub const FILES: [&str; 4] = ["f0", "f1", "f2", "f3"];

pub fn file(name: &str, variant: u8) -> FileId {
    static TABLE: OnceLock<Vec<FileId>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        FILES
            .iter()
            .flat_map(|n| (0..2u8).map(move |v| (n, v)))
            .map(|(n, v)| FileId::new(*n, Digest::of(&[n.as_bytes(), &[v]].concat()), 10).unwrap())
            .collect()
    });
    match FILES.iter().position(|f| *f == name) {
        Some(i) if variant < 2 => table[i * 2 + variant as usize].clone(),
        _ => FileId::new(
            name,
            Digest::of(&[name.as_bytes(), &[variant]].concat()),
            10,
        )
        .unwrap(),
    }
}

pub fn catalog() -> Catalog {
    let mut c = Catalog::new();
    for (id, mem) in [
        ("small", 0),
        ("large", 2048),
        ("fetch", 0),
        ("fetch-large", 4096),
    ] {
        c.insert_app(ApplicationSpec {
            app_id: AppId::new(id),
            version: 1,
            files: vec![AppFile {
                file: FileId::for_bytes(format!("{id}.bin"), id.as_bytes()).unwrap(),
                signature: vec![7; 64],
                entry: true,
            }],
            min_memory_mb: mem,
            min_disk_mb: 0,
        });
    }
    c.insert_env(EnvironmentBundle {
        env_id: EnvId::new("env"),
        app_id: AppId::new("small"),
        files: vec![],
    });
    c
}

#[derive(Clone, Debug)]
pub struct WuSpec {
    pub inputs: BTreeSet<usize>,
    pub preds: BTreeSet<usize>,
    pub large: bool,
    pub get_input: Option<bool>,
    pub max_retries: u32,
}

#[derive(Clone, Debug)]
pub enum Op {
    /// Client requests work declaring `held`, each file in one of two
    /// content variants.
    Request {
        client: usize,
        held: Vec<(usize, u8)>,
    },
    /// Finish the oldest in-progress result, successfully or not, with the
    /// outputs in content variant `variant`.
    Finish {
        ok: bool,
        variant: u8,
    },
    Answers {
        order: Vec<usize>,
        held: Vec<Vec<usize>>,
    },
    GetInputDone {
        files: Vec<(usize, u8)>,
    },
    Advance {
        secs: u64,
    },
}

pub fn wu_spec(index: usize) -> impl Strategy<Value = WuSpec> {
    (
        prop::collection::btree_set(0..FILES.len(), 0..=3),
        prop::collection::btree_set(0..index.max(1), 0..=index.min(2)),
        any::<bool>(),
        prop::option::of(any::<bool>()),
        0u32..3,
    )
        .prop_map(
            move |(inputs, preds, large, get_input, max_retries)| WuSpec {
                inputs,
                preds: if index == 0 { BTreeSet::new() } else { preds },
                large,
                get_input,
                max_retries,
            },
        )
}

pub fn held(max_clients: usize) -> impl Strategy<Value = Vec<(usize, u8)>> {
    let _ = max_clients;
    prop::collection::btree_map(0..FILES.len(), 0u8..2, 0..=FILES.len())
        .prop_map(|m| m.into_iter().collect())
}

pub fn op(n_clients: usize) -> impl Strategy<Value = Op> {
    prop_oneof![
        5 => (0..n_clients, held(n_clients)).prop_map(|(client, held)| Op::Request { client, held }),
        3 => (any::<bool>(), 0u8..2).prop_map(|(ok, variant)| Op::Finish { ok, variant }),
        1 => (
            Just((0..n_clients).collect::<Vec<_>>()).prop_shuffle(),
            prop::collection::vec(prop::collection::vec(0..FILES.len(), 0..=4), n_clients),
        )
            .prop_map(|(order, held)| Op::Answers { order, held }),
        1 => prop::collection::vec((0..FILES.len(), 0u8..2), 0..3)
            .prop_map(|files| Op::GetInputDone { files }),
        2 => prop_oneof![Just(1u64), Just(30), Just(61), Just(121)].prop_map(|secs| Op::Advance { secs }),
    ]
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub wus: Vec<WuSpec>,
    pub client_memory: Vec<u64>,
    pub ops: Vec<Op>,
}

pub fn scenario(max_ops: usize) -> impl Strategy<Value = Scenario> {
    (1usize..=5, 1usize..=4).prop_flat_map(move |(n_wus, n_clients)| {
        let wus: Vec<_> = (0..n_wus).map(wu_spec).collect();
        (
            wus,
            prop::collection::vec(prop_oneof![Just(0u64), Just(3000), Just(8192)], n_clients),
            prop::collection::vec(op(n_clients), 1..max_ops),
        )
            .prop_map(|(wus, client_memory, ops)| Scenario {
                wus,
                client_memory,
                ops,
            })
    })
}

/// Each workunit produces the first file it does not consume, so
/// downstream inputs can appear. One consuming every file rewrites the first.
pub fn output_of(w: &WuSpec) -> &'static str {
    (0..FILES.len())
        .find(|f| !w.inputs.contains(f))
        .map_or(FILES[0], |f| FILES[f])
}

pub fn wu_id(i: usize) -> WuId {
    WuId::new(format!("w{i}"))
}

pub fn build(spec: &Scenario) -> (Scheduler, Vec<ClientId>) {
    let mut s = Scheduler::new(
        SchedulerPolicy {
            wait_window_secs: 60,
            ..SchedulerPolicy::default()
        },
        catalog(),
    );
    s.enable_trace();
    let wus = spec
        .wus
        .iter()
        .enumerate()
        .map(|(i, w)| Workunit {
            wu_id: wu_id(i),
            app_id: AppId::new(if w.large { "large" } else { "small" }),
            env_id: EnvId::new("env"),
            patch_id: None,
            required_inputs: w.inputs.iter().map(|f| FILES[*f].to_owned()).collect(),
            output_template: FileTemplate::new(format!("out{i}")),
            outputs: vec![output_of(w).to_owned()],
            get_input_app: w
                .get_input
                .map(|large| AppId::new(if large { "fetch-large" } else { "fetch" })),
            predecessors: w.preds.iter().map(|p| wu_id(*p)).collect(),
            max_result_size_bytes: 100,
            deadline_secs: 90,
            max_retries: w.max_retries,
            submit_seq: 0,
            state: WorkunitState::Pending,
            failed_attempts: 0,
        })
        .collect();
    s.submit(Timestamp(0), wus).unwrap();
    let clients = spec
        .client_memory
        .iter()
        .enumerate()
        .map(|(i, mem)| {
            s.register_client(
                Timestamp(0),
                None,
                UserId::new(format!("u{}", i % 2)),
                None,
                Hardware {
                    memory_mb: *mem,
                    ..Hardware::default()
                },
            )
            .unwrap()
        })
        .collect();
    (s, clients)
}

/// What a brute-force reading of the rules says the reply must be, computed
/// from the state before the request. Enumerates every workunit against the
/// requester and keeps the feasible pair with the smallest submit_seq.
pub fn oracle(s: &Scheduler, req: &WorkRequest) -> Expected {
    let inv: BTreeMap<&str, &FileId> = req.inventory.iter().map(|f| (f.name.as_str(), f)).collect();
    let holds = |names: &[String], inv: &dyn Fn(&str) -> Option<Digest>| {
        names.iter().all(|n| match inv(n) {
            None => false,
            Some(d) => s.known_file(n).is_none_or(|k| k.digest == d),
        })
    };
    let requester = |n: &str| inv.get(n).map(|f| f.digest);
    let fits = |app: &AppId| {
        s.catalog()
            .requirements(app)
            .is_some_and(|r| req.hardware.satisfies(&r))
    };
    let mut wus: Vec<&Workunit> = s.workunits().collect();
    wus.sort_by_key(|w| w.submit_seq);
    let open = |w: &Workunit| {
        !w.state.is_terminal()
            && w.state != WorkunitState::Assigned
            && w.predecessors
                .iter()
                .all(|p| s.state_of(p) == Some(WorkunitState::Done))
    };
    for w in &wus {
        if open(w)
            && s.reservation(&w.wu_id).is_none_or(|c| *c == req.client_id)
            && fits(&w.app_id)
            && holds(&w.required_inputs, &requester)
        {
            return Expected::Assign(w.wu_id.clone());
        }
    }
    // After the request is processed the requester is live with `inv`; any
    // other live client keeps its last declared inventory.
    let someone_holds = |w: &Workunit| {
        w.required_inputs.is_empty()
            || holds(&w.required_inputs, &requester)
            || s.clients().any(|c| {
                c.client_id != req.client_id
                    && !s.is_lost(&c.client_id)
                    && holds(&w.required_inputs, &|n: &str| {
                        c.inventory.get(n).map(|f| f.digest)
                    })
            })
    };
    for w in &wus {
        let waiting = open(w) && !someone_holds(w) && s.reservation(&w.wu_id).is_none();
        if waiting
            && s.is_get_input_eligible(&w.wu_id)
            && s.get_input_ticket(&w.wu_id).is_none()
            && w.get_input_app.as_ref().is_some_and(fits)
        {
            return Expected::GetInput(w.wu_id.clone());
        }
    }
    Expected::NoWork
}

#[derive(Debug, PartialEq)]
pub enum Expected {
    Assign(WuId),
    GetInput(WuId),
    NoWork,
}

pub fn check_invariants(s: &Scheduler) -> Result<(), TestCaseError> {
    for (wu, _) in s.reservations() {
        let st = s.state_of(wu).unwrap();
        prop_assert!(
            st == WorkunitState::Ready || st == WorkunitState::WaitingForData,
            "reservation on {} in {}",
            wu,
            st
        );
    }
    let mut open: BTreeMap<&WuId, usize> = BTreeMap::new();
    for r in s.results() {
        if r.state == ResultState::InProgress {
            *open.entry(&r.wu_id).or_default() += 1;
        }
    }
    for (wu, n) in open {
        prop_assert_eq!(n, 1);
        prop_assert_eq!(s.state_of(wu), Some(WorkunitState::Assigned));
    }
    for w in s.workunits() {
        if w.state == WorkunitState::Assigned {
            prop_assert!(s.active_result(&w.wu_id).is_some());
        }
        if matches!(w.state, WorkunitState::Ready | WorkunitState::Assigned) {
            prop_assert!(s.dependencies_satisfied(&w.wu_id));
        }
    }
    Ok(())
}

pub struct Run {
    pub assignments: usize,
    pub get_inputs: usize,
}

pub fn run(spec: &Scenario, check_oracle: bool) -> Result<Run, TestCaseError> {
    let (mut s, clients) = build(spec);
    let mut now = 0u64;
    let mut stats = Run {
        assignments: 0,
        get_inputs: 0,
    };
    let mut open_results: Vec<(ResultId, WuId)> = Vec::new();
    let mut tickets: Vec<(ClientId, WuId)> = Vec::new();
    let mut credit_total = 0.0f64;
    for op in &spec.ops {
        match op {
            Op::Request { client, held } => {
                let req = WorkRequest {
                    client_id: clients[*client].clone(),
                    hardware: Hardware {
                        memory_mb: spec.client_memory[*client],
                        ..Hardware::default()
                    },
                    inventory: held.iter().map(|(f, v)| file(FILES[*f], *v)).collect(),
                    protocol_version: PROTOCOL_VERSION,
                };
                let expected = oracle(&s, &req);
                let reply = s
                    .handle_work_request(Timestamp::from_secs(now), &req)
                    .unwrap();
                let got = match &reply {
                    WorkReply::Assignment(a) => {
                        // Locality: every input is held, with a matching
                        // digest where the project knows one.
                        for name in &a.inputs {
                            let f = req.inventory.iter().find(|f| f.name == *name);
                            prop_assert!(f.is_some(), "assigned without {}", name);
                            if let Some(k) = s.known_file(name) {
                                prop_assert_eq!(k.digest, f.unwrap().digest);
                            }
                        }
                        let wu = s.workunit(&a.wu_id).unwrap();
                        prop_assert_eq!(&a.inputs, &wu.required_inputs);
                        stats.assignments += 1;
                        open_results.push((a.result_id.clone(), a.wu_id.clone()));
                        Expected::Assign(a.wu_id.clone())
                    }
                    WorkReply::GetInputAssignment(g) => {
                        stats.get_inputs += 1;
                        tickets.push((req.client_id.clone(), g.wu_id.clone()));
                        Expected::GetInput(g.wu_id.clone())
                    }
                    WorkReply::NoWork { .. } => Expected::NoWork,
                };
                if check_oracle {
                    prop_assert_eq!(got, expected);
                }
            }
            Op::Finish { ok, variant } => {
                open_results.retain(|(r, _)| s.result(r).unwrap().state == ResultState::InProgress);
                if let Some((r, wu)) = open_results.first().cloned() {
                    open_results.remove(0);
                    let idx: usize = wu.as_str()[1..].parse().unwrap();
                    let produced = file(output_of(&spec.wus[idx]), *variant);
                    let state = s
                        .handle_result(
                            Timestamp::from_secs(now),
                            &ResultReport {
                                result_id: r,
                                status: if *ok {
                                    UploadStatus::Success
                                } else {
                                    UploadStatus::Error
                                },
                                cpu_seconds: 5.0,
                                outputs: vec![produced],
                            },
                        )
                        .unwrap();
                    prop_assert_eq!(state == ResultState::Success, *ok);
                }
            }
            Op::Answers { order, held } => {
                let answers: Vec<InventoryAnswer> = order
                    .iter()
                    .map(|c| InventoryAnswer {
                        client_id: clients[*c].clone(),
                        held: held[*c]
                            .iter()
                            .map(|f| FILES[*f].to_owned())
                            .collect::<BTreeSet<_>>()
                            .into_iter()
                            .collect(),
                    })
                    .collect();
                let waiting: Vec<Workunit> = s
                    .workunits()
                    .filter(|w| {
                        w.state == WorkunitState::WaitingForData
                            && s.reservation(&w.wu_id).is_none()
                            && s.get_input_ticket(&w.wu_id).is_none()
                    })
                    .cloned()
                    .collect();
                let snapshot = s.clone();
                s.handle_inventory_answers(Timestamp::from_secs(now), &answers);
                // First complete, live, hardware-feasible answer wins.
                for w in waiting {
                    let req = snapshot.catalog().requirements(&w.app_id).unwrap();
                    let first = answers.iter().find(|a| {
                        !snapshot.is_lost(&a.client_id)
                            && snapshot
                                .client(&a.client_id)
                                .unwrap()
                                .hardware
                                .satisfies(&req)
                            && w.required_inputs.iter().all(|n| a.held.contains(n))
                    });
                    if let Some(a) = first {
                        prop_assert_eq!(s.reservation(&w.wu_id), Some(&a.client_id));
                    } else {
                        prop_assert_eq!(s.reservation(&w.wu_id), None);
                    }
                }
            }
            Op::GetInputDone { files } => {
                tickets.retain(|(c, w)| s.get_input_ticket(w).is_some_and(|t| t.client_id == *c));
                if let Some((c, w)) = tickets.first().cloned() {
                    tickets.remove(0);
                    let mut seen = BTreeSet::new();
                    let new: Vec<FileId> = files
                        .iter()
                        .filter(|(f, _)| seen.insert(*f))
                        .map(|(f, v)| file(FILES[*f], *v))
                        .collect();
                    s.handle_get_input_done(Timestamp::from_secs(now), &c, &w, &new)
                        .unwrap();
                }
            }
            Op::Advance { secs } => {
                now += secs;
                s.tick(Timestamp::from_secs(now));
            }
        }
        check_invariants(&s)?;
        let total: f64 = s.credit().users().map(|(_, c)| c).sum();
        prop_assert!(total >= credit_total);
        credit_total = total;
    }
    let trace = s.take_trace();
    prop_assert!(
        validate_trace(&trace).is_ok(),
        "{:?}",
        validate_trace(&trace)
    );
    Ok(stats)
}

// ---- exhaustive enumeration -----------------------------------------------

/// (clients, most workunits) pairs covering every instance with
/// `clients + workunits <= total` over the four files, for `total` in 2..=6.
pub fn exhaustive_layers(total: usize) -> Vec<(usize, usize)> {
    (1..=4)
        .filter(|c| *c < total)
        .map(|c| (c, (total - c).min(5)))
        .collect()
}

fn permutations() -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    let p = [a, b, c, d];
                    if (0..4).all(|i| p.contains(&i)) {
                        out.push(p);
                    }
                }
            }
        }
    }
    out
}

/// `table[p][m]` is file set `m` (a bitmask over `FILES`) with its files
/// renamed by permutation `p`.
fn rename_table() -> Vec<[u8; 16]> {
    permutations()
        .into_iter()
        .map(|p| {
            let mut t = [0u8; 16];
            for (m, slot) in t.iter_mut().enumerate() {
                *slot = (0..4)
                    .filter(|f| m & (1 << f) != 0)
                    .fold(0, |acc, f| acc | 1 << p[f]);
            }
            t
        })
        .collect()
}

/// Compares `xs` renamed by `t` with `xs`.
fn renamed_cmp(t: &[u8; 16], xs: &[u8]) -> std::cmp::Ordering {
    xs.iter().map(|m| t[*m as usize]).cmp(xs.iter().copied())
}

fn odometer(digits: &mut [u8]) -> bool {
    for d in digits.iter_mut() {
        if *d < 15 {
            *d += 1;
            return true;
        }
        *d = 0;
    }
    false
}

/// Calls `visit(wu_inputs, client_inventories)` once per instance with
/// `clients` clients and `1..=max_wus` workunits, up to renaming of files:
/// only the lexicographically smallest member of each orbit is visited.
/// Sets are bitmasks over `FILES`.
pub fn enumerate_instances(clients: usize, max_wus: usize, mut visit: impl FnMut(&[u8], &[u8])) {
    let table = rename_table();
    for k in 1..=max_wus {
        let mut wus = vec![0u8; k];
        loop {
            // Renamings that leave the workunits unchanged still have to be
            // checked against the inventories.
            let mut stabilizer = Vec::new();
            let mut smallest = true;
            for t in &table {
                match renamed_cmp(t, &wus) {
                    std::cmp::Ordering::Less => {
                        smallest = false;
                        break;
                    }
                    std::cmp::Ordering::Equal => stabilizer.push(t),
                    std::cmp::Ordering::Greater => {}
                }
            }
            if smallest {
                let mut inv = vec![0u8; clients];
                loop {
                    if stabilizer
                        .iter()
                        .all(|t| renamed_cmp(t, &inv) != std::cmp::Ordering::Less)
                    {
                        visit(&wus, &inv);
                    }
                    if !odometer(&mut inv) {
                        break;
                    }
                }
            }
            if !odometer(&mut wus) {
                break;
            }
        }
    }
}

/// Orbit count by Burnside's lemma: a renaming with `c` cycles fixes `2^c`
/// file sets, hence `2^(c*n)` tuples of `n` sets.
pub fn orbit_count(clients: usize, max_wus: usize) -> u64 {
    let perms = permutations();
    let mut total = 0;
    for k in 1..=max_wus {
        let n = (k + clients) as u32;
        let fixed: u64 = perms
            .iter()
            .map(|p| {
                let mut seen = [false; 4];
                let mut cycles = 0;
                for s in 0..4 {
                    if !seen[s] {
                        cycles += 1;
                        let mut i = s;
                        while !seen[i] {
                            seen[i] = true;
                            i = p[i];
                        }
                    }
                }
                2u64.pow(cycles * n)
            })
            .sum();
        total += fixed / perms.len() as u64;
    }
    total
}

/// A fixed script over one enumerated instance: every client asks for work,
/// the wait window runs out, every client asks again, the oldest result
/// succeeds, and every client asks once more. Every workunit has a get-input
/// application and every client fits every application.
pub fn exhaustive_scenario(wus: &[u8], inventories: &[u8]) -> Scenario {
    let set = |m: u8| (0..FILES.len()).filter(move |f| m & (1 << f) != 0);
    let requests = || {
        inventories
            .iter()
            .enumerate()
            .map(|(client, m)| Op::Request {
                client,
                held: set(*m).map(|f| (f, 0)).collect(),
            })
    };
    let mut ops: Vec<Op> = requests().collect();
    ops.push(Op::Advance { secs: 61 });
    ops.extend(requests());
    ops.push(Op::Finish {
        ok: true,
        variant: 0,
    });
    ops.extend(requests());
    Scenario {
        wus: wus
            .iter()
            .map(|m| WuSpec {
                inputs: set(*m).collect(),
                preds: BTreeSet::new(),
                large: false,
                get_input: Some(false),
                max_retries: 1,
            })
            .collect(),
        client_memory: vec![8192; inventories.len()],
        ops,
    }
}
