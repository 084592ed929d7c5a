use std::collections::BTreeSet;

use locflow_core::codec::{decode, decode_body, encode, ProtocolError, PREFIX_LEN};
use locflow_core::model::{Hardware, ResultState};
use locflow_core::protocol::{
    Assignment, ErrorKind, ErrorReply, GetInputAssignment, GetInputDone, InventoryAnswer,
    InventoryQuery, ManifestEntry, Message, Payload, Purpose, Registration, ResultUpload,
    UploadStatus, WorkReply, WorkRequest, PROTOCOL_VERSION,
};
use locflow_core::{ClientId, Digest, FileId, GroupId, ResultId, Timestamp, UserId, WuId};
use proptest::prelude::*;

fn name() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_.-]{0,12}"
}

fn names(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::btree_set(name(), 0..max).prop_map(|s| s.into_iter().collect())
}

fn digest() -> impl Strategy<Value = Digest> {
    any::<[u8; 32]>().prop_map(Digest)
}

fn file_ids(max: usize) -> impl Strategy<Value = Vec<FileId>> {
    (
        names(max),
        prop::collection::vec((digest(), any::<u64>()), max),
    )
        .prop_map(|(ns, ds)| {
            ns.into_iter()
                .zip(ds)
                .map(|(n, (d, s))| FileId::new(n, d, s).unwrap())
                .collect()
        })
}

fn hardware() -> impl Strategy<Value = Hardware> {
    (1u32..64, 0.001f64..1e6, any::<u64>(), any::<u64>()).prop_map(|(c, g, m, d)| Hardware {
        cpu_count: c,
        benchmark_gflops: g,
        memory_mb: m,
        disk_mb: d,
    })
}

fn manifest(min_len: usize) -> impl Strategy<Value = Vec<ManifestEntry>> {
    (
        file_ids(6),
        prop::collection::vec(prop::collection::vec(any::<u8>(), 1..70), 6),
    )
        .prop_filter("need entries", move |(f, _)| f.len() >= min_len)
        .prop_map(|(files, sigs)| {
            files
                .into_iter()
                .zip(sigs)
                .enumerate()
                .map(|(i, (file, sig))| {
                    let purpose = [Purpose::App, Purpose::Env, Purpose::Patch][i % 3];
                    ManifestEntry {
                        file,
                        purpose,
                        signature: (purpose == Purpose::App).then_some(sig),
                        entry: i == 0,
                    }
                })
                .collect()
        })
}

fn payload() -> impl Strategy<Value = Payload> {
    (name(), prop::collection::vec(any::<u8>(), 0..64))
        .prop_map(|(n, b)| Payload::new(n, b).unwrap())
}

fn work_reply() -> impl Strategy<Value = WorkReply> {
    prop_oneof![
        any::<u64>().prop_map(|b| WorkReply::NoWork { backoff_secs: b }),
        (
            name(),
            name(),
            any::<u64>(),
            manifest(0),
            names(4),
            names(4),
            any::<u64>()
        )
            .prop_map(|(r, w, d, manifest, inputs, outputs, max)| {
                let manifest = manifest
                    .into_iter()
                    .filter(|m| !inputs.contains(&m.file.name))
                    .collect();
                WorkReply::Assignment(Assignment {
                    result_id: ResultId::new(r),
                    wu_id: WuId::new(w),
                    deadline_at: Timestamp(d),
                    manifest,
                    inputs,
                    outputs,
                    max_result_size_bytes: max,
                })
            }),
        (name(), name(), any::<u64>(), manifest(0), names(4)).prop_map(|(r, w, d, m, t)| {
            WorkReply::GetInputAssignment(GetInputAssignment {
                result_id: ResultId::new(r),
                wu_id: WuId::new(w),
                deadline_at: Timestamp(d),
                manifest: m,
                targets: t,
            })
        }),
    ]
}

fn message() -> impl Strategy<Value = Message> {
    prop_oneof![
        (
            prop::option::of(name()),
            name(),
            prop::option::of(name()),
            hardware()
        )
            .prop_map(|(c, u, g, h)| Message::Register(Registration {
                client_id: c.map(ClientId::new),
                user_id: UserId::new(u),
                group_id: g.map(GroupId::new),
                hardware: h,
            })),
        (name(), hardware(), file_ids(5)).prop_map(|(c, h, inv)| {
            Message::WorkRequest(WorkRequest {
                client_id: ClientId::new(c),
                hardware: h,
                inventory: inv,
                protocol_version: PROTOCOL_VERSION,
            })
        }),
        work_reply().prop_map(Message::Work),
        (
            name(),
            0.0f64..1e9,
            prop::collection::vec(payload(), 0..3),
            any::<bool>()
        )
            .prop_map(|(r, cpu, outs, ok)| {
                let mut seen = BTreeSet::new();
                let outputs = outs
                    .into_iter()
                    .filter(|p| seen.insert(p.file.name.clone()))
                    .collect();
                Message::Upload(ResultUpload {
                    result_id: ResultId::new(r),
                    status: if ok {
                        UploadStatus::Success
                    } else {
                        UploadStatus::Error
                    },
                    cpu_seconds: cpu,
                    outputs,
                })
            }),
        (name(), name(), file_ids(4)).prop_map(|(c, w, f)| {
            Message::GetInputDone(GetInputDone {
                client_id: ClientId::new(c),
                wu_id: WuId::new(w),
                new_files: f,
            })
        }),
        names(5).prop_map(|n| Message::InventoryQuery(InventoryQuery { names: n })),
        (name(), names(5)).prop_map(|(c, h)| {
            Message::InventoryAnswer(InventoryAnswer {
                client_id: ClientId::new(c),
                held: h,
            })
        }),
        name().prop_map(|c| Message::Heartbeat {
            client_id: ClientId::new(c)
        }),
        prop::option::of(name()).prop_map(|job| Message::Status { job }),
        digest().prop_map(|digest| Message::Download { digest }),
        payload().prop_map(Message::Blob),
        Just(Message::Ack),
        (".{0,40}", names(3)).prop_map(|(m, d)| Message::Error(ErrorReply {
            kind: ErrorKind::NotFound,
            message: m,
            detail: d,
        })),
        prop::collection::vec(any::<u8>(), 0..100).prop_map(|bytes| Message::Archive { bytes }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn round_trip(m in message()) {
        let bytes = encode(&m);
        prop_assert_eq!(decode(&bytes).unwrap(), m.clone());
        prop_assert_eq!(encode(&decode(&bytes).unwrap()), bytes);
    }

    #[test]
    fn decoding_arbitrary_bytes_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = decode(&bytes);
        let _ = decode_body(&bytes);
    }

    #[test]
    fn every_truncation_is_malformed(m in message(), cut in any::<prop::sample::Index>()) {
        let bytes = encode(&m);
        let cut = cut.index(bytes.len());
        prop_assert!(matches!(decode(&bytes[..cut]), Err(ProtocolError::MalformedMessage(_))));
    }

    #[test]
    fn single_byte_corruption_is_rejected_or_decodes_validly(
        m in message(),
        at in any::<prop::sample::Index>(),
        flip in 1u8..=255,
    ) {
        let mut bytes = encode(&m);
        let i = PREFIX_LEN + at.index(bytes.len() - PREFIX_LEN);
        bytes[i] ^= flip;
        if let Ok(decoded) = decode(&bytes) {
            prop_assert!(decoded.validate().is_ok());
        }
    }
}

#[test]
fn result_states_encode_in_screaming_case() {
    let s = serde_json::to_string(&ResultState::InProgress).unwrap();
    assert_eq!(s, "\"IN_PROGRESS\"");
}
