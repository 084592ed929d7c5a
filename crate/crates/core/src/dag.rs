//! Predecessor graph checks.

use std::collections::BTreeMap;

use crate::ids::WuId;
use crate::model::Workunit;
use crate::ModelError;

/// Checks that every predecessor reference resolves and that the graph is
/// acyclic.
pub fn validate_workunit_set(wus: &[Workunit]) -> Result<(), ModelError> {
    validate_graph(wus.iter().map(|w| (&w.wu_id, w.predecessors.as_slice())))
}

/// Same check over bare `(node, predecessors)` pairs.
pub fn validate_graph<'a>(
    nodes: impl IntoIterator<Item = (&'a WuId, &'a [WuId])>,
) -> Result<(), ModelError> {
    let mut graph: BTreeMap<&WuId, &[WuId]> = BTreeMap::new();
    for (id, preds) in nodes {
        if graph.insert(id, preds).is_some() {
            return Err(ModelError::DuplicateWorkunit(id.clone()));
        }
    }
    for preds in graph.values() {
        for p in preds.iter() {
            if !graph.contains_key(p) {
                return Err(ModelError::DanglingPredecessor(p.clone()));
            }
        }
    }

    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Fresh,
        OnStack,
        Finished,
    }
    let mut mark: BTreeMap<&WuId, Mark> = graph.keys().map(|k| (*k, Mark::Fresh)).collect();

    // Iterative DFS; `stack` holds (node, next predecessor index).
    for &root in graph.keys() {
        if mark[root] != Mark::Fresh {
            continue;
        }
        let mut stack: Vec<(&WuId, usize)> = vec![(root, 0)];
        mark.insert(root, Mark::OnStack);
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            let preds = graph[node];
            if *next < preds.len() {
                let p = &preds[*next];
                *next += 1;
                match mark[p] {
                    Mark::Fresh => {
                        mark.insert(p, Mark::OnStack);
                        stack.push((p, 0));
                    }
                    Mark::OnStack => {
                        let start = stack.iter().position(|(n, _)| *n == p).unwrap_or(0);
                        let mut cycle: Vec<WuId> =
                            stack[start..].iter().map(|(n, _)| (*n).clone()).collect();
                        cycle.push(p.clone());
                        return Err(ModelError::CycleDetected(cycle));
                    }
                    Mark::Finished => {}
                }
            } else {
                mark.insert(node, Mark::Finished);
                stack.pop();
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(edges: &[(&str, &[&str])]) -> Vec<(WuId, Vec<WuId>)> {
        edges
            .iter()
            .map(|(n, ps)| (WuId::from(*n), ps.iter().map(|p| WuId::from(*p)).collect()))
            .collect()
    }

    fn check(nodes: &[(WuId, Vec<WuId>)]) -> Result<(), ModelError> {
        validate_graph(nodes.iter().map(|(n, p)| (n, p.as_slice())))
    }

    #[test]
    fn empty_is_ok() {
        assert!(check(&[]).is_ok());
        assert!(validate_workunit_set(&[]).is_ok());
    }

    #[test]
    fn chain_is_ok() {
        assert!(check(&g(&[("A", &[]), ("B", &["A"]), ("C", &["B"])])).is_ok());
    }

    #[test]
    fn two_cycle_detected() {
        match check(&g(&[("A", &["B"]), ("B", &["A"])])) {
            Err(ModelError::CycleDetected(path)) => {
                assert_eq!(path.first(), path.last());
                assert_eq!(path.len(), 3);
            }
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn self_loop_detected() {
        assert!(matches!(
            check(&g(&[("A", &["A"])])),
            Err(ModelError::CycleDetected(_))
        ));
    }

    #[test]
    fn dangling_reference() {
        assert!(matches!(
            check(&g(&[("A", &["Z"])])),
            Err(ModelError::DanglingPredecessor(id)) if id.as_str() == "Z"
        ));
    }
}
