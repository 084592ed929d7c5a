//! Every small instance, up to renaming of files, checked against the
//! brute-force reference.

#[path = "support/scheduler.rs"]
mod sched;

use sched::*;

#[test]
fn enumeration_visits_one_instance_per_orbit() {
    for (clients, max_wus) in [(1, 2), (2, 2), (3, 1)] {
        let mut n = 0u64;
        enumerate_instances(clients, max_wus, |_, _| n += 1);
        assert_eq!(
            n,
            orbit_count(clients, max_wus),
            "{clients} clients, {max_wus} wus"
        );
    }
}

#[test]
fn agrees_with_brute_force_on_every_small_instance() {
    // The acceptance suite runs the larger `exhaustive_layers(6)`.
    for (clients, max_wus) in exhaustive_layers(5) {
        let mut n = 0u64;
        enumerate_instances(clients, max_wus, |wus, inv| {
            if let Err(e) = run(&exhaustive_scenario(wus, inv), true) {
                panic!("wus {wus:?} inventories {inv:?}: {e}");
            }
            n += 1;
        });
        assert_eq!(n, orbit_count(clients, max_wus));
    }
}
