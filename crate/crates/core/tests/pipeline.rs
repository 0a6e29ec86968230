//! Cross-module checks through the public API only.

use oneway_core::cluster::{build_schedule, verify_cluster};
use oneway_core::gates::{phase_aligned_deviation, u_bell_matrix};
use oneway_core::mbqc::{
    cnot_efficient_program, cnot_standard_program, verify_cnot, FeedforwardMode, INPUT_LABELS,
};
use oneway_core::mpmc::{
    build_mpmc_layered, build_mpmc_recursive, cluster_chain, connectedness_check,
    persistence_search, replay_witness, BasisSet,
};
use oneway_core::rabi::{rwa_reference, selected_convention};
use oneway_core::resources::{cluster_schedule, estimate, DeviceModel};

#[test]
fn cluster_schedule_and_estimate_agree_on_gate_count() {
    for (h, l) in [(1, 5), (2, 3), (3, 3), (4, 4), (3, 6)] {
        let s = build_schedule(h, l).unwrap();
        let cost = estimate(&cluster_schedule(h, l), &DeviceModel::default()).unwrap();
        assert_eq!(
            cost.gate_census.values().sum::<usize>(),
            s.n_edges(),
            "{h}x{l}"
        );
        assert_eq!(
            cost.layer_times.len(),
            s.layer_sizes().iter().filter(|&&n| n > 0).count()
        );
    }
    assert!(verify_cluster(3, 4).unwrap().passed);
}

#[test]
fn both_cnots_in_both_feedforward_modes_on_all_sixteen_inputs() {
    for p in [cnot_standard_program(), cnot_efficient_program()] {
        for mode in [FeedforwardMode::Physical, FeedforwardMode::FrameTracking] {
            let v = verify_cnot(&p, &INPUT_LABELS, mode).unwrap();
            assert!(
                v.min_fidelity > 1.0 - 1e-9,
                "{} {mode:?}: {}",
                v.program,
                v.min_fidelity
            );
            assert!(v.max_probability_sum_error < 1e-10);
            assert_eq!(v.rows.len(), 16 << v.n_measurements);
        }
    }
}

#[test]
fn chain_witnesses_replay() {
    for n in 3..=7 {
        let s = cluster_chain(n).unwrap();
        let r = persistence_search(&s, BasisSet::Pauli, n).unwrap();
        assert_eq!(r.min_measurements_found, Some(n / 2));
        let replay = replay_witness(&s, &r.witness).unwrap();
        assert!(replay.all_product && replay.max_rank == 1);
    }
}

#[test]
fn mpmc_pairs_connect_for_both_constructions() {
    for n in [3, 4, 5] {
        for st in [
            build_mpmc_layered(n).unwrap(),
            build_mpmc_recursive(n).unwrap().0,
        ] {
            for a in 0..n {
                for b in a + 1..n {
                    assert!(
                        connectedness_check(&st.state, (a, b)).unwrap().passed,
                        "n={n} ({a},{b})"
                    );
                }
            }
        }
    }
}

#[test]
fn rwa_reference_reproduces_ubell() {
    let u = rwa_reference(1.25, 1.0, std::f64::consts::PI, selected_convention());
    assert!(phase_aligned_deviation(&u, &u_bell_matrix()) < 1e-9);
}
