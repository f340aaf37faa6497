use proptest::prelude::*;
use relayfl_core::baselines::{clients_reaching, BaselineKind};
use relayfl_core::diagnostics::{aggregation_deviation, table2_metric};
use relayfl_core::harness::{simulate, ExperimentConfig, World};
use relayfl_core::scheduler::ParticipationMatrix;

fn fixture() -> impl Strategy<Value = (Vec<bool>, Vec<f64>, Vec<f64>)> {
    (1usize..=6).prop_flat_map(|n| {
        (
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(0.1f64..10.0, n),
            prop::collection::vec(prop_oneof![Just(0.0), 0.01f64..5.0], n),
            0..n,
        )
            .prop_map(|(mut row, v, norms, diag)| {
                row[diag] = true;
                (row, v, norms)
            })
    })
}

proptest! {
    /// Every term, the diagonal included, vanishes only for a full row or a
    /// zero norm.
    #[test]
    fn deviation_vanishes_exactly_when_expected((row, v, norms) in fixture()) {
        let f = aggregation_deviation(&row, &v, &norms);
        prop_assert!(f >= 0.0);
        let full = row.iter().all(|&b| b);
        let silent = norms.iter().all(|&x| x == 0.0);
        if full || silent {
            prop_assert!(f.abs() <= 1e-12);
        } else {
            prop_assert!(f > 0.0);
        }
        // each share differs from its target by at most the larger of the two
        prop_assert!(f <= 2.0 * norms.iter().copied().fold(0.0, f64::max) + 1e-12);
    }

    #[test]
    fn table2_ignores_client_order(rows in prop::collection::vec(prop::collection::vec(0.0f64..60.0, 3), 1..10)) {
        let forward = table2_metric(rows.iter().map(Vec::as_slice)).unwrap();
        let reversed: Vec<Vec<f64>> = rows.iter().rev().map(|r| r.iter().rev().copied().collect()).collect();
        let back = table2_metric(reversed.iter().map(Vec::as_slice)).unwrap();
        prop_assert!((forward - back).abs() <= 1e-9);
    }
}

#[test]
fn records_carry_well_formed_metrics() {
    let mut cfg = ExperimentConfig::default();
    cfg.training.rounds = 5;
    for scheme in BaselineKind::ALL {
        let records = simulate(&cfg, scheme, 2).unwrap();
        for r in &records {
            assert_eq!(r.f.len(), 3);
            assert!(r.f.iter().all(|&x| x >= 0.0));
            assert!(r.a1.iter().all(|&x| x.is_finite() && x >= 0.0));
            assert!(r.gap.as_ref().unwrap().iter().all(|&g| g >= -1e-12));
            if r.participation.is_full() {
                assert!(r.f_mean.abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn clients_reaching_is_invariant_under_relabeling() {
    let cfg = ExperimentConfig::default();
    let mut topology = World::build(&cfg, 4).unwrap().topology;
    let mut p = ParticipationMatrix::identity(3);
    p.set(0, 1, true);
    p.set(2, 0, true);
    let before = clients_reaching(&p, &topology);
    for set in &mut topology.uploader_sets {
        set.reverse();
    }
    assert_eq!(clients_reaching(&p, &topology), before);
}
