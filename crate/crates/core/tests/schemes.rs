use proptest::prelude::*;
use relayfl_core::baselines::{clients_reaching, BaselineKind, SchemeRound};
use relayfl_core::fl::{expand_models, verify_expansion, LrSchedule};
use relayfl_core::harness::{final_models, simulate_with, ExperimentConfig, World};
use relayfl_core::model::ModelVector;
use relayfl_core::scheduler::ParticipationMatrix;

fn config(cells: usize, clients: usize, rounds: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.topology.num_cells = cells;
    cfg.topology.num_clients = clients;
    cfg.training.rounds = rounds;
    cfg.training.lr = LrSchedule::Constant { lr: 0.1 };
    if cells == 1 {
        cfg.partition.classes_per_cell = 10;
    }
    cfg
}

fn rounds(cfg: &ExperimentConfig, scheme: BaselineKind, seed: u64) -> Vec<SchemeRound> {
    let mut out = Vec::new();
    simulate_with(cfg, scheme, seed, |r| out.push(r.clone())).unwrap();
    out
}

#[test]
fn every_scheme_coincides_on_one_cell() {
    let cfg = config(1, 10, 10);
    let reference = final_models(&cfg, BaselineKind::Proposed, 9).unwrap();
    for scheme in BaselineKind::ALL {
        assert_eq!(final_models(&cfg, scheme, 9).unwrap(), reference, "{scheme}");
    }
}

#[test]
fn relay_schemes_share_the_first_local_stage() {
    let cfg = config(4, 48, 1);
    let ours = rounds(&cfg, BaselineKind::Proposed, 2);
    let fedoc = rounds(&cfg, BaselineKind::FedOc, 2);
    assert_eq!(ours[0].inputs, fedoc[0].inputs);
    let mes = rounds(&cfg, BaselineKind::FedMes, 2);
    let eocd = rounds(&cfg, BaselineKind::FlEocd, 2);
    // the cache is empty in the first round
    assert_eq!(mes[0].state, eocd[0].state);
}

#[test]
fn cached_models_change_later_rounds() {
    let cfg = config(3, 60, 3);
    let mes = rounds(&cfg, BaselineKind::FedMes, 4);
    let eocd = rounds(&cfg, BaselineKind::FlEocd, 4);
    assert_eq!(mes[0].state.es_models, eocd[0].state.es_models);
    assert_ne!(mes[1].state.es_models, eocd[1].state.es_models);
}

#[test]
fn fedoc_reaches_only_neighbours() {
    let cfg = config(6, 60, 10);
    for r in rounds(&cfg, BaselineKind::FedOc, 3) {
        assert!(r.trace.participation.is_tridiagonal());
        assert!(r.trace.wall_time <= r.timings.t_max);
    }
}

#[test]
fn proposed_covers_fedoc_every_round() {
    let cfg = config(5, 50, 10);
    let ours = rounds(&cfg, BaselineKind::Proposed, 4);
    let fedoc = rounds(&cfg, BaselineKind::FedOc, 4);
    for (a, b) in ours.iter().zip(&fedoc) {
        assert_eq!(a.timings, b.timings);
        let n = a.trace.participation.num_cells();
        for j in 0..n {
            for l in 0..n {
                if b.trace.participation.get(j, l) {
                    assert!(a.trace.participation.get(j, l), "({j}, {l})");
                }
            }
        }
        assert!(a.trace.wall_time <= a.timings.t_max);
    }
}

#[test]
fn hfl_keeps_cells_apart_unless_the_cloud_averages() {
    let cfg = config(3, 60, 4);
    for r in rounds(&cfg, BaselineKind::Hfl, 1) {
        assert_eq!(r.trace.participation, ParticipationMatrix::identity(3));
        assert!(r.inputs.roc_models.is_empty());
    }
    let mut cloud = cfg.clone();
    cloud.options.hfl_cloud_period = Some(2);
    for r in rounds(&cloud, BaselineKind::Hfl, 1) {
        let m = &r.state.es_models;
        let synced = m.iter().all(|x| x == &m[0]);
        assert_eq!(synced, r.state.round % 2 == 0, "round {}", r.state.round);
    }
}

#[test]
fn clients_reaching_counts() {
    let cfg = config(3, 60, 1);
    let topology = World::build(&cfg, 1).unwrap().topology;
    let ident = clients_reaching(&ParticipationMatrix::identity(3), &topology);
    assert_eq!(ident.iter().sum::<f64>(), 58.0);
    let mut full = ParticipationMatrix::identity(3);
    for j in 0..3 {
        for l in 0..3 {
            full.set(j, l, true);
        }
    }
    assert_eq!(clients_reaching(&full, &topology), vec![60.0; 3]);
}

#[test]
fn fedmes_counts_every_covered_client() {
    let cfg = config(3, 60, 2);
    let topology = World::build(&cfg, 1).unwrap().topology;
    for r in rounds(&cfg, BaselineKind::FedMes, 1) {
        let covered: Vec<f64> = (0..3).map(|l| topology.covered_clients(l).count() as f64).collect();
        assert_eq!(r.clients_aggregated, covered);
    }
}

#[test]
fn expansion_holds_across_sizes() {
    for cells in [1usize, 2, 3, 5, 6] {
        let cfg = config(cells, 10 * cells, 20);
        for r in rounds(&cfg, BaselineKind::Proposed, 40 + cells as u64) {
            let residual = verify_expansion(&r.inputs, &r.state.es_models, &r.trace.participation);
            assert!(residual <= 1e-9, "L = {cells}: {residual}");
        }
    }
}

#[test]
fn aggregation_conserves_volume_weighted_mass() {
    // each ES model is a convex combination of the contributing cell models
    let cfg = config(4, 40, 5);
    for r in rounds(&cfg, BaselineKind::Proposed, 8) {
        let volumes = r.inputs.volumes();
        for (l, m) in expand_models(&r.inputs, &r.trace.participation).iter().enumerate() {
            let mut mass = ModelVector::zeros(m.dim());
            let mut total = 0.0;
            for j in (0..4).filter(|&j| r.trace.participation.get(j, l)) {
                let v = volumes.weight(j, l);
                mass.axpy(v, &r.inputs.cell_model(j, l));
                total += v;
            }
            let mut scaled = m.clone();
            scaled.scale(total);
            assert!(scaled.distance(&mass) <= 1e-9 * mass.norm().max(1.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn runs_are_deterministic(seed in 0u64..1000, cells in 2usize..=4) {
        let cfg = config(cells, 12 * cells, 3);
        for scheme in [BaselineKind::Proposed, BaselineKind::FlEocd] {
            prop_assert_eq!(final_models(&cfg, scheme, seed).unwrap(), final_models(&cfg, scheme, seed).unwrap());
        }
    }
}
