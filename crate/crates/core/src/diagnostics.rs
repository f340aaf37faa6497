//! Theory-facing metrics: aggregation deviation, distance to the
//! cell-centralized reference, optimality gaps and dissemination counts.

use serde::{Deserialize, Serialize};

use crate::fl::{LrSchedule, RoundInputs};
use crate::model::ModelVector;
use crate::scheduler::ParticipationMatrix;
use crate::tasks::Task;
use crate::topology::Topology;

/// Bound terms that depend on unknown smoothness constants and are not
/// evaluated.
pub const NOT_COMPUTED: [&str; 3] = ["beta", "H", "g_max"];

/// `Σ_j | p_j N̂_j / Σ p N̂ − N̂_j / Σ N̂ | · ‖ŵ_j‖`.
pub fn aggregation_deviation(row: &[bool], volumes: &[f64], norms: &[f64]) -> f64 {
    let total: f64 = volumes.iter().sum();
    let reached: f64 = row.iter().zip(volumes).filter(|(&p, _)| p).map(|(_, v)| v).sum();
    row.iter()
        .zip(volumes)
        .zip(norms)
        .map(|((&p, &v), &norm)| {
            let share = if p { v / reached } else { 0.0 };
            (share - v / total).abs() * norm
        })
        .sum()
}

/// Deviation of every ES for one round.
pub fn cell_deviations(inputs: &RoundInputs, participation: &ParticipationMatrix) -> Vec<f64> {
    let n = inputs.intra.len();
    let volumes = inputs.volumes();
    (0..n)
        .map(|l| {
            let row: Vec<bool> = (0..n).map(|j| participation.get(j, l)).collect();
            let v: Vec<f64> = (0..n).map(|j| volumes.weight(j, l)).collect();
            let norms: Vec<f64> = (0..n).map(|j| inputs.cell_model(j, l).norm()).collect();
            aggregation_deviation(&row, &v, &norms)
        })
        .collect()
}

/// Pooled label distribution and volume of each virtual cell, with every
/// relay client counted in the cell to its left.
pub fn reference_cells(topology: &Topology) -> Vec<(Vec<f64>, f64)> {
    let n = topology.num_cells();
    let mut members: Vec<Vec<usize>> = topology.uploader_sets.clone();
    for (r, &k) in topology.roc_of.iter().enumerate() {
        members[r].push(k);
    }
    (0..n)
        .map(|l| {
            let volume: f64 = members[l].iter().map(|&k| topology.clients[k].data_volume as f64).sum();
            let classes = topology.clients[0].label_distribution.len();
            let mut dist = vec![0.0; classes];
            for &k in &members[l] {
                let c = &topology.clients[k];
                for (d, &p) in dist.iter_mut().zip(&c.label_distribution) {
                    *d += c.data_volume as f64 / volume * p;
                }
            }
            (dist, volume)
        })
        .collect()
}

/// Trajectory of the cell-centralized reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceState {
    pub round: usize,
    pub model: ModelVector,
}

/// Each virtual cell takes `steps` exact gradient steps on its pooled
/// distribution from the common model; the results are averaged by volume.
pub fn centralized_reference_step(
    state: &ReferenceState,
    cells: &[(Vec<f64>, f64)],
    task: &dyn Task,
    steps: usize,
    lr: &LrSchedule,
) -> ReferenceState {
    let eta = lr.rate(state.round, steps);
    let trained: Vec<(ModelVector, f64)> = cells
        .iter()
        .map(|(dist, v)| {
            let mut w = state.model.clone();
            for _ in 0..steps {
                let g = task.gradient(&w, dist);
                w.axpy(-eta, &g);
            }
            (w, *v)
        })
        .collect();
    let model = ModelVector::weighted_mean(trained.iter().map(|(m, v)| (m, *v))).expect("cells have data");
    ReferenceState { round: state.round + 1, model }
}

/// `‖w_l − w_ref‖` for every ES.
pub fn reference_distances(es_models: &[ModelVector], reference: &ModelVector) -> Vec<f64> {
    es_models.iter().map(|m| m.distance(reference)).collect()
}

/// Mean over rounds and cells of the clients aggregated per ES.
pub fn table2_metric<'a, I>(per_round: I) -> Option<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let (mut sum, mut count) = (0.0, 0usize);
    for row in per_round {
        sum += row.iter().sum::<f64>();
        count += row.len();
    }
    (count > 0).then(|| sum / count as f64)
}
