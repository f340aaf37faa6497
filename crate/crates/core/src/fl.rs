//! Local training, aggregation and model relaying for one round.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::RoundTimings;
use crate::error::{Error, Result};
use crate::model::ModelVector;
use crate::rng::SeedTree;
use crate::scheduler::{CellVolumes, Direction, Forwarding, ParticipationMatrix, SchedulePlan};
use crate::tasks::Task;
use crate::topology::{ClientProfile, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant { lr: f64 },
    /// `initial · decay^r` in round `r`.
    Exponential { initial: f64, decay: f64 },
    /// `1 / ((r + 1)(E − 1))`; needs at least two local steps.
    Harmonic,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::Exponential { initial: 0.01, decay: 0.995 }
    }
}

impl LrSchedule {
    pub fn rate(&self, round: usize, local_steps: usize) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::Exponential { initial, decay } => initial * decay.powi(round as i32),
            LrSchedule::Harmonic => 1.0 / ((round + 1) as f64 * (local_steps as f64 - 1.0)),
        }
    }

    pub fn validate(&self, local_steps: usize) -> Result<()> {
        let ok = match *self {
            LrSchedule::Constant { lr } => lr >= 0.0 && lr.is_finite(),
            LrSchedule::Exponential { initial, decay } => initial >= 0.0 && initial.is_finite() && decay > 0.0 && decay <= 1.0,
            LrSchedule::Harmonic => local_steps >= 2,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config("training.lr", format!("invalid schedule {self:?} for {local_steps} local steps")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub rounds: usize,
    /// Local SGD steps per round.
    pub local_steps: usize,
    pub batch_size: usize,
    pub lr: LrSchedule,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { rounds: 500, local_steps: 5, batch_size: 20, lr: LrSchedule::default() }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("training.rounds", "must be at least 1"));
        }
        if self.local_steps == 0 {
            return Err(Error::config("training.local_steps", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("training.batch_size", "must be at least 1"));
        }
        self.lr.validate(self.local_steps)
    }
}

/// `steps` SGD steps from `start` on the client's label mix.
pub fn local_sgd(
    start: &ModelVector,
    client: &ClientProfile,
    task: &dyn Task,
    steps: usize,
    batch: usize,
    lr: f64,
    rng: &mut dyn RngCore,
) -> Result<ModelVector> {
    let mut w = start.clone();
    for _ in 0..steps {
        let g = task.stochastic_gradient(&w, &client.label_distribution, batch, rng);
        w.axpy(-lr, &g);
        if !w.is_finite() {
            return Err(Error::Divergence { client: client.id });
        }
    }
    Ok(w)
}

/// Shared inputs of every round.
#[derive(Clone, Copy)]
pub struct RoundContext<'a> {
    pub task: &'a dyn Task,
    pub training: &'a TrainingConfig,
    pub seeds: &'a SeedTree,
}

impl RoundContext<'_> {
    /// Trains one client from `start`. The random stream depends only on
    /// the round and client, so every scheme sees the same draws.
    pub fn train(&self, round: usize, client: &ClientProfile, start: &ModelVector) -> Result<ModelVector> {
        let mut rng = self.seeds.stream("training", &[round as u64, client.id as u64]);
        let t = self.training;
        local_sgd(start, client, self.task, t.local_steps, t.batch_size, t.lr.rate(round, t.local_steps), &mut rng)
    }
}

/// Every client of the topology trained from its home cell's model.
pub fn train_clients(
    ctx: &RoundContext<'_>,
    topology: &Topology,
    es_models: &[ModelVector],
    round: usize,
) -> Result<Vec<ModelVector>> {
    topology
        .clients
        .par_iter()
        .map(|c| ctx.train(round, c, &es_models[c.home_cell]))
        .collect()
}

/// Volume-weighted mean of uploads; returns the model and total volume.
pub fn intra_cell_aggregate(cell: usize, models: &[(&ModelVector, f64)]) -> Result<(ModelVector, f64)> {
    if models.iter().any(|&(_, v)| !(v > 0.0)) {
        return Err(Error::Domain(format!("cell {cell} has an upload with nonpositive volume")));
    }
    let total: f64 = models.iter().map(|&(_, v)| v).sum();
    let mean = ModelVector::weighted_mean(models.iter().copied()).ok_or(Error::EmptyCell(cell))?;
    Ok((mean, total))
}

/// A model travelling between servers, with the cells and relay clients it
/// already contains.
#[derive(Debug, Clone, PartialEq)]
pub struct RelayStream {
    pub model: ModelVector,
    pub volume: f64,
    pub origins: Vec<bool>,
    pub merged_rocs: Vec<bool>,
}

impl RelayStream {
    pub fn from_cell(cell: usize, num_cells: usize, model: ModelVector, volume: f64) -> Self {
        let mut origins = vec![false; num_cells];
        origins[cell] = true;
        Self { model, volume, origins, merged_rocs: vec![false; num_cells.saturating_sub(1)] }
    }

    /// Folds another stream in by volume.
    pub fn absorb(&mut self, other: &RelayStream) -> Result<()> {
        for (i, (&a, &b)) in self.merged_rocs.iter().zip(&other.merged_rocs).enumerate() {
            if a && b {
                return Err(Error::DoubleMerge { roc: i });
            }
        }
        let total = self.volume + other.volume;
        let mut m = self.model.clone();
        m.scale(self.volume / total);
        m.axpy(other.volume / total, &other.model);
        self.model = m;
        self.volume = total;
        for (a, &b) in self.origins.iter_mut().zip(&other.origins) {
            *a |= b;
        }
        for (a, &b) in self.merged_rocs.iter_mut().zip(&other.merged_rocs) {
            *a |= b;
        }
        Ok(())
    }
}

/// `(N_in w_in + n_b w_b) / (N_in + n_b)`; a relay client may enter a
/// stream once.
pub fn roc_relay_merge(incoming: &RelayStream, roc_model: &ModelVector, roc_volume: f64, region: usize) -> Result<RelayStream> {
    if !(roc_volume > 0.0) {
        return Err(Error::Domain(format!("relay client of region {region} has no data")));
    }
    if incoming.merged_rocs[region] {
        return Err(Error::DoubleMerge { roc: region });
    }
    let total = incoming.volume + roc_volume;
    let mut model = incoming.model.clone();
    model.scale(incoming.volume / total);
    model.axpy(roc_volume / total, roc_model);
    let mut out = incoming.clone();
    out.model = model;
    out.volume = total;
    out.merged_rocs[region] = true;
    Ok(out)
}

/// What one ES holds just before its final aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub intra: ModelVector,
    pub intra_volume: f64,
    /// Received `(model, carried volume)` bundles, at most one per side.
    pub bundles: Vec<(ModelVector, f64)>,
}

/// Volume-weighted mean of the intra model and received bundles.
pub fn es_final_aggregate(state: &CellState) -> ModelVector {
    if state.bundles.is_empty() {
        return state.intra.clone();
    }
    let parts = std::iter::once((&state.intra, state.intra_volume)).chain(state.bundles.iter().map(|(m, v)| (m, *v)));
    ModelVector::weighted_mean(parts).unwrap_or_else(|| state.intra.clone())
}

/// Per-round quantities the aggregate models are built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundInputs {
    pub intra: Vec<ModelVector>,
    pub intra_volume: Vec<f64>,
    /// Locally trained model of each region's relay client.
    pub roc_models: Vec<ModelVector>,
    pub roc_volume: Vec<f64>,
}

impl RoundInputs {
    pub fn volumes(&self) -> CellVolumes {
        let n = self.intra.len();
        let mut roc = self.roc_volume.clone();
        roc.resize(n.saturating_sub(1), 0.0);
        CellVolumes { intra: self.intra_volume.clone(), roc }
    }

    /// `ŵ_j` as seen from a destination `l`: cell `j`'s intra model merged
    /// with the relay client on the side facing `l`.
    pub fn cell_model(&self, j: usize, l: usize) -> ModelVector {
        let roc = match j.cmp(&l) {
            Ordering::Less => Some(j),
            Ordering::Greater => Some(j - 1),
            Ordering::Equal => None,
        };
        match roc.filter(|&r| r < self.roc_models.len()) {
            Some(r) => ModelVector::weighted_mean([
                (&self.intra[j], self.intra_volume[j]),
                (&self.roc_models[r], self.roc_volume[r]),
            ])
            .expect("positive volumes"),
            None => self.intra[j].clone(),
        }
    }
}

/// Trains every client and forms the intra and relay-client models.
pub fn local_stage(
    ctx: &RoundContext<'_>,
    topology: &Topology,
    es_models: &[ModelVector],
    round: usize,
) -> Result<RoundInputs> {
    let trained = train_clients(ctx, topology, es_models, round)?;
    let mut intra = Vec::with_capacity(topology.num_cells());
    let mut intra_volume = Vec::with_capacity(topology.num_cells());
    for (l, set) in topology.uploader_sets.iter().enumerate() {
        let uploads: Vec<(&ModelVector, f64)> =
            set.iter().map(|&k| (&trained[k], topology.clients[k].data_volume as f64)).collect();
        let (m, v) = intra_cell_aggregate(l, &uploads)?;
        intra.push(m);
        intra_volume.push(v);
    }
    let roc_models = topology.roc_of.iter().map(|&k| trained[k].clone()).collect();
    let roc_volume = topology.roc_of.iter().map(|&k| topology.clients[k].data_volume as f64).collect();
    Ok(RoundInputs { intra, intra_volume, roc_models, roc_volume })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Ready { time: f64, cell: usize },
    Depart { time: f64, from: usize, to: usize, origins: Vec<usize> },
    Arrive { time: f64, from: usize, to: usize, accepted: bool },
    Aggregate { time: f64, cell: usize, origins: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    pub t_agg: Vec<f64>,
    pub wall_time: f64,
    pub participation: ParticipationMatrix,
    pub events: Vec<TraceEvent>,
}

#[derive(Debug)]
struct Pending {
    time: f64,
    arrival: bool,
    seq: usize,
    direction: Direction,
    from: usize,
    to: usize,
    stream: Option<RelayStream>,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl Ord for Pending {
    // min-heap on time; arrivals first at equal times
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(self.arrival.cmp(&other.arrival))
            .then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn indices(flags: &[bool]) -> Vec<usize> {
    flags.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
}

/// Relays and final aggregation for one round, replayed event by event.
/// Streams leave at the plan's start times carrying the sender's intra
/// model (and, when forwarding aggregates, any same-direction stream that
/// has already arrived); crossing a region merges its relay client.
/// Realized participation must equal `predicted`.
pub fn relay_and_aggregate(
    round: usize,
    inputs: &RoundInputs,
    plan: &SchedulePlan,
    predicted: &ParticipationMatrix,
    timings: &RoundTimings,
) -> Result<(Vec<ModelVector>, RoundTrace)> {
    let n = inputs.intra.len();
    let mut events: Vec<TraceEvent> = (0..n).map(|l| TraceEvent::Ready { time: timings.ready(l), cell: l }).collect();
    let mut heap = BinaryHeap::new();
    let mut seq = 0;
    let mut push = |heap: &mut BinaryHeap<Pending>, p: Pending| {
        heap.push(Pending { seq, ..p });
        seq += 1;
    };
    for l in 0..n.saturating_sub(1) {
        if let Some(t) = plan.start_right[l] {
            push(&mut heap, Pending { time: t, arrival: false, seq: 0, direction: Direction::Rightward, from: l, to: l + 1, stream: None });
        }
        if let Some(t) = plan.start_left[l] {
            push(&mut heap, Pending { time: t, arrival: false, seq: 0, direction: Direction::Leftward, from: l + 1, to: l, stream: None });
        }
    }
    // inbound stream per ES from its left and right neighbour
    let mut from_left: Vec<Option<RelayStream>> = vec![None; n];
    let mut from_right: Vec<Option<RelayStream>> = vec![None; n];
    let mut t_agg: Vec<f64> = (0..n).map(|l| timings.ready(l)).collect();
    while let Some(mut ev) = heap.pop() {
        if !ev.arrival {
            let mut stream = RelayStream::from_cell(ev.from, n, inputs.intra[ev.from].clone(), inputs.intra_volume[ev.from]);
            if plan.forwarding == Forwarding::Aggregate {
                let inbox = match ev.direction {
                    Direction::Rightward => &from_left[ev.from],
                    Direction::Leftward => &from_right[ev.from],
                };
                if let Some(prev) = inbox {
                    stream.absorb(prev)?;
                }
            }
            let region = ev.from.min(ev.to);
            if region < inputs.roc_models.len() {
                stream = roc_relay_merge(&stream, &inputs.roc_models[region], inputs.roc_volume[region], region)?;
            }
            events.push(TraceEvent::Depart { time: ev.time, from: ev.from, to: ev.to, origins: indices(&stream.origins) });
            let t_com = match ev.direction {
                Direction::Rightward => timings.t_com_right[region],
                Direction::Leftward => timings.t_com_left[region],
            };
            ev.time += t_com;
            ev.arrival = true;
            ev.stream = Some(stream);
            push(&mut heap, ev);
        } else {
            let accepted = ev.time <= timings.t_max;
            events.push(TraceEvent::Arrive { time: ev.time, from: ev.from, to: ev.to, accepted });
            if accepted {
                t_agg[ev.to] = t_agg[ev.to].max(ev.time);
                let slot = match ev.direction {
                    Direction::Rightward => &mut from_left[ev.to],
                    Direction::Leftward => &mut from_right[ev.to],
                };
                *slot = ev.stream;
            }
        }
    }
    let mut realized = ParticipationMatrix::identity(n);
    let mut models = Vec::with_capacity(n);
    for l in 0..n {
        let mut state = CellState { intra: inputs.intra[l].clone(), intra_volume: inputs.intra_volume[l], bundles: Vec::new() };
        let mut origins = vec![false; n];
        origins[l] = true;
        for s in [&from_left[l], &from_right[l]].into_iter().flatten() {
            state.bundles.push((s.model.clone(), s.volume));
            for (j, &b) in s.origins.iter().enumerate() {
                if b {
                    realized.set(j, l, true);
                    origins[j] = true;
                }
            }
        }
        events.push(TraceEvent::Aggregate { time: t_agg[l], cell: l, origins: indices(&origins) });
        models.push(es_final_aggregate(&state));
    }
    if &realized != predicted {
        return Err(Error::TraceMismatch { round });
    }
    let wall_time = t_agg.iter().copied().fold(0.0, f64::max);
    Ok((models, RoundTrace { round, t_agg, wall_time, participation: realized, events }))
}

/// Current models of every ES.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlState {
    pub round: usize,
    pub es_models: Vec<ModelVector>,
    /// Simulated time spent so far.
    pub wall_clock: f64,
}

impl FlState {
    pub fn new(initial: ModelVector, num_cells: usize) -> Self {
        Self { round: 0, es_models: vec![initial; num_cells], wall_clock: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub state: FlState,
    pub trace: RoundTrace,
    pub inputs: RoundInputs,
}

/// One full round: local training and upload, intra aggregation, relays
/// and final aggregation.
pub fn run_round(
    ctx: &RoundContext<'_>,
    topology: &Topology,
    state: &FlState,
    plan: &SchedulePlan,
    predicted: &ParticipationMatrix,
    timings: &RoundTimings,
) -> Result<RoundOutcome> {
    let inputs = local_stage(ctx, topology, &state.es_models, state.round)?;
    let (models, trace) = relay_and_aggregate(state.round, &inputs, plan, predicted, timings)?;
    let next = FlState { round: state.round + 1, es_models: models, wall_clock: state.wall_clock + trace.wall_time };
    Ok(RoundOutcome { state: next, trace, inputs })
}

/// Every ES model rebuilt directly as `Σ_j p N̂_j ŵ_j / Σ_j p N̂_j`.
pub fn expand_models(inputs: &RoundInputs, participation: &ParticipationMatrix) -> Vec<ModelVector> {
    let n = inputs.intra.len();
    let volumes = inputs.volumes();
    (0..n)
        .map(|l| {
            let parts: Vec<(ModelVector, f64)> = (0..n)
                .filter(|&j| participation.get(j, l))
                .map(|j| (inputs.cell_model(j, l), volumes.weight(j, l)))
                .collect();
            ModelVector::weighted_mean(parts.iter().map(|(m, v)| (m, *v))).expect("diagonal participates")
        })
        .collect()
}

/// Largest relative distance between pipeline models and their expansion.
pub fn verify_expansion(inputs: &RoundInputs, outputs: &[ModelVector], participation: &ParticipationMatrix) -> f64 {
    expand_models(inputs, participation)
        .iter()
        .zip(outputs)
        .map(|(e, o)| {
            let d = e.distance(o);
            if d == 0.0 { 0.0 } else { d / e.norm().max(f64::MIN_POSITIVE) }
        })
        .fold(0.0, f64::max)
}
