//! The compared schemes, all driven by the same topology, channel draws,
//! initial model and client random streams.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::{
    broadcast_times, client_gain, timings_from_realization, ChannelParams, ChannelRealization, RoundTimings,
};
use crate::error::{Error, Result};
use crate::fl::{local_stage, relay_and_aggregate, FlState, RoundContext, RoundInputs, RoundTrace};
use crate::model::ModelVector;
use crate::scheduler::{derive_participation, solve, CellVolumes, ParticipationMatrix, SchedulePlan, SchedulerConfig};
use crate::topology::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Hfl,
    #[serde(rename = "fedmes")]
    FedMes,
    FlEocd,
    #[serde(rename = "fedoc")]
    FedOc,
    Proposed,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] =
        [BaselineKind::Hfl, BaselineKind::FedMes, BaselineKind::FlEocd, BaselineKind::FedOc, BaselineKind::Proposed];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Hfl => "hfl",
            BaselineKind::FedMes => "fedmes",
            BaselineKind::FlEocd => "fl_eocd",
            BaselineKind::FedOc => "fedoc",
            BaselineKind::Proposed => "proposed",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config("schemes", format!("unknown scheme `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeOptions {
    pub scheduler: SchedulerConfig,
    /// Average all ES models every this many HFL rounds; never when unset.
    pub hfl_cloud_period: Option<usize>,
}

/// Everything one scheme produced in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeRound {
    pub state: FlState,
    pub trace: RoundTrace,
    pub inputs: RoundInputs,
    pub timings: RoundTimings,
    /// Relay plan, for schemes that relay through ES-to-ES links.
    pub plan: Option<SchedulePlan>,
    /// Clients whose updates reach each ES this round.
    pub clients_aggregated: Vec<f64>,
    pub schedule_utility: Option<f64>,
}

/// `Σ_j p^(j,l) |K̂_j|`, counting cell `j`'s uploaders plus the relay
/// client on the side facing `l`.
pub fn clients_reaching(participation: &ParticipationMatrix, topology: &Topology) -> Vec<f64> {
    let n = topology.num_cells();
    let has_roc = |r: usize| r < topology.roc_of.len();
    (0..n)
        .map(|l| {
            (0..n)
                .filter(|&j| participation.get(j, l))
                .map(|j| {
                    let roc = match j.cmp(&l) {
                        std::cmp::Ordering::Less => has_roc(j),
                        std::cmp::Ordering::Greater => has_roc(j - 1),
                        std::cmp::Ordering::Equal => false,
                    };
                    (topology.uploader_sets[j].len() + usize::from(roc)) as f64
                })
                .sum()
        })
        .collect()
}

fn relay_round(
    ctx: &RoundContext<'_>,
    topology: &Topology,
    state: &FlState,
    timings: RoundTimings,
    plan: SchedulePlan,
    participation: ParticipationMatrix,
    utility: Option<f64>,
) -> Result<SchemeRound> {
    let inputs = local_stage(ctx, topology, &state.es_models, state.round)?;
    let (models, trace) = relay_and_aggregate(state.round, &inputs, &plan, &participation, &timings)?;
    let clients_aggregated = clients_reaching(&trace.participation, topology);
    let next = FlState { round: state.round + 1, es_models: models, wall_clock: state.wall_clock + trace.wall_time };
    Ok(SchemeRound { state: next, trace, inputs, timings, plan: Some(plan), clients_aggregated, schedule_utility: utility })
}

/// Scheduled multi-hop relaying.
pub fn proposed_round(
    ctx: &RoundContext<'_>,
    topology: &Topology,
    state: &FlState,
    timings: &RoundTimings,
    cfg: &SchedulerConfig,
) -> Result<SchemeRound> {
    let schedule = solve(timings, &CellVolumes::from_topology(topology), cfg)?;
    let mut t = timings.clone();
    t.t_max = schedule.plan.t_max;
    relay_round(ctx, topology, state, t, schedule.plan, schedule.participation, Some(schedule.utility))
}

/// Every ES forwards its own intra model one hop as soon as it is ready.
pub fn fedoc_round(ctx: &RoundContext<'_>, topology: &Topology, state: &FlState, timings: &RoundTimings) -> Result<SchemeRound> {
    let plan = SchedulePlan::immediate_one_hop(timings);
    let participation = derive_participation(&plan, timings);
    let utility = crate::scheduler::aggregate_utility(&participation, &CellVolumes::from_topology(topology));
    relay_round(ctx, topology, state, timings.clone(), plan, participation, Some(utility))
}

/// Intra-cell aggregation only, on a topology without relay clients.
pub fn hfl_round(
    ctx: &RoundContext<'_>,
    topology: &Topology,
    state: &FlState,
    timings: &RoundTimings,
    cloud_period: Option<usize>,
) -> Result<SchemeRound> {
    let plan = SchedulePlan::identity(timings);
    let n = topology.num_cells();
    let mut out = relay_round(ctx, topology, state, timings.clone(), plan, ParticipationMatrix::identity(n), None)?;
    if let Some(period) = cloud_period.filter(|&p| p > 0) {
        if out.state.round % period == 0 {
            let parts = out.state.es_models.iter().zip(&out.inputs.intra_volume).map(|(m, &v)| (m, v));
            let global = ModelVector::weighted_mean(parts).expect("cells have data");
            out.state.es_models = vec![global; n];
        }
    }
    Ok(out)
}

/// Timings when overlapping clients download every covering ES model and
/// upload to each covering ES in turn, home cell first.
pub fn multi_upload_timings(
    topology: &Topology,
    params: &ChannelParams,
    epochs: usize,
    realization: &ChannelRealization,
    relay_times: &RoundTimings,
) -> Result<RoundTimings> {
    let n = topology.num_cells();
    let t_cast = broadcast_times(topology, params, realization)?;
    let uploaders: Vec<usize> = (0..n).map(|l| topology.covered_clients(l).count()).collect();
    let mut ready = t_cast.clone();
    for c in &topology.clients {
        let mut order = vec![c.home_cell];
        order.extend(c.covering_cells.iter().copied().filter(|&x| x != c.home_cell));
        let mut t = order.iter().map(|&x| t_cast[x]).fold(0.0, f64::max) + epochs as f64 * c.epoch_time;
        for &cell in &order {
            let g = client_gain(topology, params, c.id, cell, realization.client_up[c.id])?;
            t += params.model_size / params.uplink_rate(g, uploaders[cell]);
            ready[cell] = ready[cell].max(t);
        }
    }
    let t_comp: Vec<f64> = ready.iter().zip(&t_cast).map(|(r, c)| r - c).collect();
    let t_max = ready.iter().copied().fold(0.0, f64::max);
    Ok(RoundTimings {
        t_cast,
        t_comp,
        t_com_right: relay_times.t_com_right.clone(),
        t_com_left: relay_times.t_com_left.clone(),
        t_max,
    })
}

/// Per-client cache of the ES models received one round earlier.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EocdCache {
    pub entries: Vec<Option<Vec<(ModelVector, f64)>>>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum OcUpload {
    LocalOnly,
    WithCache,
}

fn multi_es_round(
    ctx: &RoundContext<'_>,
    topology: &Topology,
    state: &FlState,
    timings: &RoundTimings,
    mode: OcUpload,
    cache: &mut EocdCache,
) -> Result<SchemeRound> {
    use rayon::prelude::*;
    let n = topology.num_cells();
    let cell_volume: Vec<f64> = (0..n).map(|l| topology.covered_clients(l).map(|c| c.data_volume as f64).sum()).collect();
    let start_of = |k: usize| -> ModelVector {
        let c = &topology.clients[k];
        let models = c.covering_cells.iter().map(|&x| (&state.es_models[x], 1.0));
        ModelVector::weighted_mean(models).expect("client is covered")
    };
    let trained: Vec<ModelVector> = topology
        .clients
        .par_iter()
        .map(|c| ctx.train(state.round, c, &start_of(c.id)))
        .collect::<Result<_>>()?;
    cache.entries.resize(topology.num_clients(), None);
    let mut uploads = trained;
    for c in topology.clients.iter().filter(|c| c.covering_cells.len() > 1) {
        if mode == OcUpload::WithCache {
            if let Some(cached) = &cache.entries[c.id] {
                let parts = std::iter::once((&uploads[c.id], c.data_volume as f64)).chain(cached.iter().map(|(m, v)| (m, *v)));
                uploads[c.id] = ModelVector::weighted_mean(parts).expect("positive volumes");
            }
            cache.entries[c.id] = Some(c.covering_cells.iter().map(|&x| (state.es_models[x].clone(), cell_volume[x])).collect());
        }
    }
    let mut intra = Vec::with_capacity(n);
    let mut intra_volume = Vec::with_capacity(n);
    let mut counts = Vec::with_capacity(n);
    for l in 0..n {
        let parts: Vec<(&ModelVector, f64)> =
            topology.covered_clients(l).map(|c| (&uploads[c.id], c.data_volume as f64)).collect();
        let (m, v) = crate::fl::intra_cell_aggregate(l, &parts)?;
        counts.push(parts.len() as f64);
        intra.push(m);
        intra_volume.push(v);
    }
    let inputs = RoundInputs { intra: intra.clone(), intra_volume, roc_models: Vec::new(), roc_volume: Vec::new() };
    let plan = SchedulePlan::identity(timings);
    let (models, trace) = relay_and_aggregate(state.round, &inputs, &plan, &ParticipationMatrix::identity(n), timings)?;
    let next = FlState { round: state.round + 1, es_models: models, wall_clock: state.wall_clock + trace.wall_time };
    Ok(SchemeRound { state: next, trace, inputs, timings: timings.clone(), plan: None, clients_aggregated: counts, schedule_utility: None })
}

/// Overlapping clients train on the plain average of their ES models and
/// upload to every covering ES.
pub fn fedmes_round(ctx: &RoundContext<'_>, topology: &Topology, state: &FlState, timings: &RoundTimings) -> Result<SchemeRound> {
    multi_es_round(ctx, topology, state, timings, OcUpload::LocalOnly, &mut EocdCache::default())
}

/// As [`fedmes_round`], but each overlapping client uploads its update
/// combined by volume with the ES models it cached a round earlier.
pub fn fl_eocd_round(
    ctx: &RoundContext<'_>,
    topology: &Topology,
    state: &FlState,
    timings: &RoundTimings,
    cache: &mut EocdCache,
) -> Result<SchemeRound> {
    multi_es_round(ctx, topology, state, timings, OcUpload::WithCache, cache)
}

/// Drives one scheme round after round.
pub struct SchemeRunner<'a> {
    pub kind: BaselineKind,
    ctx: RoundContext<'a>,
    params: &'a ChannelParams,
    options: SchemeOptions,
    /// Topology with relay clients.
    relay_topology: &'a Topology,
    /// Topology every relay client treated as an ordinary uploader.
    plain_topology: Topology,
    pub state: FlState,
    cache: EocdCache,
}

impl<'a> SchemeRunner<'a> {
    pub fn new(
        kind: BaselineKind,
        ctx: RoundContext<'a>,
        topology: &'a Topology,
        params: &'a ChannelParams,
        options: SchemeOptions,
    ) -> Self {
        let state = FlState::new(ctx.task.initial_model(), topology.num_cells());
        Self { kind, ctx, params, options, relay_topology: topology, plain_topology: topology.without_relays(), state, cache: EocdCache::default() }
    }

    /// The topology whose uploader sets this scheme uses.
    pub fn topology(&self) -> &Topology {
        match self.kind {
            BaselineKind::Proposed | BaselineKind::FedOc => self.relay_topology,
            _ => &self.plain_topology,
        }
    }

    pub fn step(&mut self) -> Result<SchemeRound> {
        let round = self.state.round;
        let mut rng = self.ctx.seeds.stream("channel", &[round as u64]);
        let topo = self.relay_topology;
        let real = ChannelRealization::draw(topo.num_clients(), topo.layout.overlap_regions.len(), self.params, &mut rng);
        let epochs = self.ctx.training.local_steps;
        let relay_timings = timings_from_realization(topo, self.params, epochs, &real)?;
        let out = match self.kind {
            BaselineKind::Proposed => proposed_round(&self.ctx, topo, &self.state, &relay_timings, &self.options.scheduler)?,
            BaselineKind::FedOc => fedoc_round(&self.ctx, topo, &self.state, &relay_timings)?,
            BaselineKind::Hfl => {
                let mut t = timings_from_realization(&self.plain_topology, self.params, epochs, &real)?;
                t.t_com_right = relay_timings.t_com_right.clone();
                t.t_com_left = relay_timings.t_com_left.clone();
                t.t_max = (0..t.num_cells()).map(|l| t.ready(l)).fold(0.0, f64::max);
                hfl_round(&self.ctx, &self.plain_topology, &self.state, &t, self.options.hfl_cloud_period)?
            }
            BaselineKind::FedMes | BaselineKind::FlEocd => {
                let t = multi_upload_timings(&self.plain_topology, self.params, epochs, &real, &relay_timings)?;
                if self.kind == BaselineKind::FedMes {
                    fedmes_round(&self.ctx, &self.plain_topology, &self.state, &t)?
                } else {
                    fl_eocd_round(&self.ctx, &self.plain_topology, &self.state, &t, &mut self.cache)?
                }
            }
        };
        self.state = out.state.clone();
        Ok(out)
    }
}
