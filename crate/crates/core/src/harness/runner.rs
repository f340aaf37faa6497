use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::baselines::{BaselineKind, SchemeRound, SchemeRunner};
use crate::channel::ChannelParams;
use crate::diagnostics::{
    cell_deviations, centralized_reference_step, reference_cells, reference_distances, table2_metric, ReferenceState,
    NOT_COMPUTED,
};
use crate::error::{Error, Result};
use crate::fl::RoundContext;
use crate::model::ModelVector;
use crate::rng::SeedTree;
use crate::scheduler::ParticipationMatrix;
use crate::tasks::{build_task, evaluate_global_accuracy, evaluate_global_loss, BuiltTask};
use crate::topology::{build_chain_topology, partition_labels, Topology};

/// Everything fixed by the configuration and one seed.
pub struct World {
    pub seeds: SeedTree,
    pub topology: Topology,
    pub task: BuiltTask,
    pub params: ChannelParams,
}

impl World {
    pub fn build(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let seeds = SeedTree::new(seed);
        let mut topology = build_chain_topology(&cfg.topology, &mut seeds.stream("topology", &[]))?;
        let partition = partition_labels(&cfg.partition, &topology, &mut seeds.stream("partition", &[]))?;
        topology.apply_partition(partition);
        let task = build_task(&cfg.task, cfg.partition.num_classes, &mut seeds.stream("task", &[]))?;
        let params = ChannelParams::from_config(&cfg.channel)?;
        Ok(Self { seeds, topology, task, params })
    }
}

/// One JSONL line: the state after a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub scheme: BaselineKind,
    pub seed: u64,
    pub round: usize,
    /// Cumulative simulated time after this round.
    pub wall_clock: f64,
    pub round_time: f64,
    pub t_max: f64,
    pub t_agg: Vec<f64>,
    pub participation: ParticipationMatrix,
    pub loss: Vec<f64>,
    pub loss_mean: f64,
    pub gap: Option<Vec<f64>>,
    pub gap_mean: Option<f64>,
    pub accuracy_mean: Option<f64>,
    #[serde(rename = "F")]
    pub f: Vec<f64>,
    #[serde(rename = "F_mean")]
    pub f_mean: f64,
    #[serde(rename = "A1")]
    pub a1: Vec<f64>,
    #[serde(rename = "A1_mean")]
    pub a1_mean: f64,
    pub avg_clients: f64,
    pub schedule_utility: Option<f64>,
    pub not_computed: Vec<String>,
    pub config_hash: String,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Runs one scheme for every configured round. `observe` sees each round's
/// raw output before it is summarized.
pub fn simulate_with<F>(cfg: &ExperimentConfig, scheme: BaselineKind, seed: u64, mut observe: F) -> Result<Vec<RoundRecord>>
where
    F: FnMut(&SchemeRound),
{
    let world = World::build(cfg, seed)?;
    let task = world.task.as_task();
    let ctx = RoundContext { task, training: &cfg.training, seeds: &world.seeds };
    let optimum = world.task.optimum(&world.topology);
    let optimum_loss = optimum.as_ref().map(|w| evaluate_global_loss(task, w, &world.topology));
    let cells = reference_cells(&world.topology);
    let mut reference = ReferenceState { round: 0, model: task.initial_model() };
    let hash = cfg.hash();
    let mut runner = SchemeRunner::new(scheme, ctx, &world.topology, &world.params, cfg.options);
    let mut records = Vec::with_capacity(cfg.training.rounds);
    for _ in 0..cfg.training.rounds {
        let out = runner.step()?;
        observe(&out);
        reference = centralized_reference_step(&reference, &cells, task, cfg.training.local_steps, &cfg.training.lr);
        let models = &out.state.es_models;
        let loss: Vec<f64> = models.iter().map(|w| evaluate_global_loss(task, w, &world.topology)).collect();
        let gap = optimum_loss.map(|best| loss.iter().map(|l| l - best).collect::<Vec<_>>());
        let accuracy: Option<Vec<f64>> =
            models.iter().map(|w| evaluate_global_accuracy(task, w, &world.topology)).collect();
        let f = cell_deviations(&out.inputs, &out.trace.participation);
        let a1 = reference_distances(models, &reference.model);
        records.push(RoundRecord {
            scheme,
            seed,
            round: out.trace.round,
            wall_clock: out.state.wall_clock,
            round_time: out.trace.wall_time,
            t_max: out.timings.t_max,
            t_agg: out.trace.t_agg.clone(),
            participation: out.trace.participation.clone(),
            loss_mean: mean(&loss),
            loss,
            gap_mean: gap.as_deref().map(mean),
            gap,
            accuracy_mean: accuracy.as_deref().map(mean),
            f_mean: mean(&f),
            f,
            a1_mean: mean(&a1),
            a1,
            avg_clients: mean(&out.clients_aggregated),
            schedule_utility: out.schedule_utility,
            not_computed: NOT_COMPUTED.iter().map(|s| s.to_string()).collect(),
            config_hash: hash.clone(),
        });
    }
    Ok(records)
}

pub fn simulate(cfg: &ExperimentConfig, scheme: BaselineKind, seed: u64) -> Result<Vec<RoundRecord>> {
    simulate_with(cfg, scheme, seed, |_| {})
}

/// Final ES models of one run, for bitwise comparisons.
pub fn final_models(cfg: &ExperimentConfig, scheme: BaselineKind, seed: u64) -> Result<Vec<Vec<ModelVector>>> {
    let mut trajectory = Vec::new();
    simulate_with(cfg, scheme, seed, |r| trajectory.push(r.state.es_models.clone()))?;
    Ok(trajectory)
}

pub fn to_jsonl(records: &[RoundRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or_default()
    ));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: BaselineKind,
    pub seed: u64,
    pub rounds: usize,
    pub wall_clock: f64,
    pub gap_mean: Option<f64>,
    pub loss_mean: f64,
    pub accuracy_mean: Option<f64>,
    pub avg_clients: f64,
    #[serde(rename = "F_mean")]
    pub f_mean: f64,
    #[serde(rename = "A1_mean")]
    pub a1_mean: f64,
    pub config_hash: String,
}

impl SummaryRow {
    pub fn from_records(records: &[RoundRecord]) -> Option<Self> {
        let last = records.last()?;
        Some(Self {
            scheme: last.scheme,
            seed: last.seed,
            rounds: records.len(),
            wall_clock: last.wall_clock,
            gap_mean: last.gap_mean,
            loss_mean: last.loss_mean,
            accuracy_mean: last.accuracy_mean,
            avg_clients: table2_metric(records.iter().map(|r| std::slice::from_ref(&r.avg_clients)))?,
            f_mean: mean(&records.iter().map(|r| r.f_mean).collect::<Vec<_>>()),
            a1_mean: last.a1_mean,
            config_hash: last.config_hash.clone(),
        })
    }
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Domain(format!("csv: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::Domain(format!("csv: {e}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub dir: PathBuf,
    pub traces: Vec<PathBuf>,
    pub summary: PathBuf,
}

pub fn trace_file_name(scheme: BaselineKind, seed: u64) -> String {
    format!("{scheme}_{seed}.jsonl")
}

pub const SUMMARY_FILE: &str = "summary.csv";

/// Every scheme under every seed, in parallel; one JSONL trace per run and
/// a summary table.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let dir = cfg.resolved_output_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let jobs: Vec<(BaselineKind, u64)> =
        cfg.schemes.iter().flat_map(|&s| cfg.seeds.iter().map(move |&seed| (s, seed))).collect();
    let results: Vec<(PathBuf, SummaryRow)> = jobs
        .par_iter()
        .map(|&(scheme, seed)| {
            let records = simulate(cfg, scheme, seed)?;
            let path = dir.join(trace_file_name(scheme, seed));
            write_atomic(&path, to_jsonl(&records).as_bytes())?;
            let row = SummaryRow::from_records(&records).expect("at least one round");
            Ok((path, row))
        })
        .collect::<Result<_>>()?;
    let (traces, rows): (Vec<PathBuf>, Vec<SummaryRow>) = results.into_iter().unzip();
    let summary = dir.join(SUMMARY_FILE);
    write_atomic(&summary, &to_csv(&rows)?)?;
    Ok(ExperimentOutput { dir, traces, summary })
}
