//! Timeline driver: replays an event stream or snapshot list, keeps one
//! [`PropagationState`] per feature column, and records embedding
//! checkpoints.
//!
//! Columns are independent, so each phase fans out over columns on a rayon
//! pool while the graph is only read. Graph mutation happens between phases
//! on the calling thread.

use rayon::prelude::*;

use crate::diff::{Snapshot, SnapshotDiff};
use crate::error::{Error, Result};
use crate::features::FeatureStore;
use crate::graph::{GraphEvent, NodeId, WeightedDynamicGraph};
use crate::incremental::restore_invariant;
use crate::matrix::Matrix;
use crate::push::{ConvergenceReport, FrontierOrder, PropagationState, DEFAULT_WORK_BUDGET};
use crate::schedule::{FilterKind, FilterSchedule};

/// How graph changes reach the propagation states.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum UpdateMode {
    /// One net diff per timestamp, pushed to convergence each time.
    #[default]
    Batch,
    /// One diff per event, pushed to convergence after every event.
    Eager,
    /// One diff per event; only the relation is restored, and pushing waits
    /// for the next checkpoint.
    Lazy,
}

/// Which steps produce a checkpoint. The last step always does.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckpointPolicy {
    stride: usize,
}

impl Default for CheckpointPolicy {
    fn default() -> Self {
        CheckpointPolicy { stride: 1 }
    }
}

impl CheckpointPolicy {
    pub fn every_step() -> Self {
        CheckpointPolicy::default()
    }

    /// Checkpoint after every `k`-th step.
    pub fn stride(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config(vec!["checkpoint stride must be at least 1".into()]));
        }
        Ok(CheckpointPolicy { stride: k })
    }

    /// Stride giving at most `checkpoints` checkpoints over `steps` steps.
    pub fn spread(steps: usize, checkpoints: usize) -> Self {
        CheckpointPolicy {
            stride: steps.div_ceil(checkpoints.max(1)).max(1),
        }
    }

    pub fn stride_len(&self) -> usize {
        self.stride
    }

    /// `step` counts from 1.
    pub fn is_checkpoint(&self, step: usize, total: usize) -> bool {
        step.is_multiple_of(self.stride) || step == total
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EngineConfig {
    pub mode: UpdateMode,
    pub policy: CheckpointPolicy,
    /// Push cap per column per convergence call.
    pub budget: u64,
    /// Column workers; `None` uses the global rayon pool.
    pub workers: Option<usize>,
    pub order: FrontierOrder,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            mode: UpdateMode::Batch,
            policy: CheckpointPolicy::default(),
            budget: DEFAULT_WORK_BUDGET,
            workers: None,
            order: FrontierOrder::Fifo,
        }
    }
}

/// Events sharing one timestamp, in arrival order.
#[derive(Clone, Debug, PartialEq)]
pub struct EventBatch {
    pub time: i64,
    pub events: Vec<GraphEvent>,
}

/// Groups a time-ordered event list into batches of equal timestamp.
pub fn group_events<I>(events: I) -> Result<Vec<EventBatch>>
where
    I: IntoIterator<Item = GraphEvent>,
{
    let mut batches: Vec<EventBatch> = Vec::new();
    for event in events {
        match batches.last_mut() {
            Some(b) if b.time == event.time => b.events.push(event),
            Some(b) if b.time > event.time => {
                return Err(Error::TimeRegression {
                    prev: b.time,
                    next: event.time,
                })
            }
            _ => batches.push(EventBatch {
                time: event.time,
                events: vec![event],
            }),
        }
    }
    Ok(batches)
}

/// Graph evolution fed to [`run_timeline`].
#[derive(Clone, Copy, Debug)]
pub enum Stream<'a> {
    /// Continuous-time: event batches with strictly increasing times.
    Events(&'a [EventBatch]),
    /// Discrete-time: full graph states with strictly increasing times.
    Snapshots(&'a [(i64, Snapshot)]),
}

impl Stream<'_> {
    pub fn len(&self) -> usize {
        match self {
            Stream::Events(b) => b.len(),
            Stream::Snapshots(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn time(&self, step: usize) -> i64 {
        match self {
            Stream::Events(b) => b[step].time,
            Stream::Snapshots(s) => s[step].0,
        }
    }

    /// Time of the checkpoint taken before the first step.
    pub fn initial_time(&self) -> i64 {
        if self.is_empty() || self.time(0) > 0 {
            0
        } else {
            self.time(0) - 1
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub time: i64,
    /// `n_t × d`, one row per node registered at `time`.
    pub embedding: Matrix,
}

/// One filter's share of the embedding columns.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleTag {
    pub schedule: FilterSchedule,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTimeline {
    checkpoints: Vec<Checkpoint>,
    tags: Vec<ScheduleTag>,
    feature_seed: Option<u64>,
}

impl EmbeddingTimeline {
    pub fn new(tags: Vec<ScheduleTag>, feature_seed: Option<u64>) -> Self {
        EmbeddingTimeline {
            checkpoints: Vec::new(),
            tags,
            feature_seed,
        }
    }

    /// Appends a checkpoint; times must increase and widths must match.
    pub fn push(&mut self, time: i64, embedding: Matrix) -> Result<()> {
        if let Some(last) = self.checkpoints.last() {
            if time <= last.time {
                return Err(Error::TimeRegression {
                    prev: last.time,
                    next: time,
                });
            }
        }
        if embedding.cols() != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                actual: embedding.cols(),
            });
        }
        self.checkpoints.push(Checkpoint { time, embedding });
        Ok(())
    }

    pub fn checkpoints(&self) -> &[Checkpoint] {
        &self.checkpoints
    }

    pub fn times(&self) -> Vec<i64> {
        self.checkpoints.iter().map(|c| c.time).collect()
    }

    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }

    pub fn last(&self) -> Option<&Checkpoint> {
        self.checkpoints.last()
    }

    pub fn dim(&self) -> usize {
        self.tags.iter().map(|t| t.width).sum()
    }

    /// Row count of the widest checkpoint.
    pub fn node_count(&self) -> usize {
        self.checkpoints.iter().map(|c| c.embedding.rows()).max().unwrap_or(0)
    }

    pub fn tags(&self) -> &[ScheduleTag] {
        &self.tags
    }

    pub fn kind(&self) -> FilterKind {
        match self.tags.as_slice() {
            [one] => one.schedule.kind(),
            _ => FilterKind::Concat,
        }
    }

    pub fn feature_seed(&self) -> Option<u64> {
        self.feature_seed
    }

    /// Checkpoint `k` padded with zero rows for nodes born later.
    pub fn aligned(&self, k: usize) -> Matrix {
        self.checkpoints[k].embedding.resized(self.node_count())
    }
}

/// First-order differences `δ_t = Ẑ_t − Ẑ_{t-1}`, rows of nodes absent at
/// `t-1` taken against zero.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaSequence {
    times: Vec<i64>,
    deltas: Vec<Matrix>,
}

impl DeltaSequence {
    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    /// Time of the later checkpoint of each difference.
    pub fn times(&self) -> &[i64] {
        &self.times
    }

    pub fn delta(&self, k: usize) -> &Matrix {
        &self.deltas[k]
    }

    pub fn deltas(&self) -> &[Matrix] {
        &self.deltas
    }

    /// The deltas packed as a timeline with `source`'s filter tags, so they
    /// can be written with the embedding file formats.
    pub fn to_timeline(&self, source: &EmbeddingTimeline) -> Result<EmbeddingTimeline> {
        let mut out = EmbeddingTimeline::new(source.tags().to_vec(), source.feature_seed());
        for (&t, m) in self.times.iter().zip(&self.deltas) {
            out.push(t, m.clone())?;
        }
        Ok(out)
    }

    /// History of one node, zero before its birth.
    pub fn node(&self, i: usize) -> Vec<Vec<f64>> {
        self.deltas
            .iter()
            .map(|m| {
                if i < m.rows() {
                    m.row(i).to_vec()
                } else {
                    vec![0.0; m.cols()]
                }
            })
            .collect()
    }
}

pub fn delta_sequence(timeline: &EmbeddingTimeline) -> Result<DeltaSequence> {
    let cps = timeline.checkpoints();
    if cps.len() < 2 {
        return Err(Error::Timeline(format!(
            "delta sequence needs at least 2 checkpoints, got {}",
            cps.len()
        )));
    }
    let mut times = Vec::with_capacity(cps.len() - 1);
    let mut deltas = Vec::with_capacity(cps.len() - 1);
    for pair in cps.windows(2) {
        let (prev, next) = (&pair[0].embedding, &pair[1].embedding);
        let rows = next.rows().max(prev.rows());
        let prev = prev.resized(rows);
        let next = next.resized(rows);
        let data = next
            .as_slice()
            .iter()
            .zip(prev.as_slice())
            .map(|(a, b)| a - b)
            .collect();
        times.push(pair[1].time);
        deltas.push(Matrix::from_row_major(rows, next.cols(), data));
    }
    Ok(DeltaSequence { times, deltas })
}

/// Column-wise concatenation of timelines sharing times and node sets.
pub fn concat_filters(timelines: &[EmbeddingTimeline]) -> Result<EmbeddingTimeline> {
    let first = timelines
        .first()
        .ok_or_else(|| Error::Timeline("nothing to concatenate".into()))?;
    for (k, t) in timelines.iter().enumerate().skip(1) {
        if t.times() != first.times() {
            return Err(Error::Timeline(format!("timeline {k} has different checkpoint times")));
        }
        for (a, b) in t.checkpoints().iter().zip(first.checkpoints()) {
            if a.embedding.rows() != b.embedding.rows() {
                return Err(Error::Timeline(format!(
                    "timeline {k} has {} nodes at t={}, expected {}",
                    a.embedding.rows(),
                    a.time,
                    b.embedding.rows()
                )));
            }
        }
        if t.feature_seed() != first.feature_seed() {
            return Err(Error::Timeline(format!("timeline {k} used different features")));
        }
    }
    let tags = timelines.iter().flat_map(|t| t.tags().iter().copied()).collect();
    let mut out = EmbeddingTimeline::new(tags, first.feature_seed());
    for (k, cp) in first.checkpoints().iter().enumerate() {
        let mut m = cp.embedding.clone();
        for t in &timelines[1..] {
            m = m.hconcat(&t.checkpoints()[k].embedding);
        }
        out.push(cp.time, m)?;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ColumnReport {
    pub pushes: u64,
    /// Convergence calls that ran out of budget.
    pub exhausted: usize,
    /// Over-threshold nodes left after the last convergence call.
    pub remaining: usize,
}

impl ColumnReport {
    fn record(&mut self, r: ConvergenceReport) {
        self.pushes += r.pushes;
        if !r.converged {
            self.exhausted += 1;
        }
        self.remaining = r.remaining;
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunReport {
    pub columns: Vec<ColumnReport>,
    pub steps: usize,
    pub events: usize,
}

impl RunReport {
    pub fn total_pushes(&self) -> u64 {
        self.columns.iter().map(|c| c.pushes).sum()
    }

    pub fn budget_exhausted(&self) -> bool {
        self.columns.iter().any(|c| c.exhausted > 0)
    }

    /// Columns that hit the budget at least once.
    pub fn exhausted_columns(&self) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&j| self.columns[j].exhausted > 0)
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct TimelineRun {
    pub timeline: EmbeddingTimeline,
    pub report: RunReport,
    /// Graph after the last step.
    pub graph: WeightedDynamicGraph,
}

pub fn run_timeline(
    initial: &WeightedDynamicGraph,
    features: &FeatureStore,
    stream: Stream<'_>,
    schedule: &FilterSchedule,
    config: &EngineConfig,
) -> Result<TimelineRun> {
    run_timeline_observed(initial, features, stream, schedule, config, |_, _| {})
}

/// As [`run_timeline`], calling `observer` with every checkpoint and the
/// graph it was taken on.
pub fn run_timeline_observed<F>(
    initial: &WeightedDynamicGraph,
    features: &FeatureStore,
    stream: Stream<'_>,
    schedule: &FilterSchedule,
    config: &EngineConfig,
    observer: F,
) -> Result<TimelineRun>
where
    F: FnMut(&Checkpoint, &WeightedDynamicGraph) + Send,
{
    match config.workers {
        None => drive(initial, features, stream, schedule, config, observer),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::Config(vec![format!("cannot start {w} workers: {e}")]))?;
            pool.install(|| drive(initial, features, stream, schedule, config, observer))
        }
    }
}

struct Columns<'a> {
    states: Vec<PropagationState>,
    reports: Vec<ColumnReport>,
    features: &'a FeatureStore,
    schedule: &'a FilterSchedule,
    budget: u64,
}

impl Columns<'_> {
    /// Restores every column for `pending` (in order), then optionally
    /// pushes on `graph`.
    fn flush(&mut self, graph: &WeightedDynamicGraph, pending: &[SnapshotDiff], push: bool) -> Result<()> {
        let (features, schedule, budget) = (self.features, self.schedule, self.budget);
        self.states
            .par_iter_mut()
            .zip(self.reports.par_iter_mut())
            .enumerate()
            .try_for_each(|(j, (state, report))| {
                let column = features.column(j);
                for diff in pending {
                    restore_invariant(state, diff, column, schedule)?;
                }
                if push {
                    report.record(state.push_until_converged(graph, schedule, budget));
                }
                Ok(())
            })
    }

    fn readout(&self, graph: &WeightedDynamicGraph) -> Matrix {
        let columns: Vec<Vec<f64>> = self
            .states
            .par_iter()
            .map(|s| s.readout(graph, self.schedule))
            .collect();
        if columns.is_empty() {
            Matrix::zeros(graph.node_count(), 0)
        } else {
            Matrix::from_columns(&columns)
        }
    }
}

fn drive<F>(
    initial: &WeightedDynamicGraph,
    features: &FeatureStore,
    stream: Stream<'_>,
    schedule: &FilterSchedule,
    config: &EngineConfig,
    mut observer: F,
) -> Result<TimelineRun>
where
    F: FnMut(&Checkpoint, &WeightedDynamicGraph),
{
    features.require_rows(initial.node_count())?;
    for step in 1..stream.len() {
        let (prev, next) = (stream.time(step - 1), stream.time(step));
        if next <= prev {
            return Err(Error::TimeRegression { prev, next });
        }
    }
    let mut graph = initial.clone();
    graph.cache_degree_powers(schedule.beta());

    let states = features
        .columns()
        .par_iter()
        .map(|c| Ok(PropagationState::init(&graph, schedule, c)?.with_order(config.order)))
        .collect::<Result<Vec<_>>>()?;
    let mut cols = Columns {
        reports: vec![ColumnReport::default(); states.len()],
        states,
        features,
        schedule,
        budget: config.budget,
    };
    cols.flush(&graph, &[], true)?;

    let tag = ScheduleTag {
        schedule: *schedule,
        width: features.dim(),
    };
    let mut timeline = EmbeddingTimeline::new(vec![tag], features.seed());
    let mut record = |timeline: &mut EmbeddingTimeline, time: i64, graph: &WeightedDynamicGraph, cols: &Columns| {
        timeline.push(time, cols.readout(graph))?;
        observer(timeline.last().expect("just pushed"), graph);
        Ok::<(), Error>(())
    };
    record(&mut timeline, stream.initial_time(), &graph, &cols)?;

    let mut events = 0usize;
    let mut pending: Vec<SnapshotDiff> = Vec::new();
    let total = stream.len();
    for step in 0..total {
        let mut take = |graph: &WeightedDynamicGraph, diff: SnapshotDiff, cols: &mut Columns| {
            if diff.node_count_after() > features.rows() {
                return Err(Error::MissingFeatureRow {
                    node: NodeId::from_index(features.rows()),
                    rows: features.rows(),
                });
            }
            pending.push(diff);
            if config.mode == UpdateMode::Eager {
                cols.flush(graph, &pending, true)?;
                pending.clear();
            }
            Ok::<(), Error>(())
        };
        match stream {
            Stream::Events(batches) => {
                let batch = &batches[step].events;
                events += batch.len();
                if config.mode == UpdateMode::Batch {
                    let diff = graph.apply_events(batch)?;
                    take(&graph, diff, &mut cols)?;
                } else {
                    for event in batch {
                        let diff = graph.apply_event(event)?;
                        take(&graph, diff, &mut cols)?;
                    }
                }
            }
            Stream::Snapshots(snaps) => {
                let diff = graph.diff_snapshot(&snaps[step].1);
                graph.apply_diff(&diff)?;
                take(&graph, diff, &mut cols)?;
            }
        }
        let checkpoint = config.policy.is_checkpoint(step + 1, total);
        if config.mode == UpdateMode::Batch || (checkpoint && !pending.is_empty()) {
            cols.flush(&graph, &pending, true)?;
            pending.clear();
        }
        if checkpoint {
            record(&mut timeline, stream.time(step), &graph, &cols)?;
        }
    }
    Ok(TimelineRun {
        timeline,
        report: RunReport {
            columns: cols.reports,
            steps: total,
            events,
        },
        graph,
    })
}
