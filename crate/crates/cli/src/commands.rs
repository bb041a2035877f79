use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use dynaprop::io::{self, FilterChoice, RunConfig};
use dynaprop::oracle::{default_tail_tol, dense_propagation, verify_error_bound};
use dynaprop::{
    concat_filters, delta_sequence, export_timeline, import_timeline, run_timeline, run_timeline_observed,
    CheckpointPolicy, EmbeddingTimeline, EventBatch, ExportFormat, FeatureStore, FilterSchedule, Matrix,
    Precision, RunReport, Snapshot, Stream, UpdateMode, WeightedDynamicGraph,
};

use super::{
    Command, DiffArgs, ExportArgs, FilterArg, FilterArgs, FormatArg, GraphInput, ModeArgs, PropagateArgs,
    StreamArgs, TimelineInput, VerifyArgs,
};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_BUDGET: u8 = 3;

#[derive(Debug)]
struct VerifyFailed(String);

impl std::fmt::Display for VerifyFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "verification failed: {}", self.0)
    }
}

impl std::error::Error for VerifyFailed {}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<dynaprop::Error>() {
        Some(dynaprop::Error::Config(_) | dynaprop::Error::InvalidSchedule(_)) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

pub fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Propagate(a) => propagate(a),
        Command::Stream(a) => stream(a),
        Command::Verify(a) => verify(a),
        Command::Export(a) => export(a),
        Command::Diff(a) => diff(a),
    }
}

fn run_config(filter: &FilterArgs, mode: UpdateMode, stride: usize) -> Result<RunConfig> {
    let config = RunConfig {
        alpha: filter.alpha,
        beta: filter.beta,
        r_max: filter.rmax,
        filter: match filter.filter {
            FilterArg::Ppr => FilterChoice::Ppr,
            FilterArg::Highpass => FilterChoice::Highpass,
            FilterArg::Both => FilterChoice::Both,
        },
        mode,
        stride,
        workers: filter.workers,
        budget: filter.budget,
    };
    Ok(config.validate()?)
}

fn mode_of(m: &ModeArgs) -> UpdateMode {
    if m.eager {
        UpdateMode::Eager
    } else if m.lazy {
        UpdateMode::Lazy
    } else {
        UpdateMode::Batch
    }
}

fn export_format(f: FormatArg) -> ExportFormat {
    match f {
        FormatArg::Bin => ExportFormat::Binary(Precision::F64),
        FormatArg::Bin32 => ExportFormat::Binary(Precision::F32),
        FormatArg::Tsv => ExportFormat::Tsv,
    }
}

enum Evolution {
    Static,
    Events(Vec<EventBatch>),
    Snapshots(Vec<(i64, Snapshot)>),
}

impl Evolution {
    fn stream(&self) -> Stream<'_> {
        match self {
            Evolution::Static => Stream::Events(&[]),
            Evolution::Events(b) => Stream::Events(b),
            Evolution::Snapshots(s) => Stream::Snapshots(s),
        }
    }

    fn node_span(&self) -> usize {
        match self {
            Evolution::Static => 0,
            Evolution::Events(b) => io::node_span(b),
            Evolution::Snapshots(s) => s.iter().map(|(_, s)| s.node_count()).max().unwrap_or(0),
        }
    }
}

struct Loaded {
    graph: WeightedDynamicGraph,
    features: FeatureStore,
    evolution: Evolution,
}

fn read_events(path: &Path) -> Result<Vec<EventBatch>> {
    if path == Path::new("-") {
        let mut text = String::new();
        std::io::stdin().read_to_string(&mut text)?;
        Ok(io::parse_event_str(&text, Path::new("<stdin>"))?)
    } else {
        io::parse_event_stream(path).with_context(|| format!("reading events from {}", path.display()))
    }
}

fn load(graph: &GraphInput, events: Option<&Path>, snapshots: Option<&Path>) -> Result<Loaded> {
    let g = match &graph.graph {
        Some(p) => io::read_graph(p).with_context(|| format!("reading graph {}", p.display()))?,
        None => WeightedDynamicGraph::new(0),
    };
    let evolution = match (events, snapshots) {
        (Some(p), _) => Evolution::Events(io::register_new_nodes(&read_events(p)?, g.node_count())),
        (None, Some(dir)) => Evolution::Snapshots(
            io::parse_snapshots(dir).with_context(|| format!("reading snapshots from {}", dir.display()))?,
        ),
        (None, None) => Evolution::Static,
    };
    let features = match &graph.features {
        Some(p) => io::read_features(p).with_context(|| format!("reading features {}", p.display()))?,
        None => FeatureStore::random(g.node_count().max(evolution.node_span()), graph.dim, graph.seed),
    };
    Ok(Loaded {
        graph: g,
        features,
        evolution,
    })
}

fn load_timeline_input(input: &TimelineInput) -> Result<Loaded> {
    load(&input.graph, input.events.as_deref(), input.snapshots.as_deref())
}

fn summary(schedule: &FilterSchedule, timeline: &EmbeddingTimeline, report: &RunReport) -> String {
    let mut line = format!(
        "{}: {} checkpoints, {} nodes, {} columns, {} events, {} pushes",
        schedule.kind().as_str(),
        timeline.len(),
        timeline.node_count(),
        timeline.dim(),
        report.events,
        report.total_pushes()
    );
    if report.budget_exhausted() {
        line.push_str(&format!(
            ", push budget exhausted in columns {:?}",
            report.exhausted_columns()
        ));
    }
    line
}

fn write_outputs(out: &Path, timelines: &[EmbeddingTimeline], format: ExportFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = Vec::new();
    let mut emit = |t: &EmbeddingTimeline| -> Result<()> {
        let path = out.join(format!("{}.{}", t.kind().as_str(), format.extension()));
        export_timeline(t, &path, format).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
        Ok(())
    };
    for t in timelines {
        emit(t)?;
    }
    if timelines.len() > 1 {
        emit(&concat_filters(timelines)?)?;
    }
    Ok(written)
}

fn finish(exhausted: bool) -> ExitCode {
    if exhausted {
        eprintln!("warning: push budget exhausted; affected checkpoints are not converged");
        ExitCode::from(EXIT_BUDGET)
    } else {
        ExitCode::SUCCESS
    }
}

fn propagate(a: PropagateArgs) -> Result<ExitCode> {
    let config = run_config(&a.filter, mode_of(&a.mode), a.mode.stride)?;
    let loaded = load_timeline_input(&a.input)?;
    let mut timelines = Vec::new();
    let mut exhausted = false;
    for schedule in config.schedules()? {
        let run = run_timeline(
            &loaded.graph,
            &loaded.features,
            loaded.evolution.stream(),
            &schedule,
            &config.engine(),
        )?;
        println!("{}", summary(&schedule, &run.timeline, &run.report));
        exhausted |= run.report.budget_exhausted();
        timelines.push(run.timeline);
    }
    for path in write_outputs(&a.out, &timelines, export_format(a.format))? {
        println!("wrote {}", path.display());
    }
    Ok(finish(exhausted))
}

fn stream(a: StreamArgs) -> Result<ExitCode> {
    let mode = if a.eager { UpdateMode::Eager } else { UpdateMode::Lazy };
    let mut config = run_config(&a.filter, mode, 1)?;
    let loaded = load(&a.graph, Some(&a.events), None)?;
    let steps = loaded.evolution.stream().len();
    let policy = CheckpointPolicy::spread(steps, a.checkpoints);
    config.stride = policy.stride_len();
    let mut timelines = Vec::new();
    let mut exhausted = false;
    for schedule in config.schedules()? {
        let start = Instant::now();
        let run = run_timeline_observed(
            &loaded.graph,
            &loaded.features,
            loaded.evolution.stream(),
            &schedule,
            &config.engine(),
            |cp, graph| {
                println!(
                    "{} t={} nodes={} edges={} elapsed={:.3}s",
                    schedule.kind().as_str(),
                    cp.time,
                    graph.node_count(),
                    graph.edge_count(),
                    start.elapsed().as_secs_f64()
                )
            },
        )?;
        let secs = start.elapsed().as_secs_f64();
        println!(
            "{}, {:.3}s, {:.0} events/s",
            summary(&schedule, &run.timeline, &run.report),
            secs,
            run.report.events as f64 / secs.max(1e-9)
        );
        exhausted |= run.report.budget_exhausted();
        timelines.push(run.timeline);
    }
    if let Some(out) = &a.out {
        for path in write_outputs(out, &timelines, export_format(a.format))? {
            println!("wrote {}", path.display());
        }
    }
    Ok(finish(exhausted))
}

/// Largest `|a - b| / (scale·bound(d_i))`; a zero bound only tolerates an
/// exact match.
fn bound_ratio(a: &Matrix, b: &Matrix, degrees: &[f64], schedule: &FilterSchedule, scale: f64) -> f64 {
    let mut worst = 0.0f64;
    for (i, &d) in degrees.iter().enumerate() {
        let bound = scale * schedule.error_bound(d);
        for (x, y) in a.row(i).iter().zip(b.row(i)) {
            let err = (x - y).abs();
            if err > 0.0 {
                worst = worst.max(if bound > 0.0 { err / bound } else { f64::INFINITY });
            }
        }
    }
    worst
}

fn verify(a: VerifyArgs) -> Result<ExitCode> {
    let config = run_config(&a.filter, mode_of(&a.mode), a.mode.stride)?;
    let loaded = load_timeline_input(&a.input)?;
    let mut failures = Vec::new();
    let mut exhausted = false;
    for schedule in config.schedules()? {
        let mut seen = Vec::new();
        let run = run_timeline_observed(
            &loaded.graph,
            &loaded.features,
            loaded.evolution.stream(),
            &schedule,
            &config.engine(),
            |cp, graph| seen.push((cp.time, graph.clone(), cp.embedding.clone())),
        )?;
        exhausted |= run.report.budget_exhausted();
        let name = schedule.kind().as_str();
        for (time, graph, z) in &seen {
            let ratio = if a.against_oracle {
                let x = loaded.features.to_matrix().resized(graph.node_count());
                let exact = dense_propagation(graph, &schedule, &x, default_tail_tol(&schedule))?;
                verify_error_bound(z, &exact, graph.degrees(), &schedule)?.max_violation_ratio
            } else {
                let scratch = run_timeline(graph, &loaded.features, Stream::Events(&[]), &schedule, &config.engine())?;
                bound_ratio(z, &scratch.timeline.checkpoints()[0].embedding, graph.degrees(), &schedule, 2.0)
            };
            let ok = ratio <= 1.0;
            println!(
                "{} {name} t={time}: max error/{}bound {ratio:.3e}",
                if ok { "ok" } else { "FAIL" },
                if a.against_oracle { "" } else { "2x " }
            );
            if !ok {
                failures.push(format!("{name} t={time}"));
            }
        }
    }
    if exhausted {
        return Ok(finish(true));
    }
    if !failures.is_empty() {
        return Err(VerifyFailed(failures.join(", ")).into());
    }
    println!("all checkpoints within bound");
    Ok(ExitCode::SUCCESS)
}

fn export(a: ExportArgs) -> Result<ExitCode> {
    let timeline = import_timeline(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let out = if a.deltas {
        delta_sequence(&timeline)?.to_timeline(&timeline)?
    } else {
        timeline
    };
    export_timeline(&out, &a.out, export_format(a.format)).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "wrote {} ({} checkpoints, {} nodes, {} columns)",
        a.out.display(),
        out.len(),
        out.node_count(),
        out.dim()
    );
    Ok(ExitCode::SUCCESS)
}

fn diff(a: DiffArgs) -> Result<ExitCode> {
    let from = io::parse_snapshot(&a.from).with_context(|| format!("reading {}", a.from.display()))?;
    let to = io::parse_snapshot(&a.to).with_context(|| format!("reading {}", a.to.display()))?;
    let d = WeightedDynamicGraph::from_snapshot(&from).diff_snapshot(&to);
    for (&(u, v), c) in d.edge_changes() {
        println!("edge {u} {v} {} -> {}", c.before, c.after);
    }
    for c in d.nodes() {
        println!("node {} degree {} -> {}", c.node, c.degree_before, c.degree_after);
    }
    println!(
        "{} edge changes, {} affected nodes, {} -> {} nodes",
        d.edge_changes().len(),
        d.nodes().len(),
        d.node_count_before(),
        d.node_count_after()
    );
    Ok(ExitCode::SUCCESS)
}
