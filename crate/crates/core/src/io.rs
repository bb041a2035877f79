//! Text and binary input formats, plus run configuration.
//!
//! Event stream, one event per line, `#` starts a comment:
//!
//! ```text
//! <t> + <u> <v> [w]     add w (default 1) to edge (u, v)
//! <t> - <u> <v> [w]     remove w from edge (u, v), or all of it
//! <t> +node <u>         register nodes up to u
//! <t> -node <u>         drop every edge of u
//! ```
//!
//! Snapshot / graph file: `<u> <v> [w]` per line, repeated edges accumulate,
//! and an optional `nodes <n>` line fixes the node count.
//!
//! Features: whitespace-separated rows of text, or the binary layout
//! `"DYNFEAT\0"`, version u32, rows u64, cols u64, has_seed u8, seed u64,
//! then rows·cols little-endian f64 row-major.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::diff::Snapshot;
use crate::engine::{group_events, CheckpointPolicy, EngineConfig, EventBatch, UpdateMode};
use crate::error::{Error, Result};
use crate::features::FeatureStore;
use crate::graph::{EventKind, GraphEvent, NodeId, WeightedDynamicGraph};
use crate::matrix::Matrix;
use crate::push::{FrontierOrder, DEFAULT_WORK_BUDGET};
use crate::schedule::{FilterSchedule, DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_R_MAX};

pub const FEATURE_MAGIC: [u8; 8] = *b"DYNFEAT\0";

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn strip_comment(line: &str) -> &str {
    line.split_once('#').map_or(line, |(head, _)| head).trim()
}

fn parse_field<T: FromStr>(raw: Option<&str>, what: &str, path: &Path, line: usize) -> Result<T> {
    let raw = raw.ok_or_else(|| parse_err(path, line, format!("missing {what}")))?;
    raw.parse()
        .map_err(|_| parse_err(path, line, format!("bad {what} {raw:?}")))
}

pub fn parse_event_stream(path: &Path) -> Result<Vec<EventBatch>> {
    parse_event_str(&fs::read_to_string(path)?, path)
}

/// `origin` only labels error messages.
pub fn parse_event_str(text: &str, origin: &Path) -> Result<Vec<EventBatch>> {
    let mut events = Vec::new();
    let mut last: Option<i64> = None;
    for (no, raw) in text.lines().enumerate() {
        let line = no + 1;
        let body = strip_comment(raw);
        if body.is_empty() {
            continue;
        }
        let mut it = body.split_whitespace();
        let time: i64 = parse_field(it.next(), "time", origin, line)?;
        if let Some(prev) = last {
            if time < prev {
                return Err(parse_err(
                    origin,
                    line,
                    Error::TimeRegression { prev, next: time }.to_string(),
                ));
            }
        }
        last = Some(time);
        let op = it.next().ok_or_else(|| parse_err(origin, line, "missing operation"))?;
        let node = |it: &mut std::str::SplitWhitespace, what| -> Result<NodeId> {
            parse_field::<u32>(it.next(), what, origin, line).map(NodeId)
        };
        let kind = match op {
            "+" | "-" => {
                let u = node(&mut it, "source node")?;
                let v = node(&mut it, "target node")?;
                let weight: Option<f64> = it
                    .next()
                    .map(|w| parse_field(Some(w), "weight", origin, line))
                    .transpose()?;
                if let Some(w) = weight {
                    if !(w.is_finite() && w > 0.0) {
                        return Err(parse_err(origin, line, format!("weight must be positive, got {w}")));
                    }
                }
                if u == v {
                    return Err(parse_err(origin, line, format!("self-loop on node {u}")));
                }
                if op == "+" {
                    EventKind::AddEdge {
                        u,
                        v,
                        weight: weight.unwrap_or(1.0),
                    }
                } else {
                    EventKind::DeleteEdge { u, v, weight }
                }
            }
            "+node" => EventKind::AddNode {
                node: node(&mut it, "node")?,
            },
            "-node" => EventKind::DeleteNode {
                node: node(&mut it, "node")?,
            },
            other => return Err(parse_err(origin, line, format!("unknown operation {other:?}"))),
        };
        if let Some(extra) = it.next() {
            return Err(parse_err(origin, line, format!("unexpected field {extra:?}")));
        }
        events.push(GraphEvent { time, kind });
    }
    group_events(events)
}

/// Inserts an `AddNode` before the first event that mentions an id at or
/// beyond the registered range, so nodes are born where they first appear.
pub fn register_new_nodes(batches: &[EventBatch], initial_nodes: usize) -> Vec<EventBatch> {
    let mut registered = initial_nodes;
    batches
        .iter()
        .map(|b| {
            let mut events = Vec::with_capacity(b.events.len());
            for e in &b.events {
                let top = e.max_node().index();
                match e.kind {
                    EventKind::AddNode { node } => registered = registered.max(node.index() + 1),
                    _ if top >= registered => {
                        events.push(GraphEvent {
                            time: b.time,
                            kind: EventKind::AddNode { node: e.max_node() },
                        });
                        registered = top + 1;
                    }
                    _ => {}
                }
                events.push(*e);
            }
            EventBatch { time: b.time, events }
        })
        .collect()
}

/// Node count needed to hold every id a stream mentions.
pub fn node_span(batches: &[EventBatch]) -> usize {
    batches
        .iter()
        .flat_map(|b| &b.events)
        .map(|e| e.max_node().index() + 1)
        .max()
        .unwrap_or(0)
}

pub fn format_event(event: &GraphEvent) -> String {
    let t = event.time;
    match event.kind {
        EventKind::AddEdge { u, v, weight } => format!("{t} + {u} {v} {weight}"),
        EventKind::DeleteEdge { u, v, weight: Some(w) } => format!("{t} - {u} {v} {w}"),
        EventKind::DeleteEdge { u, v, weight: None } => format!("{t} - {u} {v}"),
        EventKind::AddNode { node } => format!("{t} +node {node}"),
        EventKind::DeleteNode { node } => format!("{t} -node {node}"),
    }
}

pub fn write_event_stream<W: Write>(batches: &[EventBatch], w: &mut W) -> Result<()> {
    for batch in batches {
        for event in &batch.events {
            writeln!(w, "{}", format_event(&GraphEvent { time: batch.time, ..*event }))?;
        }
    }
    Ok(())
}

pub fn parse_snapshot(path: &Path) -> Result<Snapshot> {
    parse_snapshot_str(&fs::read_to_string(path)?, path)
}

pub fn parse_snapshot_str(text: &str, origin: &Path) -> Result<Snapshot> {
    let mut snap = Snapshot::default();
    for (no, raw) in text.lines().enumerate() {
        let line = no + 1;
        let body = strip_comment(raw);
        if body.is_empty() {
            continue;
        }
        let mut it = body.split_whitespace();
        let first = it.next().expect("non-empty line");
        if first == "nodes" {
            let n: usize = parse_field(it.next(), "node count", origin, line)?;
            snap = snap.with_node_count(n);
            continue;
        }
        let u: u32 = parse_field(Some(first), "source node", origin, line)?;
        let v: u32 = parse_field(it.next(), "target node", origin, line)?;
        let w: f64 = match it.next() {
            Some(w) => parse_field(Some(w), "weight", origin, line)?,
            None => 1.0,
        };
        if let Some(extra) = it.next() {
            return Err(parse_err(origin, line, format!("unexpected field {extra:?}")));
        }
        snap.insert(NodeId(u), NodeId(v), w)
            .map_err(|e| parse_err(origin, line, e.to_string()))?;
    }
    Ok(snap)
}

pub fn write_snapshot<W: Write>(snapshot: &Snapshot, w: &mut W) -> Result<()> {
    writeln!(w, "nodes {}", snapshot.node_count())?;
    for (&(u, v), weight) in snapshot.edges() {
        writeln!(w, "{u} {v} {weight}")?;
    }
    Ok(())
}

pub fn read_graph(path: &Path) -> Result<WeightedDynamicGraph> {
    Ok(WeightedDynamicGraph::from_snapshot(&parse_snapshot(path)?))
}

/// Every regular, non-hidden file of `dir` in lexicographic order, timed
/// `1, 2, ...`.
pub fn parse_snapshots(dir: &Path) -> Result<Vec<(i64, Snapshot)>> {
    let mut files: Vec<PathBuf> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if entry.file_type()?.is_file() && !hidden {
            files.push(entry.path());
        }
    }
    files.sort();
    files
        .iter()
        .enumerate()
        .map(|(k, p)| Ok((k as i64 + 1, parse_snapshot(p)?)))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FeatureFormat {
    #[default]
    Binary,
    Text,
}

pub fn write_features(features: &FeatureStore, path: &Path, format: FeatureFormat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        FeatureFormat::Binary => {
            w.write_all(&FEATURE_MAGIC)?;
            w.write_all(&1u32.to_le_bytes())?;
            w.write_all(&(features.rows() as u64).to_le_bytes())?;
            w.write_all(&(features.dim() as u64).to_le_bytes())?;
            w.write_all(&[features.seed().is_some() as u8])?;
            w.write_all(&features.seed().unwrap_or(0).to_le_bytes())?;
            for i in 0..features.rows() {
                for v in features.row(i) {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        FeatureFormat::Text => {
            for i in 0..features.rows() {
                let row: Vec<String> = features.row(i).iter().map(f64::to_string).collect();
                writeln!(w, "{}", row.join(" "))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads either feature format; binary is recognised by its magic bytes.
pub fn read_features(path: &Path) -> Result<FeatureStore> {
    let mut r = BufReader::new(File::open(path)?);
    if r.fill_buf()?.starts_with(&FEATURE_MAGIC) {
        let mut head = [0u8; 37];
        r.read_exact(&mut head)
            .map_err(|_| parse_err(path, 0, "truncated feature header"))?;
        let word = |k: usize| u64::from_le_bytes(head[k..k + 8].try_into().expect("8 bytes"));
        let version = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes"));
        if version != 1 {
            return Err(parse_err(path, 0, format!("unsupported feature version {version}")));
        }
        let (rows, cols) = (word(12) as usize, word(20) as usize);
        let seed = (head[28] != 0).then(|| word(29));
        let mut data = vec![0.0; rows * cols];
        let mut buf = [0u8; 8];
        for v in data.iter_mut() {
            r.read_exact(&mut buf)
                .map_err(|_| parse_err(path, 0, format!("feature body shorter than {rows}x{cols}")))?;
            *v = f64::from_le_bytes(buf);
        }
        if r.read(&mut buf)? != 0 {
            return Err(parse_err(path, 0, "trailing bytes after feature body"));
        }
        return Ok(FeatureStore::from_matrix(&Matrix::from_row_major(rows, cols, data)).with_seed(seed));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (no, raw) in r.lines().enumerate() {
        let raw = raw?;
        let body = strip_comment(&raw);
        if body.is_empty() {
            continue;
        }
        let row = body
            .split_whitespace()
            .map(|v| parse_field(Some(v), "feature value", path, no + 1))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(
                    path,
                    no + 1,
                    format!("expected {} values, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    let data = rows.concat();
    Ok(FeatureStore::from_matrix(&Matrix::from_row_major(data.len() / cols.max(1), cols, data)))
}

/// Which filters a run produces.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FilterChoice {
    #[default]
    Ppr,
    Highpass,
    Both,
}

impl FromStr for FilterChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ppr" => Ok(FilterChoice::Ppr),
            "highpass" => Ok(FilterChoice::Highpass),
            "both" => Ok(FilterChoice::Both),
            _ => Err(Error::Config(vec![format!(
                "filter must be ppr, highpass or both, got {s:?}"
            )])),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunConfig {
    pub alpha: f64,
    pub beta: f64,
    pub r_max: f64,
    pub filter: FilterChoice,
    pub mode: UpdateMode,
    /// Checkpoint every `stride` steps.
    pub stride: usize,
    pub workers: Option<usize>,
    pub budget: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            r_max: DEFAULT_R_MAX,
            filter: FilterChoice::Ppr,
            mode: UpdateMode::Batch,
            stride: 1,
            workers: None,
            budget: DEFAULT_WORK_BUDGET,
        }
    }
}

impl RunConfig {
    /// Checks every field and names each violation.
    pub fn validate(self) -> Result<Self> {
        let mut problems = Vec::new();
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            problems.push(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            problems.push(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        if !(self.r_max.is_finite() && self.r_max > 0.0) {
            problems.push(format!("rmax must be positive, got {}", self.r_max));
        }
        if self.stride == 0 {
            problems.push("checkpoint stride must be at least 1".into());
        }
        if self.workers == Some(0) {
            problems.push("workers must be at least 1".into());
        }
        if self.budget == 0 {
            problems.push("push budget must be at least 1".into());
        }
        if problems.is_empty() {
            Ok(self)
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn schedules(&self) -> Result<Vec<FilterSchedule>> {
        let low = || FilterSchedule::ppr(self.alpha, self.beta, self.r_max);
        let high = || FilterSchedule::highpass(self.alpha, self.beta, self.r_max);
        Ok(match self.filter {
            FilterChoice::Ppr => vec![low()?],
            FilterChoice::Highpass => vec![high()?],
            FilterChoice::Both => vec![low()?, high()?],
        })
    }

    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            mode: self.mode,
            policy: CheckpointPolicy::stride(self.stride.max(1)).expect("stride at least 1"),
            budget: self.budget,
            workers: self.workers,
            order: FrontierOrder::Fifo,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SMALL_STREAM: &str = "\
# five nodes, one transient edge
1 + 0 4
1 + 1 3
2 + 0 3
2 + 2 3
3 + 2 4
4 - 2 3
5 + 0 2
";

    fn here() -> &'static Path {
        Path::new("<test>")
    }

    #[test]
    fn small_stream_batches() {
        let b = parse_event_str(SMALL_STREAM, here()).unwrap();
        assert_eq!(b.len(), 5);
        assert_eq!(b.iter().map(|b| b.events.len()).collect::<Vec<_>>(), vec![2, 2, 1, 1, 1]);
        assert_eq!(
            b[3].events[0].kind,
            EventKind::DeleteEdge {
                u: NodeId(2),
                v: NodeId(3),
                weight: None
            }
        );
        assert!(parse_event_str("", here()).unwrap().is_empty());
        assert!(parse_event_str("# only a comment\n\n", here()).unwrap().is_empty());
    }

    #[test]
    fn implicit_node_births() {
        let b = parse_event_str("1 + 0 1\n2 + 1 3\n2 +node 5\n3 + 4 5\n", here()).unwrap();
        assert_eq!(node_span(&b), 6);
        let r = register_new_nodes(&b, 2);
        let kinds: Vec<_> = r.iter().flat_map(|b| &b.events).map(|e| e.kind).collect();
        assert_eq!(kinds.len(), 5);
        assert_eq!(kinds[1], EventKind::AddNode { node: NodeId(3) });
        assert_eq!(kinds[3], EventKind::AddNode { node: NodeId(5) });
        let mut g = WeightedDynamicGraph::new(2);
        for batch in &r {
            g.apply_events(&batch.events).unwrap();
        }
        assert_eq!(g.node_count(), 6);
    }

    #[test]
    fn duplicate_adds_accumulate() {
        let b = parse_event_str("1 + 0 1 0.5\n1 + 1 0 0.25\n", here()).unwrap();
        assert_eq!(b.len(), 1);
        let mut g = WeightedDynamicGraph::new(2);
        g.apply_events(&b[0].events).unwrap();
        assert_eq!(g.weight(NodeId(0), NodeId(1)), 0.75);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("1 + 0 1\n0 + 1 2\n", 2, "time regression"),
            ("1 + 0\n", 1, "missing target"),
            ("1 * 0 1\n", 1, "unknown operation"),
            ("# c\n1 + 0 1 -3\n", 2, "positive"),
            ("x + 0 1\n", 1, "bad time"),
            ("1 + 2 2\n", 1, "self-loop"),
            ("1 + 0 1 1 9\n", 1, "unexpected"),
        ];
        for (text, want_line, needle) in cases {
            match parse_event_str(text, here()) {
                Err(Error::Parse { line, message, .. }) => {
                    assert_eq!(line, want_line, "{text:?}");
                    assert!(message.contains(needle), "{message}");
                }
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn snapshot_diff_misses_transient_edge() {
        let g0 = parse_snapshot_str("nodes 5\n", here()).unwrap();
        let g1 = parse_snapshot_str("0 4\n1 3\n0 3\n2 4\n0 2\n", here()).unwrap();
        let graph = WeightedDynamicGraph::from_snapshot(&g0);
        let diff = graph.diff_snapshot(&g1);
        assert_eq!(diff.edge_changes().len(), 5);
        assert!(!diff.edge_changes().contains_key(&(NodeId(2), NodeId(3))));
        // the event stream does see it
        let b = parse_event_str(SMALL_STREAM, here()).unwrap();
        let touched: Vec<_> = b.iter().flat_map(|b| &b.events).map(|e| e.kind).collect();
        assert!(touched.iter().any(|k| matches!(k, EventKind::DeleteEdge { u: NodeId(2), v: NodeId(3), .. })));
    }

    #[test]
    fn snapshot_duplicates_accumulate() {
        let s = parse_snapshot_str("0 1 0.5\n1 0 1.5 # again\n1 2\n", here()).unwrap();
        let g = WeightedDynamicGraph::from_snapshot(&s);
        assert_eq!(g.degree(NodeId(1)), 3.0);
        assert_eq!(g.degree(NodeId(0)), 2.0);
        assert!(parse_snapshot_str("0 0\n", here()).is_err());
        assert!(parse_snapshot_str("0 1 2 3\n", here()).is_err());
    }

    #[test]
    fn snapshot_directory_order() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b.tsv"), "0 1\n").unwrap();
        fs::write(dir.path().join("a.tsv"), "0 2\n").unwrap();
        fs::write(dir.path().join(".hidden"), "junk\n").unwrap();
        let snaps = parse_snapshots(dir.path()).unwrap();
        assert_eq!(snaps.len(), 2);
        assert_eq!(snaps[0].0, 1);
        assert_eq!(snaps[0].1.weight(NodeId(0), NodeId(2)), 1.0);
        assert_eq!(snaps[1].1.weight(NodeId(0), NodeId(1)), 1.0);

        let one = tempfile::tempdir().unwrap();
        fs::write(one.path().join("g.tsv"), "0 1\n").unwrap();
        assert_eq!(parse_snapshots(one.path()).unwrap().len(), 1);
        let mut out = Vec::new();
        write_snapshot(&snaps[1].1, &mut out).unwrap();
        assert_eq!(parse_snapshot_str(std::str::from_utf8(&out).unwrap(), here()).unwrap(), snaps[1].1);
    }

    #[test]
    fn features_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let x = FeatureStore::random(7, 3, 99);
        for format in [FeatureFormat::Binary, FeatureFormat::Text] {
            let path = dir.path().join(format!("{format:?}"));
            write_features(&x, &path, format).unwrap();
            let back = read_features(&path).unwrap();
            assert_eq!(back.to_matrix(), x.to_matrix());
            if format == FeatureFormat::Binary {
                assert_eq!(back.seed(), Some(99));
            }
        }
        let ragged = dir.path().join("ragged");
        fs::write(&ragged, "1 2\n3\n").unwrap();
        assert!(matches!(read_features(&ragged), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn run_config_defaults_and_violations() {
        let c = RunConfig::default().validate().unwrap();
        assert_eq!((c.alpha, c.beta, c.r_max), (0.2, 0.5, 1e-7));
        assert_eq!(c.schedules().unwrap().len(), 1);
        let both = RunConfig {
            filter: "both".parse().unwrap(),
            ..c
        };
        let s = both.schedules().unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].gamma(), s[1].gamma()), (0.8, 0.2 - 1.0));

        let bad = RunConfig {
            r_max: 0.0,
            alpha: 1.0,
            beta: 1.5,
            ..c
        };
        match bad.validate() {
            Err(Error::Config(v)) => {
                assert_eq!(v.len(), 3);
                assert!(v.iter().any(|m| m.contains("rmax")));
                assert!(v.iter().any(|m| m.contains("alpha")));
                assert!(v.iter().any(|m| m.contains("beta")));
            }
            other => panic!("{other:?}"),
        }
        assert!("lowpass".parse::<FilterChoice>().is_err());
    }

    fn arb_event() -> impl Strategy<Value = EventKind> {
        let node = (0u32..50).prop_map(NodeId);
        let weight = (1u32..1000).prop_map(|w| w as f64 / 7.0);
        prop_oneof![
            (node.clone(), node.clone(), weight.clone())
                .prop_filter("no loops", |(u, v, _)| u != v)
                .prop_map(|(u, v, weight)| EventKind::AddEdge { u, v, weight }),
            (node.clone(), node.clone(), proptest::option::of(weight))
                .prop_filter("no loops", |(u, v, _)| u != v)
                .prop_map(|(u, v, weight)| EventKind::DeleteEdge { u, v, weight }),
            node.clone().prop_map(|node| EventKind::AddNode { node }),
            node.prop_map(|node| EventKind::DeleteNode { node }),
        ]
    }

    proptest! {
        #[test]
        fn event_stream_round_trip(
            steps in proptest::collection::vec((0i64..3, proptest::collection::vec(arb_event(), 1..4)), 0..20)
        ) {
            let mut t = -5;
            let mut events = Vec::new();
            for (gap, kinds) in steps {
                t += gap;
                events.extend(kinds.into_iter().map(|kind| GraphEvent { time: t, kind }));
            }
            let batches = group_events(events).unwrap();
            let mut text = Vec::new();
            write_event_stream(&batches, &mut text).unwrap();
            let back = parse_event_str(std::str::from_utf8(&text).unwrap(), here()).unwrap();
            prop_assert_eq!(back, batches);
        }
    }
}
