//! Embedding timeline files.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "DYNPROP\0"
//! version    u32      1
//! precision  u8       4 or 8 (bytes per stored value)
//! kind       u8       0 ppr, 1 highpass, 2 concat, 3 custom
//! has_seed   u8       1 if features were drawn from `seed`
//! seed       u64
//! n          u64      rows of the widest checkpoint
//! d          u64      columns
//! t          u64      checkpoint count
//! filters    u32      then per filter:
//!   kind u8, width u64, beta f64, gamma0 f64, gamma f64, r_max f64
//! then per checkpoint:
//!   time i64, rows u64, rows·d values row-major
//! ```
//!
//! The TSV form carries the same metadata in `#` lines followed by one
//! `time node v_1 .. v_d` line per row. Values are written in shortest
//! round-trip notation, so it is lossless too.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::engine::{EmbeddingTimeline, ScheduleTag};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::schedule::{FilterKind, FilterSchedule};

pub const MAGIC: [u8; 8] = *b"DYNPROP\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    fn bytes(self) -> u8 {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Binary(Precision),
    Tsv,
}

impl ExportFormat {
    /// Conventional file extension.
    pub fn extension(self) -> &'static str {
        match self {
            ExportFormat::Binary(_) => "bin",
            ExportFormat::Tsv => "tsv",
        }
    }
}

fn kind_code(kind: FilterKind) -> u8 {
    match kind {
        FilterKind::LowPass => 0,
        FilterKind::HighPass => 1,
        FilterKind::Concat => 2,
        FilterKind::Custom => 3,
    }
}

fn kind_from_code(code: u8) -> Result<FilterKind> {
    Ok(match code {
        0 => FilterKind::LowPass,
        1 => FilterKind::HighPass,
        2 => FilterKind::Concat,
        3 => FilterKind::Custom,
        _ => return Err(Error::Format(format!("unknown filter code {code}"))),
    })
}

fn kind_from_name(name: &str) -> Result<FilterKind> {
    [FilterKind::LowPass, FilterKind::HighPass, FilterKind::Concat, FilterKind::Custom]
        .into_iter()
        .find(|k| k.as_str() == name)
        .ok_or_else(|| Error::Format(format!("unknown filter name {name:?}")))
}

fn rebuild_schedule(kind: FilterKind, gamma0: f64, gamma: f64, beta: f64, r_max: f64) -> Result<FilterSchedule> {
    if kind == FilterKind::Concat {
        return Err(Error::Format("a single filter cannot be tagged concat".into()));
    }
    FilterSchedule::with_kind(gamma0, gamma, beta, r_max, kind).map_err(|e| Error::Format(e.to_string()))
}

pub fn export_timeline(timeline: &EmbeddingTimeline, path: &Path, format: ExportFormat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_timeline(timeline, &mut w, format)?;
    w.flush()?;
    Ok(())
}

/// Reads either format; binary files are recognised by their magic bytes.
pub fn import_timeline(path: &Path) -> Result<EmbeddingTimeline> {
    let mut r = BufReader::new(File::open(path)?);
    let binary = r.fill_buf()?.starts_with(&MAGIC);
    if binary {
        read_binary(&mut r)
    } else {
        read_tsv(r)
    }
}

pub fn write_timeline<W: Write>(timeline: &EmbeddingTimeline, w: &mut W, format: ExportFormat) -> Result<()> {
    match format {
        ExportFormat::Binary(p) => write_binary(timeline, w, p),
        ExportFormat::Tsv => write_tsv(timeline, w),
    }
}

fn write_binary<W: Write>(timeline: &EmbeddingTimeline, w: &mut W, precision: Precision) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[
        precision.bytes(),
        kind_code(timeline.kind()),
        timeline.feature_seed().is_some() as u8,
    ])?;
    w.write_all(&timeline.feature_seed().unwrap_or(0).to_le_bytes())?;
    for v in [timeline.node_count(), timeline.dim(), timeline.len()] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    w.write_all(&(timeline.tags().len() as u32).to_le_bytes())?;
    for tag in timeline.tags() {
        let s = &tag.schedule;
        w.write_all(&[kind_code(s.kind())])?;
        w.write_all(&(tag.width as u64).to_le_bytes())?;
        for v in [s.beta(), s.gamma0(), s.gamma(), s.r_max()] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for cp in timeline.checkpoints() {
        w.write_all(&cp.time.to_le_bytes())?;
        w.write_all(&(cp.embedding.rows() as u64).to_le_bytes())?;
        match precision {
            Precision::F64 => {
                for v in cp.embedding.as_slice() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            Precision::F32 => {
                for &v in cp.embedding.as_slice() {
                    w.write_all(&(v as f32).to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

struct Bytes<'a, R> {
    r: &'a mut R,
}

impl<R: Read> Bytes<'_, R> {
    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.r.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format(format!("file ends inside {what}")),
            _ => Error::Io(e),
        })?;
        Ok(buf)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.array::<1>(what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn size(&mut self, what: &str) -> Result<usize> {
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in memory")))
    }

    fn i64(&mut self, what: &str) -> Result<i64> {
        Ok(i64::from_le_bytes(self.array(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array(what)?))
    }
}

pub fn read_binary<R: Read>(r: &mut R) -> Result<EmbeddingTimeline> {
    let mut b = Bytes { r };
    if b.array::<8>("magic")? != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = b.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let precision = match b.u8("precision")? {
        4 => Precision::F32,
        8 => Precision::F64,
        p => return Err(Error::Format(format!("unsupported precision {p}"))),
    };
    let kind = kind_from_code(b.u8("filter kind")?)?;
    let has_seed = b.u8("seed flag")? != 0;
    let seed = b.u64("seed")?;
    let n = b.size("node count")?;
    let d = b.size("dimension")?;
    let t = b.size("checkpoint count")?;
    let filters = b.u32("filter count")? as usize;
    let mut tags = Vec::with_capacity(filters);
    for _ in 0..filters {
        let k = kind_from_code(b.u8("filter kind")?)?;
        let width = b.size("filter width")?;
        let beta = b.f64("beta")?;
        let gamma0 = b.f64("gamma0")?;
        let gamma = b.f64("gamma")?;
        let r_max = b.f64("r_max")?;
        tags.push(ScheduleTag {
            schedule: rebuild_schedule(k, gamma0, gamma, beta, r_max)?,
            width,
        });
    }
    let mut timeline = EmbeddingTimeline::new(tags, has_seed.then_some(seed));
    if timeline.dim() != d {
        return Err(Error::Format(format!("filter widths sum to {}, header says {d}", timeline.dim())));
    }
    if timeline.kind() != kind {
        return Err(Error::Format("filter kind disagrees with filter list".into()));
    }
    for _ in 0..t {
        let time = b.i64("checkpoint time")?;
        let rows = b.size("row count")?;
        if rows > n {
            return Err(Error::Format(format!("checkpoint at t={time} has {rows} rows, header says {n}")));
        }
        let mut data = Vec::with_capacity(rows * d);
        for _ in 0..rows * d {
            data.push(match precision {
                Precision::F64 => b.f64("embedding")?,
                Precision::F32 => b.f32("embedding")? as f64,
            });
        }
        timeline
            .push(time, Matrix::from_row_major(rows, d, data))
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    if timeline.node_count() != n {
        return Err(Error::Format(format!(
            "header says {n} nodes, checkpoints have {}",
            timeline.node_count()
        )));
    }
    let mut rest = [0u8; 1];
    if b.r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after last checkpoint".into()));
    }
    Ok(timeline)
}

fn write_tsv<W: Write>(timeline: &EmbeddingTimeline, w: &mut W) -> Result<()> {
    writeln!(w, "# dynaprop embeddings v{VERSION}")?;
    writeln!(
        w,
        "# n={} d={} t={} kind={}",
        timeline.node_count(),
        timeline.dim(),
        timeline.len(),
        timeline.kind().as_str()
    )?;
    if let Some(seed) = timeline.feature_seed() {
        writeln!(w, "# seed={seed}")?;
    }
    for tag in timeline.tags() {
        let s = &tag.schedule;
        writeln!(
            w,
            "# filter kind={} width={} beta={} gamma0={} gamma={} r_max={}",
            s.kind().as_str(),
            tag.width,
            s.beta(),
            s.gamma0(),
            s.gamma(),
            s.r_max()
        )?;
    }
    for cp in timeline.checkpoints() {
        // a line per checkpoint keeps empty ones visible
        writeln!(w, "# checkpoint t={} rows={}", cp.time, cp.embedding.rows())?;
        for i in 0..cp.embedding.rows() {
            write!(w, "{}\t{}", cp.time, i)?;
            for v in cp.embedding.row(i) {
                write!(w, "\t{v}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

fn fields(line: &str) -> impl Iterator<Item = (&str, &str)> {
    line.split_whitespace().filter_map(|f| f.split_once('='))
}

fn field<T: std::str::FromStr>(line: &str, key: &str) -> Result<T> {
    let raw = fields(line)
        .find(|(k, _)| *k == key)
        .map(|(_, v)| v)
        .ok_or_else(|| Error::Format(format!("missing {key}= in {line:?}")))?;
    raw.parse()
        .map_err(|_| Error::Format(format!("bad value for {key}: {raw:?}")))
}

pub fn read_tsv<R: BufRead>(r: R) -> Result<EmbeddingTimeline> {
    let mut header: Option<(usize, usize, usize, FilterKind)> = None;
    let mut seed = None;
    let mut tags = Vec::new();
    let mut timeline: Option<EmbeddingTimeline> = None;
    let mut current: Option<(i64, usize, Vec<f64>)> = None;

    fn finish(timeline: &mut EmbeddingTimeline, cp: Option<(i64, usize, Vec<f64>)>) -> Result<()> {
        if let Some((time, rows, data)) = cp {
            let d = timeline.dim();
            if data.len() != rows * d {
                return Err(Error::Format(format!(
                    "checkpoint t={time} has {} values, expected {}",
                    data.len(),
                    rows * d
                )));
            }
            timeline
                .push(time, Matrix::from_row_major(rows, d, data))
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(())
    }

    for (no, line) in r.lines().enumerate() {
        let line = line?;
        let at = |e: Error| Error::Format(format!("line {}: {e}", no + 1));
        if let Some(meta) = line.strip_prefix('#') {
            let meta = meta.trim();
            if meta.starts_with("n=") {
                header = Some((
                    field(meta, "n").map_err(at)?,
                    field(meta, "d").map_err(at)?,
                    field(meta, "t").map_err(at)?,
                    kind_from_name(&field::<String>(meta, "kind").map_err(at)?).map_err(at)?,
                ));
            } else if meta.starts_with("seed=") {
                seed = Some(field(meta, "seed").map_err(at)?);
            } else if let Some(rest) = meta.strip_prefix("filter ") {
                let kind = kind_from_name(&field::<String>(rest, "kind").map_err(at)?).map_err(at)?;
                let schedule = rebuild_schedule(
                    kind,
                    field(rest, "gamma0").map_err(at)?,
                    field(rest, "gamma").map_err(at)?,
                    field(rest, "beta").map_err(at)?,
                    field(rest, "r_max").map_err(at)?,
                )
                .map_err(at)?;
                tags.push(ScheduleTag {
                    schedule,
                    width: field(rest, "width").map_err(at)?,
                });
            } else if let Some(rest) = meta.strip_prefix("checkpoint ") {
                let tl = timeline.get_or_insert_with(|| EmbeddingTimeline::new(std::mem::take(&mut tags), seed));
                finish(tl, current.take()).map_err(at)?;
                current = Some((field(rest, "t").map_err(at)?, field(rest, "rows").map_err(at)?, Vec::new()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let (time, _, data) = current
            .as_mut()
            .ok_or_else(|| Error::Format(format!("line {}: row before any checkpoint", no + 1)))?;
        let mut parts = line.split('\t');
        let t: i64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("line {}: bad time", no + 1)))?;
        if t != *time {
            return Err(Error::Format(format!("line {}: row for t={t} inside t={time}", no + 1)));
        }
        parts.next();
        for p in parts {
            data.push(
                p.parse()
                    .map_err(|_| Error::Format(format!("line {}: bad value {p:?}", no + 1)))?,
            );
        }
    }
    let mut timeline = timeline.unwrap_or_else(|| EmbeddingTimeline::new(tags, seed));
    finish(&mut timeline, current.take())?;
    let (n, d, t, kind) = header.ok_or_else(|| Error::Format("missing n=/d=/t= header".into()))?;
    if (timeline.node_count(), timeline.dim(), timeline.len(), timeline.kind()) != (n, d, t, kind) {
        return Err(Error::Format("body disagrees with header".into()));
    }
    Ok(timeline)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureStore;

    fn sample(seed: Option<u64>) -> EmbeddingTimeline {
        let low = FilterSchedule::ppr(0.2, 0.5, 1e-7).unwrap();
        let high = FilterSchedule::highpass(0.3, 0.25, 1e-5).unwrap();
        let mut t = EmbeddingTimeline::new(
            vec![
                ScheduleTag { schedule: low, width: 2 },
                ScheduleTag { schedule: high, width: 1 },
            ],
            seed,
        );
        let x = FeatureStore::random(4, 3, 77).to_matrix();
        t.push(0, x.resized(2)).unwrap();
        t.push(3, x.clone()).unwrap();
        t.push(9, Matrix::from_row_major(4, 3, x.as_slice().iter().map(|v| v * 1e-9 - 1e3).collect()))
            .unwrap();
        t
    }

    fn round_trip(t: &EmbeddingTimeline, format: ExportFormat) -> EmbeddingTimeline {
        let mut buf = Vec::new();
        write_timeline(t, &mut buf, format).unwrap();
        match format {
            ExportFormat::Binary(_) => read_binary(&mut buf.as_slice()).unwrap(),
            ExportFormat::Tsv => read_tsv(buf.as_slice()).unwrap(),
        }
    }

    #[test]
    fn f64_binary_is_bit_identical() {
        for seed in [None, Some(5)] {
            let t = sample(seed);
            assert_eq!(round_trip(&t, ExportFormat::Binary(Precision::F64)), t);
        }
    }

    #[test]
    fn tsv_is_lossless() {
        let t = sample(Some(5));
        assert_eq!(round_trip(&t, ExportFormat::Tsv), t);
    }

    #[test]
    fn f32_loss_is_bounded() {
        let t = sample(None);
        let back = round_trip(&t, ExportFormat::Binary(Precision::F32));
        assert_eq!(back.times(), t.times());
        assert_eq!(back.tags(), t.tags());
        for (a, b) in t.checkpoints().iter().zip(back.checkpoints()) {
            for (x, y) in a.embedding.as_slice().iter().zip(b.embedding.as_slice()) {
                // round to nearest f32: relative error at most 2^-24
                assert!((x - y).abs() <= 1e-6 * x.abs(), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn header_records_shape_and_schedule() {
        let t = sample(Some(42));
        let mut buf = Vec::new();
        write_timeline(&t, &mut buf, ExportFormat::Binary(Precision::F64)).unwrap();
        assert_eq!(&buf[..8], b"DYNPROP\0");
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        assert_eq!(buf[12], 8);
        assert_eq!(buf[13], kind_code(FilterKind::Concat));
        assert_eq!(buf[14], 1);
        let word = |k: usize| u64::from_le_bytes(buf[k..k + 8].try_into().unwrap());
        assert_eq!(word(15), 42);
        assert_eq!((word(23), word(31), word(39)), (4, 3, 3));
        // first filter: kind, width, beta, gamma0, gamma, r_max
        assert_eq!(buf[51], 0);
        assert_eq!(word(52), 2);
        let float = |k: usize| f64::from_le_bytes(buf[k..k + 8].try_into().unwrap());
        assert_eq!((float(60), float(68), float(76), float(84)), (0.5, 0.2, 0.8, 1e-7));
    }

    #[test]
    fn corrupt_input_rejected() {
        let t = sample(None);
        let mut buf = Vec::new();
        write_timeline(&t, &mut buf, ExportFormat::Binary(Precision::F64)).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_binary(&mut bad.as_slice()), Err(Error::Format(_))));
        let short = &buf[..buf.len() - 3];
        assert!(matches!(read_binary(&mut &short[..]), Err(Error::Format(_))));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_binary(&mut long.as_slice()), Err(Error::Format(_))));
        assert!(read_tsv("1\t0\t0.5\n".as_bytes()).is_err());
    }

    #[test]
    fn file_round_trip_detects_format() {
        let dir = tempfile::tempdir().unwrap();
        let t = sample(Some(1));
        for format in [ExportFormat::Binary(Precision::F64), ExportFormat::Tsv] {
            let path = dir.path().join(format!("emb.{}", format.extension()));
            export_timeline(&t, &path, format).unwrap();
            assert_eq!(import_timeline(&path).unwrap(), t);
        }
    }
}
