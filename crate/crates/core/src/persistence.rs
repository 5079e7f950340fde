//! On-disk formats: query sets, response pools, training tuples.
//!
//! Everything is JSON Lines, UTF-8, with decimals rounded to 12 significant
//! digits and fixed key order, so equal data always serializes to equal
//! bytes. Paths ending in `.gz` are gzip-compressed transparently.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::answer::{CanonicalAnswer, Query, ResponsePool, SampledResponse};
use crate::dataset::TrainingTuple;
use crate::numfmt;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    CorruptFile {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}: prompt hash {found} does not match {expected}")]
    HashMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
}

impl PersistError {
    fn io(path: &Path, source: io::Error) -> Self {
        PersistError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn corrupt(path: &Path, line: usize, reason: impl Into<String>) -> Self {
        PersistError::CorruptFile {
            path: path.to_path_buf(),
            line,
            reason: reason.into(),
        }
    }
}

/// Which confidence column feeds the strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceSource {
    #[default]
    Calibrated,
    Vanilla,
}

impl std::str::FromStr for ConfidenceSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "calibrated" => Ok(ConfidenceSource::Calibrated),
            "vanilla" => Ok(ConfidenceSource::Vanilla),
            _ => Err(format!("unknown confidence source {s:?} (calibrated|vanilla)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolHeader {
    pub model: String,
    pub n_max: usize,
    pub generated_at: String,
    /// SHA-256 of the prompt templates the pool was generated with.
    pub prompt_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_hash: Option<String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolRecord {
    pub query_id: String,
    pub index: usize,
    #[serde(serialize_with = "numfmt::ser_f64")]
    pub temperature: f64,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<CanonicalAnswer>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        serialize_with = "numfmt::ser_opt_f64"
    )]
    pub confidence_vanilla: Option<f64>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        serialize_with = "numfmt::ser_opt_f64"
    )]
    pub confidence_calibrated: Option<f64>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl PoolRecord {
    pub fn confidence(&self, source: ConfidenceSource) -> Option<f64> {
        match source {
            ConfidenceSource::Calibrated => self.confidence_calibrated,
            ConfidenceSource::Vanilla => self.confidence_vanilla,
        }
    }

    pub fn to_response(&self, source: ConfidenceSource) -> SampledResponse {
        SampledResponse {
            query_id: self.query_id.clone(),
            index: self.index,
            text: self.text.clone(),
            answer: self.answer,
            temperature: self.temperature,
            confidence: self.confidence(source),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolFile {
    pub header: PoolHeader,
    pub records: Vec<PoolRecord>,
}

impl PoolFile {
    /// Checks that each query's records run 0, 1, 2, ... in file order.
    /// Returns the offending record position on failure.
    fn check_order(&self) -> Result<(), (usize, String)> {
        let mut next: HashMap<&str, usize> = HashMap::new();
        for (pos, r) in self.records.iter().enumerate() {
            let want = next.entry(&r.query_id).or_insert(0);
            if r.index != *want {
                return Err((
                    pos,
                    format!("query {} has index {} where {} was expected", r.query_id, r.index, want),
                ));
            }
            for c in [r.confidence_calibrated, r.confidence_vanilla].into_iter().flatten() {
                if !(0.0..=1.0).contains(&c) {
                    return Err((pos, format!("confidence {c} outside [0, 1]")));
                }
            }
            *want += 1;
        }
        Ok(())
    }

    /// Groups records into per-query pools, in order of first appearance.
    pub fn to_pools(&self, source: ConfidenceSource) -> Vec<ResponsePool> {
        let mut order: Vec<&str> = Vec::new();
        let mut groups: HashMap<&str, Vec<SampledResponse>> = HashMap::new();
        for r in &self.records {
            groups
                .entry(&r.query_id)
                .or_insert_with(|| {
                    order.push(&r.query_id);
                    Vec::new()
                })
                .push(r.to_response(source));
        }
        order
            .into_iter()
            .map(|q| {
                let responses = groups.remove(q).unwrap_or_default();
                ResponsePool::new(q, responses).expect("records were validated on read")
            })
            .collect()
    }

    /// Completed indices per query.
    pub fn depth_by_query(&self) -> HashMap<String, usize> {
        let mut out = HashMap::new();
        for r in &self.records {
            *out.entry(r.query_id.clone()).or_insert(0) += 1;
        }
        out
    }
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

fn open_reader(path: &Path) -> Result<Box<dyn BufRead>, PersistError> {
    let file = File::open(path).map_err(|e| PersistError::io(path, e))?;
    Ok(if is_gz(path) {
        Box::new(BufReader::new(MultiGzDecoder::new(file)))
    } else {
        Box::new(BufReader::new(file))
    })
}

/// Whole file contents, decompressed.
pub fn read_bytes(path: &Path) -> Result<Vec<u8>, PersistError> {
    let mut buf = Vec::new();
    open_reader(path)?
        .read_to_end(&mut buf)
        .map_err(|e| PersistError::io(path, e))?;
    Ok(buf)
}

/// Non-empty lines with their 1-based line numbers, and whether the data
/// ended cleanly (newline-terminated, stream intact). `lenient` keeps what
/// was readable from a truncated gzip stream.
fn read_lines_with(path: &Path, lenient: bool) -> Result<(Vec<(usize, String)>, bool), PersistError> {
    let mut bytes = Vec::new();
    let mut intact = true;
    match open_reader(path)?.read_to_end(&mut bytes) {
        Ok(_) => {}
        Err(e) if lenient && e.kind() == io::ErrorKind::UnexpectedEof => {
            log::warn!("{}: truncated compressed stream", path.display());
            intact = false;
        }
        Err(e) => return Err(PersistError::io(path, e)),
    }
    let clean = intact && bytes.last().is_none_or(|b| *b == b'\n');
    let text = String::from_utf8(bytes).map_err(|e| {
        PersistError::corrupt(path, 0, format!("not UTF-8: {e}"))
    })?;
    let lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect();
    Ok((lines, clean))
}

fn read_lines(path: &Path) -> Result<(Vec<(usize, String)>, bool), PersistError> {
    read_lines_with(path, false)
}

/// Writes `lines` (each followed by `\n`) via a temporary file and rename.
pub fn write_lines_atomic(path: &Path, lines: &[String]) -> Result<(), PersistError> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let file = File::create(&tmp).map_err(|e| PersistError::io(&tmp, e))?;
        write_lines_to(file, &tmp, lines, is_gz(path))?;
    }
    fs::rename(&tmp, path).map_err(|e| PersistError::io(path, e))
}

fn write_lines_to(file: File, path: &Path, lines: &[String], gz: bool) -> Result<(), PersistError> {
    let io_err = |e| PersistError::io(path, e);
    if gz {
        // mtime 0 and no file name keep the compressed bytes deterministic
        let mut enc = flate2::GzBuilder::new()
            .mtime(0)
            .write(io::BufWriter::new(file), Compression::default());
        for l in lines {
            enc.write_all(l.as_bytes()).map_err(io_err)?;
            enc.write_all(b"\n").map_err(io_err)?;
        }
        enc.finish().map_err(io_err)?.flush().map_err(io_err)
    } else {
        let mut w = io::BufWriter::new(file);
        for l in lines {
            w.write_all(l.as_bytes()).map_err(io_err)?;
            w.write_all(b"\n").map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }
}

fn to_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("in-memory values always serialize")
}

fn parse_pool_lines(
    path: &Path,
    lines: Vec<(usize, String)>,
    tolerate_torn_tail: bool,
) -> Result<(PoolFile, bool), PersistError> {
    let mut it = lines.into_iter();
    let (hline, htext) = it
        .next()
        .ok_or_else(|| PersistError::corrupt(path, 1, "missing header line"))?;
    let header: PoolHeader = serde_json::from_str(&htext)
        .map_err(|e| PersistError::corrupt(path, hline, format!("bad header: {e}")))?;
    let rest: Vec<_> = it.collect();
    let mut records = Vec::with_capacity(rest.len());
    let mut line_of = Vec::with_capacity(rest.len());
    let mut torn = false;
    let last = rest.len();
    for (pos, (ln, text)) in rest.into_iter().enumerate() {
        match serde_json::from_str::<PoolRecord>(&text) {
            Ok(r) => {
                records.push(r);
                line_of.push(ln);
            }
            Err(_) if tolerate_torn_tail && pos + 1 == last => torn = true,
            Err(e) => return Err(PersistError::corrupt(path, ln, e.to_string())),
        }
    }
    let file = PoolFile { header, records };
    file.check_order()
        .map_err(|(pos, reason)| PersistError::corrupt(path, line_of[pos], reason))?;
    Ok((file, torn))
}

pub fn read_pool_file(path: &Path) -> Result<PoolFile, PersistError> {
    let (lines, _) = read_lines(path)?;
    Ok(parse_pool_lines(path, lines, false)?.0)
}

/// Like [`read_pool_file`] but drops an unparseable final line, as left by
/// an interrupted append. Returns `None` when not even the header survived
/// (an empty file, or one cut inside its first line), and whether anything
/// was dropped.
pub fn read_pool_file_resumable(path: &Path) -> Result<(Option<PoolFile>, bool), PersistError> {
    let (lines, clean) = read_lines_with(path, true)?;
    match lines.as_slice() {
        [] => return Ok((None, !clean)),
        [(_, only)] if !clean && serde_json::from_str::<PoolHeader>(only).is_err() => {
            return Ok((None, true))
        }
        _ => {}
    }
    let (file, torn) = parse_pool_lines(path, lines, true)?;
    Ok((Some(file), torn || !clean))
}

/// Canonical serialization: header, then records in the given order.
pub fn write_pool_file(path: &Path, file: &PoolFile) -> Result<(), PersistError> {
    file.check_order()
        .map_err(|(pos, reason)| PersistError::corrupt(path, pos + 2, reason))?;
    let mut lines = Vec::with_capacity(file.records.len() + 1);
    lines.push(to_line(&file.header));
    lines.extend(file.records.iter().map(to_line));
    write_lines_atomic(path, &lines)
}

/// Appends records, writing `header` first if the file does not exist yet.
/// An existing file must carry the same prompt hash.
pub fn append_records(
    path: &Path,
    header: &PoolHeader,
    records: &[PoolRecord],
) -> Result<(), PersistError> {
    let mut lines = Vec::with_capacity(records.len() + 1);
    if path.exists() {
        let (existing, _) = read_lines(path)?;
        if let Some((ln, text)) = existing.first() {
            let found: PoolHeader = serde_json::from_str(text)
                .map_err(|e| PersistError::corrupt(path, *ln, format!("bad header: {e}")))?;
            if found.prompt_hash != header.prompt_hash {
                return Err(PersistError::HashMismatch {
                    path: path.to_path_buf(),
                    expected: found.prompt_hash,
                    found: header.prompt_hash.clone(),
                });
            }
        } else {
            lines.push(to_line(header));
        }
    } else {
        lines.push(to_line(header));
    }
    lines.extend(records.iter().map(to_line));
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| PersistError::io(path, e))?;
    write_lines_to(file, path, &lines, is_gz(path))
}

pub fn read_queries(path: &Path) -> Result<Vec<Query>, PersistError> {
    let (lines, _) = read_lines(path)?;
    let mut seen = HashMap::new();
    let mut out = Vec::with_capacity(lines.len());
    for (ln, text) in lines {
        let q: Query =
            serde_json::from_str(&text).map_err(|e| PersistError::corrupt(path, ln, e.to_string()))?;
        q.validate()
            .map_err(|e| PersistError::corrupt(path, ln, e.to_string()))?;
        if let Some(prev) = seen.insert(q.id.clone(), ln) {
            return Err(PersistError::corrupt(
                path,
                ln,
                format!("duplicate query id {:?} (first on line {prev})", q.id),
            ));
        }
        out.push(q);
    }
    Ok(out)
}

pub fn write_queries(path: &Path, queries: &[Query]) -> Result<(), PersistError> {
    let lines: Vec<String> = queries.iter().map(to_line).collect();
    write_lines_atomic(path, &lines)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleFileHeader {
    pub run_config: Value,
    pub input_hash: String,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine<T> {
    header: T,
}

/// Tuple files start with a `{"header": {...}}` line, then one tuple per line.
pub fn write_tuples(
    path: &Path,
    header: &TupleFileHeader,
    tuples: &[TrainingTuple],
) -> Result<(), PersistError> {
    let mut lines = vec![to_line(&HeaderLine { header })];
    lines.extend(tuples.iter().map(to_line));
    write_lines_atomic(path, &lines)
}

pub fn read_tuples(path: &Path) -> Result<(Option<TupleFileHeader>, Vec<TrainingTuple>), PersistError> {
    let (lines, _) = read_lines(path)?;
    let mut header = None;
    let mut tuples = Vec::with_capacity(lines.len());
    for (i, (ln, text)) in lines.into_iter().enumerate() {
        if i == 0 {
            if let Ok(h) = serde_json::from_str::<HeaderLine<TupleFileHeader>>(&text) {
                header = Some(h.header);
                continue;
            }
        }
        let t: TrainingTuple =
            serde_json::from_str(&text).map_err(|e| PersistError::corrupt(path, ln, e.to_string()))?;
        if !(0.0..=1.0).contains(&t.target_confidence) {
            return Err(PersistError::corrupt(path, ln, "target_confidence outside [0, 1]"));
        }
        tuples.push(t);
    }
    Ok((header, tuples))
}

/// SHA-256 over the decompressed contents of `paths`, in order.
pub fn content_hash<P: AsRef<Path>>(paths: &[P]) -> Result<String, PersistError> {
    let mut h = Sha256::new();
    for p in paths {
        let bytes = read_bytes(p.as_ref())?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}
