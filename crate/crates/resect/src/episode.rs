//! JSONL persistence for streams, aligned frames, and episode results.
//!
//! Every file starts with one header record carrying `schema_version` and a
//! `kind` tag; the remaining lines are records of that kind, one JSON object
//! per line. Readers check both fields and report parse failures with file
//! and line number. Wall-clock timings are written to a separate CSV so the
//! result files stay byte-reproducible.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::EpisodeResult;
use crate::timeline::{AlignedFrame, Dropout, Payload, StampedStream, TimelineError};

pub const FILE_SCHEMA_VERSION: u32 = 1;

pub const KIND_RAW: &str = "raw_streams";
pub const KIND_ALIGNED: &str = "aligned_frames";
pub const KIND_RESULTS: &str = "episode_results";
pub const KIND_TOKENS: &str = "token_streams";

#[derive(Debug, Error)]
pub enum EpisodeIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{path}: expected kind {expected}, found {found}")]
    Kind {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}: unsupported schema version {found} (reader supports {supported})")]
    Schema {
        path: PathBuf,
        found: u32,
        supported: u32,
    },
    #[error("{path}: file is empty, expected a header record")]
    Empty { path: PathBuf },
    #[error("stream reassembly: {0}")]
    Timeline(#[from] TimelineError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EpisodeIoError + '_ {
    move |source| EpisodeIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// First record of every JSONL file. `meta` holds kind-specific fields
/// (seeds, grid parameters, patch settings) as ordered key/value pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHeader {
    pub schema_version: u32,
    pub kind: String,
    #[serde(flatten)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl FileHeader {
    pub fn new(kind: &str) -> Self {
        Self {
            schema_version: FILE_SCHEMA_VERSION,
            kind: kind.to_string(),
            meta: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.meta.insert(
            key.to_string(),
            serde_json::to_value(value).expect("meta value serializes"),
        );
        self
    }

    pub fn meta_u64(&self, key: &str) -> Option<u64> {
        self.meta.get(key).and_then(|v| v.as_u64())
    }

    pub fn meta_i64(&self, key: &str) -> Option<i64> {
        self.meta.get(key).and_then(|v| v.as_i64())
    }
}

fn json_line<T: Serialize>(
    w: &mut impl Write,
    path: &Path,
    value: &T,
) -> Result<(), EpisodeIoError> {
    let line = serde_json::to_string(value).map_err(|source| EpisodeIoError::Json {
        path: path.to_path_buf(),
        line: 0,
        source,
    })?;
    w.write_all(line.as_bytes()).map_err(io_err(path))?;
    w.write_all(b"\n").map_err(io_err(path))
}

/// Writes a header line followed by one JSON line per item.
pub fn write_jsonl<T: Serialize>(
    path: &Path,
    header: &FileHeader,
    items: impl IntoIterator<Item = T>,
) -> Result<(), EpisodeIoError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    json_line(&mut w, path, header)?;
    for item in items {
        json_line(&mut w, path, &item)?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads the header (checking `kind` and schema version) and all records.
pub fn read_jsonl<T: DeserializeOwned>(
    path: &Path,
    expected_kind: &str,
) -> Result<(FileHeader, Vec<T>), EpisodeIoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();
    let Some((_, first)) = lines.next() else {
        return Err(EpisodeIoError::Empty {
            path: path.to_path_buf(),
        });
    };
    let first = first.map_err(io_err(path))?;
    let header: FileHeader =
        serde_json::from_str(&first).map_err(|source| EpisodeIoError::Json {
            path: path.to_path_buf(),
            line: 1,
            source,
        })?;
    if header.kind != expected_kind {
        return Err(EpisodeIoError::Kind {
            path: path.to_path_buf(),
            expected: expected_kind.to_string(),
            found: header.kind,
        });
    }
    if header.schema_version > FILE_SCHEMA_VERSION {
        return Err(EpisodeIoError::Schema {
            path: path.to_path_buf(),
            found: header.schema_version,
            supported: FILE_SCHEMA_VERSION,
        });
    }
    let mut items = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(
            serde_json::from_str(&line).map_err(|source| EpisodeIoError::Json {
                path: path.to_path_buf(),
                line: idx + 1,
                source,
            })?,
        );
    }
    Ok((header, items))
}

/// One raw sensor record as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub stream: String,
    pub t_us: i64,
    pub payload: Payload,
}

/// Flattens streams into chronological records (ties break by stream id),
/// the on-disk order for raw episode files.
pub fn streams_to_records(streams: &[StampedStream]) -> Vec<RawRecord> {
    let mut records: Vec<RawRecord> = streams
        .iter()
        .flat_map(|s| {
            s.records().iter().map(|(t, p)| RawRecord {
                stream: s.id.clone(),
                t_us: *t,
                payload: p.clone(),
            })
        })
        .collect();
    records.sort_by(|a, b| a.t_us.cmp(&b.t_us).then_with(|| a.stream.cmp(&b.stream)));
    records
}

/// Regroups disk records into per-stream ordered series. Monotonicity is
/// re-checked on insertion.
pub fn records_to_streams(records: &[RawRecord]) -> Result<Vec<StampedStream>, EpisodeIoError> {
    let mut order: Vec<String> = Vec::new();
    let mut streams: BTreeMap<String, StampedStream> = BTreeMap::new();
    for r in records {
        if !streams.contains_key(&r.stream) {
            order.push(r.stream.clone());
            streams.insert(r.stream.clone(), StampedStream::new(r.stream.clone(), None));
        }
        streams
            .get_mut(&r.stream)
            .expect("just inserted")
            .push(r.t_us, r.payload.clone())?;
    }
    Ok(order
        .into_iter()
        .map(|id| streams.remove(&id).expect("grouped"))
        .collect())
}

pub fn write_raw_streams(
    path: &Path,
    header: FileHeader,
    streams: &[StampedStream],
) -> Result<(), EpisodeIoError> {
    write_jsonl(path, &header, streams_to_records(streams))
}

pub fn read_raw_streams(
    path: &Path,
) -> Result<(FileHeader, Vec<StampedStream>), EpisodeIoError> {
    let (header, records): (_, Vec<RawRecord>) = read_jsonl(path, KIND_RAW)?;
    Ok((header, records_to_streams(&records)?))
}

pub fn write_aligned_frames(
    path: &Path,
    header: FileHeader,
    frames: &[AlignedFrame],
) -> Result<(), EpisodeIoError> {
    write_jsonl(path, &header, frames)
}

pub fn read_aligned_frames(
    path: &Path,
) -> Result<(FileHeader, Vec<AlignedFrame>), EpisodeIoError> {
    read_jsonl(path, KIND_ALIGNED)
}

pub fn write_results(
    path: &Path,
    header: FileHeader,
    results: &[EpisodeResult],
) -> Result<(), EpisodeIoError> {
    write_jsonl(path, &header, results)
}

pub fn read_results(path: &Path) -> Result<(FileHeader, Vec<EpisodeResult>), EpisodeIoError> {
    read_jsonl(path, KIND_RESULTS)
}

/// One decoded token stream per line: `{"episode_id": n, "tokens": [...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub episode_id: u64,
    pub tokens: Vec<u32>,
}

pub fn write_token_streams(
    path: &Path,
    header: FileHeader,
    records: &[TokenRecord],
) -> Result<(), EpisodeIoError> {
    write_jsonl(path, &header, records)
}

pub fn read_token_streams(
    path: &Path,
) -> Result<(FileHeader, Vec<TokenRecord>), EpisodeIoError> {
    read_jsonl(path, KIND_TOKENS)
}

/// Per-step decode latency, kept out of the deterministic result files.
pub fn write_timing_csv(
    path: &Path,
    rows: &[(u64, usize, f64)],
) -> Result<(), EpisodeIoError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "episode_id,step,micros").map_err(io_err(path))?;
    for (episode, step, micros) in rows {
        writeln!(w, "{episode},{step},{micros:.3}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Dropout report for one stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropoutReport {
    pub stream: String,
    pub gaps: Vec<Dropout>,
}

pub fn write_dropout_report(
    path: &Path,
    reports: &[DropoutReport],
) -> Result<(), EpisodeIoError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, reports).map_err(|source| EpisodeIoError::Json {
        path: path.to_path_buf(),
        line: 0,
        source,
    })?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_dropout_report(path: &Path) -> Result<Vec<DropoutReport>, EpisodeIoError> {
    let file = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| EpisodeIoError::Json {
        path: path.to_path_buf(),
        line: 0,
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Body, Se3};
    use nalgebra::Vector3;

    fn sample_streams() -> Vec<StampedStream> {
        let mut tracker = StampedStream::new("tracker", Some(60.0));
        let mut joints = StampedStream::new("joints", Some(120.0));
        for k in 0..5i64 {
            tracker
                .push(
                    k * 16_667,
                    Payload::Pose {
                        from: Body::Camera,
                        to: Body::Femur,
                        pose: Se3::from_translation(Vector3::new(k as f64, 0.0, 0.0)),
                    },
                )
                .unwrap();
            joints
                .push(
                    k * 8_333 + 1,
                    Payload::RobotState {
                        sample: crate::grammar::RobotStateSample::zeros(6),
                    },
                )
                .unwrap();
        }
        vec![tracker, joints]
    }

    #[test]
    fn raw_streams_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("episode_000.jsonl");
        let streams = sample_streams();
        let header = FileHeader::new(KIND_RAW).with("episode_id", 0u64).with("seed", 42u64);
        write_raw_streams(&path, header, &streams).unwrap();
        let (header, back) = read_raw_streams(&path).unwrap();
        assert_eq!(header.meta_u64("seed"), Some(42));
        // Stream ids and record contents survive; rate hints do not.
        assert_eq!(back.len(), 2);
        let tracker = back.iter().find(|s| s.id == "tracker").unwrap();
        assert_eq!(
            tracker.records(),
            streams.iter().find(|s| s.id == "tracker").unwrap().records()
        );
    }

    #[test]
    fn records_are_chronological_with_stable_ties() {
        let records = streams_to_records(&sample_streams());
        for w in records.windows(2) {
            assert!(
                w[0].t_us < w[1].t_us
                    || (w[0].t_us == w[1].t_us && w[0].stream <= w[1].stream)
            );
        }
    }

    #[test]
    fn kind_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        write_jsonl(&path, &FileHeader::new(KIND_RAW), Vec::<RawRecord>::new()).unwrap();
        let err = read_jsonl::<RawRecord>(&path, KIND_RESULTS).unwrap_err();
        assert!(matches!(err, EpisodeIoError::Kind { .. }));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            "{\"schema_version\":1,\"kind\":\"token_streams\"}\nnot json\n",
        )
        .unwrap();
        let err = read_token_streams(&path).unwrap_err();
        match err {
            EpisodeIoError::Json { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn token_streams_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tokens.jsonl");
        let records = vec![
            TokenRecord {
                episode_id: 0,
                tokens: vec![3, 267, 268, 269],
            },
            TokenRecord {
                episode_id: 1,
                tokens: vec![1],
            },
        ];
        write_token_streams(&path, FileHeader::new(KIND_TOKENS), &records).unwrap();
        let (_, back) = read_token_streams(&path).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn timing_csv_has_the_expected_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("timings.csv");
        write_timing_csv(&path, &[(0, 0, 123.456), (0, 1, 98.7)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("episode_id,step,micros"));
        assert_eq!(lines.next(), Some("0,0,123.456"));
    }

    #[test]
    fn dropout_report_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dropouts.json");
        let reports = vec![DropoutReport {
            stream: "tracker".into(),
            gaps: vec![crate::timeline::Dropout {
                start_us: 100,
                end_us: 600_100,
            }],
        }];
        write_dropout_report(&path, &reports).unwrap();
        assert_eq!(read_dropout_report(&path).unwrap(), reports);
    }
}
