//! Corpus I/O: captions in, distillation pairs and multi-choice CSV out.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::extraction::CaptionRecord;
use crate::extraction::ResponseRecord;
use crate::seeding::rng_from_seed;

pub const CSV_HEADER: [&str; 10] = [
    "video_id", "qid", "qtype", "question", "a0", "a1", "a2", "a3", "a4", "answer",
];
pub const DEFAULT_QTYPE: &str = "causal_why";
pub const NUM_OPTIONS: usize = 5;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate video_id {id:?}")]
    DuplicateId { id: String, line: usize },
    #[error("line {line}: empty {field}")]
    EmptyField { line: usize, field: &'static str },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("record {qid}: {reason}")]
    InvalidRecord { qid: String, reason: String },
    #[error("qid collision after namespacing: {0}")]
    QidCollision(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> DatasetError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => DatasetError::Io {
            path: path.display().to_string(),
            source,
        },
        kind => DatasetError::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

/// Write one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| DatasetError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Read one JSON object per line, skipping blank lines. Errors carry 1-based line numbers.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn push_caption(
    out: &mut Vec<CaptionRecord>,
    seen: &mut HashSet<String>,
    line: usize,
    video_id: &str,
    caption: &str,
) -> Result<(), DatasetError> {
    let video_id = video_id.trim();
    let caption = caption.trim();
    if video_id.is_empty() {
        return Err(DatasetError::EmptyField { line, field: "video_id" });
    }
    if caption.is_empty() {
        return Err(DatasetError::EmptyField { line, field: "caption" });
    }
    if !seen.insert(video_id.to_string()) {
        return Err(DatasetError::DuplicateId {
            id: video_id.to_string(),
            line,
        });
    }
    out.push(CaptionRecord {
        video_id: video_id.to_string(),
        caption: caption.to_string(),
    });
    Ok(())
}

/// Load captions from line-delimited `{video_id, caption}` records, or from a
/// two-column CSV when the file extension is `.csv` (header row optional).
pub fn load_captions(path: &Path) -> Result<Vec<CaptionRecord>, DatasetError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(|e| csv_err(path, e))?;
        for (i, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| csv_err(path, e))?;
            let line = row.position().map_or(i + 1, |p| p.line() as usize);
            if row.len() != 2 {
                return Err(DatasetError::Parse {
                    line,
                    message: format!("expected 2 columns, found {}", row.len()),
                });
            }
            if i == 0 && &row[0] == "video_id" && &row[1] == "caption" {
                continue;
            }
            push_caption(&mut out, &mut seen, line, &row[0], &row[1])?;
        }
    } else {
        #[derive(Deserialize)]
        struct Raw {
            video_id: String,
            caption: String,
        }
        let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: Raw = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            push_caption(&mut out, &mut seen, i + 1, &raw.video_id, &raw.caption)?;
        }
    }
    Ok(out)
}

pub fn write_captions(path: &Path, captions: &[CaptionRecord]) -> Result<(), DatasetError> {
    write_jsonl(path, captions)
}

/// Seeded shuffle, then the first `first_size` records form split A and the
/// rest split B.
pub fn split_corpus(
    captions: &[CaptionRecord],
    first_size: usize,
    seed: u64,
) -> Result<(Vec<CaptionRecord>, Vec<CaptionRecord>), DatasetError> {
    if first_size > captions.len() {
        return Err(DatasetError::InvalidConfig(format!(
            "first split size {first_size} exceeds corpus size {}",
            captions.len()
        )));
    }
    let mut shuffled = captions.to_vec();
    shuffled.shuffle(&mut rng_from_seed(seed));
    let rest = shuffled.split_off(first_size);
    Ok((shuffled, rest))
}

/// Caption → teacher response pair for fine-tuning a student LM.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistillPair {
    pub input: String,
    pub output: String,
}

/// Every surviving candidate becomes one pair.
pub fn distill_pairs(responses: &[ResponseRecord]) -> Vec<DistillPair> {
    responses
        .iter()
        .flat_map(|r| {
            r.candidates.iter().map(|c| DistillPair {
                input: r.caption.clone(),
                output: c.clone(),
            })
        })
        .collect()
}

pub fn export_distill_corpus(pairs: &[DistillPair], path: &Path) -> Result<usize, DatasetError> {
    if let Some(bad) = pairs
        .iter()
        .position(|p| p.input.trim().is_empty() || p.output.trim().is_empty())
    {
        return Err(DatasetError::EmptyField {
            line: bad + 1,
            field: "input/output",
        });
    }
    if pairs.is_empty() {
        tracing::warn!(path = %path.display(), "distillation corpus is empty");
    }
    write_jsonl(path, pairs)?;
    Ok(pairs.len())
}

pub fn import_distill_corpus(path: &Path) -> Result<Vec<DistillPair>, DatasetError> {
    read_jsonl(path)
}

/// One five-option multiple-choice question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqRecord {
    pub video_id: String,
    pub qid: String,
    pub qtype: String,
    pub question: String,
    pub options: [String; NUM_OPTIONS],
    pub answer: usize,
}

impl McqRecord {
    pub fn answer_text(&self) -> &str {
        &self.options[self.answer]
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |reason: String| DatasetError::InvalidRecord {
            qid: self.qid.clone(),
            reason,
        };
        if self.qid.trim().is_empty() {
            return Err(DatasetError::InvalidRecord {
                qid: "<empty>".into(),
                reason: "empty qid".into(),
            });
        }
        if self.video_id.trim().is_empty() || self.question.trim().is_empty() {
            return Err(bad("empty video_id or question".into()));
        }
        if self.answer >= NUM_OPTIONS {
            return Err(bad(format!("answer index {} out of range", self.answer)));
        }
        let mut seen = HashSet::new();
        for (i, o) in self.options.iter().enumerate() {
            let key = o.trim().to_lowercase();
            if key.is_empty() {
                return Err(bad(format!("option a{i} is empty")));
            }
            if !seen.insert(key) {
                return Err(bad(format!("option a{i} duplicates another option")));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    video_id: String,
    qid: String,
    qtype: String,
    question: String,
    a0: String,
    a1: String,
    a2: String,
    a3: String,
    a4: String,
    answer: usize,
}

impl From<&McqRecord> for CsvRow {
    fn from(r: &McqRecord) -> Self {
        let [a0, a1, a2, a3, a4] = r.options.clone();
        Self {
            video_id: r.video_id.clone(),
            qid: r.qid.clone(),
            qtype: r.qtype.clone(),
            question: r.question.clone(),
            a0,
            a1,
            a2,
            a3,
            a4,
            answer: r.answer,
        }
    }
}

impl From<CsvRow> for McqRecord {
    fn from(r: CsvRow) -> Self {
        Self {
            video_id: r.video_id,
            qid: r.qid,
            qtype: r.qtype,
            question: r.question,
            options: [r.a0, r.a1, r.a2, r.a3, r.a4],
            answer: r.answer,
        }
    }
}

/// Serialise records as CSV bytes. Header is fixed; fields are quoted only when needed.
pub fn to_csv_bytes(records: &[McqRecord]) -> Result<Vec<u8>, DatasetError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .has_headers(false)
        .from_writer(Vec::new());
    let wrap = |e: csv::Error| DatasetError::Parse {
        line: 0,
        message: e.to_string(),
    };
    w.write_record(CSV_HEADER).map_err(wrap)?;
    for r in records {
        r.validate()?;
        w.serialize(CsvRow::from(r)).map_err(wrap)?;
    }
    w.into_inner().map_err(|e| DatasetError::Parse {
        line: 0,
        message: e.to_string(),
    })
}

pub fn emit_csv(records: &[McqRecord], path: &Path) -> Result<(), DatasetError> {
    let bytes = to_csv_bytes(records)?;
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub fn load_csv(path: &Path) -> Result<Vec<McqRecord>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(DatasetError::Parse {
            line: 1,
            message: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let mut out = Vec::new();
    let mut qids = HashSet::new();
    for row in rdr.deserialize::<CsvRow>() {
        let rec: McqRecord = row.map_err(|e| csv_err(path, e))?.into();
        rec.validate()?;
        if !qids.insert(rec.qid.clone()) {
            return Err(DatasetError::InvalidRecord {
                qid: rec.qid,
                reason: "duplicate qid".into(),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn make_qid(video_id: &str, choice_index: u32) -> String {
    format!("{video_id}#{choice_index}")
}

/// Concatenate two datasets, prefixing each source's qids with `tag:`.
pub fn merge_datasets(
    a: &[McqRecord],
    tag_a: &str,
    b: &[McqRecord],
    tag_b: &str,
) -> Result<Vec<McqRecord>, DatasetError> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(a.len() + b.len());
    for (tag, records) in [(tag_a, a), (tag_b, b)] {
        for r in records {
            let qid = format!("{tag}:{}", r.qid);
            if !seen.insert(qid.clone()) {
                return Err(DatasetError::QidCollision(qid));
            }
            out.push(McqRecord { qid, ..r.clone() });
        }
    }
    Ok(out)
}
