//! Raw transcript ingestion and the speech-level exclusions that need no
//! model calls (chair speeches, duplicates).

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Chamber {
    Lower,
    Upper,
    Unicameral,
}

impl std::str::FromStr for Chamber {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lower" => Ok(Chamber::Lower),
            "upper" => Ok(Chamber::Upper),
            "unicameral" => Ok(Chamber::Unicameral),
            other => Err(format!("unknown chamber '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeechRecord {
    pub speech_id: String,
    pub country: String,
    pub chamber: Chamber,
    pub date: NaiveDate,
    pub year: i32,
    pub speaker: String,
    pub is_chair: bool,
    pub language: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub country: String,
    pub period: [i32; 2],
    pub source_files: Vec<PathBuf>,
    pub record_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Jsonl,
    Csv,
    Tsv,
}

impl InputFormat {
    fn infer(path: &Path) -> InputFormat {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
            Some(ext) if ext == "csv" => InputFormat::Csv,
            Some(ext) if ext == "tsv" || ext == "tab" => InputFormat::Tsv,
            _ => InputFormat::Jsonl,
        }
    }
}

/// Source column (or JSON key) for each [`SpeechRecord`] field.
///
/// `country`, `chamber` and `language` may be omitted when the whole file
/// shares one value supplied through [`FieldDefaults`]. Chairship comes either
/// from a boolean `is_chair` column or from a `role` column matched against
/// [`FieldMapping::chair_roles`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldNames {
    pub speech_id: String,
    #[serde(default)]
    pub country: Option<String>,
    #[serde(default)]
    pub chamber: Option<String>,
    pub date: String,
    pub speaker: String,
    #[serde(default)]
    pub is_chair: Option<String>,
    #[serde(default)]
    pub role: Option<String>,
    #[serde(default)]
    pub language: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FieldDefaults {
    pub country: Option<String>,
    pub chamber: Option<Chamber>,
    pub language: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldMapping {
    #[serde(default)]
    pub format: Option<InputFormat>,
    pub fields: FieldNames,
    #[serde(default)]
    pub chair_roles: Vec<String>,
    #[serde(default)]
    pub defaults: FieldDefaults,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub file: PathBuf,
    pub line: usize,
    pub reason: String,
    pub detail: String,
}

/// One data row: either a validated record or the reason it was rejected.
pub type RowOutcome = std::result::Result<SpeechRecord, Reject>;

trait RowSource {
    fn get(&self, key: &str) -> Option<Value>;
}

impl RowSource for serde_json::Map<String, Value> {
    fn get(&self, key: &str) -> Option<Value> {
        match serde_json::Map::get(self, key) {
            None | Some(Value::Null) => None,
            Some(v) => Some(v.clone()),
        }
    }
}

struct CsvRow<'a> {
    headers: &'a csv::StringRecord,
    record: csv::StringRecord,
}

impl RowSource for CsvRow<'_> {
    fn get(&self, key: &str) -> Option<Value> {
        let idx = self.headers.iter().position(|h| h == key)?;
        self.record.get(idx).map(|s| Value::String(s.to_string()))
    }
}

fn as_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn as_bool(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::Number(n) => n.as_i64().map(|i| i != 0),
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "true" | "t" | "yes" | "y" | "1" => Some(true),
            "false" | "f" | "no" | "n" | "0" | "" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

impl FieldMapping {
    fn build(&self, row: &dyn RowSource) -> std::result::Result<SpeechRecord, (String, String)> {
        let f = &self.fields;
        let required = |key: &str| -> std::result::Result<String, (String, String)> {
            row.get(key).map(|v| as_text(&v)).ok_or_else(|| (format!("missing_field:{key}"), format!("field '{key}' absent")))
        };
        let with_default = |key: &Option<String>, default: &Option<String>, name: &str| match key {
            Some(k) => required(k),
            None => default.clone().ok_or_else(|| (format!("missing_field:{name}"), format!("no column or default for {name}"))),
        };

        let speech_id = required(&f.speech_id)?;
        if speech_id.trim().is_empty() {
            return Err(("empty_id".into(), "speech id is empty".into()));
        }
        let country = with_default(&f.country, &self.defaults.country, "country")?;
        let language = with_default(&f.language, &self.defaults.language, "language")?;
        let chamber = match &f.chamber {
            Some(k) => required(k)?.parse::<Chamber>().map_err(|e| ("invalid_chamber".to_string(), e))?,
            None => self
                .defaults
                .chamber
                .ok_or_else(|| ("missing_field:chamber".to_string(), "no column or default for chamber".to_string()))?,
        };
        let raw_date = required(&f.date)?;
        let date = NaiveDate::parse_from_str(raw_date.trim(), "%Y-%m-%d")
            .map_err(|e| ("invalid_date".to_string(), format!("{raw_date:?}: {e}")))?;
        let speaker = required(&f.speaker)?;
        let is_chair = if let Some(k) = &f.is_chair {
            let v = row.get(k).ok_or_else(|| (format!("missing_field:{k}"), format!("field '{k}' absent")))?;
            as_bool(&v).ok_or_else(|| ("invalid_chair_flag".to_string(), format!("{v}")))?
        } else if let Some(k) = &f.role {
            let role = row.get(k).map(|v| as_text(&v)).unwrap_or_default();
            let role = role.trim().to_lowercase();
            self.chair_roles.iter().any(|r| r.trim().to_lowercase() == role)
        } else {
            false
        };
        let text = required(&f.text)?;
        if text.trim().is_empty() {
            return Err(("empty_text".into(), "text is empty after trimming".into()));
        }
        Ok(SpeechRecord { speech_id, country, chamber, year: date.year(), date, speaker, is_chair, language, text })
    }
}

enum Source {
    Jsonl(std::io::Lines<BufReader<File>>),
    Delimited { reader: csv::Reader<File>, headers: csv::StringRecord },
}

/// Streaming reader over one corpus file.
///
/// Yields one [`RowOutcome`] per non-blank data row in file order; fatal
/// problems (unreadable file, invalid UTF-8) surface as `Err` and end the
/// stream.
pub struct CorpusReader {
    path: PathBuf,
    mapping: FieldMapping,
    source: Source,
    line: usize,
    seen_ids: HashSet<String>,
    done: bool,
}

impl CorpusReader {
    pub fn open(path: impl AsRef<Path>, mapping: &FieldMapping) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let format = mapping.format.unwrap_or_else(|| InputFormat::infer(&path));
        let source = match format {
            InputFormat::Jsonl => Source::Jsonl(BufReader::new(file).lines()),
            InputFormat::Csv | InputFormat::Tsv => {
                let delim = if format == InputFormat::Csv { b',' } else { b'\t' };
                let mut reader = csv::ReaderBuilder::new().delimiter(delim).flexible(true).from_reader(file);
                let headers = reader.headers().map_err(|e| csv_fatal(&path, 1, e))?.clone();
                Source::Delimited { reader, headers }
            }
        };
        Ok(CorpusReader { path, mapping: mapping.clone(), source, line: 0, seen_ids: HashSet::new(), done: false })
    }

    fn reject(&self, line: usize, reason: impl Into<String>, detail: impl Into<String>) -> Reject {
        Reject { file: self.path.clone(), line, reason: reason.into(), detail: detail.into() }
    }

    fn finish_row(&mut self, line: usize, built: std::result::Result<SpeechRecord, (String, String)>) -> RowOutcome {
        match built {
            Ok(rec) => {
                if !self.seen_ids.insert(rec.speech_id.clone()) {
                    let id = rec.speech_id;
                    return Err(self.reject(line, "duplicate_speech_id", id));
                }
                Ok(rec)
            }
            Err((reason, detail)) => Err(self.reject(line, reason, detail)),
        }
    }
}

fn csv_fatal(path: &Path, line: usize, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Utf8 { pos, .. } => {
            Error::Encoding { path: path.to_path_buf(), line: pos.as_ref().map(|p| p.line() as usize).unwrap_or(line) }
        }
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => Error::Validation(format!("{}: {e}", path.display())),
    }
}

impl Iterator for CorpusReader {
    type Item = Result<RowOutcome>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            match &mut self.source {
                Source::Jsonl(lines) => {
                    let next = lines.next()?;
                    self.line += 1;
                    let line_no = self.line;
                    let text = match next {
                        Ok(t) => t,
                        Err(e) if e.kind() == std::io::ErrorKind::InvalidData => {
                            self.done = true;
                            return Some(Err(Error::Encoding { path: self.path.clone(), line: line_no }));
                        }
                        Err(e) => {
                            self.done = true;
                            return Some(Err(Error::io(&self.path, e)));
                        }
                    };
                    if text.trim().is_empty() {
                        continue;
                    }
                    let parsed: std::result::Result<serde_json::Map<String, Value>, _> = serde_json::from_str(&text);
                    let outcome = match parsed {
                        Ok(obj) => {
                            let built = self.mapping.build(&obj);
                            self.finish_row(line_no, built)
                        }
                        Err(e) => Err(self.reject(line_no, "malformed_json", e.to_string())),
                    };
                    return Some(Ok(outcome));
                }
                Source::Delimited { reader, headers } => {
                    let mut record = csv::StringRecord::new();
                    match reader.read_record(&mut record) {
                        Ok(false) => return None,
                        Ok(true) => {
                            let line_no = record.position().map(|p| p.line() as usize).unwrap_or(0);
                            if record.iter().all(|f| f.trim().is_empty()) {
                                continue;
                            }
                            let row = CsvRow { headers, record };
                            let built = self.mapping.build(&row);
                            return Some(Ok(self.finish_row(line_no, built)));
                        }
                        Err(e) => {
                            let line_no = e.position().map(|p| p.line() as usize).unwrap_or(0);
                            if matches!(e.kind(), csv::ErrorKind::Utf8 { .. } | csv::ErrorKind::Io(_)) {
                                self.done = true;
                                return Some(Err(csv_fatal(&self.path, line_no, e)));
                            }
                            return Some(Ok(Err(self.reject(line_no, "malformed_row", e.to_string()))));
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CorpusRead {
    pub records: Vec<SpeechRecord>,
    pub rejects: Vec<Reject>,
}

/// Reads a whole file, splitting validated records from row-level rejects.
pub fn read_corpus(path: impl AsRef<Path>, mapping: &FieldMapping) -> Result<CorpusRead> {
    let mut out = CorpusRead::default();
    for row in CorpusReader::open(path, mapping)? {
        match row? {
            Ok(rec) => out.records.push(rec),
            Err(rej) => out.rejects.push(rej),
        }
    }
    Ok(out)
}

/// Keeps non-chair speeches in input order; returns them with the number removed.
pub fn drop_chair_speeches(records: impl IntoIterator<Item = SpeechRecord>) -> (Vec<SpeechRecord>, usize) {
    let mut removed = 0;
    let kept = records
        .into_iter()
        .filter(|r| {
            if r.is_chair {
                removed += 1;
            }
            !r.is_chair
        })
        .collect();
    (kept, removed)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DedupScope {
    /// Duplicates are only detected within one country's corpus.
    #[default]
    Country,
    Global,
}

/// Trim and collapse every whitespace run to a single space.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// First-wins duplicate detector keyed by normalized text.
///
/// Keeps a 128-bit digest per distinct text rather than the text itself.
#[derive(Debug, Default)]
pub struct Deduper {
    scope: DedupScope,
    seen: HashSet<(String, [u8; 16])>,
}

impl Deduper {
    pub fn new(scope: DedupScope) -> Self {
        Deduper { scope, seen: HashSet::new() }
    }

    /// True when the record is the first occurrence of its text.
    pub fn admit(&mut self, record: &SpeechRecord) -> bool {
        let digest = Sha256::digest(normalize_text(&record.text).as_bytes());
        let mut key = [0u8; 16];
        key.copy_from_slice(&digest[..16]);
        let group = match self.scope {
            DedupScope::Country => record.country.clone(),
            DedupScope::Global => String::new(),
        };
        self.seen.insert((group, key))
    }
}

pub fn dedup(records: impl IntoIterator<Item = SpeechRecord>, scope: DedupScope) -> (Vec<SpeechRecord>, usize) {
    let mut deduper = Deduper::new(scope);
    let mut removed = 0;
    let kept = records
        .into_iter()
        .filter(|r| {
            let first = deduper.admit(r);
            if !first {
                removed += 1;
            }
            first
        })
        .collect();
    (kept, removed)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rejected: usize,
    pub chair_removed: usize,
    pub dedup_removed: usize,
    pub emitted: usize,
}

impl IngestReport {
    pub fn is_conserved(&self) -> bool {
        self.rows_read == self.emitted + self.rejected + self.chair_removed + self.dedup_removed
    }
}

#[derive(Debug, Clone, Default)]
pub struct IngestOutput {
    pub records: Vec<SpeechRecord>,
    pub rejects: Vec<Reject>,
    pub report: IngestReport,
    pub manifests: Vec<CorpusManifest>,
}

/// Reads every file in the given order, drops chair speeches, and removes
/// duplicates in one merged pass so the result is independent of how files
/// are split.
pub fn ingest(paths: &[PathBuf], mapping: &FieldMapping, scope: DedupScope) -> Result<IngestOutput> {
    let mut out = IngestOutput::default();
    let mut deduper = Deduper::new(scope);
    let mut per_country: BTreeMap<String, (i32, i32, Vec<PathBuf>, usize)> = BTreeMap::new();

    for path in paths {
        for row in CorpusReader::open(path, mapping)? {
            out.report.rows_read += 1;
            let rec = match row? {
                Ok(rec) => rec,
                Err(rej) => {
                    out.report.rejected += 1;
                    out.rejects.push(rej);
                    continue;
                }
            };
            let entry = per_country.entry(rec.country.clone()).or_insert_with(|| (rec.year, rec.year, Vec::new(), 0));
            entry.0 = entry.0.min(rec.year);
            entry.1 = entry.1.max(rec.year);
            entry.3 += 1;
            if !entry.2.contains(path) {
                entry.2.push(path.clone());
            }
            if rec.is_chair {
                out.report.chair_removed += 1;
                continue;
            }
            if !deduper.admit(&rec) {
                out.report.dedup_removed += 1;
                continue;
            }
            out.records.push(rec);
        }
    }
    out.report.emitted = out.records.len();
    if out.report.chair_removed > 0 {
        tracing::info!(removed = out.report.chair_removed, "chair speeches removed");
    }
    out.manifests = per_country
        .into_iter()
        .map(|(country, (lo, hi, files, n))| CorpusManifest { country, period: [lo, hi], source_files: files, record_count: n })
        .collect();
    Ok(out)
}
