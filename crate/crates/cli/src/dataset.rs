//! JSON-lines datasets.
//!
//! A file holds one record per line:
//!
//! ```text
//! {"x": {"scalar": 0.3}, "y": {"tokens": ["A", "B"]}, "y_model": {"tokens": []}}
//! ```
//!
//! `x` is `{"scalar": f}`, `{"embedding": [f, ...]}` or `{"tokens": [s, ...]}`;
//! outcomes carry `tokens` plus an optional pre-pooled `embedding` or a
//! `per_position` matrix that is mean-pooled on load. Reliability records
//! add `model_samples`, a list of outcomes. Any other top-level keys are kept
//! as labels for grouping.
//!
//! An optional first line `# {...}` declares the alphabet (`alphabet`,
//! `terminal`) and embedding dimension (`embedding_dim`); without it the
//! alphabet is the sorted set of tokens seen in the file. Other lines
//! starting with `#` and blank lines are ignored.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use acmmd::estimator::{Outcome, Triplet};
use acmmd::kernels::mean_pool;
use acmmd::reliability::ReliabilityRecord;
use acmmd::{Alphabet, Item, Sequence};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("empty dataset")]
    Empty,
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// Which record fields a command needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// `x`, `y`, `y_model`.
    Triplets,
    /// `y`, `y_model`, `model_samples`.
    Reliability,
}

/// Optional first-line metadata.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Header {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphabet: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputJson {
    Scalar(f64),
    Embedding(Vec<f64>),
    Tokens(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeJson {
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_position: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<InputJson>,
    pub y: OutcomeJson,
    pub y_model: OutcomeJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_samples: Option<Vec<OutcomeJson>>,
    #[serde(flatten)]
    pub labels: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Records {
    Triplets(Vec<Triplet>),
    Reliability(Vec<ReliabilityRecord>),
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub alphabet: Arc<Alphabet>,
    pub header: Header,
    pub records: Records,
    /// Extra top-level keys of every record, in file order.
    pub labels: Vec<Map<String, Value>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Group label of every record under `key`; strings are used verbatim,
    /// other JSON values in their compact serialization.
    pub fn group_labels(&self, key: &str) -> Result<Vec<String>, DataError> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, m)| match m.get(key) {
                Some(Value::String(s)) => Ok(s.clone()),
                Some(v) => Ok(v.to_string()),
                None => Err(DataError::Invalid(format!("record {} has no group key {key:?}", i + 1))),
            })
            .collect()
    }
}

pub fn load_dataset(path: &Path, shape: Shape) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(std::io::BufReader::new(file), shape)
}

pub fn parse_dataset(reader: impl BufRead, shape: Shape) -> Result<Dataset, DataError> {
    let mut header = Header::default();
    let mut raw: Vec<(usize, RecordJson)> = Vec::new();
    let mut first_content = true;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| DataError::Line {
            line: line_no,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            let comment = comment.trim();
            if first_content && comment.starts_with('{') {
                header = serde_json::from_str(comment).map_err(|e| DataError::Line {
                    line: line_no,
                    message: format!("invalid header: {e}"),
                })?;
            }
            first_content = false;
            continue;
        }
        first_content = false;
        let rec: RecordJson = serde_json::from_str(trimmed).map_err(|e| DataError::Line {
            line: line_no,
            message: e.to_string(),
        })?;
        raw.push((line_no, rec));
    }
    if raw.is_empty() {
        return Err(DataError::Empty);
    }
    let alphabet = Arc::new(build_alphabet(&header, &raw)?);

    let with_samples = raw.iter().filter(|(_, r)| r.model_samples.is_some()).count();
    if with_samples != 0 && with_samples != raw.len() {
        let (line, _) = raw
            .iter()
            .find(|(_, r)| r.model_samples.is_none())
            .expect("some record lacks samples");
        return Err(DataError::Line {
            line: *line,
            message: "mixed record shapes: missing field `model_samples` present on other lines".into(),
        });
    }

    let mut dims = DimCheck::new(header.embedding_dim);
    let mut x_dim = DimCheck::new(None);
    let mut labels = Vec::with_capacity(raw.len());
    let records = match shape {
        Shape::Triplets => {
            let mut out = Vec::with_capacity(raw.len());
            for (line, rec) in raw {
                let at = |message: String| DataError::Line { line, message };
                let x = match rec.x {
                    None => return Err(at("missing field `x`".into())),
                    Some(InputJson::Scalar(v)) => Item::Vector(vec![v]),
                    Some(InputJson::Embedding(v)) => {
                        x_dim.check(v.len()).map_err(|m| at(format!("x: {m}")))?;
                        Item::Vector(v)
                    }
                    Some(InputJson::Tokens(t)) => Item::Tokens(parse_tokens(&alphabet, &t).map_err(at)?),
                };
                let y = outcome(&alphabet, rec.y, &mut dims).map_err(|m| at(format!("y: {m}")))?;
                let m = outcome(&alphabet, rec.y_model, &mut dims).map_err(|m| at(format!("y_model: {m}")))?;
                labels.push(rec.labels);
                out.push(Triplet::new(x, y, m));
            }
            Records::Triplets(out)
        }
        Shape::Reliability => {
            let mut out = Vec::with_capacity(raw.len());
            for (line, rec) in raw {
                let at = |message: String| DataError::Line { line, message };
                let samples = rec
                    .model_samples
                    .ok_or_else(|| at("missing field `model_samples`".into()))?;
                let y = outcome(&alphabet, rec.y, &mut dims).map_err(|m| at(format!("y: {m}")))?;
                let m = outcome(&alphabet, rec.y_model, &mut dims).map_err(|m| at(format!("y_model: {m}")))?;
                let samples = samples
                    .into_iter()
                    .map(|s| outcome(&alphabet, s, &mut dims))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|m| at(format!("model_samples: {m}")))?;
                labels.push(rec.labels);
                out.push(ReliabilityRecord::new(y, m, samples));
            }
            Records::Reliability(out)
        }
    };
    Ok(Dataset {
        alphabet,
        header,
        records,
        labels,
    })
}

fn build_alphabet(header: &Header, raw: &[(usize, RecordJson)]) -> Result<Alphabet, DataError> {
    let invalid = |e: acmmd::Error| DataError::Invalid(format!("header alphabet: {e}"));
    if let Some(symbols) = &header.alphabet {
        let mut symbols = symbols.clone();
        if let Some(t) = &header.terminal {
            if !symbols.contains(t) {
                symbols.push(t.clone());
            }
        }
        return Alphabet::new(&symbols, header.terminal.as_deref()).map_err(invalid);
    }
    let mut seen = BTreeSet::new();
    for (_, r) in raw {
        let outcomes = [&r.y, &r.y_model]
            .into_iter()
            .chain(r.model_samples.iter().flatten());
        for o in outcomes {
            seen.extend(o.tokens.iter().cloned());
        }
        if let Some(InputJson::Tokens(t)) = &r.x {
            seen.extend(t.iter().cloned());
        }
    }
    if let Some(t) = &header.terminal {
        seen.remove(t);
    }
    let mut symbols: Vec<String> = seen.into_iter().collect();
    if symbols.is_empty() {
        // every sequence is empty; any one-symbol alphabet will do
        symbols.push("<tok>".into());
    }
    if let Some(t) = &header.terminal {
        symbols.push(t.clone());
    }
    Alphabet::new(&symbols, header.terminal.as_deref()).map_err(invalid)
}

struct DimCheck(Option<usize>);

impl DimCheck {
    fn new(declared: Option<usize>) -> Self {
        DimCheck(declared)
    }

    fn check(&mut self, dim: usize) -> Result<(), String> {
        match self.0 {
            Some(d) if d != dim => Err(format!("inconsistent embedding dimension: {dim} vs {d}")),
            _ => {
                self.0 = Some(dim);
                Ok(())
            }
        }
    }
}

fn parse_tokens(alphabet: &Arc<Alphabet>, tokens: &[String]) -> Result<Sequence, String> {
    Sequence::parse(alphabet, tokens).map_err(|e| e.to_string())
}

fn outcome(alphabet: &Arc<Alphabet>, o: OutcomeJson, dims: &mut DimCheck) -> Result<Outcome, String> {
    let tokens = parse_tokens(alphabet, &o.tokens)?;
    let embedding = match (o.embedding, o.per_position) {
        (Some(_), Some(_)) => return Err("give either `embedding` or `per_position`, not both".into()),
        (Some(e), None) => Some(e),
        (None, Some(rows)) => Some(mean_pool(&rows).map_err(|e| e.to_string())?),
        (None, None) => None,
    };
    match embedding {
        Some(e) => {
            if e.iter().any(|v| !v.is_finite()) {
                return Err("embedding contains non-finite values".into());
            }
            dims.check(e.len())?;
            Ok(Outcome::with_embedding(tokens, e))
        }
        None => Ok(Outcome::new(tokens)),
    }
}

pub fn outcome_json(o: &Outcome) -> OutcomeJson {
    OutcomeJson {
        tokens: o.tokens.tokens().map(str::to_string).collect(),
        embedding: o.embedding.clone(),
        per_position: None,
    }
}

fn input_json(x: &Item) -> InputJson {
    match x {
        Item::Vector(v) if v.len() == 1 => InputJson::Scalar(v[0]),
        Item::Vector(v) => InputJson::Embedding(v.clone()),
        Item::Tokens(s) => InputJson::Tokens(s.tokens().map(str::to_string).collect()),
        Item::Samples(_) => unreachable!("sample-set inputs are not stored in datasets"),
    }
}

/// Header declaring `alphabet`'s symbols and terminal.
pub fn header_for(alphabet: &Alphabet, extra: Map<String, Value>) -> Header {
    Header {
        alphabet: Some(alphabet.tokens().to_vec()),
        terminal: alphabet.terminal().map(str::to_string),
        embedding_dim: None,
        extra,
    }
}

pub fn write_header(out: &mut impl Write, header: &Header) -> std::io::Result<()> {
    writeln!(out, "# {}", serde_json::to_string(header)?)
}

pub fn write_record(out: &mut impl Write, record: &RecordJson) -> std::io::Result<()> {
    writeln!(out, "{}", serde_json::to_string(record)?)
}

pub fn triplet_json(t: &Triplet) -> RecordJson {
    RecordJson {
        x: Some(input_json(&t.x)),
        y: outcome_json(&t.y),
        y_model: outcome_json(&t.y_model),
        model_samples: None,
        labels: Map::new(),
    }
}

pub fn reliability_json(x: Option<&Item>, r: &ReliabilityRecord) -> RecordJson {
    RecordJson {
        x: x.map(input_json),
        y: outcome_json(&r.y),
        y_model: outcome_json(&r.y_model),
        model_samples: Some(r.model_samples.iter().map(outcome_json).collect()),
        labels: Map::new(),
    }
}
