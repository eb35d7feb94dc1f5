//! Labeled multivariate event sequences: loading, schema inference, value
//! binning and model-input encoding.
//!
//! Files are in long format, one event per row. Required columns are `id`,
//! `t` (1-based timestep) and `label` (`pos` or `neg`); every other column is
//! an attribute. Instances are grouped by id and ordered by id, events by `t`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Default number of quantile bins for numerical attributes.
pub const DEFAULT_NUMERIC_BINS: usize = 9;

const RESERVED_COLUMNS: [&str; 3] = ["id", "t", "label"];

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("row {row}: {message}")]
    Parse { row: u64, message: String },
    #[error("row {row}: missing value for column `{column}`")]
    MissingColumn { row: u64, column: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("instance `{id}` has {len} events, more than the declared maximum of {max}")]
    Bounds { id: String, len: usize, max: usize },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("instance `{instance}`: value `{value}` is not a known level of attribute `{attribute}`")]
    UnknownLevel {
        attribute: String,
        value: String,
        instance: String,
    },
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "pos")]
    Positive,
    #[serde(rename = "neg")]
    Negative,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Positive, Label::Negative];

    /// Output-unit index of the class: positive is 0, negative is 1.
    pub fn index(self) -> usize {
        match self {
            Label::Positive => 0,
            Label::Negative => 1,
        }
    }

    pub fn from_index(index: usize) -> Label {
        if index == 0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "pos",
            Label::Negative => "neg",
        }
    }

    pub fn parse(token: &str) -> Option<Label> {
        match token.trim() {
            "pos" => Some(Label::Positive),
            "neg" => Some(Label::Negative),
            _ => None,
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Positive => Label::Negative,
            Label::Negative => Label::Positive,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Categorical,
    Ordinal,
    Numerical,
}

/// Name, statistical type and value levels of one attribute.
///
/// Categorical and ordinal attributes carry their level labels in display
/// order. Numerical attributes carry ascending bin edges; their levels are the
/// half-open bins between consecutive edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub name: String,
    pub kind: AttributeKind,
    pub levels: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bin_edges: Vec<f64>,
}

impl AttributeSchema {
    pub fn categorical(name: impl Into<String>, levels: Vec<String>) -> Result<Self> {
        Self::with_levels(name.into(), AttributeKind::Categorical, levels)
    }

    pub fn ordinal(name: impl Into<String>, levels: Vec<String>) -> Result<Self> {
        Self::with_levels(name.into(), AttributeKind::Ordinal, levels)
    }

    fn with_levels(name: String, kind: AttributeKind, levels: Vec<String>) -> Result<Self> {
        if levels.is_empty() {
            return Err(DatasetError::Schema(format!("attribute `{name}` has no levels")));
        }
        let unique: BTreeSet<&String> = levels.iter().collect();
        if unique.len() != levels.len() {
            return Err(DatasetError::Schema(format!("attribute `{name}` has duplicate levels")));
        }
        Ok(AttributeSchema {
            name,
            kind,
            levels,
            bin_edges: Vec::new(),
        })
    }

    pub fn numerical(name: impl Into<String>, bin_edges: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if bin_edges.len() < 2 {
            return Err(DatasetError::Schema(format!(
                "numerical attribute `{name}` needs at least two bin edges"
            )));
        }
        if bin_edges.iter().any(|e| !e.is_finite()) || bin_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DatasetError::Schema(format!(
                "bin edges of `{name}` must be finite and strictly ascending"
            )));
        }
        let levels = bin_edges.windows(2).map(|w| format!("[{}, {})", w[0], w[1])).collect();
        Ok(AttributeSchema {
            name,
            kind: AttributeKind::Numerical,
            levels,
            bin_edges,
        })
    }

    pub fn level_count(&self) -> usize {
        match self.kind {
            AttributeKind::Numerical => self.bin_edges.len() - 1,
            _ => self.levels.len(),
        }
    }

    /// Width of this attribute's slot in an encoded event.
    pub fn encoded_width(&self) -> usize {
        match self.kind {
            AttributeKind::Numerical => 1,
            _ => self.level_count(),
        }
    }

    /// Level index of a raw value.
    ///
    /// Numerical values fall in the half-open bin `[e_k, e_{k+1})` that
    /// contains them; values outside the edge range clamp to the first or
    /// last bin.
    pub fn bin_level(&self, raw: &str) -> Option<usize> {
        match self.kind {
            AttributeKind::Categorical => self.levels.iter().position(|l| l == raw),
            AttributeKind::Ordinal => self.levels.iter().position(|l| l == raw).or_else(|| {
                let value = parse_finite(raw)?;
                self.levels.iter().position(|l| parse_finite(l) == Some(value))
            }),
            AttributeKind::Numerical => {
                let value = parse_finite(raw)?;
                Some(self.bin_numeric(value))
            }
        }
    }

    fn bin_numeric(&self, value: f64) -> usize {
        let above = self.bin_edges.partition_point(|e| *e <= value);
        above.saturating_sub(1).min(self.level_count() - 1)
    }

    /// Min-max scaling of a numerical value into `[0, 1]` over the edge range.
    fn scale(&self, value: f64) -> f64 {
        let lo = self.bin_edges[0];
        let hi = self.bin_edges[self.bin_edges.len() - 1];
        ((value - lo) / (hi - lo)).clamp(0.0, 1.0)
    }
}

/// Index of a value level within one attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LevelIndex {
    pub attribute: usize,
    pub level: usize,
}

/// Raw values of one event, one per schema attribute, before binning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub values: Vec<String>,
}

impl Event {
    pub fn new<S: Into<String>>(values: impl IntoIterator<Item = S>) -> Self {
        Event {
            values: values.into_iter().map(Into::into).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceInstance {
    pub id: String,
    pub events: Vec<Event>,
    pub label: Label,
}

impl SequenceInstance {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Model input for one event: one-hot blocks for categorical and ordinal
/// attributes, one scaled scalar per numerical attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedEvent(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
struct EncodedInstance {
    inputs: Vec<Vec<f64>>,
    levels: Vec<Vec<usize>>,
}

/// An immutable, validated corpus: schema, instances, and their cached
/// encodings and level indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Vec<AttributeSchema>,
    instances: Vec<SequenceInstance>,
    encoded: Vec<EncodedInstance>,
    max_len: usize,
    input_dim: usize,
}

impl Dataset {
    /// Validates every instance against the schema and caches encodings.
    pub fn new(schema: Vec<AttributeSchema>, instances: Vec<SequenceInstance>) -> Result<Self> {
        if schema.is_empty() {
            return Err(DatasetError::Schema("schema has no attributes".into()));
        }
        let mut names = BTreeSet::new();
        for attr in &schema {
            if !names.insert(attr.name.as_str()) {
                return Err(DatasetError::Schema(format!(
                    "duplicate attribute name `{}`",
                    attr.name
                )));
            }
        }
        let input_dim = schema.iter().map(AttributeSchema::encoded_width).sum();
        let mut encoded = Vec::with_capacity(instances.len());
        let mut ids = BTreeSet::new();
        for inst in &instances {
            if !ids.insert(inst.id.as_str()) {
                return Err(DatasetError::Integrity(format!("duplicate instance id `{}`", inst.id)));
            }
            if inst.events.is_empty() {
                return Err(DatasetError::Integrity(format!("instance `{}` has no events", inst.id)));
            }
            let mut inputs = Vec::with_capacity(inst.events.len());
            let mut levels = Vec::with_capacity(inst.events.len());
            for event in &inst.events {
                let (vector, lv) = encode_checked(event, &schema, &inst.id)?;
                inputs.push(vector);
                levels.push(lv);
            }
            encoded.push(EncodedInstance { inputs, levels });
        }
        let max_len = instances.iter().map(SequenceInstance::len).max().unwrap_or(0);
        let dataset = Dataset {
            schema,
            instances,
            encoded,
            max_len,
            input_dim,
        };
        if !dataset.instances.is_empty() && dataset.class_counts().contains(&0) {
            log::warn!("dataset contains a single class; class comparison modes will be one-sided");
        }
        Ok(dataset)
    }

    pub fn schema(&self) -> &[AttributeSchema] {
        &self.schema
    }

    pub fn instances(&self) -> &[SequenceInstance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Maximum sequence length `T`.
    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Encoded input dimension `D`.
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Encoded events of instance `index`, one vector per valid step.
    pub fn inputs(&self, index: usize) -> &[Vec<f64>] {
        &self.encoded[index].inputs
    }

    /// Level of attribute `attr` at step `step` (0-based) of instance `index`.
    pub fn level(&self, index: usize, step: usize, attr: usize) -> usize {
        self.encoded[index].levels[step][attr]
    }

    /// Level indices of all attributes at step `step` of instance `index`.
    pub fn levels(&self, index: usize, step: usize) -> &[usize] {
        &self.encoded[index].levels[step]
    }

    /// Instance counts as `[positive, negative]`.
    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0; 2];
        for inst in &self.instances {
            counts[inst.label.index()] += 1;
        }
        counts
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|a| a.name == name)
    }

    /// Writes the corpus back out in long CSV format.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|source| io_err(path, source))?;
        let mut writer = csv::Writer::from_writer(BufWriter::new(file));
        let mut header: Vec<&str> = RESERVED_COLUMNS.to_vec();
        header.extend(self.schema.iter().map(|a| a.name.as_str()));
        let write_err = |e: csv::Error| DatasetError::Integrity(format!("csv write failed: {e}"));
        writer.write_record(&header).map_err(write_err)?;
        for inst in &self.instances {
            for (step, event) in inst.events.iter().enumerate() {
                let t = (step + 1).to_string();
                let mut record = vec![inst.id.as_str(), t.as_str(), inst.label.as_str()];
                record.extend(event.values.iter().map(String::as_str));
                writer.write_record(&record).map_err(write_err)?;
            }
        }
        writer.flush().map_err(|source| io_err(path, source))
    }

    /// Writes the corpus as JSON lines, one event object per line.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|source| io_err(path, source))?;
        let mut out = BufWriter::new(file);
        for inst in &self.instances {
            for (step, event) in inst.events.iter().enumerate() {
                let mut obj = serde_json::Map::new();
                obj.insert("id".into(), inst.id.clone().into());
                obj.insert("t".into(), (step + 1).into());
                obj.insert("label".into(), inst.label.as_str().into());
                for (attr, value) in self.schema.iter().zip(&event.values) {
                    obj.insert(attr.name.clone(), value.clone().into());
                }
                let line = serde_json::Value::Object(obj).to_string();
                writeln!(out, "{line}").map_err(|source| io_err(path, source))?;
            }
        }
        out.flush().map_err(|source| io_err(path, source))
    }
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_finite(token: &str) -> Option<f64> {
    token.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Level index of a raw value, or an unknown-level error.
pub fn bin_level(attr: &AttributeSchema, raw: &str) -> Result<usize> {
    attr.bin_level(raw).ok_or_else(|| DatasetError::UnknownLevel {
        attribute: attr.name.clone(),
        value: raw.to_string(),
        instance: String::new(),
    })
}

/// Encodes one event against the schema.
pub fn encode_event(event: &Event, schema: &[AttributeSchema]) -> Result<EncodedEvent> {
    encode_checked(event, schema, "").map(|(v, _)| EncodedEvent(v))
}

fn encode_checked(event: &Event, schema: &[AttributeSchema], instance: &str) -> Result<(Vec<f64>, Vec<usize>)> {
    if event.values.len() != schema.len() {
        return Err(DatasetError::Integrity(format!(
            "instance `{instance}`: event has {} values, schema has {} attributes",
            event.values.len(),
            schema.len()
        )));
    }
    let mut vector = Vec::with_capacity(schema.iter().map(AttributeSchema::encoded_width).sum());
    let mut levels = Vec::with_capacity(schema.len());
    for (attr, raw) in schema.iter().zip(&event.values) {
        let level = attr.bin_level(raw).ok_or_else(|| DatasetError::UnknownLevel {
            attribute: attr.name.clone(),
            value: raw.clone(),
            instance: instance.to_string(),
        })?;
        levels.push(level);
        match attr.kind {
            AttributeKind::Numerical => {
                // bin_level already rejected non-finite tokens
                let value = parse_finite(raw).unwrap_or_default();
                vector.push(attr.scale(value));
            }
            _ => {
                let start = vector.len();
                vector.resize(start + attr.level_count(), 0.0);
                vector[start + level] = 1.0;
            }
        }
    }
    Ok((vector, levels))
}

/// Linear-interpolated quantiles at `k / bins` for `k = 0..=bins`, with
/// coinciding edges merged.
pub fn quantile_edges(values: &[f64], bins: usize) -> Vec<f64> {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut edges: Vec<f64> = Vec::with_capacity(bins + 1);
    for k in 0..=bins {
        let pos = (n - 1) as f64 * k as f64 / bins as f64;
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        let edge = if lo + 1 < n {
            sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
        } else {
            sorted[n - 1]
        };
        if edges.last().is_none_or(|last| edge > *last) {
            edges.push(edge);
        }
    }
    edges
}

/// Infers one attribute's schema from its raw column values.
///
/// Columns containing any non-numeric token are categorical with sorted
/// unique levels. Numeric columns with at most `numeric_bins` distinct values
/// are ordinal; wider ones get quantile bin edges.
pub fn infer_attribute(name: &str, values: &[&str], numeric_bins: usize) -> Result<AttributeSchema> {
    if numeric_bins == 0 {
        return Err(DatasetError::Schema("numeric bin count must be positive".into()));
    }
    if values.is_empty() {
        return Err(DatasetError::Schema(format!("column `{name}` is empty")));
    }
    let parsed: Vec<Option<f64>> = values.iter().map(|v| parse_finite(v)).collect();
    let numeric_count = parsed.iter().filter(|p| p.is_some()).count();
    if numeric_count < values.len() {
        if numeric_count > 0 {
            log::warn!("column `{name}` mixes numeric and non-numeric values; treating it as categorical");
        }
        let levels: BTreeSet<&str> = values.iter().copied().collect();
        return AttributeSchema::categorical(name, levels.into_iter().map(String::from).collect());
    }
    let numbers: Vec<f64> = parsed.into_iter().flatten().collect();
    let mut distinct = numbers.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() <= numeric_bins {
        let levels = distinct.iter().map(|v| v.to_string()).collect();
        return AttributeSchema::ordinal(name, levels);
    }
    AttributeSchema::numerical(name, quantile_edges(&numbers, numeric_bins))
}

/// Infers the schema of a raw value table, one column per attribute name.
pub fn infer_schema(names: &[String], rows: &[Vec<String>], numeric_bins: usize) -> Result<Vec<AttributeSchema>> {
    if rows.is_empty() {
        return Err(DatasetError::Schema("cannot infer a schema from zero rows".into()));
    }
    names
        .iter()
        .enumerate()
        .map(|(col, name)| {
            let column: Vec<&str> = rows.iter().map(|r| r[col].as_str()).collect();
            infer_attribute(name, &column, numeric_bins)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Csv,
    Jsonl,
}

impl FileFormat {
    /// Guesses the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> FileFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") | Some("json") => FileFormat::Jsonl,
            _ => FileFormat::Csv,
        }
    }
}

/// Bin spec in a schema sidecar: a bin count or explicit edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BinSpec {
    Count(usize),
    Edges(Vec<f64>),
}

/// Per-attribute override read from a schema sidecar file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeOverride {
    pub kind: AttributeKind,
    #[serde(default)]
    pub bins: Option<BinSpec>,
    #[serde(default)]
    pub levels: Option<Vec<String>>,
}

pub type SchemaOverrides = BTreeMap<String, AttributeOverride>;

pub fn read_schema_overrides(path: &Path) -> Result<SchemaOverrides> {
    let text = std::fs::read_to_string(path).map_err(|source| io_err(path, source))?;
    serde_json::from_str(&text)
        .map_err(|e| DatasetError::Schema(format!("invalid schema file {}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadOptions {
    pub numeric_bins: usize,
    /// Declared maximum sequence length; longer instances are rejected.
    pub max_len: Option<usize>,
    pub overrides: SchemaOverrides,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            numeric_bins: DEFAULT_NUMERIC_BINS,
            max_len: None,
            overrides: SchemaOverrides::new(),
        }
    }
}

struct RawRow {
    row: u64,
    id: String,
    t: usize,
    label: Label,
    values: Vec<String>,
}

/// Loads a long-format dataset with default options.
pub fn load_dataset(path: &Path, format: FileFormat) -> Result<Dataset> {
    load_dataset_with(path, format, &LoadOptions::default())
}

pub fn load_dataset_with(path: &Path, format: FileFormat, options: &LoadOptions) -> Result<Dataset> {
    let (names, rows) = match format {
        FileFormat::Csv => read_csv_rows(path)?,
        FileFormat::Jsonl => read_jsonl_rows(path)?,
    };
    assemble(names, rows, options)
}

fn read_csv_rows(path: &Path) -> Result<(Vec<String>, Vec<RawRow>)> {
    let file = File::open(path).map_err(|source| io_err(path, source))?;
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| DatasetError::Parse {
            row: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(String::from)
        .collect();
    let positions = reserved_positions(&header)?;
    let attr_cols: Vec<usize> = (0..header.len()).filter(|c| !positions.contains(c)).collect();
    let names = attr_cols.iter().map(|&c| header[c].clone()).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| DatasetError::Parse {
            row: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let row = record.position().map_or(0, |p| p.line());
        if record.len() < header.len() {
            return Err(DatasetError::MissingColumn {
                row,
                column: header[record.len()].clone(),
            });
        }
        if record.len() > header.len() {
            return Err(DatasetError::Parse {
                row,
                message: format!("{} fields for {} columns", record.len(), header.len()),
            });
        }
        let field = |c: usize| record.get(c).unwrap_or_default().to_string();
        let values = attr_cols.iter().map(|&c| field(c)).collect();
        rows.push(raw_row(
            row,
            field(positions[0]),
            &field(positions[1]),
            &field(positions[2]),
            values,
        )?);
    }
    Ok((names, rows))
}

fn reserved_positions(header: &[String]) -> Result<[usize; 3]> {
    let mut positions = [0; 3];
    for (slot, name) in RESERVED_COLUMNS.iter().enumerate() {
        positions[slot] = header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::MissingColumn {
                row: 1,
                column: name.to_string(),
            })?;
    }
    Ok(positions)
}

fn raw_row(row: u64, id: String, t: &str, label: &str, values: Vec<String>) -> Result<RawRow> {
    if id.is_empty() {
        return Err(DatasetError::MissingColumn {
            row,
            column: "id".into(),
        });
    }
    let t = t
        .parse::<usize>()
        .ok()
        .filter(|&t| t >= 1)
        .ok_or_else(|| DatasetError::Parse {
            row,
            message: format!("timestep `{t}` is not a positive integer"),
        })?;
    let label = Label::parse(label).ok_or_else(|| DatasetError::Parse {
        row,
        message: format!("label `{label}` is neither `pos` nor `neg`"),
    })?;
    Ok(RawRow {
        row,
        id,
        t,
        label,
        values,
    })
}

fn json_token(value: &serde_json::Value) -> Option<String> {
    match value {
        serde_json::Value::String(s) => Some(s.trim().to_string()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn read_jsonl_rows(path: &Path) -> Result<(Vec<String>, Vec<RawRow>)> {
    let file = File::open(path).map_err(|source| io_err(path, source))?;
    let mut names: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let row = idx as u64 + 1;
        let line = line.map_err(|source| io_err(path, source))?;
        if line.trim().is_empty() {
            continue;
        }
        let obj: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
                row,
                message: e.to_string(),
            })?;
        let names = names.get_or_insert_with(|| {
            obj.keys()
                .filter(|k| !RESERVED_COLUMNS.contains(&k.as_str()))
                .cloned()
                .collect()
        });
        let get = |column: &str| {
            obj.get(column)
                .and_then(json_token)
                .ok_or_else(|| DatasetError::MissingColumn {
                    row,
                    column: column.to_string(),
                })
        };
        let id = get("id")?;
        let t = get("t")?;
        let label = get("label")?;
        let values = names.iter().map(|n| get(n)).collect::<Result<Vec<_>>>()?;
        if obj.len() != names.len() + RESERVED_COLUMNS.len() {
            let extra = obj
                .keys()
                .find(|k| !RESERVED_COLUMNS.contains(&k.as_str()) && !names.contains(k))
                .cloned()
                .unwrap_or_default();
            return Err(DatasetError::Parse {
                row,
                message: format!("unexpected column `{extra}`"),
            });
        }
        rows.push(raw_row(row, id, &t, &label, values)?);
    }
    Ok((names.unwrap_or_default(), rows))
}

fn schema_for(names: &[String], rows: &[RawRow], options: &LoadOptions) -> Result<Vec<AttributeSchema>> {
    if let Some(unknown) = options.overrides.keys().find(|k| !names.contains(k)) {
        return Err(DatasetError::Schema(format!(
            "schema override names unknown attribute `{unknown}`"
        )));
    }
    names
        .iter()
        .enumerate()
        .map(|(col, name)| {
            let column: Vec<&str> = rows.iter().map(|r| r.values[col].as_str()).collect();
            match options.overrides.get(name) {
                None => infer_attribute(name, &column, options.numeric_bins),
                Some(ov) => apply_override(name, ov, &column),
            }
        })
        .collect()
}

fn apply_override(name: &str, ov: &AttributeOverride, column: &[&str]) -> Result<AttributeSchema> {
    match ov.kind {
        AttributeKind::Categorical | AttributeKind::Ordinal => {
            let levels = match &ov.levels {
                Some(levels) => levels.clone(),
                None => {
                    let inferred = infer_attribute(name, column, usize::MAX)?;
                    inferred.levels
                }
            };
            if ov.kind == AttributeKind::Categorical {
                AttributeSchema::categorical(name, levels)
            } else {
                AttributeSchema::ordinal(name, levels)
            }
        }
        AttributeKind::Numerical => {
            let edges = match &ov.bins {
                Some(BinSpec::Edges(edges)) => edges.clone(),
                count => {
                    let bins = match count {
                        Some(BinSpec::Count(n)) => *n,
                        _ => DEFAULT_NUMERIC_BINS,
                    };
                    if bins == 0 {
                        return Err(DatasetError::Schema(format!("`{name}`: bin count must be positive")));
                    }
                    let numbers = column
                        .iter()
                        .map(|v| {
                            parse_finite(v).ok_or_else(|| {
                                DatasetError::Schema(format!(
                                    "numerical attribute `{name}` has non-numeric value `{v}`"
                                ))
                            })
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    quantile_edges(&numbers, bins)
                }
            };
            AttributeSchema::numerical(name, edges)
        }
    }
}

fn assemble(names: Vec<String>, rows: Vec<RawRow>, options: &LoadOptions) -> Result<Dataset> {
    if rows.is_empty() {
        return Err(DatasetError::Schema("dataset file contains no rows".into()));
    }
    let schema = schema_for(&names, &rows, options)?;

    let mut grouped: BTreeMap<String, Vec<RawRow>> = BTreeMap::new();
    for row in rows {
        grouped.entry(row.id.clone()).or_default().push(row);
    }
    let mut instances = Vec::with_capacity(grouped.len());
    for (id, mut events) in grouped {
        let label = events[0].label;
        if let Some(bad) = events.iter().find(|e| e.label != label) {
            return Err(DatasetError::Integrity(format!(
                "instance `{id}` has inconsistent labels (row {})",
                bad.row
            )));
        }
        events.sort_by_key(|e| e.t);
        for (step, event) in events.iter().enumerate() {
            if event.t != step + 1 {
                return Err(DatasetError::Integrity(format!(
                    "instance `{id}`: timesteps must run 1..L without gaps or repeats (row {} has t={})",
                    event.row, event.t
                )));
            }
        }
        if let Some(max) = options.max_len {
            if events.len() > max {
                return Err(DatasetError::Bounds {
                    id,
                    len: events.len(),
                    max,
                });
            }
        }
        instances.push(SequenceInstance {
            id,
            label,
            events: events.into_iter().map(|e| Event { values: e.values }).collect(),
        });
    }
    Dataset::new(schema, instances)
}

/// Maps attribute names to schema indices, rejecting unknown names.
pub fn resolve_attributes(dataset: &Dataset, names: &[&str]) -> Result<Vec<usize>> {
    let index: HashMap<&str, usize> = dataset
        .schema()
        .iter()
        .enumerate()
        .map(|(i, a)| (a.name.as_str(), i))
        .collect();
    names
        .iter()
        .map(|n| {
            index
                .get(n)
                .copied()
                .ok_or_else(|| DatasetError::Schema(format!("unknown attribute `{n}`")))
        })
        .collect()
}
