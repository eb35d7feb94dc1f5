use serde::{Deserialize, Serialize};

use super::AttributionError;
use crate::dataset::{Dataset, Label};
use crate::rnn::AttentionRecord;

/// Which class view a matrix shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "pos")]
    Positive,
    #[serde(rename = "neg")]
    Negative,
    #[serde(rename = "both")]
    Both,
    #[default]
    #[serde(rename = "diff")]
    Difference,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Positive => "pos",
            Mode::Negative => "neg",
            Mode::Both => "both",
            Mode::Difference => "diff",
        }
    }

    pub fn parse(token: &str) -> Option<Mode> {
        match token {
            "pos" | "positive" => Some(Mode::Positive),
            "neg" | "negative" => Some(Mode::Negative),
            "both" => Some(Mode::Both),
            "diff" | "difference" => Some(Mode::Difference),
            _ => None,
        }
    }
}

/// Event filter: closed attention interval, inclusive 1-based timestep
/// range, and an ordered attribute subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub attention: (f64, f64),
    pub time: (usize, usize),
    pub attributes: Vec<usize>,
    pub mode: Mode,
    /// Checkpoint the attention was taken from, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
}

impl SliceSpec {
    /// Every event, every attribute, difference mode.
    pub fn full(dataset: &Dataset) -> Self {
        SliceSpec {
            attention: (0.0, 1.0),
            time: (1, dataset.max_len().max(1)),
            attributes: (0..dataset.schema().len()).collect(),
            mode: Mode::Difference,
            epoch: None,
        }
    }

    pub fn with_attention(mut self, lo: f64, hi: f64) -> Self {
        self.attention = (lo, hi);
        self
    }

    pub fn with_time(mut self, t0: usize, t1: usize) -> Self {
        self.time = (t0, t1);
        self
    }

    pub fn with_attributes(mut self, attributes: Vec<usize>) -> Self {
        self.attributes = attributes;
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn span(&self) -> usize {
        self.time.1 + 1 - self.time.0
    }

    pub fn validate(&self, dataset: &Dataset) -> Result<(), AttributionError> {
        let invalid = |m: String| Err(AttributionError::InvalidSlice(m));
        let (lo, hi) = self.attention;
        if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi > 1.0 || lo > hi {
            return invalid(format!("attention range [{lo}, {hi}] must satisfy 0 <= lo <= hi <= 1"));
        }
        let (t0, t1) = self.time;
        let max = dataset.max_len().max(1);
        if t0 < 1 || t0 > t1 || t1 > max {
            return invalid(format!("time range [{t0}, {t1}] must satisfy 1 <= t0 <= t1 <= {max}"));
        }
        if self.attributes.is_empty() {
            return invalid("attribute list is empty".into());
        }
        let mut seen = vec![false; dataset.schema().len()];
        for &a in &self.attributes {
            match seen.get_mut(a) {
                None => return Err(AttributionError::UnknownAttribute(a)),
                Some(true) => return invalid(format!("attribute {a} is listed twice")),
                Some(flag) => *flag = true,
            }
        }
        Ok(())
    }

    pub fn contains_attribute(&self, attr: usize) -> bool {
        self.attributes.contains(&attr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectedEvent {
    /// 1-based timestep.
    pub t: usize,
    /// Normalized attention of the event.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSelection {
    pub instance: usize,
    pub label: Label,
    /// Selected events in timestep order.
    pub events: Vec<SelectedEvent>,
}

/// Selected events of every instance, in dataset order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub time: (usize, usize),
    pub instances: Vec<InstanceSelection>,
}

impl Selection {
    pub fn span(&self) -> usize {
        self.time.1 + 1 - self.time.0
    }

    pub fn event_count(&self) -> usize {
        self.instances.iter().map(|s| s.events.len()).sum()
    }

    /// Sum of normalized attention of the selected events of one class.
    pub fn mass(&self, class: Label) -> f64 {
        self.instances
            .iter()
            .filter(|s| s.label == class)
            .flat_map(|s| &s.events)
            .map(|e| e.weight)
            .sum()
    }
}

/// Checks that attention records align one-to-one with dataset instances.
pub(crate) fn check_records(dataset: &Dataset, records: &[AttentionRecord]) -> Result<(), AttributionError> {
    if records.len() != dataset.len() {
        return Err(AttributionError::AttentionMismatch(format!(
            "{} records for {} instances",
            records.len(),
            dataset.len()
        )));
    }
    for (rec, inst) in records.iter().zip(dataset.instances()) {
        if rec.id != inst.id || rec.normalized.len() != inst.len() {
            return Err(AttributionError::AttentionMismatch(format!(
                "record `{}` ({} steps) does not match instance `{}` ({} steps)",
                rec.id,
                rec.normalized.len(),
                inst.id,
                inst.len()
            )));
        }
    }
    Ok(())
}

/// Selects event `(s, t)` iff `t` lies in the time range and
/// `lo <= α̂ <= hi`. Padded steps carry no attention and are never selected.
pub fn select_events(
    dataset: &Dataset,
    records: &[AttentionRecord],
    slice: &SliceSpec,
) -> Result<Selection, AttributionError> {
    slice.validate(dataset)?;
    check_records(dataset, records)?;
    let (lo, hi) = slice.attention;
    let (t0, t1) = slice.time;
    let instances = records
        .iter()
        .zip(dataset.instances())
        .enumerate()
        .map(|(index, (rec, inst))| InstanceSelection {
            instance: index,
            label: inst.label,
            events: rec
                .normalized
                .iter()
                .enumerate()
                .map(|(step, &weight)| SelectedEvent { t: step + 1, weight })
                .filter(|e| e.t >= t0 && e.t <= t1 && e.weight >= lo && e.weight <= hi)
                .collect(),
        })
        .collect();
    Ok(Selection {
        time: slice.time,
        instances,
    })
}
