//! Strict decoding of query strings: unknown or repeated keys are rejected.

use std::collections::BTreeMap;
use std::str::FromStr;

use attnmap_core::attribution::{Mode, SliceSpec};
use attnmap_core::dataset::{Dataset, Label};

use crate::error::ApiError;

pub const SLICE_KEYS: [&str; 7] = ["epoch", "mode", "att_lo", "att_hi", "t0", "t1", "attrs"];

#[derive(Debug)]
pub struct Params {
    values: BTreeMap<String, String>,
}

impl Params {
    pub fn parse(pairs: Vec<(String, String)>, allowed: &[&str]) -> Result<Self, ApiError> {
        let mut values = BTreeMap::new();
        for (key, value) in pairs {
            if !allowed.contains(&key.as_str()) {
                return Err(ApiError::unprocessable(
                    "unknown_parameter",
                    format!("unknown query parameter `{key}`"),
                ));
            }
            if values.insert(key.clone(), value).is_some() {
                return Err(ApiError::unprocessable(
                    "duplicate_parameter",
                    format!("query parameter `{key}` is repeated"),
                ));
            }
        }
        Ok(Params { values })
    }

    pub fn str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ApiError> {
        self.str(key)
            .map(|raw| {
                raw.parse()
                    .map_err(|_| ApiError::unprocessable("invalid_parameter", format!("cannot parse `{key}={raw}`")))
            })
            .transpose()
    }

    /// Canonical `k=v&...` rendering in key order, used as a cache key.
    pub fn canonical(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join("&")
    }
}

pub fn attribute(dataset: &Dataset, name: &str) -> Result<usize, ApiError> {
    dataset
        .attribute_index(name)
        .ok_or_else(|| ApiError::not_found("unknown_attribute", format!("unknown attribute `{name}`")))
}

pub fn mode(raw: &str) -> Result<Mode, ApiError> {
    Mode::parse(raw).ok_or_else(|| ApiError::unprocessable("invalid_parameter", format!("unknown mode `{raw}`")))
}

pub fn classes(raw: Option<&str>) -> Result<Vec<Label>, ApiError> {
    match raw {
        None | Some("both") => Ok(Label::ALL.to_vec()),
        Some(token) => Label::parse(token)
            .map(|c| vec![c])
            .ok_or_else(|| ApiError::unprocessable("invalid_parameter", format!("unknown class `{token}`"))),
    }
}

/// Slice from the shared parameters; omitted bounds span the whole dataset.
pub fn slice(dataset: &Dataset, params: &Params) -> Result<SliceSpec, ApiError> {
    let mut slice = SliceSpec::full(dataset);
    let lo = params.get::<f64>("att_lo")?.unwrap_or(slice.attention.0);
    let hi = params.get::<f64>("att_hi")?.unwrap_or(slice.attention.1);
    let t0 = params.get::<usize>("t0")?.unwrap_or(slice.time.0);
    let t1 = params.get::<usize>("t1")?.unwrap_or(slice.time.1);
    slice = slice.with_attention(lo, hi).with_time(t0, t1);
    if let Some(raw) = params.str("mode") {
        slice = slice.with_mode(mode(raw)?);
    }
    if let Some(raw) = params.str("attrs") {
        let attrs = raw
            .split(',')
            .map(|name| attribute(dataset, name.trim()))
            .collect::<Result<Vec<_>, _>>()?;
        slice = slice.with_attributes(attrs);
    }
    slice.epoch = params.get("epoch")?;
    slice.validate(dataset)?;
    Ok(slice)
}
