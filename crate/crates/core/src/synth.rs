//! Synthetic labeled sequences with one planted discriminative pattern.
//!
//! An instance is rule-positive iff the planted attribute takes the planted
//! level at some timestep inside the window. Exactly half of the instances
//! are made rule-positive by placing the level at one random in-window step;
//! the planted level never occurs anywhere else. Labels are then flipped with
//! probability `noise`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{AttributeSchema, Dataset, DatasetError, Event, Label, SequenceInstance};

/// Generation attempts before giving up on class balance.
const BALANCE_RETRIES: usize = 64;
const BALANCE_RANGE: (f64, f64) = (0.45, 0.55);

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    Spec(String),
    #[error("class balance stayed outside [0.45, 0.55] after {0} attempts")]
    Balance(usize),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthAttribute {
    pub name: String,
    pub levels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub attributes: Vec<SynthAttribute>,
    pub planted_attribute: usize,
    pub planted_level: usize,
    /// Inclusive 1-based timestep window.
    pub window: (usize, usize),
    /// Label flip probability, below 0.5.
    #[serde(default)]
    pub noise: f64,
    pub instances: usize,
    pub max_len: usize,
    /// Shortest sequence; defaults to `ceil(max_len / 2)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_len: Option<usize>,
}

impl PlantSpec {
    /// `attributes` attributes of `levels` levels each, `a0`, `a1`, ...
    pub fn uniform(attributes: usize, levels: usize) -> Self {
        PlantSpec {
            attributes: (0..attributes)
                .map(|a| SynthAttribute {
                    name: format!("a{a}"),
                    levels,
                })
                .collect(),
            planted_attribute: 0,
            planted_level: 0,
            window: (1, 1),
            noise: 0.0,
            instances: 100,
            max_len: 1,
            min_len: None,
        }
    }

    /// Reference workload: 1000 instances of up to 12 steps over four
    /// 4-level attributes, `a2 = v1` planted in steps 4..=6, 5% label noise.
    pub fn reference() -> Self {
        PlantSpec {
            planted_attribute: 2,
            planted_level: 1,
            window: (4, 6),
            noise: 0.05,
            instances: 1000,
            max_len: 12,
            ..PlantSpec::uniform(4, 4)
        }
    }

    pub fn min_len(&self) -> usize {
        self.min_len.unwrap_or(self.max_len.div_ceil(2)).max(1)
    }

    pub fn level_name(level: usize) -> String {
        format!("v{level}")
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Spec(m));
        if self.attributes.is_empty() {
            return bad("no attributes".into());
        }
        if let Some(a) = self.attributes.iter().find(|a| a.levels == 0) {
            return bad(format!("attribute `{}` has no levels", a.name));
        }
        let Some(planted) = self.attributes.get(self.planted_attribute) else {
            return bad(format!("planted attribute {} does not exist", self.planted_attribute));
        };
        if planted.levels < 2 {
            return bad("the planted attribute needs a background level besides the planted one".into());
        }
        if self.planted_level >= planted.levels {
            return bad(format!("planted level {} is out of range", self.planted_level));
        }
        if self.max_len == 0 || self.min_len() > self.max_len {
            return bad(format!("lengths [{}, {}] are empty", self.min_len(), self.max_len));
        }
        let (w0, w1) = self.window;
        if w0 < 1 || w0 > w1 || w1 > self.max_len {
            return bad(format!("window [{w0}, {w1}] is not within [1, {}]", self.max_len));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return bad(format!("noise {} must lie in [0, 0.5)", self.noise));
        }
        if self.instances < 2 {
            return bad("need at least two instances".into());
        }
        Ok(())
    }

    fn schema(&self) -> Result<Vec<AttributeSchema>, SynthError> {
        Ok(self
            .attributes
            .iter()
            .map(|a| AttributeSchema::categorical(a.name.clone(), (0..a.levels).map(Self::level_name).collect()))
            .collect::<Result<_, _>>()?)
    }
}

/// Label of the noiseless rule for one instance.
pub fn rule_label(spec: &PlantSpec, instance: &SequenceInstance) -> Label {
    let planted = PlantSpec::level_name(spec.planted_level);
    let hit = instance
        .events
        .iter()
        .enumerate()
        .any(|(s, e)| s + 1 >= spec.window.0 && s < spec.window.1 && e.values[spec.planted_attribute] == planted);
    if hit {
        Label::Positive
    } else {
        Label::Negative
    }
}

pub fn generate(spec: &PlantSpec, seed: u64) -> Result<Dataset, SynthError> {
    spec.validate()?;
    let schema = spec.schema()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..BALANCE_RETRIES {
        if let Some(instances) = attempt(spec, &mut rng) {
            return Ok(Dataset::new(schema, instances)?);
        }
    }
    Err(SynthError::Balance(BALANCE_RETRIES))
}

fn attempt(spec: &PlantSpec, rng: &mut ChaCha8Rng) -> Option<Vec<SequenceInstance>> {
    let n = spec.instances;
    let (w0, w1) = spec.window;
    let lengths: Vec<usize> = (0..n)
        .map(|_| rng.random_range(spec.min_len()..=spec.max_len))
        .collect();
    let mut eligible: Vec<usize> = (0..n).filter(|&i| lengths[i] >= w0).collect();
    eligible.shuffle(rng);
    let mut positive = vec![false; n];
    for &i in eligible.iter().take(n / 2) {
        positive[i] = true;
    }

    let planted = spec.planted_attribute;
    let planted_levels = spec.attributes[planted].levels;
    let width = (n - 1).to_string().len();
    let instances: Vec<SequenceInstance> = (0..n)
        .map(|i| {
            let mut events: Vec<Vec<usize>> = (0..lengths[i])
                .map(|_| {
                    spec.attributes
                        .iter()
                        .enumerate()
                        .map(|(a, attr)| {
                            if a == planted {
                                // Uniform over the background levels.
                                let k = rng.random_range(0..planted_levels - 1);
                                if k >= spec.planted_level {
                                    k + 1
                                } else {
                                    k
                                }
                            } else {
                                rng.random_range(0..attr.levels)
                            }
                        })
                        .collect()
                })
                .collect();
            if positive[i] {
                let t = rng.random_range(w0..=w1.min(lengths[i]));
                events[t - 1][planted] = spec.planted_level;
            }
            let rule = if positive[i] { Label::Positive } else { Label::Negative };
            let label = if rng.random_bool(spec.noise) {
                rule.flipped()
            } else {
                rule
            };
            SequenceInstance {
                id: format!("s{i:0width$}"),
                label,
                events: events
                    .into_iter()
                    .map(|levels| Event::new(levels.into_iter().map(PlantSpec::level_name)))
                    .collect(),
            }
        })
        .collect();
    let share = instances.iter().filter(|s| s.label == Label::Positive).count() as f64 / n as f64;
    (BALANCE_RANGE.0..=BALANCE_RANGE.1)
        .contains(&share)
        .then_some(instances)
}

/// Cells of one ordered attribute pair expected to carry planted attribution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedCells {
    pub p: usize,
    pub q: usize,
    /// `(row level of p, column level of q)`.
    pub cells: Vec<(usize, usize)>,
}

/// For every ordered pair containing the planted attribute, the row or
/// column of the planted level; for the planted attribute's own diagonal
/// matrix, the single planted cell.
pub fn oracle_top_cells(spec: &PlantSpec) -> Result<Vec<PlantedCells>, SynthError> {
    spec.validate()?;
    let (pa, pl) = (spec.planted_attribute, spec.planted_level);
    let mut out = vec![PlantedCells {
        p: pa,
        q: pa,
        cells: vec![(pl, pl)],
    }];
    for (q, attr) in spec.attributes.iter().enumerate().filter(|(q, _)| *q != pa) {
        out.push(PlantedCells {
            p: pa,
            q,
            cells: (0..attr.levels).map(|j| (pl, j)).collect(),
        });
        out.push(PlantedCells {
            p: q,
            q: pa,
            cells: (0..attr.levels).map(|i| (i, pl)).collect(),
        });
    }
    Ok(out)
}
