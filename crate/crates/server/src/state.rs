use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::Serialize;

use attnmap_core::dataset::Dataset;
use attnmap_core::rnn::{
    extract_attentions, list_checkpoints, load_checkpoint, save_checkpoint, train_with_observer,
    AttentionNormalization, AttentionRecord, EpochMetrics, ModelCheckpoint, RnnError, TrainConfig, TrainEvent,
};

use crate::error::ApiError;
use crate::ServerError;

/// Training job progress as reported by `GET /api/v1/train/status`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum JobStatus {
    Idle,
    Running {
        job_id: String,
        epoch: usize,
        epochs: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        metrics: Option<EpochMetrics>,
    },
    Failed {
        job_id: String,
        reason: String,
    },
    Done {
        job_id: String,
        epochs: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        metrics: Option<EpochMetrics>,
    },
}

struct Inner {
    dataset: Option<Arc<Dataset>>,
    checkpoint_dir: PathBuf,
    normalization: AttentionNormalization,
    checkpoints: Mutex<BTreeMap<usize, Arc<ModelCheckpoint>>>,
    attention: Mutex<HashMap<usize, Arc<Vec<AttentionRecord>>>>,
    responses: Mutex<HashMap<String, Arc<String>>>,
    /// Bumped whenever the checkpoint store is replaced; cache writes from
    /// an older generation are dropped.
    generation: AtomicU64,
    job: Mutex<JobStatus>,
    jobs_started: AtomicU64,
}

/// Shared session: one dataset, an epoch-indexed checkpoint store and the
/// caches derived from it.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl AppState {
    /// Opens the session and indexes the checkpoints already present in
    /// `checkpoint_dir`. Checkpoints that do not fit the dataset are skipped.
    pub fn new(
        dataset: Option<Dataset>,
        checkpoint_dir: &Path,
        normalization: AttentionNormalization,
    ) -> Result<Self, ServerError> {
        std::fs::create_dir_all(checkpoint_dir).map_err(|e| ServerError::Io(checkpoint_dir.to_path_buf(), e))?;
        let mut checkpoints = BTreeMap::new();
        if let Some(ds) = &dataset {
            for (epoch, path) in list_checkpoints(checkpoint_dir)? {
                let ckpt = load_checkpoint(&path)?;
                if ckpt.params.shape().input_dim != ds.input_dim() {
                    log::warn!("skipping {}: input width does not match the dataset", path.display());
                    continue;
                }
                checkpoints.insert(epoch, Arc::new(ckpt));
            }
        }
        Ok(AppState {
            inner: Arc::new(Inner {
                dataset: dataset.map(Arc::new),
                checkpoint_dir: checkpoint_dir.to_path_buf(),
                normalization,
                checkpoints: Mutex::new(checkpoints),
                attention: Mutex::new(HashMap::new()),
                responses: Mutex::new(HashMap::new()),
                generation: AtomicU64::new(0),
                job: Mutex::new(JobStatus::Idle),
                jobs_started: AtomicU64::new(0),
            }),
        })
    }

    pub fn dataset(&self) -> Result<Arc<Dataset>, ApiError> {
        self.inner
            .dataset
            .clone()
            .ok_or_else(|| ApiError::conflict("no_dataset", "no dataset is loaded"))
    }

    pub fn normalization(&self) -> AttentionNormalization {
        self.inner.normalization
    }

    pub fn checkpoints(&self) -> Vec<Arc<ModelCheckpoint>> {
        lock(&self.inner.checkpoints).values().cloned().collect()
    }

    /// The requested checkpoint, or the latest when `epoch` is `None`.
    pub fn checkpoint(&self, epoch: Option<usize>) -> Result<Arc<ModelCheckpoint>, ApiError> {
        let store = lock(&self.inner.checkpoints);
        let found = match epoch {
            Some(e) => store.get(&e),
            None => store.values().next_back(),
        };
        found.cloned().ok_or_else(|| match epoch {
            Some(e) => ApiError::not_found("unknown_epoch", format!("no checkpoint for epoch {e}")),
            None => ApiError::not_found("unknown_epoch", "no checkpoints are available"),
        })
    }

    pub fn job_status(&self) -> JobStatus {
        lock(&self.inner.job).clone()
    }

    fn generation(&self) -> u64 {
        self.inner.generation.load(Ordering::SeqCst)
    }

    /// Normalized attention of every instance at one checkpoint, computed on
    /// first use.
    pub fn attentions(&self, checkpoint: &ModelCheckpoint) -> Result<Arc<Vec<AttentionRecord>>, ApiError> {
        let generation = self.generation();
        if let Some(hit) = lock(&self.inner.attention).get(&checkpoint.epoch) {
            return Ok(hit.clone());
        }
        let dataset = self.dataset()?;
        let records = extract_attentions(&checkpoint.params, &dataset, self.inner.normalization)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        let records = Arc::new(records);
        let mut cache = lock(&self.inner.attention);
        if self.generation() == generation {
            cache.insert(checkpoint.epoch, records.clone());
        }
        Ok(records)
    }

    /// Cached response body for `key`, computing it with `compute` on a miss.
    pub fn cached(
        &self,
        key: String,
        compute: impl FnOnce() -> Result<String, ApiError>,
    ) -> Result<Arc<String>, ApiError> {
        let generation = self.generation();
        if let Some(hit) = lock(&self.inner.responses).get(&key) {
            return Ok(hit.clone());
        }
        let body = Arc::new(compute()?);
        let mut cache = lock(&self.inner.responses);
        if self.generation() == generation {
            cache.insert(key, body.clone());
        }
        Ok(body)
    }

    /// Starts a background training job that replaces the checkpoint store.
    pub fn start_training(&self, config: TrainConfig) -> Result<String, ApiError> {
        let dataset = self.dataset()?;
        config
            .validate()
            .map_err(|e| ApiError::unprocessable("invalid_config", e.to_string()))?;
        let counts = dataset.class_counts();
        if counts.contains(&0) {
            return Err(ApiError::unprocessable(
                "invalid_config",
                "training needs instances of both classes",
            ));
        }
        let job_id = {
            let mut job = lock(&self.inner.job);
            if matches!(*job, JobStatus::Running { .. }) {
                return Err(ApiError::conflict("job_running", "a training job is already running"));
            }
            let id = format!("job-{}", self.inner.jobs_started.fetch_add(1, Ordering::SeqCst) + 1);
            *job = JobStatus::Running {
                job_id: id.clone(),
                epoch: 0,
                epochs: config.epochs,
                metrics: None,
            };
            id
        };
        self.reset_store()?;
        let state = self.clone();
        let id = job_id.clone();
        std::thread::Builder::new()
            .name(id.clone())
            .spawn(move || state.run_job(&id, &dataset, &config))
            .map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(job_id)
    }

    fn reset_store(&self) -> Result<(), ApiError> {
        self.inner.generation.fetch_add(1, Ordering::SeqCst);
        lock(&self.inner.checkpoints).clear();
        lock(&self.inner.attention).clear();
        lock(&self.inner.responses).clear();
        let existing = list_checkpoints(&self.inner.checkpoint_dir).map_err(|e| ApiError::internal(e.to_string()))?;
        for (_, path) in existing {
            std::fs::remove_file(&path).map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }

    fn publish(&self, checkpoint: &ModelCheckpoint) -> Result<(), RnnError> {
        save_checkpoint(&self.inner.checkpoint_dir, checkpoint)?;
        lock(&self.inner.checkpoints).insert(checkpoint.epoch, Arc::new(checkpoint.clone()));
        Ok(())
    }

    fn run_job(&self, job_id: &str, dataset: &Dataset, config: &TrainConfig) {
        let mut save_error = None;
        let result = train_with_observer(dataset, config, &mut |event| match event {
            TrainEvent::Epoch(m) => {
                if let JobStatus::Running { epoch, metrics, .. } = &mut *lock(&self.inner.job) {
                    *epoch = m.epoch;
                    *metrics = Some(*m);
                }
            }
            TrainEvent::Checkpoint(c) => {
                if let Err(e) = self.publish(c) {
                    save_error.get_or_insert(e);
                }
            }
        });
        let status = match (result, save_error) {
            (_, Some(e)) => JobStatus::Failed {
                job_id: job_id.to_string(),
                reason: e.to_string(),
            },
            (Ok(run), None) => JobStatus::Done {
                job_id: job_id.to_string(),
                epochs: config.epochs,
                metrics: run.metrics.last().copied(),
            },
            (Err(e), None) => {
                if let RnnError::Diverged { last_good, .. } = &e {
                    if let Err(save) = self.publish(last_good) {
                        log::error!("saving the last good checkpoint failed: {save}");
                    }
                }
                JobStatus::Failed {
                    job_id: job_id.to_string(),
                    reason: e.to_string(),
                }
            }
        };
        log::info!("{job_id} finished: {status:?}");
        *lock(&self.inner.job) = status;
    }
}
