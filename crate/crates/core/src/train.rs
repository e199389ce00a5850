//! Training loop with checkpointing and a CSV loss log.

use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::autograd::Tape;
use crate::checkpoint::Checkpoint;
use crate::data::{ExposurePair, PatchSampler};
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossValues, LossWeights};
use crate::model::config::parse;
use crate::model::CitModel;
use crate::optim::{Adam, AdamConfig};
use crate::params::Binding;
use crate::scalar::Scalar;

pub const LOG_HEADER: &str = "step,loss_total,loss_rec,loss_col,loss_spa";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub crop: usize,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    pub loss: LossWeights,
    /// Seed of the crop sampler; the model has its own.
    pub sample_seed: u64,
    pub log_every: u64,
    /// 0 disables periodic checkpoints; a final one is still written.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch: 4,
            crop: 64,
            lr: 1e-4,
            clip_norm: None,
            loss: LossWeights::default(),
            sample_seed: 0,
            log_every: 10,
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, clip_norm: self.clip_norm, ..AdamConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.crop == 0 {
            return Err(Error::Config("batch and crop must be positive".into()));
        }
        self.loss.validate()?;
        self.adam().validate()
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("steps", self.steps.to_string()),
            ("batch", self.batch.to_string()),
            ("crop", self.crop.to_string()),
            ("lr", self.lr.to_string()),
            ("clip_norm", self.clip_norm.map_or("none".into(), |c| c.to_string())),
            ("lambda_col", self.loss.lambda_col.to_string()),
            ("lambda_spa", self.loss.lambda_spa.to_string()),
            ("use_col", self.loss.use_col.to_string()),
            ("use_spa", self.loss.use_spa.to_string()),
            ("spa_variant", self.loss.spa_variant.to_string()),
            ("sample_seed", self.sample_seed.to_string()),
            ("log_every", self.log_every.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ]
    }

    /// Applies one `key=value` setting; `Ok(false)` for foreign keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "steps" => self.steps = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "crop" => self.crop = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "clip_norm" => {
                self.clip_norm = match value.trim() {
                    "none" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "lambda_col" => self.loss.lambda_col = parse(key, value)?,
            "lambda_spa" => self.loss.lambda_spa = parse(key, value)?,
            "use_col" => self.loss.use_col = parse(key, value)?,
            "use_spa" => self.loss.use_spa = parse(key, value)?,
            "spa_variant" => self.loss.spa_variant = value.trim().parse()?,
            "sample_seed" => self.sample_seed = parse(key, value)?,
            "log_every" => self.log_every = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.to_pairs() {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub loss: LossValues,
}

impl StepRecord {
    pub fn csv_row(&self) -> String {
        let l = &self.loss;
        format!("{},{:.8},{:.8},{:.8},{:.8}", self.step, l.total, l.rec, l.col, l.spa)
    }
}

pub struct Trainer<T: Scalar> {
    pub model: CitModel<T>,
    pub adam: Adam<T>,
    pub config: TrainConfig,
    sampler: PatchSampler,
    step: u64,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: CitModel<T>, pairs: Vec<ExposurePair>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let sampler =
            PatchSampler::new(pairs, config.crop, config.batch, model.config().pad_multiple(), config.sample_seed)?;
        Ok(Trainer { adam: Adam::new(config.adam())?, model, config, sampler, step: 0 })
    }

    /// Continues from a checkpoint. The crop stream is replayed up to the
    /// saved step so the run matches an uninterrupted one.
    pub fn resume(ckpt: Checkpoint<T>, pairs: Vec<ExposurePair>, config: TrainConfig) -> Result<Self> {
        let model = CitModel::with_params(ckpt.config, ckpt.params)?;
        let mut t = Self::new(model, pairs, config)?;
        if let Some(adam) = ckpt.adam {
            t.adam.step = adam.step;
            t.adam.moments = adam.moments;
        }
        t.sampler.skip(ckpt.step);
        t.step = ckpt.step;
        Ok(t)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// One optimizer update. A non-finite loss aborts before any parameter
    /// changes.
    pub fn train_step(&mut self) -> Result<StepRecord> {
        let batch = self.sampler.next_batch::<T>()?;
        let next = self.step + 1;
        let tape = Tape::new();
        let b = Binding::new(&tape, &self.model.params);
        let input = tape.constant(batch.input);
        let target = tape.constant(batch.target);
        let output = self.model.forward(&b, input)?;
        let terms = total_loss(output, target, input, &self.config.loss)?;
        let v = terms.values;
        if ![v.total, v.rec, v.col, v.spa].iter().all(|x| x.is_finite()) {
            return Err(Error::NonFiniteLoss { step: next, detail: format!("{v:?}") });
        }
        let grads = terms.total.backward()?;
        let bound = b.into_bound();
        self.model.params.zero_grad();
        self.model.params.accumulate(&bound, &grads)?;
        self.adam.step(&mut self.model.params)?;
        self.step = next;
        Ok(StepRecord { step: next, loss: v })
    }

    pub fn checkpoint(&self, meta: &TrainConfig) -> Checkpoint<T> {
        Checkpoint {
            config: self.model.config().clone(),
            meta: meta.to_pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            step: self.step,
            params: self.model.params.clone(),
            adam: Some(self.adam.clone()),
        }
    }

    /// Trains until `config.steps`, calling `observe` after every step.
    /// With `out_dir`, writes `loss.csv` and checkpoints there.
    pub fn run(&mut self, out_dir: Option<&Path>, mut observe: impl FnMut(&StepRecord)) -> Result<Vec<StepRecord>> {
        let mut log = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join("loss.csv");
                let exists = self.step > 0 && path.exists();
                let mut f = File::options().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
                if !exists {
                    writeln!(f, "{LOG_HEADER}").map_err(|e| Error::io(&path, e))?;
                }
                Some((f, path))
            }
            None => None,
        };
        let mut records = Vec::new();
        while self.step < self.config.steps {
            let rec = self.train_step()?;
            if let Some((f, path)) = &mut log {
                writeln!(f, "{}", rec.csv_row()).map_err(|e| Error::io(path.as_path(), e))?;
            }
            observe(&rec);
            records.push(rec);
            let every = self.config.checkpoint_every;
            if let Some(dir) = out_dir {
                if every > 0 && self.step.is_multiple_of(every) {
                    self.save_checkpoints(dir)?;
                }
            }
        }
        if let Some(dir) = out_dir {
            self.save_checkpoints(dir)?;
        }
        Ok(records)
    }

    fn save_checkpoints(&self, dir: &Path) -> Result<()> {
        let ck = self.checkpoint(&self.config);
        ck.save(checkpoint_path(dir, self.step))?;
        ck.save(dir.join("last.ckpt"))
    }
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step_{step:06}.ckpt"))
}
