//! Training loops for both directions: random-scene batches, Adam, output
//! noise annealing, periodic held-out evaluation and checkpointing.

use std::path::Path;
use std::time::Instant;

use gqnloc_nn::{AdamConfig, AdamState, Checkpoint, Graph, ParamGrads, ParamStore};
use gqnloc_world::{sample_task, Episode, SplitManifest, Task};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bins::{xy_unflat, Head, XY_AXIS};
use crate::config::{CheckpointMeta, ModelConfig, ModelKind, TrainConfig};
use crate::data::{targets, ContextBatch};
use crate::discriminative::{nll_loss_pose, DiscriminativeModel};
use crate::error::{io_err, CoreError, Result};
use crate::generative::{elbo_terms, layer_noise, GenerativeModel, RolloutOptions};
use crate::localizer::argmax_lowest;
use crate::pose::pose_tensor;

/// Linear anneal from `sigma_start` at step 0 to `sigma_end` at
/// `sigma_end_step`, constant afterwards.
pub fn sigma_schedule(step: u64, cfg: &TrainConfig) -> f64 {
    if step >= cfg.sigma_end_step {
        return cfg.sigma_end;
    }
    let t = step as f64 / cfg.sigma_end_step as f64;
    cfg.sigma_start + (cfg.sigma_end - cfg.sigma_start) * t
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub iteration: u64,
    /// Mean training loss over the iterations since the previous record.
    pub train_loss: f64,
    pub test_loss: f64,
    /// Pixel MSE for the generative direction, xy pose MSE of the argmax
    /// estimate for the discriminative one.
    pub mse: f64,
    pub sigma: f64,
    pub wall_seconds: f64,
}

pub const LOG_HEADER: &str = "iteration,train_loss,test_loss,mse,sigma,wall_seconds";

impl LogRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3}",
            self.iteration, self.train_loss, self.test_loss, self.mse, self.sigma, self.wall_seconds
        )
    }

    pub fn parse_csv_row(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 6 {
            return None;
        }
        Some(Self {
            iteration: f[0].parse().ok()?,
            train_loss: f[1].parse().ok()?,
            test_loss: f[2].parse().ok()?,
            mse: f[3].parse().ok()?,
            sigma: f[4].parse().ok()?,
            wall_seconds: f[5].parse().ok()?,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn push(&mut self, r: LogRecord) {
        if let Some(last) = self.records.last() {
            assert!(r.iteration > last.iteration, "log iterations must increase");
        }
        self.records.push(r);
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    /// The log with wall-clock times zeroed, which is what reruns reproduce.
    pub fn without_wall_time(&self) -> TrainLog {
        TrainLog { records: self.records.iter().map(|r| LogRecord { wall_seconds: 0.0, ..r.clone() }).collect() }
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(LOG_HEADER) {
            return Err(CoreError::Config("training log header not recognized".into()));
        }
        let mut log = TrainLog::default();
        for (i, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
            let r = LogRecord::parse_csv_row(line)
                .ok_or_else(|| CoreError::Config(format!("training log row {} malformed", i + 1)))?;
            log.records.push(r);
        }
        Ok(log)
    }

    pub fn last(&self) -> Option<&LogRecord> {
        self.records.last()
    }
}

/// Where training batches come from.
#[derive(Clone, Copy, Debug)]
pub enum TaskSource<'a> {
    /// Each batch item draws a random episode, then a random task in it.
    Episodes { episodes: &'a [Episode], context_size: usize },
    /// A fixed pool; each batch is a random subset (all of it when the
    /// batch is at least as large).
    Fixed(&'a [Task]),
}

impl TaskSource<'_> {
    pub fn batch(&self, batch: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Task>> {
        match *self {
            TaskSource::Episodes { episodes, context_size } => {
                if episodes.is_empty() {
                    return Err(CoreError::Config("no training episodes".into()));
                }
                (0..batch)
                    .map(|_| {
                        let e = &episodes[rng.random_range(0..episodes.len())];
                        Ok(sample_task(e, context_size, rng.random())?)
                    })
                    .collect()
            }
            TaskSource::Fixed(tasks) => {
                if tasks.is_empty() {
                    return Err(CoreError::Config("empty task pool".into()));
                }
                if batch >= tasks.len() {
                    return Ok(tasks.to_vec());
                }
                let mut idx = sample(rng, tasks.len(), batch).into_vec();
                idx.sort_unstable();
                Ok(idx.into_iter().map(|i| tasks[i].clone()).collect())
            }
        }
    }
}

/// Deterministic held-out tasks: task `i` comes from episode `i mod n`.
pub fn evaluation_tasks(episodes: &[Episode], count: usize, context_size: usize, seed: u64) -> Result<Vec<Task>> {
    if episodes.is_empty() {
        return Ok(Vec::new());
    }
    (0..count)
        .map(|i| {
            let s = seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            Ok(sample_task(&episodes[i % episodes.len()], context_size, s)?)
        })
        .collect()
}

/// A model being optimized, in either direction.
#[derive(Clone, Debug)]
pub enum Learner {
    Generative(GenerativeModel<f32>),
    Discriminative(DiscriminativeModel<f32>),
}

impl Learner {
    pub fn new(kind: ModelKind, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match kind {
            ModelKind::Generative => Learner::Generative(GenerativeModel::new(cfg, &mut rng)?),
            ModelKind::Discriminative => Learner::Discriminative(DiscriminativeModel::new(cfg, &mut rng)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Learner::Generative(_) => ModelKind::Generative,
            Learner::Discriminative(_) => ModelKind::Discriminative,
        }
    }

    pub fn model_config(&self) -> &ModelConfig {
        match self {
            Learner::Generative(m) => m.config(),
            Learner::Discriminative(m) => m.config(),
        }
    }

    pub fn store(&self) -> &ParamStore<f32> {
        match self {
            Learner::Generative(m) => &m.store,
            Learner::Discriminative(m) => &m.store,
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<f32> {
        match self {
            Learner::Generative(m) => &mut m.store,
            Learner::Discriminative(m) => &mut m.store,
        }
    }

    fn set_trained(&mut self, on: bool) {
        match self {
            Learner::Generative(m) => m.trained = on,
            Learner::Discriminative(m) => m.trained = on,
        }
    }

    pub fn trained(&self) -> bool {
        match self {
            Learner::Generative(m) => m.trained,
            Learner::Discriminative(m) => m.trained,
        }
    }

    /// Batch-mean loss and its parameter gradients.
    pub fn loss_and_grads(&self, tasks: &[Task], sigma: f64, seed: u64) -> Result<(f64, ParamGrads<f32>)> {
        let refs: Vec<&Task> = tasks.iter().collect();
        let cfg = self.model_config();
        let ctx = ContextBatch::<f32>::from_tasks(&refs, cfg);
        let (x, poses) = targets::<f32>(&refs);
        let mut g = Graph::new(self.store());
        let per_item = match self {
            Learner::Generative(m) => {
                let enc = m.net.encode_context(&mut g, &ctx)?;
                let q = g.constant(pose_tensor(poses.iter()));
                let xt = g.constant(x);
                let noise = layer_noise(cfg, tasks.len(), seed, false);
                elbo_terms(&m.net, &mut g, &enc, q, xt, &noise, sigma, RolloutOptions::train())?.loss
            }
            Learner::Discriminative(m) => {
                let xt = g.constant(x);
                let maps = m.net.forward(&mut g, xt, &ctx)?;
                nll_loss_pose(&mut g, &maps, &poses)?
            }
        };
        let loss = g.mean_all(per_item)?;
        let value = g.scalar(loss);
        Ok((value, g.backward(loss).params))
    }

    /// Mean held-out loss and MSE over `tasks`, in chunks of `chunk`.
    pub fn evaluate(&self, tasks: &[Task], sigma: f64, seed: u64, chunk: usize) -> Result<(f64, f64)> {
        if tasks.is_empty() {
            return Ok((f64::NAN, f64::NAN));
        }
        let cfg = self.model_config();
        let (mut loss_sum, mut mse_sum) = (0.0, 0.0);
        for (ci, part) in tasks.chunks(chunk.max(1)).enumerate() {
            let refs: Vec<&Task> = part.iter().collect();
            let ctx = ContextBatch::<f32>::from_tasks(&refs, cfg);
            let (x, poses) = targets::<f32>(&refs);
            let mut g = Graph::new(self.store());
            let cseed = seed.wrapping_add(ci as u64 * 1_000_003);
            match self {
                Learner::Generative(m) => {
                    let enc = m.net.encode_context(&mut g, &ctx)?;
                    let q = g.constant(pose_tensor(poses.iter()));
                    let xt = g.constant(x.clone());
                    let noise = layer_noise(cfg, part.len(), cseed, false);
                    let terms = elbo_terms(&m.net, &mut g, &enc, q, xt, &noise, sigma, RolloutOptions::train())?;
                    loss_sum += g.value(terms.loss).to_f64_vec().iter().sum::<f64>();
                    let noise = layer_noise(cfg, part.len(), cseed ^ 0x5A5A, false);
                    let r = m.net.rollout(&mut g, &enc, q, None, &noise, RolloutOptions::sample())?;
                    let pred = g.value(r.mean).data();
                    let per = x.numel() / part.len();
                    for (p, t) in pred.chunks(per).zip(x.data().chunks(per)) {
                        mse_sum += p.iter().zip(t).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>() / per as f64;
                    }
                }
                Learner::Discriminative(m) => {
                    let xt = g.constant(x);
                    let maps = m.net.forward(&mut g, xt, &ctx)?;
                    let nll = nll_loss_pose(&mut g, &maps, &poses)?;
                    loss_sum += g.value(nll).to_f64_vec().iter().sum::<f64>();
                    let xy = g.value(maps.head(Head::Xy)).to_f64_vec();
                    for (row, gt) in xy.chunks(Head::Xy.size()).zip(&poses) {
                        let (ix, iy) = xy_unflat(argmax_lowest(row));
                        mse_sum += (XY_AXIS.center(ix) - gt.x).powi(2) + (XY_AXIS.center(iy) - gt.y).powi(2);
                    }
                }
            }
        }
        let n = tasks.len() as f64;
        Ok((loss_sum / n, mse_sum / n))
    }
}

/// Mixes a run seed with a counter into an independent stream seed.
pub fn derive(seed: u64, tag: u64, counter: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ counter.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Owns the parameters, optimizer state and log of one run. Everything an
/// iteration draws is derived from the run seed and the iteration number,
/// so a resumed run continues exactly where the original would have.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub learner: Learner,
    pub adam: AdamState<f32>,
    pub config: TrainConfig,
    pub iteration: u64,
    pub log: TrainLog,
    window: (f64, u64),
    started: Instant,
}

impl Trainer {
    pub fn new(kind: ModelKind, model: &ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let learner = Learner::new(kind, model, config.seed)?;
        let adam = AdamState::new(learner.store(), adam_config(&config));
        Ok(Self::assemble(learner, adam, config, 0))
    }

    fn assemble(learner: Learner, adam: AdamState<f32>, config: TrainConfig, iteration: u64) -> Self {
        Self { learner, adam, config, iteration, log: TrainLog::default(), window: (0.0, 0), started: Instant::now() }
    }

    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            kind: self.learner.kind(),
            model: self.learner.model_config().clone(),
            iteration: self.iteration,
            trained: self.iteration > 0,
            train: Some(self.config.clone()),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { meta: self.meta().to_json(), params: self.learner.store().clone(), adam: Some(self.adam.clone()) }
    }

    /// Resume from a checkpoint that carries optimizer state and a training config.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta = CheckpointMeta::from_json(&ckpt.meta)?;
        let config = meta.train.clone().ok_or_else(|| CoreError::Config("checkpoint has no training config".into()))?;
        let mut learner = Learner::new(meta.kind, &meta.model, 0)?;
        ckpt.restore_into(learner.store_mut())?;
        learner.set_trained(meta.trained);
        let adam = match &ckpt.adam {
            Some(a) => a.clone(),
            None => AdamState::new(learner.store(), adam_config(&config)),
        };
        Ok(Self::assemble(learner, adam, config, meta.iteration))
    }

    pub fn sigma(&self) -> f64 {
        sigma_schedule(self.iteration, &self.config)
    }

    /// One optimization step; returns the batch loss before the update.
    pub fn step(&mut self, source: &TaskSource) -> Result<f64> {
        let it = self.iteration;
        let mut rng = ChaCha8Rng::seed_from_u64(derive(self.config.seed, 1, it));
        let tasks = source.batch(self.config.batch_size, &mut rng)?;
        let (loss, grads) = self.learner.loss_and_grads(&tasks, self.sigma(), derive(self.config.seed, 2, it))?;
        if !loss.is_finite() {
            return Err(CoreError::NonFiniteLoss { iteration: it });
        }
        match self.adam.update(self.learner.store_mut(), &grads) {
            Err(gqnloc_nn::NnError::NonFiniteGradient { .. }) => return Err(CoreError::NonFiniteLoss { iteration: it }),
            other => other?,
        }
        self.iteration += 1;
        self.learner.set_trained(true);
        self.window.0 += loss;
        self.window.1 += 1;
        Ok(loss)
    }

    pub fn evaluate(&self, tasks: &[Task]) -> Result<(f64, f64)> {
        self.learner.evaluate(tasks, self.sigma(), derive(self.config.seed, 3, 0), self.config.batch_size)
    }

    fn record(&mut self, eval: &[Task]) -> Result<LogRecord> {
        let (test_loss, mse) = self.evaluate(eval)?;
        let train_loss = if self.window.1 == 0 { f64::NAN } else { self.window.0 / self.window.1 as f64 };
        self.window = (0.0, 0);
        let r = LogRecord {
            iteration: self.iteration,
            train_loss,
            test_loss,
            mse,
            sigma: self.sigma(),
            wall_seconds: self.started.elapsed().as_secs_f64(),
        };
        self.log.push(r.clone());
        Ok(r)
    }

    /// Train until `until` iterations, evaluating on `eval` every eval
    /// interval and at the end. With a checkpoint path, the checkpoint is
    /// rewritten at every evaluation, so a non-finite loss aborts the run
    /// with the last good checkpoint left in place.
    pub fn run(
        &mut self,
        source: &TaskSource,
        eval: &[Task],
        until: u64,
        checkpoint: Option<&Path>,
        on_record: &mut dyn FnMut(&LogRecord),
    ) -> Result<()> {
        while self.iteration < until {
            self.step(source)?;
            if self.iteration.is_multiple_of(self.config.eval_interval) || self.iteration == until {
                let r = self.record(eval)?;
                on_record(&r);
                if let Some(p) = checkpoint {
                    self.checkpoint().save(p)?;
                }
            }
        }
        Ok(())
    }
}

impl Trainer {
    /// Trains up to the configured iteration count on a dataset split. Works
    /// for fresh and resumed trainers alike.
    pub fn run_on_dataset(
        &mut self,
        train: &[Episode],
        test: &[Episode],
        checkpoint: Option<&Path>,
        on_record: &mut dyn FnMut(&LogRecord),
    ) -> Result<()> {
        SplitManifest::new(train, test)?;
        let c = &self.config;
        let eval = evaluation_tasks(test, c.eval_tasks, c.context_size, derive(c.seed, 4, 0))?;
        let source = TaskSource::Episodes { episodes: train, context_size: c.context_size };
        let until = c.iterations;
        self.run(&source, &eval, until, checkpoint, on_record)
    }
}

fn adam_config(cfg: &TrainConfig) -> AdamConfig {
    AdamConfig { learning_rate: cfg.learning_rate, ..AdamConfig::default() }
}

/// Full protocol on a dataset split: checks train/test disjointness, samples
/// random-scene batches from the training episodes and evaluates on tasks
/// from the held-out ones.
pub fn train_on_dataset(
    kind: ModelKind,
    model: &ModelConfig,
    config: &TrainConfig,
    train: &[Episode],
    test: &[Episode],
    checkpoint: Option<&Path>,
    on_record: &mut dyn FnMut(&LogRecord),
) -> Result<Trainer> {
    let mut t = Trainer::new(kind, model, config.clone())?;
    t.run_on_dataset(train, test, checkpoint, on_record)?;
    Ok(t)
}

pub fn train_generative(
    model: &ModelConfig,
    config: &TrainConfig,
    train: &[Episode],
    test: &[Episode],
    checkpoint: Option<&Path>,
) -> Result<(GenerativeModel<f32>, TrainLog)> {
    let t = train_on_dataset(ModelKind::Generative, model, config, train, test, checkpoint, &mut |_| {})?;
    match t.learner {
        Learner::Generative(m) => Ok((m, t.log)),
        Learner::Discriminative(_) => unreachable!("generative run"),
    }
}

pub fn train_discriminative(
    model: &ModelConfig,
    config: &TrainConfig,
    train: &[Episode],
    test: &[Episode],
    checkpoint: Option<&Path>,
) -> Result<(DiscriminativeModel<f32>, TrainLog)> {
    let t = train_on_dataset(ModelKind::Discriminative, model, config, train, test, checkpoint, &mut |_| {})?;
    match t.learner {
        Learner::Discriminative(m) => Ok((m, t.log)),
        Learner::Generative(_) => unreachable!("discriminative run"),
    }
}

/// Checkpoint of a model outside a training run (no optimizer state).
pub fn model_checkpoint(learner: &Learner, iteration: u64) -> Checkpoint {
    let meta = CheckpointMeta {
        kind: learner.kind(),
        model: learner.model_config().clone(),
        iteration,
        trained: learner.trained(),
        train: None,
    };
    Checkpoint { meta: meta.to_json(), params: learner.store().clone(), adam: None }
}

/// Load any model checkpoint, validating its config block against the
/// parameter layout.
pub fn load_learner(path: &Path) -> Result<(Learner, CheckpointMeta)> {
    if !path.exists() {
        return Err(io_err(path)(std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found")));
    }
    let ckpt = Checkpoint::load(path)?;
    let meta = CheckpointMeta::from_json(&ckpt.meta)?;
    let mut learner = Learner::new(meta.kind, &meta.model, 0)?;
    ckpt.restore_into(learner.store_mut()).map_err(|e| CoreError::ConfigMismatch(e.to_string()))?;
    learner.set_trained(meta.trained);
    Ok((learner, meta))
}

pub fn load_generative(path: &Path) -> Result<GenerativeModel<f32>> {
    match load_learner(path)?.0 {
        Learner::Generative(m) => Ok(m),
        Learner::Discriminative(_) => {
            Err(CoreError::WrongModel { expected: "generative".into(), found: "discriminative".into() })
        }
    }
}

pub fn load_discriminative(path: &Path) -> Result<DiscriminativeModel<f32>> {
    match load_learner(path)?.0 {
        Learner::Discriminative(m) => Ok(m),
        Learner::Generative(_) => {
            Err(CoreError::WrongModel { expected: "discriminative".into(), found: "generative".into() })
        }
    }
}
