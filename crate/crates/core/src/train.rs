//! Adam, the warm-up + cosine schedule, checkpoints and the training loop.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{RunConfig, WeightMode};
use crate::dataset::{mix_seed, Sample};
use crate::error::{Error, Result};
use crate::geometry::hfov_mask;
use crate::network::Network;
use crate::occupancy::{
    class_weights_from_frequency, total_loss, ClassWeights, LossNormalizer, LossReport, MetricAccumulator,
    MetricTable, OccupancyGrid, NUM_CLASSES,
};
use crate::reduction::SparseRT;
use crate::tensor::{Graph, Mode, NdArray, ParamStore};

/// Linear warm-up from zero over the first `warmup` steps, then cosine
/// annealing towards zero at `total`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub total: usize,
    pub warmup: usize,
}

impl Schedule {
    pub fn new(base_lr: f64, total: usize, warmup_fraction: f64) -> Self {
        Self {
            base_lr,
            total,
            warmup: (total as f64 * warmup_fraction).floor() as usize,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.base_lr * step as f64 / self.warmup as f64;
        }
        let span = (self.total - self.warmup).max(1) as f64;
        let t = ((step - self.warmup) as f64 / span).min(1.0);
        self.base_lr * 0.5 * (1.0 + (PI * t).cos())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub t: u64,
    m: BTreeMap<String, NdArray>,
    v: BTreeMap<String, NdArray>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

impl Adam {
    /// One bias-corrected update of every trainable parameter from its
    /// gradient slot.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for p in store.iter_mut().filter(|p| p.trainable) {
            let m = self.m.entry(p.name.clone()).or_insert_with(|| NdArray::zeros(p.value.shape()));
            let v = self.v.entry(p.name.clone()).or_insert_with(|| NdArray::zeros(p.value.shape()));
            let (m, v) = (m.data_mut(), v.data_mut());
            let g = p.grad.data();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                *w -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
            }
        }
    }
}

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";
const STATE: &str = "train.state";

/// Resumable training state: counters, loss averages, best validation score.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: usize,
    pub adam: Adam,
    pub norm: LossNormalizer,
    pub best: Option<f64>,
}

/// Writes model parameters plus optimizer state into one parameter file;
/// the extra entries live under `adam.*` and `train.*`.
pub fn save_checkpoint(path: &Path, params: &ParamStore, state: &TrainState) -> Result<()> {
    let mut out = ParamStore::new(params.seed());
    for p in params.iter() {
        out.insert(&p.name, p.value.clone())?;
    }
    for (k, m) in &state.adam.m {
        out.insert(&format!("{ADAM_M}{k}"), m.clone())?;
    }
    for (k, v) in &state.adam.v {
        out.insert(&format!("{ADAM_V}{k}"), v.clone())?;
    }
    let ema = state.norm.ema;
    let mut s = vec![
        state.step as f64,
        state.adam.t as f64,
        state.best.map_or(0.0, |_| 1.0),
        state.best.unwrap_or(0.0),
        ema.map_or(0.0, |_| 1.0),
    ];
    s.extend(ema.unwrap_or_default());
    out.insert(STATE, NdArray::vector(&s))?;
    out.save(path)
}

/// Model parameters of a checkpoint or plain parameter file.
pub fn load_model_params(path: &Path) -> Result<ParamStore> {
    let all = ParamStore::load(path)?;
    let mut out = ParamStore::new(0);
    for p in all.iter().filter(|p| !is_state_entry(&p.name)) {
        out.insert(&p.name, p.value.clone())?;
    }
    Ok(out)
}

fn is_state_entry(name: &str) -> bool {
    name.starts_with("adam.") || name.starts_with("train.")
}

/// Restores parameters and training state; the normaliser switch comes
/// from the caller.
pub fn load_checkpoint(path: &Path, params: &mut ParamStore, norm_enabled: bool) -> Result<TrainState> {
    let all = ParamStore::load(path)?;
    let bad = |r: &str| Error::Format {
        path: path.to_path_buf(),
        reason: r.to_string(),
    };
    let mut adam = Adam::default();
    for p in all.iter() {
        if let Some(k) = p.name.strip_prefix(ADAM_M) {
            adam.m.insert(k.to_string(), p.value.clone());
        } else if let Some(k) = p.name.strip_prefix(ADAM_V) {
            adam.v.insert(k.to_string(), p.value.clone());
        } else if !is_state_entry(&p.name) {
            params.set_value(&p.name, p.value.clone())?;
        }
    }
    let s = all.value(STATE).map_err(|_| bad("no training state; not a checkpoint"))?.data();
    if s.len() != 9 {
        return Err(bad("training state has the wrong length"));
    }
    adam.t = s[1] as u64;
    let mut norm = LossNormalizer::new(norm_enabled);
    norm.ema = (s[4] != 0.0).then(|| [s[5], s[6], s[7], s[8]]);
    Ok(TrainState {
        step: s[0] as usize,
        adam,
        norm,
        best: (s[2] != 0.0).then_some(s[3]),
    })
}

/// Eval-mode class prediction (argmax, ties to the lower class).
pub fn predict(net: &Network, store: &ParamStore, input: &SparseRT) -> Result<OccupancyGrid> {
    let mut g = Graph::eval();
    let logits = net.forward(&mut g, store, input)?;
    let z = g.value(logits);
    let labels = (0..z.outer_len())
        .map(|i| {
            let row = z.row(i);
            (1..NUM_CLASSES).fold(0usize, |b, c| if row[c] > row[b] { c } else { b }) as u8
        })
        .collect();
    OccupancyGrid::from_labels(net.cfg.grid, labels)
}

/// Dataset-level metrics: intersections and unions summed over frames.
pub fn evaluate(
    net: &Network,
    store: &ParamStore,
    samples: &[Sample],
    hfov_deg: f64,
    ranges: &[f64],
) -> Result<MetricTable> {
    let mask = hfov_mask(&net.cfg.grid, hfov_deg)?;
    let mut acc = MetricAccumulator::new(ranges);
    for s in samples {
        acc.add(&predict(net, store, &s.input)?, &s.gt, &mask)?;
    }
    Ok(acc.table())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub report: LossReport,
}

pub const LOSS_CSV_HEADER: &str = "step,lr,ce,lovasz,scal_geo,scal_sem,total";

impl StepLog {
    pub fn csv_row(&self) -> String {
        let r = &self.report;
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.lr, r.ce, r.lovasz, r.scal_geo, r.scal_sem, r.total
        )
    }
}

pub fn class_weights(mode: WeightMode, samples: &[Sample]) -> Result<ClassWeights> {
    match mode {
        WeightMode::Uniform => Ok(ClassWeights::uniform()),
        WeightMode::Frequency => {
            let grids: Vec<OccupancyGrid> = samples.iter().map(|s| s.gt.clone()).collect();
            class_weights_from_frequency(&grids)
        }
    }
}

/// The training loop state around one network.
pub struct Trainer {
    pub net: Network,
    pub params: ParamStore,
    pub state: TrainState,
    pub schedule: Schedule,
    pub weights: ClassWeights,
    seed: u64,
    n_train: usize,
    order: Option<(usize, Vec<usize>)>,
}

impl Trainer {
    pub fn new(cfg: &RunConfig, train: &[Sample]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let net = Network::new(cfg.net())?;
        let params = net.init_params(cfg.seed)?;
        let total = cfg.max_steps.unwrap_or(cfg.epochs * train.len());
        Ok(Self {
            net,
            params,
            state: TrainState {
                step: 0,
                adam: Adam::default(),
                norm: LossNormalizer::new(cfg.loss_normalizer),
                best: None,
            },
            schedule: Schedule::new(cfg.lr, total, cfg.warmup_fraction),
            weights: class_weights(cfg.class_weights, train)?,
            seed: cfg.seed,
            n_train: train.len(),
            order: None,
        })
    }

    pub fn resume(&mut self, path: &Path) -> Result<()> {
        self.state = load_checkpoint(path, &mut self.params, self.state.norm.enabled)?;
        Ok(())
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.schedule.total
    }

    pub fn epoch_of(&self, step: usize) -> usize {
        step / self.n_train
    }

    /// Index of the sample seen at `step`: a seeded permutation per epoch.
    fn sample_index(&mut self, step: usize) -> usize {
        let epoch = self.epoch_of(step);
        if self.order.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut perm: Vec<usize> = (0..self.n_train).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(self.seed, epoch as u64)));
            self.order = Some((epoch, perm));
        }
        self.order.as_ref().expect("just set").1[step % self.n_train]
    }

    /// Forward, backward and one Adam update.
    pub fn step(&mut self, train: &[Sample]) -> Result<StepLog> {
        let step = self.state.step;
        let sample = &train[self.sample_index(step)];
        let mut g = Graph::new(Mode::Train, mix_seed(self.seed ^ 0xd20_0a7, step as u64));
        let logits = self.net.forward(&mut g, &self.params, &sample.input)?;
        let (loss, report) = total_loss(&mut g, logits, &sample.gt, &self.weights, &mut self.state.norm)?;
        if !report.raw().iter().chain([&report.total]).all(|v| v.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        let grads = g.backward(loss);
        self.params.zero_grad();
        grads.accumulate(&g, &mut self.params);
        let lr = self.schedule.lr(step);
        self.state.adam.step(&mut self.params, lr);
        if !self.params.iter().all(|p| p.value.all_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        self.state.step += 1;
        Ok(StepLog { step, lr, report })
    }
}

/// Files written by [`run_training`].
#[derive(Clone, Debug)]
pub struct TrainOutputs {
    pub log: Vec<StepLog>,
    pub last: PathBuf,
    pub best: Option<PathBuf>,
    pub loss_csv: PathBuf,
}

/// Trains until the schedule ends (or `stop_at` steps), validating at
/// every epoch end. Writes `loss.csv`, `last.ckpt` and, with a validation
/// set, `best.ckpt` into `cfg.out_dir`. When resuming, rows are appended.
pub fn run_training(
    cfg: &RunConfig,
    train: &[Sample],
    val: &[Sample],
    resume: Option<&Path>,
    stop_at: Option<usize>,
) -> Result<(Trainer, TrainOutputs)> {
    let mut tr = Trainer::new(cfg, train)?;
    if let Some(p) = resume {
        tr.resume(p)?;
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    let loss_csv = cfg.out_dir.join("loss.csv");
    let best_path = cfg.out_dir.join("best.ckpt");
    let mut csv = if resume.is_some() && loss_csv.exists() {
        std::fs::read_to_string(&loss_csv)?
    } else {
        format!("{LOSS_CSV_HEADER}\n")
    };
    let end = stop_at.map_or(tr.schedule.total, |s| s.min(tr.schedule.total));
    log::info!(
        "training {} steps ({} warm-up) on {} frames from step {}",
        tr.schedule.total,
        tr.schedule.warmup,
        train.len(),
        tr.state.step
    );
    let mut log = Vec::new();
    while tr.state.step < end {
        let entry = tr.step(train)?;
        let _ = writeln!(csv, "{}", entry.csv_row());
        log.push(entry);
        let done = tr.state.step;
        let epoch_end = done % train.len() == 0 || done == tr.schedule.total;
        if epoch_end && !val.is_empty() {
            let t = evaluate(&tr.net, &tr.params, val, cfg.hfov_deg, &cfg.ranges)?;
            let score = t.rows[0].iou.unwrap_or(0.0);
            log::info!("step {done}: val IoU@{} = {score:.4}", cfg.ranges[0]);
            if tr.state.best.is_none_or(|b| score > b) {
                tr.state.best = Some(score);
                save_checkpoint(&best_path, &tr.params, &tr.state)?;
            }
        }
        if done % 50 == 0 {
            log::info!("step {done}: total {:.4} lr {:.2e}", entry.report.total, entry.lr);
        }
    }
    std::fs::write(&loss_csv, &csv)?;
    let last = cfg.out_dir.join("last.ckpt");
    save_checkpoint(&last, &tr.params, &tr.state)?;
    let best = best_path.exists().then_some(best_path);
    Ok((tr, TrainOutputs { log, last, best, loss_csv }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_closed_form() {
        let s = Schedule::new(3e-4, 300, 1.0 / 3.0);
        assert_eq!(s.warmup, 100);
        assert_eq!(s.lr(0), 0.0);
        assert!((s.lr(50) - 1.5e-4).abs() < 1e-18);
        assert!((s.lr(100) - 3e-4).abs() < 1e-18);
        assert!(s.lr(299) < 1e-7);
        assert!((0..299).all(|k| k < 100 || s.lr(k + 1) <= s.lr(k)));
        // a one-step run has no warm-up
        assert_eq!(Schedule::new(3e-4, 1, 1.0 / 3.0).lr(0), 3e-4);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut store = ParamStore::new(0);
        store.insert("w", NdArray::vector(&[1.0, -2.0, 0.5])).unwrap();
        store.get_mut("w").unwrap().grad = NdArray::vector(&[0.3, -4.0, 0.0]);
        let mut adam = Adam::default();
        adam.step(&mut store, 0.1);
        let w = store.value("w").unwrap().data().to_vec();
        // bias-corrected first step is lr * sign(g)
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 1.9).abs() < 1e-6);
        assert_eq!(w[2], 0.5);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut store = ParamStore::new(3);
        store.insert("a.w", NdArray::vector(&[1.0, 2.0])).unwrap();
        store.get_mut("a.w").unwrap().grad = NdArray::vector(&[0.5, 0.5]);
        let mut adam = Adam::default();
        adam.step(&mut store, 0.01);
        let mut norm = LossNormalizer::new(true);
        norm.update([1.0, 2.0, 3.0, 4.0]);
        let state = TrainState {
            step: 1,
            adam,
            norm,
            best: Some(0.25),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        save_checkpoint(&p, &store, &state).unwrap();
        let mut back = ParamStore::new(3);
        back.insert("a.w", NdArray::vector(&[0.0, 0.0])).unwrap();
        let st = load_checkpoint(&p, &mut back, true).unwrap();
        assert_eq!(st, state);
        assert_eq!(back.value("a.w").unwrap(), store.value("a.w").unwrap());
        assert_eq!(load_model_params(&p).unwrap().len(), 1);
    }
}
