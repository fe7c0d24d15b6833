//! Training loop.
//!
//! Each step augments the labeled batch weakly and the unlabeled batch both
//! weakly and strongly, computes pseudo-labels on the weak unlabeled view,
//! takes one Nesterov SGD step on the total loss and records the weak-view
//! features with their hard labels in the memory bank. Prototypes are
//! re-extracted from the bank at every extraction interval.
//!
//! During the first `pretrain_iters` iterations, and until the first set of
//! prototypes exists, AugF is not evaluated: pseudo-labels come from
//! `Clf(Enc(x))` and only the image-space consistency term is used.

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{strong_augment, weak_augment, AugPolicy, WeakConfig};
use crate::data::{Batcher, CyclicBatcher, DataKind, Dataset, LabeledSet, UnlabeledSet};
use crate::error::{ensure_dim, Error, Result};
use crate::eval::{evaluate, EvalResult};
use crate::losses::LossWeights;
use crate::model::Model;
use crate::nn::argmax_rows;
use crate::objective::{LossBreakdown, LossGraph, LossSwitches, StepInputs};
use crate::optim::step_model;
use crate::prototype::{extract_prototypes, swap_and_clear, MemoryBank, PrototypeSet};
use crate::schedule::Schedule;
use crate::scalar::Scalar;
use crate::seeds::{self, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeInterval {
    /// Every `n` passes over the unlabeled set.
    Epochs(usize),
    /// Every `n` iterations.
    Iterations(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub weight_decay: f64,
    pub lambda_g: f64,
    pub lambda_f: f64,
    pub prototypes_per_class: usize,
    pub prototype_interval: PrototypeInterval,
    pub pretrain_iters: usize,
    pub cycle_iters: usize,
    pub converge_iters: usize,
    /// Multiplier on every learning rate of the schedule.
    pub lr_scale: f64,
    pub weak: WeakConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_labeled: 64,
            batch_unlabeled: 128,
            weight_decay: 2e-4,
            lambda_g: 0.5,
            lambda_f: 2.0,
            prototypes_per_class: 20,
            prototype_interval: PrototypeInterval::Epochs(1),
            pretrain_iters: 3000,
            cycle_iters: 75_000,
            converge_iters: 30_000,
            lr_scale: 1.0,
            weak: WeakConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> Schedule {
        Schedule {
            pretrain: self.pretrain_iters,
            cycle: self.cycle_iters,
            converge: self.converge_iters,
            lr_scale: self.lr_scale,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            con_g: self.lambda_g,
            con_f: self.lambda_f,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_weights().validate()?;
        if self.batch_labeled == 0 || self.batch_unlabeled == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.prototypes_per_class == 0 {
            return Err(Error::Config("prototypes_per_class must be positive".into()));
        }
        if matches!(
            self.prototype_interval,
            PrototypeInterval::Epochs(0) | PrototypeInterval::Iterations(0)
        ) {
            return Err(Error::Config("prototype interval must be positive".into()));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 || !self.lr_scale.is_finite() || self.lr_scale <= 0.0 {
            return Err(Error::Config("weight decay must be >= 0 and lr_scale > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub iteration: usize,
    pub lr: f64,
    pub momentum: f64,
    pub losses: LossBreakdown<f64>,
    pub used_augf: bool,
    /// Pseudo-labels (the training targets) matching the hidden truth.
    pub pl_correct_augf: usize,
    /// `Clf(Enc(x))` pseudo-labels matching the hidden truth.
    pub pl_correct_plain: usize,
    pub pl_scored: usize,
}

/// One row per epoch. Serialized columns are the metrics CSV header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub iter: usize,
    pub lr: f64,
    pub l_clf: f64,
    pub l_con_g: f64,
    pub l_con_f: f64,
    pub test_error: f64,
    pub pl_acc_augf: f64,
    pub pl_acc_plain: f64,
    /// Whether AugF was active for every step of the epoch. Not part of the CSV.
    #[serde(skip)]
    pub augf_active: bool,
}

pub const METRICS_HEADER: [&str; 9] = [
    "epoch",
    "iter",
    "lr",
    "l_clf",
    "l_con_g",
    "l_con_f",
    "test_error",
    "pl_acc_augf",
    "pl_acc_plain",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record(METRICS_HEADER)?;
        }
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.into_inner()
            .map_err(|e| Error::Format(format!("flushing metrics csv: {e}")))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<std::result::Result<Vec<MetricsRow>, _>>()?;
        Ok(Self { rows })
    }

    /// Mean of `(pl_acc_augf, pl_acc_plain)` over epochs where AugF was active throughout.
    pub fn mean_pseudo_label_accuracy(&self) -> Option<(f64, f64)> {
        let active: Vec<&MetricsRow> = self.rows.iter().filter(|r| r.augf_active).collect();
        if active.is_empty() {
            return None;
        }
        let n = active.len() as f64;
        Some((
            active.iter().map(|r| r.pl_acc_augf).sum::<f64>() / n,
            active.iter().map(|r| r.pl_acc_plain).sum::<f64>() / n,
        ))
    }
}

#[derive(Default)]
struct EpochTally {
    steps: usize,
    clf: f64,
    con_g: f64,
    con_f: f64,
    all_augf: bool,
    correct_augf: usize,
    correct_plain: usize,
    scored: usize,
    last_lr: f64,
}

impl EpochTally {
    fn new() -> Self {
        Self {
            all_augf: true,
            ..Default::default()
        }
    }

    fn add(&mut self, m: &StepMetrics) {
        self.steps += 1;
        self.clf += m.losses.clf;
        self.con_g += m.losses.con_g;
        self.con_f += m.losses.con_f;
        self.all_augf &= m.used_augf;
        self.correct_augf += m.pl_correct_augf;
        self.correct_plain += m.pl_correct_plain;
        self.scored += m.pl_scored;
        self.last_lr = m.lr;
    }

    fn row(&self, epoch: usize, iter: usize, test_error: f64) -> MetricsRow {
        let steps = self.steps.max(1) as f64;
        let frac = |c: usize| if self.scored == 0 { 0.0 } else { c as f64 / self.scored as f64 };
        MetricsRow {
            epoch,
            iter,
            lr: self.last_lr,
            l_clf: self.clf / steps,
            l_con_g: self.con_g / steps,
            l_con_f: self.con_f / steps,
            test_error,
            pl_acc_augf: frac(self.correct_augf),
            pl_acc_plain: frac(self.correct_plain),
            augf_active: self.steps > 0 && self.all_augf,
        }
    }
}

/// Everything that evolves during training.
pub struct Trainer<F> {
    config: TrainConfig,
    policy: AugPolicy,
    switches: LossSwitches,
    kind: DataKind,
    classes: usize,
    seed: u64,
    pub model: Model<F>,
    pub(crate) velocity: Model<F>,
    pub(crate) bank: MemoryBank<F>,
    pub(crate) prototypes: Option<PrototypeSet<F>>,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) iteration: usize,
    pub(crate) epoch: usize,
    pub(crate) extractions: usize,
}

impl<F: Scalar> Trainer<F> {
    pub fn new(
        config: TrainConfig,
        policy: AugPolicy,
        switches: LossSwitches,
        model: Model<F>,
        kind: DataKind,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        policy.validate_for(&kind)?;
        if switches.use_con_g && !switches.use_augf {
            return Err(Error::Config("use_con_g requires use_augf".into()));
        }
        let classes = model.classifier.classes();
        let velocity = model.zeros_like();
        let bank = MemoryBank::new(0, model.encoder.feature_dim());
        Ok(Self {
            config,
            policy,
            switches,
            kind,
            classes,
            seed,
            model,
            velocity,
            bank,
            prototypes: None,
            rng: seeds::rng(seed, &[tag::PROTOTYPES]),
            iteration: 0,
            epoch: 0,
            extractions: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn extractions(&self) -> usize {
        self.extractions
    }

    pub fn prototypes(&self) -> Option<&PrototypeSet<F>> {
        self.prototypes.as_ref()
    }

    pub fn velocity(&self) -> &Model<F> {
        &self.velocity
    }

    pub fn bank(&self) -> &MemoryBank<F> {
        &self.bank
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    /// Sets the memory bank capacity; existing entries are discarded.
    pub fn set_bank_capacity(&mut self, capacity: usize) {
        self.bank = MemoryBank::new(capacity, self.model.encoder.feature_dim());
    }

    /// Whether the next step would run through AugF.
    pub fn augf_active(&self) -> bool {
        self.switches.use_augf
            && self.iteration >= self.config.pretrain_iters
            && self.prototypes.as_ref().is_some_and(|p| !p.is_empty())
    }

    /// Prototypes used for evaluation right now, if AugF is active.
    pub fn eval_prototypes(&self) -> Option<&PrototypeSet<F>> {
        if self.augf_active() {
            self.prototypes.as_ref()
        } else {
            None
        }
    }

    pub fn evaluate(&self, test: &Dataset<F>) -> Result<EvalResult> {
        evaluate(&self.model, self.eval_prototypes(), test)
    }

    /// One forward/backward/update on raw (unaugmented) batches.
    ///
    /// `audit` holds the hidden labels of the unlabeled batch; they only feed
    /// the pseudo-label accuracy counters.
    pub fn train_step(
        &mut self,
        labeled_x: ArrayView2<'_, F>,
        labels: &[usize],
        unlabeled_x: ArrayView2<'_, F>,
        audit: Option<&[usize]>,
    ) -> Result<StepMetrics> {
        if let Some(a) = audit {
            ensure_dim!(
                a.len() == unlabeled_x.nrows(),
                "{} audit labels for {} unlabeled samples",
                a.len(),
                unlabeled_x.nrows()
            );
        }
        let it = self.iteration as u64;
        let (lr, momentum) = self.config.schedule().at(self.iteration);
        let weak = &self.config.weak;
        let x_l = weak_augment(labeled_x, &self.kind, weak, seeds::derive(self.seed, &[tag::WEAK_LABELED, it]))?;
        let x_w = weak_augment(unlabeled_x, &self.kind, weak, seeds::derive(self.seed, &[tag::WEAK_UNLABELED, it]))?;
        let (x_s, _) = strong_augment(unlabeled_x, &self.kind, &self.policy, seeds::derive(self.seed, &[tag::STRONG, it]))?;

        let augf_on = self.augf_active();
        let protos = if augf_on { self.prototypes.as_ref() } else { None };

        let f_u = self.model.features(x_w.view())?;
        let p_plain = self.model.classifier.forward(f_u.view())?;
        let targets = match protos {
            Some(p) => self.model.predict_from_features(f_u.view(), Some(p))?,
            None => p_plain.clone(),
        };
        let hard = argmax_rows(targets.view());
        let hard_plain = argmax_rows(p_plain.view());

        let weights = self.config.loss_weights();
        let (losses, grads, labeled_features, used_augf) = {
            let graph = LossGraph::record(
                &self.model,
                protos,
                StepInputs {
                    labeled: x_l.view(),
                    labels,
                    strong: x_s.view(),
                    targets: targets.view(),
                },
                &weights,
                self.switches,
            )?;
            (
                graph.losses(),
                graph.backward(),
                graph.labeled_features().cloned(),
                graph.used_augf(),
            )
        };

        step_model(
            &mut self.model,
            &grads,
            &mut self.velocity,
            F::lit(lr),
            F::lit(momentum),
            F::lit(self.config.weight_decay),
        )?;

        self.bank.record(f_u.view(), &hard)?;
        if let Some(f_l) = labeled_features {
            self.bank.record(f_l.view(), labels)?;
        }

        let (mut correct_augf, mut correct_plain) = (0, 0);
        if let Some(truth) = audit {
            correct_augf = hard.iter().zip(truth).filter(|(a, b)| a == b).count();
            correct_plain = hard_plain.iter().zip(truth).filter(|(a, b)| a == b).count();
        }

        self.iteration += 1;
        Ok(StepMetrics {
            iteration: self.iteration,
            lr,
            momentum,
            losses: LossBreakdown {
                clf: losses.clf.as_f64(),
                con_g: losses.con_g.as_f64(),
                con_f: losses.con_f.as_f64(),
                total: losses.total.as_f64(),
            },
            used_augf,
            pl_correct_augf: correct_augf,
            pl_correct_plain: correct_plain,
            pl_scored: audit.map_or(0, <[usize]>::len),
        })
    }

    /// Runs k-means on the bank and swaps in the new prototypes. No-op on an empty bank.
    pub fn extract_prototypes(&mut self) -> Result<bool> {
        if self.bank.is_empty() {
            return Ok(false);
        }
        let seed: u64 = self.rng.random();
        let fresh = extract_prototypes(
            &self.bank,
            self.config.prototypes_per_class,
            self.classes,
            seed,
            self.prototypes.as_ref(),
            self.epoch,
        )?;
        swap_and_clear(&mut self.bank, &mut self.prototypes, fresh);
        self.extractions += 1;
        Ok(true)
    }

    /// Trains for the full schedule, evaluating on `test` after every epoch.
    ///
    /// `on_epoch` runs after each metrics row is produced.
    pub fn fit(
        &mut self,
        labeled: &LabeledSet<F>,
        unlabeled: &UnlabeledSet<F>,
        test: &Dataset<F>,
        mut on_epoch: impl FnMut(&Trainer<F>, &MetricsRow) -> Result<()>,
    ) -> Result<MetricsLog> {
        ensure_dim!(
            labeled.samples.ncols() == self.model.encoder.input_dim()
                && (unlabeled.is_empty() || unlabeled.samples.ncols() == self.model.encoder.input_dim()),
            "data width does not match encoder input {}",
            self.model.encoder.input_dim()
        );
        let total = self.config.schedule().total();
        let unl_batches = Batcher::new(
            unlabeled.len(),
            self.config.batch_unlabeled,
            seeds::derive(self.seed, &[tag::UNLABELED_ORDER]),
            false,
        )?;
        let mut lab_batches = CyclicBatcher::new(
            labeled.len(),
            self.config.batch_labeled,
            seeds::derive(self.seed, &[tag::LABELED_ORDER]),
        )?;
        let steps_per_epoch = unl_batches.batches_per_epoch().max(1);
        self.set_bank_capacity(unlabeled.len() + steps_per_epoch * self.config.batch_labeled);

        let audit = unlabeled.hidden_labels().audit();
        let mut log = MetricsLog::default();
        while self.iteration < total {
            let batches = if unlabeled.is_empty() {
                vec![Vec::new()]
            } else {
                unl_batches.epoch(self.epoch)
            };
            let mut tally = EpochTally::new();
            let mut complete = true;
            for idx in &batches {
                if self.iteration >= total {
                    complete = false;
                    break;
                }
                let lab_idx = lab_batches.next_batch();
                let x_l = labeled.samples.select(Axis(0), &lab_idx);
                let y_l: Vec<usize> = lab_idx.iter().map(|&i| labeled.labels[i]).collect();
                let x_u: Array2<F> = unlabeled.samples.select(Axis(0), idx);
                let truth: Vec<usize> = idx.iter().map(|&i| audit[i]).collect();
                let m = self.train_step(x_l.view(), &y_l, x_u.view(), Some(&truth))?;
                tally.add(&m);
                if let PrototypeInterval::Iterations(n) = self.config.prototype_interval {
                    if self.iteration.is_multiple_of(n) {
                        self.extract_prototypes()?;
                    }
                }
            }
            self.epoch += 1;
            if complete {
                if let PrototypeInterval::Epochs(n) = self.config.prototype_interval {
                    if self.epoch.is_multiple_of(n) {
                        self.extract_prototypes()?;
                    }
                }
            }
            let eval = self.evaluate(test)?;
            let row = tally.row(self.epoch, self.iteration, eval.error);
            log::debug!(
                "epoch {} iter {} lr {:.2e} clf {:.4} con_g {:.4} con_f {:.4} err {:.4} (no AugF {:.4})",
                row.epoch,
                row.iter,
                row.lr,
                row.l_clf,
                row.l_con_g,
                row.l_con_f,
                eval.error,
                eval.error_without_augf
            );
            on_epoch(self, &row)?;
            log.rows.push(row);
        }
        Ok(log)
    }
}
