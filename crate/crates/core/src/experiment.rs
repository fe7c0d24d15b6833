//! Config-driven experiments: single runs, the four-row ablation and the
//! `p_k` / `I_p` sensitivity sweeps.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{AugOp, AugPolicy};
use crate::checkpoint::Checkpoint;
use crate::data::{
    load_binary_images, make_blobs, make_shifted_blobs, mix_domains, split_labeled, BinaryLayout,
    BlobSpec, DataKind, Dataset, DomainShift, ImageShape, LabeledSet, UnlabeledSet,
};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::{Model, ModelSpec};
use crate::objective::LossSwitches;
use crate::prototype::PrototypeSet;
use crate::seeds::{self, tag};
use crate::trainer::{MetricsLog, PrototypeInterval, TrainConfig, Trainer};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
/// JSON schema of `report.json`.
pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DatasetConfig {
    Blobs(BlobDataset),
    BinaryImages(ImageDataset),
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self::Blobs(BlobDataset::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobDataset {
    pub classes: usize,
    pub dim: usize,
    pub spread: f64,
    pub noise: f64,
    pub labels_per_class: usize,
    pub unlabeled: usize,
    pub test_per_class: usize,
    /// Per-class size of the separately drawn validation set.
    pub validation_per_class: usize,
    pub shift: DomainShift,
}

impl Default for BlobDataset {
    fn default() -> Self {
        Self {
            classes: 4,
            dim: 2,
            spread: 1.0,
            noise: 0.4,
            labels_per_class: 4,
            unlabeled: 2000,
            test_per_class: 500,
            validation_per_class: 100,
            shift: DomainShift {
                rotation_deg: 60.0,
                scale: 1.3,
                offset: 0.3,
                noise_inflation: 1.5,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageDataset {
    pub train: PathBuf,
    pub test: PathBuf,
    /// Pool the shifted-domain unlabeled samples are drawn from when `r_u > 0`.
    #[serde(default)]
    pub shifted: Option<PathBuf>,
    pub labels: usize,
    #[serde(default = "ImageDataset::default_classes")]
    pub classes: usize,
    #[serde(default = "ImageDataset::default_shape")]
    pub shape: ImageShape,
    /// Fraction of the training file held out for validation.
    #[serde(default)]
    pub validation_fraction: f64,
}

impl ImageDataset {
    fn default_classes() -> usize {
        10
    }

    fn default_shape() -> ImageShape {
        BinaryLayout::cifar10().shape
    }

    fn layout(&self) -> BinaryLayout {
        BinaryLayout {
            shape: self.shape,
            classes: self.classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub heads: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            feature_dim: 32,
            embed_dim: 32,
            heads: 4,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, input_dim: usize, classes: usize) -> ModelSpec {
        ModelSpec {
            input_dim,
            hidden: self.hidden.clone(),
            feature_dim: self.feature_dim,
            embed_dim: self.embed_dim,
            heads: self.heads,
            classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Operation pool; `None` uses every op that applies to the data kind.
    pub ops: Option<Vec<AugOp>>,
    pub num_ops: usize,
    pub magnitude: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            ops: None,
            num_ops: 2,
            magnitude: 10.0,
        }
    }
}

impl AugmentConfig {
    pub fn policy(&self, kind: &DataKind) -> Result<AugPolicy> {
        let ops = match &self.ops {
            Some(ops) => ops.clone(),
            None => AugPolicy::default_for(kind).ops,
        };
        let p = AugPolicy::new(ops, self.num_ops, self.magnitude)?;
        p.validate_for(kind)?;
        Ok(p)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Report the model at the end of training.
    #[default]
    Final,
    /// Report the epoch with the lowest validation error.
    BestValidation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Pre-training length in unlabeled-set passes; overrides `train.pretrain_iters`.
    pub pretrain_epochs: Option<usize>,
    pub augment: AugmentConfig,
    /// Fraction of the unlabeled set replaced by shifted-domain samples.
    pub r_u: f64,
    pub switches: LossSwitches,
    pub output_dir: Option<PathBuf>,
    /// Write `checkpoint.bin` every this many epochs (the final one is always written).
    pub checkpoint_every: Option<usize>,
    pub selection: Selection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            pretrain_epochs: None,
            augment: AugmentConfig::default(),
            r_u: 0.0,
            switches: LossSwitches::default(),
            output_dir: None,
            checkpoint_every: None,
            selection: Selection::Final,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.switches.use_con_g && !self.switches.use_augf {
            return Err(Error::Config("use_con_g requires use_augf".into()));
        }
        if !(0.0..=1.0).contains(&self.r_u) {
            return Err(Error::Config(format!("r_u = {} outside [0, 1]", self.r_u)));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        match &self.dataset {
            DatasetConfig::Blobs(b) => {
                if b.labels_per_class == 0 || b.test_per_class == 0 {
                    return Err(Error::Config("blobs need labels and test samples".into()));
                }
                if self.selection == Selection::BestValidation && b.validation_per_class == 0 {
                    return Err(Error::Config("best-validation selection needs validation samples".into()));
                }
            }
            DatasetConfig::BinaryImages(d) => {
                if !(0.0..1.0).contains(&d.validation_fraction) {
                    return Err(Error::Config("validation_fraction must be in [0, 1)".into()));
                }
                if self.selection == Selection::BestValidation && d.validation_fraction == 0.0 {
                    return Err(Error::Config("best-validation selection needs validation_fraction > 0".into()));
                }
                if self.r_u > 0.0 && d.shifted.is_none() {
                    return Err(Error::Config("r_u > 0 needs a shifted image pool".into()));
                }
            }
        }
        Ok(())
    }

    /// Canonical JSON: object keys sorted, no whitespace.
    pub fn canonical_json(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        Ok(serde_json::to_string(&value)?)
    }

    /// sha256 over `"blob <len>\0"` followed by the canonical JSON.
    pub fn hash(&self) -> Result<[u8; 32]> {
        let json = self.canonical_json()?;
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", json.len()).as_bytes());
        h.update(json.as_bytes());
        Ok(h.finalize().into())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything a run trains and evaluates on.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub labeled: LabeledSet<f64>,
    pub unlabeled: UnlabeledSet<f64>,
    pub test: Dataset<f64>,
    pub validation: Option<Dataset<f64>>,
}

impl PreparedData {
    pub fn kind(&self) -> DataKind {
        self.labeled.kind
    }

    pub fn classes(&self) -> usize {
        self.labeled.classes
    }

    pub fn input_dim(&self) -> usize {
        self.labeled.samples.ncols()
    }
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let seed = cfg.seed;
    match &cfg.dataset {
        DatasetConfig::Blobs(b) => {
            let unl_per_class = b.unlabeled.div_ceil(b.classes.max(1));
            let spec = |per_class, s| BlobSpec {
                classes: b.classes,
                per_class,
                dim: b.dim,
                spread: b.spread,
                noise: b.noise,
                seed: s,
            };
            let train = make_blobs::<f64>(&spec(
                b.labels_per_class + unl_per_class,
                seeds::derive(seed, &[tag::DATA]),
            ))?;
            let (labeled, unl) = split_labeled(&train, b.labels_per_class * b.classes, seed)?;
            let keep: Vec<usize> = (0..b.unlabeled.min(unl.len())).collect();
            let target = subset_unlabeled(&unl, &keep);
            let unlabeled = if cfg.r_u > 0.0 {
                let pool = make_shifted_blobs::<f64>(
                    &spec(unl_per_class, seeds::derive(seed, &[tag::SHIFT])),
                    &b.shift,
                )?;
                mix_domains(&target, &UnlabeledSet::from_dataset(pool), cfg.r_u, seed)?
            } else {
                target
            };
            let test = make_blobs::<f64>(&spec(b.test_per_class, seeds::derive(seed, &[tag::TEST])))?;
            let validation = (b.validation_per_class > 0)
                .then(|| make_blobs::<f64>(&spec(b.validation_per_class, seeds::derive(seed, &[tag::VALIDATION]))))
                .transpose()?;
            Ok(PreparedData {
                labeled,
                unlabeled,
                test,
                validation,
            })
        }
        DatasetConfig::BinaryImages(d) => {
            let layout = d.layout();
            let mut train = load_binary_images::<f64>(&d.train, &layout)?;
            let test = load_binary_images::<f64>(&d.test, &layout)?;
            let validation = if d.validation_fraction > 0.0 {
                let (rest, hold) = train.split_holdout(d.validation_fraction, seeds::derive(seed, &[tag::VALIDATION]))?;
                train = rest;
                Some(hold)
            } else {
                None
            };
            let (labeled, target) = split_labeled(&train, d.labels, seed)?;
            let unlabeled = match (&d.shifted, cfg.r_u > 0.0) {
                (Some(path), true) => {
                    let mut pool = load_binary_images::<f64>(path, &layout)?;
                    pool.domains.fill(crate::data::Domain::Shifted);
                    mix_domains(&target, &UnlabeledSet::from_dataset(pool), cfg.r_u, seed)?
                }
                _ => target,
            };
            Ok(PreparedData {
                labeled,
                unlabeled,
                test,
                validation,
            })
        }
    }
}

fn subset_unlabeled(u: &UnlabeledSet<f64>, idx: &[usize]) -> UnlabeledSet<f64> {
    let labels = u.hidden_labels().audit();
    let ds = Dataset {
        samples: u.samples.select(ndarray::Axis(0), idx),
        labels: idx.iter().map(|&i| labels[i]).collect(),
        domains: idx.iter().map(|&i| u.domains[i]).collect(),
        classes: u.classes,
        kind: u.kind,
    };
    UnlabeledSet::from_dataset(ds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub test_error: f64,
    pub test_error_without_augf: f64,
    pub validation_error: Option<f64>,
    pub selected_epoch: usize,
    pub epochs: usize,
    pub iterations: usize,
    pub extractions: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    pub shifted_unlabeled: usize,
    pub pl_acc_augf_mean: Option<f64>,
    pub pl_acc_plain_mean: Option<f64>,
    pub final_l_clf: Option<f64>,
    pub final_l_con_g: Option<f64>,
    pub final_l_con_f: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub result: RunSummary,
}

impl Report {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

pub struct ExperimentOutcome {
    pub metrics: MetricsLog,
    pub report: Report,
    pub checkpoint: Checkpoint<f64>,
}

struct Best {
    error: f64,
    epoch: usize,
    checkpoint: Checkpoint<f64>,
    prototypes: Option<PrototypeSet<f64>>,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Trains and evaluates one configuration. Writes `metrics.csv`,
/// `report.json` and `checkpoint.bin` when `output_dir` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let data = prepare_data(cfg)?;
    run_prepared(cfg, &data).inspect(|o| {
        log::info!(
            "seed {} finished in {:.1}s: test error {:.4}",
            cfg.seed,
            started.elapsed().as_secs_f64(),
            o.report.result.test_error
        )
    })
}

/// Like [`run_experiment`] on data that is already prepared.
pub fn run_prepared(cfg: &ExperimentConfig, data: &PreparedData) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let kind = data.kind();
    let spec = cfg.model.spec(data.input_dim(), data.classes());
    let mut init_rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, &[tag::INIT]));
    let model = Model::<f64>::new(&spec, &mut init_rng)?;

    let mut train_cfg = cfg.train.clone();
    if let Some(e) = cfg.pretrain_epochs {
        train_cfg.pretrain_iters = e * data.unlabeled.len().div_ceil(train_cfg.batch_unlabeled).max(1);
    }
    let mut trainer = Trainer::new(train_cfg, cfg.augment.policy(&kind)?, cfg.switches, model, kind, cfg.seed)?;

    if let Some(dir) = &cfg.output_dir {
        ensure_dir(dir)?;
    }
    let ckpt_path = cfg.output_dir.as_ref().map(|d| d.join("checkpoint.bin"));
    let mut best: Option<Best> = None;
    let metrics = trainer.fit(&data.labeled, &data.unlabeled, &data.test, |t, row| {
        if let (Some(every), Some(path)) = (cfg.checkpoint_every, &ckpt_path) {
            if row.epoch % every == 0 {
                Checkpoint::capture(t, hash).save(path)?;
            }
        }
        if cfg.selection == Selection::BestValidation {
            let val = data.validation.as_ref().expect("validated");
            let err = t.evaluate(val)?.error;
            if best.as_ref().is_none_or(|b| err < b.error) {
                best = Some(Best {
                    error: err,
                    epoch: row.epoch,
                    checkpoint: Checkpoint::capture(t, hash),
                    prototypes: t.eval_prototypes().cloned(),
                });
            }
        }
        Ok(())
    })?;

    let (checkpoint, eval, selected_epoch, validation_error) = match best {
        Some(b) => {
            let eval = evaluate(&b.checkpoint.model, b.prototypes.as_ref(), &data.test)?;
            (b.checkpoint, eval, b.epoch, Some(b.error))
        }
        None => {
            let eval = trainer.evaluate(&data.test)?;
            let val = data.validation.as_ref().map(|v| trainer.evaluate(v)).transpose()?;
            (Checkpoint::capture(&trainer, hash), eval, trainer.epoch(), val.map(|v| v.error))
        }
    };

    let (pl_augf, pl_plain) = metrics.mean_pseudo_label_accuracy().unzip();
    let last = metrics.rows.last();
    let report = Report {
        schema_version: REPORT_SCHEMA_VERSION,
        config_hash: hex(&hash),
        config: cfg.clone(),
        result: RunSummary {
            test_error: eval.error,
            test_error_without_augf: eval.error_without_augf,
            validation_error,
            selected_epoch,
            epochs: trainer.epoch(),
            iterations: trainer.iteration(),
            extractions: trainer.extractions(),
            labeled: data.labeled.len(),
            unlabeled: data.unlabeled.len(),
            shifted_unlabeled: data.unlabeled.count_domain(crate::data::Domain::Shifted),
            pl_acc_augf_mean: pl_augf,
            pl_acc_plain_mean: pl_plain,
            final_l_clf: last.map(|r| r.l_clf),
            final_l_con_g: last.map(|r| r.l_con_g),
            final_l_con_f: last.map(|r| r.l_con_f),
        },
    };

    if let Some(dir) = &cfg.output_dir {
        metrics.write_csv(&dir.join("metrics.csv"))?;
        report.write(&dir.join("report.json"))?;
        checkpoint.save(&dir.join("checkpoint.bin"))?;
    }
    Ok(ExperimentOutcome {
        metrics,
        report,
        checkpoint,
    })
}

/// Rows of the ablation table, in display order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Baseline,
    WithoutConF,
    WithoutConG,
    FeatMatch,
}

impl AblationVariant {
    pub const ALL: [Self; 4] = [Self::Baseline, Self::WithoutConF, Self::WithoutConG, Self::FeatMatch];

    pub fn switches(self) -> LossSwitches {
        let (use_augf, use_con_f, use_con_g) = match self {
            Self::Baseline => (false, true, false),
            Self::WithoutConF => (true, false, true),
            Self::WithoutConG => (true, true, false),
            Self::FeatMatch => (true, true, true),
        };
        LossSwitches {
            use_augf,
            use_con_f,
            use_con_g,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Baseline => "Baseline",
            Self::WithoutConF => "w/o L_con-f",
            Self::WithoutConG => "w/o L_con-g",
            Self::FeatMatch => "FeatMatch",
        }
    }

    fn slug(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::WithoutConF => "without_con_f",
            Self::WithoutConG => "without_con_g",
            Self::FeatMatch => "featmatch",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub label: String,
    pub switches: LossSwitches,
    pub seeds: Vec<u64>,
    pub errors: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14} {:>16}", "method", "error (%)")?;
        for r in &self.rows {
            writeln!(f, "{:<14} {:>8.2} ± {:<6.2}", r.label, 100.0 * r.mean, 100.0 * r.std)?;
        }
        Ok(())
    }
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn sub_config(base: &ExperimentConfig, seed: u64, subdir: Option<String>) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.seed = seed;
    cfg.output_dir = match (&base.output_dir, subdir) {
        (Some(dir), Some(sub)) => Some(dir.join(sub)),
        _ => None,
    };
    cfg
}

/// Runs the four switch combinations over seeds `base.seed .. base.seed + seeds`.
pub fn run_ablation(base: &ExperimentConfig, seeds: usize) -> Result<AblationTable> {
    if seeds == 0 {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let seed_list: Vec<u64> = (0..seeds as u64).map(|s| base.seed + s).collect();
    let mut rows = Vec::with_capacity(4);
    for variant in AblationVariant::ALL {
        let mut errors = Vec::with_capacity(seeds);
        for &seed in &seed_list {
            let mut cfg = sub_config(base, seed, Some(format!("ablation/{}/seed{seed}", variant.slug())));
            cfg.switches = variant.switches();
            let data = prepare_data(&cfg)?;
            errors.push(run_prepared(&cfg, &data)?.report.result.test_error);
        }
        let (mean, std) = mean_std(&errors);
        rows.push(AblationRow {
            variant,
            label: variant.label().to_string(),
            switches: variant.switches(),
            seeds: seed_list.clone(),
            errors,
            mean,
            std,
        });
    }
    let table = AblationTable { rows };
    if let Some(dir) = &base.output_dir {
        ensure_dir(dir)?;
        let path = dir.join("ablation.json");
        std::fs::write(&path, serde_json::to_string_pretty(&table)? + "\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(table)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Prototypes per class.
    Pk,
    /// Prototype extraction interval, in iterations.
    Ip,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pk" => Ok(Self::Pk),
            "ip" => Ok(Self::Ip),
            other => Err(Error::Config(format!("unknown sweep axis {other:?} (pk or ip)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: usize,
    pub test_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["axis", "value", "test_error"])?;
        let axis = match self.axis {
            SweepAxis::Pk => "pk",
            SweepAxis::Ip => "ip",
        };
        for r in &self.rows {
            w.write_record([axis.to_string(), r.value.to_string(), r.test_error.to_string()])?;
        }
        w.into_inner()
            .map_err(|e| Error::Format(format!("flushing sweep csv: {e}")))
    }
}

/// One run per value of `axis`, everything else taken from `base`.
pub fn run_sensitivity(base: &ExperimentConfig, axis: SweepAxis, values: &[usize]) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let name = match axis {
            SweepAxis::Pk => format!("sweep/pk{v}"),
            SweepAxis::Ip => format!("sweep/ip{v}"),
        };
        let mut cfg = sub_config(base, base.seed, Some(name));
        match axis {
            SweepAxis::Pk => cfg.train.prototypes_per_class = v,
            SweepAxis::Ip => cfg.train.prototype_interval = PrototypeInterval::Iterations(v),
        }
        let out = run_experiment(&cfg)?;
        rows.push(SweepRow {
            value: v,
            test_error: out.report.result.test_error,
        });
    }
    let table = SweepTable { axis, rows };
    if let Some(dir) = &base.output_dir {
        ensure_dir(dir)?;
        let path = dir.join(match axis {
            SweepAxis::Pk => "sweep_pk.csv",
            SweepAxis::Ip => "sweep_ip.csv",
        });
        std::fs::write(&path, table.to_csv_bytes()?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(table)
}

/// Test error of a saved checkpoint. Uses the stored prototypes when present.
pub fn evaluate_checkpoint(ckpt: &Checkpoint<f64>, test: &Dataset<f64>) -> Result<crate::eval::EvalResult> {
    let spec = ckpt.model.spec();
    if test.dim() != spec.input_dim {
        return Err(Error::Dimension(format!(
            "data has {} features, checkpoint model expects {}",
            test.dim(),
            spec.input_dim
        )));
    }
    evaluate(&ckpt.model, ckpt.prototypes.as_ref(), test)
}
