//! Stage-2 training loops, evaluation, ablation grids and shot sweeps.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::PerturbationSpec;
use crate::config::{lr_at_step, TrainConfig};
use crate::data::{BatchSampler, Image, Pool, SSDASplit};
use crate::error::{Error, Result};
use crate::metrics::{MetricsRecord, MetricsWriter};
use crate::model::{argmax, Backbone, BackboneArch, Checkpoint, ClassifierArch, Network, NetworkArch, PretrainTag, RotationHead};
use crate::nn::Sgd;
use crate::objectives::{ssda_step, LabeledImages, SsdaBatch, StepLosses, StepRngs, StepTerms, VATConfig};
use crate::pretrain::{
    pretrain_moco, pretrain_rotation, rotation_accuracy, MoCoConfig, PretrainData, PretrainRecord,
    RotationPretrainConfig,
};
use crate::rng::{RngStream, StreamId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pac,
    SPlusT,
    Mme,
    MmePlusPac,
    Vat,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Pac, Method::SPlusT, Method::Mme, Method::MmePlusPac, Method::Vat];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Pac => "pac",
            Method::SPlusT => "s_plus_t",
            Method::Mme => "mme",
            Method::MmePlusPac => "mme_plus_pac",
            Method::Vat => "vat",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown method `{s}`")))
    }
}

pub fn pretrain_tag_str(tag: PretrainTag) -> &'static str {
    match tag {
        PretrainTag::None => "none",
        PretrainTag::Rotation => "rotation",
        PretrainTag::Moco => "moco",
    }
}

pub fn parse_pretrain_tag(s: &str) -> Result<PretrainTag> {
    match s {
        "none" => Ok(PretrainTag::None),
        "rotation" => Ok(PretrainTag::Rotation),
        "moco" => Ok(PretrainTag::Moco),
        _ => Err(Error::Validation(format!("unknown pretraining `{s}`"))),
    }
}

/// Backbone and head shape; the class count comes from the split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneArch,
    pub classifier_hidden: Option<usize>,
    pub temperature: f64,
}

impl ModelConfig {
    pub fn desk(image_size: usize) -> Self {
        Self {
            backbone: BackboneArch::desk(image_size),
            classifier_hidden: None,
            temperature: ClassifierArch::DEFAULT_TEMPERATURE,
        }
    }

    pub fn network_arch(&self, num_classes: usize) -> NetworkArch {
        NetworkArch {
            backbone: self.backbone.clone(),
            classifier: ClassifierArch {
                feature_dim: self.backbone.feature_dim(),
                hidden: self.classifier_hidden,
                num_classes,
                temperature: self.temperature,
            },
        }
    }
}

/// Hyperparameter bundles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Alexnet,
    Vgg,
    Resnet,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "alexnet" => Ok(Preset::Alexnet),
            "vgg" => Ok(Preset::Vgg),
            "resnet" => Ok(Preset::Resnet),
            _ => Err(Error::Validation(format!("unknown preset `{s}`"))),
        }
    }
}

/// Everything that determines a training run apart from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerSpec {
    pub method: Method,
    pub pretrain: PretrainTag,
    pub cr_enabled: bool,
    /// When false, `M_s` is dropped (source-free adaptation).
    pub use_source: bool,
    pub train: TrainConfig,
    pub perturbation: PerturbationSpec,
    pub model: ModelConfig,
    pub rotation: RotationPretrainConfig,
    pub moco: MoCoConfig,
    pub mme_lambda: f64,
    pub vat: VATConfig,
}

impl TrainerSpec {
    /// The spec a preset prescribes for `method` with its default CR setting.
    pub fn preset(preset: Preset, method: Method, pretrain: PretrainTag, image_size: usize) -> Self {
        let mut model = ModelConfig::desk(image_size);
        let (train, rotation) = match preset {
            Preset::Desk => (
                TrainConfig {
                    total_steps: 2000,
                    s: 8,
                    eval_interval: 100,
                    // A small net trained from scratch with 1/T = 20 collapses at the
                    // 0.001/0.01 defaults; keep their 1:10 ratio, scaled down.
                    lr_backbone: 0.0003,
                    lr_classifier: 0.003,
                    ..TrainConfig::default()
                },
                RotationPretrainConfig::desk(),
            ),
            Preset::Alexnet => (
                TrainConfig {
                    s: 32,
                    ..TrainConfig::default()
                },
                RotationPretrainConfig::alexnet(),
            ),
            Preset::Vgg => (TrainConfig::default(), RotationPretrainConfig::vgg()),
            Preset::Resnet => {
                model.classifier_hidden = Some(512);
                (TrainConfig::default(), RotationPretrainConfig::resnet())
            }
        };
        let moco = match preset {
            Preset::Desk => MoCoConfig::desk(),
            _ => MoCoConfig::default(),
        };
        Self {
            method,
            pretrain,
            cr_enabled: matches!(method, Method::Pac | Method::MmePlusPac),
            use_source: true,
            train,
            perturbation: PerturbationSpec::default(),
            model,
            rotation,
            moco,
            mme_lambda: 0.1,
            vat: VATConfig::default(),
        }
    }

    pub fn desk(method: Method, pretrain: PretrainTag) -> Self {
        Self::preset(Preset::Desk, method, pretrain, 32)
    }

    pub fn validate(&self) -> Result<()> {
        match self.method {
            Method::SPlusT if self.cr_enabled => {
                return Err(Error::Validation("s_plus_t cannot enable consistency regularization".into()));
            }
            Method::MmePlusPac if !self.cr_enabled => {
                return Err(Error::Validation("mme_plus_pac requires consistency regularization".into()));
            }
            _ => {}
        }
        self.train.validate()?;
        self.perturbation.validate()?;
        self.terms().validate()?;
        match self.pretrain {
            PretrainTag::Rotation => self.rotation.validate()?,
            PretrainTag::Moco => self.moco.validate()?,
            PretrainTag::None => {}
        }
        Ok(())
    }

    pub fn terms(&self) -> StepTerms {
        StepTerms {
            consistency_tau: self.cr_enabled.then_some(self.train.tau),
            mme_lambda: matches!(self.method, Method::Mme | Method::MmePlusPac).then_some(self.mme_lambda),
            vat: (self.method == Method::Vat).then(|| self.vat.clone()),
        }
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        Sha256::digest(json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn label(&self) -> String {
        let mut s = self.method.as_str().to_string();
        if self.pretrain != PretrainTag::None {
            s.push('+');
            s.push_str(pretrain_tag_str(self.pretrain));
        }
        if self.cr_enabled && !matches!(self.method, Method::Pac | Method::MmePlusPac) {
            s.push_str("+cr");
        }
        if self.method == Method::Pac && !self.cr_enabled {
            s.push_str("-cr");
        }
        s
    }
}

/// A stage-1 result that can seed several stage-2 runs.
#[derive(Clone, Debug)]
pub struct PretrainedBackbone {
    pub tag: PretrainTag,
    pub backbone: Backbone<f32>,
    pub trace: Vec<PretrainRecord>,
    /// Rotation accuracy on validation images (rotation pretraining only).
    pub heldout_accuracy: Option<f64>,
}

fn initial_network(spec: &TrainerSpec, split: &SSDASplit) -> Result<Network<f32>> {
    let arch = spec.model.network_arch(split.num_classes);
    Network::new(&arch, &mut RngStream::with_index(spec.train.seed, StreamId::Init, 0))
}

/// Run the stage-1 pretraining `spec.pretrain` names; `None` for no pretraining.
pub fn pretrain_backbone(spec: &TrainerSpec, split: &SSDASplit) -> Result<Option<PretrainedBackbone>> {
    let seed = spec.train.seed;
    let mut backbone = initial_network(spec, split)?.backbone;
    match spec.pretrain {
        PretrainTag::None => Ok(None),
        PretrainTag::Rotation => {
            let data = PretrainData::from_split(split, spec.rotation.domains);
            let mut head = RotationHead::new(
                backbone.feature_dim(),
                &mut RngStream::with_index(seed, StreamId::Init, 1),
            );
            let out = pretrain_rotation(&mut backbone, &mut head, &data, &spec.rotation, seed)?;
            let heldout: Vec<&Image> = split.validation.images().collect();
            let heldout_accuracy = if heldout.is_empty() {
                None
            } else {
                Some(rotation_accuracy(&backbone, &head, &heldout)?)
            };
            Ok(Some(PretrainedBackbone {
                tag: PretrainTag::Rotation,
                backbone,
                trace: out.trace,
                heldout_accuracy,
            }))
        }
        PretrainTag::Moco => {
            let data = PretrainData::from_split(split, spec.moco.domains);
            let out = pretrain_moco(&mut backbone, &data, &spec.moco, seed)?;
            Ok(Some(PretrainedBackbone {
                tag: PretrainTag::Moco,
                backbone,
                trace: out.trace,
                heldout_accuracy: None,
            }))
        }
    }
}

/// Outcome of a training run.
#[derive(Clone, Debug)]
pub struct TrainResult {
    pub best: Checkpoint,
    pub metrics: Vec<MetricsRecord>,
    /// Total criterion value at every step.
    pub loss_trace: Vec<f64>,
    pub best_val_accuracy: f64,
    pub target_accuracy_at_best_val: f64,
    pub best_step: u64,
    pub steps_run: u64,
    pub final_target_accuracy: f64,
    pub pretrain: Option<PretrainSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub tag: PretrainTag,
    pub trace: Vec<PretrainRecord>,
    pub heldout_accuracy: Option<f64>,
}

/// Fraction of argmax predictions matching the labels, without perturbation.
pub fn evaluate(net: &Network<f32>, pool: &Pool) -> Result<f64> {
    if pool.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let labels = pool.evaluation_labels();
    let images: Vec<&Image> = pool.images().collect();
    let preds = predict(net, &images)?;
    let mut hits = 0;
    for (p, y) in preds.iter().zip(&labels) {
        let y = y.ok_or_else(|| Error::Data("evaluation needs labeled examples".into()))?;
        hits += usize::from(*p == y);
    }
    Ok(hits as f64 / labels.len() as f64)
}

pub fn predict(net: &Network<f32>, images: &[&Image]) -> Result<Vec<usize>> {
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let logits = net.logits(&Image::batch::<f32>(images.iter().copied())?)?;
    Ok(logits.rows_iter().map(argmax).collect())
}

fn check_geometry(spec: &TrainerSpec, split: &SSDASplit) -> Result<()> {
    let (c, h, w) = spec.model.backbone.input_geometry();
    let first = split
        .unlabeled_target
        .images()
        .next()
        .ok_or_else(|| Error::Data("unlabeled target pool is empty".into()))?;
    let ok = match spec.model.backbone {
        BackboneArch::Conv { .. } => (first.channels, first.height, first.width) == (c, h, w),
        BackboneArch::Mlp { .. } => first.data.len() == c,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "model expects {c}x{h}x{w} images, data has {}x{}x{}",
            first.channels, first.height, first.width
        )))
    }
}

fn resolve_labeled<'a>(pool: &'a Pool, idx: &[usize]) -> Result<LabeledImages<'a>> {
    Ok(LabeledImages {
        images: idx.iter().map(|&i| pool.image(i)).collect(),
        labels: idx.iter().map(|&i| pool.label(i)).collect::<Result<_>>()?,
    })
}

fn params_finite(net: &mut Network<f32>) -> bool {
    net.params_mut().iter().all(|p| p.value.iter().all(|v| v.is_finite()))
}

/// Train from scratch, running the requested stage-1 pretraining first.
pub fn train(spec: &TrainerSpec, split: &SSDASplit) -> Result<TrainResult> {
    spec.validate()?;
    check_geometry(spec, split)?;
    let pretrained = pretrain_backbone(spec, split)?;
    train_from_pretrained(spec, split, pretrained.as_ref())
}

/// Stage 2 only, starting from `pretrained` (which must match `spec.pretrain`).
pub fn train_from_pretrained(
    spec: &TrainerSpec,
    split: &SSDASplit,
    pretrained: Option<&PretrainedBackbone>,
) -> Result<TrainResult> {
    spec.validate()?;
    check_geometry(spec, split)?;
    let found = pretrained.map_or(PretrainTag::None, |p| p.tag);
    if found != spec.pretrain {
        return Err(Error::Validation(format!(
            "spec asks for pretraining `{}` but `{}` was supplied",
            pretrain_tag_str(spec.pretrain),
            pretrain_tag_str(found)
        )));
    }
    let cfg = &spec.train;
    let mut net = initial_network(spec, split)?;
    if let Some(p) = pretrained {
        net.backbone = p.backbone.clone();
    }
    let terms = spec.terms();
    let mut sampler = BatchSampler::new(split, cfg.s, cfg.seed, spec.use_source)?;
    if !spec.use_source {
        log::info!("source-free: no source batch, {} labeled and {} unlabeled target per step", cfg.s, 2 * cfg.s);
    }
    let mut aug_labeled = RngStream::with_index(cfg.seed, StreamId::Augmentation, 0);
    let mut aug_unlabeled = RngStream::with_index(cfg.seed, StreamId::Augmentation, 1);
    let mut opt_backbone = Sgd::<f32>::new(cfg.momentum, cfg.weight_decay);
    let mut opt_classifier = Sgd::<f32>::new(cfg.momentum, cfg.weight_decay);
    let (sched_b, sched_c) = (cfg.backbone_schedule(), cfg.classifier_schedule());

    let mut metrics = Vec::new();
    let mut loss_trace = Vec::with_capacity(cfg.total_steps as usize);
    let mut window = StepLosses::default();
    let mut window_len = 0u64;
    let mut best: Option<(f64, f64, u64, Network<f32>, BTreeMap<String, RngStream>)> = None;

    let mut record = |step: u64,
                      net: &Network<f32>,
                      window: &StepLosses,
                      window_len: u64,
                      rngs: [&RngStream; 2]|
     -> Result<MetricsRecord> {
        let val = evaluate(net, &split.validation)?;
        let tgt = evaluate(net, &split.unlabeled_target)?;
        if best.as_ref().map_or(true, |b| val > b.0) {
            let states = BTreeMap::from([
                ("augmentation_labeled".to_string(), rngs[0].clone()),
                ("augmentation_unlabeled".to_string(), rngs[1].clone()),
            ]);
            best = Some((val, tgt, step, net.clone(), states));
        }
        let n = window_len.max(1) as f64;
        let rec = MetricsRecord {
            step,
            loss_source: window.loss_source / n,
            loss_target_labeled: window.loss_target_labeled / n,
            loss_consistency: (window.loss_consistency + window.loss_vat) / n,
            frac_above_threshold: window.frac_above_threshold / n,
            val_accuracy: val,
            target_accuracy: tgt,
        };
        log::debug!("step {step}: val {val:.4} target {tgt:.4}");
        Ok(rec)
    };

    metrics.push(record(0, &net, &window, 0, [&aug_labeled, &aug_unlabeled])?);
    for step in 0..cfg.total_steps {
        let b = sampler.next_batch();
        let batch = SsdaBatch {
            source: resolve_labeled(&split.source, &b.source)?,
            labeled_target: resolve_labeled(&split.labeled_target, &b.labeled_target)?,
            unlabeled: b.unlabeled.iter().map(|&i| split.unlabeled_target.image(i)).collect(),
        };
        net.zero_grad();
        let losses = ssda_step(
            &mut net,
            &batch,
            &terms,
            &spec.perturbation,
            StepRngs {
                labeled: &mut aug_labeled,
                unlabeled: &mut aug_unlabeled,
            },
            true,
        )?;
        opt_backbone.step(&mut net.backbone.params_mut(), lr_at_step(&sched_b, step));
        opt_classifier.step(&mut net.classifier.params_mut(), lr_at_step(&sched_c, step));

        let total = losses.total(&terms);
        // The clamped logarithm keeps the loss finite even for NaN logits,
        // so the weights are checked as well.
        if !total.is_finite() || !params_finite(&mut net) {
            return Err(Error::Diverged { step });
        }
        loss_trace.push(total);
        window.loss_source += losses.loss_source;
        window.loss_target_labeled += losses.loss_target_labeled;
        window.loss_consistency += losses.loss_consistency;
        window.loss_vat += losses.loss_vat;
        window.frac_above_threshold += losses.frac_above_threshold;
        window_len += 1;

        let done = step + 1;
        if done % cfg.eval_interval == 0 || done == cfg.total_steps {
            metrics.push(record(done, &net, &window, window_len, [&aug_labeled, &aug_unlabeled])?);
            window = StepLosses::default();
            window_len = 0;
        }
    }

    let final_target_accuracy = metrics.last().map_or(0.0, |m| m.target_accuracy);
    let (best_val, best_tgt, best_step, best_net, rng_states) = best.expect("step 0 is always evaluated");
    Ok(TrainResult {
        best: Checkpoint {
            network: best_net,
            step: best_step,
            pretrain: spec.pretrain,
            rng_states,
        },
        metrics,
        loss_trace,
        best_val_accuracy: best_val,
        target_accuracy_at_best_val: best_tgt,
        best_step,
        steps_run: cfg.total_steps,
        final_target_accuracy,
        pretrain: pretrained.map(|p| PretrainSummary {
            tag: p.tag,
            trace: p.trace.clone(),
            heldout_accuracy: p.heldout_accuracy,
        }),
    })
}

/// Machine-readable run summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultSummary {
    pub spec_hash: String,
    pub method: Method,
    pub pretrain: PretrainTag,
    pub cr_enabled: bool,
    pub seed: u64,
    pub best_step: u64,
    pub steps_run: u64,
    pub best_val_accuracy: f64,
    pub target_accuracy_at_best_val: f64,
    pub final_target_accuracy: f64,
    pub pretrain_heldout_accuracy: Option<f64>,
}

impl TrainResult {
    pub fn summary(&self, spec: &TrainerSpec) -> ResultSummary {
        ResultSummary {
            spec_hash: spec.hash(),
            method: spec.method,
            pretrain: spec.pretrain,
            cr_enabled: spec.cr_enabled,
            seed: spec.train.seed,
            best_step: self.best_step,
            steps_run: self.steps_run,
            best_val_accuracy: self.best_val_accuracy,
            target_accuracy_at_best_val: self.target_accuracy_at_best_val,
            final_target_accuracy: self.final_target_accuracy,
            pretrain_heldout_accuracy: self.pretrain.as_ref().and_then(|p| p.heldout_accuracy),
        }
    }

    /// Write `metrics.{jsonl,csv}`, `pretrain_trace.jsonl`, `best.ckpt` and `result.json`.
    pub fn write_artifacts(&self, spec: &TrainerSpec, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut writer = MetricsWriter::create(dir, "metrics")?;
        for m in &self.metrics {
            writer.append(m)?;
        }
        writer.flush()?;
        if let Some(p) = &self.pretrain {
            let path = dir.join("pretrain_trace.jsonl");
            let mut text = String::new();
            for r in &p.trace {
                text.push_str(&serde_json::to_string(r)?);
                text.push('\n');
            }
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        self.best.save(dir.join("best.ckpt"))?;
        let path = dir.join("result.json");
        let json = serde_json::to_string_pretty(&self.summary(spec))?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}

/// One `(pretraining, consistency)` combination of the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationCell {
    pub pretrain: PretrainTag,
    pub cr_enabled: bool,
}

impl AblationCell {
    /// The 2x2 rotation x consistency grid.
    pub fn rot_cr_grid() -> Vec<AblationCell> {
        let mut cells = Vec::new();
        for pretrain in [PretrainTag::None, PretrainTag::Rotation] {
            for cr_enabled in [false, true] {
                cells.push(AblationCell { pretrain, cr_enabled });
            }
        }
        cells
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub cell: AblationCell,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
}

impl AblationRow {
    pub fn mean(&self) -> f64 {
        mean(&self.accuracies)
    }

    pub fn std(&self) -> f64 {
        std_dev(&self.accuracies)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub method: Method,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,pretrain,cr,seed,target_accuracy\n");
        for row in &self.rows {
            for (seed, acc) in row.seeds.iter().zip(&row.accuracies) {
                out.push_str(&format!(
                    "{},{},{},{},{:?}\n",
                    self.method,
                    pretrain_tag_str(row.cell.pretrain),
                    row.cell.cr_enabled,
                    seed,
                    acc
                ));
            }
        }
        out
    }

    /// Human-readable mean ± std table in percent.
    pub fn render(&self) -> String {
        let mut out = format!("{:<10} {:<4} {:>16}\n", "pretrain", "cr", "target acc (%)");
        for row in &self.rows {
            out.push_str(&format!(
                "{:<10} {:<4} {:>9.2} ± {:<5.2}\n",
                pretrain_tag_str(row.cell.pretrain),
                if row.cell.cr_enabled { "on" } else { "off" },
                100.0 * row.mean(),
                100.0 * row.std()
            ));
        }
        out
    }
}

/// Train every cell for every seed; pretraining is shared between cells
/// with the same seed and pretraining.
pub fn run_ablation(
    base: &TrainerSpec,
    cells: &[AblationCell],
    split: &SSDASplit,
    seeds: &[u64],
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::Validation("ablation needs at least one seed".into()));
    }
    let mut rows: Vec<AblationRow> = cells
        .iter()
        .map(|&cell| AblationRow {
            cell,
            seeds: seeds.to_vec(),
            accuracies: Vec::new(),
        })
        .collect();
    let method = match base.method {
        Method::MmePlusPac => Method::Mme,
        Method::SPlusT => Method::Pac,
        m => m,
    };
    let spec_for = |cell: &AblationCell, seed: u64| {
        let mut spec = base.clone();
        spec.method = if method == Method::Mme && cell.cr_enabled { Method::MmePlusPac } else { method };
        spec.pretrain = cell.pretrain;
        spec.cr_enabled = cell.cr_enabled;
        spec.train.seed = seed;
        spec
    };
    for cell in cells {
        spec_for(cell, seeds[0]).validate()?;
    }
    for &seed in seeds {
        let mut cache: BTreeMap<&'static str, Option<PretrainedBackbone>> = BTreeMap::new();
        for (row, cell) in rows.iter_mut().zip(cells) {
            let spec = spec_for(cell, seed);
            let key = pretrain_tag_str(cell.pretrain);
            if !cache.contains_key(key) {
                cache.insert(key, pretrain_backbone(&spec, split)?);
            }
            let result = train_from_pretrained(&spec, split, cache[key].as_ref())?;
            log::info!("{} seed {seed}: {:.4}", spec.label(), result.target_accuracy_at_best_val);
            row.accuracies.push(result.target_accuracy_at_best_val);
        }
    }
    Ok(AblationTable { method, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotPoint {
    pub label: String,
    pub shots: usize,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
}

impl ShotPoint {
    pub fn mean(&self) -> f64 {
        mean(&self.accuracies)
    }

    pub fn std(&self) -> f64 {
        std_dev(&self.accuracies)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotCurve {
    pub points: Vec<ShotPoint>,
}

impl ShotCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,shots,mean_accuracy,std_accuracy,n_seeds\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{:?},{:?},{}\n", p.label, p.shots, p.mean(), p.std(), p.seeds.len()));
        }
        out
    }

    pub fn gap(&self, a: &str, b: &str, shots: usize) -> Option<f64> {
        let find = |l: &str| self.points.iter().find(|p| p.label == l && p.shots == shots);
        Some(find(a)?.mean() - find(b)?.mean())
    }
}

/// Accuracy against number of labeled target examples per class.
pub fn run_shot_sweep(
    split_for: impl Fn(usize, u64) -> Result<SSDASplit>,
    shots: &[usize],
    specs: &[TrainerSpec],
    seeds: &[u64],
) -> Result<ShotCurve> {
    if seeds.is_empty() || shots.is_empty() || specs.is_empty() {
        return Err(Error::Validation("shot sweep needs shots, specs and seeds".into()));
    }
    specs.iter().try_for_each(TrainerSpec::validate)?;
    let mut points = Vec::new();
    for &k in shots {
        for spec in specs {
            let mut accs = Vec::with_capacity(seeds.len());
            for &seed in seeds {
                let split = split_for(k, seed)?;
                let mut s = spec.clone();
                s.train.seed = seed;
                accs.push(train(&s, &split)?.target_accuracy_at_best_val);
            }
            points.push(ShotPoint {
                label: spec.label(),
                shots: k,
                seeds: seeds.to_vec(),
                accuracies: accs,
            });
        }
    }
    Ok(ShotCurve { points })
}
