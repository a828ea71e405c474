//! Stage-1 backbone training: rotation prediction and momentum contrast.
//!
//! Neither pretrainer can see class labels: they receive images only.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{perturb, rotate90, PerturbationSpec, RotationLabel};
use crate::config::{lr_at_step, ScheduleParams};
use crate::data::{EpochCycler, Image, Pool, SSDASplit};
use crate::error::{Error, Result};
use crate::model::{argmax, Backbone, RotationHead};
use crate::nn::{GradMode, Param, Sgd};
use crate::objectives::{labeled_cross_entropy, LossGrad};
use crate::rng::{RngStream, StreamId};
use crate::tensor::{Matrix, Real};

/// Which domains feed the pretext task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainDomains {
    SourceAndTarget,
    TargetOnly,
}

/// Unlabeled image pools for pretraining.
#[derive(Clone, Debug)]
pub struct PretrainData<'a> {
    pub source: Vec<&'a Image>,
    pub target: Vec<&'a Image>,
}

fn pool_images(pool: &Pool) -> impl Iterator<Item = &Image> {
    pool.images()
}

impl<'a> PretrainData<'a> {
    /// `D_s` and `D_t ∪ D_u` of a split. Validation images are held out.
    pub fn from_split(split: &'a SSDASplit, domains: PretrainDomains) -> Self {
        let source = match domains {
            PretrainDomains::SourceAndTarget => pool_images(&split.source).collect(),
            PretrainDomains::TargetOnly => Vec::new(),
        };
        let target = pool_images(&split.labeled_target)
            .chain(pool_images(&split.unlabeled_target))
            .collect();
        Self { source, target }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationPretrainConfig {
    pub steps: u64,
    /// Images drawn per domain per minibatch, before the 4x rotation expansion.
    pub s_rot: usize,
    pub lr: f64,
    pub domains: PretrainDomains,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_coeff: f64,
    pub decay_power: f64,
    pub log_interval: u64,
}

impl RotationPretrainConfig {
    fn with(steps: u64, s_rot: usize, lr: f64) -> Self {
        Self {
            steps,
            s_rot,
            lr,
            domains: PretrainDomains::SourceAndTarget,
            momentum: 0.9,
            weight_decay: 0.0005,
            decay_coeff: ScheduleParams::DEFAULT_DECAY_COEFF,
            decay_power: ScheduleParams::DEFAULT_DECAY_POWER,
            log_interval: 50,
        }
    }

    pub fn alexnet() -> Self {
        Self::with(4000, 128, 0.01)
    }

    pub fn vgg() -> Self {
        Self::with(2000, 16, 0.001)
    }

    pub fn resnet() -> Self {
        Self::with(5000, 16, 0.001)
    }

    pub fn desk() -> Self {
        Self::with(1000, 8, 0.05)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Validation("rotation steps must be >= 1".into()));
        }
        if self.s_rot < 1 {
            return Err(Error::Validation("s_rot must be >= 1".into()));
        }
        if self.log_interval < 1 {
            return Err(Error::Validation("log_interval must be >= 1".into()));
        }
        self.schedule().validate()
    }

    fn schedule(&self) -> ScheduleParams {
        ScheduleParams {
            eta0: self.lr,
            decay_coeff: self.decay_coeff,
            decay_power: self.decay_power,
        }
    }
}

/// One line of a pretext-task trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainRecord {
    pub step: u64,
    pub loss: f64,
    /// Pretext accuracy averaged since the previous record.
    pub accuracy: f64,
    /// Images per optimization step after expansion.
    pub batch_images: usize,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub trace: Vec<PretrainRecord>,
    pub source_draws: u64,
    pub target_draws: u64,
}

/// All four rotations of every image, grouped per image:
/// `[x0 r0, x0 r1, x0 r2, x0 r3, x1 r0, ...]`.
pub fn build_rotation_batch(images: &[&Image]) -> Result<(Vec<Image>, Vec<RotationLabel>)> {
    if images.is_empty() {
        return Err(Error::Validation("rotation batch needs at least one image".into()));
    }
    let mut out = Vec::with_capacity(4 * images.len());
    let mut labels = Vec::with_capacity(4 * images.len());
    for img in images {
        for r in RotationLabel::ALL {
            out.push(rotate90(img, r)?);
            labels.push(r);
        }
    }
    Ok((out, labels))
}

struct DomainDraw<'a> {
    images: &'a [&'a Image],
    cycler: EpochCycler,
}

impl<'a> DomainDraw<'a> {
    fn new(images: &'a [&'a Image], rng: RngStream, what: &str) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Data(format!("pretraining needs a nonempty {what} pool")));
        }
        Ok(Self {
            images,
            cycler: EpochCycler::new(images.len(), rng)?,
        })
    }

    fn draw(&mut self, n: usize, into: &mut Vec<&'a Image>) {
        into.extend(self.cycler.take(n).into_iter().map(|i| self.images[i]));
    }
}

fn sampler_streams<'a>(
    data: &'a PretrainData<'a>,
    use_source: bool,
    seed: u64,
) -> Result<(Option<DomainDraw<'a>>, DomainDraw<'a>)> {
    let source = if use_source {
        Some(DomainDraw::new(
            &data.source,
            RngStream::with_index(seed, StreamId::DataSampling, 10),
            "source",
        )?)
    } else {
        None
    };
    let target = DomainDraw::new(
        &data.target,
        RngStream::with_index(seed, StreamId::DataSampling, 11),
        "target",
    )?;
    Ok((source, target))
}

/// Train `backbone` and `head` on 4-way rotation prediction.
pub fn pretrain_rotation<R: Real>(
    backbone: &mut Backbone<R>,
    head: &mut RotationHead<R>,
    data: &PretrainData<'_>,
    cfg: &RotationPretrainConfig,
    seed: u64,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let use_source = cfg.domains == PretrainDomains::SourceAndTarget;
    let (mut source, mut target) = sampler_streams(data, use_source, seed)?;
    let mut opt = Sgd::<R>::new(cfg.momentum, cfg.weight_decay);
    let schedule = cfg.schedule();
    let mut trace = Vec::new();
    let (mut loss_acc, mut acc_acc, mut seen) = (0.0, 0.0, 0u64);
    let batch_images = 4 * cfg.s_rot * if use_source { 2 } else { 1 };
    log::info!("rotation pretraining: {} images per step", batch_images);

    for step in 0..cfg.steps {
        let mut base = Vec::new();
        if let Some(s) = source.as_mut() {
            s.draw(cfg.s_rot, &mut base);
        }
        target.draw(cfg.s_rot, &mut base);
        let (rotated, labels) = build_rotation_batch(&base)?;
        let labels: Vec<usize> = labels.iter().map(|r| r.index()).collect();

        backbone.zero_grad();
        head.params_mut().into_iter().for_each(Param::zero_grad);
        let (features, cache) = backbone.forward(&Image::batch::<R>(&rotated)?)?;
        let logits = head.logits(&features)?;
        let LossGrad { loss, dlogits } = labeled_cross_entropy(&logits, &labels)?;
        let dfeat = head.backward(&features, &dlogits);
        backbone.backward(&cache, &dfeat, GradMode::PARAMS);

        let mut params = backbone.params_mut();
        params.extend(head.params_mut());
        opt.step(&mut params, lr_at_step(&schedule, step));

        loss_acc += loss;
        acc_acc += batch_accuracy(&logits, &labels);
        seen += 1;
        if (step + 1) % cfg.log_interval == 0 || step + 1 == cfg.steps {
            trace.push(PretrainRecord {
                step: step + 1,
                loss: loss_acc / seen as f64,
                accuracy: acc_acc / seen as f64,
                batch_images,
            });
            (loss_acc, acc_acc, seen) = (0.0, 0.0, 0);
        }
    }
    Ok(PretrainOutcome {
        trace,
        source_draws: source.map_or(0, |s| s.cycler.draws()),
        target_draws: target.cycler.draws(),
    })
}

fn batch_accuracy<R: Real>(logits: &Matrix<R>, labels: &[usize]) -> f64 {
    let hits = logits
        .rows_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

/// Accuracy of rotation prediction over all four rotations of `images`.
pub fn rotation_accuracy<R: Real>(
    backbone: &Backbone<R>,
    head: &RotationHead<R>,
    images: &[&Image],
) -> Result<f64> {
    let (rotated, labels) = build_rotation_batch(images)?;
    let labels: Vec<usize> = labels.iter().map(|r| r.index()).collect();
    let features = backbone.features(&Image::batch::<R>(&rotated)?)?;
    Ok(batch_accuracy(&head.logits(&features)?, &labels))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoCoConfig {
    pub queue_len: usize,
    pub key_momentum: f64,
    pub temperature_nce: f64,
    pub steps: u64,
    pub batch_per_domain: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub domains: PretrainDomains,
    pub perturbation: PerturbationSpec,
    pub log_interval: u64,
}

impl Default for MoCoConfig {
    fn default() -> Self {
        Self {
            queue_len: 4096,
            key_momentum: 0.999,
            temperature_nce: 0.07,
            steps: 5000,
            batch_per_domain: 32,
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 0.0005,
            domains: PretrainDomains::SourceAndTarget,
            perturbation: PerturbationSpec::default(),
            log_interval: 50,
        }
    }
}

impl MoCoConfig {
    pub fn desk() -> Self {
        Self {
            steps: 1000,
            batch_per_domain: 8,
            lr: 0.05,
            ..Self::default()
        }
    }

    fn keys_per_step(&self) -> usize {
        self.batch_per_domain
            * match self.domains {
                PretrainDomains::SourceAndTarget => 2,
                PretrainDomains::TargetOnly => 1,
            }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.key_momentum > 0.0 && self.key_momentum < 1.0) {
            return Err(Error::Config {
                key: "key_momentum".into(),
                message: "must lie strictly between 0 and 1".into(),
            });
        }
        if self.batch_per_domain < 1 || self.steps < 1 || self.log_interval < 1 {
            return Err(Error::Config {
                key: "moco".into(),
                message: "steps, batch_per_domain and log_interval must be >= 1".into(),
            });
        }
        if self.queue_len < self.keys_per_step() {
            return Err(Error::Config {
                key: "queue_len".into(),
                message: format!(
                    "queue of {} keys cannot hold a batch of {}",
                    self.queue_len,
                    self.keys_per_step()
                ),
            });
        }
        if !(self.temperature_nce > 0.0) {
            return Err(Error::Config {
                key: "temperature_nce".into(),
                message: "must be > 0".into(),
            });
        }
        self.perturbation.validate()
    }
}

/// Fixed-length FIFO of negative keys, stored as a ring buffer.
#[derive(Clone, Debug)]
pub struct KeyQueue<R> {
    keys: Matrix<R>,
    head: usize,
}

impl<R: Real> KeyQueue<R> {
    /// A full queue of random unit vectors.
    pub fn random(len: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let mut keys = Matrix::zeros(len, dim);
        for r in 0..len {
            let row: Vec<f64> = (0..dim).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for (o, v) in keys.row_mut(r).iter_mut().zip(&row) {
                *o = R::from_f64_lossy(v / norm);
            }
        }
        Self { keys, head: 0 }
    }

    pub fn len(&self) -> usize {
        self.keys.rows
    }

    pub fn is_empty(&self) -> bool {
        self.keys.rows == 0
    }

    pub fn keys(&self) -> &Matrix<R> {
        &self.keys
    }

    /// Replace the oldest `batch.rows` keys.
    pub fn enqueue(&mut self, batch: &Matrix<R>) {
        for row in batch.rows_iter() {
            self.keys.row_mut(self.head).copy_from_slice(row);
            self.head = (self.head + 1) % self.keys.rows;
        }
    }
}

/// `θ_k ← m θ_k + (1 − m) θ_q`.
pub fn momentum_update<R: Real>(key: &mut Backbone<R>, query: &Backbone<R>, m: f64) {
    // Written as θ_k + (1 − m)(θ_q − θ_k) so equal encoders stay bit-equal.
    let mq = R::from_f64_lossy(1.0 - m);
    for (k, q) in key.params_mut().into_iter().zip(query.params()) {
        for (a, &b) in k.value.iter_mut().zip(&q.value) {
            *a += mq * (b - *a);
        }
    }
}

/// InfoNCE with the positive at index 0: mean loss and gradient w.r.t. `q`.
pub fn info_nce<R: Real>(q: &Matrix<R>, k_pos: &Matrix<R>, queue: &Matrix<R>, tau: f64) -> Result<LossGrad<R>> {
    if q.rows != k_pos.rows || q.cols != k_pos.cols || queue.cols != q.cols {
        return Err(Error::Shape("query, key and queue dimensions differ".into()));
    }
    let n = q.rows;
    let mut neg = Matrix::zeros(n, queue.rows);
    R::gemm(n, q.cols, queue.rows, &q.data, false, &queue.data, true, R::zero(), &mut neg.data);
    let inv_tau = 1.0 / tau;
    let mut loss = 0.0;
    let mut dq = Matrix::zeros(n, q.cols);
    let scale = inv_tau / n.max(1) as f64;
    for i in 0..n {
        let pos: f64 = q.row(i).iter().zip(k_pos.row(i)).map(|(a, b)| a.as_f64() * b.as_f64()).sum::<f64>() * inv_tau;
        let negs: Vec<f64> = neg.row(i).iter().map(|v| v.as_f64() * inv_tau).collect();
        let max = negs.iter().copied().fold(pos, f64::max);
        let z = (pos - max).exp() + negs.iter().map(|v| (v - max).exp()).sum::<f64>();
        let log_z = z.ln() + max;
        loss += log_z - pos;
        // Σ_j (softmax_j − 1[j = 0]) k_j / τ
        let w_pos = (pos - log_z).exp() - 1.0;
        let mut g: Vec<f64> = k_pos.row(i).iter().map(|v| w_pos * v.as_f64()).collect();
        for (j, &l) in negs.iter().enumerate() {
            let w = (l - log_z).exp();
            if w > 0.0 {
                for (gd, kd) in g.iter_mut().zip(queue.row(j)) {
                    *gd += w * kd.as_f64();
                }
            }
        }
        for (o, v) in dq.row_mut(i).iter_mut().zip(&g) {
            *o = R::from_f64_lossy(v * scale);
        }
    }
    Ok(LossGrad {
        loss: loss / n.max(1) as f64,
        dlogits: dq,
    })
}

#[derive(Clone, Debug)]
pub struct MoCoOutcome<R> {
    pub trace: Vec<PretrainRecord>,
    pub key_encoder: Backbone<R>,
    pub queue: KeyQueue<R>,
}

/// Momentum-contrast pretraining of `backbone` (the query encoder).
pub fn pretrain_moco<R: Real>(
    backbone: &mut Backbone<R>,
    data: &PretrainData<'_>,
    cfg: &MoCoConfig,
    seed: u64,
) -> Result<MoCoOutcome<R>> {
    cfg.validate()?;
    let use_source = cfg.domains == PretrainDomains::SourceAndTarget;
    let (mut source, mut target) = sampler_streams(data, use_source, seed)?;
    let mut aug = RngStream::with_index(seed, StreamId::Augmentation, 20);
    let mut queue_rng = RngStream::with_index(seed, StreamId::Init, 21);
    let mut key = backbone.clone();
    let mut queue = KeyQueue::random(cfg.queue_len, backbone.feature_dim(), &mut queue_rng);
    let mut opt = Sgd::<R>::new(cfg.momentum, cfg.weight_decay);
    let schedule = ScheduleParams::new(cfg.lr);
    let mut trace = Vec::new();
    let (mut loss_acc, mut acc_acc, mut seen) = (0.0, 0.0, 0u64);

    for step in 0..cfg.steps {
        let mut base = Vec::new();
        if let Some(s) = source.as_mut() {
            s.draw(cfg.batch_per_domain, &mut base);
        }
        target.draw(cfg.batch_per_domain, &mut base);
        let mut view_q = Vec::with_capacity(base.len());
        let mut view_k = Vec::with_capacity(base.len());
        for img in &base {
            view_q.push(perturb(img, &cfg.perturbation, &mut aug)?);
            view_k.push(perturb(img, &cfg.perturbation, &mut aug)?);
        }
        let k = key.features(&Image::batch::<R>(&view_k)?)?;
        backbone.zero_grad();
        let (q, cache) = backbone.forward(&Image::batch::<R>(&view_q)?)?;
        let nce = info_nce(&q, &k, queue.keys(), cfg.temperature_nce)?;
        backbone.backward(&cache, &nce.dlogits, GradMode::PARAMS);
        opt.step(&mut backbone.params_mut(), lr_at_step(&schedule, step));
        momentum_update(&mut key, backbone, cfg.key_momentum);
        queue.enqueue(&k);

        loss_acc += nce.loss;
        acc_acc += instance_accuracy(&q, &k, queue.keys());
        seen += 1;
        if (step + 1) % cfg.log_interval == 0 || step + 1 == cfg.steps {
            trace.push(PretrainRecord {
                step: step + 1,
                loss: loss_acc / seen as f64,
                accuracy: acc_acc / seen as f64,
                batch_images: 2 * base.len(),
            });
            (loss_acc, acc_acc, seen) = (0.0, 0.0, 0);
        }
    }
    Ok(MoCoOutcome {
        trace,
        key_encoder: key,
        queue,
    })
}

/// Fraction of queries whose positive key outscores every other key of
/// the batch (a cheap pretext accuracy).
fn instance_accuracy<R: Real>(q: &Matrix<R>, k: &Matrix<R>, _queue: &Matrix<R>) -> f64 {
    let n = q.rows;
    let mut sim = Matrix::<R>::zeros(n, n);
    R::gemm(n, q.cols, n, &q.data, false, &k.data, true, R::zero(), &mut sim.data);
    let hits = (0..n).filter(|&i| argmax(sim.row(i)) == i).count();
    hits as f64 / n.max(1) as f64
}
