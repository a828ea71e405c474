//! Feature-space diagnostics: proxy A-distance from a linear domain
//! classifier, average-distance label transfer, and 2-D embedding export.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::container::{read_container, write_container};
use crate::data::{Domain, Image, Pool, SSDASplit};
use crate::error::{Error, Result};
use crate::model::Backbone;
use crate::rng::{RngStream, StreamId};
use crate::tensor::Real;

/// Minimum features per domain accepted by [`a_distance`].
pub const MIN_DOMAIN_FEATURES: usize = 20;

/// Where a feature row came from within a split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureRole {
    Source,
    LabeledTarget,
    UnlabeledTarget,
}

impl FeatureRole {
    pub fn domain(self) -> Domain {
        match self {
            FeatureRole::Source => Domain::Source,
            _ => Domain::Target,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub id: u64,
    pub role: FeatureRole,
    /// Class label; absent when unknown to the producer.
    pub label: Option<usize>,
    pub feature: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub checkpoint_hash: String,
    pub dataset_id: String,
}

#[derive(Serialize, Deserialize)]
struct DumpHeader {
    format: String,
    dim: usize,
    count: usize,
    provenance: Provenance,
    ids: Vec<u64>,
    roles: Vec<FeatureRole>,
    labels: Vec<Option<usize>>,
}

/// Backbone features for every example of a split.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDump {
    pub dim: usize,
    pub rows: Vec<FeatureRow>,
    pub provenance: Provenance,
}

impl FeatureDump {
    pub const FORMAT: &'static str = "paclab.features.v1";

    pub fn new(dim: usize, rows: Vec<FeatureRow>, provenance: Provenance) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| r.feature.len() != dim) {
            return Err(Error::Shape(format!(
                "feature row {} has dimension {}, expected {dim}",
                r.id,
                r.feature.len()
            )));
        }
        Ok(Self {
            dim,
            rows,
            provenance,
        })
    }

    /// Runs `backbone` over the source, labeled target and unlabeled target
    /// pools. Unlabeled rows carry their evaluation labels.
    pub fn from_split<R: Real>(
        backbone: &Backbone<R>,
        split: &SSDASplit,
        provenance: Provenance,
    ) -> Result<Self> {
        let mut rows = Vec::new();
        for (pool, role) in [
            (&split.source, FeatureRole::Source),
            (&split.labeled_target, FeatureRole::LabeledTarget),
            (&split.unlabeled_target, FeatureRole::UnlabeledTarget),
        ] {
            let features = pool_features(backbone, pool)?;
            let labels = pool.evaluation_labels();
            for i in 0..pool.len() {
                rows.push(FeatureRow {
                    id: pool.id(i),
                    role,
                    label: labels[i],
                    feature: features[i].clone(),
                });
            }
        }
        Self::new(backbone.feature_dim(), rows, provenance)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = DumpHeader {
            format: Self::FORMAT.into(),
            dim: self.dim,
            count: self.rows.len(),
            provenance: self.provenance.clone(),
            ids: self.rows.iter().map(|r| r.id).collect(),
            roles: self.rows.iter().map(|r| r.role).collect(),
            labels: self.rows.iter().map(|r| r.label).collect(),
        };
        let payload: Vec<f32> = self.rows.iter().flat_map(|r| r.feature.iter().copied()).collect();
        write_container(path.as_ref(), &header, &payload)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (h, payload): (DumpHeader, Vec<f32>) = read_container(path.as_ref())?;
        if h.format != Self::FORMAT {
            return Err(Error::Format(format!("unsupported feature dump format {}", h.format)));
        }
        if h.ids.len() != h.count
            || h.roles.len() != h.count
            || h.labels.len() != h.count
            || payload.len() != h.count * h.dim
        {
            return Err(Error::Format("feature dump header does not match payload".into()));
        }
        let rows = (0..h.count)
            .map(|i| FeatureRow {
                id: h.ids[i],
                role: h.roles[i],
                label: h.labels[i],
                feature: payload[i * h.dim..(i + 1) * h.dim].to_vec(),
            })
            .collect();
        Self::new(h.dim, rows, h.provenance)
    }

    pub fn role(&self, role: FeatureRole) -> impl Iterator<Item = &FeatureRow> {
        self.rows.iter().filter(move |r| r.role == role)
    }

    /// Features and labels of one role; errors if any label is absent.
    pub fn labeled(&self, role: FeatureRole) -> Result<(Vec<Vec<f32>>, Vec<usize>)> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for r in self.role(role) {
            let y = r
                .label
                .ok_or_else(|| Error::Validation(format!("feature row {} has no label", r.id)))?;
            xs.push(r.feature.clone());
            ys.push(y);
        }
        Ok((xs, ys))
    }

    fn domain_features(&self, domain: Domain) -> Vec<Vec<f32>> {
        self.rows
            .iter()
            .filter(|r| r.role.domain() == domain)
            .map(|r| r.feature.clone())
            .collect()
    }
}

fn pool_features<R: Real>(backbone: &Backbone<R>, pool: &Pool) -> Result<Vec<Vec<f32>>> {
    if pool.is_empty() {
        return Ok(Vec::new());
    }
    let x = Image::batch::<R>(pool.images())?;
    let f = backbone.features(&x)?;
    Ok(f.rows_iter()
        .map(|r| r.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect())
        .collect())
}

/// Settings for the linear max-margin domain classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    /// Penalty on the squared hinge loss.
    pub c: f64,
    pub max_epochs: usize,
    /// Stop once the projected-gradient spread falls below this.
    pub tolerance: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            max_epochs: 1000,
            tolerance: 1e-3,
        }
    }
}

/// A linear classifier `sign(w . x + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearSvm {
    /// Minimizes `0.5 |w|^2 + C sum max(0, 1 - y (w . x + b))^2` by dual
    /// coordinate descent, with the bias as an extra constant feature.
    /// Labels are `+1`/`-1` as `true`/`false`.
    pub fn fit(xs: &[Vec<f32>], ys: &[bool], cfg: &SvmConfig, rng: &mut impl Rng) -> Result<Self> {
        if xs.len() != ys.len() || xs.is_empty() {
            return Err(Error::Validation("svm needs a non-empty, matched training set".into()));
        }
        if !(cfg.c > 0.0) {
            return Err(Error::Validation("svm penalty must be positive".into()));
        }
        let d = xs[0].len();
        let n = xs.len();
        let aug = |i: usize| xs[i].iter().map(|&v| f64::from(v)).chain(std::iter::once(1.0));
        let diag = 0.5 / cfg.c;
        let qii: Vec<f64> = (0..n).map(|i| aug(i).map(|v| v * v).sum::<f64>() + diag).collect();
        let sign: Vec<f64> = ys.iter().map(|&y| if y { 1.0 } else { -1.0 }).collect();
        let mut w = vec![0.0; d + 1];
        let mut alpha = vec![0.0; n];
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..cfg.max_epochs {
            order.shuffle(rng);
            let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
            for &i in &order {
                let margin: f64 = aug(i).zip(&w).map(|(x, wj)| x * wj).sum();
                let g = sign[i] * margin - 1.0 + diag * alpha[i];
                let pg = if alpha[i] == 0.0 { g.min(0.0) } else { g };
                pg_max = pg_max.max(pg);
                pg_min = pg_min.min(pg);
                if pg != 0.0 {
                    let old = alpha[i];
                    alpha[i] = (old - g / qii[i]).max(0.0);
                    let step = (alpha[i] - old) * sign[i];
                    for (wj, x) in w.iter_mut().zip(aug(i)) {
                        *wj += step * x;
                    }
                }
            }
            if pg_max - pg_min < cfg.tolerance {
                break;
            }
        }
        let bias = w.pop().unwrap_or(0.0);
        Ok(Self { weights: w, bias })
    }

    pub fn decision(&self, x: &[f32]) -> f64 {
        self.weights.iter().zip(x).map(|(w, &v)| w * f64::from(v)).sum::<f64>() + self.bias
    }

    pub fn predict(&self, x: &[f32]) -> bool {
        self.decision(x) > 0.0
    }
}

/// `2 (1 - 2 eps)` clipped to `[0, 2]`.
pub fn a_distance_from_error(eps: f64) -> f64 {
    (2.0 * (1.0 - 2.0 * eps)).clamp(0.0, 2.0)
}

/// Proxy A-distance between two feature sets. Each domain is split in half
/// (train/test), a linear SVM separates domains on the train halves, and
/// `eps` is its error on the pooled test halves. Returns `(a_distance, eps)`
/// with `eps` unclipped.
pub fn a_distance(
    source: &[Vec<f32>],
    target: &[Vec<f32>],
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    a_distance_with(source, target, &SvmConfig::default(), rng)
}

pub fn a_distance_with(
    source: &[Vec<f32>],
    target: &[Vec<f32>],
    cfg: &SvmConfig,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    for (name, set) in [("source", source), ("target", target)] {
        if set.len() < MIN_DOMAIN_FEATURES {
            return Err(Error::Validation(format!(
                "a-distance needs at least {MIN_DOMAIN_FEATURES} {name} features, got {}",
                set.len()
            )));
        }
    }
    let d = source[0].len();
    if source.iter().chain(target).any(|f| f.len() != d) {
        return Err(Error::Shape("feature dimensions differ".into()));
    }
    let (mut train_x, mut train_y, mut test_x, mut test_y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (set, label) in [(source, false), (target, true)] {
        let mut idx: Vec<usize> = (0..set.len()).collect();
        idx.shuffle(rng);
        let half = set.len() / 2;
        for (k, &i) in idx.iter().enumerate() {
            if k < half {
                train_x.push(set[i].clone());
                train_y.push(label);
            } else {
                test_x.push(set[i].clone());
                test_y.push(label);
            }
        }
    }
    let svm = LinearSvm::fit(&train_x, &train_y, cfg, rng)?;
    let wrong = test_x
        .iter()
        .zip(&test_y)
        .filter(|(x, &y)| svm.predict(x) != y)
        .count();
    let eps = wrong as f64 / test_x.len() as f64;
    Ok((a_distance_from_error(eps), eps))
}

/// Predicts, for every query, the class whose reference features are closest
/// on average (Euclidean). Ties go to the smallest class index.
pub fn mean_distance_predict(
    queries: &[Vec<f32>],
    reference: &[Vec<f32>],
    reference_labels: &[usize],
    num_classes: usize,
) -> Result<Vec<usize>> {
    if reference.len() != reference_labels.len() {
        return Err(Error::Shape("reference features and labels differ in length".into()));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &y) in reference_labels.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::Validation(format!("label {y} out of range for {num_classes} classes")));
        }
        members[y].push(i);
    }
    if let Some(c) = members.iter().position(Vec::is_empty) {
        return Err(Error::Validation(format!("class {c} has no reference features")));
    }
    Ok(queries
        .iter()
        .map(|q| {
            let mut best = (0, f64::INFINITY);
            for (c, m) in members.iter().enumerate() {
                let mean = m.iter().map(|&i| euclidean(q, &reference[i])).sum::<f64>() / m.len() as f64;
                if mean < best.1 {
                    best = (c, mean);
                }
            }
            best.0
        })
        .collect())
}

fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn transfer_accuracy(
    queries: &[Vec<f32>],
    query_labels: &[usize],
    reference: &[Vec<f32>],
    reference_labels: &[usize],
    num_classes: usize,
) -> Result<f64> {
    if queries.len() != query_labels.len() {
        return Err(Error::Shape("query features and labels differ in length".into()));
    }
    if queries.is_empty() {
        return Err(Error::Validation("no query features".into()));
    }
    let pred = mean_distance_predict(queries, reference, reference_labels, num_classes)?;
    let hits = pred.iter().zip(query_labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / queries.len() as f64)
}

/// Accuracy of labeling unlabeled target features by the labeled target pool.
pub fn dist_acc_target(
    unlabeled: &[Vec<f32>],
    true_labels: &[usize],
    labeled: &[Vec<f32>],
    labels: &[usize],
    num_classes: usize,
) -> Result<f64> {
    transfer_accuracy(unlabeled, true_labels, labeled, labels, num_classes)
}

/// Accuracy of labeling unlabeled target features by the source pool.
pub fn dist_acc_source(
    unlabeled: &[Vec<f32>],
    true_labels: &[usize],
    source: &[Vec<f32>],
    source_labels: &[usize],
    num_classes: usize,
) -> Result<f64> {
    transfer_accuracy(unlabeled, true_labels, source, source_labels, num_classes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub a_distance: f64,
    pub domain_classifier_error: f64,
    pub dist_acc_target: f64,
    pub dist_acc_source: f64,
    pub n_features: usize,
}

impl AnalysisReport {
    /// Full report for a dump; the A-distance split uses the analysis
    /// stream of `seed`.
    pub fn compute(dump: &FeatureDump, num_classes: usize, seed: u64) -> Result<Self> {
        let mut rng = RngStream::new(seed, StreamId::Analysis);
        let (a, eps) = a_distance(
            &dump.domain_features(Domain::Source),
            &dump.domain_features(Domain::Target),
            &mut rng,
        )?;
        let (ux, uy) = dump.labeled(FeatureRole::UnlabeledTarget)?;
        let (lx, ly) = dump.labeled(FeatureRole::LabeledTarget)?;
        let (sx, sy) = dump.labeled(FeatureRole::Source)?;
        Ok(Self {
            a_distance: a,
            domain_classifier_error: eps,
            dist_acc_target: dist_acc_target(&ux, &uy, &lx, &ly, num_classes)?,
            dist_acc_source: dist_acc_source(&ux, &uy, &sx, &sy, num_classes)?,
            n_features: dump.rows.len(),
        })
    }
}

/// Settings for the 2-D neighbor embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub perplexity: f32,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            epochs: 1000,
            seed: 0,
        }
    }
}

/// Number of classes drawn when the caller does not choose them.
pub const DEFAULT_EMBEDDING_CLASSES: usize = 5;

/// Draws `count` distinct classes out of `num_classes`, sorted.
pub fn pick_classes(num_classes: usize, count: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if count > num_classes {
        return Err(Error::Validation(format!(
            "cannot pick {count} of {num_classes} classes"
        )));
    }
    let mut c = rand::seq::index::sample(rng, num_classes, count).into_vec();
    c.sort_unstable();
    Ok(c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedPoint {
    pub x: f32,
    pub y: f32,
    pub label: usize,
    pub domain: Domain,
    pub is_labeled_target: bool,
}

/// t-SNE of the dump rows whose label is in `classes`. The initial layout
/// is drawn from `cfg.seed` and the optimizer runs on one thread, so the
/// output depends on the inputs only.
pub fn embed(
    dump: &FeatureDump,
    classes: &[usize],
    num_classes: usize,
    cfg: &EmbeddingConfig,
) -> Result<Vec<EmbeddedPoint>> {
    if classes.len() < 2 {
        return Err(Error::Validation("embedding needs at least 2 classes".into()));
    }
    if let Some(c) = classes.iter().find(|&&c| c >= num_classes) {
        return Err(Error::Validation(format!("unknown class {c}")));
    }
    let wanted: BTreeSet<usize> = classes.iter().copied().collect();
    let rows: Vec<&FeatureRow> = dump
        .rows
        .iter()
        .filter(|r| r.label.is_some_and(|y| wanted.contains(&y)))
        .collect();
    if rows.len() < 2 {
        return Err(Error::Validation("fewer than 2 rows in the selected classes".into()));
    }
    let data: Vec<&[f32]> = rows.iter().map(|r| r.feature.as_slice()).collect();
    let mut rng = RngStream::new(cfg.seed, StreamId::Analysis);
    let init: Vec<f32> = (0..2 * rows.len())
        .map(|_| 1e-4 * rng.sample::<f32, _>(StandardNormal))
        .collect();
    // A perplexity above the sample count leaves the bandwidth search undefined.
    let perplexity = cfg.perplexity.min(((rows.len() - 1) as f32 / 3.0).max(1.0));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
    let y = pool.install(|| {
        bhtsne::tSNE::<f32, &[f32], 2>::new(&data)
            .perplexity(perplexity)
            .epochs(cfg.epochs)
            .initial_embedding(init)
            .exact(|a, b| {
                a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f32>().sqrt()
            })
            .embedding()
    });
    Ok(rows
        .iter()
        .enumerate()
        .map(|(i, r)| EmbeddedPoint {
            x: y[2 * i],
            y: y[2 * i + 1],
            label: r.label.unwrap_or_default(),
            domain: r.role.domain(),
            is_labeled_target: r.role == FeatureRole::LabeledTarget,
        })
        .collect())
}

pub fn embedding_csv(points: &[EmbeddedPoint]) -> String {
    let mut out = String::from("x,y,label,domain,is_labeled_target\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            p.x,
            p.y,
            p.label,
            p.domain.as_str(),
            u8::from(p.is_labeled_target)
        );
    }
    out
}

/// Embeds the selected classes and writes the CSV to `out`.
pub fn export_embedding(
    dump: &FeatureDump,
    classes: &[usize],
    num_classes: usize,
    cfg: &EmbeddingConfig,
    out: impl AsRef<Path>,
) -> Result<usize> {
    let points = embed(dump, classes, num_classes, cfg)?;
    let out = out.as_ref();
    std::fs::write(out, embedding_csv(&points)).map_err(|e| Error::io(out, e))?;
    Ok(points.len())
}
