//! Datasets, n-shot adaptation splits, and the per-step batch sampler.

mod folder;
mod image;
mod sampler;
mod split;
mod synthetic;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use self::folder::{export_folder_dataset, load_folder_dataset};
pub use self::image::Image;
pub use self::sampler::{BatchSampler, EpochCycler, TrainBatch};
pub use self::split::{sample_nshot_split, DataSource, SplitIds, SplitManifest};
pub use self::synthetic::{
    glyph_count, make_synthetic_domain_pair, render_glyph, DomainShift, GlyphLatent,
    SyntheticDomainSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }

    /// High bits mixed into example ids so ids are unique across domains.
    pub(crate) fn id_base(self) -> u64 {
        match self {
            Domain::Source => 0,
            Domain::Target => 1 << 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageExample {
    pub pixels: Image,
    pub label: Option<usize>,
    pub domain: Domain,
    pub id: u64,
}

/// An immutable collection of examples from one domain.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub domain: Domain,
    pub class_names: Vec<String>,
    examples: Vec<Arc<ImageExample>>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        domain: Domain,
        class_names: Vec<String>,
        examples: Vec<ImageExample>,
    ) -> Result<Self> {
        let k = class_names.len();
        for e in &examples {
            if let Some(y) = e.label {
                if y >= k {
                    return Err(Error::Data(format!("label {y} out of range for {k} classes")));
                }
            }
        }
        Ok(Self {
            name: name.into(),
            domain,
            class_names,
            examples: examples.into_iter().map(Arc::new).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn examples(&self) -> &[Arc<ImageExample>] {
        &self.examples
    }

    pub fn get(&self, i: usize) -> &ImageExample {
        &self.examples[i]
    }

    /// SHA-256 over ids, labels, and pixel bytes; identifies a dataset in manifests.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.examples {
            h.update(e.id.to_le_bytes());
            h.update(e.label.map_or(u64::MAX, |y| y as u64).to_le_bytes());
            for v in &e.pixels.data {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn into_pool(self) -> Pool {
        Pool::new(self.examples)
    }
}

/// One of the four pools of an adaptation split. Labels are reachable only
/// through [`Pool::label`], which counts every read, or through the
/// explicitly evaluation-only [`Pool::evaluation_labels`].
#[derive(Debug)]
pub struct Pool {
    examples: Vec<Arc<ImageExample>>,
    label_reads: AtomicUsize,
}

impl Clone for Pool {
    fn clone(&self) -> Self {
        Self::new(self.examples.clone())
    }
}

impl Pool {
    pub fn new(examples: Vec<Arc<ImageExample>>) -> Self {
        Self {
            examples,
            label_reads: AtomicUsize::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn image(&self, i: usize) -> &Image {
        &self.examples[i].pixels
    }

    pub fn id(&self, i: usize) -> u64 {
        self.examples[i].id
    }

    pub fn domain(&self, i: usize) -> Domain {
        self.examples[i].domain
    }

    pub fn ids(&self) -> Vec<u64> {
        self.examples.iter().map(|e| e.id).collect()
    }

    pub fn images(&self) -> impl Iterator<Item = &Image> {
        self.examples.iter().map(|e| &e.pixels)
    }

    /// Training-time label access; counted.
    pub fn label(&self, i: usize) -> Result<usize> {
        self.label_reads.fetch_add(1, Ordering::Relaxed);
        self.examples[i]
            .label
            .ok_or_else(|| Error::Data(format!("example {} has no label", self.examples[i].id)))
    }

    pub fn label_reads(&self) -> usize {
        self.label_reads.load(Ordering::Relaxed)
    }

    /// Ground truth for scoring only; never used to compute a training loss.
    pub fn evaluation_labels(&self) -> Vec<Option<usize>> {
        self.examples.iter().map(|e| e.label).collect()
    }
}

/// The four data pools of one adaptation scenario.
#[derive(Clone, Debug)]
pub struct SSDASplit {
    /// Labeled source examples.
    pub source: Pool,
    /// `shots` labeled target examples per class.
    pub labeled_target: Pool,
    /// Unlabeled target examples; also the transductive test set.
    pub unlabeled_target: Pool,
    /// Held-out labeled target examples used for model selection.
    pub validation: Pool,
    pub num_classes: usize,
    pub shots: usize,
}

impl SSDASplit {
    pub fn ids(&self) -> SplitIds {
        SplitIds {
            source: self.source.ids(),
            labeled_target: self.labeled_target.ids(),
            unlabeled_target: self.unlabeled_target.ids(),
            validation: self.validation.ids(),
        }
    }
}
