use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    load_folder_dataset, make_synthetic_domain_pair, Dataset, Domain, ImageExample, Pool, SSDASplit,
    SyntheticDomainSpec,
};
use crate::error::{Error, Result};

/// Example ids of each pool; enough to rebuild a split exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIds {
    pub source: Vec<u64>,
    pub labeled_target: Vec<u64>,
    pub unlabeled_target: Vec<u64>,
    pub validation: Vec<u64>,
}

/// Build an n-shot split: per class, `shots` labeled target examples,
/// `n_val_per_class` validation examples, and the remainder unlabeled.
/// The whole source dataset becomes the labeled source pool.
pub fn sample_nshot_split(
    source: &Dataset,
    target: &Dataset,
    shots: usize,
    n_val_per_class: usize,
    rng: &mut impl Rng,
) -> Result<SSDASplit> {
    let k = target.num_classes();
    if source.num_classes() != k {
        return Err(Error::Data(format!(
            "source has {} classes, target has {k}",
            source.num_classes()
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, e) in target.examples().iter().enumerate() {
        let y = e
            .label
            .ok_or_else(|| Error::Data(format!("target example {} has no label", e.id)))?;
        by_class[y].push(i);
    }
    let mut labeled = Vec::with_capacity(k * shots);
    let mut validation = Vec::with_capacity(k * n_val_per_class);
    let mut unlabeled = Vec::new();
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.len() < shots + n_val_per_class {
            return Err(Error::Data(format!(
                "class {class} (`{}`) has {} target examples, needs {}",
                target.class_names[class],
                members.len(),
                shots + n_val_per_class
            )));
        }
        members.shuffle(rng);
        labeled.extend_from_slice(&members[..shots]);
        validation.extend_from_slice(&members[shots..shots + n_val_per_class]);
        unlabeled.extend_from_slice(&members[shots + n_val_per_class..]);
    }
    for v in [&mut labeled, &mut validation, &mut unlabeled] {
        v.sort_unstable();
    }
    let pick = |idx: &[usize]| Pool::new(idx.iter().map(|&i| Arc::clone(&target.examples()[i])).collect());
    Ok(SSDASplit {
        source: Pool::new(source.examples().to_vec()),
        labeled_target: pick(&labeled),
        unlabeled_target: pick(&unlabeled),
        validation: pick(&validation),
        num_classes: k,
        shots,
    })
}

impl SSDASplit {
    /// Rebuild a split from stored ids. Every id must exist, target pools
    /// must be disjoint, and each labeled-target class must hold `shots` examples.
    pub fn from_ids(source: &Dataset, target: &Dataset, ids: &SplitIds, shots: usize) -> Result<Self> {
        let index = |ds: &Dataset| -> HashMap<u64, Arc<ImageExample>> {
            ds.examples().iter().map(|e| (e.id, Arc::clone(e))).collect()
        };
        let (src, tgt) = (index(source), index(target));
        let pick = |map: &HashMap<u64, Arc<ImageExample>>, ids: &[u64]| -> Result<Pool> {
            ids.iter()
                .map(|id| {
                    map.get(id)
                        .cloned()
                        .ok_or_else(|| Error::Data(format!("id {id} not found in dataset")))
                })
                .collect::<Result<Vec<_>>>()
                .map(Pool::new)
        };
        let split = SSDASplit {
            source: pick(&src, &ids.source)?,
            labeled_target: pick(&tgt, &ids.labeled_target)?,
            unlabeled_target: pick(&tgt, &ids.unlabeled_target)?,
            validation: pick(&tgt, &ids.validation)?,
            num_classes: target.num_classes(),
            shots,
        };
        split.check_invariants()?;
        Ok(split)
    }

    /// Pairwise disjoint target pools and exactly `shots` labeled examples per class.
    pub fn check_invariants(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for pool in [&self.labeled_target, &self.unlabeled_target, &self.validation] {
            for id in pool.ids() {
                if !seen.insert(id) {
                    return Err(Error::Data(format!("id {id} appears in two target pools")));
                }
            }
        }
        let mut counts = vec![0usize; self.num_classes];
        for y in self.labeled_target.evaluation_labels() {
            let y = y.ok_or_else(|| Error::Data("labeled target example without label".into()))?;
            if y >= self.num_classes {
                return Err(Error::Data(format!("label {y} out of range")));
            }
            counts[y] += 1;
        }
        if let Some((c, n)) = counts.iter().enumerate().find(|(_, &n)| n != self.shots) {
            return Err(Error::Data(format!(
                "class {c} has {n} labeled target examples, expected {}",
                self.shots
            )));
        }
        Ok(())
    }
}

/// Where a split's datasets come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic {
        spec: SyntheticDomainSpec,
    },
    Folders {
        source_root: PathBuf,
        target_root: PathBuf,
        image_size: usize,
    },
}

impl DataSource {
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DataSource::Synthetic { spec } => make_synthetic_domain_pair(spec),
            DataSource::Folders {
                source_root,
                target_root,
                image_size,
            } => Ok((
                load_folder_dataset(source_root, Domain::Source, *image_size)?,
                load_folder_dataset(target_root, Domain::Target, *image_size)?,
            )),
        }
    }

    pub fn image_size(&self) -> usize {
        match self {
            DataSource::Synthetic { spec } => spec.image_size,
            DataSource::Folders { image_size, .. } => *image_size,
        }
    }
}

/// JSON record of a split: data provenance plus the id lists of every pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub format: String,
    pub data: DataSource,
    pub num_classes: usize,
    pub shots: usize,
    pub n_val_per_class: usize,
    pub seed: u64,
    pub source_hash: String,
    pub target_hash: String,
    pub ids: SplitIds,
}

impl SplitManifest {
    pub const FORMAT: &'static str = "paclab.split.v1";

    pub fn new(
        data: DataSource,
        source: &Dataset,
        target: &Dataset,
        split: &SSDASplit,
        n_val_per_class: usize,
        seed: u64,
    ) -> Self {
        Self {
            format: Self::FORMAT.to_string(),
            data,
            num_classes: split.num_classes,
            shots: split.shots,
            n_val_per_class,
            seed,
            source_hash: source.content_hash(),
            target_hash: target.content_hash(),
            ids: split.ids(),
        }
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("manifest serializes");
        Sha256::digest(json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: SplitManifest = serde_json::from_str(&text)?;
        if m.format != Self::FORMAT {
            return Err(Error::Format(format!("unsupported split format {}", m.format)));
        }
        Ok(m)
    }

    /// Load the datasets, verify their hashes, and rebuild the split.
    pub fn materialize(&self) -> Result<(Dataset, Dataset, SSDASplit)> {
        let (source, target) = self.data.load()?;
        if source.content_hash() != self.source_hash || target.content_hash() != self.target_hash {
            return Err(Error::Data("dataset contents differ from the split manifest".into()));
        }
        let split = SSDASplit::from_ids(&source, &target, &self.ids, self.shots)?;
        Ok((source, target, split))
    }
}
