use rand::seq::SliceRandom;

use super::SSDASplit;
use crate::error::{Error, Result};
use crate::rng::{RngStream, StreamId};

/// Draws pool indices epoch by epoch, reshuffling at every epoch boundary.
#[derive(Clone, Debug)]
pub struct EpochCycler {
    order: Vec<usize>,
    cursor: usize,
    rng: RngStream,
    draws: u64,
}

impl EpochCycler {
    pub fn new(len: usize, mut rng: RngStream) -> Result<Self> {
        if len == 0 {
            return Err(Error::Data("cannot cycle over an empty pool".into()));
        }
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        Ok(Self {
            order,
            cursor: 0,
            rng,
            draws: 0,
        })
    }

    pub fn next_index(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let i = self.order[self.cursor];
        self.cursor += 1;
        self.draws += 1;
        i
    }

    pub fn take(&mut self, n: usize) -> Vec<usize> {
        (0..n).map(|_| self.next_index()).collect()
    }

    /// Total indices handed out so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }
}

/// One optimization step's examples, as indices into the split's pools.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainBatch {
    /// `M_s`: indices into the source pool.
    pub source: Vec<usize>,
    /// `M_t`: indices into the labeled target pool.
    pub labeled_target: Vec<usize>,
    /// `M_u`: indices into the unlabeled target pool.
    pub unlabeled: Vec<usize>,
}

/// Produces batches of `s` source, `s` labeled target and `2s` unlabeled
/// target examples. Each pool has its own sub-stream of the data-sampling
/// stream, so skipping one pool never perturbs another.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    s: usize,
    source: Option<EpochCycler>,
    labeled: Option<EpochCycler>,
    unlabeled: EpochCycler,
}

impl BatchSampler {
    /// `use_source = false` is the source-free mode: `M_s` stays empty.
    /// An empty labeled target pool is accepted only for 0-shot splits.
    pub fn new(split: &SSDASplit, s: usize, seed: u64, use_source: bool) -> Result<Self> {
        if s == 0 {
            return Err(Error::Validation("batch size s must be >= 1".into()));
        }
        let stream = |i| RngStream::with_index(seed, StreamId::DataSampling, i);
        let source = if use_source {
            if split.source.is_empty() {
                return Err(Error::Data("source pool D_s is empty".into()));
            }
            Some(EpochCycler::new(split.source.len(), stream(0))?)
        } else {
            None
        };
        let labeled = if split.labeled_target.is_empty() {
            if split.shots > 0 {
                return Err(Error::Data("labeled target pool D_t is empty".into()));
            }
            None
        } else {
            Some(EpochCycler::new(split.labeled_target.len(), stream(1))?)
        };
        if split.unlabeled_target.is_empty() {
            return Err(Error::Data("unlabeled target pool D_u is empty".into()));
        }
        let unlabeled = EpochCycler::new(split.unlabeled_target.len(), stream(2))?;
        Ok(Self {
            s,
            source,
            labeled,
            unlabeled,
        })
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn next_batch(&mut self) -> TrainBatch {
        let s = self.s;
        TrainBatch {
            source: self.source.as_mut().map_or_else(Vec::new, |c| c.take(s)),
            labeled_target: self.labeled.as_mut().map_or_else(Vec::new, |c| c.take(s)),
            unlabeled: self.unlabeled.take(2 * s),
        }
    }

    /// `(source, labeled target, unlabeled)` draw counters.
    pub fn draws(&self) -> (u64, u64, u64) {
        (
            self.source.as_ref().map_or(0, EpochCycler::draws),
            self.labeled.as_ref().map_or(0, EpochCycler::draws),
            self.unlabeled.draws(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn small_pool_repeats_but_covers() {
        let mut c = EpochCycler::new(3, RngStream::new(1, StreamId::DataSampling)).unwrap();
        let batch = c.take(4);
        let distinct: HashSet<_> = batch.iter().collect();
        assert_eq!(distinct.len(), 3);
        assert_eq!(batch.len(), 4);
    }

    #[test]
    fn each_epoch_is_a_permutation() {
        let mut c = EpochCycler::new(7, RngStream::new(2, StreamId::DataSampling)).unwrap();
        for _ in 0..5 {
            let mut epoch = c.take(7);
            epoch.sort_unstable();
            assert_eq!(epoch, (0..7).collect::<Vec<_>>());
        }
    }

    #[test]
    fn empty_pool_rejected() {
        assert!(EpochCycler::new(0, RngStream::new(0, StreamId::DataSampling)).is_err());
    }
}
