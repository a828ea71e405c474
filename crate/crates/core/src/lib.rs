//! Semi-supervised domain adaptation with rotation pretraining and
//! confidence-thresholded consistency regularization.

pub mod analysis;
pub mod augment;
pub mod config;
pub mod container;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod pretrain;
pub mod rng;
pub mod tensor;
pub mod train;

pub use config::{lr_at_step, load_config, ScheduleParams, TrainConfig};
pub use data::{Dataset, Domain, Image, ImageExample, Pool, SSDASplit};
pub use error::{Error, Result};
pub use metrics::MetricsRecord;
pub use model::{Backbone, BackboneArch, Checkpoint, ClassifierArch, ClassifierHead, Network, NetworkArch, ProbVector};
pub use rng::{RngStream, StreamId};
pub use tensor::{FeatureMap, Matrix, Real};
