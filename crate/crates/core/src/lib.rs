pub mod archs;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod layers;
pub mod linksim;
pub mod model;
pub mod ops;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod tensor;
pub mod train;

pub use archs::Arch;
pub use dataset::{Label, LabeledImage};
pub use error::{Error, Result};
pub use layers::{FeatureShape, Layer, Mode, Param};
pub use linksim::{LinkParams, TransmitRecord};
pub use model::{MacReport, Model};
pub use ops::ConvSpec;
pub use pipeline::{ComparisonTable, EdgeClassifier, RunMode, RunReport};
pub use rng::Rng;
pub use tensor::{Dist, Fill, Tensor, ZipOp};
pub use train::{Metrics, TrainConfig};
