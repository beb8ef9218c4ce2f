//! Hierarchical multi-stage convolutional recurrent networks for pixel-wise
//! classification of image time series.

pub mod cells;
pub mod data;
pub mod eval;
pub mod gradcheck;
pub mod hierarchy;
pub mod network;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod training;

pub use cells::{CellKind, CellParams};
pub use data::{DataError, Dataset, SequenceSample};
pub use hierarchy::{ClassId, LabelHierarchy, MultiLevelLabels, UNLABELED};
pub use network::{MsConvRnn, NetworkConfig};
pub use tape::{Tape, Var};
pub use tensor::{Tensor, TensorError};
pub use training::{train, TrainConfig, TrainError};
