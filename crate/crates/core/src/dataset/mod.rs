//! Channel ingestion, gap handling, normalization, on/off labels and
//! windowing.

pub mod channel;
pub mod labels;
pub mod manifest;
pub mod norm;
pub mod preprocess;
pub mod windows;

pub use channel::{align, crop_time, load_channel, write_channel, ChannelSeries};
pub use labels::{label_on_off, DEFAULT_THRESHOLD_WATTS};
pub use manifest::{HouseData, HouseSegment, Manifest, PreprocessMode, Role, SplitSpec};
pub use norm::{compute_norm, compute_norm_values, denormalize, normalize, NormStats};
pub use preprocess::{preprocess_aligned, preprocess_redd, Preprocessed};
pub use windows::{make_windows, Geometry, Segment, WindowOrigin, WindowSource, WindowedBatch};
