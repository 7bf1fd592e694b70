//! Depth video input: decoding, cropping, frame selection and batching.

pub mod batch;
pub mod frame;
pub mod index;
pub mod preprocess;
pub mod source;

pub use batch::{load_clip, make_batch, plan_epoch, Batch, BatchPlan, ClipConfig, ClipSet, Order, Prefetcher};
pub use frame::{decode_frame, encode_frame, read_frame, write_frame, DepthFrame};
pub use index::{parse_ntu_name, scan_dataset, single_video, Naming, Sample, SampleMeta, ScanReport};
pub use preprocess::{compute_roi, crop_resize, normalize, select_frames, RoiBox, ShortFill, StartPolicy};
pub use source::{DiskSource, SyntheticSource, SyntheticSpec, VideoSource};
