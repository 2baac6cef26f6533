//! Sensor streams, dataset loaders, normalization, the on-disk cache and the
//! synthetic stream generator.

pub mod cache;
pub mod loaders;
pub mod normalize;
pub mod segments;
pub mod stream;
pub mod synth;

pub use cache::{read_cache, read_stream, write_cache, write_stream};
pub use loaders::{descriptor, load_dataset, split_streams, split_subjects, DatasetDescriptor, LoadOptions, SplitRule, Splits};
pub use normalize::{normalize, NormStats};
pub use segments::{slice_segments, truth_regions, BoundaryRegion, Segment, SliceResult};
pub use stream::{label_runs, reverse_time, FrameLabel, LabelRun, SensorStream};
pub use synth::{random_segments, synth_stream, Generator, SynthSegment, SynthSpec};
