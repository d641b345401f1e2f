//! Trajectory representation, canonical normalization, synthetic scenario
//! generation and semantic-map handling.

pub mod files;
pub mod map;
pub mod synth;
pub mod trajectory;

pub use map::{rasterize_roads, SemanticMap, CHANNELS, ROAD_CHANNEL};
pub use synth::{generate, SynthConfig, SyntheticDataset};
pub use trajectory::{
    denormalize, flat, normalize, sliding_window_chunks, unflat, NormalizationTransform, Point,
    Sample, TimedPoint, Trajectory,
};
