//! Model graphs, the named architectures and checkpoint persistence.

pub mod checkpoint;
pub mod graph;
pub mod zoo;

pub use checkpoint::{load_checkpoint, load_checkpoint_for, read_checkpoint, save_checkpoint, write_checkpoint};
pub use graph::{BlockInfo, BlockKind, Layer, Mode, ModelGraph, Node, Shortcut};
pub use zoo::{
    build_model, build_variant, conv_block, inverted_residual, mobile_octave_block, BlockForm, ChannelPlan, Downsample,
    FinalForm, GraphBuilder, InvertedResidualSpec, ModelConfig, Variant, INPUT_SIZE, NUM_CLASSES,
};
