//! The learned codec: networks, training, and the frame pipeline.

mod bitstream;
mod config;
mod model;
mod pipeline;
mod toy;
mod train;

pub use bitstream::{
    read_sequence, write_sequence, EntropyHeader, FrameBitstream, FrameType, PointCounts,
    FIXED_HEADER_BYTES, MAGIC, VERSION,
};
pub use config::CodecConfig;
pub use model::{keep_rows, Decoder, Encoder, Model, MultiscaleFeatures, Predictor, StageOutput};
pub use pipeline::{
    block_pairs, decode_frame, decode_sequence, encode_blocks, encode_inter, encode_intra, encode_sequence,
    EncodedFrame, BLOCK_ALIGN,
};
pub use toy::{random_toy_sequence, toy_sequence, ToyShape};
pub use train::{bce_target_occupancy, moving_average, train_step, training_pairs, LossTerms, Trainer};
