//! Persistence: raw and portable images, checkpoints.

mod checkpoint;
mod portable;
mod raw;

pub use checkpoint::{
    checkpoint_len, decode_checkpoint, encode_checkpoint, load_checkpoint, params_block_bytes, save_checkpoint,
    Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use portable::{read_image, write_image};
pub use raw::{
    read_raw_raster, read_raw_tensor, write_raw_raster, write_raw_tensor, ElementKind, RawImageHeader, RawReader,
    RawWriter, RAW_HEADER_LEN, RAW_MAGIC, RAW_VERSION,
};
