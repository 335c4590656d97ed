//! Readers and writers for PGM/PPM images, CIFAR binaries and LMFT tensors.

pub mod cifar;
pub mod dataset;
pub mod lmft;
pub mod pnm;

pub use cifar::{cifar_batch, encode_cifar, load_cifar, parse_cifar, CifarKind, CifarRecord, CIFAR_PIXELS};
pub use dataset::{list_images, load_mask, load_sod_samples, pair_sod_dataset, SodPair, SodSample};
pub use lmft::{decode_lmft, encode_lmft, load_lmft, read_lmft, save_lmft, write_lmft, LMFT_MAGIC, LMFT_VERSION};
pub use pnm::{encode_pnm, load_image, parse_pnm, quantize_u8, save_image, ImageRecord, MAX_PIXELS};
