//! Block scrambling-based compressible image encryption for
//! Encryption-then-Compression (EtC) pipelines.
//!
//! The crate is organised around the life of an image shared through an
//! untrusted provider:
//!
//! * [`pixelcore`]: 8-bit raster buffers, binary PPM/PGM I/O, block
//!   partitioning and PSNR.
//! * [`keyschedule`]: SplitMix64 keystreams derived from a 64-bit master key,
//!   keyed permutations and key-space accounting.
//! * [`cipher`]: the four-step block cipher (scramble, rotate/flip,
//!   negative-positive, color shuffle) and its grayscale-based variant.
//! * [`codec`]: JPEG round trips, rate-distortion curves and provider
//!   recompression.
//! * [`puzzle`]: jigsaw-puzzle solver attack and the Dc/Nc/Lc scores.
//! * [`learnable`]: keyed orthogonal template protection and a
//!   nearest-centroid classifier working on protected templates.
//!
//! The keystream generator is deterministic and portable. It is not a
//! cryptographically secure generator.

pub mod cipher;
pub mod codec;
pub mod error;
pub mod keyschedule;
pub mod learnable;
pub mod pixelcore;
pub mod puzzle;

pub use cipher::{decrypt, encrypt, encrypt_padded, CipherConfig, CipherSidecar, Orientation, Scheme, Steps};
pub use error::{Error, Result};
pub use keyschedule::MasterKey;
pub use pixelcore::{BlockGrid, ImageBuffer};
