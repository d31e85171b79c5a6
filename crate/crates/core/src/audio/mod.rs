//! Audio substrate: WAV I/O, the synthetic sound bank, augmentations,
//! two-event composition and frame-level band-energy features.

mod augment;
pub(crate) mod bank;
mod compose;
mod esc50;
mod features;
mod wav;

pub use augment::{augment, resample_linear, AugmentationRanges, AugmentationSpec};
pub use bank::{synth_bank, BankLabel, SoundBank, SoundBankEntry, Timbre, ATOMIC_SECONDS};
pub use compose::compose_pair;
pub use esc50::{esc50_description, parse_esc50_filename, Esc50File};
pub use features::{band_edges_hz, features, FeatureConfig, FrameFeatures};
pub use wav::{read_wav, write_wav};

/// Default sample rate for synthesis and feature extraction.
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
