//! Audio-visual 3D sound event localization and detection.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! - [`features`]: STFT, log-mel and intensity-vector features of FOA audio
//! - [`codec`]: the SED-SCE output representation (activity + source
//!   Cartesian coordinates whose length is the distance)
//! - [`attention`]: the audio-guided visual attention stage
//! - [`losses`]: the joint detection/localization objective
//! - [`toynet`]: a small four-stage network, Adam and the tri-stage schedule
//! - [`augment`]: channel-swap and pixel-swap spatial augmentation
//! - [`metrics`]: location- and distance-aware F-score, DOA error and
//!   relative distance error
//! - [`scenegen`]: free-field synthetic scenes with exact ground truth

pub mod attention;
pub mod audio;
pub mod augment;
pub mod codec;
pub mod dataset;
pub mod features;
pub mod geom;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod scenegen;
pub mod tensor_store;
pub mod toynet;
