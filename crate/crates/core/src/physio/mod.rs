//! EDA, ECG and EEG feature extraction.

pub mod ecg;
pub mod eda;
pub mod eeg;
pub mod hrv;

pub use ecg::{detect_r_peaks, pan_tompkins, synthesize_ecg, BeatSeries, EcgTemplate};
pub use eda::{eda_block_metric, eda_block_slope, eda_preprocess, EdaBlockMetric};
pub use eeg::{cnv_mean_amplitudes, eeg_preprocess, epoch_and_reject, CleanedEeg, CnvAmplitudes, EegConfig, EpochSet};
pub use hrv::{hrv_features, HrvFeatures};
