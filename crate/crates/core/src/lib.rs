//! Deformable 2D registration guided by self-supervised label maps.
//!
//! Label maps come from clustering multi-scale filter responses of both
//! images against a shared codebook (k chosen by the gap statistic). A dense
//! displacement field is then found by coarse-to-fine Adam on
//! `similarity + lambda1 * smoothness + lambda2 * segmentation`, where the
//! segmentation term compares the reference label map with the warped
//! floating one.

pub mod clustering;
pub mod error;
pub mod eval;
pub mod features;
pub mod imaging;
pub mod losses;
pub mod optimize;
pub mod pipeline;
pub mod synth;
pub mod warp;

pub use clustering::{ClusterConfig, GapResult, LabelMap, LabelMaps, SoftLabelMap};
pub use error::{Error, Result};
pub use eval::MetricReport;
pub use features::{FeatureConfig, FeatureStack};
pub use imaging::{Frame, Image, LandmarkSet, Point};
pub use losses::{LossReport, LossWeights, SimMode};
pub use optimize::{register_pair, RegConfig, RegistrationResult};
pub use pipeline::{run_ablation, run_pair, AblationConfig, PipelineConfig, Variant};
pub use synth::{SynthConfig, SynthPair};
pub use warp::DisplacementField;
