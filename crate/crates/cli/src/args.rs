use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use srnet_core::pipeline::Variant;
use srnet_core::{AblationConfig, PipelineConfig, SimMode, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "srnet", version, about = "Deformable registration guided by self-supervised label maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register a floating image onto a reference image.
    Register(RegisterArgs),
    /// Generate a synthetic pair with a known deformation.
    Synth(SynthArgs),
    /// Score a displacement field against landmarks and optional masks.
    Eval(EvalArgs),
    /// Compare loss variants on seeded synthetic pairs.
    Ablate(AblateArgs),
    /// Features and clustering only: label maps and gap statistic.
    ClusterMap(ClusterMapArgs),
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// Reference image (PGM/PPM or PNG).
    #[arg(long, required_unless_present = "manifest")]
    pub reference: Option<PathBuf>,
    /// Floating image, warped onto the reference.
    #[arg(long, required_unless_present = "manifest")]
    pub floating: Option<PathBuf>,
    /// Synthetic pair manifest; supplies images and landmarks.
    #[arg(long, conflicts_with_all = ["reference", "floating"])]
    pub manifest: Option<PathBuf>,
    /// Reference-frame landmarks, enables metrics.json.
    #[arg(long, requires = "flt_landmarks")]
    pub ref_landmarks: Option<PathBuf>,
    /// Floating-frame landmarks.
    #[arg(long, requires = "ref_landmarks")]
    pub flt_landmarks: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Checkerboard tile size in pixels.
    #[arg(long, default_value_t = 16)]
    pub checkerboard_tile: usize,
    /// JSON pipeline config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
}

#[derive(Debug, Args)]
pub struct ClusterMapArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub floating: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON pipeline config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
}

/// Overrides for [`PipelineConfig`]; unset flags keep the loaded or default
/// value.
#[derive(Debug, Args, Default)]
pub struct PipelineFlags {
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub iters_per_level: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long, value_parser = parse_sim_mode)]
    pub sim_mode: Option<SimMode>,
    #[arg(long)]
    pub lcc_window: Option<usize>,
    #[arg(long)]
    pub smooth_mean: Option<bool>,
    #[arg(long)]
    pub plateau_window: Option<usize>,
    #[arg(long)]
    pub plateau_tol: Option<f64>,
    /// Seed for both clustering and registration.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k_min: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Reference sets for the gap statistic.
    #[arg(long)]
    pub b: Option<usize>,
    #[arg(long)]
    pub subsample: Option<usize>,
    #[arg(long)]
    pub gap_subsample: Option<usize>,
    /// Skip the gap statistic and use this many clusters.
    #[arg(long)]
    pub fixed_k: Option<usize>,
    #[arg(long)]
    pub feature_scales: Option<usize>,
}

fn parse_sim_mode(s: &str) -> Result<SimMode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned()))
        .map_err(|_| format!("expected one of mse, lcc, mse_plus_lcc; got {s:?}"))
}

macro_rules! set {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src {
            $dst = v;
        }
    };
}

impl PipelineFlags {
    pub fn apply(&self, cfg: &mut PipelineConfig) {
        let r = &mut cfg.registration;
        set!(r.levels, self.levels);
        set!(r.iters_per_level, self.iters_per_level);
        set!(r.lr, self.lr);
        set!(r.beta1, self.beta1);
        set!(r.beta2, self.beta2);
        set!(r.eps, self.eps);
        set!(r.lambda1, self.lambda1);
        set!(r.lambda2, self.lambda2);
        set!(r.sim_mode, self.sim_mode);
        set!(r.lcc_window, self.lcc_window);
        set!(r.smooth_mean, self.smooth_mean);
        set!(r.plateau_window, self.plateau_window);
        set!(r.plateau_tol, self.plateau_tol);
        set!(r.seed, self.seed);
        let c = &mut cfg.clustering;
        set!(c.seed, self.seed);
        set!(c.k_min, self.k_min);
        set!(c.k_max, self.k_max);
        set!(c.b, self.b);
        set!(c.subsample, self.subsample);
        set!(c.gap_subsample, self.gap_subsample);
        if self.fixed_k.is_some() {
            c.fixed_k = self.fixed_k;
        }
        set!(cfg.features.scales, self.feature_scales);
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// JSON synth config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub flags: SynthFlags,
}

#[derive(Debug, Args, Default)]
pub struct SynthFlags {
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Maximum displacement in pixels.
    #[arg(long)]
    pub amplitude: Option<f64>,
    /// Smoothing scale of the field in pixels.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Landmark count.
    #[arg(long)]
    pub landmarks: Option<usize>,
    #[arg(long)]
    pub landmark_margin: Option<f64>,
    /// Region classes of a Voronoi base image; 0 selects a textured base.
    #[arg(long)]
    pub regions: Option<usize>,
    /// Voronoi cells shared among the regions.
    #[arg(long)]
    pub cells: Option<usize>,
}

impl SynthFlags {
    pub fn apply(&self, cfg: &mut SynthConfig) {
        set!(cfg.width, self.width);
        set!(cfg.height, self.height);
        set!(cfg.amplitude, self.amplitude);
        set!(cfg.sigma, self.sigma);
        set!(cfg.noise_std, self.noise_std);
        set!(cfg.landmarks, self.landmarks);
        set!(cfg.landmark_margin, self.landmark_margin);
        set!(cfg.regions, self.regions);
        set!(cfg.cells, self.cells);
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Displacement field (`.srfd`).
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long)]
    pub ref_landmarks: PathBuf,
    #[arg(long)]
    pub flt_landmarks: PathBuf,
    /// Reference label mask (grey levels are classes).
    #[arg(long, requires = "flt_mask")]
    pub ref_mask: Option<PathBuf>,
    /// Floating label mask, warped by the field before comparison.
    #[arg(long, requires = "ref_mask")]
    pub flt_mask: Option<PathBuf>,
    #[arg(long, default_value = "pair")]
    pub pair_id: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// JSON suite config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run seeds 0..N.
    #[arg(long, conflicts_with = "seed_list")]
    pub seeds: Option<u64>,
    /// Explicit comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seed_list: Option<Vec<u64>>,
    /// Comma-separated variants: full, no-seg, mse-only, cc-only.
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<Variant>>,
    #[command(flatten)]
    pub synth: SynthFlags,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
}

impl AblateArgs {
    pub fn apply(&self, cfg: &mut AblationConfig) {
        if let Some(n) = self.seeds {
            cfg.seeds = (0..n).collect();
        }
        if let Some(list) = &self.seed_list {
            cfg.seeds = list.clone();
        }
        if let Some(v) = &self.variants {
            cfg.variants = v.clone();
        }
        self.synth.apply(&mut cfg.synth);
        self.pipeline.apply(&mut cfg.pipeline);
    }
}
