//! End-to-end pair registration (features, clustering, optimization) and the
//! seeded ablation suite on synthetic pairs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{make_label_maps, ClusterConfig, LabelMaps, SoftLabelMap};
use crate::error::{Error, Result};
use crate::eval::{dice, hd95, median, paired_wilcoxon, rtre, MetricReport, PairRecord};
use crate::features::{extract, FeatureConfig};
use crate::imaging::Image;
use crate::losses::SimMode;
use crate::optimize::{register_pair, RegConfig, RegistrationResult};
use crate::synth::{SynthConfig, SynthPair};
use crate::warp::{warp_points, warp_soft_labels, DisplacementField};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub registration: RegConfig,
    pub features: FeatureConfig,
    pub clustering: ClusterConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.registration.validate()?;
        self.features.validate()?;
        self.clustering.validate()
    }

    /// Whether the segmentation term is active, i.e. label maps are needed.
    pub fn uses_labels(&self) -> bool {
        self.registration.lambda2 > 0.0
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub labels: Option<LabelMaps>,
    pub registration: RegistrationResult,
}

/// Builds the joint label maps of a pair.
pub fn label_pair(reference: &Image, floating: &Image, cfg: &PipelineConfig) -> Result<LabelMaps> {
    let fr = extract(reference, &cfg.features)?;
    let ff = extract(floating, &cfg.features)?;
    make_label_maps(&fr, &ff, &cfg.clustering)
}

/// Features and clustering (when the segmentation term is on), then
/// registration.
pub fn run_pair(reference: &Image, floating: &Image, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let labels = if cfg.uses_labels() { Some(label_pair(reference, floating, cfg)?) } else { None };
    let registration = register_pair(
        reference,
        floating,
        labels.as_ref().map(|l| (&l.reference_soft, &l.floating_soft)),
        &cfg.registration,
    )?;
    Ok(PipelineOutput { labels, registration })
}

/// Scores a recovered field on a synthetic pair: landmark errors, and Dice
/// and HD95 per planted region when the pair has regions.
pub fn evaluate_pair(pair: &SynthPair, field: &DisplacementField, pair_id: &str, group: &str) -> Result<PairRecord> {
    let (w, h) = (pair.reference.width(), pair.reference.height());
    let moved = warp_points(&pair.ref_landmarks, field)?;
    let mut record = PairRecord::new(pair_id, group, &rtre(&moved, &pair.flt_landmarks, w, h)?);
    if let (Some(rr), Some(fr)) = (&pair.ref_regions, &pair.flt_regions) {
        let warped = warp_soft_labels(&SoftLabelMap::from(fr), field)?.hard();
        for c in 0..rr.classes() as u32 {
            record.dice.push(dice(rr, &warped, c)?);
            record.hd95.push(hd95(rr, &warped, c).ok());
        }
    }
    Ok(record)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// MSE + LCC similarity with the segmentation term.
    Full,
    /// Segmentation term removed.
    NoSeg,
    /// MSE similarity only, segmentation term kept.
    MseOnly,
    /// LCC similarity only, segmentation term kept.
    CcOnly,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoSeg, Variant::MseOnly, Variant::CcOnly];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSeg => "no-seg",
            Variant::MseOnly => "mse-only",
            Variant::CcOnly => "cc-only",
        }
    }

    pub fn apply(self, base: &RegConfig) -> RegConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoSeg => cfg.lambda2 = 0.0,
            Variant::MseOnly => cfg.sim_mode = SimMode::Mse,
            Variant::CcOnly => cfg.sim_mode = SimMode::Lcc,
        }
        cfg
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    /// Pair generator; its seed is replaced by each suite seed.
    pub synth: SynthConfig,
    pub pipeline: PipelineConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            seeds: (0..20).collect(),
            variants: vec![Variant::Full, Variant::NoSeg],
            synth: SynthConfig { regions: 5, cells: 48, noise_std: 0.1, ..SynthConfig::default() },
            pipeline: PipelineConfig::default(),
        }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() || self.variants.is_empty() {
            return Err(Error::InvalidArgument("ablation needs at least one seed and one variant".into()));
        }
        self.pipeline.validate()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantRow {
    pub variant: Variant,
    pub median_rtre: f64,
    pub report: MetricReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationResult {
    pub seeds: Vec<u64>,
    /// Pre-registration errors on the same pairs.
    pub initial: MetricReport,
    pub rows: Vec<VariantRow>,
    /// Paired Wilcoxon p between per-seed mean rTRE of full and no-seg.
    pub p_full_vs_no_seg: Option<f64>,
}

impl AblationResult {
    pub fn row(&self, v: Variant) -> Option<&VariantRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    /// `variant,median_rtre,p_vs_no_seg`; the p-value sits on the full row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,median_rtre,p_vs_no_seg\n");
        for r in &self.rows {
            let p = match (r.variant, self.p_full_vs_no_seg) {
                (Variant::Full, Some(p)) => p.to_string(),
                _ => String::new(),
            };
            out.push_str(&format!("{},{},{}\n", r.variant.name(), r.median_rtre, p));
        }
        out
    }
}

/// Registers every seeded synthetic pair with every variant. Seeds run in
/// parallel; results are gathered in seed order, so the output does not
/// depend on scheduling.
pub fn run_ablation(cfg: &AblationConfig) -> Result<AblationResult> {
    cfg.validate()?;
    let needs_labels = cfg.variants.iter().any(|v| v.apply(&cfg.pipeline.registration).lambda2 > 0.0);
    let per_seed: Vec<Result<(PairRecord, Vec<PairRecord>)>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let synth = SynthConfig { seed, ..cfg.synth.clone() };
            let pair = synth.generate()?;
            let id = format!("seed{seed}");
            let group = "synthetic";
            let initial = evaluate_pair(&pair, &DisplacementField::zeros(synth.width, synth.height), &id, group)?;
            let labels = if needs_labels { Some(label_pair(&pair.reference, &pair.floating, &cfg.pipeline)?) } else { None };
            let mut records = Vec::with_capacity(cfg.variants.len());
            for &v in &cfg.variants {
                let reg = RegConfig { seed, ..v.apply(&cfg.pipeline.registration) };
                let maps = if reg.lambda2 > 0.0 { labels.as_ref().map(|l| (&l.reference_soft, &l.floating_soft)) } else { None };
                let res = register_pair(&pair.reference, &pair.floating, maps, &reg)?;
                records.push(evaluate_pair(&pair, &res.field, &id, group)?);
            }
            Ok((initial, records))
        })
        .collect();

    let mut initial = MetricReport::default();
    let mut reports = vec![MetricReport::default(); cfg.variants.len()];
    for item in per_seed {
        let (init, records) = item?;
        initial.push(init);
        for (rep, rec) in reports.iter_mut().zip(records) {
            rep.push(rec);
        }
    }
    let rows: Vec<VariantRow> = cfg
        .variants
        .iter()
        .zip(reports)
        .map(|(&variant, report)| {
            let per_pair: Vec<f64> = report.records.iter().map(|r| r.median_rtre).collect();
            VariantRow { variant, median_rtre: median(&per_pair), report }
        })
        .collect();
    let mean_rtre = |v: Variant| -> Option<Vec<f64>> {
        rows.iter().find(|r| r.variant == v).map(|r| r.report.records.iter().map(|x| x.mean_rtre).collect())
    };
    let p_full_vs_no_seg = match (mean_rtre(Variant::Full), mean_rtre(Variant::NoSeg)) {
        (Some(a), Some(b)) => paired_wilcoxon(&a, &b).ok(),
        _ => None,
    };
    Ok(AblationResult { seeds: cfg.seeds.clone(), initial, rows, p_full_vs_no_seg })
}
