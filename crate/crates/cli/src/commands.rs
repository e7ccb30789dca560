use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use srnet_core::clustering::LabelMap;
use srnet_core::eval::{aggregate_table, dice, hd95, rtre, MetricReport, PairRecord};
use srnet_core::imaging::{load_image, load_landmarks, save_image, write_atomic};
use srnet_core::pipeline::{label_pair, run_ablation, run_pair};
use srnet_core::synth::{write_pair, Manifest, MANIFEST_FILE};
use srnet_core::warp::{load_field, save_field, warp_points, warp_soft_labels};
use srnet_core::{AblationConfig, Error, Frame, Image, PipelineConfig, SoftLabelMap, SynthConfig};

use crate::args::{AblateArgs, ClusterMapArgs, EvalArgs, RegisterArgs, SynthArgs};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                Error::Io { .. }
                | Error::UnsupportedFormat(_)
                | Error::CorruptHeader(_)
                | Error::InvalidImage(_)
                | Error::InvalidField(_)
                | Error::MalformedRow { .. }
                | Error::NonContiguousIndices { .. } => 3,
                Error::NonFiniteLoss { .. } => 4,
                Error::InvalidArgument(_)
                | Error::LengthMismatch(..)
                | Error::DimensionMismatch(_)
                | Error::PointOutOfDomain { .. }
                | Error::ImageTooSmall { .. }
                | Error::KTooLarge { .. }
                | Error::WindowTooLarge { .. }
                | Error::Json(_) => 2,
                _ => 1,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

/// Defaults, overlaid by the JSON file when given. Unknown keys are rejected.
fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

/// Writes the effective config next to the outputs and prints it.
fn echo_config<T: Serialize>(out: &Path, cfg: &T) -> CliResult {
    let json = serde_json::to_string_pretty(cfg).map_err(Error::from)?;
    write_atomic(out.join("effective_config.json"), format!("{json}\n").as_bytes())?;
    println!("{json}");
    Ok(())
}

fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    Ok(())
}

fn write_text(path: PathBuf, text: &str) -> CliResult {
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn save_labels(out: &Path, labels: &srnet_core::LabelMaps) -> CliResult {
    labels.reference.save(out.join("ref_labels.png"))?;
    labels.floating.save(out.join("flt_labels.png"))?;
    write_text(out.join("gap.csv"), &labels.gap.to_csv())
}

struct PairInputs {
    reference: PathBuf,
    floating: PathBuf,
    landmarks: Option<(PathBuf, PathBuf)>,
}

fn pair_inputs(a: &RegisterArgs) -> CliResult<PairInputs> {
    if let Some(manifest_path) = &a.manifest {
        let text = fs::read_to_string(manifest_path).map_err(|e| io_err(manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid manifest {}: {e}", manifest_path.display())))?;
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let find = |role: &str| -> CliResult<PathBuf> {
            manifest
                .files
                .iter()
                .find(|f| f.role == role)
                .map(|f| dir.join(&f.file))
                .ok_or_else(|| CliError::Usage(format!("manifest has no {role} entry")))
        };
        return Ok(PairInputs {
            reference: find("reference")?,
            floating: find("floating")?,
            landmarks: Some((find("ref_landmarks")?, find("flt_landmarks")?)),
        });
    }
    let missing = || CliError::Usage("--reference and --floating are required without --manifest".into());
    Ok(PairInputs {
        reference: a.reference.clone().ok_or_else(missing)?,
        floating: a.floating.clone().ok_or_else(missing)?,
        landmarks: a.ref_landmarks.clone().zip(a.flt_landmarks.clone()),
    })
}

pub fn register(a: &RegisterArgs) -> CliResult {
    let mut cfg: PipelineConfig = load_config(a.config.as_deref())?;
    a.pipeline.apply(&mut cfg);
    cfg.validate()?;
    if a.checkerboard_tile == 0 {
        return Err(CliError::Usage("--checkerboard-tile must be positive".into()));
    }
    let inputs = pair_inputs(a)?;
    let reference = load_image(&inputs.reference)?;
    let floating = load_image(&inputs.floating)?;
    let landmarks = match &inputs.landmarks {
        Some((r, f)) => Some((load_landmarks(r, Frame::Reference)?, load_landmarks(f, Frame::Floating)?)),
        None => None,
    };
    create_dir(&a.out)?;
    echo_config(&a.out, &cfg)?;

    let out = run_pair(&reference, &floating, &cfg)?;
    let reg = &out.registration;
    save_image(a.out.join("registered.png"), &reg.registered)?;
    save_field(a.out.join("field.srfd"), &reg.field)?;
    write_text(a.out.join("loss_trace.jsonl"), &reg.trace_jsonl())?;
    save_image(a.out.join("diff_before.png"), &reference.abs_diff(&floating)?)?;
    save_image(a.out.join("diff_after.png"), &reference.abs_diff(&reg.registered)?)?;
    save_image(a.out.join("checkerboard.png"), &reference.checkerboard(&reg.registered, a.checkerboard_tile)?)?;
    if let Some(labels) = &out.labels {
        save_labels(&a.out, labels)?;
    }

    let summary = serde_json::json!({
        "final_loss": reg.final_loss(),
        "levels": reg.levels,
        "iterations_run": reg.iterations_run,
        "converged": reg.converged,
        "k": out.labels.as_ref().map(|l| l.k()),
        "mean_displacement_px": reg.field.mean_magnitude(),
    });
    write_text(a.out.join("summary.json"), &format!("{:#}\n", summary))?;

    if let Some((ref_lm, flt_lm)) = landmarks {
        let (w, h) = (reference.width(), reference.height());
        let before = rtre(&ref_lm, &flt_lm, w, h)?;
        let after = rtre(&warp_points(&ref_lm, &reg.field)?, &flt_lm, w, h)?;
        let reduction = if before.mean_rtre > 0.0 { 1.0 - after.mean_rtre / before.mean_rtre } else { 0.0 };
        let metrics = serde_json::json!({
            "before": { "mean_rtre": before.mean_rtre, "median_rtre": before.median_rtre, "mean_tre": before.mean_tre },
            "after": { "mean_rtre": after.mean_rtre, "median_rtre": after.median_rtre, "mean_tre": after.mean_tre },
            "rtre_reduction": reduction,
        });
        write_text(a.out.join("metrics.json"), &format!("{:#}\n", metrics))?;
    }
    Ok(())
}

pub fn synth(a: &SynthArgs) -> CliResult {
    let mut cfg: SynthConfig = load_config(a.config.as_deref())?;
    a.flags.apply(&mut cfg);
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let pair = cfg.generate()?;
    create_dir(&a.out)?;
    echo_config(&a.out, &cfg)?;
    let manifest = write_pair(&a.out, &pair, &cfg)?;
    eprintln!("wrote {} files and {}", manifest.files.len(), MANIFEST_FILE);
    Ok(())
}

/// Grey levels of two 8-bit masks mapped to class ids in ascending order of
/// level, shared by both masks.
fn masks_to_labels(a: &Image, b: &Image) -> CliResult<(LabelMap, LabelMap)> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch("masks differ in size".into()).into());
    }
    let level = |v: f64| (v * 255.0).round() as u8;
    let mut levels: Vec<u8> = a.data().iter().chain(b.data()).map(|&v| level(v)).collect();
    levels.sort_unstable();
    levels.dedup();
    let to_map = |img: &Image| -> CliResult<LabelMap> {
        let labels = img.data().iter().map(|&v| levels.binary_search(&level(v)).expect("level present") as u32).collect();
        Ok(LabelMap::new(img.width(), img.height(), levels.len(), labels)?)
    };
    Ok((to_map(a)?, to_map(b)?))
}

pub fn eval(a: &EvalArgs) -> CliResult {
    let field = load_field(&a.field)?;
    let ref_lm = load_landmarks(&a.ref_landmarks, Frame::Reference)?;
    let flt_lm = load_landmarks(&a.flt_landmarks, Frame::Floating)?;
    let masks = match (&a.ref_mask, &a.flt_mask) {
        (Some(r), Some(f)) => Some(masks_to_labels(&load_image(r)?, &load_image(f)?)?),
        _ => None,
    };
    let (w, h) = (field.width(), field.height());
    if ref_lm.len() != flt_lm.len() {
        return Err(Error::LengthMismatch(ref_lm.len(), flt_lm.len()).into());
    }
    let moved = warp_points(&ref_lm, &field)?;
    let mut record = PairRecord::new(a.pair_id.clone(), "all", &rtre(&moved, &flt_lm, w, h)?);
    if let Some((rm, fm)) = &masks {
        if rm.width() != w || rm.height() != h {
            return Err(Error::DimensionMismatch("masks do not match the field".into()).into());
        }
        let warped = warp_soft_labels(&SoftLabelMap::from(fm), &field)?.hard();
        for c in 0..rm.classes() as u32 {
            record.dice.push(dice(rm, &warped, c)?);
            record.hd95.push(hd95(rm, &warped, c).ok());
        }
    }
    let mut report = MetricReport::default();
    report.push(record);
    create_dir(&a.out)?;
    write_text(a.out.join("metrics.csv"), &report.to_csv())?;
    write_text(a.out.join("metrics.json"), &format!("{}\n", report.to_json()))?;
    print!("{}", report.to_csv());
    Ok(())
}

pub fn ablate(a: &AblateArgs) -> CliResult {
    let mut cfg: AblationConfig = load_config(a.config.as_deref())?;
    a.apply(&mut cfg);
    cfg.validate()?;
    create_dir(&a.out)?;
    echo_config(&a.out, &cfg)?;
    let res = run_ablation(&cfg)?;
    write_text(a.out.join("ablation.csv"), &res.to_csv())?;
    let mut columns: Vec<(&str, &MetricReport)> = vec![("initial", &res.initial)];
    columns.extend(res.rows.iter().map(|r| (r.variant.name(), &r.report)));
    let mut table = aggregate_table(&columns);
    if let Some(p) = res.p_full_vs_no_seg {
        table.push_str(&format!("paired Wilcoxon p (full vs no-seg): {p:.3e}\n"));
    }
    write_text(a.out.join("table.txt"), &table)?;
    for row in &res.rows {
        write_text(a.out.join(format!("metrics_{}.json", row.variant.name())), &format!("{}\n", row.report.to_json()))?;
    }
    eprint!("{table}");
    Ok(())
}

pub fn cluster_map(a: &ClusterMapArgs) -> CliResult {
    let mut cfg: PipelineConfig = load_config(a.config.as_deref())?;
    a.pipeline.apply(&mut cfg);
    cfg.validate()?;
    let reference = load_image(&a.reference)?;
    let floating = load_image(&a.floating)?;
    create_dir(&a.out)?;
    echo_config(&a.out, &cfg)?;
    let labels = label_pair(&reference, &floating, &cfg)?;
    save_labels(&a.out, &labels)?;
    eprintln!("k = {}{}", labels.k(), if labels.gap.no_elbow { " (no elbow; largest candidate)" } else { "" });
    Ok(())
}
