//! Coarse-to-fine Adam minimization of the registration objective over a
//! dense displacement field.

mod adam;

pub use adam::{adam_step, AdamState};

use serde::{Deserialize, Serialize};

use crate::clustering::SoftLabelMap;
use crate::error::{Error, Result};
use crate::imaging::{check_same, Image};
use crate::losses::{LossReport, LossWeights, Objective, SimMode};
use crate::warp::{warp_image, DisplacementField};

/// Coarsest level side length the pyramid may reach.
const MIN_LEVEL_SIDE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegConfig {
    pub levels: usize,
    pub iters_per_level: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub sim_mode: SimMode,
    pub lcc_window: usize,
    pub smooth_mean: bool,
    pub seed: u64,
    pub plateau_window: usize,
    pub plateau_tol: f64,
}

impl Default for RegConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            levels: 4,
            iters_per_level: 2000,
            lr: 1e-3,
            beta1: 0.93,
            beta2: 0.999,
            eps: 1e-8,
            lambda1: w.lambda1,
            lambda2: w.lambda2,
            sim_mode: w.sim_mode,
            lcc_window: w.lcc_window,
            smooth_mean: w.smooth_mean,
            seed: 0,
            plateau_window: 50,
            plateau_tol: 1e-6,
        }
    }
}

impl RegConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            sim_mode: self.sim_mode,
            lcc_window: self.lcc_window,
            smooth_mean: self.smooth_mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        AdamState::new(0, self.lr, self.beta1, self.beta2, self.eps)?;
        if self.levels == 0 {
            return Err(Error::InvalidArgument("levels must be at least 1".into()));
        }
        if self.plateau_window == 0 {
            return Err(Error::InvalidArgument("plateau_window must be at least 1".into()));
        }
        Ok(())
    }
}

/// One logged optimizer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub level: usize,
    pub total: f64,
    pub sim: f64,
    pub smooth: f64,
    pub seg: f64,
    /// Lowest total seen so far on this level.
    pub best_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelSummary {
    /// 0 is full resolution.
    pub level: usize,
    pub width: usize,
    pub height: usize,
    pub iterations: usize,
    pub initial: LossReport,
    pub best: LossReport,
    pub plateaued: bool,
}

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub field: DisplacementField,
    pub registered: Image,
    pub loss_trace: Vec<TraceEntry>,
    pub levels: Vec<LevelSummary>,
    pub converged: bool,
    pub iterations_run: usize,
}

impl RegistrationResult {
    /// Loss of the returned field at full resolution.
    pub fn final_loss(&self) -> LossReport {
        self.levels.last().expect("at least one level").best
    }

    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.loss_trace {
            out.push_str(&serde_json::to_string(e).expect("trace entry serializes"));
            out.push('\n');
        }
        out
    }
}

/// Registers `floating` onto `reference`. Soft label maps, when given, feed
/// the segmentation term.
pub fn register_pair(
    reference: &Image,
    floating: &Image,
    labels: Option<(&SoftLabelMap, &SoftLabelMap)>,
    cfg: &RegConfig,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    check_same(reference, floating)?;
    if let Some((r, f)) = labels {
        for m in [r, f] {
            if m.width() != reference.width() || m.height() != reference.height() {
                return Err(Error::DimensionMismatch("label maps do not match the images".into()));
            }
        }
    }

    let levels = level_count(reference.width(), reference.height(), cfg.levels);
    let ref_pyr = reference.pyramid(levels);
    let flt_pyr = floating.pyramid(levels);
    let label_pyr = match labels {
        Some((r, f)) => Some((soft_pyramid(r, levels)?, soft_pyramid(f, levels)?)),
        None => None,
    };

    let base = cfg.weights();
    let mut field: Option<DisplacementField> = None;
    let mut trace = Vec::new();
    let mut summaries = Vec::new();
    let mut iter = 0;
    let mut converged = false;

    for level in (0..levels).rev() {
        let (ir, ifl) = (&ref_pyr[level], &flt_pyr[level]);
        let (w, h) = (ir.width(), ir.height());
        let mut weights = base.clone();
        weights.lcc_window = fit_window(base.lcc_window, w.min(h));
        let lab = label_pyr.as_ref().map(|(r, f)| (&r[level], &f[level]));
        let objective = Objective::new(ir, ifl, lab, &weights)?;

        let mut current = match field.take() {
            Some(coarse) => coarse.resized(w, h),
            None => DisplacementField::zeros(w, h),
        };
        let mut state = AdamState::new(2 * w * h, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)?;
        let mut best_field = current.clone();
        let mut initial = None;
        let mut best: Option<LossReport> = None;
        let mut best_history: Vec<f64> = Vec::new();
        let mut plateaued = false;
        let mut level_iters = 0;

        while level_iters < cfg.iters_per_level {
            let (report, grad) = objective.loss_and_grad(&current)?;
            if !report.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { level, iteration: level_iters });
            }
            initial.get_or_insert(report);
            if best.is_none_or(|b| report.total < b.total) {
                best = Some(report);
                best_field.as_mut_slice().copy_from_slice(current.as_slice());
            }
            let best_total = best.expect("set above").total;
            best_history.push(best_total);
            trace.push(TraceEntry {
                iter,
                level,
                total: report.total,
                sim: report.sim,
                smooth: report.smooth,
                seg: report.seg,
                best_total,
            });
            iter += 1;
            level_iters += 1;

            if let Some(&past) = best_history.len().checked_sub(cfg.plateau_window + 1).map(|i| &best_history[i]) {
                let gain = (past - best_total) / past.abs().max(f64::MIN_POSITIVE);
                if gain < cfg.plateau_tol {
                    plateaued = true;
                    break;
                }
            }
            adam_step(&mut state, current.as_mut_slice(), &grad)?;
        }
        // the last Adam step is only kept if it improved, which needs one more evaluation
        if !plateaued && level_iters == cfg.iters_per_level {
            let report = objective.loss(&current)?;
            if report.total.is_finite() && best.is_none_or(|b| report.total < b.total) {
                best = Some(report);
                best_field.as_mut_slice().copy_from_slice(current.as_slice());
            }
        }

        summaries.push(LevelSummary {
            level,
            width: w,
            height: h,
            iterations: level_iters,
            initial: initial.unwrap_or_else(|| objective.loss(&current).expect("validated objective")),
            best: best.unwrap_or_else(|| objective.loss(&best_field).expect("validated objective")),
            plateaued,
        });
        if level == 0 {
            converged = plateaued;
        }
        field = Some(best_field);
    }

    let field = field.expect("at least one level");
    let registered = warp_image(floating, &field)?;
    Ok(RegistrationResult { field, registered, loss_trace: trace, levels: summaries, converged, iterations_run: iter })
}

fn level_count(w: usize, h: usize, requested: usize) -> usize {
    let mut levels = 1;
    let (mut w, mut h) = (w, h);
    while levels < requested && w / 2 >= MIN_LEVEL_SIDE && h / 2 >= MIN_LEVEL_SIDE {
        w /= 2;
        h /= 2;
        levels += 1;
    }
    levels
}

/// Largest odd window not exceeding `side`, capped at `window`.
fn fit_window(window: usize, side: usize) -> usize {
    let cap = if side % 2 == 1 { side } else { side - 1 };
    window.min(cap).max(3)
}

fn soft_pyramid(m: &SoftLabelMap, levels: usize) -> Result<Vec<SoftLabelMap>> {
    let mut out = vec![m.clone()];
    while out.len() < levels {
        let next = out.last().expect("non-empty").downsample_half()?;
        out.push(next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_count_respects_minimum_side() {
        assert_eq!(level_count(128, 128, 3), 3);
        assert_eq!(level_count(128, 128, 4), 4);
        assert_eq!(level_count(20, 40, 5), 2);
        assert_eq!(level_count(8, 8, 3), 1);
    }

    #[test]
    fn window_fits_level() {
        assert_eq!(fit_window(9, 32), 9);
        assert_eq!(fit_window(9, 8), 7);
        assert_eq!(fit_window(9, 7), 7);
    }

    #[test]
    fn identity_pair_stays_at_zero() {
        let img = Image::from_fn(32, 32, |x, y| 0.5 + 0.4 * ((x as f64 * 0.4).sin() * (y as f64 * 0.3).cos()));
        let cfg = RegConfig { iters_per_level: 100, ..Default::default() };
        let res = register_pair(&img, &img, None, &cfg).unwrap();
        assert!(res.field.mean_magnitude() < 0.05);
        let fin = res.final_loss();
        assert!(fin.total <= res.levels.last().unwrap().initial.total);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let a = Image::constant(16, 16, 0.2);
        let b = Image::constant(16, 8, 0.2);
        assert!(matches!(register_pair(&a, &b, None, &RegConfig::default()), Err(Error::DimensionMismatch(_))));
        let bad = RegConfig { beta1: 1.0, ..Default::default() };
        assert!(register_pair(&a, &a, None, &bad).is_err());
    }

    #[test]
    fn best_total_is_monotone_within_levels() {
        let a = Image::from_fn(32, 32, |x, y| 0.5 + 0.4 * ((x as f64 * 0.5).sin() * (y as f64 * 0.4).cos()));
        let b = Image::from_fn(32, 32, |x, y| 0.5 + 0.4 * (((x as f64 + 1.5) * 0.5).sin() * (y as f64 * 0.4).cos()));
        let cfg = RegConfig { iters_per_level: 200, lr: 0.05, ..Default::default() };
        let res = register_pair(&a, &b, None, &cfg).unwrap();
        for pair in res.loss_trace.windows(2) {
            if pair[0].level == pair[1].level {
                assert!(pair[1].best_total <= pair[0].best_total);
            }
        }
        for s in &res.levels {
            assert!(s.best.total <= s.initial.total);
        }
    }
}
