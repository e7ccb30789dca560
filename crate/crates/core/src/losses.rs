//! Registration objective and its analytic gradient with respect to the
//! displacement field.
//!
//! `total = sim + lambda1 * smooth + lambda2 * seg`, where `sim` compares the
//! reference with the warped floating image (MSE, windowed squared
//! correlation, or their sum), `smooth` is the diffusion penalty on forward
//! differences of `u`, and `seg` is the MSE between the reference soft label
//! map and the warped floating one.

use serde::{Deserialize, Serialize};

use crate::clustering::SoftLabelMap;
use crate::error::{Error, Result};
use crate::imaging::{check_same, Image};
use crate::warp::{samples, warp_soft_labels, DisplacementField};

/// Windows whose intensity variance falls below this contribute no
/// correlation.
pub const LCC_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    Mse,
    Lcc,
    MsePlusLcc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub sim_mode: SimMode,
    pub lcc_window: usize,
    /// Inside the objective, average the diffusion sum over pixels, both axes
    /// and both components (divide by `4N`) instead of using the raw sum.
    pub smooth_mean: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 0.95, lambda2: 1.05, sim_mode: SimMode::MsePlusLcc, lcc_window: 9, smooth_mean: true }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::InvalidArgument("loss weights must be non-negative".into()));
        }
        if self.lcc_window < 3 || self.lcc_window.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("lcc_window must be odd and >= 3, got {}", self.lcc_window)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub sim: f64,
    pub smooth: f64,
    pub seg: f64,
}

impl LossReport {
    pub fn compose(sim: f64, smooth: f64, seg: f64, w: &LossWeights) -> Self {
        Self { total: sim + w.lambda1 * smooth + w.lambda2 * seg, sim, smooth, seg }
    }
}

/// Factor applied to the diffusion sum when [`LossWeights::smooth_mean`] is set.
pub fn smooth_mean_scale(pixels: usize) -> f64 {
    1.0 / (4 * pixels) as f64
}

/// Mean squared intensity difference.
pub fn loss_mse(a: &Image, b: &Image) -> Result<f64> {
    check_same(a, b)?;
    let n = a.len() as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// `1 - mean CC²` over every window that fits inside the image.
pub fn loss_lcc(a: &Image, b: &Image, window: usize) -> Result<f64> {
    check_same(a, b)?;
    Ok(lcc(a, b, window, false)?.0)
}

/// Sum of squared forward differences of both components; positions without
/// a forward neighbour contribute nothing.
pub fn loss_smooth(field: &DisplacementField) -> Result<f64> {
    let (w, h) = (field.width(), field.height());
    if w < 2 || h < 2 {
        return Err(Error::FieldTooSmall { width: w, height: h });
    }
    let u = field.as_slice();
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = 2 * (y * w + x);
            for c in 0..2 {
                if x + 1 < w {
                    let d = u[i + 2 + c] - u[i + c];
                    sum += d * d;
                }
                if y + 1 < h {
                    let d = u[i + 2 * w + c] - u[i + c];
                    sum += d * d;
                }
            }
        }
    }
    Ok(sum)
}

/// Mean over pixels and classes of `(M_ref - warp(M_flt))²`.
pub fn loss_seg(m_ref: &SoftLabelMap, m_flt: &SoftLabelMap, field: &DisplacementField) -> Result<f64> {
    check_labels(m_ref, m_flt)?;
    field.check_dims(m_ref.width(), m_ref.height())?;
    let warped = warp_soft_labels(m_flt, field)?;
    let n = (m_ref.width() * m_ref.height() * m_ref.classes()) as f64;
    let mut sum = 0.0;
    for (r, o) in m_ref.planes().iter().zip(warped.planes()) {
        sum += r.iter().zip(o).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(sum / n)
}

fn check_labels(a: &SoftLabelMap, b: &SoftLabelMap) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::DimensionMismatch(format!(
            "label maps {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if a.classes() != b.classes() {
        return Err(Error::ClassCountMismatch(a.classes(), b.classes()));
    }
    Ok(())
}

/// Reference/floating images plus optional soft label maps for one
/// resolution level.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub reference: &'a Image,
    pub floating: &'a Image,
    pub labels: Option<(&'a SoftLabelMap, &'a SoftLabelMap)>,
    pub weights: &'a LossWeights,
}

impl<'a> Objective<'a> {
    pub fn new(
        reference: &'a Image,
        floating: &'a Image,
        labels: Option<(&'a SoftLabelMap, &'a SoftLabelMap)>,
        weights: &'a LossWeights,
    ) -> Result<Self> {
        weights.validate()?;
        check_same(reference, floating)?;
        if let Some((r, f)) = labels {
            check_labels(r, f)?;
            if r.width() != reference.width() || r.height() != reference.height() {
                return Err(Error::DimensionMismatch("label maps do not match the images".into()));
            }
        }
        Ok(Self { reference, floating, labels, weights })
    }

    pub fn loss(&self, field: &DisplacementField) -> Result<LossReport> {
        Ok(self.evaluate(field, false)?.0)
    }

    /// Loss and gradient (interleaved like the field).
    pub fn loss_and_grad(&self, field: &DisplacementField) -> Result<(LossReport, Vec<f64>)> {
        let (report, grad) = self.evaluate(field, true)?;
        Ok((report, grad.expect("requested")))
    }

    fn evaluate(&self, field: &DisplacementField, want_grad: bool) -> Result<(LossReport, Option<Vec<f64>>)> {
        let (w, h) = (self.reference.width(), self.reference.height());
        field.check_dims(w, h)?;
        let n = w * h;
        let wts = self.weights;
        let stencils = samples(field);
        let warped: Vec<f64> = stencils.iter().map(|s| s.value(self.floating.data()).clamp(0.0, 1.0)).collect();
        let warped_img = Image::from_raw(w, h, warped);

        // dL/d(warped intensity), accumulated over the similarity terms
        let mut d_img = if want_grad { vec![0.0; n] } else { Vec::new() };
        let mut sim = 0.0;
        if matches!(wts.sim_mode, SimMode::Mse | SimMode::MsePlusLcc) {
            let a = self.reference.data();
            let b = warped_img.data();
            sim += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64;
            if want_grad {
                let scale = -2.0 / n as f64;
                for ((g, x), y) in d_img.iter_mut().zip(a).zip(b) {
                    *g += scale * (x - y);
                }
            }
        }
        if matches!(wts.sim_mode, SimMode::Lcc | SimMode::MsePlusLcc) {
            let (l, g) = lcc(self.reference, &warped_img, wts.lcc_window, want_grad)?;
            sim += l;
            if let Some(g) = g {
                d_img.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }

        let mut grad = if want_grad { vec![0.0; 2 * n] } else { Vec::new() };
        if want_grad {
            for (p, s) in stencils.iter().enumerate() {
                let j = s.grad(self.floating.data());
                grad[2 * p] = d_img[p] * j[0];
                grad[2 * p + 1] = d_img[p] * j[1];
            }
        }

        let smooth_scale = if wts.smooth_mean { smooth_mean_scale(n) } else { 1.0 };
        let smooth = loss_smooth(field)? * smooth_scale;
        if want_grad && wts.lambda1 != 0.0 {
            smooth_grad(field, 2.0 * wts.lambda1 * smooth_scale, &mut grad);
        }

        let mut seg = 0.0;
        if let (Some((m_ref, m_flt)), true) = (self.labels, wts.lambda2 != 0.0) {
            seg = seg_term(m_ref, m_flt, &stencils, want_grad.then_some((wts.lambda2, &mut grad)));
        }

        let report = LossReport::compose(sim, smooth, seg, wts);
        Ok((report, want_grad.then_some(grad)))
    }
}

/// Adds `scale * (adjoint of forward differences applied to the differences)`.
fn smooth_grad(field: &DisplacementField, scale: f64, grad: &mut [f64]) {
    let (w, h) = (field.width(), field.height());
    let u = field.as_slice();
    for y in 0..h {
        for x in 0..w {
            let i = 2 * (y * w + x);
            for c in 0..2 {
                if x + 1 < w {
                    let d = scale * (u[i + 2 + c] - u[i + c]);
                    grad[i + 2 + c] += d;
                    grad[i + c] -= d;
                }
                if y + 1 < h {
                    let d = scale * (u[i + 2 * w + c] - u[i + c]);
                    grad[i + 2 * w + c] += d;
                    grad[i + c] -= d;
                }
            }
        }
    }
}

/// Segmentation MSE with per-pixel renormalization; optionally adds
/// `lambda2 * dL/du` into `grad`.
fn seg_term(
    m_ref: &SoftLabelMap,
    m_flt: &SoftLabelMap,
    stencils: &[crate::warp::Sample],
    grad: Option<(f64, &mut Vec<f64>)>,
) -> f64 {
    let k = m_ref.classes();
    let n = stencils.len();
    let norm = 1.0 / (n * k) as f64;
    let mut sum = 0.0;
    let mut vals = vec![0.0; k];
    let mut dvals = vec![[0.0; 2]; k];
    let mut grad = grad;
    for (p, s) in stencils.iter().enumerate() {
        let mut total = 0.0;
        for j in 0..k {
            vals[j] = s.value(m_flt.plane(j));
            total += vals[j];
        }
        if total <= 0.0 {
            continue;
        }
        let inv = 1.0 / total;
        // g_j = dL/dO_j, and sum_j g_j O_j for the renormalization term
        let mut g_dot_o = 0.0;
        for j in 0..k {
            let o = vals[j] * inv;
            let r = m_ref.plane(j)[p];
            sum += (r - o) * (r - o);
            let g = -2.0 * norm * (r - o);
            g_dot_o += g * o;
            vals[j] = g;
        }
        if let Some((lambda2, out)) = grad.as_mut() {
            for j in 0..k {
                dvals[j] = s.grad(m_flt.plane(j));
            }
            let mut gx = 0.0;
            let mut gy = 0.0;
            for j in 0..k {
                let c = (vals[j] - g_dot_o) * inv;
                gx += c * dvals[j][0];
                gy += c * dvals[j][1];
            }
            out[2 * p] += *lambda2 * gx;
            out[2 * p + 1] += *lambda2 * gy;
        }
    }
    sum * norm
}

/// Composite loss for one pair.
pub fn loss_total(
    ir: &Image,
    iflt: &Image,
    m_ref: &SoftLabelMap,
    m_flt: &SoftLabelMap,
    field: &DisplacementField,
    w: &LossWeights,
) -> Result<LossReport> {
    Objective::new(ir, iflt, Some((m_ref, m_flt)), w)?.loss(field)
}

/// Analytic gradient of [`loss_total`], interleaved `(dL/dux, dL/duy)`.
pub fn grad_total(
    ir: &Image,
    iflt: &Image,
    m_ref: &SoftLabelMap,
    m_flt: &SoftLabelMap,
    field: &DisplacementField,
    w: &LossWeights,
) -> Result<Vec<f64>> {
    Ok(Objective::new(ir, iflt, Some((m_ref, m_flt)), w)?.loss_and_grad(field)?.1)
}

/// Windowed squared correlation. Returns the loss and, when asked, the
/// derivative with respect to each pixel of `b`.
fn lcc(a: &Image, b: &Image, window: usize, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    let (w, h) = (a.width(), a.height());
    if window > w.min(h) {
        return Err(Error::WindowTooLarge { window, side: w.min(h) });
    }
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("lcc window must be odd, got {window}")));
    }
    let r = window / 2;
    let nw = (window * window) as f64;
    let (av, bv) = (a.data(), b.data());
    let sa = box_sum(av, w, h, r);
    let sb = box_sum(bv, w, h, r);
    let saa = box_sum(&av.iter().map(|v| v * v).collect::<Vec<_>>(), w, h, r);
    let sbb = box_sum(&bv.iter().map(|v| v * v).collect::<Vec<_>>(), w, h, r);
    let sab = box_sum(&av.iter().zip(bv).map(|(x, y)| x * y).collect::<Vec<_>>(), w, h, r);

    let centers = ((w - 2 * r) * (h - 2 * r)) as f64;
    let mut cc_sum = 0.0;
    let n = w * h;
    let (mut ca, mut cam, mut cb, mut cbm) = if want_grad {
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n])
    } else {
        Default::default()
    };
    for y in r..h - r {
        for x in r..w - r {
            let i = y * w + x;
            let cross = sab[i] - sa[i] * sb[i] / nw;
            let va = saa[i] - sa[i] * sa[i] / nw;
            let vb = sbb[i] - sb[i] * sb[i] / nw;
            if va / nw < LCC_EPS || vb / nw < LCC_EPS {
                continue;
            }
            let vv = va * vb;
            cc_sum += cross * cross / vv;
            if want_grad {
                let ai = cross / vv;
                let bi = cross * cross / (vv * vb);
                ca[i] = ai;
                cam[i] = ai * sa[i] / nw;
                cb[i] = bi;
                cbm[i] = bi * sb[i] / nw;
            }
        }
    }
    let loss = 1.0 - cc_sum / centers;
    if !want_grad {
        return Ok((loss, None));
    }
    let (ba, bam, bb, bbm) = (box_sum(&ca, w, h, r), box_sum(&cam, w, h, r), box_sum(&cb, w, h, r), box_sum(&cbm, w, h, r));
    let scale = -2.0 / centers;
    let grad = (0..n)
        .map(|q| scale * (av[q] * ba[q] - bam[q] - bv[q] * bb[q] + bbm[q]))
        .collect();
    Ok((loss, Some(grad)))
}

/// Sum over the `(2r+1)²` window centred on each pixel, clipped at the
/// borders. Each sum is evaluated afresh, without running updates.
fn box_sum(src: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let mut rows = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            rows[y * w + x] = row[lo..=hi].iter().sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            let mut acc = 0.0;
            for yy in lo..=hi {
                acc += rows[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}
