//! On-board human detection: 3×3 median filter, hot-pixel activation gate,
//! HOG descriptor and SVM classifier, plus training and evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seeds::{derive_seed, rng_for};
use crate::thermal::{
    render_frame, subject, LabeledImage, Placement, SceneSpec, SubjectKind, ThermalImage,
    ThermalSubject, HUMAN_BAND_C, OBJECT_BAND_C, SIZE, TRAIN_SUBJECTS,
};
use crate::{Error, Result};

/// Linear 4×4 model trained on the synthetic training set with hard-negative
/// mining; regenerate with `biobot train`.
pub const SHIPPED_DETECTOR: &str = include_str!("../data/detector.txt");

pub fn shipped_detector() -> Detector {
    Detector::from_text(SHIPPED_DETECTOR).expect("shipped detector parses")
}

/// The gate opens when strictly more in-band pixels than this are present.
pub const GATE_MIN_PIXELS: usize = 15;
pub const HOG_BINS: usize = 9;
pub const CELL_SIZES: [usize; 3] = [2, 4, 8];
/// Added (squared) under the block norm so flat blocks stay near zero
/// instead of amplifying sensor noise.
pub const HOG_EPSILON: f64 = 0.1;
pub const DEFAULT_C: f64 = 1.0;
pub const LINEAR_EPOCHS: usize = 40;
pub const KKT_TOLERANCE: f64 = 1e-3;

pub fn median3x3(img: &ThermalImage) -> ThermalImage {
    let mut out = img.clone();
    let clamp = |i: isize| i.clamp(0, SIZE as isize - 1) as usize;
    let mut window = [0.0; 9];
    for r in 0..SIZE {
        for c in 0..SIZE {
            let mut k = 0;
            for dr in -1..=1 {
                for dc in -1..=1 {
                    window[k] = img.get(clamp(r as isize + dr), clamp(c as isize + dc));
                    k += 1;
                }
            }
            window.sort_unstable_by(f64::total_cmp);
            out.set(r, c, window[4]);
        }
    }
    out
}

/// Returns (active, in-band pixel count).
pub fn hot_pixel_gate(img: &ThermalImage) -> (bool, usize) {
    let n = img.count_in(HUMAN_BAND_C.0, HUMAN_BAND_C.1);
    (n > GATE_MIN_PIXELS, n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HogDescriptor {
    pub cell_size: usize,
    pub features: Vec<f64>,
}

pub fn hog_len(cell_size: usize) -> Result<usize> {
    if !CELL_SIZES.contains(&cell_size) {
        return Err(Error::UnsupportedCellSize(cell_size));
    }
    let blocks = SIZE / cell_size - 1;
    Ok(blocks * blocks * 4 * HOG_BINS)
}

/// Dalal–Triggs style descriptor on a 32×32 grid: centred-difference
/// gradients, 9 unsigned bins with linear vote splitting, 2×2-cell blocks at
/// stride one, each block L2-normalised.
pub fn hog(pixels: &[f64], cell_size: usize) -> Result<HogDescriptor> {
    let len = hog_len(cell_size)?;
    if pixels.len() != SIZE * SIZE {
        return Err(Error::DimensionMismatch {
            expected: SIZE * SIZE,
            got: pixels.len(),
        });
    }
    let at = |r: isize, c: isize| {
        let r = r.clamp(0, SIZE as isize - 1) as usize;
        let c = c.clamp(0, SIZE as isize - 1) as usize;
        pixels[r * SIZE + c]
    };
    let cells = SIZE / cell_size;
    let mut hist = vec![0.0; cells * cells * HOG_BINS];
    let bin_width = 180.0 / HOG_BINS as f64;
    for r in 0..SIZE as isize {
        for c in 0..SIZE as isize {
            let gx = at(r, c + 1) - at(r, c - 1);
            let gy = at(r + 1, c) - at(r - 1, c);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let ang = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            // bin centres sit at 10°, 30°, ..., 170°
            let pos = ang / bin_width - 0.5;
            let lo = pos.floor();
            let frac = pos - lo;
            let b0 = (lo as isize).rem_euclid(HOG_BINS as isize) as usize;
            let b1 = (b0 + 1) % HOG_BINS;
            let cell = (r as usize / cell_size) * cells + c as usize / cell_size;
            hist[cell * HOG_BINS + b0] += (1.0 - frac) * mag;
            hist[cell * HOG_BINS + b1] += frac * mag;
        }
    }
    let mut features = Vec::with_capacity(len);
    for br in 0..cells - 1 {
        for bc in 0..cells - 1 {
            let start = features.len();
            for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let cell = (br + dr) * cells + bc + dc;
                features.extend_from_slice(&hist[cell * HOG_BINS..(cell + 1) * HOG_BINS]);
            }
            let block = &mut features[start..];
            let norm =
                (block.iter().map(|v| v * v).sum::<f64>() + HOG_EPSILON * HOG_EPSILON).sqrt();
            block.iter_mut().for_each(|v| *v /= norm);
        }
    }
    debug_assert_eq!(features.len(), len);
    Ok(HogDescriptor {
        cell_size,
        features,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kernel {
    Linear,
    Poly(u32),
}

impl Kernel {
    pub fn name(&self) -> String {
        match self {
            Kernel::Linear => "linear".into(),
            Kernel::Poly(2) => "quadratic".into(),
            Kernel::Poly(3) => "cubic".into(),
            Kernel::Poly(d) => format!("poly{d}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Kernel::Linear),
            "quadratic" | "poly2" => Ok(Kernel::Poly(2)),
            "cubic" | "poly3" => Ok(Kernel::Poly(3)),
            other => other
                .strip_prefix("poly")
                .and_then(|d| d.parse().ok())
                .filter(|d| *d >= 1)
                .map(Kernel::Poly)
                .ok_or_else(|| Error::InvalidParameter {
                    key: "kernel".into(),
                    reason: format!("unknown kernel `{other}`"),
                }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SvmPayload {
    Linear {
        weights: Vec<f64>,
    },
    /// Support vectors with their signed dual coefficients αᵢyᵢ.
    Poly {
        support: Vec<Vec<f64>>,
        coef: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub c: f64,
    /// Loss weight of non-human examples relative to human ones.
    pub negative_weight: f64,
    pub bias: f64,
    pub dim: usize,
    pub payload: SvmPayload,
    /// Primal objective for linear models (one entry per epoch), dual
    /// objective at convergence for kernel models.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Human,
    NonHuman,
    NoCandidate,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Human => "human",
            Label::NonHuman => "nonhuman",
            Label::NoCandidate => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        [Label::Human, Label::NonHuman, Label::NoCandidate]
            .into_iter()
            .find(|l| l.as_str() == s)
    }
}

/// Dot product that tallies one multiply-add per element.
fn dot_counted(a: &[f64], b: &[f64], macs: &mut u64) -> f64 {
    *macs += a.len() as u64;
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn poly(k: f64, degree: u32) -> f64 {
    (1.0 + k).powi(degree as i32)
}

impl SvmModel {
    /// Score and label plus the number of multiply-adds spent.
    pub fn classify_counted(&self, x: &[f64]) -> Result<(f64, Label, u64)> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut macs = 0;
        let score = match (&self.payload, self.kernel) {
            (SvmPayload::Linear { weights }, _) => {
                let s = dot_counted(weights, x, &mut macs) + self.bias;
                macs += 1;
                s
            }
            (SvmPayload::Poly { support, coef }, Kernel::Poly(d)) => {
                let mut s = self.bias;
                for (sv, a) in support.iter().zip(coef) {
                    let k = dot_counted(sv, x, &mut macs);
                    // (1 + k)^d: d - 1 multiplies, then one multiply-add into the sum
                    macs += d as u64;
                    s += a * poly(k, d);
                }
                s
            }
            (SvmPayload::Poly { .. }, Kernel::Linear) => unreachable!("kernel/payload mismatch"),
        };
        let label = if score > 0.0 {
            Label::Human
        } else {
            Label::NonHuman
        };
        Ok((score, label, macs))
    }

    pub fn classify(&self, x: &[f64]) -> Result<(f64, Label)> {
        self.classify_counted(x).map(|(s, l, _)| (s, l))
    }

    fn score_unchecked(&self, x: &[f64]) -> f64 {
        self.classify(x).expect("dimension checked at training").0
    }
}

/// Training settings shared by every kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmConfig {
    pub kernel: Kernel,
    pub c: f64,
    /// Multiplies C for non-human examples; above one it trades recall for
    /// fewer false alarms.
    pub negative_weight: f64,
    pub seed: u64,
}

impl SvmConfig {
    pub fn new(kernel: Kernel, c: f64) -> Self {
        SvmConfig {
            kernel,
            c,
            negative_weight: 1.0,
            seed: 0,
        }
    }

    fn weight(&self, human: bool) -> f64 {
        if human {
            1.0
        } else {
            self.negative_weight
        }
    }
}

fn validate_training(xs: &[Vec<f64>], ys: &[bool], cfg: &SvmConfig) -> Result<usize> {
    if xs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    for (key, v) in [("C", cfg.c), ("negative_weight", cfg.negative_weight)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter {
                key: key.into(),
                reason: format!("{v} must be positive"),
            });
        }
    }
    if ys.iter().all(|&y| y) || ys.iter().all(|&y| !y) {
        return Err(Error::SingleClass);
    }
    let dim = xs[0].len();
    if let Some(x) = xs.iter().find(|x| x.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: x.len(),
        });
    }
    Ok(dim)
}

/// Regularised hinge loss λ/2(‖w‖² + b²) + weighted mean hinge, λ = 1/(C·n).
pub fn linear_objective(w: &[f64], b: f64, xs: &[Vec<f64>], ys: &[bool], cfg: &SvmConfig) -> f64 {
    let n = xs.len() as f64;
    let lambda = 1.0 / (cfg.c * n);
    let hinge: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| {
            let s = if y { 1.0 } else { -1.0 };
            cfg.weight(y) * (1.0 - s * (dot(w, x) + b)).max(0.0)
        })
        .sum();
    0.5 * lambda * (dot(w, w) + b * b) + hinge / n
}

pub fn train_svm(xs: &[Vec<f64>], ys: &[bool], cfg: &SvmConfig) -> Result<SvmModel> {
    let dim = validate_training(xs, ys, cfg)?;
    Ok(match cfg.kernel {
        Kernel::Linear => train_linear(xs, ys, cfg, dim),
        Kernel::Poly(d) => train_poly(xs, ys, cfg, d, dim),
    })
}

/// Pegasos with the bias folded in as a regularised constant feature; the
/// model is the running average of all iterates.
fn train_linear(xs: &[Vec<f64>], ys: &[bool], cfg: &SvmConfig, dim: usize) -> SvmModel {
    let n = xs.len();
    let lambda = 1.0 / (cfg.c * n as f64);
    let radius = (cfg.negative_weight.max(1.0) / lambda).sqrt();
    let mut rng = rng_for(cfg.seed, 0x5e9a);
    let mut order: Vec<usize> = (0..n).collect();
    let (mut w, mut b) = (vec![0.0; dim], 0.0);
    let (mut avg_w, mut avg_b) = (vec![0.0; dim], 0.0);
    let mut objective = Vec::with_capacity(LINEAR_EPOCHS);
    let mut t = 0usize;
    for _ in 0..LINEAR_EPOCHS {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let y = if ys[i] { 1.0 } else { -1.0 };
            let margin = y * (dot(&w, &xs[i]) + b);
            let shrink = 1.0 - eta * lambda;
            w.iter_mut().for_each(|v| *v *= shrink);
            b *= shrink;
            if margin < 1.0 {
                let step = eta * y * cfg.weight(ys[i]);
                for (v, x) in w.iter_mut().zip(&xs[i]) {
                    *v += step * x;
                }
                b += step;
            }
            let norm = (dot(&w, &w) + b * b).sqrt();
            if norm > radius {
                let k = radius / norm;
                w.iter_mut().for_each(|v| *v *= k);
                b *= k;
            }
            let k = 1.0 / t as f64;
            for (a, v) in avg_w.iter_mut().zip(&w) {
                *a += (v - *a) * k;
            }
            avg_b += (b - avg_b) * k;
        }
        objective.push(linear_objective(&avg_w, avg_b, xs, ys, cfg));
    }
    SvmModel {
        kernel: Kernel::Linear,
        c: cfg.c,
        negative_weight: cfg.negative_weight,
        bias: avg_b,
        dim,
        payload: SvmPayload::Linear { weights: avg_w },
        objective,
        iterations: t,
    }
}

/// SMO on the dual with maximal-violating-pair selection, stopping when
/// the KKT gap drops below [`KKT_TOLERANCE`].
fn train_poly(xs: &[Vec<f64>], ys: &[bool], cfg: &SvmConfig, degree: u32, dim: usize) -> SvmModel {
    let n = xs.len();
    let y: Vec<f64> = ys.iter().map(|&v| if v { 1.0 } else { -1.0 }).collect();
    let bound: Vec<f64> = ys.iter().map(|&v| cfg.c * cfg.weight(v)).collect();
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = y[i] * y[j] * poly(dot(&xs[i], &xs[j]), degree);
            q[i * n + j] = v;
            q[j * n + i] = v;
        }
    }
    let (alpha, grad, iterations) = smo(&q, &y, &bound);
    let bias = smo_bias(&alpha, &grad, &y, &bound);
    let dual = alpha.iter().sum::<f64>()
        - 0.5
            * alpha
                .iter()
                .zip(&grad)
                .map(|(a, g)| a * (g + 1.0))
                .sum::<f64>();
    let (support, coef) = alpha
        .iter()
        .enumerate()
        .filter(|(_, a)| **a > 0.0)
        .map(|(i, a)| (xs[i].clone(), a * y[i]))
        .unzip();
    SvmModel {
        kernel: Kernel::Poly(degree),
        c: cfg.c,
        negative_weight: cfg.negative_weight,
        bias,
        dim,
        payload: SvmPayload::Poly { support, coef },
        objective: vec![dual],
        iterations,
    }
}

fn in_up(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a < c) || (y < 0.0 && a > 0.0)
}

fn in_low(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a > 0.0) || (y < 0.0 && a < c)
}

/// Minimises ½αᵀQα − Σα subject to 0 ≤ αᵢ ≤ Cᵢ, yᵀα = 0. Returns α, the
/// gradient Qα − 1 and the iteration count.
fn smo(q: &[f64], y: &[f64], bound: &[f64]) -> (Vec<f64>, Vec<f64>, usize) {
    const TAU: f64 = 1e-12;
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let max_iter = (100 * n).max(1_000_000);
    let mut iter = 0;
    while iter < max_iter {
        let (mut i, mut gmax) = (usize::MAX, f64::NEG_INFINITY);
        let (mut j, mut gmin) = (usize::MAX, f64::INFINITY);
        for t in 0..n {
            let v = -y[t] * grad[t];
            if in_up(y[t], alpha[t], bound[t]) && v > gmax {
                gmax = v;
                i = t;
            }
            if in_low(y[t], alpha[t], bound[t]) && v < gmin {
                gmin = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < KKT_TOLERANCE {
            break;
        }
        iter += 1;
        let (ci, cj) = (bound[i], bound[j]);
        let (qii, qjj, qij) = (q[i * n + i], q[j * n + j], q[i * n + j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (qii + qjj + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let quad = (qii + qjj - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q[t * n + i] * di + q[t * n + j] * dj;
        }
    }
    (alpha, grad, iter)
}

/// Bias from the free support vectors, or the midpoint of the feasible
/// interval when every multiplier sits at a bound.
fn smo_bias(alpha: &[f64], grad: &[f64], y: &[f64], bound: &[f64]) -> f64 {
    let (mut sum, mut free) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..y.len() {
        let yg = y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < bound[t] {
            sum += yg;
            free += 1;
        } else if (alpha[t] >= bound[t] && y[t] < 0.0) || (alpha[t] <= 0.0 && y[t] > 0.0) {
            ub = ub.min(yg);
        } else {
            lb = lb.max(yg);
        }
    }
    let rho = if free > 0 {
        sum / free as f64
    } else {
        (ub + lb) / 2.0
    };
    -rho
}

/// Largest KKT violation of a trained kernel model on its training set,
/// measured as the gap between the most violating up/low pair.
pub fn kkt_gap(model: &SvmModel, xs: &[Vec<f64>], ys: &[bool]) -> f64 {
    let (gmax, gmin) = xs.iter().zip(ys).fold(
        (f64::NEG_INFINITY, f64::INFINITY),
        |(gmax, gmin), (x, &label)| {
            let y = if label { 1.0 } else { -1.0 };
            let a = model.dual_coefficient(x) * y;
            let c = model.c * if label { 1.0 } else { model.negative_weight };
            // -y·∇ = y - f(x) + b with f the decision without bias
            let v = y - (model.score_unchecked(x) - model.bias);
            let (up, low) = (in_up(y, a, c), in_low(y, a, c));
            (
                if up { gmax.max(v) } else { gmax },
                if low { gmin.min(v) } else { gmin },
            )
        },
    );
    (gmax - gmin).max(0.0)
}

impl SvmModel {
    /// αᵢyᵢ for a training point (0 when it is not a support vector).
    fn dual_coefficient(&self, x: &[f64]) -> f64 {
        match &self.payload {
            SvmPayload::Poly { support, coef } => support
                .iter()
                .position(|sv| sv.as_slice() == x)
                .map_or(0.0, |i| coef[i]),
            SvmPayload::Linear { .. } => 0.0,
        }
    }

    pub fn support_count(&self) -> usize {
        match &self.payload {
            SvmPayload::Poly { support, .. } => support.len(),
            SvmPayload::Linear { .. } => 0,
        }
    }
}

/// The full pipeline: preprocessing constants, HOG cell size and classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub cell_size: usize,
    /// Temperature standardisation applied before gradients.
    pub temp_mean: f64,
    pub temp_std: f64,
    /// Multiplies the descriptor so its norm is at most one.
    pub feature_scale: f64,
    pub svm: SvmModel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionResult {
    pub gate_active: bool,
    pub hot_pixel_count: usize,
    pub score: Option<f64>,
    pub label: Label,
}

fn feature_scale(cell_size: usize) -> f64 {
    let blocks = SIZE / cell_size - 1;
    1.0 / blocks as f64
}

fn features(
    filtered: &ThermalImage,
    cell_size: usize,
    mean: f64,
    std: f64,
    scale: f64,
) -> Result<Vec<f64>> {
    let z: Vec<f64> = filtered.pixels().iter().map(|t| (t - mean) / std).collect();
    let mut f = hog(&z, cell_size)?.features;
    f.iter_mut().for_each(|v| *v *= scale);
    Ok(f)
}

impl Detector {
    pub fn features(&self, filtered: &ThermalImage) -> Result<Vec<f64>> {
        features(
            filtered,
            self.cell_size,
            self.temp_mean,
            self.temp_std,
            self.feature_scale,
        )
    }

    pub fn detect(&self, img: &ThermalImage) -> Result<DetectionResult> {
        let filtered = median3x3(img);
        let (active, count) = hot_pixel_gate(&filtered);
        if !active {
            return Ok(DetectionResult {
                gate_active: false,
                hot_pixel_count: count,
                score: None,
                label: Label::NoCandidate,
            });
        }
        let (score, label) = self.svm.classify(&self.features(&filtered)?)?;
        Ok(DetectionResult {
            gate_active: true,
            hot_pixel_count: count,
            score: Some(score),
            label,
        })
    }
}

/// Trains on the images whose filtered frame opens the gate; the rest never
/// reach the classifier at inference time.
pub fn train_detector(
    images: &[LabeledImage],
    cell_size: usize,
    cfg: &SvmConfig,
) -> Result<Detector> {
    hog_len(cell_size)?;
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let filtered: Vec<(ThermalImage, bool)> = images
        .iter()
        .map(|li| (median3x3(&li.image), li.human))
        .filter(|(img, _)| hot_pixel_gate(img).0)
        .collect();
    if filtered.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let count = (filtered.len() * SIZE * SIZE) as f64;
    let mean = filtered.iter().flat_map(|(i, _)| i.pixels()).sum::<f64>() / count;
    let var = filtered
        .iter()
        .flat_map(|(i, _)| i.pixels())
        .map(|t| (t - mean).powi(2))
        .sum::<f64>()
        / count;
    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
    let scale = feature_scale(cell_size);
    let xs = filtered
        .iter()
        .map(|(img, _)| features(img, cell_size, mean, std, scale))
        .collect::<Result<Vec<_>>>()?;
    let ys: Vec<bool> = filtered.iter().map(|(_, h)| *h).collect();
    let svm = train_svm(&xs, &ys, cfg)?;
    Ok(Detector {
        cell_size,
        temp_mean: mean,
        temp_std: std,
        feature_scale: scale,
        svm,
    })
}

/// Hard-negative mining: random off-axis views of non-human subjects are
/// rendered, the ones the current model calls Human join the training set
/// as negatives, and the model is retrained. Repeats for `rounds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiningConfig {
    pub rounds: usize,
    /// Views rendered per round.
    pub candidates: usize,
    /// Must all be hot objects.
    pub subjects: Vec<String>,
    pub distance_m: [f64; 2],
    /// Subject centre bearing, uniform within ± this.
    pub bearing_deg: f64,
    pub scale_jitter: f64,
    /// Uniform per-primitive temperature offset, ± °C.
    pub temp_jitter_c: f64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            rounds: 3,
            candidates: 8000,
            subjects: TRAIN_SUBJECTS
                .iter()
                .filter(|id| subject(id).is_some_and(|s| s.kind == SubjectKind::HotObject))
                .map(|s| s.to_string())
                .collect(),
            distance_m: [0.5, 2.0],
            bearing_deg: 50.0,
            scale_jitter: 0.2,
            temp_jitter_c: 3.0,
        }
    }
}

impl MiningConfig {
    pub fn disabled() -> Self {
        MiningConfig {
            rounds: 0,
            ..Self::default()
        }
    }
}

/// Per-round counts of mined negatives.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MiningReport {
    pub added: Vec<usize>,
}

fn mining_candidate(
    cfg: &MiningConfig,
    objects: &[ThermalSubject],
    base: u64,
    k: u64,
) -> Result<LabeledImage> {
    let mut rng = rng_for(base, k);
    let s = &objects[rng.random_range(0..objects.len())];
    let [lo, hi] = cfg.distance_m;
    let d = if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    };
    let b = if cfg.bearing_deg > 0.0 {
        rng.random_range(-cfg.bearing_deg..cfg.bearing_deg)
    } else {
        0.0
    };
    let scale = if cfg.scale_jitter > 0.0 {
        1.0 + rng.random_range(-cfg.scale_jitter..cfg.scale_jitter)
    } else {
        1.0
    };
    let mut v = s.scaled(scale);
    if cfg.temp_jitter_c > 0.0 {
        for p in &mut v.primitives {
            let t = p.temp_c + rng.random_range(-cfg.temp_jitter_c..cfg.temp_jitter_c);
            p.temp_c = t.clamp(OBJECT_BAND_C.0, OBJECT_BAND_C.1);
        }
    }
    let scene = SceneSpec::room(vec![Placement {
        subject: v,
        distance_m: d,
        lateral_cm: d * 100.0 * b.to_radians().tan(),
        vertical_cm: 0.0,
        rotation_deg: rng.random_range(0.0..360.0),
    }]);
    Ok(LabeledImage {
        image: render_frame(&scene, &mut rng)?,
        human: false,
        distance_m: d,
        subject_id: s.id.clone(),
    })
}

/// `train_detector` followed by `mining.rounds` rounds of hard-negative
/// mining.
pub fn train_detector_mined(
    images: &[LabeledImage],
    cell_size: usize,
    cfg: &SvmConfig,
    mining: &MiningConfig,
    seed: u64,
) -> Result<(Detector, MiningReport)> {
    let objects = mining
        .subjects
        .iter()
        .map(|id| match subject(id) {
            Some(s) if s.kind == SubjectKind::HotObject => Ok(s),
            _ => Err(Error::InvalidParameter {
                key: "mining.subjects".into(),
                reason: format!("`{id}` is not a known hot object"),
            }),
        })
        .collect::<Result<Vec<_>>>()?;
    let [lo, hi] = mining.distance_m;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::InvalidParameter {
            key: "mining.distance_m".into(),
            reason: format!("[{lo}, {hi}] is not a forward range"),
        });
    }
    let mut det = train_detector(images, cell_size, cfg)?;
    let mut report = MiningReport::default();
    if mining.rounds == 0 || mining.candidates == 0 {
        return Ok((det, report));
    }
    if objects.is_empty() {
        return Err(Error::InvalidParameter {
            key: "mining.subjects".into(),
            reason: "no subjects to mine".into(),
        });
    }
    let mut train = images.to_vec();
    for round in 0..mining.rounds {
        let base = derive_seed(seed, MINING_STREAM + round as u64);
        let mut added = 0;
        for k in 0..mining.candidates as u64 {
            let c = mining_candidate(mining, &objects, base, k)?;
            if det.detect(&c.image)?.label == Label::Human {
                train.push(c);
                added += 1;
            }
        }
        report.added.push(added);
        if added == 0 {
            break;
        }
        det = train_detector(&train, cell_size, cfg)?;
    }
    Ok((det, report))
}

const MINING_STREAM: u64 = 0x6d69_6e65;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceBin {
    pub distance_m: f64,
    pub humans: usize,
    pub detected: usize,
}

impl DistanceBin {
    pub fn recall(&self) -> f64 {
        if self.humans == 0 {
            f64::NAN
        } else {
            self.detected as f64 / self.humans as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub confusion: Confusion,
    pub accuracy: f64,
    /// Accuracy on human images (recall).
    pub human_accuracy: f64,
    /// Accuracy on non-human images (specificity).
    pub nonhuman_accuracy: f64,
    pub balanced_accuracy: f64,
    /// 0.1 m bins centred on 0.5 ... 1.5 m.
    pub recall_by_distance: Vec<DistanceBin>,
    /// subject id → (images, correct).
    pub per_subject: BTreeMap<String, (usize, usize)>,
    pub gate_active: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        f64::NAN
    } else {
        a as f64 / b as f64
    }
}

/// NoCandidate counts as a non-human prediction.
pub fn evaluate(detector: &Detector, images: &[LabeledImage]) -> Result<Metrics> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut cm = Confusion::default();
    let mut bins: Vec<DistanceBin> = (0..11)
        .map(|i| DistanceBin {
            distance_m: (5 + i) as f64 / 10.0,
            humans: 0,
            detected: 0,
        })
        .collect();
    let mut per_subject = BTreeMap::new();
    let mut gate_active = 0;
    for li in images {
        let r = detector.detect(&li.image)?;
        gate_active += r.gate_active as usize;
        let said_human = r.label == Label::Human;
        match (li.human, said_human) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fp += 1,
        }
        let e = per_subject.entry(li.subject_id.clone()).or_insert((0, 0));
        e.0 += 1;
        e.1 += (li.human == said_human) as usize;
        if li.human {
            let k = ((li.distance_m - 0.5) / 0.1).round();
            if (0.0..=10.0).contains(&k) && (li.distance_m - 0.5 - k * 0.1).abs() < 0.05 {
                let b = &mut bins[k as usize];
                b.humans += 1;
                b.detected += said_human as usize;
            }
        }
    }
    let human_accuracy = ratio(cm.tp, cm.tp + cm.fn_);
    let nonhuman_accuracy = ratio(cm.tn, cm.tn + cm.fp);
    Ok(Metrics {
        confusion: cm,
        accuracy: ratio(cm.tp + cm.tn, images.len()),
        human_accuracy,
        nonhuman_accuracy,
        balanced_accuracy: (human_accuracy + nonhuman_accuracy) / 2.0,
        recall_by_distance: bins,
        per_subject,
        gate_active,
    })
}

/// One row per cell size for a fixed kernel.
pub fn compare_cell_sizes(
    train: &[LabeledImage],
    validation: &[LabeledImage],
    cfg: &SvmConfig,
) -> Result<Vec<(usize, Metrics)>> {
    [8, 4, 2]
        .into_iter()
        .map(|cell| {
            let d = train_detector(train, cell, cfg)?;
            Ok((cell, evaluate(&d, validation)?))
        })
        .collect()
}

const MODEL_MAGIC: &str = "biobot-detector v1";

fn join(v: &[f64]) -> String {
    let mut s = String::with_capacity(v.len() * 20);
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        // shortest round-trip representation
        write!(s, "{x:?}").unwrap();
    }
    s
}

impl Detector {
    /// Plain-text model: `key value` header lines, then one payload line
    /// per weight vector or support vector.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let m = &self.svm;
        writeln!(s, "{MODEL_MAGIC}").unwrap();
        writeln!(s, "kernel {}", m.kernel.name()).unwrap();
        writeln!(s, "cell_size {}", self.cell_size).unwrap();
        writeln!(s, "c {:?}", m.c).unwrap();
        writeln!(s, "negative_weight {:?}", m.negative_weight).unwrap();
        writeln!(s, "feature_len {}", m.dim).unwrap();
        writeln!(s, "temp_mean {:?}", self.temp_mean).unwrap();
        writeln!(s, "temp_std {:?}", self.temp_std).unwrap();
        writeln!(s, "feature_scale {:?}", self.feature_scale).unwrap();
        writeln!(s, "bias {:?}", m.bias).unwrap();
        writeln!(s, "iterations {}", m.iterations).unwrap();
        writeln!(s, "objective {}", join(&m.objective)).unwrap();
        match &m.payload {
            SvmPayload::Linear { weights } => {
                writeln!(s, "weights").unwrap();
                writeln!(s, "{}", join(weights)).unwrap();
            }
            SvmPayload::Poly { support, coef } => {
                writeln!(s, "support {}", support.len()).unwrap();
                for (sv, a) in support.iter().zip(coef) {
                    writeln!(s, "{a:?},{}", join(sv)).unwrap();
                }
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let err = |line: usize, m: String| Error::Parse {
            line: line + 1,
            message: m,
        };
        let (n, first) = lines
            .next()
            .ok_or_else(|| err(0, "empty model file".into()))?;
        if first.trim() != MODEL_MAGIC {
            return Err(err(n, format!("expected `{MODEL_MAGIC}`")));
        }
        let mut header: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        let mut payload_kind = None;
        for (n, line) in lines.by_ref() {
            let (k, v) = line.split_once(' ').unwrap_or((line.trim(), ""));
            if k == "weights" || k == "support" {
                payload_kind = Some((n, k, v.trim()));
                break;
            }
            header.insert(k, (n, v.trim()));
        }
        let get = |k: &str| {
            header
                .get(k)
                .copied()
                .ok_or_else(|| err(0, format!("missing `{k}`")))
        };
        let num = |k: &str| -> Result<f64> {
            let (n, v) = get(k)?;
            v.parse().map_err(|_| err(n, format!("bad `{k}`")))
        };
        let floats = |n: usize, v: &str| -> Result<Vec<f64>> {
            if v.is_empty() {
                return Ok(vec![]);
            }
            v.split(',')
                .map(|x| {
                    x.trim()
                        .parse()
                        .map_err(|_| err(n, format!("bad number {x:?}")))
                })
                .collect()
        };
        let kernel = Kernel::parse(get("kernel")?.1)?;
        let cell_size = num("cell_size")? as usize;
        let dim = num("feature_len")? as usize;
        if hog_len(cell_size)? != dim {
            return Err(Error::DimensionMismatch {
                expected: hog_len(cell_size)?,
                got: dim,
            });
        }
        let (on, ov) = get("objective")?;
        let objective = floats(on, ov)?;
        let (pn, kind, count) = payload_kind.ok_or_else(|| err(0, "missing payload".into()))?;
        let payload = if kind == "weights" {
            let (n, l) = lines
                .next()
                .ok_or_else(|| err(pn, "missing weights".into()))?;
            let weights = floats(n, l)?;
            if weights.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: weights.len(),
                });
            }
            SvmPayload::Linear { weights }
        } else {
            let k: usize = count
                .parse()
                .map_err(|_| err(pn, "bad support count".into()))?;
            let (mut support, mut coef) = (Vec::with_capacity(k), Vec::with_capacity(k));
            for _ in 0..k {
                let (n, l) = lines
                    .next()
                    .ok_or_else(|| err(pn, "truncated support vectors".into()))?;
                let mut v = floats(n, l)?;
                if v.len() != dim + 1 {
                    return Err(Error::DimensionMismatch {
                        expected: dim + 1,
                        got: v.len(),
                    });
                }
                coef.push(v.remove(0));
                support.push(v);
            }
            SvmPayload::Poly { support, coef }
        };
        if matches!(
            (&payload, kernel),
            (SvmPayload::Linear { .. }, Kernel::Poly(_))
                | (SvmPayload::Poly { .. }, Kernel::Linear)
        ) {
            return Err(err(pn, "payload does not match kernel".into()));
        }
        Ok(Detector {
            cell_size,
            temp_mean: num("temp_mean")?,
            temp_std: num("temp_std")?,
            feature_scale: num("feature_scale")?,
            svm: SvmModel {
                kernel,
                c: num("c")?,
                negative_weight: num("negative_weight")?,
                bias: num("bias")?,
                dim,
                payload,
                objective,
                iterations: num("iterations")? as usize,
            },
        })
    }
}
