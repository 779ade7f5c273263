//! Synthetic 32×32 thermopile frames: subjects are flat temperature
//! silhouettes seen through a 90° pinhole camera, plus sensor noise.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::seeds::rng_for;
use crate::{Error, Result};

pub const SIZE: usize = 32;
pub const FOV_DEG: f64 = 90.0;
pub const DEG_PER_PIXEL: f64 = FOV_DEG / SIZE as f64;
/// Surface temperatures a person shows to the sensor, °C.
pub const HUMAN_BAND_C: (f64, f64) = (28.0, 38.0);
/// Surface temperatures allowed for hot objects, °C.
pub const OBJECT_BAND_C: (f64, f64) = (30.0, 45.0);
const SUPERSAMPLE: usize = 4;
const SALT_C: f64 = 50.0;
const PEPPER_C: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CaptureMeta {
    pub distance_m: Option<f64>,
    pub subject_id: String,
    pub t_s: f64,
}

/// Row-major temperatures; row 0 is the top of the field of view.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalImage {
    pixels: Vec<f64>,
    pub meta: CaptureMeta,
}

impl ThermalImage {
    pub fn filled(t: f64) -> Self {
        ThermalImage {
            pixels: vec![t; SIZE * SIZE],
            meta: CaptureMeta::default(),
        }
    }

    pub fn from_pixels(pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != SIZE * SIZE {
            return Err(Error::DimensionMismatch {
                expected: SIZE * SIZE,
                got: pixels.len(),
            });
        }
        if let Some(i) = pixels.iter().position(|t| !t.is_finite()) {
            return Err(Error::Parse {
                line: i / SIZE + 1,
                message: "non-finite temperature".into(),
            });
        }
        Ok(ThermalImage {
            pixels,
            meta: CaptureMeta::default(),
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * SIZE + col]
    }

    pub fn set(&mut self, row: usize, col: usize, t: f64) {
        self.pixels[row * SIZE + col] = t;
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ThermalImage {
        ThermalImage {
            pixels: self.pixels.iter().map(|&t| f(t)).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Pixels with `lo <= T <= hi`.
    pub fn count_in(&self, lo: f64, hi: f64) -> usize {
        self.pixels.iter().filter(|&&t| t >= lo && t <= hi).count()
    }

    /// 32 lines of 32 comma-separated temperatures.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(SIZE * SIZE * 7);
        for row in self.pixels.chunks(SIZE) {
            for (i, t) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write!(out, "{t:.3}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Inverse of [`to_text`](Self::to_text). Blank lines and `#` comment
    /// lines are skipped so files can carry a provenance header.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut pixels = Vec::with_capacity(SIZE * SIZE);
        let mut rows = 0;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let before = pixels.len();
            for field in line.split(',') {
                let t: f64 = field.trim().parse().map_err(|_| Error::Parse {
                    line: n + 1,
                    message: format!("not a temperature: {field:?}"),
                })?;
                pixels.push(t);
            }
            if pixels.len() - before != SIZE {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("expected {SIZE} values, got {}", pixels.len() - before),
                });
            }
            rows += 1;
        }
        if rows != SIZE {
            return Err(Error::Parse {
                line: 0,
                message: format!("expected {SIZE} rows, got {rows}"),
            });
        }
        ThermalImage::from_pixels(pixels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SubjectKind {
    Human,
    HotObject,
}

/// Subject-local shapes in cm: x to the subject's right as seen by the
/// camera, y up, origin at the subject's centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    Rect { cx: f64, cy: f64, hw: f64, hh: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Ellipse { cx, cy, rx, ry } => {
                let (u, v) = ((x - cx) / rx, (y - cy) / ry);
                u * u + v * v <= 1.0
            }
            Shape::Rect { cx, cy, hw, hh } => (x - cx).abs() <= hw && (y - cy).abs() <= hh,
        }
    }

    fn top(&self) -> f64 {
        match *self {
            Shape::Ellipse { cy, ry, .. } => cy + ry,
            Shape::Rect { cy, hh, .. } => cy + hh,
        }
    }

    fn bottom(&self) -> f64 {
        match *self {
            Shape::Ellipse { cy, ry, .. } => cy - ry,
            Shape::Rect { cy, hh, .. } => cy - hh,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub temp_c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThermalSubject {
    pub id: String,
    pub kind: SubjectKind,
    /// Frontal width and front-to-back depth, used to widen the silhouette
    /// when the turntable rotates the subject.
    pub width_cm: f64,
    pub depth_cm: f64,
    /// Later primitives are drawn over earlier ones.
    pub primitives: Vec<Primitive>,
}

impl ThermalSubject {
    fn surface(&self, x: f64, y: f64) -> Option<f64> {
        self.primitives
            .iter()
            .rev()
            .find(|p| p.shape.contains(x, y))
            .map(|p| p.temp_c)
    }

    pub fn height_cm(&self) -> f64 {
        let top = self
            .primitives
            .iter()
            .map(|p| p.shape.top())
            .fold(f64::MIN, f64::max);
        let bottom = self
            .primitives
            .iter()
            .map(|p| p.shape.bottom())
            .fold(f64::MAX, f64::min);
        top - bottom
    }

    /// Uniformly resized copy.
    pub fn scaled(&self, k: f64) -> ThermalSubject {
        let mut s = self.clone();
        s.width_cm *= k;
        s.depth_cm *= k;
        for p in &mut s.primitives {
            p.shape = match p.shape {
                Shape::Ellipse { cx, cy, rx, ry } => Shape::Ellipse {
                    cx: cx * k,
                    cy: cy * k,
                    rx: rx * k,
                    ry: ry * k,
                },
                Shape::Rect { cx, cy, hw, hh } => Shape::Rect {
                    cx: cx * k,
                    cy: cy * k,
                    hw: hw * k,
                    hh: hh * k,
                },
            };
        }
        s
    }

    /// Horizontal stretch of the silhouette after a turntable rotation.
    pub fn width_scale(&self, rotation_deg: f64) -> f64 {
        let r = rotation_deg.to_radians();
        (self.width_cm * r.cos().abs() + self.depth_cm * r.sin().abs()) / self.width_cm
    }
}

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64, t: f64) -> Primitive {
    Primitive {
        shape: Shape::Ellipse { cx, cy, rx, ry },
        temp_c: t,
    }
}

fn rect(cx: f64, cy: f64, hw: f64, hh: f64, t: f64) -> Primitive {
    Primitive {
        shape: Shape::Rect { cx, cy, hw, hh },
        temp_c: t,
    }
}

/// Standing figure, 166 cm tall at `scale` 1: head ellipse, torso ellipse,
/// arm and leg rectangles.
fn standing(id: &str, scale: f64, head: f64, torso: f64, limbs: f64) -> ThermalSubject {
    let s = scale;
    ThermalSubject {
        id: id.into(),
        kind: SubjectKind::Human,
        width_cm: 52.0 * s,
        depth_cm: 26.0 * s,
        primitives: vec![
            rect(-9.0 * s, -41.5 * s, 6.5 * s, 41.5 * s, limbs),
            rect(9.0 * s, -41.5 * s, 6.5 * s, 41.5 * s, limbs),
            rect(-22.0 * s, 30.0 * s, 4.0 * s, 30.0 * s, limbs),
            rect(22.0 * s, 30.0 * s, 4.0 * s, 30.0 * s, limbs),
            ellipse(0.0, 33.0 * s, 18.0 * s, 28.0 * s, torso),
            ellipse(0.0, 72.0 * s, 9.0 * s, 11.0 * s, head),
        ],
    }
}

/// Seated figure, 90 cm tall seen from the front: thighs foreshortened,
/// shins below.
fn sitting(id: &str, scale: f64, head: f64, torso: f64, limbs: f64) -> ThermalSubject {
    let s = scale;
    ThermalSubject {
        id: id.into(),
        kind: SubjectKind::Human,
        width_cm: 50.0 * s,
        depth_cm: 55.0 * s,
        primitives: vec![
            rect(-9.0 * s, -30.0 * s, 7.0 * s, 15.0 * s, limbs),
            rect(9.0 * s, -30.0 * s, 7.0 * s, 15.0 * s, limbs),
            rect(0.0, -12.0 * s, 17.0 * s, 5.0 * s, limbs),
            rect(-21.0 * s, 4.0 * s, 4.0 * s, 17.0 * s, limbs),
            rect(21.0 * s, 4.0 * s, 4.0 * s, 17.0 * s, limbs),
            ellipse(0.0, 5.0 * s, 17.0 * s, 20.0 * s, torso),
            ellipse(0.0, 35.0 * s, 8.5 * s, 10.0 * s, head),
        ],
    }
}

fn object(id: &str, w: f64, d: f64, primitives: Vec<Primitive>) -> ThermalSubject {
    ThermalSubject {
        id: id.into(),
        kind: SubjectKind::HotObject,
        width_cm: w,
        depth_cm: d,
        primitives,
    }
}

/// Every subject the renderer knows. Object outlines follow the catalogue
/// dimensions (W × H × D); surface temperatures are assumptions.
pub fn catalog() -> Vec<ThermalSubject> {
    let h3 = 169.0 / 166.0;
    vec![
        standing("human1_standing", 1.0, 35.0, 32.0, 30.5),
        sitting("human1_sitting", 1.0, 35.0, 32.0, 30.5),
        standing("human2_standing", 0.97, 35.5, 33.0, 31.5),
        sitting("human2_sitting", 0.97, 35.5, 33.0, 31.5),
        standing("human3_standing", h3, 34.5, 31.5, 30.0),
        sitting("human3_sitting", h3, 34.5, 31.5, 30.0),
        // 46 × 33 × 29: warm casing, hot glass door
        object(
            "oven",
            46.0,
            29.0,
            vec![
                rect(0.0, 0.0, 23.0, 16.5, 34.0),
                rect(-4.0, -1.0, 15.0, 11.0, 42.0),
            ],
        ),
        // 35 × 24 × 3.5: open lid over a thin base
        object(
            "laptop_acer",
            35.0,
            24.0,
            vec![
                rect(0.0, 2.0, 17.5, 10.0, 31.5),
                rect(0.0, -10.25, 17.5, 1.75, 34.0),
            ],
        ),
        // 41 × 41 × 14: panel on a neck and foot
        object(
            "monitor_dell",
            41.0,
            14.0,
            vec![
                rect(0.0, 6.0, 20.5, 14.5, 32.5),
                rect(0.0, -13.0, 3.0, 5.0, 30.0),
                rect(0.0, -19.0, 10.0, 1.5, 30.0),
            ],
        ),
        // 48 × 32 × 28: box with a hot turntable window
        object(
            "microwave",
            48.0,
            28.0,
            vec![
                rect(0.0, 0.0, 24.0, 16.0, 33.0),
                rect(-5.0, 0.0, 15.0, 11.0, 37.0),
            ],
        ),
        // 51 × 41 × 23
        object(
            "monitor_hp",
            51.0,
            23.0,
            vec![
                rect(0.0, 5.0, 25.5, 15.5, 31.5),
                rect(0.0, -14.0, 3.0, 4.0, 30.0),
                rect(0.0, -19.0, 12.0, 1.5, 30.0),
            ],
        ),
        // 44 × 44 × 16: hot shade on an arm
        object(
            "lamp",
            44.0,
            16.0,
            vec![
                rect(0.0, -20.5, 8.0, 1.5, 31.0),
                rect(0.0, -6.0, 1.5, 13.0, 33.0),
                rect(0.0, 14.0, 22.0, 8.0, 44.0),
            ],
        ),
        // 38 × 25 × 2.5
        object(
            "laptop_dell",
            38.0,
            25.0,
            vec![
                rect(0.0, 2.0, 19.0, 10.5, 32.5),
                rect(0.0, -11.25, 19.0, 1.25, 35.0),
            ],
        ),
    ]
}

pub fn subject(id: &str) -> Option<ThermalSubject> {
    catalog().into_iter().find(|s| s.id == id)
}

pub const TRAIN_SUBJECTS: [&str; 7] = [
    "human1_standing",
    "human1_sitting",
    "human2_standing",
    "human2_sitting",
    "oven",
    "laptop_acer",
    "monitor_dell",
];

pub const VALIDATION_SUBJECTS: [&str; 6] = [
    "human3_standing",
    "human3_sitting",
    "microwave",
    "monitor_hp",
    "lamp",
    "laptop_dell",
];

/// A subject positioned in front of the camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub subject: ThermalSubject,
    /// Distance along the optical axis.
    pub distance_m: f64,
    /// Offset of the subject centre to the right of the optical axis.
    pub lateral_cm: f64,
    /// Offset of the subject centre above the optical axis.
    pub vertical_cm: f64,
    pub rotation_deg: f64,
}

impl Placement {
    pub fn centered(subject: ThermalSubject, distance_m: f64) -> Self {
        Placement {
            subject,
            distance_m,
            lateral_cm: 0.0,
            vertical_cm: 0.0,
            rotation_deg: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    pub gaussian_sd_c: f64,
    pub salt_pepper_rate: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            gaussian_sd_c: 0.5,
            salt_pepper_rate: 0.01,
        }
    }
}

impl NoiseParams {
    pub fn none() -> Self {
        NoiseParams {
            gaussian_sd_c: 0.0,
            salt_pepper_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub ambient_mean_c: f64,
    pub ambient_sd_c: f64,
    pub placements: Vec<Placement>,
    pub noise: NoiseParams,
}

impl SceneSpec {
    pub fn room(placements: Vec<Placement>) -> Self {
        SceneSpec {
            ambient_mean_c: 26.0,
            ambient_sd_c: 0.5,
            placements,
            noise: NoiseParams::default(),
        }
    }

    pub fn noiseless(ambient_c: f64, placements: Vec<Placement>) -> Self {
        SceneSpec {
            ambient_mean_c: ambient_c,
            ambient_sd_c: 0.0,
            placements,
            noise: NoiseParams::none(),
        }
    }
}

/// Tangents of the subsample ray angles along one image axis, starting at
/// the left (or top) edge.
fn ray_tangents() -> Vec<f64> {
    let n = SIZE * SUPERSAMPLE;
    (0..n)
        .map(|i| {
            let a = -FOV_DEG / 2.0 + (i as f64 + 0.5) * DEG_PER_PIXEL / SUPERSAMPLE as f64;
            a.to_radians().tan()
        })
        .collect()
}

pub fn render_frame<R: Rng + ?Sized>(scene: &SceneSpec, rng: &mut R) -> Result<ThermalImage> {
    for p in &scene.placements {
        if !(p.distance_m > 0.0) {
            return Err(Error::SubjectBehindCamera(p.subject.id.clone()));
        }
    }
    let ambient = if scene.ambient_sd_c > 0.0 {
        Normal::new(scene.ambient_mean_c, scene.ambient_sd_c)
            .expect("finite ambient")
            .sample(rng)
    } else {
        scene.ambient_mean_c
    };
    let mut order: Vec<&Placement> = scene.placements.iter().collect();
    order.sort_by(|a, b| a.distance_m.total_cmp(&b.distance_m));
    let scales: Vec<f64> = order
        .iter()
        .map(|p| p.subject.width_scale(p.rotation_deg))
        .collect();

    let tan = ray_tangents();
    let n = SIZE * SUPERSAMPLE;
    let mut img = ThermalImage::filled(ambient);
    let weight = 1.0 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
    for row in 0..SIZE {
        for col in 0..SIZE {
            let mut acc = 0.0;
            for j in 0..SUPERSAMPLE {
                // rows run top-down, so flip the elevation index
                let ty = tan[n - 1 - (row * SUPERSAMPLE + j)];
                for i in 0..SUPERSAMPLE {
                    let tx = tan[col * SUPERSAMPLE + i];
                    let mut t = ambient;
                    for (p, s) in order.iter().zip(&scales) {
                        let d = p.distance_m * 100.0;
                        let x = (d * tx - p.lateral_cm) / s;
                        let y = d * ty - p.vertical_cm;
                        if let Some(surface) = p.subject.surface(x, y) {
                            t = surface.max(ambient);
                            break;
                        }
                    }
                    acc += t;
                }
            }
            img.set(row, col, acc * weight);
        }
    }

    if scene.noise.gaussian_sd_c > 0.0 {
        let g = Normal::new(0.0, scene.noise.gaussian_sd_c).expect("finite noise");
        for t in img.pixels.iter_mut() {
            *t += g.sample(rng);
        }
    }
    if scene.noise.salt_pepper_rate > 0.0 {
        for t in img.pixels.iter_mut() {
            if rng.random::<f64>() < scene.noise.salt_pepper_rate {
                *t = if rng.random::<bool>() {
                    SALT_C
                } else {
                    PEPPER_C
                };
            }
        }
    }
    if let Some(p) = order.first() {
        img.meta.distance_m = Some(p.distance_m);
        img.meta.subject_id = p.subject.id.clone();
    }
    Ok(img)
}

/// How a labeled image set is generated: every combination of subject,
/// distance and turntable angle, or a fixed count per class that cycles
/// through the combinations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecipe {
    pub name: String,
    pub subjects: Vec<String>,
    pub distances_m: Vec<f64>,
    pub rotations_deg: Vec<f64>,
    #[serde(default)]
    pub human_count: Option<usize>,
    #[serde(default)]
    pub nonhuman_count: Option<usize>,
    /// Uniform placement jitter (± cm, both axes).
    #[serde(default)]
    pub jitter_cm: f64,
    /// Uniform bearing spread of the subject centre (± degrees), on top of
    /// the placement jitter.
    #[serde(default)]
    pub azimuth_jitter_deg: f64,
    /// Per-primitive surface temperature spread (sd, °C).
    #[serde(default)]
    pub temp_jitter_c: f64,
    /// Uniform relative size spread, e.g. 0.1 for ±10 %.
    #[serde(default)]
    pub scale_jitter: f64,
    pub ambient_mean_c: f64,
    pub ambient_sd_c: f64,
    pub noise: NoiseParams,
}

/// Class sizes of the captured training set and the validation positives.
pub const FULL_TRAIN_HUMAN: usize = 11171;
pub const FULL_TRAIN_NONHUMAN: usize = 11493;
pub const FULL_VALIDATION_PER_CLASS: usize = 2831;

impl DatasetRecipe {
    fn scaled(n: usize, scale: f64) -> usize {
        ((n as f64 * scale).round() as usize).max(1)
    }

    /// Training subjects at 0.5, 1.0 and 1.5 m, every 15° of turntable.
    pub fn training(scale: f64) -> Self {
        DatasetRecipe {
            name: "train".into(),
            subjects: TRAIN_SUBJECTS.iter().map(|s| s.to_string()).collect(),
            distances_m: vec![0.5, 1.0, 1.5],
            rotations_deg: (0..24).map(|i| i as f64 * 15.0).collect(),
            human_count: Some(Self::scaled(FULL_TRAIN_HUMAN, scale)),
            nonhuman_count: Some(Self::scaled(FULL_TRAIN_NONHUMAN, scale)),
            jitter_cm: 15.0,
            azimuth_jitter_deg: 35.0,
            temp_jitter_c: 2.0,
            scale_jitter: 0.2,
            ambient_mean_c: 26.0,
            ambient_sd_c: 0.5,
            noise: NoiseParams::default(),
        }
    }

    /// Held-out subjects from 0.5 to 1.5 m in 0.1 m steps.
    pub fn validation(scale: f64) -> Self {
        DatasetRecipe {
            name: "validation".into(),
            subjects: VALIDATION_SUBJECTS.iter().map(|s| s.to_string()).collect(),
            distances_m: (0..11).map(|i| (5 + i) as f64 / 10.0).collect(),
            rotations_deg: (0..36).map(|i| 5.0 + i as f64 * 10.0).collect(),
            human_count: Some(Self::scaled(FULL_VALIDATION_PER_CLASS, scale)),
            nonhuman_count: Some(Self::scaled(FULL_VALIDATION_PER_CLASS, scale)),
            jitter_cm: 15.0,
            azimuth_jitter_deg: 35.0,
            temp_jitter_c: 2.0,
            scale_jitter: 0.2,
            ambient_mean_c: 26.0,
            ambient_sd_c: 0.5,
            noise: NoiseParams::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            path: "dataset recipe".into(),
            message: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("recipe serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: ThermalImage,
    pub human: bool,
    pub distance_m: f64,
    pub subject_id: String,
}

struct Combo {
    subject: usize,
    distance: f64,
    rotation: f64,
}

pub fn synth_dataset(recipe: &DatasetRecipe, seed: u64) -> Result<Vec<LabeledImage>> {
    if recipe.subjects.is_empty()
        || recipe.distances_m.is_empty()
        || recipe.rotations_deg.is_empty()
    {
        return Err(Error::EmptyRecipe);
    }
    let subjects = recipe
        .subjects
        .iter()
        .map(|id| {
            subject(id).ok_or_else(|| Error::InvalidParameter {
                key: "subjects".into(),
                reason: format!("unknown subject `{id}`"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(d) = recipe.distances_m.iter().find(|d| !(**d > 0.0)) {
        return Err(Error::InvalidParameter {
            key: "distances_m".into(),
            reason: format!("distance {d} m is not in front of the camera"),
        });
    }

    let mut out = Vec::new();
    let mut index = 0u64;
    for (kind, count) in [
        (SubjectKind::Human, recipe.human_count),
        (SubjectKind::HotObject, recipe.nonhuman_count),
    ] {
        // subjects vary fastest so any prefix covers all of them
        let mut combos = Vec::new();
        for &rotation in &recipe.rotations_deg {
            for &distance in &recipe.distances_m {
                for (i, s) in subjects.iter().enumerate() {
                    if s.kind == kind {
                        combos.push(Combo {
                            subject: i,
                            distance,
                            rotation,
                        });
                    }
                }
            }
        }
        if combos.is_empty() {
            continue;
        }
        let n = count.unwrap_or(combos.len());
        for k in 0..n {
            let c = &combos[k % combos.len()];
            let mut rng = rng_for(seed, index);
            index += 1;
            let j = recipe.jitter_cm;
            let (dx, dy) = if j > 0.0 {
                (rng.random_range(-j..=j), rng.random_range(-j..=j))
            } else {
                (0.0, 0.0)
            };
            let az = recipe.azimuth_jitter_deg;
            let bearing = if az > 0.0 {
                rng.random_range(-az..=az)
            } else {
                0.0
            };
            let dx = dx + c.distance * 100.0 * bearing.to_radians().tan();
            let s = &subjects[c.subject];
            let scale = if recipe.scale_jitter > 0.0 {
                1.0 + rng.random_range(-recipe.scale_jitter..=recipe.scale_jitter)
            } else {
                1.0
            };
            let mut varied = s.scaled(scale);
            if recipe.temp_jitter_c > 0.0 {
                let g = Normal::new(0.0, recipe.temp_jitter_c).expect("finite jitter");
                let (lo, hi) = match kind {
                    SubjectKind::Human => HUMAN_BAND_C,
                    SubjectKind::HotObject => OBJECT_BAND_C,
                };
                for p in &mut varied.primitives {
                    p.temp_c = (p.temp_c + g.sample(&mut rng)).clamp(lo, hi);
                }
            }
            let scene = SceneSpec {
                ambient_mean_c: recipe.ambient_mean_c,
                ambient_sd_c: recipe.ambient_sd_c,
                placements: vec![Placement {
                    subject: varied,
                    distance_m: c.distance,
                    lateral_cm: dx,
                    vertical_cm: dy,
                    rotation_deg: c.rotation,
                }],
                noise: recipe.noise,
            };
            let image = render_frame(&scene, &mut rng)?;
            out.push(LabeledImage {
                image,
                human: kind == SubjectKind::Human,
                distance_m: c.distance,
                subject_id: s.id.clone(),
            });
        }
    }
    Ok(out)
}

/// Writes one text file per image plus `manifest.csv`
/// (path, label, distance_m, subject_id).
pub fn write_dataset(dir: &Path, images: &[LabeledImage], header: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("manifest.csv"))?;
    w.write_record(["path", "label", "distance_m", "subject_id"])?;
    for (i, li) in images.iter().enumerate() {
        let name = format!("img_{i:05}.txt");
        std::fs::write(dir.join(&name), format!("{header}{}", li.image.to_text()))?;
        w.write_record([
            name.as_str(),
            if li.human { "human" } else { "nonhuman" },
            &format!("{}", li.distance_m),
            &li.subject_id,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(manifest: &Path) -> Result<Vec<LabeledImage>> {
    if !manifest.exists() {
        return Err(Error::MissingFile(manifest.to_path_buf()));
    }
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let mut r = csv::Reader::from_path(manifest)?;
    let mut out = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |m: &str| Error::Parse {
            line: n + 2,
            message: m.to_string(),
        };
        if rec.len() != 4 {
            return Err(bad("expected path,label,distance_m,subject_id"));
        }
        let human = match &rec[1] {
            "human" => true,
            "nonhuman" => false,
            other => return Err(bad(&format!("unknown label {other:?}"))),
        };
        let distance_m: f64 = rec[2].parse().map_err(|_| bad("bad distance"))?;
        let path = dir.join(&rec[0]);
        let text = std::fs::read_to_string(&path).map_err(|_| Error::MissingFile(path.clone()))?;
        let mut image = ThermalImage::from_text(&text)?;
        image.meta.distance_m = Some(distance_m);
        image.meta.subject_id = rec[3].to_string();
        out.push(LabeledImage {
            image,
            human,
            distance_m,
            subject_id: rec[3].to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng_for;

    fn human(id: &str) -> ThermalSubject {
        subject(id).unwrap()
    }

    #[test]
    fn empty_scene_is_ambient() {
        let img = render_frame(&SceneSpec::noiseless(26.0, vec![]), &mut rng_for(1, 0)).unwrap();
        assert!(img.pixels().iter().all(|&t| t == 26.0));
        assert_eq!(img.pixels().len(), 1024);
    }

    /// Rows covered by a 90 cm tall bar (half-height 45 cm) at 1 m.
    #[test]
    fn vertical_extent_matches_projection() {
        let bar = ThermalSubject {
            id: "bar".into(),
            kind: SubjectKind::Human,
            width_cm: 20.0,
            depth_cm: 20.0,
            primitives: vec![rect(0.0, 0.0, 10.0, 45.0, 33.0)],
        };
        let img = render_frame(
            &SceneSpec::noiseless(26.0, vec![Placement::centered(bar, 1.0)]),
            &mut rng_for(1, 0),
        )
        .unwrap();
        let col = SIZE / 2;
        let covered: f64 = (0..SIZE).map(|r| (img.get(r, col) - 26.0) / 7.0).sum();
        let expected = 2.0 * (0.45f64).atan().to_degrees() / DEG_PER_PIXEL;
        assert!((expected - 17.2).abs() < 0.1);
        assert!((covered - expected).abs() < 0.3, "{covered} vs {expected}");
    }

    /// A 30 cm square at 0.5 m and 1.5 m: the square root of its covered
    /// area follows the projected angular width to within the quarter-pixel
    /// supersampling grid.
    #[test]
    fn footprint_shrinks_with_distance() {
        let tile = object("tile", 30.0, 1.0, vec![rect(0.0, 0.0, 15.0, 15.0, 36.0)]);
        let width = |d: f64| {
            let img = render_frame(
                &SceneSpec::noiseless(26.0, vec![Placement::centered(tile.clone(), d)]),
                &mut rng_for(0, 0),
            )
            .unwrap();
            img.pixels()
                .iter()
                .map(|t| (t - 26.0) / 10.0)
                .sum::<f64>()
                .sqrt()
        };
        let oracle = |d: f64| 2.0 * (0.15f64 / d).atan().to_degrees() / DEG_PER_PIXEL;
        for d in [0.5, 1.5] {
            assert!(
                (width(d) - oracle(d)).abs() <= 0.25,
                "{d}: {} vs {}",
                width(d),
                oracle(d)
            );
        }
        let ratio = width(0.5) / width(1.5);
        assert!((oracle(0.5) / oracle(1.5) - 3.0).abs() < 0.1);
        assert!((ratio - 3.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn behind_camera_is_rejected() {
        let scene = SceneSpec::noiseless(
            26.0,
            vec![Placement::centered(human("human1_sitting"), -0.5)],
        );
        assert!(matches!(
            render_frame(&scene, &mut rng_for(1, 0)),
            Err(Error::SubjectBehindCamera(_))
        ));
    }

    #[test]
    fn nearest_subject_occludes() {
        let hot = object("hot", 200.0, 10.0, vec![rect(0.0, 0.0, 100.0, 100.0, 40.0)]);
        let warm = object(
            "warm",
            400.0,
            10.0,
            vec![rect(0.0, 0.0, 200.0, 200.0, 30.0)],
        );
        let scene = SceneSpec::noiseless(
            26.0,
            vec![
                Placement::centered(warm, 1.0),
                Placement::centered(hot, 0.5),
            ],
        );
        let img = render_frame(&scene, &mut rng_for(1, 0)).unwrap();
        assert!((img.get(16, 16) - 40.0).abs() < 1e-12);
    }

    #[test]
    fn text_round_trip() {
        let scene = SceneSpec::room(vec![Placement::centered(human("human2_standing"), 1.0)]);
        let img = render_frame(&scene, &mut rng_for(3, 0)).unwrap();
        let back = ThermalImage::from_text(&format!("# seed 3\n{}", img.to_text())).unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() <= 5e-4);
        }
        assert!(ThermalImage::from_text("1,2,3\n").is_err());
    }

    #[test]
    fn recipe_sizes() {
        let r = DatasetRecipe::training(1.0 / 20.0);
        assert_eq!((r.human_count, r.nonhuman_count), (Some(559), Some(575)));
        let v = DatasetRecipe::validation(1.0 / 20.0);
        assert_eq!(v.distances_m.len(), 11);
        let single = DatasetRecipe {
            subjects: vec!["lamp".into()],
            distances_m: vec![1.0],
            rotations_deg: vec![0.0],
            human_count: None,
            nonhuman_count: None,
            ..DatasetRecipe::training(1.0)
        };
        assert_eq!(synth_dataset(&single, 0).unwrap().len(), 1);
        let empty = DatasetRecipe {
            subjects: vec![],
            ..single
        };
        assert!(matches!(synth_dataset(&empty, 0), Err(Error::EmptyRecipe)));
    }

    #[test]
    fn train_and_validation_subjects_are_disjoint() {
        for s in TRAIN_SUBJECTS {
            assert!(!VALIDATION_SUBJECTS.contains(&s));
            assert!(subject(s).is_some());
        }
        for s in VALIDATION_SUBJECTS {
            assert!(subject(s).is_some());
        }
    }

    #[test]
    fn humans_fill_the_band_within_range() {
        for s in catalog()
            .into_iter()
            .filter(|s| s.kind == SubjectKind::Human)
        {
            let mut prev = usize::MAX;
            for d in [0.5, 0.75, 1.0, 1.25, 1.5] {
                let scene = SceneSpec::noiseless(26.0, vec![Placement::centered(s.clone(), d)]);
                let n = render_frame(&scene, &mut rng_for(0, 0))
                    .unwrap()
                    .count_in(HUMAN_BAND_C.0, HUMAN_BAND_C.1);
                assert!(n > 15, "{} at {d} m: {n}", s.id);
                assert!(n <= prev, "{} footprint grew at {d} m", s.id);
                prev = n;
            }
        }
    }

    #[test]
    fn rotation_widens_deep_subjects() {
        let s = human("human1_sitting");
        assert!((s.width_scale(0.0) - 1.0).abs() < 1e-12);
        assert!((s.width_scale(90.0) - 55.0 / 50.0).abs() < 1e-12);
        assert!((s.width_scale(180.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dataset_is_deterministic() {
        let r = DatasetRecipe {
            human_count: Some(6),
            nonhuman_count: Some(6),
            ..DatasetRecipe::validation(1.0)
        };
        let a = synth_dataset(&r, 11).unwrap();
        assert_eq!(a, synth_dataset(&r, 11).unwrap());
        assert_ne!(a, synth_dataset(&r, 12).unwrap());
        assert_eq!(a.iter().filter(|l| l.human).count(), 6);
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &a, "# test\n").unwrap();
        let back = read_dataset(&dir.path().join("manifest.csv")).unwrap();
        assert_eq!(back.len(), a.len());
        assert_eq!(back[7].subject_id, a[7].subject_id);
        assert_eq!(back[7].human, a[7].human);
    }

    #[test]
    fn catalog_dimensions() {
        assert!((human("human1_standing").height_cm() - 166.0).abs() < 1e-9);
        assert!((human("human1_sitting").height_cm() - 90.0).abs() < 1e-9);
        assert!((human("human3_standing").height_cm() - 169.0).abs() < 1e-9);
        for (id, w, h) in [
            ("oven", 46.0, 33.0),
            ("laptop_acer", 35.0, 24.0),
            ("monitor_dell", 41.0, 41.0),
            ("microwave", 48.0, 32.0),
            ("monitor_hp", 51.0, 41.0),
            ("lamp", 44.0, 44.0),
            ("laptop_dell", 38.0, 25.0),
        ] {
            let s = subject(id).unwrap();
            assert_eq!(s.width_cm, w, "{id}");
            assert!((s.height_cm() - h).abs() < 1e-9, "{id}: {}", s.height_cm());
        }
        for s in catalog().iter().filter(|s| s.kind == SubjectKind::Human) {
            for p in &s.primitives {
                assert!(p.temp_c >= HUMAN_BAND_C.0 && p.temp_c <= HUMAN_BAND_C.1);
            }
        }
    }
}
