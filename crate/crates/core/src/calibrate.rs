//! Fits free behavior parameters to aggregate trial statistics.
//!
//! Search is coordinate-wise random perturbation with common random numbers:
//! every candidate is scored on the same trial seeds, so differences in
//! misfit come from the parameters rather than sampling luck.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::arena::{preset, TerrainKind};
use crate::harness::{aggregate, run_trial, BatchStats, TrialSetup};
use crate::insect::BehaviorParams;
use crate::navigation::{Algorithm, NavParams};
use crate::seeds::rng_for;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatKind {
    SuccessRate,
    /// Mean over successful trials, s.
    NavigationTime,
    BackwardTime,
    ThetaOrthogonal,
    ThetaEdge,
    /// Orthogonal climbs over all first climbs.
    OrthogonalShare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub statistic: StatKind,
    pub terrain: TerrainKind,
    pub algorithm: Algorithm,
    pub value: f64,
    pub tolerance: f64,
    #[serde(default = "yes")]
    pub mandatory: bool,
}

fn yes() -> bool {
    true
}

impl Target {
    pub fn new(
        statistic: StatKind,
        terrain: TerrainKind,
        algorithm: Algorithm,
        value: f64,
        tolerance: f64,
    ) -> Self {
        Target {
            statistic,
            terrain,
            algorithm,
            value,
            tolerance,
            mandatory: true,
        }
    }

    pub fn advisory(mut self) -> Self {
        self.mandatory = false;
        self
    }

    pub fn measure(&self, stats: &BatchStats) -> Option<f64> {
        match self.statistic {
            StatKind::SuccessRate => Some(stats.success_rate),
            StatKind::NavigationTime => stats.navigation_time.map(|m| m.mean),
            StatKind::BackwardTime => stats.backward_time.map(|m| m.mean),
            StatKind::ThetaOrthogonal => stats.theta_orthogonal.map(|m| m.mean),
            StatKind::ThetaEdge => stats.theta_edge.map(|m| m.mean),
            StatKind::OrthogonalShare => {
                let (o, e, _) = stats.climb_counts;
                (o + e > 0).then(|| o as f64 / (o + e) as f64)
            }
        }
    }
}

/// One tunable scalar of `BehaviorParams`, by field name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRange {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpec {
    pub params: Vec<ParamRange>,
    /// Candidate evaluations after the starting point.
    pub iterations: usize,
    /// Trials per (terrain, algorithm) batch.
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    #[serde(default)]
    pub targets: Vec<Target>,
    pub search: SearchSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetReport {
    pub target: Target,
    pub achieved: Option<f64>,
    pub met: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub params: BehaviorParams,
    pub misfit: f64,
    pub evaluations: usize,
    pub targets: Vec<TargetReport>,
}

impl CalibrationReport {
    pub fn mandatory_met(&self) -> bool {
        self.targets.iter().all(|t| t.met || !t.target.mandatory)
    }
}

/// Tall-wall success rates and the two climb modes are mandatory; times
/// are advisory.
pub fn default_targets() -> Vec<Target> {
    use Algorithm::*;
    use StatKind::*;
    use TerrainKind::*;
    vec![
        Target::new(SuccessRate, TallWall, Simple, 0.24, 0.15),
        Target::new(SuccessRate, TallWall, Predictive, 0.94, 0.1),
        Target::new(SuccessRate, LowObstacle, Simple, 0.98, 0.05),
        Target::new(ThetaOrthogonal, LowObstacle, Simple, 74.89, 8.0),
        Target::new(ThetaEdge, LowObstacle, Simple, 38.77, 8.0),
        Target::new(NavigationTime, TallWall, Simple, 48.98, 15.0).advisory(),
        Target::new(NavigationTime, TallWall, Predictive, 33.91, 15.0).advisory(),
    ]
}

pub fn default_search() -> SearchSpec {
    let r = |name: &str, lo, hi| ParamRange {
        name: name.into(),
        lo,
        hi,
    };
    SearchSpec {
        params: vec![
            r("press_freeze_hazard", 0.0, 0.5),
            r("backward_trigger_prob", 0.0, 1.0),
            r("stop_hazard_at_wall", 0.0, 0.5),
            r("climb_mount_yaw_sd", 0.0, 25.0),
            r("edge_climb_angle_mean", 25.0, 55.0),
        ],
        iterations: 40,
        trials: 30,
        seed: 0,
    }
}

const ADVISORY_WEIGHT: f64 = 0.25;
/// Misfit charged for a statistic the batch could not produce at all.
const MISSING_PENALTY: f64 = 100.0;

fn get_param(p: &BehaviorParams, name: &str) -> Result<f64> {
    let v = toml::Value::try_from(p).expect("params serialize");
    v.get(name)
        .and_then(|x| x.as_float())
        .ok_or_else(|| Error::InvalidParameter {
            key: name.into(),
            reason: "not a scalar behavior parameter".into(),
        })
}

fn set_param(p: &BehaviorParams, name: &str, x: f64) -> Result<BehaviorParams> {
    let mut v = toml::Value::try_from(p).expect("params serialize");
    let table = v.as_table_mut().expect("params are a table");
    match table.get(name) {
        Some(toml::Value::Float(_)) => {
            table.insert(name.into(), toml::Value::Float(x));
        }
        _ => {
            return Err(Error::InvalidParameter {
                key: name.into(),
                reason: "not a scalar behavior parameter".into(),
            })
        }
    }
    let out: BehaviorParams = v.try_into().map_err(|e: toml::de::Error| Error::Config {
        path: "behavior params".into(),
        message: e.to_string(),
    })?;
    out.validate()?;
    Ok(out)
}

struct Scored {
    misfit: f64,
    reports: Vec<TargetReport>,
}

fn score(
    params: &BehaviorParams,
    nav: &NavParams,
    targets: &[Target],
    trials: usize,
) -> Result<Scored> {
    let mut batches: BTreeMap<(u8, u8), BatchStats> = BTreeMap::new();
    for t in targets {
        let key = (t.terrain as u8, t.algorithm as u8);
        if batches.contains_key(&key) {
            continue;
        }
        let arena = preset(t.terrain);
        let setup = TrialSetup::new(&arena, t.algorithm, nav, params);
        let records = (0..trials as u64)
            .map(|s| run_trial(s, &setup))
            .collect::<Result<Vec<_>>>()?;
        batches.insert(key, aggregate(&records).ok_or(Error::EmptyDataset)?);
    }
    let mut misfit = 0.0;
    let mut reports = Vec::new();
    for t in targets {
        let achieved = t.measure(&batches[&(t.terrain as u8, t.algorithm as u8)]);
        let w = if t.mandatory { 1.0 } else { ADVISORY_WEIGHT };
        let (cost, met) = match achieved {
            Some(a) => {
                let z = (a - t.value) / t.tolerance;
                (z * z, z.abs() <= 1.0)
            }
            None => (MISSING_PENALTY, false),
        };
        misfit += w * cost;
        reports.push(TargetReport {
            target: t.clone(),
            achieved,
            met,
        });
    }
    Ok(Scored { misfit, reports })
}

fn check(targets: &[Target], spec: &SearchSpec, start: &BehaviorParams) -> Result<()> {
    for t in targets {
        if !(t.tolerance > 0.0) {
            return Err(Error::InvalidParameter {
                key: "tolerance".into(),
                reason: format!("{} must be positive", t.tolerance),
            });
        }
        if t.terrain == TerrainKind::MockDisaster {
            return Err(Error::InvalidParameter {
                key: "terrain".into(),
                reason: "calibration runs on the preset terrains".into(),
            });
        }
    }
    if spec.trials == 0 {
        return Err(Error::InvalidParameter {
            key: "trials".into(),
            reason: "need at least one trial per batch".into(),
        });
    }
    for r in &spec.params {
        get_param(start, &r.name)?;
        if !(r.lo <= r.hi) {
            return Err(Error::InvalidParameter {
                key: r.name.clone(),
                reason: format!("empty range [{}, {}]", r.lo, r.hi),
            });
        }
    }
    Ok(())
}

/// Returns the best parameters found. When the mandatory targets cannot be
/// met (including contradictory targets) the best-found point is still
/// returned; `mandatory_met` tells the caller.
pub fn calibrate(
    start: &BehaviorParams,
    nav: &NavParams,
    targets: &[Target],
    spec: &SearchSpec,
) -> Result<CalibrationReport> {
    if targets.is_empty() {
        return Ok(CalibrationReport {
            params: start.clone(),
            misfit: 0.0,
            evaluations: 0,
            targets: Vec::new(),
        });
    }
    check(targets, spec, start)?;
    let mut best = start.clone();
    let mut best_score = score(&best, nav, targets, spec.trials)?;
    let mut evaluations = 1;
    if !spec.params.is_empty() {
        let mut rng = rng_for(spec.seed, 0);
        for _ in 0..spec.iterations {
            if best_score.misfit == 0.0 {
                break;
            }
            let r = &spec.params[rng.random_range(0..spec.params.len())];
            let current = get_param(&best, &r.name)?;
            let width = r.hi - r.lo;
            let proposal = if width > 0.0 {
                let step = Normal::new(0.0, 0.25 * width).expect("positive width");
                (current + step.sample(&mut rng)).clamp(r.lo, r.hi)
            } else {
                r.lo
            };
            let candidate = match set_param(&best, &r.name, proposal) {
                Ok(c) => c,
                // the proposal violates a cross-field constraint; skip it
                Err(Error::InvalidParameter { .. }) => continue,
                Err(e) => return Err(e),
            };
            let s = score(&candidate, nav, targets, spec.trials)?;
            evaluations += 1;
            if s.misfit < best_score.misfit {
                best = candidate;
                best_score = s;
            }
        }
    }
    Ok(CalibrationReport {
        params: best,
        misfit: best_score.misfit,
        evaluations,
        targets: best_score.reports,
    })
}
