//! CSV logs with an embedded provenance header.
//!
//! Every file starts with `#` lines: the command, the config hash, the
//! seed, free `key: value` metadata and the full resolved config (`#>`
//! lines). CSV readers skip them as comments.

use std::fmt::Write as _;

use crate::arena::TerrainKind;
use crate::config::RunConfig;
use crate::detection::{DetectionResult, Label};
use crate::geometry::{Pose, Vec2};
use crate::harness::{BatchStats, MeanSd, TrialRecord, TrialRow};
use crate::insect::{ClimbMode, Maneuver, StimulusKind};
use crate::mission::DetectionLogRow;
use crate::navigation::{Algorithm, FailReason, Outcome, Phase, TrialStatus};
use crate::sensing::Side;
use crate::{Error, Result};

pub const TRAJECTORY_COLUMNS: [&str; 13] = [
    "t_ms",
    "x_cm",
    "y_cm",
    "heading_deg",
    "maneuver",
    "cmd",
    "phase",
    "D_cm",
    "gamma_deg",
    "side",
    "omega_dps",
    "vl_cmps",
    "vf_cmps",
];
pub const DETECTION_COLUMNS: [&str; 5] = ["t_s", "gate_active", "hot_count", "score", "label"];

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub meta: Vec<(String, String)>,
    /// Canonical resolved config text.
    pub config: String,
}

impl Provenance {
    pub fn new(command: &str, cfg: &RunConfig, seed: u64) -> Self {
        Provenance {
            command: command.into(),
            config_hash: cfg.hash(),
            seed,
            meta: Vec::new(),
            config: cfg.to_toml(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.into(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn header(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# biobot {}", self.command).unwrap();
        writeln!(s, "# config_hash: {}", self.config_hash).unwrap();
        writeln!(s, "# seed: {}", self.seed).unwrap();
        for (k, v) in &self.meta {
            writeln!(s, "# {k}: {v}").unwrap();
        }
        for line in self.config.lines() {
            writeln!(s, "#> {line}").unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut command = None;
        let mut hash = None;
        let mut seed = None;
        let mut meta = Vec::new();
        let mut config = String::new();
        for (i, line) in text.lines().enumerate() {
            let Some(rest) = line.strip_prefix('#') else {
                break;
            };
            if let Some(c) = rest.strip_prefix('>') {
                config.push_str(c.strip_prefix(' ').unwrap_or(c));
                config.push('\n');
            } else if let Some(c) = rest.strip_prefix(" biobot ") {
                command = Some(c.trim().to_string());
            } else if let Some((k, v)) = rest.trim().split_once(": ") {
                match k {
                    "config_hash" => hash = Some(v.to_string()),
                    "seed" => {
                        seed = Some(v.parse().map_err(|_| Error::Parse {
                            line: i + 1,
                            message: format!("bad seed `{v}`"),
                        })?)
                    }
                    _ => meta.push((k.to_string(), v.to_string())),
                }
            }
        }
        let missing = |what: &str| Error::Parse {
            line: 1,
            message: format!("provenance header lacks {what}"),
        };
        Ok(Provenance {
            command: command.ok_or_else(|| missing("the command"))?,
            config_hash: hash.ok_or_else(|| missing("config_hash"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
            meta,
            config,
        })
    }

    /// The embedded config, checked against the recorded hash.
    pub fn run_config(&self) -> Result<RunConfig> {
        let cfg = RunConfig::from_toml(&self.config)?;
        let h = cfg.hash();
        if h != self.config_hash {
            return Err(Error::Config {
                path: "embedded config".into(),
                message: format!("hash {h} does not match recorded {}", self.config_hash),
            });
        }
        Ok(cfg)
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn bad(line: u64, message: String) -> Error {
    Error::Parse {
        line: line as usize,
        message,
    }
}

fn field(rec: &csv::StringRecord, i: usize, line: u64) -> Result<&str> {
    rec.get(i)
        .ok_or_else(|| bad(line, format!("missing column {i}")))
}

fn named<T>(
    rec: &csv::StringRecord,
    i: usize,
    line: u64,
    parse: fn(&str) -> Option<T>,
) -> Result<T> {
    let s = field(rec, i, line)?;
    parse(s).ok_or_else(|| bad(line, format!("unknown value `{s}`")))
}

fn parse_f64(s: &str, line: u64) -> Result<f64> {
    s.parse()
        .map_err(|_| bad(line, format!("not a number: `{s}`")))
}

fn parse_opt(s: &str, line: u64) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f64(s, line).map(Some)
    }
}

fn csv_text(
    prov: &Provenance,
    columns: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(columns)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
        .expect("utf-8 csv");
    Ok(prov.header() + &body)
}

fn records(text: &str, columns: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = r.headers()?.clone();
    if header.iter().ne(columns.iter().copied()) {
        return Err(bad(1, format!("expected columns {}", columns.join(","))));
    }
    r.records()
        .map(|rec| {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            Ok((line, rec))
        })
        .collect()
}

pub fn trajectory_csv(prov: &Provenance, rows: &[TrialRow]) -> Result<String> {
    csv_text(
        prov,
        &TRAJECTORY_COLUMNS,
        rows.iter().map(|r| {
            vec![
                num(r.t_ms),
                num(r.pose.position.x),
                num(r.pose.position.y),
                num(r.pose.heading_deg),
                r.maneuver.name().into(),
                r.cmd.name().into(),
                r.phase.name().into(),
                num(r.distance),
                num(r.gamma),
                r.side.name().into(),
                opt(r.omega),
                opt(r.v_l),
                opt(r.v_f),
            ]
        }),
    )
}

pub fn read_trajectory(text: &str) -> Result<Vec<TrialRow>> {
    records(text, &TRAJECTORY_COLUMNS)?
        .into_iter()
        .map(|(line, rec)| {
            let f = |i| field(&rec, i, line);
            Ok(TrialRow {
                t_ms: parse_f64(f(0)?, line)?,
                pose: Pose {
                    position: Vec2::new(parse_f64(f(1)?, line)?, parse_f64(f(2)?, line)?),
                    heading_deg: parse_f64(f(3)?, line)?,
                },
                maneuver: named(&rec, 4, line, Maneuver::parse)?,
                cmd: named(&rec, 5, line, StimulusKind::parse)?,
                phase: named(&rec, 6, line, Phase::parse)?,
                distance: parse_f64(f(7)?, line)?,
                gamma: parse_f64(f(8)?, line)?,
                side: named(&rec, 9, line, Side::parse)?,
                omega: parse_opt(f(10)?, line)?,
                v_l: parse_opt(f(11)?, line)?,
                v_f: parse_opt(f(12)?, line)?,
            })
        })
        .collect()
}

/// Provenance for one trial, carrying its terminal status.
pub fn trial_provenance(cfg: &RunConfig, record: &TrialRecord) -> Provenance {
    Provenance::new("trial", cfg, record.seed)
        .with("terrain", record.terrain.name())
        .with("algorithm", record.algorithm.name())
        .with("outcome", record.status.outcome.name())
        .with("elapsed_s", num(record.status.elapsed_s))
}

pub fn status_from(prov: &Provenance) -> Result<TrialStatus> {
    let outcome = prov
        .get("outcome")
        .and_then(Outcome::parse)
        .ok_or_else(|| bad(1, "missing or unknown outcome".into()))?;
    let elapsed_s = prov
        .get("elapsed_s")
        .ok_or_else(|| bad(1, "missing elapsed_s".into()))
        .and_then(|s| parse_f64(s, 1))?;
    Ok(TrialStatus { outcome, elapsed_s })
}

pub fn detection_csv(prov: &Provenance, rows: &[DetectionLogRow]) -> Result<String> {
    csv_text(
        prov,
        &DETECTION_COLUMNS,
        rows.iter().map(|d| {
            vec![
                num(d.t_s),
                (d.result.gate_active as u8).to_string(),
                d.result.hot_pixel_count.to_string(),
                opt(d.result.score),
                d.result.label.as_str().into(),
            ]
        }),
    )
}

/// (t_s, result) pairs from a detection log.
pub fn read_detections(text: &str) -> Result<Vec<(f64, DetectionResult)>> {
    records(text, &DETECTION_COLUMNS)?
        .into_iter()
        .map(|(line, rec)| {
            let f = |i| field(&rec, i, line);
            let gate_active = match f(1)? {
                "1" => true,
                "0" => false,
                other => return Err(bad(line, format!("gate_active `{other}`"))),
            };
            let hot = f(2)?;
            Ok((
                parse_f64(f(0)?, line)?,
                DetectionResult {
                    gate_active,
                    hot_pixel_count: hot
                        .parse()
                        .map_err(|_| bad(line, format!("hot_count `{hot}`")))?,
                    score: parse_opt(f(3)?, line)?,
                    label: Label::parse(f(4)?)
                        .ok_or_else(|| bad(line, format!("label `{}`", f(4).unwrap_or(""))))?,
                },
            ))
        })
        .collect()
}

pub const BATCH_TRIAL_COLUMNS: [&str; 11] = [
    "seed",
    "terrain",
    "algorithm",
    "outcome",
    "elapsed_s",
    "navigation_time_s",
    "backward_time_s",
    "climb_mode",
    "climb_theta_deg",
    "accel_omega",
    "accel_vl",
];

pub fn batch_trials_csv(prov: &Provenance, records: &[TrialRecord]) -> Result<String> {
    csv_text(
        prov,
        &BATCH_TRIAL_COLUMNS,
        records.iter().map(|r| {
            let m = &r.metrics;
            let (mode, theta) = match m.first_climb {
                Some((ClimbMode::Orthogonal, t)) => ("orthogonal", num(t)),
                Some((ClimbMode::Edge, t)) => ("edge", num(t)),
                None => ("none", String::new()),
            };
            let omega = m
                .accel_events
                .iter()
                .filter(|e| e.trigger == crate::navigation::CheckKind::Omega)
                .count();
            vec![
                r.seed.to_string(),
                r.terrain.name().into(),
                r.algorithm.name().into(),
                r.status.outcome.name().into(),
                num(r.status.elapsed_s),
                opt(m.navigation_time_s),
                num(m.backward_time_s),
                mode.into(),
                theta,
                omega.to_string(),
                (m.accel_events.len() - omega).to_string(),
            ]
        }),
    )
}

pub const BATCH_SUMMARY_COLUMNS: [&str; 22] = [
    "terrain",
    "algorithm",
    "n",
    "successes",
    "success_rate",
    "nav_n",
    "nav_mean_s",
    "nav_sd_s",
    "backward_n",
    "backward_mean_s",
    "backward_sd_s",
    "fail_immobile_stimulated",
    "fail_immobile_unstimulated",
    "fail_timeout",
    "climb_orthogonal",
    "climb_edge",
    "climb_none",
    "theta_orthogonal_mean",
    "theta_orthogonal_sd",
    "theta_edge_mean",
    "theta_edge_sd",
    "accel_omega_vl",
];

fn mean_sd_cells(m: Option<MeanSd>) -> [String; 3] {
    match m {
        Some(m) => [m.n.to_string(), num(m.mean), opt(m.sd)],
        None => ["0".into(), String::new(), String::new()],
    }
}

pub fn batch_summary_csv(prov: &Provenance, stats: &[BatchStats]) -> Result<String> {
    csv_text(
        prov,
        &BATCH_SUMMARY_COLUMNS,
        stats.iter().map(|s| {
            let mut row = vec![
                s.terrain.name().to_string(),
                s.algorithm.name().into(),
                s.n.to_string(),
                s.successes.to_string(),
                num(s.success_rate),
            ];
            row.extend(mean_sd_cells(s.navigation_time));
            row.extend(mean_sd_cells(s.backward_time));
            row.extend(FailReason::ALL.map(|r| s.failure_count(r).to_string()));
            row.extend([
                s.climb_counts.0.to_string(),
                s.climb_counts.1.to_string(),
                s.climb_counts.2.to_string(),
            ]);
            for m in [s.theta_orthogonal, s.theta_edge] {
                row.push(m.map(|m| num(m.mean)).unwrap_or_default());
                row.push(m.and_then(|m| m.sd).map(num).unwrap_or_default());
            }
            row.push(format!("{}/{}", s.accel_by_trigger.0, s.accel_by_trigger.1));
            row
        }),
    )
}

pub fn read_batch_summary(text: &str) -> Result<Vec<BatchStats>> {
    records(text, &BATCH_SUMMARY_COLUMNS)?
        .into_iter()
        .map(|(line, rec)| {
            let f = |i| field(&rec, i, line);
            let int = |i| -> Result<usize> {
                let s = f(i)?;
                s.parse()
                    .map_err(|_| bad(line, format!("not a count: `{s}`")))
            };
            let mean_sd = |i: usize| -> Result<Option<MeanSd>> {
                let n = int(i)?;
                if n == 0 {
                    return Ok(None);
                }
                Ok(Some(MeanSd {
                    n,
                    mean: parse_f64(f(i + 1)?, line)?,
                    sd: parse_opt(f(i + 2)?, line)?,
                }))
            };
            let theta = |i: usize, n: usize| -> Result<Option<MeanSd>> {
                Ok(parse_opt(f(i)?, line)?.map(|mean| MeanSd {
                    n,
                    mean,
                    sd: parse_opt(f(i + 1).unwrap_or(""), line).ok().flatten(),
                }))
            };
            let climb = (int(14)?, int(15)?, int(16)?);
            let (w, v) = f(21)?
                .split_once('/')
                .ok_or_else(|| bad(line, "accel tally must be ω/v_l".into()))?;
            let count = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| bad(line, format!("not a count: `{s}`")))
            };
            let n = int(2)?;
            let successes = int(3)?;
            Ok(BatchStats {
                terrain: TerrainKind::parse(f(0)?)
                    .ok_or_else(|| bad(line, format!("terrain `{}`", f(0).unwrap_or(""))))?,
                algorithm: Algorithm::parse(f(1)?)
                    .ok_or_else(|| bad(line, format!("algorithm `{}`", f(1).unwrap_or(""))))?,
                n,
                successes,
                success_rate: parse_f64(f(4)?, line)?,
                navigation_time: mean_sd(5)?,
                backward_time: mean_sd(8)?,
                failures: [
                    (FailReason::ImmobileStimulated, int(11)?),
                    (FailReason::ImmobileUnstimulated, int(12)?),
                    (FailReason::Timeout, int(13)?),
                ],
                climb_counts: climb,
                theta_orthogonal: theta(17, climb.0)?,
                theta_edge: theta(19, climb.1)?,
                accel_by_trigger: (count(w)?, count(v)?),
            })
        })
        .collect()
}
