//! Self-contained SVG figures: trajectories coloured by controller activity,
//! grouped batch bars, and the detection timeline.

use std::fmt::Write as _;

use crate::arena::{Arena, TerrainKind};
use crate::detection::{Label, GATE_MIN_PIXELS};
use crate::harness::{AccelEvent, BatchStats, TrialRow};
use crate::insect::StimulusKind;
use crate::navigation::{Algorithm, CheckKind};
use crate::{Error, Result};

/// Stimulus class of a trajectory segment and its stroke colour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stroke {
    Free,
    /// Target on the left: right cercus stimulated.
    SteerLeft,
    SteerRight,
    Accelerate,
}

impl Stroke {
    pub fn of(cmd: StimulusKind) -> Stroke {
        match cmd {
            StimulusKind::None => Stroke::Free,
            StimulusKind::RightCercus => Stroke::SteerLeft,
            StimulusKind::LeftCercus => Stroke::SteerRight,
            StimulusKind::Accelerate => Stroke::Accelerate,
        }
    }

    pub fn class(self) -> &'static str {
        match self {
            Stroke::Free => "free",
            Stroke::SteerLeft => "steer-left",
            Stroke::SteerRight => "steer-right",
            Stroke::Accelerate => "accelerate",
        }
    }

    pub fn colour(self) -> &'static str {
        match self {
            Stroke::Free => "black",
            Stroke::SteerLeft => "green",
            Stroke::SteerRight => "red",
            Stroke::Accelerate => "cyan",
        }
    }
}

const STYLE: &str = "<style>text{font-family:sans-serif;font-size:11px}</style>";

fn open(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">{STYLE}\n"
    )
}

/// Maps arena cm to pixels with y pointing up.
struct Frame {
    x0: f64,
    y1: f64,
    k: f64,
    margin: f64,
}

impl Frame {
    fn x(&self, x: f64) -> f64 {
        self.margin + (x - self.x0) * self.k
    }
    fn y(&self, y: f64) -> f64 {
        self.margin + (self.y1 - y) * self.k
    }
}

/// Splits rows into runs of equal stroke class. Consecutive runs share
/// their boundary point so the path is continuous.
pub fn segments(rows: &[TrialRow]) -> Vec<(Stroke, Vec<&TrialRow>)> {
    let mut out: Vec<(Stroke, Vec<&TrialRow>)> = Vec::new();
    for r in rows {
        let s = Stroke::of(r.cmd);
        match out.last_mut() {
            Some((cur, pts)) if *cur == s => pts.push(r),
            Some((_, pts)) => {
                let join = *pts.last().expect("runs are non-empty");
                out.push((s, vec![join, r]));
            }
            None => out.push((s, vec![r])),
        }
    }
    out
}

pub fn trajectory_svg(rows: &[TrialRow], arena: &Arena, accel: &[AccelEvent]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::EmptyRecord);
    }
    let b = arena.bounds;
    let width = 640.0;
    let margin = 20.0;
    let k = (width - 2.0 * margin) / b.width();
    let height = b.height() * k + 2.0 * margin + 20.0;
    let f = Frame {
        x0: b.min.x,
        y1: b.max.y,
        k,
        margin,
    };
    let mut s = open(width, height);
    writeln!(
        s,
        "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#999\"/>",
        f.x(b.min.x),
        f.y(b.max.y),
        b.width() * k,
        b.height() * k
    )
    .unwrap();
    for o in &arena.obstacles {
        let w = (o.thickness * k).max(1.0);
        let colour = if o.climbable() { "#b08850" } else { "#555" };
        writeln!(
            s,
            "<line class=\"obstacle\" x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"{colour}\" stroke-width=\"{w:.1}\"/>",
            f.x(o.a.x),
            f.y(o.a.y),
            f.x(o.b.x),
            f.y(o.b.y)
        )
        .unwrap();
    }
    for (i, d) in std::iter::once(&arena.origin)
        .chain(&arena.targets)
        .enumerate()
    {
        let colour = if i == 0 { "green" } else { "red" };
        writeln!(
            s,
            "<circle class=\"target\" cx=\"{:.1}\" cy=\"{:.1}\" r=\"{:.1}\" fill=\"none\" stroke=\"{colour}\"/>",
            f.x(d.center.x),
            f.y(d.center.y),
            d.radius * k
        )
        .unwrap();
    }
    for (stroke, pts) in segments(rows) {
        let mut d = String::new();
        for (i, r) in pts.iter().enumerate() {
            let cmd = if i == 0 { 'M' } else { 'L' };
            write!(
                d,
                "{cmd}{:.2},{:.2} ",
                f.x(r.pose.position.x),
                f.y(r.pose.position.y)
            )
            .unwrap();
        }
        writeln!(
            s,
            "<path class=\"{}\" d=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>",
            stroke.class(),
            d.trim_end(),
            stroke.colour()
        )
        .unwrap();
    }
    // threshold crossings: pink for v_l, blue for ω
    for e in accel {
        let (class, colour) = match e.trigger {
            CheckKind::Omega => ("cross-omega", "blue"),
            CheckKind::LinearSpeed => ("cross-vl", "deeppink"),
        };
        let (x, y) = (f.x(e.position.x), f.y(e.position.y));
        writeln!(
            s,
            "<polygon class=\"{class}\" points=\"{:.1},{:.1} {:.1},{:.1} {:.1},{:.1}\" fill=\"{colour}\"/>",
            x,
            y - 5.0,
            x - 4.0,
            y + 3.0,
            x + 4.0,
            y + 3.0
        )
        .unwrap();
    }
    let legend = [
        Stroke::Free,
        Stroke::SteerLeft,
        Stroke::SteerRight,
        Stroke::Accelerate,
    ];
    for (i, st) in legend.iter().enumerate() {
        let x = margin + i as f64 * 110.0;
        let y = height - 8.0;
        writeln!(
            s,
            "<line x1=\"{x:.0}\" y1=\"{:.0}\" x2=\"{:.0}\" y2=\"{:.0}\" stroke=\"{}\" stroke-width=\"2\"/><text x=\"{:.0}\" y=\"{y:.0}\">{}</text>",
            y - 4.0,
            x + 16.0,
            y - 4.0,
            st.colour(),
            x + 20.0,
            st.class()
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn algorithm_colour(a: Algorithm) -> &'static str {
    match a {
        Algorithm::Simple => "#7a7a7a",
        Algorithm::Predictive => "#2b6cb0",
    }
}

/// Two panels, success rate and navigation time (mean with sd whiskers),
/// with one group per terrain and one bar per algorithm in each group.
pub fn batch_bars_svg(stats: &[BatchStats]) -> Result<String> {
    if stats.is_empty() {
        return Err(Error::EmptyRecord);
    }
    let mut terrains: Vec<TerrainKind> = Vec::new();
    let mut algorithms: Vec<Algorithm> = Vec::new();
    for s in stats {
        if !terrains.contains(&s.terrain) {
            terrains.push(s.terrain);
        }
        if !algorithms.contains(&s.algorithm) {
            algorithms.push(s.algorithm);
        }
    }
    let (panel_w, panel_h, margin) = (360.0, 220.0, 40.0);
    let width = 2.0 * panel_w + 3.0 * margin;
    let height = panel_h + 2.0 * margin + 20.0;
    let max_time = stats
        .iter()
        .filter_map(|s| s.navigation_time.map(|m| m.mean + m.sd.unwrap_or(0.0)))
        .fold(0.0, f64::max)
        .max(1.0);
    let group_w = panel_w / terrains.len() as f64;
    let bar_w = group_w * 0.7 / algorithms.len() as f64;
    let mut s = open(width, height);
    for (p, (title, top)) in [("success rate", 1.0), ("navigation time (s)", max_time)]
        .iter()
        .enumerate()
    {
        let x0 = margin + p as f64 * (panel_w + margin);
        let base = margin + panel_h;
        writeln!(
            s,
            "<text x=\"{x0:.0}\" y=\"{:.0}\">{title}</text>",
            margin - 10.0
        )
        .unwrap();
        writeln!(
            s,
            "<line x1=\"{x0:.0}\" y1=\"{base:.0}\" x2=\"{:.0}\" y2=\"{base:.0}\" stroke=\"black\"/>",
            x0 + panel_w
        )
        .unwrap();
        for (ti, t) in terrains.iter().enumerate() {
            let gx = x0 + ti as f64 * group_w + group_w * 0.15;
            writeln!(
                s,
                "<text x=\"{gx:.0}\" y=\"{:.0}\">{}</text>",
                base + 14.0,
                t.name()
            )
            .unwrap();
            for (ai, a) in algorithms.iter().enumerate() {
                let Some(st) = stats.iter().find(|x| x.terrain == *t && x.algorithm == *a) else {
                    continue;
                };
                let (value, whisker) = if p == 0 {
                    (st.success_rate, None)
                } else {
                    match st.navigation_time {
                        Some(m) => (m.mean, m.sd),
                        None => (0.0, None),
                    }
                };
                let h = value / top * panel_h;
                let x = gx + ai as f64 * bar_w;
                writeln!(
                    s,
                    "<rect class=\"bar {}\" x=\"{x:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{h:.1}\" fill=\"{}\"><title>{} {} {value:.3}</title></rect>",
                    if p == 0 { "success" } else { "time" },
                    base - h,
                    bar_w * 0.9,
                    algorithm_colour(*a),
                    t.name(),
                    a.name()
                )
                .unwrap();
                if let Some(sd) = whisker {
                    let cx = x + bar_w * 0.45;
                    let lo = base - (value - sd).max(0.0) / top * panel_h;
                    let hi = base - (value + sd) / top * panel_h;
                    writeln!(
                        s,
                        "<line class=\"whisker\" x1=\"{cx:.1}\" y1=\"{lo:.1}\" x2=\"{cx:.1}\" y2=\"{hi:.1}\" stroke=\"black\"/>"
                    )
                    .unwrap();
                }
            }
        }
    }
    for (ai, a) in algorithms.iter().enumerate() {
        let x = margin + ai as f64 * 120.0;
        let y = height - 8.0;
        writeln!(
            s,
            "<rect x=\"{x:.0}\" y=\"{:.0}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{:.0}\" y=\"{y:.0}\">{}</text>",
            y - 9.0,
            algorithm_colour(*a),
            x + 14.0,
            a.name()
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// In-band pixel count over time (blue curve) with the gate threshold,
/// and classifier scores as dots (red for Human, grey otherwise).
pub fn detection_timeline_svg(
    frames: &[(f64, crate::detection::DetectionResult)],
) -> Result<String> {
    if frames.is_empty() {
        return Err(Error::EmptyRecord);
    }
    let (width, margin) = (720.0, 40.0);
    let (count_h, score_h) = (160.0, 120.0);
    let height = count_h + score_h + 3.0 * margin;
    let t_max = frames.iter().map(|f| f.0).fold(1.0, f64::max);
    let c_max = frames
        .iter()
        .map(|f| f.1.hot_pixel_count as f64)
        .fold(2.0 * GATE_MIN_PIXELS as f64, f64::max);
    let s_max = frames
        .iter()
        .filter_map(|f| f.1.score)
        .fold(1.0_f64, |m, v| m.max(v.abs()));
    let x = |t: f64| margin + t / t_max * (width - 2.0 * margin);
    let cy = |c: f64| margin + count_h * (1.0 - c / c_max);
    let sy0 = 2.0 * margin + count_h + score_h / 2.0;
    let sy = |v: f64| sy0 - v / s_max * score_h / 2.0;
    let mut s = open(width, height);
    writeln!(
        s,
        "<text x=\"{margin:.0}\" y=\"{:.0}\">in-band pixels</text>",
        margin - 8.0
    )
    .unwrap();
    let thr = cy(GATE_MIN_PIXELS as f64);
    writeln!(
        s,
        "<line class=\"gate\" x1=\"{margin:.0}\" y1=\"{thr:.1}\" x2=\"{:.0}\" y2=\"{thr:.1}\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>",
        width - margin
    )
    .unwrap();
    let pts: Vec<String> = frames
        .iter()
        .map(|(t, r)| format!("{:.1},{:.1}", x(*t), cy(r.hot_pixel_count as f64)))
        .collect();
    writeln!(
        s,
        "<polyline class=\"hot-count\" points=\"{}\" fill=\"none\" stroke=\"blue\"/>",
        pts.join(" ")
    )
    .unwrap();
    writeln!(
        s,
        "<text x=\"{margin:.0}\" y=\"{:.0}\">score</text>",
        2.0 * margin + count_h - 8.0
    )
    .unwrap();
    writeln!(
        s,
        "<line x1=\"{margin:.0}\" y1=\"{sy0:.1}\" x2=\"{:.0}\" y2=\"{sy0:.1}\" stroke=\"black\"/>",
        width - margin
    )
    .unwrap();
    for (t, r) in frames {
        if let Some(v) = r.score {
            let (class, colour) = if r.label == Label::Human {
                ("score human", "red")
            } else {
                ("score", "#999")
            };
            writeln!(
                s,
                "<circle class=\"{class}\" cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{colour}\"/>",
                x(*t),
                sy(v)
            )
            .unwrap();
        }
    }
    writeln!(
        s,
        "<text x=\"{:.0}\" y=\"{:.0}\">t (s)</text>",
        width - margin - 20.0,
        height - 8.0
    )
    .unwrap();
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arena::preset;
    use crate::detection::DetectionResult;
    use crate::harness::{aggregate, run_trial, TrialSetup};
    use crate::insect::BehaviorParams;
    use crate::navigation::NavParams;

    #[test]
    fn one_path_per_segment() {
        let arena = preset(TerrainKind::TallWall);
        let (nav, bp) = (NavParams::default(), BehaviorParams::default());
        let rec = run_trial(
            3,
            &TrialSetup::new(&arena, Algorithm::Predictive, &nav, &bp),
        )
        .unwrap();
        let svg = trajectory_svg(&rec.rows, &arena, &rec.metrics.accel_events).unwrap();
        let runs = 1 + rec
            .rows
            .windows(2)
            .filter(|w| Stroke::of(w[0].cmd) != Stroke::of(w[1].cmd))
            .count();
        assert_eq!(svg.matches("<path ").count(), runs);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        let marks = svg.matches("class=\"cross-").count();
        assert_eq!(marks, rec.metrics.accel_events.len());
    }

    #[test]
    fn six_grouped_bars() {
        let (nav, bp) = (NavParams::default(), BehaviorParams::default());
        let mut stats = Vec::new();
        for t in TerrainKind::PRESETS {
            let arena = preset(t);
            for a in [Algorithm::Simple, Algorithm::Predictive] {
                let recs: Vec<_> = (0..2)
                    .map(|s| run_trial(s, &TrialSetup::new(&arena, a, &nav, &bp)).unwrap())
                    .collect();
                stats.push(aggregate(&recs).unwrap());
            }
        }
        let svg = batch_bars_svg(&stats).unwrap();
        assert_eq!(svg.matches("class=\"bar success\"").count(), 6);
        assert_eq!(svg.matches("class=\"bar time\"").count(), 6);
    }

    #[test]
    fn timeline_has_curve_and_dots() {
        let r = |c, s: Option<f64>, l| DetectionResult {
            gate_active: s.is_some(),
            hot_pixel_count: c,
            score: s,
            label: l,
        };
        let frames = vec![
            (0.0, r(2, None, Label::NoCandidate)),
            (1.0, r(30, Some(0.8), Label::Human)),
            (2.0, r(20, Some(-0.5), Label::NonHuman)),
        ];
        let svg = detection_timeline_svg(&frames).unwrap();
        assert_eq!(svg.matches("class=\"hot-count\"").count(), 1);
        assert_eq!(svg.matches("class=\"score").count(), 2);
        assert_eq!(svg.matches("class=\"score human\"").count(), 1);
    }

    #[test]
    fn empty_inputs_rejected() {
        let arena = preset(TerrainKind::NoObstacle);
        assert!(matches!(
            trajectory_svg(&[], &arena, &[]),
            Err(Error::EmptyRecord)
        ));
        assert!(matches!(batch_bars_svg(&[]), Err(Error::EmptyRecord)));
        assert!(matches!(
            detection_timeline_svg(&[]),
            Err(Error::EmptyRecord)
        ));
    }
}
