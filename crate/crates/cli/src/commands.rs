use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use sha2::{Digest, Sha256};

use biobot_core::arena::{preset, Arena, TerrainKind};
use biobot_core::calibrate::{calibrate as fit, default_search, default_targets, CalibrationFile};
use biobot_core::config::{RawConfig, RunConfig, SpeedChoice};
use biobot_core::detection::{
    compare_cell_sizes, evaluate, shipped_detector, train_detector_mined, Detector, Kernel,
    MiningConfig, SvmConfig,
};
use biobot_core::harness::{
    check_bands, compute_metrics, run_batch, run_trial, BatchStats, TrialRecord, TrialSetup,
};
use biobot_core::io::{
    batch_summary_csv, batch_trials_csv, detection_csv, read_batch_summary, read_detections,
    read_trajectory, status_from, trajectory_csv, trial_provenance, Provenance,
};
use biobot_core::mission::{reference_scenario, run_mission, MissionRecord, Scenario};
use biobot_core::navigation::{Algorithm, Outcome, TrialStatus};
use biobot_core::plot::{batch_bars_svg, detection_timeline_svg, trajectory_svg};
use biobot_core::power::{power_budget, reference_components, Battery, PowerComponent};
use biobot_core::thermal::{
    read_dataset, synth_dataset, write_dataset, DatasetRecipe, LabeledImage, ThermalImage,
};
use biobot_core::Error;

use crate::SimArgs;

/// A bad flag value that clap could not catch.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Usage>().is_some() {
        return 1;
    }
    match e.downcast_ref::<Error>() {
        Some(
            Error::UnknownKey(_)
            | Error::MissingFile(_)
            | Error::Config { .. }
            | Error::InvalidParameter { .. }
            | Error::Parse { .. },
        ) => 1,
        _ => 2,
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()).into(),
        _ => anyhow::Error::new(e).context(format!("reading {}", path.display())),
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn parse_terrain(s: &str) -> Result<TerrainKind> {
    TerrainKind::parse(s).ok_or_else(|| usage(format!("unknown terrain `{s}`")))
}

fn parse_algorithm(s: &str) -> Result<Algorithm> {
    Algorithm::parse(s).ok_or_else(|| usage(format!("unknown algorithm `{s}`")))
}

/// The three comparison terrains; the mission arena is driven by `mission`.
fn all_terrains() -> Vec<TerrainKind> {
    TerrainKind::PRESETS.to_vec()
}

/// Config file plus flag overrides, resolved.
fn load_config(
    sim: &SimArgs,
    patch: impl FnOnce(&mut RawConfig) -> Result<()>,
) -> Result<RunConfig> {
    let mut raw = match &sim.config {
        Some(p) => RawConfig::load(p)?,
        None => RawConfig::default(),
    };
    if sim.seed.is_some() {
        raw.seed = sim.seed;
        raw.seeds = None;
    }
    patch(&mut raw)?;
    Ok(raw.resolve()?)
}

fn out_dir(sim: &SimArgs, cfg: &RunConfig) -> Option<PathBuf> {
    sim.out.clone().or_else(|| cfg.output_dir.clone())
}

fn outcome_text(s: &TrialStatus) -> String {
    format!("{} after {:.1} s", s.outcome.name(), s.elapsed_s)
}

pub fn terrain(kind: &str, out: Option<&Path>) -> Result<u8> {
    let kinds = if kind == "all" {
        let mut v = all_terrains();
        v.push(TerrainKind::MockDisaster);
        v
    } else {
        vec![parse_terrain(kind)?]
    };
    for k in kinds {
        let text = preset(k).to_toml();
        match out {
            Some(dir) => write(&dir.join(format!("{}.toml", k.name())), &text)?,
            None => println!("# {}\n{text}", k.name()),
        }
    }
    Ok(0)
}

// ---- trial -------------------------------------------------------------

fn trial_record(cfg: &RunConfig) -> Result<(Arena, TrialRecord)> {
    let arena = preset(cfg.terrain);
    let mut setup = TrialSetup::new(&arena, cfg.algorithm, &cfg.nav, &cfg.behavior);
    setup.speeds = cfg.speeds.source();
    let rec = run_trial(cfg.seed, &setup)?;
    Ok((arena, rec))
}

fn trial_csv(cfg: &RunConfig) -> Result<String> {
    let (_, rec) = trial_record(cfg)?;
    Ok(trajectory_csv(&trial_provenance(cfg, &rec), &rec.rows)?)
}

pub fn trial(
    sim: &SimArgs,
    terrain: Option<&str>,
    algorithm: Option<&str>,
    imu: bool,
    svg: bool,
) -> Result<u8> {
    let cfg = load_config(sim, |raw| {
        if let Some(t) = terrain {
            raw.terrain = Some(parse_terrain(t)?);
        }
        if let Some(a) = algorithm {
            raw.algorithm = Some(parse_algorithm(a)?);
        }
        if imu {
            raw.speeds = Some(SpeedChoice::Imu);
        }
        Ok(())
    })?;
    let out = out_dir(sim, &cfg);
    if svg && out.is_none() {
        return Err(usage("--svg needs --out"));
    }
    let (arena, rec) = trial_record(&cfg)?;
    let (w, v) = rec
        .metrics
        .accel_events
        .iter()
        .fold((0, 0), |(w, v), e| match e.trigger {
            biobot_core::navigation::CheckKind::Omega => (w + 1, v),
            biobot_core::navigation::CheckKind::LinearSpeed => (w, v + 1),
        });
    println!(
        "{} {} seed {}: {}",
        cfg.terrain.name(),
        cfg.algorithm.name(),
        cfg.seed,
        outcome_text(&rec.status)
    );
    println!(
        "  backward {:.1} s, accelerations {} (omega {w}, v_l {v})",
        rec.metrics.backward_time_s,
        w + v
    );
    if let Some((mode, theta)) = rec.metrics.first_climb {
        println!("  first climb {mode:?} at {theta:.1} deg");
    }
    if let Some(dir) = out {
        write(
            &dir.join("trajectory.csv"),
            &trajectory_csv(&trial_provenance(&cfg, &rec), &rec.rows)?,
        )?;
        if svg {
            write(
                &dir.join("trajectory.svg"),
                &trajectory_svg(&rec.rows, &arena, &rec.metrics.accel_events)?,
            )?;
        }
    }
    Ok(0)
}

// ---- batch -------------------------------------------------------------

struct BatchRun {
    stats: Vec<BatchStats>,
    records: Vec<TrialRecord>,
}

fn run_batches(
    cfg: &RunConfig,
    terrains: &[TerrainKind],
    algorithms: &[Algorithm],
) -> Result<BatchRun> {
    let mut stats = Vec::new();
    let mut records = Vec::new();
    for &t in terrains {
        let arena = preset(t);
        for &a in algorithms {
            let mut setup = TrialSetup::new(&arena, a, &cfg.nav, &cfg.behavior);
            setup.speeds = cfg.speeds.source();
            let (s, r) = run_batch(&cfg.seeds, &setup)?;
            stats.push(s);
            records.extend(r);
        }
    }
    Ok(BatchRun { stats, records })
}

fn join_names<T>(xs: &[T], name: impl Fn(&T) -> &'static str) -> String {
    xs.iter().map(name).collect::<Vec<_>>().join(",")
}

fn batch_prov(
    cfg: &RunConfig,
    terrains: &[TerrainKind],
    algorithms: &[Algorithm],
    file: &str,
) -> Provenance {
    Provenance::new("batch", cfg, cfg.seed)
        .with("terrains", join_names(terrains, |t| t.name()))
        .with("algorithms", join_names(algorithms, |a| a.name()))
        .with("file", file)
}

fn batch_file(
    cfg: &RunConfig,
    run: &BatchRun,
    t: &[TerrainKind],
    a: &[Algorithm],
    file: &str,
) -> Result<String> {
    let prov = batch_prov(cfg, t, a, file);
    Ok(match file {
        "summary" => batch_summary_csv(&prov, &run.stats)?,
        _ => batch_trials_csv(&prov, &run.records)?,
    })
}

fn print_stats(stats: &[BatchStats]) {
    println!(
        "{:<14} {:<10} {:>4} {:>8} {:>14} {:>12} {:>8} {:>8}",
        "terrain", "algorithm", "n", "success", "nav time s", "backward s", "theta_o", "theta_e"
    );
    for s in stats {
        let ms = |m: Option<biobot_core::harness::MeanSd>| match m {
            Some(m) => match m.sd {
                Some(sd) => format!("{:.1}±{:.1}", m.mean, sd),
                None => format!("{:.1}", m.mean),
            },
            None => "-".into(),
        };
        println!(
            "{:<14} {:<10} {:>4} {:>8.2} {:>14} {:>12} {:>8} {:>8}",
            s.terrain.name(),
            s.algorithm.name(),
            s.n,
            s.success_rate,
            ms(s.navigation_time),
            ms(s.backward_time),
            s.theta_orthogonal
                .map_or("-".into(), |m| format!("{:.1}", m.mean)),
            s.theta_edge
                .map_or("-".into(), |m| format!("{:.1}", m.mean)),
        );
    }
}

pub fn batch(
    sim: &SimArgs,
    terrain: Option<&str>,
    algorithm: Option<&str>,
    trials: Option<usize>,
    check: bool,
) -> Result<u8> {
    let mut cfg_terrain = None;
    let mut cfg_algorithm = None;
    let cfg = load_config(sim, |raw| {
        if let Some(n) = trials {
            raw.trials = Some(n);
            raw.seeds = None;
        }
        cfg_terrain = raw.terrain;
        cfg_algorithm = raw.algorithm;
        Ok(())
    })?;
    let terrains = match terrain {
        Some("all") => all_terrains(),
        Some(t) => vec![parse_terrain(t)?],
        None => cfg_terrain.map_or_else(all_terrains, |t| vec![t]),
    };
    let algorithms = match algorithm {
        Some("all") => vec![Algorithm::Simple, Algorithm::Predictive],
        Some(a) => vec![parse_algorithm(a)?],
        None => cfg_algorithm.map_or_else(
            || vec![Algorithm::Simple, Algorithm::Predictive],
            |a| vec![a],
        ),
    };
    let run = run_batches(&cfg, &terrains, &algorithms)?;
    print_stats(&run.stats);
    if let Some(dir) = out_dir(sim, &cfg) {
        write(
            &dir.join("summary.csv"),
            &batch_file(&cfg, &run, &terrains, &algorithms, "summary")?,
        )?;
        write(
            &dir.join("trials.csv"),
            &batch_file(&cfg, &run, &terrains, &algorithms, "trials")?,
        )?;
        write(&dir.join("bars.svg"), &batch_bars_svg(&run.stats)?)?;
    }
    if check {
        let bands = check_bands(&run.stats);
        if bands.is_empty() {
            return Err(usage("--check needs the low_obstacle or tall_wall batches"));
        }
        let mut missed = 0;
        for b in &bands {
            println!(
                "{} {:<32} {}",
                if b.passed { "PASS" } else { "MISS" },
                b.name,
                b.detail
            );
            missed += !b.passed as usize;
        }
        if missed > 0 {
            eprintln!("{missed} of {} bands missed", bands.len());
            return Ok(3);
        }
    }
    Ok(0)
}

// ---- calibrate ---------------------------------------------------------

pub fn calibrate(
    targets: Option<&Path>,
    iterations: Option<usize>,
    trials: Option<usize>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<u8> {
    let mut file = match targets {
        Some(p) => toml::from_str::<CalibrationFile>(&read(p)?).map_err(|e| Error::Config {
            path: p.display().to_string(),
            message: e.to_string(),
        })?,
        None => CalibrationFile {
            targets: default_targets(),
            search: default_search(),
        },
    };
    if let Some(n) = iterations {
        file.search.iterations = n;
    }
    if let Some(n) = trials {
        file.search.trials = n;
    }
    if let Some(s) = seed {
        file.search.seed = s;
    }
    let start = biobot_core::insect::BehaviorParams::default();
    let nav = biobot_core::navigation::NavParams::default();
    let report = fit(&start, &nav, &file.targets, &file.search)?;
    println!(
        "evaluations {}, misfit {:.4}",
        report.evaluations, report.misfit
    );
    for t in &report.targets {
        println!(
            "{} {:?} {} {}: target {} ± {}, achieved {}{}",
            if t.met { "MET " } else { "MISS" },
            t.target.statistic,
            t.target.terrain.name(),
            t.target.algorithm.name(),
            t.target.value,
            t.target.tolerance,
            t.achieved.map_or("-".into(), |x| format!("{x:.3}")),
            if t.target.mandatory {
                ""
            } else {
                " (advisory)"
            },
        );
    }
    let text = toml::to_string(&report.params).context("serializing parameters")?;
    match out {
        Some(p) => write(p, &text)?,
        None => print!("{text}"),
    }
    Ok(if report.mandatory_met() { 0 } else { 3 })
}

// ---- thermal data and detection ---------------------------------------

pub fn synth_data(
    recipe: Option<&Path>,
    split: &str,
    scale: f64,
    seed: u64,
    out: &Path,
) -> Result<u8> {
    let recipe = match recipe {
        Some(p) => DatasetRecipe::from_toml(&read(p)?)?,
        None => {
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(usage(format!("--scale {scale} must be positive")));
            }
            match split {
                "train" => DatasetRecipe::training(scale),
                "validation" => DatasetRecipe::validation(scale),
                _ => {
                    return Err(usage(format!(
                        "unknown split `{split}` (train or validation)"
                    )))
                }
            }
        }
    };
    let images = synth_dataset(&recipe, seed)?;
    let header = format!(
        "# biobot synth-data\n# recipe: {}\n# seed: {seed}\n",
        recipe.name
    );
    write_dataset(out, &images, &header)?;
    write(&out.join("recipe.toml"), &recipe.to_toml())?;
    let humans = images.iter().filter(|i| i.human).count();
    println!(
        "{} images ({humans} human, {} non-human) in {}",
        images.len(),
        images.len() - humans,
        out.display()
    );
    Ok(0)
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset manifest written by synth-data; synthesized if omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Training set size when synthesizing, as a fraction of full size.
    #[arg(long, default_value_t = 0.2)]
    pub scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// HOG cell size: 2, 4 or 8.
    #[arg(long, default_value_t = 4)]
    pub cell: usize,
    /// linear, or poly:DEGREE.
    #[arg(long, default_value = "linear")]
    pub kernel: String,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    /// Multiplies C for non-human examples.
    #[arg(long, default_value_t = 1.0)]
    pub negative_weight: f64,
    /// Hard-negative mining rounds; 0 disables mining.
    #[arg(long, default_value_t = 3)]
    pub mine_rounds: usize,
    #[arg(long, default_value_t = 8000)]
    pub mine_candidates: usize,
    #[arg(long, default_value_t = 0)]
    pub mine_seed: u64,
    #[arg(long, default_value = "model.txt")]
    pub out: PathBuf,
}

fn dataset(data: Option<&Path>, recipe: DatasetRecipe, seed: u64) -> Result<Vec<LabeledImage>> {
    match data {
        Some(p) => Ok(read_dataset(p)?),
        None => {
            if !(recipe.human_count.unwrap_or(1) > 0) {
                return Err(usage("empty recipe"));
            }
            Ok(synth_dataset(&recipe, seed)?)
        }
    }
}

fn check_scale(scale: f64) -> Result<()> {
    if scale > 0.0 && scale.is_finite() {
        Ok(())
    } else {
        Err(usage(format!("--scale {scale} must be positive")))
    }
}

pub fn train(a: &TrainArgs) -> Result<u8> {
    check_scale(a.scale)?;
    let images = dataset(a.data.as_deref(), DatasetRecipe::training(a.scale), a.seed)?;
    let mut svm = SvmConfig::new(Kernel::parse(&a.kernel)?, a.c);
    svm.negative_weight = a.negative_weight;
    let mining = MiningConfig {
        rounds: a.mine_rounds,
        candidates: a.mine_candidates,
        ..MiningConfig::default()
    };
    let (det, report) = train_detector_mined(&images, a.cell, &svm, &mining, a.mine_seed)?;
    println!(
        "trained on {} images, cell {}, kernel {}, C {}",
        images.len(),
        a.cell,
        det.svm.kernel.name(),
        a.c
    );
    if !report.added.is_empty() {
        println!("mined negatives per round: {:?}", report.added);
    }
    write(&a.out, &det.to_text())?;
    Ok(0)
}

fn load_model(path: Option<&Path>) -> Result<Detector> {
    match path {
        Some(p) => Ok(Detector::from_text(&read(p)?)?),
        None => Ok(shipped_detector()),
    }
}

#[derive(Args)]
pub struct EvalArgs {
    /// Default: the shipped model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Validation manifest; synthesized if omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    pub scale: f64,
    #[arg(long, default_value_t = 99)]
    pub seed: u64,
    /// Train at cell sizes 8, 4 and 2 and compare them instead.
    #[arg(long)]
    pub compare_cells: bool,
    /// Training set for --compare-cells.
    #[arg(long)]
    pub train_data: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    pub train_scale: f64,
    #[arg(long, default_value_t = 0)]
    pub train_seed: u64,
}

pub fn eval(a: &EvalArgs) -> Result<u8> {
    check_scale(a.scale)?;
    let val = dataset(
        a.data.as_deref(),
        DatasetRecipe::validation(a.scale),
        a.seed,
    )?;
    if a.compare_cells {
        check_scale(a.train_scale)?;
        let train = dataset(
            a.train_data.as_deref(),
            DatasetRecipe::training(a.train_scale),
            a.train_seed,
        )?;
        println!(
            "{:>5} {:>10} {:>10} {:>10} {:>10}",
            "cell", "accuracy", "balanced", "human", "nonhuman"
        );
        for (cell, m) in compare_cell_sizes(&train, &val, &SvmConfig::new(Kernel::Linear, 1.0))? {
            println!(
                "{cell:>5} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
                m.accuracy, m.balanced_accuracy, m.human_accuracy, m.nonhuman_accuracy
            );
        }
        return Ok(0);
    }
    let det = load_model(a.model.as_deref())?;
    let m = evaluate(&det, &val)?;
    let c = m.confusion;
    println!("images {} (gate open on {})", val.len(), m.gate_active);
    println!(
        "confusion: tp {} fn {} tn {} fp {}",
        c.tp, c.fn_, c.tn, c.fp
    );
    println!(
        "accuracy {:.4}, balanced {:.4}, human {:.4}, non-human {:.4}",
        m.accuracy, m.balanced_accuracy, m.human_accuracy, m.nonhuman_accuracy
    );
    println!("recall by distance:");
    for b in &m.recall_by_distance {
        if b.humans > 0 {
            println!(
                "  {:.1} m  {:.3} ({}/{})",
                b.distance_m,
                b.recall(),
                b.detected,
                b.humans
            );
        }
    }
    println!("per subject:");
    for (id, (n, ok)) in &m.per_subject {
        println!("  {id:<18} {:.3} ({ok}/{n})", *ok as f64 / *n as f64);
    }
    Ok(0)
}

pub fn detect(model: Option<&Path>, images: &[PathBuf]) -> Result<u8> {
    let det = load_model(model)?;
    for p in images {
        let img = ThermalImage::from_text(&read(p)?)?;
        let r = det.detect(&img)?;
        println!(
            "{}\t{}\thot {}\tscore {}",
            p.display(),
            r.label.as_str(),
            r.hot_pixel_count,
            r.score.map_or("-".into(), |s| format!("{s:.4}"))
        );
    }
    Ok(0)
}

// ---- mission -----------------------------------------------------------

fn scenario_of(cfg: &RunConfig) -> Result<Scenario> {
    Ok(match &cfg.scenario {
        Some(spec) => Scenario::from_spec(spec.clone())?,
        None => reference_scenario(),
    })
}

fn model_of(cfg: &RunConfig) -> Result<(Detector, String)> {
    let text = match &cfg.model_file {
        Some(p) => read(p)?,
        None => biobot_core::detection::SHIPPED_DETECTOR.to_string(),
    };
    let sha = hex::encode(Sha256::digest(text.as_bytes()));
    Ok((Detector::from_text(&text)?, sha))
}

fn mission_prov(cfg: &RunConfig, rec: &MissionRecord, sha: &str, file: &str) -> Provenance {
    Provenance::new("mission", cfg, cfg.seed)
        .with("scenario", &rec.scenario)
        .with("model_sha256", sha)
        .with("completed", rec.completed)
        .with("file", file)
}

fn mission_rows(rec: &MissionRecord) -> Vec<biobot_core::harness::TrialRow> {
    rec.legs
        .iter()
        .flat_map(|l| l.rows.iter().copied())
        .collect()
}

fn mission_file(cfg: &RunConfig, rec: &MissionRecord, sha: &str, file: &str) -> Result<String> {
    let prov = mission_prov(cfg, rec, sha, file);
    Ok(match file {
        "detections" => detection_csv(&prov, &rec.detections)?,
        _ => trajectory_csv(&prov, &mission_rows(rec))?,
    })
}

pub fn mission(
    sim: &SimArgs,
    scenario: Option<&Path>,
    model: Option<&Path>,
    svg: bool,
    check: bool,
) -> Result<u8> {
    let cfg = load_config(sim, |raw| {
        if let Some(p) = scenario {
            raw.scenario_file = Some(p.to_path_buf());
        }
        if let Some(p) = model {
            raw.model_file = Some(p.to_path_buf());
        }
        Ok(())
    })?;
    let out = out_dir(sim, &cfg);
    if svg && out.is_none() {
        return Err(usage("--svg needs --out"));
    }
    let sc = scenario_of(&cfg)?;
    let (det, sha) = model_of(&cfg)?;
    let rec = run_mission(&sc, &det, &cfg.nav, &cfg.behavior, cfg.seed)?;
    let hits = rec.human_hits(&sc, 1.5);
    let (w, v) = rec.accel_tally();
    let fa = rec.false_alarms();
    println!(
        "mission {} seed {}: {} ({} legs)",
        rec.scenario,
        cfg.seed,
        if rec.completed {
            "completed"
        } else {
            "incomplete"
        },
        rec.legs.len()
    );
    for (i, l) in rec.legs.iter().enumerate() {
        println!("  leg {}: {}", i + 1, outcome_text(&l.status));
    }
    println!(
        "  frames {}, gate open {}, false alarms {fa}",
        rec.detections.len(),
        rec.gate_activations()
    );
    for (id, hit) in &hits {
        println!("  {id}: {}", if *hit { "detected" } else { "missed" });
    }
    println!("  accelerations: omega {w}, v_l {v}");
    if let Some(dir) = &out {
        write(
            &dir.join("trajectory.csv"),
            &mission_file(&cfg, &rec, &sha, "trajectory")?,
        )?;
        write(
            &dir.join("detections.csv"),
            &mission_file(&cfg, &rec, &sha, "detections")?,
        )?;
        write(&dir.join("scenario.toml"), &sc.spec.to_toml())?;
        if svg {
            let events: Vec<_> = rec
                .legs
                .iter()
                .flat_map(|l| l.metrics.accel_events.iter().copied())
                .collect();
            write(
                &dir.join("trajectory.svg"),
                &trajectory_svg(&mission_rows(&rec), &sc.arena, &events)?,
            )?;
            let frames: Vec<_> = rec.detections.iter().map(|d| (d.t_s, d.result)).collect();
            write(&dir.join("timeline.svg"), &detection_timeline_svg(&frames)?)?;
        }
    }
    if check {
        let missed = hits.iter().filter(|(_, h)| !h).count();
        if !rec.completed || missed > 0 || fa > 0 {
            eprintln!(
                "mission check missed: completed {}, humans missed {missed}, false alarms {fa}",
                rec.completed
            );
            return Ok(3);
        }
    }
    Ok(0)
}

// ---- plot --------------------------------------------------------------

pub fn plot(kind: &str, input: &Path, out: &Path) -> Result<u8> {
    let text = read(input)?;
    let svg = match kind {
        "trajectory" => {
            let prov = Provenance::parse(&text)?;
            let cfg = prov.run_config()?;
            let rows = read_trajectory(&text)?;
            let arena = if prov.command == "mission" {
                scenario_of(&cfg)?.arena
            } else {
                preset(
                    prov.get("terrain")
                        .and_then(TerrainKind::parse)
                        .unwrap_or(cfg.terrain),
                )
            };
            let status = status_from(&prov).unwrap_or(TrialStatus {
                outcome: Outcome::Success,
                elapsed_s: rows.last().map_or(0.0, |r| r.t_ms / 1000.0),
            });
            let metrics = compute_metrics(&rows, status, &arena, &cfg.nav);
            trajectory_svg(&rows, &arena, &metrics.accel_events)?
        }
        "batch" => batch_bars_svg(&read_batch_summary(&text)?)?,
        "timeline" => detection_timeline_svg(&read_detections(&text)?)?,
        _ => {
            return Err(usage(format!(
                "unknown plot `{kind}` (trajectory, batch or timeline)"
            )))
        }
    };
    write(out, &svg)?;
    Ok(0)
}

// ---- power -------------------------------------------------------------

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentsFile {
    components: Vec<PowerComponent>,
}

pub fn power(components: Option<&Path>, capacity_mah: f64, voltage: f64) -> Result<u8> {
    let comps = match components {
        Some(p) => {
            toml::from_str::<ComponentsFile>(&read(p)?)
                .map_err(|e| Error::Config {
                    path: p.display().to_string(),
                    message: e.to_string(),
                })?
                .components
        }
        None => reference_components(),
    };
    let budget = power_budget(
        &comps,
        Battery {
            capacity_mah,
            voltage_v: voltage,
        },
    )?;
    for l in &budget.lines {
        println!("{:<24} {:>9.3} mW", l.name, l.average_mw);
    }
    println!("{:<24} {:>9.3} mW", "total", budget.total_mw);
    println!(
        "battery {} mAh at {} V = {:.3} Wh, endurance {:.2} h",
        capacity_mah, voltage, budget.energy_wh, budget.endurance_h
    );
    Ok(0)
}

// ---- replay ------------------------------------------------------------

fn names<T>(prov: &Provenance, key: &str, parse: fn(&str) -> Option<T>) -> Result<Vec<T>> {
    let v = prov
        .get(key)
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("provenance lacks `{key}`"),
        })?
        .split(',')
        .map(|s| {
            parse(s).ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("unknown {key} entry `{s}`"),
            })
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(v)
}

/// Regenerates the file described by a provenance header.
pub fn regenerate(text: &str) -> Result<String> {
    let prov = Provenance::parse(text)?;
    let cfg = prov.run_config()?;
    if prov.seed != cfg.seed {
        bail!(Error::Parse {
            line: 3,
            message: format!(
                "seed {} disagrees with the embedded config ({})",
                prov.seed, cfg.seed
            ),
        });
    }
    match prov.command.as_str() {
        "trial" => trial_csv(&cfg),
        "batch" => {
            let t = names(&prov, "terrains", TerrainKind::parse)?;
            let a = names(&prov, "algorithms", Algorithm::parse)?;
            let run = run_batches(&cfg, &t, &a)?;
            batch_file(&cfg, &run, &t, &a, prov.get("file").unwrap_or("summary"))
        }
        "mission" => {
            let (det, sha) = model_of(&cfg)?;
            if let Some(recorded) = prov.get("model_sha256") {
                if recorded != sha {
                    bail!("model file changed since the run (sha256 {sha}, recorded {recorded})");
                }
            }
            let rec = run_mission(&scenario_of(&cfg)?, &det, &cfg.nav, &cfg.behavior, cfg.seed)?;
            mission_file(&cfg, &rec, &sha, prov.get("file").unwrap_or("trajectory"))
        }
        other => Err(usage(format!("cannot replay `{other}` output"))),
    }
}

pub fn replay(input: &Path, out: Option<&Path>) -> Result<u8> {
    let original = read(input)?;
    let fresh = regenerate(&original)?;
    if let Some(p) = out {
        write(p, &fresh)?;
    }
    if fresh == original {
        println!("identical: {} ({} bytes)", input.display(), original.len());
        return Ok(0);
    }
    let line = original
        .lines()
        .zip(fresh.lines())
        .position(|(a, b)| a != b)
        .unwrap_or_else(|| original.lines().count().min(fresh.lines().count()));
    eprintln!(
        "replay differs from {} at line {}",
        input.display(),
        line + 1
    );
    Ok(2)
}
