use std::path::Path;
use std::process::{Command, Output};

fn biobot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biobot"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn misspelled_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[nav]\ngama_t = 20\n").unwrap();
    let o = biobot(&["trial", "--config", p(&cfg)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("gama_t"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&biobot(&["trial", "--no-such-flag"])), 1);
    assert_eq!(code(&biobot(&["trial", "--terrain", "swamp"])), 1);
    assert_eq!(
        code(&biobot(&["trial", "--config", "/nonexistent/run.toml"])),
        1
    );
    assert_eq!(
        code(&biobot(&["plot", "sideways", "--input", "x", "--out", "y"])),
        1
    );
    assert_eq!(code(&biobot(&[])), 1);
    assert_eq!(code(&biobot(&["--help"])), 0);
}

#[test]
fn power_prints_endurance() {
    let o = biobot(&["power"]);
    assert_eq!(code(&o), 0);
    let s = String::from_utf8(o.stdout).unwrap();
    assert!(s.contains("205.500 mW"), "{s}");
    assert!(s.contains("endurance 2.16 h"), "{s}");
}

#[test]
fn terrain_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&biobot(&["terrain", "all", "--out", p(dir.path())])),
        0
    );
    for k in ["no_obstacle", "low_obstacle", "tall_wall", "mock_disaster"] {
        let text = std::fs::read_to_string(dir.path().join(format!("{k}.toml"))).unwrap();
        biobot_core::arena::Arena::from_toml(&text).unwrap();
    }
}

#[test]
fn trial_replays_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let o = biobot(&[
        "trial",
        "--terrain",
        "tall_wall",
        "--algorithm",
        "simple",
        "--seed",
        "11",
        "--imu",
        "--out",
        p(dir.path()),
        "--svg",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = dir.path().join("trajectory.csv");
    let again = dir.path().join("again.csv");
    let o = biobot(&["replay", p(&csv), "--out", p(&again)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read(&csv).unwrap(), std::fs::read(&again).unwrap());
    let svg = dir.path().join("replot.svg");
    assert_eq!(
        code(&biobot(&[
            "plot",
            "trajectory",
            "--input",
            p(&csv),
            "--out",
            p(&svg)
        ])),
        0
    );
    assert_eq!(
        std::fs::read(&svg).unwrap(),
        std::fs::read(dir.path().join("trajectory.svg")).unwrap()
    );
}

#[test]
fn edited_output_fails_replay() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&biobot(&["trial", "--seed", "2", "--out", p(dir.path())])),
        0
    );
    let csv = dir.path().join("trajectory.csv");
    let mut text = std::fs::read_to_string(&csv).unwrap();
    text.push_str("0,0,0,0,forward,none,navigate,0,0,none,,,\n");
    std::fs::write(&csv, text).unwrap();
    assert_eq!(code(&biobot(&["replay", p(&csv)])), 2);
}

#[test]
fn batch_outputs_replay_and_config_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "seed = 40\ntrials = 4\nterrain = \"low_obstacle\"\n[nav]\ntick = 10\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = biobot(&[
        "batch",
        "--config",
        p(&cfg),
        "--algorithm",
        "predictive",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.contains("#> seeds = [40, 41, 42, 43]"), "{summary}");
    assert!(summary.contains("tick = 10.0"), "{summary}");
    for f in ["summary.csv", "trials.csv"] {
        let o = biobot(&["replay", p(&out.join(f))]);
        assert_eq!(code(&o), 0, "{f}: {}", stderr(&o));
    }
}

#[test]
fn mission_check_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let o = biobot(&["mission", "--seed", "0", "--out", p(dir.path()), "--check"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["trajectory.csv", "detections.csv"] {
        let o = biobot(&["replay", p(&dir.path().join(f))]);
        assert_eq!(code(&o), 0, "{f}: {}", stderr(&o));
    }
    let scenario = std::fs::read_to_string(dir.path().join("scenario.toml")).unwrap();
    biobot_core::mission::Scenario::from_toml(&scenario).unwrap();
}

#[test]
fn calibrate_miss_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let targets = dir.path().join("targets.toml");
    // 5 % success on the low obstacle is far from anything the model does
    std::fs::write(
        &targets,
        r#"
[[targets]]
statistic = "success_rate"
terrain = "low_obstacle"
algorithm = "predictive"
value = 0.05
tolerance = 0.01

[search]
params = []
iterations = 0
trials = 3
seed = 0
"#,
    )
    .unwrap();
    let o = biobot(&["calibrate", "--targets", p(&targets)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn synthetic_data_trains_and_detects() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(
        code(&biobot(&[
            "synth-data",
            "--scale",
            "0.01",
            "--out",
            p(&data)
        ])),
        0
    );
    let model = dir.path().join("model.txt");
    let o = biobot(&[
        "train",
        "--data",
        p(&data.join("manifest.csv")),
        "--mine-rounds",
        "0",
        "--out",
        p(&model),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = biobot(&[
        "detect",
        "--model",
        p(&model),
        p(&data.join("img_00000.txt")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let line = String::from_utf8(o.stdout).unwrap();
    assert!(
        ["human", "nonhuman", "none"]
            .iter()
            .any(|l| line.split('\t').nth(1) == Some(l)),
        "{line}"
    );
}
