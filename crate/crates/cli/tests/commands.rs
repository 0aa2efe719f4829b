use std::path::{Path, PathBuf};
use std::process::Command;

use dpolicy_cli::commands::{
    cmd_eval, cmd_gen_data, cmd_plot, cmd_train, EvalOptions, TrainOptions, CHECKPOINT_FILE, EMA_CHECKPOINT_FILE,
    METRICS_FILE,
};
use dpolicy_cli::metrics::{read_rows, HEADER};
use dpolicy_cli::CliError;
use dpolicy_core::data::DemoStore;
use sha2::{Digest, Sha256};

const GRID: &str = r#"
[env]
kind = "grid"
size = 5
max_steps = 30

[data]
episodes = 5
seed = 3

[model.encoder]
mode = "state"
embed_dim = 16
state_hidden = 16

[model.denoiser]
arch = "film_mlp"
hidden = [32, 32]

[model.schedule]
kind = "cosine"
steps = 10
beta_start = 0.0001
beta_end = 0.02

[optim]
learning_rate = 0.001
batch_size = 8
train_steps = 50
ema_decay = 0.9
eval_period = 25
seed = 4

[optim.lr_schedule]
kind = "constant"

[eval]
episodes = 2
"#;

fn point_config() -> String {
    GRID.replace("kind = \"grid\"", "kind = \"point\"").replace("max_steps = 30", "max_steps = 60")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn digest(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), Sha256::digest(std::fs::read(&p).unwrap()).to_vec()));
            }
        }
    }
    out.sort();
    out
}

fn dpolicy(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_dpolicy"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

#[test]
fn gen_data_writes_schema_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "grid.toml", &GRID.replace("episodes = 5", "episodes = 10"));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let s = cmd_gen_data(&cfg, &a, false).unwrap();
    assert_eq!(s.episodes, 10);
    assert!((s.expert_success_rate - 1.0).abs() < 1e-12);
    let names: Vec<String> = DemoStore::read_manifest(&a).unwrap().arrays.into_iter().map(|m| m.name).collect();
    for want in ["states", "actions", "rewards", "episode_ends"] {
        assert!(names.iter().any(|n| n == want), "{names:?}");
    }
    assert!(!names.iter().any(|n| n == "images"));
    cmd_gen_data(&cfg, &b, false).unwrap();
    assert_eq!(digest(&a), digest(&b));

    // a non-empty target needs --force
    assert!(cmd_gen_data(&cfg, &a, false).is_err());
    cmd_gen_data(&cfg, &a, true).unwrap();
}

#[test]
fn visual_configs_store_images() {
    let tmp = tempfile::tempdir().unwrap();
    let text = GRID
        .replace("max_steps = 30", "max_steps = 30\nresolution = 5")
        .replace("mode = \"state\"", "mode = \"visual\"\nconv_channels = [4]\ngroupnorm_groups = 2\nvisual_features = 8");
    let cfg = write(tmp.path(), "v.toml", &text);
    cmd_gen_data(&cfg, &tmp.path().join("d"), false).unwrap();
    let m = DemoStore::read_manifest(tmp.path().join("d")).unwrap();
    assert!(m.arrays.iter().any(|a| a.name == "images" && a.shape[1..] == [5, 5, 3]));
}

#[test]
fn invalid_configs_exit_with_code_one() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write(
        tmp.path(),
        "bad.toml",
        &GRID.replace("max_steps = 30", "max_steps = 30\ndrift = { kind = \"goal_shift\", period = 0 }"),
    );
    let out = tmp.path().join("d");
    let err = cmd_gen_data(&bad, &out, false).unwrap_err();
    assert!(matches!(err, CliError::Validation(_)) && err.to_string().contains("period"), "{err}");
    assert_eq!(dpolicy(&["gen-data", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]), 1);
    let garbage = write(tmp.path(), "g.toml", "[[[");
    assert_eq!(dpolicy(&["gen-data", "--config", garbage.to_str().unwrap(), "--out", out.to_str().unwrap()]), 1);
}

#[test]
fn train_smoke_resume_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "grid.toml", GRID);
    let data = tmp.path().join("data");
    cmd_gen_data(&cfg, &data, false).unwrap();

    let run = |out: &Path, resume: Option<&Path>| {
        cmd_train(&TrainOptions {
            config: &cfg,
            data: &data,
            out,
            resume,
        })
        .unwrap()
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let rows = run(&a, None);
    assert_eq!(rows.iter().map(|r| r.step).collect::<Vec<_>>(), [25, 50]);
    assert!(rows.iter().all(|r| r.eval_success_rate.is_some()));
    assert!(a.join(CHECKPOINT_FILE).exists() && a.join(EMA_CHECKPOINT_FILE).exists());
    assert_eq!(read_rows(&a.join(METRICS_FILE)).unwrap(), rows);

    let again = run(&b, None);
    let losses = |r: &[dpolicy_cli::metrics::MetricsRow]| r.iter().map(|x| x.train_loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(losses(&rows), losses(&again));

    // continue the first run twice: 50 → 100 → 150
    let ck = a.join(CHECKPOINT_FILE);
    let resumed = run(&a, Some(&ck));
    assert_eq!(resumed.first().unwrap().step, 75);
    let resumed = run(&a, Some(&ck));
    assert_eq!(resumed.iter().map(|r| r.step).collect::<Vec<_>>(), [125, 150]);
    let all = read_rows(&a.join(METRICS_FILE)).unwrap();
    assert_eq!(all.iter().map(|r| r.step).collect::<Vec<_>>(), [25, 50, 75, 100, 125, 150]);
}

#[test]
fn resume_numbering_continues_after_step_100() {
    let tmp = tempfile::tempdir().unwrap();
    let text = GRID
        .replace("train_steps = 50", "train_steps = 100")
        .replace("eval_period = 25", "eval_period = 1")
        .replace("episodes = 2", "episodes = 0");
    let cfg = write(tmp.path(), "grid.toml", &text);
    let data = tmp.path().join("data");
    let out = tmp.path().join("run");
    cmd_gen_data(&cfg, &data, false).unwrap();
    let opts = |resume| TrainOptions {
        config: &cfg,
        data: &data,
        out: &out,
        resume,
    };
    let first = cmd_train(&opts(None)).unwrap();
    assert_eq!(first.last().unwrap().step, 100);
    assert!(first.iter().all(|r| r.eval_success_rate.is_none()));
    let ck = out.join(CHECKPOINT_FILE);
    let second = cmd_train(&opts(Some(&ck))).unwrap();
    assert_eq!(second[0].step, 101);
}

#[test]
fn shape_mismatches_are_reported_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let grid = write(tmp.path(), "grid.toml", GRID);
    let point = write(tmp.path(), "point.toml", &point_config());
    let grid_data = tmp.path().join("grid");
    cmd_gen_data(&grid, &grid_data, false).unwrap();
    let out = tmp.path().join("out");
    let err = cmd_train(&TrainOptions {
        config: &point,
        data: &grid_data,
        out: &out,
        resume: None,
    })
    .unwrap_err();
    assert!(err.to_string().contains("grid") || err.to_string().contains("Grid"), "{err}");
    assert!(!out.join(METRICS_FILE).exists());

    // A grid checkpoint evaluated in the point maze.
    let run = tmp.path().join("run");
    cmd_train(&TrainOptions {
        config: &grid,
        data: &grid_data,
        out: &run,
        resume: None,
    })
    .unwrap();
    let ck = run.join(EMA_CHECKPOINT_FILE);
    let err = cmd_eval(&EvalOptions {
        checkpoint: Some(&ck),
        config: &point,
        episodes: 1,
        seed: 1 << 31,
        csv: None,
    })
    .unwrap_err();
    assert!(err.to_string().contains("dimension"), "{err}");
}

#[test]
fn eval_reports_and_writes_per_episode_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "grid.toml", GRID);
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    cmd_gen_data(&cfg, &data, false).unwrap();
    cmd_train(&TrainOptions {
        config: &cfg,
        data: &data,
        out: &run,
        resume: None,
    })
    .unwrap();
    let csv = tmp.path().join("episodes.csv");
    let ck = run.join(EMA_CHECKPOINT_FILE);
    let one = cmd_eval(&EvalOptions {
        checkpoint: Some(&ck),
        config: &cfg,
        episodes: 1,
        seed: 1 << 31,
        csv: Some(&csv),
    })
    .unwrap();
    assert_eq!(one.episodes, 1);
    assert_eq!(one.reward_std, 0.0);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 2);

    let code = dpolicy(&[
        "eval",
        ck.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--episodes",
        "3",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 4);
}

#[test]
fn expert_passthrough_solves_point_mazes() {
    let tmp = tempfile::tempdir().unwrap();
    let text = point_config()
        .replace("size = 5", "size = 7")
        .replace("max_steps = 60", "max_steps = 200");
    let cfg = write(tmp.path(), "point.toml", &text);
    let r = cmd_eval(&EvalOptions {
        checkpoint: None,
        config: &cfg,
        episodes: 50,
        seed: 1 << 31,
        csv: None,
    })
    .unwrap();
    assert!(r.success_rate >= 0.95, "{r:?}");
    assert!(r.max_reward >= r.mean_reward);
}

#[test]
fn plot_handles_empty_two_row_and_malformed_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let header = HEADER.join(",");
    let empty = write(tmp.path(), "empty.csv", &format!("{header}\n"));
    let svg = tmp.path().join("e.svg");
    cmd_plot(&empty, &svg).unwrap();
    assert!(!std::fs::read_to_string(&svg).unwrap().contains("<polyline"));

    let two = write(tmp.path(), "two.csv", &format!("{header}\n10,0.9,0.1,1,0,3.5\n20,0.5,0.4,2,1,7\n"));
    let (s1, s2) = (tmp.path().join("1.svg"), tmp.path().join("2.svg"));
    cmd_plot(&two, &s1).unwrap();
    cmd_plot(&two, &s2).unwrap();
    let text = std::fs::read_to_string(&s1).unwrap();
    assert_eq!(text, std::fs::read_to_string(&s2).unwrap());
    for line in text.lines().filter(|l| l.starts_with("<polyline")) {
        let points = line.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>");
        assert_eq!(points.split(' ').count(), 2, "{line}");
    }
    assert_eq!(text.matches("<polyline").count(), 2);

    let bad = write(tmp.path(), "bad.csv", &format!("{header}\n10,0.9,,,,1\n20,abc,,,,2\n"));
    let err = cmd_plot(&bad, &s1).unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");
    assert_eq!(dpolicy(&["plot", bad.to_str().unwrap(), "--out", s1.to_str().unwrap()]), 1);
    assert_eq!(dpolicy(&["plot", empty.to_str().unwrap(), "--out", s1.to_str().unwrap()]), 0);
}

#[test]
fn verify_exits_zero_on_a_clean_build() {
    assert_eq!(dpolicy(&["verify"]), 0);
}
