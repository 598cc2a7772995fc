mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use condaseg::cli::{ReportConfig, EVAL_FILE, GALLERY_FILE};
use condaseg::evaluation::tables::RESULTS_HEADER;
use condaseg::training::ExperimentConfig;
use condaseg::Variant;

use common::{fixture_dir, tiny_config};

fn condaseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_condaseg"))
        .args(args)
        .env_remove("CONDASEG_DATA_ROOT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(path: &Path, cfg: &ExperimentConfig) -> String {
    fs::write(path, cfg.to_json().unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn data_build_twice_is_a_no_op() {
    let tmp = tempfile::tempdir().unwrap();
    let configs = tmp.path().join("configs");
    assert_eq!(code(&condaseg(&["configs", configs.to_str().unwrap()])), 0);
    let cfg = configs.join("smoke_data_mnist_thin.json");
    let root = tmp.path().join("cache");
    let dir = format!("mnist.dir={}", serde_json::to_string(&fixture_dir()).unwrap());
    let args = [
        "data",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        &dir,
        "--set",
        "mnist.verify_checksums=false",
        "--set",
        "mnist.download=false",
        "--set",
        "build.limit=6",
        "--output-dir",
        root.to_str().unwrap(),
    ];
    let first = condaseg(&args);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    let img = root.join("res32/mnist_thin/train/img_000000.png");
    let stamp = fs::metadata(&img).unwrap().modified().unwrap();
    let second = condaseg(&args);
    assert_eq!(code(&second), 0);
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(fs::metadata(&img).unwrap().modified().unwrap(), stamp);
}

#[test]
fn error_categories_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(&tmp.path().join("fcn.json"), &tiny_config(Variant::Fcn, &tmp.path().join("run")));

    let typo = condaseg(&["train", "--config", &cfg_path, "--set", "lambdas.segmm=2"]);
    assert_eq!(code(&typo), 2);
    assert!(stderr(&typo).contains("lambdas.segmm"), "{}", stderr(&typo));

    let bad_value = condaseg(&["train", "--config", &cfg_path, "--set", "batch_size=0"]);
    assert_eq!(code(&bad_value), 2);

    assert_eq!(code(&condaseg(&["train", "--config", "/nonexistent.json"])), 2);
    assert_eq!(code(&condaseg(&["train"])), 2);

    let no_data = condaseg(&["train", "--config", &cfg_path, "--set", "data.root=\"/nonexistent\""]);
    assert_eq!(code(&no_data), 3, "{}", stderr(&no_data));
}

#[test]
fn train_eval_report_translate_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("fcn");
    let cfg_path = write_config(&tmp.path().join("fcn.json"), &tiny_config(Variant::Fcn, &run));
    let ok = |args: &[&str]| {
        let o = condaseg(args);
        assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
        o
    };
    ok(&["train", "--config", &cfg_path, "--seed", "3"]);
    let echoed = ExperimentConfig::from_json(&fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed.seed, 3);
    // a finished run resumes to the same place
    ok(&["train", "--config", &cfg_path, "--seed", "3", "--resume"]);
    ok(&["eval", "--config", &cfg_path, "--seed", "3"]);
    assert!(run.join(EVAL_FILE).exists());

    let report = ReportConfig {
        runs: vec![run.clone()],
        output_dir: tmp.path().join("report"),
        params: true,
    };
    let report_path = tmp.path().join("report.json");
    fs::write(&report_path, serde_json::to_string(&report).unwrap()).unwrap();
    ok(&["report", "--config", report_path.to_str().unwrap()]);
    let csv = fs::read_to_string(tmp.path().join("report/results.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), RESULTS_HEADER.join(","));
    assert!(csv.lines().nth(1).unwrap().starts_with("fcn,"));
    for f in ["results.json", "results.txt", "params.csv", "params.json", "params.txt"] {
        assert!(tmp.path().join("report").join(f).exists(), "{f}");
    }

    let fcn_gallery = condaseg(&["translate", "--config", &cfg_path]);
    assert_eq!(code(&fcn_gallery), 2);

    let star = tmp.path().join("star");
    let mut cfg = tiny_config(Variant::StarganTranslate, &star);
    cfg.max_iterations = Some(1);
    let star_path = write_config(&tmp.path().join("star.json"), &cfg);
    ok(&["train", "--config", &star_path]);
    ok(&["translate", "--config", &star_path, "--count", "3"]);
    assert!(star.join(GALLERY_FILE).exists());
}

#[test]
fn committed_configs_match_the_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let committed = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for path in condaseg::cli::emit_default_configs(tmp.path()).unwrap() {
        let name = path.file_name().unwrap();
        let ours = fs::read_to_string(committed.join(name)).unwrap_or_default();
        assert_eq!(ours, fs::read_to_string(&path).unwrap(), "configs/{name:?} is stale; rerun `condaseg configs`");
    }
}
