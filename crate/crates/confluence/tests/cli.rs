mod common;

use std::path::Path;
use std::process::{Command, Output};

use confluence::mock::MockOai;
use serde_json::{json, Value};

fn confluence(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_confluence"))
        .arg("--data-dir")
        .arg(data)
        .args(args)
        .env_remove("CONFLUENCE_DATA_DIR")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout_json(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap()
}

struct Setup {
    dir: tempfile::TempDir,
    mock: MockOai,
}

impl Setup {
    fn new(profile: Value) -> Self {
        let mock = MockOai::start(common::corpus(), 100, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut profile = profile;
        profile["harvest"]["endpoint"] = json!(mock.url());
        std::fs::write(dir.path().join("profile.json"), serde_json::to_vec(&profile).unwrap()).unwrap();
        let s = Setup { dir, mock };
        let out = s.run(&["profile", "add", s.path("profile.json").as_str()]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        s
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_string_lossy().into_owned()
    }

    fn run(&self, args: &[&str]) -> Output {
        confluence(&self.dir.path().join("data"), args)
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&confluence(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&confluence(dir.path(), &["--help"])), 0);
    let out = confluence(dir.path(), &["ingest", "ghost"]);
    assert_eq!(code(&out), 1);
    assert_eq!(stderr_json(&out)["error"], "not-found");
}

#[test]
fn broken_profiles_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("broken.json");
    let mut profile = common::demo_profile("http://127.0.0.1:9/");
    profile["pipeline"][3] = json!({"stepName": "transmogrify"});
    std::fs::write(&file, serde_json::to_vec(&profile).unwrap()).unwrap();
    let out = confluence(&dir.path().join("data"), &["profile", "validate", file.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr_json(&out)["message"].as_str().unwrap().contains("transmogrify"));
    assert!(!dir.path().join("data").exists());

    std::fs::write(&file, serde_json::to_vec(&common::demo_profile("http://127.0.0.1:9/")).unwrap()).unwrap();
    let out = confluence(&dir.path().join("data"), &["profile", "validate", file.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout_json(&out), [json!({"valid": true, "name": "demo"})]);
}

#[test]
fn out_of_order_task_exits_three() {
    let s = Setup::new(common::demo_profile(""));
    let out = s.run(&["ingest", "demo", "--task", "save"]);
    assert_eq!(code(&out), 3);
    assert_eq!(stderr_json(&out)["error"], "task-order");
}

#[test]
fn tasks_continue_the_open_run() {
    let s = Setup::new(common::demo_profile(""));
    assert_eq!(code(&s.run(&["ingest", "demo", "--task", "fetch"])), 0);
    let out = s.run(&["ingest", "demo", "--task", "enrich"]);
    assert_eq!(code(&out), 0);
    let doc = &stdout_json(&out)[0];
    assert_eq!((doc["runId"].as_str(), doc["counts"]["enriched"].as_u64()), (Some("demo-1"), Some(250)));
    let out = s.run(&["ingest", "demo"]);
    assert_eq!(stdout_json(&out)[0]["tasks"]["cleanup"]["status"], "complete");
    let runs = stdout_json(&s.run(&["runs", "--profile", "demo"]));
    assert_eq!(runs.len(), 1);
}

#[test]
fn failed_task_exits_three() {
    let s = Setup::new(common::demo_profile(""));
    s.mock.fail_after(Some(0));
    let data = s.dir.path().join("data");
    let out = Command::new(env!("CARGO_BIN_EXE_confluence"))
        .arg("--data-dir")
        .arg(&data)
        .args(["ingest", "demo", "--task", "fetch"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 3);
    assert_eq!(stdout_json(&out)[0]["tasks"]["fetch"]["status"], "failed");
}

#[test]
fn strict_alerts_exit_four() {
    let s = Setup::new(common::demo_profile(""));
    assert_eq!(code(&s.run(&["ingest", "demo"])), 0);
    let mut records = common::corpus();
    records.truncate(200);
    s.mock.set_records(records);
    let out = s.run(&["ingest", "demo", "--new-run", "--strict"]);
    assert_eq!(code(&out), 4);
    assert_eq!(stderr_json(&out)["error"], "threshold-alert");
    let doc = &stdout_json(&out)[0];
    assert_eq!(doc["alerts"][0]["metric"], "deletedFrac");
    assert_eq!(doc["alerts"][0]["value"], 0.2);
}

#[test]
fn reports_patches_promote_and_dump() {
    let s = Setup::new(common::demo_profile(""));
    assert_eq!(code(&s.run(&["ingest", "demo"])), 0);
    let out = s.run(&["report", "demo", "demo-1", "counts", "--field", "sourceResource/subject"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let written = &stdout_json(&out)[0];
    assert!(Path::new(written["path"].as_str().unwrap()).exists());

    let out = s.run(&["report", "demo", "demo-1", "values"]);
    assert_eq!(code(&out), 1);
    let out = s.run(&["report", "other", "demo-1", "counts", "--field", "sourceResource/title"]);
    assert_eq!(code(&out), 1);

    let out = s.run(&["validate-run", "demo", "demo-1"]);
    assert_eq!(stdout_json(&out)[0]["violations"], json!([]));
    let out = s.run(&["export-patches", "demo", "demo-1"]);
    assert_eq!(stdout_json(&out)[0]["records"], 250);
    assert_eq!(code(&s.run(&["promote", "demo", "demo-1"])), 0);
    let out = s.run(&["dump", "--profile", "demo", "--out", s.path("out.jsonl.gz").as_str()]);
    assert_eq!(stdout_json(&out)[0]["records"], 250);
    assert!(Path::new(&s.path("out.jsonl.gz")).exists());
}

#[test]
fn settings_file_supplies_the_data_dir() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("elsewhere");
    let config = dir.path().join("confluence.toml");
    std::fs::write(&config, format!("data_dir = {:?}\n", data.to_str().unwrap())).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_confluence"))
        .args(["--config", config.to_str().unwrap(), "profile", "list"])
        .env_remove("CONFLUENCE_DATA_DIR")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("profiles").is_dir());

    std::fs::write(&config, "colour = \"blue\"\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_confluence"))
        .args(["--config", config.to_str().unwrap(), "profile", "list"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
}
