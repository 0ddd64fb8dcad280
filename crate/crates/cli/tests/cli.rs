use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_calderon-lab"));
    c.env_remove("CALDERON_LAB_WORKERS");
    c
}

fn run(cfg: &Path, out: &Path) -> Output {
    bin().arg("run").arg(cfg).arg("--out").arg(out).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn embedding_examples() {
    let dir = tempfile::tempdir().unwrap();
    let yes = write(dir.path(), "yes.cfg", "scenario = embedding_check\nkernel.alpha = 0.75\n");
    let no = write(dir.path(), "no.cfg", "scenario = embedding_check\nspace.q = 1\nkernel.alpha = 0.75\n");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&yes, &a).status.code(), Some(0));
    assert_eq!(run(&no, &b).status.code(), Some(0));
    assert_eq!(report(&a)["scalars"]["embeds"]["value"], Value::Bool(true));
    assert_eq!(report(&b)["scalars"]["embeds"]["value"], Value::Bool(false));
    assert_eq!(report(&b)["scalars"]["psi_q_at_T"]["value"], Value::from("inf"));
}

#[test]
fn failed_assertion_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "x.cfg",
        "scenario = embedding_check\nspace.q = 1\nkernel.alpha = 0.75\nexpect.embeds = true\n",
    );
    let out = dir.path().join("o");
    assert_eq!(run(&cfg, &out).status.code(), Some(1));
    let r = report(&out);
    assert_eq!(r["status"], Value::from("fail"));
    assert_eq!(r["scalars"]["embeds"]["verdict"], Value::from("fail"));
}

#[test]
fn configuration_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.cfg", "scenario = embedding_check\nkernel.alpha = 0.75\nspace.q = 0.5\n");
    let out = run(&bad, &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("space.q"));
    assert!(!dir.path().join("o").exists());

    let missing = run(&dir.path().join("nope.cfg"), &dir.path().join("o"));
    assert_eq!(missing.status.code(), Some(2));

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let sweep = bin().arg("sweep").arg(&empty).output().unwrap();
    assert_eq!(sweep.status.code(), Some(2));

    let ok = write(dir.path(), "ok.cfg", "scenario = embedding_check\nkernel.alpha = 0.75\n");
    let env = bin()
        .env("CALDERON_LAB_WORKERS", "zero")
        .arg("run")
        .arg(&ok)
        .arg("--out")
        .arg(dir.path().join("o2"))
        .output()
        .unwrap();
    assert_eq!(env.status.code(), Some(2));
}

#[test]
fn environment_overrides_workers_flag() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write(dir.path(), "ok.cfg", "scenario = embedding_check\nkernel.alpha = 0.75\n");
    // an invalid flag is ignored when the variable is set
    let out = bin()
        .env("CALDERON_LAB_WORKERS", "1")
        .arg("run")
        .arg(&ok)
        .arg("--workers")
        .arg("0")
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let flag = bin()
        .arg("run")
        .arg(&ok)
        .arg("--workers")
        .arg("0")
        .arg("--out")
        .arg(dir.path().join("o2"))
        .output()
        .unwrap();
    assert_eq!(flag.status.code(), Some(2));
}

fn summary_rows(out: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(out.join("summary.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn alpha_sweep_flips_condition_at_k() {
    let dir = tempfile::tempdir().unwrap();
    let cfgs = dir.path().join("cfgs");
    fs::create_dir(&cfgs).unwrap();
    for (i, a) in ["0.6", "0.9", "1.2"].iter().enumerate() {
        write(
            &cfgs,
            &format!("a{i}.cfg"),
            &format!("scenario = optimal_norm\nkernel.alpha = {a}\ngrid.points = 256\n"),
        );
    }
    let out = dir.path().join("o");
    let res = bin().arg("sweep").arg(&cfgs).arg("--out").arg(&out).arg("--workers").arg("2").output().unwrap();
    assert_eq!(res.status.code(), Some(0), "{res:?}");
    let rows = summary_rows(&out);
    assert_eq!(rows.len(), 3);
    let header: Vec<String> = fs::read_to_string(out.join("summary.csv"))
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .split(',')
        .map(str::to_string)
        .collect();
    let col = header.iter().position(|h| h == "condition").unwrap();
    let conditions: Vec<&str> = rows.iter().map(|r| r[col].as_str()).collect();
    assert_eq!(conditions, ["A", "A", "B"]);
}

#[test]
fn identical_configs_give_identical_rows_and_failures_stay_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let cfgs = dir.path().join("cfgs");
    fs::create_dir(&cfgs).unwrap();
    for name in ["c1", "c2", "c3"] {
        write(&cfgs, &format!("{name}.cfg"), "scenario = embedding_check\nkernel.alpha = 0.75\n");
    }
    write(&cfgs, "z_broken.cfg", "scenario = embedding_check\nkernel.alpha = nope\n");
    write(&cfgs, "notes.txt", "ignored\n");
    let out = dir.path().join("o");
    let res = bin().arg("sweep").arg(&cfgs).arg("--out").arg(&out).output().unwrap();
    assert_eq!(res.status.code(), Some(1));
    let rows = summary_rows(&out);
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0][1..], rows[1][1..]);
    assert_eq!(rows[1][1..], rows[2][1..]);
    assert_eq!(rows[0][2], "pass");
    assert_eq!(rows[3][0], "z_broken");
    assert_eq!(rows[3][2], "config_error");
    for name in ["c1", "c2", "c3"] {
        assert!(out.join(name).join("report.json").exists());
    }
}

#[test]
fn series_files_follow_the_format() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "env.cfg",
        "scenario = envelope\nkernel.alpha = 0.75\ngrid.points = 128\ntgrid.points = 12\n",
    );
    let out = dir.path().join("o");
    assert_eq!(run(&cfg, &out).status.code(), Some(0));
    let r = report(&out);
    let series = r["series"].as_array().unwrap();
    assert_eq!(series.len(), 1);
    assert_eq!(series[0]["points"], Value::from(12));
    let csv = fs::read_to_string(out.join("series/envelope.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,value"));
    let ts: Vec<f64> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(ts.len(), 12);
    assert!(ts.windows(2).all(|w| w[0] < w[1]));
    let dat = fs::read_to_string(out.join("series/envelope.dat")).unwrap();
    assert!(dat.lines().all(|l| l.split(' ').count() == 2));
    assert!(r["wall_time_seconds"].is_number());
    assert_eq!(r["input"]["tgrid.points"], Value::from("12"));
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "x.cfg", "scenario = embedding_check\nkernel.alpha = 0.75\ngrid.points = 512\n");
    let out = dir.path().join("o");
    let res = bin()
        .arg("run")
        .arg(&cfg)
        .args(["--grid-points", "64", "--tmin", "1e-6", "--seed", "0x11"])
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["input"]["grid.points"], Value::from("64"));
    assert_eq!(r["input"]["grid.tmin"], Value::from("1e-6"));
    assert_eq!(r["input"]["seed"], Value::from("17"));
}

#[test]
fn selftest_passes() {
    let out = bin().arg("selftest").output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert_eq!(text.lines().filter(|l| l.ends_with(": pass")).count(), 5);
}
