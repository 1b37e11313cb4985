use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deepfactor::dataflow;
use deepfactor::simulation::{monthly_panel, MonthlyPanelSpec};

fn deepfactor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepfactor"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run(cmd: &str, config: &Path, out: &Path) -> Output {
    deepfactor(&[cmd, "--quiet", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

fn panel_csv(dir: &Path, months: usize) -> PathBuf {
    let panel = monthly_panel(&MonthlyPanelSpec {
        months,
        ..MonthlyPanelSpec::default()
    })
    .unwrap();
    let p = dir.join("panel.csv");
    dataflow::write_csv(&panel, &p).unwrap();
    p
}

const ONE_ROW: &str = r#"{
  "grid": [{"depth": "one_layer", "p": 10, "k1": 2, "t": 80, "target_r2": 0.5}],
  "methods": [{"method": "oracle"}, {"method": "ols"}, {"method": "lasso"}],
  "reps": 2,
  "seed": 3
}"#;

#[test]
fn usage_errors_exit_2() {
    assert_eq!(deepfactor(&[]).status.code(), Some(2));
    assert_eq!(deepfactor(&["simulate"]).status.code(), Some(2));
}

#[test]
fn one_row_grid_writes_one_table_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "sim.json", ONE_ROW);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run("simulate", &cfg, &a).status.success());
    assert!(run("simulate", &cfg, &b).status.success());
    assert_eq!(listing(&a), ["table1.csv", "table1.md"]);
    for f in listing(&a) {
        assert_eq!(std::fs::read(a.join(&f)).unwrap(), std::fs::read(b.join(&f)).unwrap(), "{f}");
    }
    let csv = std::fs::read_to_string(a.join("table1.csv")).unwrap();
    assert!(csv.starts_with("P,K,T,R2,Oracle,OLS,Lasso\n"), "{csv}");
}

#[test]
fn seed_flag_changes_the_draws() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "sim.json", ONE_ROW);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(run("simulate", &cfg, &a).status.success());
    let out = deepfactor(&[
        "simulate",
        "--quiet",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
        "--seed",
        "4",
    ]);
    assert!(out.status.success());
    assert_ne!(std::fs::read(a.join("table1.csv")).unwrap(), std::fs::read(b.join("table1.csv")).unwrap());
}

#[test]
fn bad_configs_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let unknown = write(tmp.path(), "unknown.json", r#"{"grid": [], "repz": 1}"#);
    let o = run("simulate", &unknown, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("repz"));
    let bad_r2 = write(
        tmp.path(),
        "r2.json",
        r#"{"grid": [{"depth": "one_layer", "k1": 2, "t": 80, "target_r2": 1.0}]}"#,
    );
    let o = run("simulate", &bad_r2, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("target_r2"));
    assert_eq!(run("simulate", &tmp.path().join("missing.json"), &out).status.code(), Some(2));
}

#[test]
fn missing_data_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bt.json", r#"{"data": "nowhere.csv", "methods": [{"method": "ols"}]}"#);
    let o = run("backtest", &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere.csv"));
}

#[test]
fn missing_column_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let data = panel_csv(tmp.path(), 60);
    let text = std::fs::read_to_string(&data).unwrap().replacen(",bm,", ",book_to_market,", 1);
    std::fs::write(&data, text).unwrap();
    let cfg = write(tmp.path(), "bt.json", r#"{"data": "panel.csv", "methods": [{"method": "ols"}]}"#);
    let o = run("backtest", &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bm"));
}

#[test]
fn backtest_report_and_factors_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    panel_csv(tmp.path(), 300);
    let bt = write(
        tmp.path(),
        "bt.json",
        r#"{
  "data": "panel.csv",
  "methods": [{"method": "ols"}, {"method": "ridge"}],
  "cases": ["base", "with_squares"],
  "horizons": [1, 3],
  "windows": [{"kind": "cumulative"}, {"kind": "fixed_moving", "length": 120}]
}"#,
    );
    let out = tmp.path().join("bt");
    let o = run("backtest", &bt, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let files = listing(&out);
    for f in [
        "evaluation.csv",
        "evaluation_h1_cumulative.csv",
        "evaluation_h1_cumulative.md",
        "evaluation_h3_fixed_120.md",
        "forecasts.csv",
    ] {
        assert!(files.iter().any(|x| x == f), "missing {f} in {files:?}");
    }
    let table = std::fs::read_to_string(out.join("evaluation_h1_cumulative.csv")).unwrap();
    assert!(table.lines().next().unwrap().contains("Case 1 MSPE"), "{table}");
    assert_eq!(table.lines().count(), 3);

    let rep = write(
        tmp.path(),
        "report.json",
        r#"{"forecasts": ["bt/forecasts.csv"], "dm_baseline": "OLS"}"#,
    );
    let rout = tmp.path().join("report");
    let o = run("report", &rep, &rout);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(out.join("evaluation.csv")).unwrap(),
        std::fs::read(rout.join("evaluation.csv")).unwrap()
    );
    let dm = std::fs::read_to_string(rout.join("dm.csv")).unwrap();
    assert_eq!(dm.lines().count(), 1 + 2 * 2 * 2, "{dm}");
    assert!(dm.lines().skip(1).all(|l| l.starts_with("Ridge,OLS,")));

    let fac = write(
        tmp.path(),
        "factors.json",
        r#"{"data": "panel.csv", "method": {"method": "deep", "hidden": [4, 2], "sgd": {"epochs": 5}, "lambda_grid": [0.1]}}"#,
    );
    let fout = tmp.path().join("factors");
    let o = run("factors", &fac, &fout);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(fout.join("factors.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "date,factor_1,factor_2,dp,dy,ep,de");
    assert_eq!(text.lines().count(), 1 + 300);
}

#[test]
fn shipped_configs_parse_and_validate() {
    use deepfactor::config::{self, BacktestConfig, FactorsConfig, ReportConfig, SimulateConfig};
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let t1: SimulateConfig = config::load(&dir.join("simulate_table1.json")).unwrap();
    t1.validate().unwrap();
    assert_eq!(t1.grid.len(), 8);
    let t2: SimulateConfig = config::load(&dir.join("simulate_table2.json")).unwrap();
    t2.validate().unwrap();
    let bt: BacktestConfig = config::load(&dir.join("backtest.json")).unwrap();
    bt.validate().unwrap();
    assert_eq!(bt.methods, deepfactor::methods::equity_premium_methods());
    let f: FactorsConfig = config::load(&dir.join("factors.json")).unwrap();
    f.validate().unwrap();
    let r: ReportConfig = config::load(&dir.join("report.json")).unwrap();
    r.validate().unwrap();
}
