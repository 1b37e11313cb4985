//! The four CLI commands as library functions. Each returns the files it
//! wrote; errors carry the exit code through [`Error::exit_code`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::backtest::{self, BacktestSpec, EvaluationRow, ForecastRecord, ReportFormat};
use crate::config::{BacktestConfig, FactorsConfig, ReportConfig, SimulateConfig};
use crate::dataflow::{self, TargetSpec};
use crate::error::{Error, Result};
use crate::methods::{self, FitContext};
use crate::rng;
use crate::simulation::{self, BenchmarkTable, Depth, Split};

fn write_file(path: PathBuf, contents: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

fn ensure_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn table_markdown(title: &str, table: &BenchmarkTable, reps: usize) -> String {
    let mut s = format!("## {title}\n\nMean MSPE over {reps} repetitions.\n\n");
    s.push_str(&table.to_markdown());
    let failures: Vec<String> = table
        .rows
        .iter()
        .flat_map(|r| r.cells.iter())
        .flat_map(|c| c.failures.iter().map(move |f| format!("- {}: {f}", c.method)))
        .collect();
    if !failures.is_empty() {
        let _ = write!(s, "\nFailed fits:\n\n{}\n", failures.join("\n"));
    }
    s
}

/// Runs the benchmark grid; one-layer rows go to `table1.*`, two-layer rows
/// to `table2.*`.
pub fn cmd_simulate(cfg: &SimulateConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    ensure_dir(out)?;
    let mut grid = cfg.grid.clone();
    if let Some(seed) = cfg.seed {
        grid.iter_mut().for_each(|row| row.seed = seed);
    }
    let split = Split {
        train_frac: cfg.train_frac,
    };
    let mut written = Vec::new();
    for (depth, stem, title) in [
        (Depth::OneLayer, "table1", "One-layer data generating process"),
        (Depth::TwoLayer, "table2", "Two-layer data generating process"),
    ] {
        let rows: Vec<_> = grid.iter().filter(|r| r.depth == depth).cloned().collect();
        if rows.is_empty() {
            continue;
        }
        log::info!("{title}: {} rows x {} reps", rows.len(), cfg.reps);
        let table = simulation::run_benchmark(&rows, &cfg.methods, split, cfg.reps)?;
        write_file(out.join(format!("{stem}.csv")), &table.to_csv()?, &mut written)?;
        write_file(
            out.join(format!("{stem}.md")),
            &table_markdown(title, &table, cfg.reps),
            &mut written,
        )?;
    }
    Ok(written)
}

fn write_evaluation(rows: &[EvaluationRow], out: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    write_file(out.join("evaluation.csv"), &backtest::evaluation_to_csv(rows)?, written)?;
    let csv = backtest::report(rows, ReportFormat::Csv);
    let md = backtest::report(rows, ReportFormat::Markdown);
    for (c, m) in csv.iter().zip(&md) {
        let stem = format!("evaluation_h{}_{}", c.horizon, c.window);
        write_file(out.join(format!("{stem}.csv")), &c.body, written)?;
        write_file(out.join(format!("{stem}.md")), &m.body, written)?;
    }
    Ok(())
}

/// Every (horizon, window, case, method) combination over the panel at
/// `data`.
pub fn cmd_backtest(cfg: &BacktestConfig, data: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let panel = dataflow::load_csv(data, &cfg.column_map)?;
    ensure_dir(out)?;
    let mut records: Vec<ForecastRecord> = Vec::new();
    let mut skipped = Vec::new();
    for &horizon in &cfg.horizons {
        for window in &cfg.windows {
            for &case in &cfg.cases {
                for method in &cfg.methods {
                    log::info!("{} {} h={horizon} {}", method.name(), case.label(), window.label());
                    let spec = BacktestSpec {
                        method: method.clone(),
                        case,
                        target: TargetSpec {
                            horizon,
                            kind: cfg.target,
                        },
                        scheme: *window,
                        seed: cfg.seed,
                        refit_every: cfg.refit_every,
                    };
                    let run = backtest::run_backtest(&panel, &spec)?;
                    records.extend(run.records);
                    skipped.extend(run.skipped.into_iter().map(|s| (spec.method.name(), s)));
                }
            }
        }
    }
    let mut written = Vec::new();
    write_file(out.join("forecasts.csv"), &backtest::records_to_csv(&records)?, &mut written)?;
    if !skipped.is_empty() {
        let mut s = String::from("method,origin_date,reason\n");
        for (m, k) in &skipped {
            let _ = writeln!(s, "{m},{},\"{}\"", k.origin_date, k.reason.replace('"', "'"));
        }
        write_file(out.join("skipped.csv"), &s, &mut written)?;
    }
    let rows = backtest::evaluate(&records)?;
    write_evaluation(&rows, out, &mut written)?;
    Ok(written)
}

/// Fits one deep model on the whole panel and dumps its last hidden layer
/// next to the first four predictors.
pub fn cmd_factors(cfg: &FactorsConfig, data: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let panel = dataflow::load_csv(data, &cfg.column_map)?;
    ensure_dir(out)?;
    let features = dataflow::build_features(&panel, cfg.case);
    let y = dataflow::build_targets(&panel, TargetSpec::excess(cfg.horizon))?;
    let lo = features.first_valid;
    if y.len() <= lo + 1 {
        return Err(Error::Schema("panel too short to fit factors".into()));
    }
    let x_train = features.x.slice(ndarray::s![lo..y.len(), ..]);
    let y_train = y.slice(ndarray::s![lo..]);
    let ctx = FitContext::time_series(rng::derive_seed(cfg.seed, &[rng::TAG_FACTORS]));
    let fitted = methods::fit_method(&cfg.method, x_train, y_train, &ctx)?;
    let model = fitted.as_deep().expect("validated deep method");
    let x_all = features.x.slice(ndarray::s![lo.., ..]);
    let factors = model.factors(x_all)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["date".to_string()];
    header.extend((1..=factors.ncols()).map(|k| format!("factor_{k}")));
    header.extend(dataflow::PREDICTORS[..4].iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (i, row) in factors.rows().into_iter().enumerate() {
        let t = lo + i;
        let mut rec = vec![panel.dates[t].to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        rec.extend((0..4).map(|j| panel.predictors[[t, j]].to_string()));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    let mut written = Vec::new();
    write_file(
        out.join("factors.csv"),
        &String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))?,
        &mut written,
    )?;
    Ok(written)
}

pub fn read_forecasts(path: &Path) -> Result<Vec<ForecastRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .map(|r| r.map_err(|e| Error::Schema(format!("{}: {e}", path.display()))))
        .collect()
}

/// Rebuilds evaluation tables from forecast files and optionally runs
/// Diebold-Mariano tests against a baseline method.
pub fn cmd_report(cfg: &ReportConfig, forecasts: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let mut records = Vec::new();
    for path in forecasts {
        records.extend(read_forecasts(path)?);
    }
    ensure_dir(out)?;
    let rows = backtest::evaluate(&records)?;
    let mut written = Vec::new();
    write_evaluation(&rows, out, &mut written)?;
    if let Some(base) = &cfg.dm_baseline {
        let mut s = String::from("method,baseline,feature_case,horizon,window,statistic,p_value,n\n");
        for row in rows.iter().filter(|r| &r.method != base) {
            let pick = |m: &str| -> Vec<ForecastRecord> {
                let mut v: Vec<ForecastRecord> = records
                    .iter()
                    .filter(|r| {
                        r.method == m
                            && r.feature_case == row.feature_case
                            && r.horizon == row.horizon
                            && r.window == row.window
                    })
                    .cloned()
                    .collect();
                v.sort_by_key(|r| r.target_date);
                v
            };
            let baseline = pick(base);
            if baseline.is_empty() {
                continue;
            }
            let dm = backtest::dm_test(&pick(&row.method), &baseline)?;
            let _ = writeln!(
                s,
                "{},{base},{},{},{},{},{},{}",
                row.method,
                row.feature_case.label(),
                row.horizon,
                row.window,
                backtest::format_number(dm.statistic),
                backtest::format_number(dm.p_value),
                baseline.len()
            );
        }
        write_file(out.join("dm.csv"), &s, &mut written)?;
    }
    Ok(written)
}
