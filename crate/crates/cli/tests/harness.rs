use std::path::Path;
use std::process::Command;

use wsr_core::objective::wsr;
use wsr_core::{linalg, CMat};
use wsr_harness::run::{self, RunRecord, TraceFile};
use wsr_harness::{bench, check, check_with, ExperimentSpec, Kernels, Level};

fn spec_text(out: &Path, algorithms: &str, antennas: &str, realizations: usize) -> String {
    format!(
        r#"
        scenario = "test"
        snr_db = [10.0]
        realizations = {realizations}
        output_dir = "{}"
        seed = 11
        algorithms = {algorithms}
        [system]
        antennas = {antennas}
        users = 4
        rx_antennas = 2
        streams = 2
        epsilon = 1e-8
        "#,
        out.display()
    )
}

fn spec(out: &Path, algorithms: &str, antennas: &str, realizations: usize) -> ExperimentSpec {
    ExperimentSpec::from_toml(&spec_text(out, algorithms, antennas, realizations)).unwrap()
}

fn read_rows(path: &Path) -> Vec<RunRecord> {
    csv::Reader::from_path(path).unwrap().deserialize().map(|r| r.unwrap()).collect()
}

#[test]
fn single_zf_cell_matches_direct_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(dir.path(), r#"[{ name = "zf" }]"#, "[16]", 1);
    let report = run::run(&s, Some(1)).unwrap();
    let rows = read_rows(&report.summary_csv);
    assert_eq!(rows.len(), 1);

    let channel = run::realization_channel(&s, 16, 0).unwrap();
    let cfg = run::calibrated_config(&s, &channel, 16, 10.0).unwrap();
    let p = wsr_core::wmmse::zf_init(&channel, &cfg).unwrap();
    assert_eq!(cfg.rate_unit, wsr_core::RateUnit::Bpcu);
    let direct = wsr(&channel, &p, &cfg).unwrap();
    assert!((rows[0].wsr_bpcu - direct).abs() <= 1e-12 * direct);
    assert_eq!(rows[0].iters, 0);
    assert!(rows[0].kkt_residual.is_some());
}

#[test]
fn csv_header_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let report = run::run(&spec(dir.path(), r#"[{ name = "mrt" }]"#, "[8]", 1), Some(1)).unwrap();
    let text = std::fs::read_to_string(report.summary_csv).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "scenario,algorithm,M,K,SNR,realization,wsr_bpcu,iters,wall_s,feas_residual,kkt_residual"
    );
}

#[test]
fn same_seed_reproduces_everything_but_timing() {
    let algs = r#"[{ name = "wmmse" }, { name = "r-wmmse" }, { name = "papc-wmmse" }, { name = "rzf" }]"#;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run::run(&spec(a.path(), algs, "[12]", 3), Some(1)).unwrap();
    let rb = run::run(&spec(b.path(), algs, "[12]", 3), Some(3)).unwrap();
    let strip = |rows: Vec<RunRecord>| rows.into_iter().map(|r| r.without_timing()).collect::<Vec<_>>();
    assert_eq!(strip(read_rows(&ra.summary_csv)), strip(read_rows(&rb.summary_csv)));
    assert_eq!(ra.outcome.traces.len(), 9);
    for (x, y) in ra.outcome.traces.iter().zip(&rb.outcome.traces) {
        assert_eq!(x.precoder, y.precoder);
        let wsr = |t: &TraceFile| t.trace.records.iter().map(|r| (r.wsr.to_bits(), r.surrogate.to_bits())).collect::<Vec<_>>();
        assert_eq!(wsr(x), wsr(y));
    }
}

#[test]
fn traces_are_written_and_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let report = run::run(&spec(dir.path(), r#"[{ name = "r-wmmse", x_update = "compact" }]"#, "[8]", 2), None).unwrap();
    let files: Vec<_> = std::fs::read_dir(&report.trace_dir).unwrap().collect();
    assert_eq!(files.len(), 2);
    let text = std::fs::read_to_string(report.trace_dir.join("r-wmmse_M8_snr10_r1.json")).unwrap();
    let t: TraceFile = serde_json::from_str(&text).unwrap();
    let p: CMat = t.precoder.to_matrix().unwrap();
    assert_eq!(p.shape(), (8, 8));
    assert!(t.trace.is_monotone(1e-9));
}

#[test]
fn aggregates_ignore_realization_order() {
    let dir = tempfile::tempdir().unwrap();
    let report = run::run(&spec(dir.path(), r#"[{ name = "wmmse" }, { name = "ezf" }]"#, "[10]", 5), None).unwrap();
    let mut shuffled = report.outcome.records.clone();
    shuffled.reverse();
    shuffled.swap(1, 4);
    assert_eq!(run::aggregate(&shuffled, &[]), run::aggregate(&report.outcome.records, &[]));
}

#[test]
fn wmmse_and_reduced_agree_on_the_reference_desk_shape() {
    let dir = tempfile::tempdir().unwrap();
    let text = spec_text(dir.path(), r#"[{ name = "wmmse" }, { name = "r-wmmse" }]"#, "[64]", 3)
        .replace("users = 4", "users = 12")
        .replace("rx_antennas = 2", "rx_antennas = 4");
    let s = ExperimentSpec::from_toml(&text).unwrap();
    let agg = run::aggregate(&run::execute(&s, None).unwrap().records, &[]);
    let mean = |name: &str| agg.iter().find(|a| a.algorithm == name).unwrap().wsr_mean;
    assert!((mean("wmmse") - mean("r-wmmse")).abs() <= 0.01 * mean("wmmse"));
}

#[test]
fn single_bench_cell_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let report = bench::bench(&spec(dir.path(), r#"[{ name = "r-wmmse" }]"#, "[16]", 1)).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert!(report.exponents.is_empty());
    let r = &report.rows[0];
    assert!(r.gram_median_s > 0.0 && r.total_median_s >= r.gram_median_s);
    assert!(report.csv.unwrap().exists());
}

#[test]
fn fast_check_is_green() {
    let report = check(Level::Fast);
    assert!(report.passed(), "{report}");
}

#[test]
fn full_check_reports_small_kkt_residuals() {
    let report = check(Level::Full);
    let kkt = report.suite("kkt-stationarity").unwrap();
    assert!(kkt.passed && kkt.worst <= 1e-4, "{report}");
}

fn transposed_weight(e: &CMat) -> wsr_core::Result<CMat> {
    let mut w = linalg::inverse_hpd(e, "MSE matrix")?;
    linalg::hermitianize(&mut w);
    Ok(w.transpose())
}

#[test]
fn corrupted_weight_update_is_caught() {
    let report = check_with(Level::Fast, &Kernels { update_w: transposed_weight });
    assert!(!report.suite("logdet-identity").unwrap().passed);
    assert!(!report.passed());
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_wsr");
    assert!(Command::new(exe).arg("check").status().unwrap().success());
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, spec_text(dir.path(), r#"[{ name = "nope" }]"#, "[8]", 1)).unwrap();
    let status = Command::new(exe).arg("run").arg(&bad).status().unwrap();
    assert!(!status.success());
    let good = dir.path().join("good.toml");
    std::fs::write(&good, spec_text(&dir.path().join("out"), r#"[{ name = "zf" }]"#, "[8]", 2)).unwrap();
    let out = Command::new(exe).arg("run").arg(&good).env("WSR_WORKERS", "2").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/summary.csv").exists());
}

#[test]
fn shipped_experiment_files_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../experiments");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentSpec::load(&path).unwrap();
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
