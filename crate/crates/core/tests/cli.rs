use std::path::{Path, PathBuf};

use binacox::binarizer::bin_index;
use binacox::cli::{main_with_args, EXIT_DATA, EXIT_OK, EXIT_USAGE};
use binacox::simulation::GroundTruth;
use binacox::{fit_bins, CutPointModel, FeatureCutPoints, SurvivalDataset};

fn run(args: &[&str]) -> i32 {
    let mut full = vec!["binacox"];
    full.extend_from_slice(args);
    main_with_args(full)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, n: usize, p: usize, seed: u64) -> (PathBuf, PathBuf) {
    let code = run(&["simulate", "--n", &n.to_string(), "--p", &p.to_string(), "--seed", &seed.to_string(), "--out-dir", s(dir)]);
    assert_eq!(code, EXIT_OK);
    (dir.join("data.csv"), dir.join("truth.json"))
}

fn metrics(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["method", "m1", "m2", "c_index"]);
    r.records().map(|row| row.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn usage_errors_exit_with_2() {
    assert_eq!(run(&[]), EXIT_USAGE);
    assert_eq!(run(&["fit", "--no-such-flag"]), EXIT_USAGE);
    assert_eq!(run(&["simulate", "--rho", "1.5", "--out-dir", "/tmp/unused"]), EXIT_USAGE);
    let tmp = tempfile::tempdir().unwrap();
    let (data, _) = simulate(tmp.path(), 100, 1, 0);
    let out = tmp.path().join("mt");
    assert_eq!(run(&["baseline", "--data", s(&data), "--method", "mt-b", "--alpha", "0", "--out-dir", s(&out)]), EXIT_USAGE);
    assert_eq!(run(&["bench", "--sweep", "n", "--values", "100", "--reps", "0", "--out-dir", s(&out)]), EXIT_USAGE);
}

#[test]
fn data_errors_exit_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let missing = tmp.path().join("missing.csv");
    assert_eq!(run(&["fit", "--data", s(&missing), "--out-dir", s(&out)]), EXIT_DATA);

    let garbled = tmp.path().join("garbled.csv");
    std::fs::write(&garbled, "time,event,x\n1.0,1,abc\n2.0,0,1.0\n").unwrap();
    assert_eq!(run(&["fit", "--data", s(&garbled), "--out-dir", s(&out)]), EXIT_DATA);

    let censored = tmp.path().join("censored.csv");
    std::fs::write(&censored, "time,event,x\n1.0,0,0.5\n2.0,0,1.0\n3.0,0,2.0\n").unwrap();
    assert_eq!(run(&["fit", "--data", s(&censored), "--gamma", "0.1", "--out-dir", s(&out)]), EXIT_DATA);
}

#[test]
fn perfect_cutpoints_score_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, truth_path) = simulate(tmp.path(), 400, 4, 3);
    let truth = GroundTruth::read(&truth_path).unwrap();
    let ds = SurvivalDataset::read_csv(&data).unwrap();
    let features = ds
        .names()
        .iter()
        .zip(&truth.mu_star)
        .map(|(name, mu)| FeatureCutPoints {
            name: name.clone(),
            cutpoints: mu.clone(),
            amplitudes: vec![1.0; mu.len()],
            k_hat: mu.len(),
            refit: vec![],
        })
        .collect();
    let perfect = tmp.path().join("perfect.json");
    CutPointModel { method: "truth".into(), features }.write(&perfect).unwrap();
    let out = tmp.path().join("eval");
    let code = run(&["evaluate", "--data", s(&data), "--truth", s(&truth_path), "--cutpoints", s(&perfect), "--out-dir", s(&out)]);
    assert_eq!(code, EXIT_OK);
    let rows = metrics(&out.join("metrics.csv"));
    assert_eq!(rows[0][0], "truth");
    assert_eq!(rows[0][1].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rows[0][2].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rows[1][0], "cox-continuous");
    assert!(rows[1][1].is_empty());
}

#[test]
fn evaluator_accepts_fit_and_baseline_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, truth) = simulate(tmp.path(), 300, 3, 4);
    let fit_dir = tmp.path().join("fit");
    let mt_dir = tmp.path().join("mt");
    assert_eq!(run(&["fit", "--data", s(&data), "--bins", "10", "--gamma", "0.01", "--out-dir", s(&fit_dir)]), EXIT_OK);
    assert!(!fit_dir.join("cv.csv").exists());
    assert_eq!(
        run(&["baseline", "--data", s(&data), "--method", "mt-ls", "--grid", "scheme", "--bins", "10", "--out-dir", s(&mt_dir)]),
        EXIT_OK
    );
    let scan = std::fs::read_to_string(mt_dir.join("scan.csv")).unwrap();
    assert!(scan.starts_with("feature,candidate,raw_p,corrected_p,selected"));
    let out = tmp.path().join("eval");
    let code = run(&[
        "evaluate",
        "--data",
        s(&data),
        "--truth",
        s(&truth),
        "--cutpoints",
        s(&fit_dir.join("cutpoints.json")),
        s(&mt_dir.join("cutpoints.json")),
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(code, EXIT_OK);
    let rows = metrics(&out.join("metrics.csv"));
    let methods: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(methods, ["binacox", "mt-ls-grid", "cox-continuous"]);
    for r in &rows {
        let c: f64 = r[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&c));
    }
}

#[test]
fn evaluator_rejects_mismatched_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, _) = simulate(tmp.path(), 200, 2, 5);
    let bad = tmp.path().join("bad.json");
    CutPointModel { method: "x".into(), features: vec![] }.write(&bad).unwrap();
    let out = tmp.path().join("eval");
    assert_eq!(run(&["evaluate", "--data", s(&data), "--cutpoints", s(&bad), "--out-dir", s(&out)]), EXIT_DATA);
}

#[test]
fn huge_gamma_detects_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, _) = simulate(tmp.path(), 300, 3, 6);
    let out = tmp.path().join("fit");
    assert_eq!(run(&["fit", "--data", s(&data), "--gamma", "1e6", "--out-dir", s(&out)]), EXIT_OK);
    let model = CutPointModel::read(out.join("cutpoints.json")).unwrap();
    assert!(model.k_hat().iter().all(|&k| k == 0));
}

#[test]
fn bench_with_one_rep_emits_one_row_per_configuration() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bench");
    assert_eq!(run(&["bench", "--sweep", "p", "--values", "1,2", "--n", "200", "--reps", "1", "--bins", "10", "--out-dir", s(&out)]), EXIT_OK);
    let mut r = csv::Reader::from_path(out.join("bench.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 2 * 3);
    assert!(rows.iter().all(|row| &row[5] == "1" && &row[7] == "0"));
}

#[test]
fn screen_keeps_the_requested_number_of_features() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, _) = simulate(tmp.path(), 300, 5, 7);
    let out = tmp.path().join("screen");
    assert_eq!(run(&["screen", "--data", s(&data), "--bins", "10", "--gamma", "0.01", "--top", "3", "--out-dir", s(&out)]), EXIT_OK);
    let text = std::fs::read_to_string(out.join("screen.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 3);
}

#[test]
fn fit_locates_true_cutpoints_within_one_bin() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, truth_path) = simulate(tmp.path(), 2000, 5, 8);
    let out = tmp.path().join("fit");
    assert_eq!(run(&["fit", "--data", s(&data), "--out-dir", s(&out)]), EXIT_OK);
    let truth = GroundTruth::read(&truth_path).unwrap();
    let model = CutPointModel::read(out.join("cutpoints.json")).unwrap();
    let ds = SurvivalDataset::read_csv(&data).unwrap();
    let scheme = fit_bins(&ds, 50).unwrap();
    let signal: Vec<usize> = (0..ds.p()).filter(|j| !truth.sparse_set.contains(j)).collect();
    let hits = signal
        .iter()
        .filter(|&&j| {
            let bounds = &scheme.feature(j).boundaries;
            let found = &model.features[j].cutpoints;
            truth.mu_star[j].iter().all(|&mu| {
                let b = bin_index(bounds, mu) as i64;
                found.iter().any(|&c| (bin_index(bounds, c) as i64 - b).abs() <= 1)
            })
        })
        .count();
    assert!(hits as f64 >= 0.8 * signal.len() as f64, "{hits} of {}", signal.len());
}
