use std::fs;
use std::path::{Path, PathBuf};

use capfield::background::read_state;
use capfield::cli::{run, EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, EXIT_PARTIAL, TRANSITION_HEADER};
use serde_json::{json, Value};
use tempfile::TempDir;

fn base_config() -> Value {
    json!({
        "grid": {"x": {"min": -1.0, "max": 1.0, "n": 5},
                 "k": {"min": 0.05, "max": 6.0, "n": 120},
                 "khat": {"min": 0.01, "max": 10.0, "n": 300}},
        "model": {"sigma_x2": 1.0, "sigma_k2": 1.0, "sigma_xhat2": 1.0, "sigma_khat2": 1.0,
                  "tau": 1.0, "gamma": 0.1, "epsilon": 0.5, "nu": 0.0, "alpha": 1.0,
                  "s_values": [1.0], "s_weights": [1.0], "n_firms": 2.0, "n_investors": 1.0,
                  "functions": {"R": {"family": "constant", "value": 2.0},
                                "r": {"family": "constant", "value": 0.5},
                                "H": {"family": "constant", "value": 1.0},
                                "F0": {"family": "constant", "value": 0.0},
                                "F1": {"family": "constant", "value": 0.0},
                                "F2": {"curve": {"family": "constant", "value": 1.0}}}},
        "init_kx": 1.0
    })
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn cli(args: &[&str]) -> u8 {
    run(std::iter::once("capfield").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn background(dir: &Path, cfg: &Value) -> PathBuf {
    let c = write_config(dir, "config.json", cfg);
    let out = dir.join("out");
    assert_eq!(cli(&["background", "--config", p(&c), "--out", p(&out)]), EXIT_OK);
    out
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap())
        .collect()
}

#[test]
fn symmetric_constant_return_gives_flat_capital() {
    let tmp = TempDir::new().unwrap();
    let out = background(tmp.path(), &base_config());
    let st = read_state(&out).unwrap();
    let (lo, hi) = st
        .k_x
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), k| (a.min(*k), b.max(*k)));
    assert!(hi - lo < 1e-8, "K_X spread {}", hi - lo);
    assert!(out.join("manifest.json").exists());
    assert!(out.join("psihat2.csv").exists());
}

#[test]
fn malformed_config_exits_one() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = base_config();
    cfg["model"]["tua"] = json!(1.0);
    let c = write_config(tmp.path(), "bad.json", &cfg);
    assert_eq!(cli(&["background", "--config", p(&c)]), EXIT_CONFIG);
    fs::write(tmp.path().join("broken.json"), "{\"grid\": ").unwrap();
    assert_eq!(
        cli(&["background", "--config", p(&tmp.path().join("broken.json"))]),
        EXIT_CONFIG
    );
    assert_eq!(cli(&["background"]), EXIT_CONFIG);
}

#[test]
fn unknown_key_is_named_in_the_diagnostic() {
    let mut cfg = base_config();
    cfg["model"]["functions"]["H"]["slope"] = json!(1.0);
    let err = capfield::cli::RunConfig::from_value(cfg).unwrap_err();
    let msg = format!("{err:#}");
    assert!(msg.contains("model.functions.H") && msg.contains("slope"), "{msg}");
}

#[test]
fn non_convergence_writes_residual_history() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = base_config();
    cfg["solver"] = json!({"max_iter": 3});
    cfg["grid"]["x"] = json!({"min": -1.0, "max": 1.0, "n": 5});
    cfg["model"]["functions"]["R"] = json!({"family": "affine", "intercept": 2.0, "k": 0.0, "x": 0.3});
    let c = write_config(tmp.path(), "c.json", &cfg);
    let out = tmp.path().join("out");
    assert_eq!(cli(&["background", "--config", p(&c), "--out", p(&out)]), EXIT_NUMERIC);
    let rows = csv_rows(&out.join("residual_history.csv"));
    assert_eq!(rows.len(), 3);
}

fn double_well() -> Value {
    let mut cfg = base_config();
    cfg["grid"] = json!({"x": {"min": -2.0, "max": 2.0, "n": 9},
                         "k": {"min": 0.05, "max": 20.0, "n": 200},
                         "khat": {"min": 0.01, "max": 40.0, "n": 400}});
    cfg["model"]["tau"] = json!(0.5);
    cfg["model"]["functions"]["R"] = json!({
        "family": "cobb_douglas", "scale": 1.0, "exponent": 0.8,
        "profile": {"family": "cosine", "mean": 1.0, "amplitude": 0.5, "frequency": std::f64::consts::FRAC_PI_2, "phase": 0.0}
    });
    cfg
}

#[test]
fn two_initial_profiles_reach_distinct_fixed_points() {
    let tmp = TempDir::new().unwrap();
    let c = write_config(tmp.path(), "c.json", &double_well());
    let x: Vec<f64> = (0..9).map(|i| -2.0 + 0.5 * i as f64).collect();
    let mut states = Vec::new();
    for (name, left) in [("left", true), ("right", false)] {
        let init: Vec<f64> = x.iter().map(|v| if (*v < 0.0) == left { 2.5 } else { 0.5 }).collect();
        let init_path = tmp.path().join(format!("{name}.json"));
        fs::write(&init_path, serde_json::to_string(&init).unwrap()).unwrap();
        let out = tmp.path().join(name);
        assert_eq!(
            cli(&[
                "background",
                "--config",
                p(&c),
                "--init",
                p(&init_path),
                "--out",
                p(&out)
            ]),
            EXIT_OK
        );
        states.push(read_state(&out).unwrap());
    }
    for st in &states {
        assert!(st.residual < 1e-8);
        // Residual check: every active sector carries its own invested capital.
        for j in 0..st.k_x.len() {
            if st.active(j) {
                let rel = (st.khat_x[j] / st.psi2_x[j] - st.k_x[j]).abs() / st.k_x[j];
                assert!(rel < 1e-6, "sector {j}: {rel}");
            }
        }
    }
    let gap = states[0]
        .psi2_x
        .iter()
        .zip(&states[1].psi2_x)
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(gap > 0.1, "fixed points coincide: {gap}");
}

#[test]
fn init_file_may_be_a_bundle_csv() {
    let tmp = TempDir::new().unwrap();
    let out = background(tmp.path(), &base_config());
    let c = tmp.path().join("config.json");
    let again = tmp.path().join("again");
    let init = out.join("k_x.csv");
    assert_eq!(
        cli(&["background", "--config", p(&c), "--init", p(&init), "--out", p(&again)]),
        EXIT_OK
    );
    let (a, b) = (read_state(&out).unwrap(), read_state(&again).unwrap());
    for (x, y) in a.k_x.iter().zip(&b.k_x) {
        assert!((x - y).abs() < 1e-7);
    }
}

fn transition(dir: &Path, out: &Path, queries: &str) -> (u8, Vec<csv::StringRecord>, csv::StringRecord) {
    let q = dir.join("queries.csv");
    fs::write(&q, queries).unwrap();
    let code = cli(&[
        "transition",
        "--config",
        p(&dir.join("config.json")),
        "--queries",
        p(&q),
        "--out",
        p(out),
    ]);
    let mut r = csv::Reader::from_path(out.join("transitions.csv")).unwrap();
    let header = r.headers().unwrap().clone();
    (code, r.records().map(|x| x.unwrap()).collect(), header)
}

#[test]
fn empty_query_file_gives_header_only() {
    let tmp = TempDir::new().unwrap();
    let out = background(tmp.path(), &base_config());
    let (code, rows, header) = transition(tmp.path(), &out, "kind,Ki,Xi,s,Kf,Xf,alpha\n");
    assert_eq!(code, EXIT_OK);
    assert!(rows.is_empty());
    assert_eq!(header.iter().collect::<Vec<_>>(), TRANSITION_HEADER.to_vec());
}

#[test]
fn identity_query_has_zero_log_value() {
    let tmp = TempDir::new().unwrap();
    let out = background(tmp.path(), &base_config());
    let (code, rows, _) = transition(
        tmp.path(),
        &out,
        "kind,Ki,Xi,s,Kf,Xf,alpha\nfirm,1.3,0.25,1,1.3,0.25,1\n",
    );
    assert_eq!(code, EXIT_OK);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][3].parse::<f64>().unwrap(), 0.0);
    assert_eq!(&rows[0][10], "");
}

#[test]
fn batch_preserves_rows_and_flags_errors() {
    let tmp = TempDir::new().unwrap();
    let out = background(tmp.path(), &base_config());
    let mut q = String::from("kind,Ki,Xi,s,Kf,Xf,alpha,Khati,Xhati,Khatf,Xhatf\n");
    let mut expected_bad = Vec::new();
    for i in 0..1000 {
        let t = i as f64 / 1000.0;
        match i % 4 {
            0 | 1 => {
                // Every 50th firm row leaves the sector grid.
                let xf = if i % 50 == 0 { 3.0 } else { 0.9 * (1.0 - 2.0 * t) };
                if i % 50 == 0 {
                    expected_bad.push(i);
                }
                q.push_str(&format!("firm,{},{},1,{},{},1,,,,\n", 0.5 + t, -0.4 * t, 1.0 + t, xf));
            }
            _ => q.push_str(&format!("investor,,,,,,1,{},{},{},{}\n", 0.5 + t, 0.3, 1.0 + t, -0.3)),
        }
    }
    let (code, rows, _) = transition(tmp.path(), &out, &q);
    assert_eq!(code, EXIT_NUMERIC);
    assert_eq!(rows.len(), 1000);
    let bad: Vec<usize> = rows
        .iter()
        .filter(|r| !r[10].is_empty())
        .map(|r| r[0].parse().unwrap())
        .collect();
    assert_eq!(bad, expected_bad);
    for r in rows.iter().filter(|r| r[10].is_empty()) {
        assert!(r[3].parse::<f64>().unwrap().is_finite());
    }
}

#[test]
fn pair_queries_report_a_vertex() {
    let tmp = TempDir::new().unwrap();
    let out = background(tmp.path(), &base_config());
    let q = "kind,Ki,Xi,s,Kf,Xf,Ki_b,Xi_b,Kf_b,Xf_b,Khati,Xhati,Khatf,Xhatf,Khati_b,Xhati_b,Khatf_b,Xhatf_b,alpha\n\
             firm_firm,1,-0.5,1,1.2,0.5,1.1,0.5,1,-0.5,,,,,,,,,1\n\
             investor_investor,,,,,,,,,,1,0,2,0.5,1,0.4,1.3,-0.4,1\n";
    let (code, rows, _) = transition(tmp.path(), &out, q);
    assert_eq!(code, EXIT_OK);
    assert!(rows[0][9].parse::<f64>().unwrap() > 0.0);
    assert_eq!(&rows[1][9], "");
}

fn oracle_config() -> Value {
    let mut cfg = base_config();
    cfg["oracle"] = json!({
        "firm_pde": {"operator": "firm",
                     "x_axis": {"min": -1.0, "max": 1.0, "n": 41},
                     "capital_axis": {"min": 0.05, "max": 4.0, "n": 41},
                     "dt": 0.01, "horizon": 6.0},
        "mc": {"n_paths": 400, "dt": 0.01, "horizon": 0.5, "seed": 11}
    });
    cfg
}

#[test]
fn oracle_report_shows_heat_kernel_spread_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let out = background(tmp.path(), &oracle_config());
    let c = tmp.path().join("config.json");
    let run_once = |seed: &str| {
        assert_eq!(
            cli(&["oracle", "--config", p(&c), "--out", p(&out), "--seed", seed]),
            EXIT_OK
        );
        (
            fs::read(out.join("report.json")).unwrap(),
            fs::read(out.join("mc_firm_histogram.csv")).unwrap(),
        )
    };
    let first = run_once("5");
    let report: Value = serde_json::from_slice(&first.0).unwrap();
    let spread = report["firm_spread"]["error"].as_f64().unwrap();
    assert!(spread < 1e-4, "{spread}");
    assert_eq!(report["mc"]["seed"], json!(5));
    assert!(report["firm"]["regions"][0]["rel_l2"].as_f64().unwrap().is_finite());
    assert_eq!(run_once("5"), first);
    assert_ne!(run_once("6").1, first.1);
}

#[test]
fn oracle_without_section_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let out = background(tmp.path(), &base_config());
    let c = tmp.path().join("config.json");
    assert_eq!(cli(&["oracle", "--config", p(&c), "--out", p(&out)]), EXIT_CONFIG);
}

fn sweep(dir: &Path, cfg: &Value, out: &str, workers: &str) -> (u8, Vec<csv::StringRecord>) {
    let c = write_config(dir, &format!("{out}.json"), cfg);
    let o = dir.join(out);
    let code = cli(&["sweep", "--config", p(&c), "--out", p(&o), "--workers", workers]);
    (code, csv_rows(&o.join("index.csv")))
}

#[test]
fn one_point_sweep_matches_a_single_run() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = base_config();
    let single = background(tmp.path(), &cfg);
    cfg["sweep"] = json!([{"parameter": "model.tau", "values": [1.0]}]);
    let (code, rows) = sweep(tmp.path(), &cfg, "sw", "1");
    assert_eq!(code, EXIT_OK);
    assert_eq!(rows.len(), 1);
    assert_eq!(
        fs::read(single.join("state.json")).unwrap(),
        fs::read(tmp.path().join("sw/run_0000/state.json")).unwrap()
    );
}

#[test]
fn three_by_two_sweep_tracks_d_const_with_tau() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = base_config();
    cfg["sweep"] = json!([{"parameter": "model.tau", "values": [0.5, 1.0, 2.0]},
                          {"parameter": "model.gamma", "values": [0.1, 0.2]}]);
    let (code, rows) = sweep(tmp.path(), &cfg, "sw", "3");
    assert_eq!(code, EXIT_OK);
    assert_eq!(rows.len(), 6);
    for i in 0..6 {
        assert!(tmp.path().join(format!("sw/run_{i:04}/state.json")).exists());
    }
    for gamma_col in 0..2 {
        let d: Vec<f64> = (0..3).map(|t| rows[2 * t + gamma_col][4].parse().unwrap()).collect();
        assert!(d[0] < d[1] && d[1] < d[2], "{d:?}");
    }
    let (_, serial) = sweep(tmp.path(), &cfg, "sw_serial", "1");
    assert_eq!(serial, rows);
    assert_eq!(
        fs::read(tmp.path().join("sw/index.csv")).unwrap(),
        fs::read(tmp.path().join("sw_serial/index.csv")).unwrap()
    );
}

#[test]
fn failed_tuple_gives_partial_exit() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = base_config();
    cfg["sweep"] = json!([{"parameter": "model.tau", "values": [1.0, -1.0]}]);
    let (code, rows) = sweep(tmp.path(), &cfg, "sw", "2");
    assert_eq!(code, EXIT_PARTIAL);
    assert_eq!(&rows[0][6], "ok");
    assert_ne!(&rows[1][6], "ok");
}

#[test]
fn unknown_sweep_path_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = base_config();
    cfg["sweep"] = json!([{"parameter": "model.taux", "values": [1.0]}]);
    let c = write_config(tmp.path(), "c.json", &cfg);
    assert_eq!(
        cli(&["sweep", "--config", p(&c), "--out", p(&tmp.path().join("o"))]),
        EXIT_CONFIG
    );
}
