use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use diffusion_ls::estimator::{centralized_step, step_network, CentralizedState, NodeState};
use diffusion_ls::harness::{
    emit_plots, parse_config, run_experiment, validate_config, Algorithm, ConfigError, ExperimentConfig,
    METRICS_HEADER, NETWORK_HEADER,
};
use diffusion_ls::model::{arx_cooperative_scenario, arx_cooperative_topology, generate_step, GeneratorState};

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn small_arx(out: &Path, runs: usize, horizon: usize) -> ExperimentConfig {
    let mut cfg = validate_config(configs_dir().join("arx_cooperative.toml")).unwrap();
    cfg.output.dir = out.to_path_buf();
    cfg.runs = runs;
    cfg.horizon = horizon;
    cfg
}

#[test]
fn shipped_arx_config_is_the_builtin_scenario() {
    let cfg = validate_config(configs_dir().join("arx_cooperative.toml")).unwrap();
    assert_eq!(cfg.scenario, arx_cooperative_scenario());
    assert_eq!(cfg.topology, arx_cooperative_topology());
    assert_eq!((cfg.runs, cfg.horizon, cfg.record_cadence), (100, 200, 1));
    assert_eq!(cfg.algorithms, vec![Algorithm::ClassicalPerNode, Algorithm::Distributed]);
}

#[test]
fn shipped_iid_config_validates() {
    let cfg = validate_config(configs_dir().join("iid_three_node.toml")).unwrap();
    assert_eq!(cfg.record_cadence, 10);
    assert_eq!(cfg.n(), 3);
}

#[test]
fn zero_horizon_reports_initial_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_arx(dir.path(), 1, 0);
    let summary = run_experiment(&cfg).unwrap();
    let expected = arx_cooperative_scenario().theta.as_vector().norm_squared();
    for s in &summary.algorithms {
        assert_eq!(s.series.ks, vec![0]);
        for e in &s.mean_final_sq_errors {
            assert!((e - expected).abs() < 1e-12);
        }
        assert_eq!(s.mean_averaged_regret, None);
    }
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), METRICS_HEADER.join(","));
    assert_eq!(metrics.lines().count(), 1 + 3 * 2);
    let network = fs::read_to_string(dir.path().join("network.csv")).unwrap();
    assert_eq!(network.lines().next().unwrap(), NETWORK_HEADER.join(","));
}

#[test]
fn outputs_are_deterministic_and_timestamps_stay_in_meta() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut cfg = small_arx(a.path(), 6, 40);
    cfg.output.trajectories = true;
    run_experiment(&cfg).unwrap();
    cfg.output.dir = b.path().to_path_buf();
    run_experiment(&cfg).unwrap();
    for f in [
        "metrics.csv",
        "network.csv",
        "aggregate.csv",
        "network_aggregate.csv",
        "summary.jsonl",
        "trajectories.jsonl",
    ] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
    assert!(a.path().join("meta.json").exists());
    let traj = fs::read_to_string(a.path().join("trajectories.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(traj.lines().next().unwrap()).unwrap();
    assert_eq!(first["theta_hat"].as_array().unwrap().len(), 8);
    assert!(first.get("logdet_Pinv").is_some());
    assert!(first.get("P_inv").is_none());
}

#[test]
fn aggregate_is_the_mean_over_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_arx(dir.path(), 4, 10);
    let summary = run_experiment(&cfg).unwrap();
    let mut rdr = csv::Reader::from_path(dir.path().join("metrics.csv")).unwrap();
    let mut sum = 0.0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        if &rec[0] == "10" && &rec[1] == "2" && &rec[2] == "distributed" {
            sum += rec[4].parse::<f64>().unwrap();
        }
    }
    let s = &summary.algorithm(Algorithm::Distributed).unwrap().series;
    let mean = s.mean_sq_error[s.index_of(10).unwrap()][2];
    assert!((mean - sum / 4.0).abs() <= 1e-12 * mean.max(1.0));
}

#[test]
fn cadence_keeps_the_final_step() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_arx(dir.path(), 1, 25);
    cfg.record_cadence = 10;
    let summary = run_experiment(&cfg).unwrap();
    assert_eq!(summary.algorithms[0].series.ks, vec![0, 10, 20, 25]);
}

#[test]
fn plots_are_written_with_classical_panel_first() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&small_arx(dir.path(), 2, 30)).unwrap();
    let paths = emit_plots(dir.path()).unwrap();
    assert_eq!(paths.len(), 3);
    let svg = fs::read_to_string(dir.path().join("figures/estimation_errors.svg")).unwrap();
    let classical = svg.find("classical_per_node").unwrap();
    let distributed = svg.find("distributed:").unwrap();
    assert!(classical < distributed);
    assert_eq!(svg.matches("<polyline").count(), 6);
}

#[test]
fn single_run_single_node_plots_one_line_per_panel() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        r#"
horizon = 20
algorithms = ["distributed"]
[output]
dir = "{}"
[topology]
weights = [[1.0]]
[scenario]
n = 1
theta = [1.0, 2.0]
noise = {{ kind = "uniform", half_width = 0.5 }}
regressors = {{ kind = "iid_gaussian" }}
"#,
        dir.path().display()
    );
    let cfg = parse_config(&text, Path::new(".")).unwrap();
    run_experiment(&cfg).unwrap();
    emit_plots(dir.path()).unwrap();
    let svg = fs::read_to_string(dir.path().join("figures/estimation_errors.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 1);
}

#[test]
fn cross_field_mismatch_names_both_fields() {
    let text = r#"
horizon = 5
algorithms = ["distributed"]
[output]
dir = "out"
[topology]
weights = [[0.5, 0.5], [0.5, 0.5]]
[scenario]
n = 2
theta = [0.2, 0.5, 0.3]
noise = { kind = "gaussian", variance = 0.1 }
regressors = { kind = "arx_cooperative", inputs = [[0], [0, 1]] }
"#;
    match parse_config(text, Path::new(".")) {
        Err(ConfigError::CrossFieldMismatch { first, second, .. }) => {
            assert_eq!((first, second), ("scenario.theta", "scenario.regressors.inputs"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn per_node_initial_overrides() {
    let text = r#"
horizon = 5
algorithms = ["distributed", "centralized"]
[output]
dir = "out"
[topology]
weights = [[0.5, 0.5], [0.5, 0.5]]
[scenario]
n = 2
theta = [1.0]
noise = { kind = "scaled_student_t", dof = 5.0, scale = 0.3 }
regressors = { kind = "iid_gaussian" }
[initial]
alpha0 = 2.0
nodes = [{ theta0 = [0.5] }, { p0 = [[4.0]] }]
"#;
    let cfg = parse_config(text, Path::new(".")).unwrap();
    assert_eq!(cfg.initial[0].theta0[0], 0.5);
    assert_eq!(cfg.initial[0].p0[(0, 0)], 2.0);
    assert_eq!(cfg.initial[1].theta0[0], 0.0);
    assert_eq!(cfg.initial[1].p0[(0, 0)], 4.0);
    // pooled information 1/2 + 1/4, information-weighted start 0.5 * (1/2) / (3/4)
    let c = cfg.initial_centralized();
    assert!((c.p()[(0, 0)] - 4.0 / 3.0).abs() < 1e-12);
    assert!((c.theta()[0] - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn replayed_regressors_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("k,i,phi_0,phi_1,y\n");
    for k in 0..=4 {
        for i in 0..2 {
            let (a, b) = (1.0 + k as f64, (i as f64) - 0.5);
            csv.push_str(&format!("{k},{i},{a},{b},{}\n", 2.0 * a - b));
        }
    }
    fs::write(dir.path().join("replay.csv"), csv).unwrap();
    let text = r#"
horizon = 4
algorithms = ["distributed", "classical_per_node"]
[output]
dir = "out"
[topology]
weights = [[0.5, 0.5], [0.5, 0.5]]
[scenario]
n = 2
theta = [2.0, -1.0]
noise = { kind = "gaussian", variance = 0.0 }
regressors = { kind = "replayed", path = "replay.csv" }
"#;
    let cfg = parse_config(text, dir.path()).unwrap();
    let summary = run_experiment(&cfg).unwrap();
    let d = summary.algorithm(Algorithm::Distributed).unwrap();
    assert!(d.mean_final_sq_errors.iter().all(|&e| e < 5.0));
    let short = text.replace("horizon = 4", "horizon = 9");
    assert!(matches!(
        parse_config(&short, dir.path()),
        Err(ConfigError::CrossFieldMismatch { .. })
    ));
}

#[test]
fn centralized_is_comparable_to_distributed_on_arx() {
    let scenario = arx_cooperative_scenario();
    let topology = arx_cooperative_topology();
    let theta = scenario.theta.as_vector().clone();
    let (mut dist_err, mut cent_err) = (0.0, 0.0);
    for seed in 0..20 {
        let mut gen = GeneratorState::new(&scenario, seed);
        let mut dist = vec![NodeState::isotropic(8, 1.0); 3];
        let mut cent = CentralizedState::isotropic(8, 1.0);
        for _ in 0..200 {
            let obs = generate_step(&scenario, &mut gen).unwrap();
            dist = step_network(&dist, &obs, &topology, 1).unwrap().states;
            cent = centralized_step(&cent, &obs).unwrap();
        }
        dist_err += dist.iter().map(|s| (&theta - s.theta()).norm_squared()).sum::<f64>() / 3.0;
        cent_err += (&theta - cent.theta()).norm_squared();
    }
    // the fusion centre sees every sample, so it is at least as good, but of the same order
    assert!(cent_err <= dist_err);
    assert!(dist_err <= 20.0 * cent_err, "distributed {dist_err} vs centralized {cent_err}");
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_diffusion-ls"))
}

#[test]
fn cli_validate_and_exit_codes() {
    let ok = cli().arg("validate").arg(configs_dir().join("arx_cooperative.toml")).output().unwrap();
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).starts_with("ok: n=3 m=8"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "horizon = [").unwrap();
    assert_eq!(cli().arg("validate").arg(&bad).output().unwrap().status.code(), Some(2));
    assert_eq!(cli().arg("run").arg(&bad).output().unwrap().status.code(), Some(2));
}

#[test]
fn cli_run_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs_dir().join("arx_cooperative.toml"))
        .unwrap()
        .replace("runs = 100", "runs = 3")
        .replace("horizon = 200", "horizon = 30")
        .replace("../out/arx_cooperative", "result");
    let path = dir.path().join("cfg.toml");
    fs::write(&path, text).unwrap();
    let out = cli().arg("run").arg(&path).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("result/figures/estimation_errors.svg").exists());
    let plot = cli().arg("plot").arg(dir.path().join("result")).output().unwrap();
    assert!(plot.status.success());
    let missing = cli().arg("plot").arg(dir.path().join("nowhere")).output().unwrap();
    assert!(!missing.status.success());
}

#[test]
fn cli_lemma_check() {
    let out = cli()
        .args(["lemma-check", "--lemma", "woodbury", "--draws", "50", "--dims", "1,2", "--nodes", "2,3"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let line: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(line["lemma"], "woodbury");
    assert_eq!(line["violations"], 0);
    let unknown = cli().args(["lemma-check", "--lemma", "nope"]).output().unwrap();
    assert_eq!(unknown.status.code(), Some(2));
}
