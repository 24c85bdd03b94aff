use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use thz_core::channel::channel_matrix;
use thz_core::estimators::{estimate, EstimatorKind, EstimatorParams, SensingProblem};
use thz_core::CMatrix;
use thz_harness::config::ExperimentSpec;
use thz_harness::metrics::spectral_efficiency;
use thz_harness::report::read_records;
use thz_harness::runner::{run_experiment, Domain, PointSetup};
use thz_harness::{summarize, MetricRecord};

const DESK: &str = r#"
seed = 99

[system]
f_c = 142e9
B = 8e9
K_o = 128
L = 4
L_cm = 3
N_r = [8, 8]
N_t = [4, 4]
G_sub_r = 8
G_sub_t = 4
M = 2
K_p = 5
Q_p = 20
T_p = 20
frame_duration = 10e-3
subframe_duration = 10e-6
N_s = 4
"#;

fn spec(rest: &str) -> ExperimentSpec {
    ExperimentSpec::from_toml(&format!("{DESK}\n{rest}")).expect("test spec")
}

/// estimator → axis value (bits) → trial → NMSE of frame 0.
fn by_trial(records: &[MetricRecord]) -> BTreeMap<String, BTreeMap<u64, BTreeMap<usize, f64>>> {
    let mut out: BTreeMap<String, BTreeMap<u64, BTreeMap<usize, f64>>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.frame == 0) {
        out.entry(r.estimator.clone()).or_default().entry(r.axis_value.to_bits()).or_default().insert(r.trial, r.nmse);
    }
    out
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

#[test]
fn nmse_falls_with_snr_and_genie_is_a_lower_bound() {
    let s = spec(
        r#"
[[estimator]]
kind = "genie-ls"
[[estimator]]
kind = "ts"
[[estimator]]
kind = "gsomp"
[sweep]
axis = "snr"
values = [-10, -5, 0, 5, 10, 15, 20]
trials = 100
frames = 1
snr_db = 0
"#,
    );
    let out = run_experiment(&s, 0).unwrap();
    assert!(out.failures.is_empty());
    let rows = summarize(&out.records);
    assert_eq!(rows.len(), 7 * 3);
    for label in ["genie-ls", "ts", "gsomp"] {
        let curve: Vec<f64> = rows.iter().filter(|r| r.estimator == label).map(|r| r.nmse_mean).collect();
        let inversions: Vec<f64> = curve.windows(2).filter(|w| w[1] > w[0]).map(|w| w[1] / w[0] - 1.0).collect();
        assert!(inversions.len() <= 1 && inversions.iter().all(|&g| g < 0.05), "{label}: {curve:?}");
    }
    let table = by_trial(&out.records);
    for value in &s.sweep.values {
        let genie = &table["genie-ls"][&value.to_bits()];
        for other in ["ts", "gsomp"] {
            let o = &table[other][&value.to_bits()];
            let gap = mean(genie.iter().map(|(t, g)| o[t] - g));
            assert!(gap > 0.0, "{other} beats genie on average at {value} dB");
        }
    }
}

#[test]
fn perfect_csi_rate_bounds_estimated_rate() {
    let s = spec("[[estimator]]\nkind = \"ts\"\n[sweep]\naxis = \"snr\"\nvalues = [5]\ntrials = 100\nframes = 1\nsnr_db = 5\n");
    let setup = PointSetup::new(&s, 5.0).unwrap();
    let params = EstimatorParams::for_system(&setup.sys);
    for trial in 0..100 {
        let frame = setup.simulate(s.seed, Domain::Sweep, trial, 1).unwrap().remove(0);
        let obs = &frame.input.observation;
        let problem = SensingProblem::new(&setup.sys, setup.grid, obs).unwrap();
        let res = estimate(EstimatorKind::Ts, &problem, &[], &params, None).unwrap();
        let truth: Vec<CMatrix> = (1..=setup.sys.subcarriers).map(|k| channel_matrix(&frame.truth, k, &setup.sys).unwrap()).collect();
        let rate = setup.rate_setup(obs.noise_variance);
        let pilots = obs.subcarriers();
        let perfect = spectral_efficiency(&truth, &truth, &pilots, &rate).unwrap();
        let estimated = spectral_efficiency(&truth, &res.channels(&setup.sys), &pilots, &rate).unwrap();
        assert!(perfect >= estimated - 1e-9, "trial {trial}: {perfect} < {estimated}");
    }
}

#[test]
fn single_trial_sweeps_repeat_exactly() {
    let s = spec(
        "[[estimator]]\nkind = \"mfista\"\n[[estimator]]\nkind = \"ts\"\n[sweep]\naxis = \"kp\"\nvalues = [1, 3]\ntrials = 1\nframes = 2\nsnr_db = 0\n",
    );
    let a = run_experiment(&s, 1).unwrap();
    let b = run_experiment(&s, 0).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(summarize(&a.records).len(), 2 * 2);
}

fn mmvcs(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mmvcs")).args(args).output().expect("run mmvcs")
}

fn ok(out: &std::process::Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn command_line_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name).to_string_lossy().into_owned();

    let sim = path("sim.json");
    ok(&mmvcs(&["simulate", "--desk-scale", "--seed", "3", "--frames", "2", "--snr-db", "10", "--out", &sim]));
    let printed = ok(&mmvcs(&["estimate", &sim, "--estimator", "ts"]));
    let lines: Vec<&str> = printed.lines().collect();
    assert_eq!(lines[0], "frame,nmse,se,residual_ratio,support");
    assert_eq!(lines.len(), 3);
    let nmse: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
    assert!(nmse.is_finite() && nmse >= 0.0);

    let config = path("sweep.toml");
    std::fs::write(
        &config,
        format!(
            "{DESK}\n[[estimator]]\nkind = \"genie-ls\"\n[[estimator]]\nkind = \"gsomp\"\n\
             [sweep]\naxis = \"measurement_ratio\"\nvalues = [0.2, 0.4]\ntrials = 2\nframes = 1\nsnr_db = 10\n\
             [output]\ndir = \"unused\"\nplots = true\n"
        ),
    )
    .unwrap();
    let results = path("results");
    ok(&mmvcs(&["sweep", &config, "--threads", "1", "--out-dir", &results]));
    for file in ["records.csv", "summary.csv", "thresholds.json", "experiment.toml", "nmse.svg", "se.svg"] {
        assert!(Path::new(&results).join(file).exists(), "missing {file}");
    }
    let records = read_records(&Path::new(&results).join("records.csv")).unwrap();
    assert_eq!(records.len(), 2 * 2 * 2);

    let rebuilt = path("rebuilt");
    ok(&mmvcs(&["report", &format!("{results}/records.csv"), "--out-dir", &rebuilt]));
    assert_eq!(
        std::fs::read(Path::new(&results).join("summary.csv")).unwrap(),
        std::fs::read(Path::new(&rebuilt).join("summary.csv")).unwrap()
    );

    let broken = path("broken.toml");
    std::fs::write(&broken, format!("{DESK}\n[sweep]\naxis = \"snr\"\nvalues = []\ntrials = 0\nframes = 1\nsnr_db = 0\n")).unwrap();
    let failed = mmvcs(&["sweep", &broken]);
    assert!(!failed.status.success());
    assert!(String::from_utf8_lossy(&failed.stderr).starts_with("error:"));
}
