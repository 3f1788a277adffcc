use std::fs;
use std::path::Path;
use std::process::{Command, Stdio};

use hslag::cli::{
    emit_plot_data, read_plot_data, read_traces, run_suite, ExperimentConfig, Suite, Trace, PLOT_FILE,
};
use hslag::Error;
use proptest::prelude::*;
use tempfile::tempdir;

const QUICK: &str = r#"{ "grid_sizes": [12], "starts": 1, "frames": 1, "test_functions": 2 }"#;

fn quick() -> ExperimentConfig {
    ExperimentConfig::from_json(QUICK).unwrap()
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hslag"));
    c.stdout(Stdio::null()).stderr(Stdio::null());
    c
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn unknown_fields_and_bad_json_are_config_errors() {
    assert!(matches!(ExperimentConfig::from_json(r#"{ "gird_sizes": [16] }"#), Err(Error::Config(_))));
    assert!(matches!(ExperimentConfig::from_json("{ not json"), Err(Error::Config(_))));
    assert!(matches!(ExperimentConfig::from_json(r#"{ "seed": -3 }"#), Err(Error::Config(_))));
}

#[test]
fn invalid_settings_are_rejected_before_running() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("run");
    let odd = ExperimentConfig::from_json(r#"{ "grid_sizes": [15] }"#).unwrap();
    assert!(matches!(run_suite(Suite::VerifyModels, &odd, &out, None), Err(Error::Config(_))));
    let far = ExperimentConfig::from_json(r#"{ "t": [0.5] }"#).unwrap();
    assert!(matches!(run_suite(Suite::Reduce, &far, &out, None), Err(Error::Config(_))));
    let single = ExperimentConfig::from_json(r#"{ "t": [0.05] }"#).unwrap();
    assert!(matches!(run_suite(Suite::Sweep, &single, &out, None), Err(Error::Config(_))));
    let wrong = ExperimentConfig::from_json(r#"{ "suite": "sweep" }"#).unwrap();
    assert!(matches!(run_suite(Suite::Spectrum, &wrong, &out, None), Err(Error::Config(_))));
    assert!(!out.exists(), "a rejected config must not create the run directory");
}

#[test]
fn plot_data_of_an_empty_directory_fails_without_writing() {
    let dir = tempdir().unwrap();
    assert!(emit_plot_data(dir.path()).is_err());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    assert!(emit_plot_data(&dir.path().join("missing")).is_err());
    assert!(!dir.path().join("missing").exists());
}

#[test]
fn spectrum_traces_round_trip() {
    let dir = tempdir().unwrap();
    let run = run_suite(Suite::Spectrum, &quick(), dir.path(), None).unwrap();
    assert!(run.passed(), "{:#?}", run.manifest.assertions);
    let traces = read_traces(dir.path()).unwrap();
    let spectrum = traces.iter().find(|t| t.name.starts_with("spectrum_")).expect("spectrum trace");
    assert!(!spectrum.rows.is_empty());
    let copy = tempdir().unwrap();
    let path = spectrum.write(copy.path()).unwrap();
    let back = Trace::read(&path).unwrap();
    assert_eq!(&back, spectrum);
    assert_eq!(
        fs::read_to_string(&path).unwrap(),
        fs::read_to_string(dir.path().join(spectrum.file_name())).unwrap()
    );
    let rows = read_plot_data(&dir.path().join(PLOT_FILE)).unwrap();
    let count: usize = traces.iter().map(|t| t.rows.len() * (t.columns.len() - 1)).sum();
    assert_eq!(rows.len(), count);
}

#[test]
fn sweep_scaling_trace_has_a_monotone_t_column() {
    let dir = tempdir().unwrap();
    let cfg = ExperimentConfig::from_json(r#"{ "grid_sizes": [12], "t": [0.08, 0.04, 0.02] }"#).unwrap();
    let run = run_suite(Suite::Sweep, &cfg, dir.path(), None).unwrap();
    assert!(run.passed(), "{:#?}", run.manifest.assertions);
    let scaling = read_traces(dir.path())
        .unwrap()
        .into_iter()
        .find(|t| t.name == "scaling")
        .expect("scaling trace");
    let t = scaling.column("t").unwrap();
    assert!(t.len() >= 2);
    assert!(t.windows(2).all(|w| w[0] > w[1]) || t.windows(2).all(|w| w[0] < w[1]), "{t:?}");
}

#[test]
fn identical_config_and_seed_give_identical_manifests() {
    let (a, b, c) = (tempdir().unwrap(), tempdir().unwrap(), tempdir().unwrap());
    let cfg = quick();
    run_suite(Suite::Estimates, &cfg, a.path(), Some(11)).unwrap();
    run_suite(Suite::Estimates, &cfg, b.path(), Some(11)).unwrap();
    run_suite(Suite::Estimates, &cfg, c.path(), Some(12)).unwrap();
    let read = |d: &Path| fs::read(d.join("manifest.json")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_ne!(read(a.path()), read(c.path()));
}

#[test]
fn exit_codes() {
    let dir = tempdir().unwrap();
    let good = write_config(dir.path(), QUICK);
    let out = dir.path().join("ok");
    let status = bin().args(["verify-models", "--config"]).arg(&good).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("manifest.json").exists());

    let strict = dir.path().join("strict.json");
    fs::write(&strict, r#"{ "grid_sizes": [12], "tolerances": { "stationarity": 1e-30 } }"#).unwrap();
    let status = bin()
        .args(["verify-models", "--config"])
        .arg(&strict)
        .arg("--out")
        .arg(dir.path().join("strict"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{ "grid": 12 }"#).unwrap();
    let status = bin().args(["spectrum", "--config"]).arg(&bad).status().unwrap();
    assert_eq!(status.code(), Some(2));

    let status = bin().args(["spectrum", "--config"]).arg(dir.path().join("absent.json")).status().unwrap();
    assert_eq!(status.code(), Some(2));
    let status = bin().arg("spectrum").status().unwrap();
    assert_eq!(status.code(), Some(2));
    let status = bin().args(["plot"]).arg(dir.path().join("empty")).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn environment_overrides_only_the_output_directory() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), QUICK);
    let env_out = dir.path().join("from-env");
    let status = bin()
        .args(["verify-models", "--config"])
        .arg(&cfg)
        .env("HSLAG_OUT", &env_out)
        .current_dir(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(env_out.join("manifest.json").exists());
    let cli_out = dir.path().join("from-cli");
    bin()
        .args(["verify-models", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&cli_out)
        .env("HSLAG_OUT", &env_out)
        .status()
        .unwrap();
    assert!(cli_out.join("manifest.json").exists());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn traces_round_trip_exactly(
        rows in prop::collection::vec(prop::collection::vec(-1e300f64..1e300, 3), 1..20),
    ) {
        let dir = tempdir().unwrap();
        let mut t = Trace::new("prop", &["t", "a", "b"]);
        for r in &rows {
            t.push(r.clone());
        }
        let back = Trace::read(&t.write(dir.path()).unwrap()).unwrap();
        prop_assert_eq!(back, t);
    }
}
