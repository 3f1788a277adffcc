use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{Map, Value};

use super::config::{ExperimentConfig, Suite};
use super::suites;
use super::trace::{emit_plot_data, Trace};
use crate::error::{Error, Result};

/// Environment variable overriding the output directory of the config (but
/// not `--out`).
pub const OUT_ENV: &str = "HSLAG_OUT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    AtMost,
    AtLeast,
    Below,
    Equals,
}

/// One checked inequality, tied to the acceptance criterion it evidences.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Assertion {
    pub criterion: u8,
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub relation: Relation,
    pub passed: bool,
}

impl Assertion {
    pub fn report_line(&self) -> String {
        let op = match self.relation {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
            Relation::Below => "<",
            Relation::Equals => "==",
        };
        format!(
            "[{}] C{:<2} {}: {:.6e} {op} {:.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.criterion,
            self.name,
            self.value,
            self.bound
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DrawnSeed {
    pub purpose: String,
    pub seed: u64,
}

/// Collects assertions, traces and results of one suite run. All random
/// draws come from one generator seeded with the master seed.
pub(crate) struct Recorder {
    assertions: Vec<Assertion>,
    traces: Vec<Trace>,
    results: Map<String, Value>,
    rng: ChaCha8Rng,
    seeds: Vec<DrawnSeed>,
}

impl Recorder {
    fn new(seed: u64) -> Self {
        Self {
            assertions: Vec::new(),
            traces: Vec::new(),
            results: Map::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            seeds: Vec::new(),
        }
    }

    fn check(&mut self, criterion: u8, name: &str, value: f64, bound: f64, relation: Relation) {
        let passed = match relation {
            Relation::AtMost => value <= bound,
            Relation::AtLeast => value >= bound,
            Relation::Below => value < bound,
            Relation::Equals => value == bound,
        };
        self.assertions.push(Assertion {
            criterion,
            name: name.to_string(),
            value,
            bound,
            relation,
            passed,
        });
    }

    pub fn at_most(&mut self, criterion: u8, name: &str, value: f64, bound: f64) {
        self.check(criterion, name, value, bound, Relation::AtMost);
    }

    pub fn at_least(&mut self, criterion: u8, name: &str, value: f64, bound: f64) {
        self.check(criterion, name, value, bound, Relation::AtLeast);
    }

    pub fn below(&mut self, criterion: u8, name: &str, value: f64, bound: f64) {
        self.check(criterion, name, value, bound, Relation::Below);
    }

    pub fn equals(&mut self, criterion: u8, name: &str, value: f64, bound: f64) {
        self.check(criterion, name, value, bound, Relation::Equals);
    }

    pub fn draw_seed(&mut self, purpose: &str) -> u64 {
        let seed = self.rng.gen();
        self.seeds.push(DrawnSeed {
            purpose: purpose.to_string(),
            seed,
        });
        seed
    }

    pub fn trace(&mut self, trace: Trace) {
        self.traces.push(trace);
    }

    pub fn result(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or_else(|e| Value::String(e.to_string()));
        self.results.insert(key.to_string(), v);
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub suite: Suite,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub passed: bool,
    /// Set when the suite stopped on an error before finishing its checks.
    pub error: Option<String>,
    pub assertions: Vec<Assertion>,
    pub seeds: Vec<DrawnSeed>,
    pub results: Map<String, Value>,
    pub artifacts: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.manifest.passed
    }

    /// 0 when every assertion passed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }
}

/// `--out`, then the environment override, then the config, then
/// `runs/<suite>`.
pub fn resolve_out_dir(cfg: &ExperimentConfig, suite: Suite, cli: Option<&Path>) -> PathBuf {
    if let Some(p) = cli {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    cfg.out
        .clone()
        .unwrap_or_else(|| Path::new("runs").join(suite.name()))
}

/// Validates the configuration, runs `suite` and writes `manifest.json`, the
/// traces and `plot_data.csv` into `out`.
///
/// Configuration and I/O problems are `Err` (exit status 2). A numerical
/// failure inside the suite is recorded in the manifest and fails the run.
pub fn run_suite(suite: Suite, cfg: &ExperimentConfig, out: &Path, seed: Option<u64>) -> Result<RunOutcome> {
    let mut cfg = cfg.clone();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate(suite)?;
    let mut rec = Recorder::new(cfg.seed);
    let error = match suites::run(suite, &cfg, &mut rec) {
        Ok(()) => None,
        Err(e @ Error::Config(_)) => return Err(e),
        Err(e) => Some(e.to_string()),
    };

    fs::create_dir_all(out)?;
    let mut artifacts = Vec::new();
    for t in &rec.traces {
        t.write(out)?;
        artifacts.push(t.file_name());
    }
    if !rec.traces.is_empty() {
        let plot = emit_plot_data(out)?;
        artifacts.push(plot.file_name().unwrap_or_default().to_string_lossy().into_owned());
    }
    artifacts.push("manifest.json".into());
    let passed = error.is_none() && !rec.assertions.is_empty() && rec.assertions.iter().all(|a| a.passed);
    let manifest = Manifest {
        tool: "hslag",
        version: env!("CARGO_PKG_VERSION"),
        suite,
        seed: cfg.seed,
        config: cfg,
        passed,
        error,
        assertions: rec.assertions,
        seeds: rec.seeds,
        results: rec.results,
        artifacts,
    };
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(RunOutcome {
        dir: out.to_path_buf(),
        manifest,
    })
}
