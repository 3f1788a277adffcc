//! A CLI suite driven from code: parse a configuration, run it into a
//! temporary directory, and read the traces back.
//!
//! `cargo run --release --example run_suite`

use hslag::cli::{read_plot_data, run_suite, ExperimentConfig, Suite, PLOT_FILE};

fn main() -> hslag::Result<()> {
    let cfg = ExperimentConfig::from_json(r#"{ "grid_sizes": [16], "t": [0.08, 0.04, 0.02] }"#)?;
    let out = std::env::temp_dir().join("hslag-example-sweep");
    let run = run_suite(Suite::Sweep, &cfg, &out, Some(3))?;
    for a in &run.manifest.assertions {
        println!("{}", a.report_line());
    }
    let rows = read_plot_data(&out.join(PLOT_FILE))?;
    println!("{} plot rows in {}", rows.len(), out.display());
    std::process::exit(run.exit_code());
}
