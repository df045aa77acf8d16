//! Runs a penalty sweep described in TOML and prints the aggregated CSV.
//! Pass a path to use your own experiment file.

use iss_newton::experiment::{cmd_sweep, ExperimentConfig};

const DEFAULT: &str = r#"
problem = "scalar-eq"
algorithm = "alm"

[sweep]
rho = [2.0, 5.0, 10.0, 50.0, 100.0]
"#;

fn main() {
    let cfg = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::load(path.as_ref()),
        None => ExperimentConfig::from_toml(DEFAULT),
    };
    let mut cfg = cfg.unwrap_or_else(|e| {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    });
    let dir = tempfile::tempdir().expect("temporary directory");
    cfg.output.dir = Some(dir.path().to_path_buf());
    match cmd_sweep(&cfg) {
        Ok(out) => print!("{}", std::fs::read_to_string(&out.csv_path).expect("sweep CSV")),
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    }
}
