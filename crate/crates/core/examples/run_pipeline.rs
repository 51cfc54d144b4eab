//! Runs all six stages in process with a small configuration, the same
//! path the `polypseg pipeline` subcommand takes.
//!
//! `cargo run --release --example run_pipeline -- /tmp/polyp-run`

use polypseg::config::CliConfig;
use polypseg::pipeline::run_pipeline;

const CONFIG: &str = r#"
seed = 1
[dataset]
n_polyps = 12
n_nonpolyps = 4
[detector]
train_samples = 64
[detector.model]
epochs = 15
[models]
architectures = ["UNet", "FPN"]
[training]
epochs = 5
"#;

fn main() {
    let mut cfg = CliConfig::from_toml(CONFIG).expect("example config is valid");
    cfg.root = std::env::args().nth(1).unwrap_or_else(|| "polyp-run".into()).into();
    match run_pipeline(&cfg) {
        Ok(summary) => {
            for s in &summary.stages {
                println!("{:10} {:6.1}s {} output(s)", s.stage.name(), s.seconds, s.outputs.len());
            }
        }
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(2);
        }
    }
}
