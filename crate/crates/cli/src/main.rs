use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use lurelq_cli::config::{self, from_pairs, parse_pairs, DEFAULT_OUT_DIR};
use lurelq_cli::run::{run, write_failure, RunError};

/// Environment variable naming the default output directory.
const OUT_ENV: &str = "LURELQ_OUT";

/// Dissipativity certificates and singular LQ value functions for
/// discretized boundary-controlled PDEs.
///
/// Settings are merged in order: `LURELQ_OUT`, the `--config` file,
/// positional `key=value` tokens, then flags.
#[derive(Parser, Debug)]
#[command(name = "lurelq", version, allow_negative_numbers = true)]
struct Cli {
    /// Configuration file (`key = value` lines or a JSON object)
    #[arg(long)]
    config: Option<PathBuf>,
    /// check | factorize | solve | simulate | values | sweep | report
    #[arg(long)]
    command: Option<String>,
    /// transport | wave | heat | file
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    dt: Option<String>,
    /// Horizon, or `auto`
    #[arg(long = "T")]
    t_final: Option<String>,
    /// Comma-separated, strictly decreasing regularization schedule
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// System bundle JSON for `model = file`
    #[arg(long)]
    bundle: Option<String>,
    /// sine | indicator | ones | exp | random
    #[arg(long)]
    x0: Option<String>,
    /// optimal | zero
    #[arg(long)]
    policy: Option<String>,
    /// Extra settings as `key=value`
    settings: Vec<String>,
}

fn collect_pairs(cli: Cli) -> Result<Vec<(String, String)>, RunError> {
    let mut pairs = vec![(
        "out_dir".to_string(),
        std::env::var(OUT_ENV).unwrap_or_else(|_| DEFAULT_OUT_DIR.into()),
    )];
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| config::ConfigError {
            key: "config".into(),
            message: format!("{}: {e}", path.display()),
        })?;
        pairs.extend(parse_pairs(&text)?);
    }
    pairs.extend(parse_pairs(&cli.settings.join("\n"))?);
    let flags = [
        ("command", cli.command),
        ("model", cli.model),
        ("n", cli.n),
        ("dt", cli.dt),
        ("T", cli.t_final),
        ("eps_schedule", cli.eps),
        ("seed", cli.seed),
        ("out_dir", cli.out),
        ("input_bundle", cli.bundle),
        ("x0", cli.x0),
        ("policy", cli.policy),
    ];
    pairs.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
    Ok(pairs)
}

fn main() -> ExitCode {
    let pairs = match collect_pairs(Cli::parse()) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("lurelq: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let cfg = match from_pairs(pairs) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("lurelq: {}", RunError::from(e));
            return ExitCode::from(2);
        }
    };
    match run(&cfg) {
        Ok(report) => {
            for c in &report.checks {
                let verdict = if c.pass { "PASS" } else { "FAIL" };
                let against = c.reference.map_or(String::new(), |r| format!(" {r:.6e} ±"));
                println!(
                    "{verdict} {} = {:.6e} {}{against} {:.3e}",
                    c.name,
                    c.value,
                    c.relation.symbol(),
                    c.tolerance
                );
            }
            println!("report: {}", cfg.out_dir.join("report.json").display());
            ExitCode::from(if report.pass { 0 } else { 1 })
        }
        Err(e) => {
            eprintln!("lurelq: {e}");
            write_failure(&cfg.out_dir, &config::serialize(&cfg), &e, cfg.seed);
            ExitCode::from(e.exit_code())
        }
    }
}
