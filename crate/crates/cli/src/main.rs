use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use haarspace::harness::experiments;
use haarspace::{corridor_enumeration, lex_unit_cube_enumeration, run_experiment, Config, Enumeration, ExtremalSpec};

#[derive(Parser)]
#[command(name = "haarspace", version, about = "Haar system and Besov quasi-norm experiments on dyadic grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the registered experiments.
    List,
    /// Run one experiment; exit status 0 only if every verdict passes.
    Run {
        id: String,
        /// Flat `key = value` file layered over the experiment defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for the CSV, summary, SVG and attachments.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Extra overrides, `key=value`; applied after `--config`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Build an extremal function and print it in grid-function text form.
    Make {
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(ExtremalSpec::FAMILIES))]
        family: String,
        #[arg(long, default_value_t = 8)]
        n: u32,
        #[arg(long, default_value_t = 2)]
        m: u32,
        #[arg(long, default_value_t = 5)]
        j: u32,
        #[arg(long = "m-active", default_value_t = 2)]
        m_active: u32,
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long, default_value_t = 12)]
        level: u32,
    },
    /// Print a prefix of an enumeration of the Haar system.
    Enumerate {
        #[arg(long, value_enum, default_value_t = Kind::Corridor)]
        kind: Kind,
        #[arg(long, default_value_t = 1)]
        d: usize,
        /// Number of terms to print.
        #[arg(long, conflicts_with = "checkpoint")]
        count: Option<usize>,
        /// Print up to the `m`-th checkpoint (R(m) for corridors, all levels below `m` for lex).
        #[arg(long)]
        checkpoint: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Corridor,
    Lex,
}

fn schemas() -> String {
    let mut s = String::from("Experiments and their CSV columns:\n");
    for e in experiments() {
        s.push_str(&format!("  {:<24} {}\n  {:<24} columns: {}\n", e.id, e.summary, "", e.columns));
    }
    s
}

fn run(cli: Cli) -> Result<bool, String> {
    match cli.command {
        Command::List => {
            for e in experiments() {
                println!("{:<24} {}", e.id, e.summary);
            }
            Ok(true)
        }
        Command::Run { id, config, out, seed, set } => {
            let mut cfg = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                    Config::parse(&text).map_err(|e| e.to_string())?
                }
                None => Config::default(),
            };
            for kv in set {
                let (k, v) = kv.split_once('=').ok_or_else(|| format!("expected key=value, got {kv}"))?;
                cfg.set(k.trim(), v.trim());
            }
            if let Some(seed) = seed {
                cfg.set("seed", seed);
            }
            let report = run_experiment(&id, &cfg).map_err(|e| e.to_string())?;
            print!("{}", report.summary());
            println!("  elapsed {:.3} s", report.elapsed.as_secs_f64());
            if let Some(dir) = out {
                for path in report.write_to(&dir).map_err(|e| e.to_string())? {
                    println!("  wrote {}", path.display());
                }
            }
            Ok(report.passed())
        }
        Command::Make { family, n, m, j, m_active, d, level } => {
            let spec = ExtremalSpec { family, n, m, j, m_active, d, level };
            let f = spec.build().map_err(|e| e.to_string())?;
            print!("{}", f.to_text());
            Ok(true)
        }
        Command::Enumerate { kind, d, count, checkpoint } => {
            let e: Enumeration = match kind {
                Kind::Corridor => corridor_enumeration(d),
                Kind::Lex => lex_unit_cube_enumeration(d),
            }
            .map_err(|e| e.to_string())?;
            let r = match (count, checkpoint) {
                (Some(c), _) => c,
                (None, Some(m)) => e.checkpoint(m).ok_or_else(|| format!("checkpoint {m} is beyond the horizon"))?,
                (None, None) => 10,
            };
            for (n, idx) in e.prefix(r).map_err(|e| e.to_string())?.iter().enumerate() {
                println!("{}\t{idx}", n + 1);
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let command = Cli::command().mut_subcommand("run", |c| c.after_long_help(schemas()));
    let cli = match Cli::from_arg_matches(&command.get_matches()) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
