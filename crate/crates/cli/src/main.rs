//! `covidnet`: prepare data, train, evaluate, explain and report.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use covidnet::Error;

use settings::Settings;

#[derive(Parser, Debug)]
#[command(name = "covidnet", version, about = "Chest CT slice classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Window raw HU slices into PNGs, write train/val/test manifests and check the split.
    Prepare(Common),
    /// Train a network; writes per-epoch checkpoints and a log under --out.
    Train(Common),
    /// Evaluate a checkpoint on a manifest; writes predictions, confusion matrix and report.
    Eval(Common),
    /// Occlusion audit of a checkpoint on every image of a manifest.
    Explain(Common),
    /// Render report tables from prediction files (`name=path` or `path`).
    Report {
        #[arg(long, default_value = "report")]
        out: PathBuf,
        #[arg(required = true)]
        predictions: Vec<String>,
    },
    /// Print the architecture ledger of both presets.
    Ledger {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Settings file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "S|L")]
    preset: Option<String>,
    #[arg(long)]
    input_size: Option<usize>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn settings(&self) -> covidnet::Result<Settings> {
        let mut s = Settings::default();
        if let Some(c) = &self.config {
            s.apply_file(c)?;
        }
        for o in &self.overrides {
            s.apply_override(o)?;
        }
        let path = |p: &PathBuf| p.to_string_lossy().into_owned();
        let flags = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("preset", self.preset.clone()),
            ("input_size", self.input_size.map(|v| v.to_string())),
            ("data_dir", self.data_dir.as_ref().map(path)),
            ("manifest", self.manifest.as_ref().map(path)),
            ("checkpoint", self.checkpoint.as_ref().map(path)),
            ("threads", self.threads.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                s.set(k, &v)?;
            }
        }
        Ok(s)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) | Error::LedgerMismatch | Error::Shape(_) => 2,
        Error::Numeric(_) => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> covidnet::Result<()> {
    let (common, which) = match cli.command {
        Command::Report { out, predictions } => return commands::report_cmd(&predictions, &out),
        Command::Ledger { out } => return commands::ledger_cmd(out.as_deref()),
        Command::Prepare(c) => (c, "prepare"),
        Command::Train(c) => (c, "train"),
        Command::Eval(c) => (c, "eval"),
        Command::Explain(c) => (c, "explain"),
    };
    let settings = common.settings()?;
    let threads: usize = settings.parse("threads")?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let out = &common.out;
    commands::echo_settings(out, &settings)?;
    match which {
        "prepare" => commands::prepare(&settings, out).map(|_| ()),
        "train" => commands::train_cmd(&settings, out),
        "eval" => commands::eval_cmd(&settings, out),
        _ => commands::explain_cmd(&settings, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
