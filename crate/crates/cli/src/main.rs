use std::path::PathBuf;
use std::process::ExitCode;

use bl_cli::commands::error_document;
use bl_cli::{render, Exit, Flags, VerifySide};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bl", version, about = "Brascamp–Lieb constants, certificates and grid checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a datum and report its partition and feasibility certificate.
    Analyze(Common),
    /// Compute D, E = √D, F = 1/√D and the optimal precisions.
    Constant(Common),
    /// Evaluate the functionals on grid functions against the constants.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Grid functions (otherwise read from the datum document).
        functions: Option<PathBuf>,
    },
    /// Zonotope volume against its lower bound for a decomposition of the identity.
    Zonoid(Common),
    /// Young-type constant from an orthogonal matrix.
    Young(Common),
}

#[derive(Args)]
struct Common {
    /// JSON document with the datum.
    input: PathBuf,
    /// Write the result document here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Gradient tolerance for the optimizer.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Extra seeded optimizer runs.
    #[arg(long, default_value_t = 0)]
    restarts: usize,
    /// Cells per axis for grid evaluation.
    #[arg(long, default_value_t = 256)]
    grid: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Which inequality `verify` checks.
    #[arg(long, value_enum, default_value = "BL")]
    side: VerifySide,
}

impl Common {
    fn flags(&self) -> Flags {
        Flags {
            tol: self.tol,
            max_iter: self.max_iter,
            restarts: self.restarts,
            grid: self.grid,
            seed: self.seed,
            side: self.side,
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Exit::Validation.code() as u8 } else { 0 });
        }
    };
    let (name, common, functions) = match &cli.command {
        Command::Analyze(c) => ("analyze", c, None),
        Command::Constant(c) => ("constant", c, None),
        Command::Verify { common, functions } => ("verify", common, functions.as_deref()),
        Command::Zonoid(c) => ("zonoid", c, None),
        Command::Young(c) => ("young", c, None),
    };
    let (document, exit) = match bl_cli::run(name, &common.input, functions, &common.flags()) {
        Ok(o) => (Some(o.document), o.exit),
        Err(e) => {
            eprintln!("bl {name}: {e}");
            let exit = e.exit();
            // parse failures produce no document
            let doc = (exit != Exit::Parse).then(|| error_document(name, &e));
            (doc, exit)
        }
    };
    if let Some(doc) = document {
        let text = render(&doc);
        match &common.out {
            Some(path) => {
                if let Err(e) = std::fs::write(path, text) {
                    eprintln!("bl {name}: cannot write {}: {e}", path.display());
                    return ExitCode::from(Exit::Parse.code() as u8);
                }
            }
            None => print!("{text}"),
        }
    }
    ExitCode::from(exit.code() as u8)
}
