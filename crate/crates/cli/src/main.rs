use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use circleflow::parallel;
use circleflow::Execution;
use circleflow_cli::{load_report, output_root, resolve_config, resume_scenario, run_scenario, scenarios, summarize, PipelineError};

#[derive(Parser)]
#[command(name = "circleflow", version, about = "Reaction-diffusion on the circle: run, resume and inspect scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more scenarios (config paths or bundled names).
    Run {
        #[arg(required = true)]
        configs: Vec<String>,
        /// Output root; defaults to $CIRCLEFLOW_OUT, then ./runs.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Disable the thread pool.
        #[arg(long)]
        sequential: bool,
    },
    /// Extend a finished run and redo its analysis.
    Resume {
        dir: PathBuf,
        #[arg(long)]
        extra: f64,
        #[arg(long)]
        sequential: bool,
    },
    /// List bundled scenarios, or the configs in a directory.
    List {
        #[arg(long)]
        filter: Option<String>,
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Print the report of a run directory.
    Report { dir: PathBuf },
}

fn fail(e: &PipelineError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn exec(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { configs, out, sequential } => {
            let mut cfgs = Vec::with_capacity(configs.len());
            for c in &configs {
                match resolve_config(c) {
                    Ok(cfg) => cfgs.push(cfg),
                    Err(e) => return fail(&e.into()),
                }
            }
            let root = output_root(out.as_deref());
            // several scenarios: one per worker, each integrated sequentially
            let (outer, inner) = if cfgs.len() > 1 { (exec(sequential), Execution::Sequential) } else { (Execution::Sequential, exec(sequential)) };
            let results = parallel::map(outer, &cfgs, |cfg| run_scenario(cfg, &root.join(&cfg.scenario_id), inner));
            let mut code = ExitCode::SUCCESS;
            for (cfg, r) in cfgs.iter().zip(results) {
                match r {
                    Ok(report) => {
                        print!("{}", summarize(&report));
                        println!("artifacts: {}", root.join(&cfg.scenario_id).display());
                    }
                    Err(e) => code = fail(&e),
                }
            }
            code
        }
        Command::Resume { dir, extra, sequential } => match resume_scenario(&dir, extra, exec(sequential)) {
            Ok(report) => {
                print!("{}", summarize(&report));
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        Command::List { filter, dir } => {
            let rows = match dir {
                Some(d) => match scenarios::list_dir(&d, filter.as_deref()) {
                    Ok(rows) => rows,
                    Err(e) => return fail(&e.into()),
                },
                None => scenarios::list_bundled(filter.as_deref()),
            };
            print!("{}", scenarios::format_table(&rows));
            ExitCode::SUCCESS
        }
        Command::Report { dir } => match load_report(&dir) {
            Ok(r) => {
                print!("{}", summarize(&r));
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
    }
}
