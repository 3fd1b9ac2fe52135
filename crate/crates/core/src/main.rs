use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use space_core::backend::{BackendOptions, BackendRegistry};
use space_core::config::{parse_config, Method};
use space_core::{pipeline, report, synth, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "space", version, about = "Automatic concept extraction and TCAV testing for image classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract and test concepts, then write results.json, galleries and index.html.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Dataset root with one sub-directory per class; overrides the config's `dataset`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-render index.html for a result directory and print the alignment tally.
    Report {
        #[arg(long)]
        result: PathBuf,
    },
    /// Generate a synthetic planted-blob dataset.
    Synth {
        /// One of: blobs, blobs-small.
        #[arg(long)]
        recipe: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Run {
            config,
            dataset,
            out,
            method,
            seed,
        } => {
            let mut cfg = parse_config(&config)?;
            if let Some(m) = method {
                cfg.method = m;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let root = dataset
                .or_else(|| cfg.dataset.clone())
                .ok_or_else(|| Error::invalid("dataset", "pass --dataset or set `dataset` in the config"))?;
            cfg.validate()?;
            let backend = BackendRegistry::builtin().create(
                &cfg.backend,
                &BackendOptions {
                    input_side: None,
                    spool_dir: cfg.spool_dir.clone(),
                },
            )?;
            let result = pipeline::run(&cfg, &root, backend.as_ref())?;
            let record = report::render_report(&result, &out)?;
            info!("wrote {} concepts to {}", record.concepts.len(), out.display());
            for c in &record.concepts {
                let score = c.mean_tcav.map_or("n/a".into(), |s| format!("{s:.3}"));
                let p = c.p_value.map_or("n/a".into(), |p| format!("{p:.3e}"));
                let mark = if c.untestable {
                    " (insufficient samples)"
                } else if c.significant {
                    " *"
                } else {
                    ""
                };
                println!("concept {:>3}  size {:>4}  S={score}  p={p}{mark}", c.id, c.size);
            }
            Ok(())
        }
        Command::Report { result } => {
            let t = report::rerender(&result)?;
            match t.ratio() {
                Some(r) => println!(
                    "{} of {} labeled concepts aligned ({:.1}%), {} concepts total",
                    t.aligned,
                    t.labeled,
                    100.0 * r,
                    t.concepts
                ),
                None => println!("no alignment labels yet, {} concepts total", t.concepts),
            }
            Ok(())
        }
        Command::Synth { recipe, out, seed } => {
            let gt = synth::write_recipe(&recipe, &out, seed)?;
            println!("wrote recipe `{recipe}` to {} ({} blob images)", out.display(), gt.blobs.len());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
