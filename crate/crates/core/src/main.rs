use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use multicontinuum::config::{parse_config, Overrides, RunConfig, Stage};
use multicontinuum::pipeline::{run_pipeline, StageStatus};
use multicontinuum::svg::{emit_heatmap_from_csv, Palette};

#[derive(Parser)]
#[command(name = "multicontinuum", version, about = "Multicontinuum upscaling on domains with shrinking channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the labeled geometry and its erosion timeline
    Geometry(RunArgs),
    /// Fine-grid reference solution
    Fine(RunArgs),
    /// Constrained cell problems for every coarse size
    Cells(RunArgs),
    /// Effective coefficients
    Upscale(RunArgs),
    /// Coupled macro model
    Macro(RunArgs),
    /// Relative errors between fine and macro solutions
    Errors(RunArgs),
    /// Every stage
    All(RunArgs),
    /// Draw a CSV grid as an SVG heatmap
    Heatmap {
        csv: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value = "viridis", value_parser = parse_palette)]
        palette: Palette,
        #[arg(long, default_value = "")]
        caption: String,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; defaults are used when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated stage list, replacing the subcommand's target
    #[arg(long, value_delimiter = ',', value_parser = parse_stage)]
    stages: Option<Vec<Stage>>,
    /// Worker threads for the cell problems
    #[arg(long)]
    threads: Option<usize>,
    /// Fine mesh size
    #[arg(long = "h")]
    fine_h: Option<f64>,
    /// Coarse sizes, comma separated
    #[arg(long = "H", value_delimiter = ',')]
    coarse_h: Option<Vec<f64>>,
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    Stage::parse(s).map_err(|e| e.to_string())
}

fn parse_palette(s: &str) -> Result<Palette, String> {
    match s {
        "viridis" => Ok(Palette::Viridis),
        "diverging" => Ok(Palette::Diverging),
        "gray" => Ok(Palette::Gray),
        _ => Err(format!("unknown palette '{s}' (viridis, diverging, gray)")),
    }
}

fn load(args: &RunArgs, target: Option<Stage>) -> multicontinuum::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => parse_config(p)?,
        None => RunConfig::default().resolved()?,
    };
    let stages = args.stages.clone().or_else(|| target.map(|s| vec![s]));
    cfg.apply(&Overrides {
        out: args.out.clone(),
        stages,
        fine_h: args.fine_h,
        coarse_h: args.coarse_h.clone(),
    })?;
    Ok(cfg)
}

fn run(args: RunArgs, target: Option<Stage>) -> ExitCode {
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let cfg = match load(&args, target) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run_pipeline(&cfg) {
        Ok((manifest, _)) => {
            for r in &manifest.stages {
                let at = r.coarse.map_or(String::new(), |c| format!(" H=1/{c}"));
                let status = match r.status {
                    StageStatus::Computed => "computed",
                    StageStatus::Cached => "cached",
                    StageStatus::Failed => "failed",
                };
                println!("{:<9}{at:<8} {status:<9} {:8.2}s", r.stage.name(), r.wall_time_s);
            }
            for (den, levels) in &manifest.errors {
                let last = levels.last().copied().unwrap_or([None, None]);
                let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3e}"));
                println!("H=1/{den}: final e2 = ({}, {})", fmt(last[0]), fmt(last[1]));
            }
            println!("manifest: {}", cfg.output.dir.join("manifest.json").display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("manifest: {}", cfg.output.dir.join("manifest.json").display());
            ExitCode::FAILURE
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Geometry(a) => run(a, Some(Stage::Geometry)),
        Command::Fine(a) => run(a, Some(Stage::Fine)),
        Command::Cells(a) => run(a, Some(Stage::Cells)),
        Command::Upscale(a) => run(a, Some(Stage::Upscale)),
        Command::Macro(a) => run(a, Some(Stage::Macro)),
        Command::Errors(a) => run(a, Some(Stage::Errors)),
        Command::All(a) => run(a, None),
        Command::Heatmap { csv, out, palette, caption } => match emit_heatmap_from_csv(&csv, palette, &caption, &out) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
    }
}
