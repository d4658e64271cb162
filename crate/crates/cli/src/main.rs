use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mrfseg::model::{lower_model, Variant};
use mrfseg::pipeline::{
    compare_prepared, cut_log_csv, prepare, progress_csv, run_variant, write_label_map,
    write_stats, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "mrfseg",
    version,
    about = "Scribble-driven Potts segmentation with connectivity priors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment one image with one model.
    Solve(SolveArgs),
    /// Run several models on the same input and tabulate them.
    Compare(CompareArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Input image (binary PGM or PPM, maxval 255).
    #[arg(long)]
    image: PathBuf,
    /// Scribble JSON file.
    #[arg(long)]
    scribbles: PathBuf,
    /// Prefix of per-label probability maps `<P>_label<L>.pgm`.
    #[arg(long)]
    probmap_prefix: Option<String>,
    #[arg(long, default_value_t = 0.2)]
    lambda: f64,
    /// Region-fusion strength.
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    /// Seconds per solve.
    #[arg(long, default_value_t = 100.0)]
    time_limit: f64,
    #[arg(long, default_value_t = 1e-4)]
    gap_tol: f64,
    /// Superpixel target; 0 solves on the pixel grid.
    #[arg(long, default_value_t = 1000)]
    superpixels: usize,
    #[arg(long, default_value_t = 0.2)]
    compactness: f64,
    /// Skip the region-fusion warm start for the connected ILP models.
    #[arg(long)]
    no_warm_start: bool,
    /// Stop after exploring this many branch-and-bound nodes.
    #[arg(long)]
    node_cap: Option<usize>,
    /// Also separate near-integral parts of fractional node LPs.
    #[arg(long)]
    separate_fractional: bool,
}

impl InputArgs {
    fn config(&self, variant: Variant) -> RunConfig {
        RunConfig {
            probmap_prefix: self.probmap_prefix.clone(),
            lambda: self.lambda,
            eta: self.eta,
            time_limit: self.time_limit,
            gap_tol: self.gap_tol,
            superpixels: self.superpixels,
            compactness: self.compactness,
            warm_start: !self.no_warm_start,
            node_cap: self.node_cap,
            fractional_separation: self.separate_fractional,
            ..RunConfig::new(&self.image, &self.scribbles, variant)
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    input: InputArgs,
    /// ilp-pc, ilp-pcb, ilp-p, lp-pc or l0h.
    #[arg(long)]
    model: Variant,
    #[arg(long)]
    out_labels: PathBuf,
    #[arg(long)]
    out_stats: PathBuf,
    /// Progress log (CSV).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Separation log (CSV).
    #[arg(long)]
    cut_log: Option<PathBuf>,
    /// Root LP without connectivity rows, in CPLEX LP format.
    #[arg(long)]
    export_lp: Option<PathBuf>,
    /// Instance summary (JSON).
    #[arg(long)]
    dump_instance: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Comma-separated models.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "ilp-pc,ilp-pcb,ilp-p,lp-pc,l0h"
    )]
    models: Vec<Variant>,
    #[arg(long)]
    out_csv: PathBuf,
    /// Also write `<model>.json` stats into this directory.
    #[arg(long)]
    stats_dir: Option<PathBuf>,
    /// Run models one after another instead of concurrently.
    #[arg(long)]
    sequential: bool,
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn solve(args: &SolveArgs) -> Result<()> {
    let cfg = args.input.config(args.model);
    let input = prepare(&cfg)?;
    let outcome = run_variant(&input, args.model, &cfg)?;
    for w in &outcome.stats.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(path) = &args.dump_instance {
        write(path, &outcome.instance.summary_json())?;
    }
    if let Some(path) = &args.export_lp {
        write(path, &lower_model(&outcome.instance).problem.to_cplex_lp())?;
    }
    if let Some(path) = &args.log {
        write(path, &progress_csv(&outcome.log))?;
    }
    if let Some(path) = &args.cut_log {
        write(path, &cut_log_csv(&outcome.cut_log))?;
    }
    write_stats(&args.out_stats, &outcome.stats)?;
    match &outcome.labeling {
        Some(lab) => write_label_map(&args.out_labels, outcome.instance.graph(), lab)?,
        None => bail!(
            "{}: no feasible labeling found ({})",
            args.model,
            outcome.stats.status
        ),
    }
    let s = &outcome.stats;
    eprintln!(
        "{}: status {}, energy {}, gap {}, {} nodes, {} cuts, {:.3} s",
        s.model,
        s.status,
        s.energy.map_or("-".into(), |e| format!("{e:.6}")),
        s.gap.map_or("-".into(), |g| format!("{g:.3e}")),
        s.nodes_explored,
        s.cuts_added,
        s.time_seconds
    );
    Ok(())
}

fn compare(args: &CompareArgs) -> Result<()> {
    if args.models.is_empty() {
        bail!("no models given");
    }
    let cfg = args.input.config(args.models[0]);
    let input = prepare(&cfg)?;
    let cmp = compare_prepared(&input, &cfg, &args.models, !args.sequential);
    write(&args.out_csv, &cmp.to_csv(true))?;
    if let Some(dir) = &args.stats_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for row in &cmp.rows {
            write_stats(dir.join(format!("{}.json", row.stats.model)), &row.stats)?;
        }
    }
    if let Some((variant, msg)) = &cmp.error {
        bail!("{variant} failed: {msg}");
    }
    let violations: Vec<&String> = cmp.rows.iter().flat_map(|r| &r.violations).collect();
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("ordering violation: {v}");
        }
        bail!("{} ordering violation(s)", violations.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(args) => solve(args),
        Command::Compare(args) => compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // error types already embed their source text; skip repeats
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let text = cause.to_string();
                if !msg.contains(&text) {
                    msg = format!("{msg}: {text}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
