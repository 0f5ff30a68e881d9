use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ngc_core::orchestrator::{round_sig, Experiment, ExperimentConfig, StageOutcome, SUMMARY_DIGITS};
use ngc_core::sim::{simulate_ensemble, simulate_generations, sweep_classes, EnsembleSimConfig, GenerationSimConfig};
use ngc_core::world::{make_dataset, SplitPlan, WorldConfig};
use ngc_core::Error;

const ENSEMBLE_COLUMNS: &str = "CSV columns: p,classes,paths,trials,seed,pe_plus,pe_minus,expected_correct,\
expected_wrong,var_correct,var_wrong,bound_printed,bound_mu_squared,accuracy,std_error,ci_low,ci_high";
const GENERATION_COLUMNS: &str =
    "CSV columns: paths,generation,student_p,teacher_accuracy,teacher_std_error,ci_low,ci_high,next_p";
const CLASS_COLUMNS: &str = "CSV columns: classes,paths,p,pe_plus,accuracy,std_error,ci_low,ci_high";
const RUN_LAYOUT: &str = "Run directory: config.json, topology.json, checkpoints/gen<k>/edge_<id>.ngcm, audit.log \
(scene<TAB>usage<TAB>split), reports/. reports/pretrain.csv columns: edge,inputs,output,metric,value. \
reports/metrics.csv columns: iteration,node,edge,metric,value (edge is `ensemble` or a direct edge id).";

/// Neural graph consensus experiments and voting-model simulations.
#[derive(Parser, Debug)]
#[command(name = "ngc", version, after_help = "Set NGC_THREADS to cap the worker count.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Analytic and Monte Carlo accuracy of an ensemble of 2-hop paths.
    #[command(after_help = ENSEMBLE_COLUMNS)]
    SimEnsemble {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        classes: u32,
        #[arg(long)]
        paths: u32,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        hops: u32,
    },
    /// Students recovering a fraction of the gap to their teacher ensemble.
    #[command(after_help = GENERATION_COLUMNS)]
    SimGenerations {
        #[arg(long, default_value_t = 0.6)]
        p0: f64,
        #[arg(long, default_value_t = 0.2)]
        recovery: f64,
        #[arg(long, default_value_t = 10)]
        generations: usize,
        /// Comma-separated ensemble sizes, one curve each.
        #[arg(long, value_delimiter = ',', default_value = "5,15,31")]
        paths: Vec<u32>,
        #[arg(long, default_value_t = 100)]
        classes: u32,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Ensemble accuracy across class counts.
    #[command(after_help = CLASS_COLUMNS)]
    SimClasses {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        paths: u32,
        #[arg(long, value_delimiter = ',', default_value = "10,100,1000")]
        classes: Vec<u32>,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Writes a synthetic-world dataset with sealed held-out ground truth.
    #[command(after_help = "Layout: manifest.json, <split>/scene_<id>/<representation>.ngct, \
sealed/<split>/... for unlabeled and evaluation ground truth.")]
    GenWorld {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        /// Split sizes: train,validation,unlabeled...,evaluation.
        #[arg(long, value_delimiter = ',', default_value = "800,200,1000,1000,1000")]
        plan: Vec<usize>,
    },
    /// Trains every candidate edge on labeled data (creates the run).
    #[command(after_help = RUN_LAYOUT)]
    Pretrain {
        #[command(flatten)]
        run: RunArgs,
        /// Experiment config JSON; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset written by gen-world, instead of generating scenes.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Overrides the training seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Selects path ensembles greedily on the validation set.
    #[command(after_help = RUN_LAYOUT)]
    BuildGraph {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Runs one round of consensus self-training.
    #[command(after_help = RUN_LAYOUT)]
    Iterate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        round: usize,
    },
    /// Scores every generation on the evaluation set.
    #[command(after_help = RUN_LAYOUT)]
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Prints the summary table of a finished run.
    #[command(after_help = "Writes reports/summary.json and reports/summary.txt.")]
    Report {
        #[command(flatten)]
        run: RunArgs,
        /// Print JSON instead of the aligned table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Run directory.
    #[arg(long, default_value = "run")]
    run: PathBuf,
}

fn r6(v: f64) -> f64 {
    round_sig(v, SUMMARY_DIGITS)
}

#[derive(Serialize)]
struct EnsembleRow {
    p: f64,
    classes: u32,
    paths: u32,
    trials: u64,
    seed: u64,
    pe_plus: f64,
    pe_minus: f64,
    expected_correct: f64,
    expected_wrong: f64,
    var_correct: f64,
    var_wrong: f64,
    bound_printed: Option<f64>,
    bound_mu_squared: Option<f64>,
    accuracy: f64,
    std_error: f64,
    ci_low: f64,
    ci_high: f64,
}

#[derive(Serialize)]
struct ClassRow {
    classes: u32,
    paths: u32,
    p: f64,
    pe_plus: f64,
    accuracy: f64,
    std_error: f64,
    ci_low: f64,
    ci_high: f64,
}

#[derive(Serialize)]
struct GenerationRow {
    paths: u32,
    generation: usize,
    student_p: f64,
    teacher_accuracy: f64,
    teacher_std_error: f64,
    ci_low: f64,
    ci_high: f64,
    next_p: f64,
}

fn write_rows<T: Serialize>(rows: &[T]) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(io::stdout());
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    })
}

fn open_run(run: &Path) -> Result<Experiment, Error> {
    if !run.join(ngc_core::orchestrator::CONFIG_FILE).exists() {
        return Err(Error::InvalidInput(format!(
            "{} is not a run directory; start one with `ngc pretrain`",
            run.display()
        )));
    }
    Experiment::open(run)
}

fn announce(stage: &str, outcome: StageOutcome) {
    match outcome {
        StageOutcome::Ran => eprintln!("{stage}: done"),
        StageOutcome::Skipped => eprintln!("{stage}: outputs already present, skipped"),
    }
}

fn dispatch(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::SimEnsemble {
            p,
            classes,
            paths,
            trials,
            seed,
            hops,
        } => {
            let cfg = EnsembleSimConfig {
                hops,
                ..EnsembleSimConfig::new(p, classes, paths, trials, seed)
            };
            cfg.validate()?;
            let r = simulate_ensemble(&cfg)?;
            write_rows(&[EnsembleRow {
                p,
                classes,
                paths,
                trials,
                seed,
                pe_plus: r6(r.pe_plus),
                pe_minus: r6(r.pe_minus),
                expected_correct: r6(r.moments.expected_correct),
                expected_wrong: r6(r.moments.expected_wrong),
                var_correct: r6(r.moments.var_correct),
                var_wrong: r6(r.moments.var_wrong),
                bound_printed: r.bound_printed.map(r6),
                bound_mu_squared: r.bound_mu_squared.map(r6),
                accuracy: r6(r.accuracy),
                std_error: r6(r.std_error),
                ci_low: r6(r.ci_low),
                ci_high: r6(r.ci_high),
            }])
        }
        Command::SimGenerations {
            p0,
            recovery,
            generations,
            paths,
            classes,
            trials,
            seed,
        } => {
            let cfg = GenerationSimConfig {
                p0,
                recovery,
                generations,
                paths,
                classes,
                trials,
                seed,
            };
            cfg.validate()?;
            let rows: Vec<GenerationRow> = simulate_generations(&cfg)?
                .into_iter()
                .flatten()
                .map(|g| GenerationRow {
                    paths: g.paths,
                    generation: g.generation,
                    student_p: r6(g.student_p),
                    teacher_accuracy: r6(g.teacher_accuracy),
                    teacher_std_error: r6(g.teacher_std_error),
                    ci_low: r6(g.ci_low),
                    ci_high: r6(g.ci_high),
                    next_p: r6(g.next_p),
                })
                .collect();
            write_rows(&rows)
        }
        Command::SimClasses {
            p,
            paths,
            classes,
            trials,
            seed,
        } => {
            if classes.is_empty() {
                return Err(Error::InvalidInput("need at least one class count".into()));
            }
            let rows: Vec<ClassRow> = sweep_classes(p, paths, &classes, trials, seed)?
                .into_iter()
                .map(|r| ClassRow {
                    classes: r.config.classes,
                    paths,
                    p,
                    pe_plus: r6(r.pe_plus),
                    accuracy: r6(r.accuracy),
                    std_error: r6(r.std_error),
                    ci_low: r6(r.ci_low),
                    ci_high: r6(r.ci_high),
                })
                .collect();
            write_rows(&rows)
        }
        Command::GenWorld {
            out,
            seed,
            height,
            width,
            plan,
        } => {
            if plan.len() < 3 {
                return Err(Error::InvalidInput(
                    "plan needs train, validation and evaluation sizes".into(),
                ));
            }
            let world = WorldConfig {
                height,
                width,
                seed,
                ..Default::default()
            };
            world.validate()?;
            let splits = SplitPlan::contiguous(plan[0], plan[1], &plan[2..plan.len() - 1], plan[plan.len() - 1]);
            splits.validate()?;
            make_dataset(&world, &splits, &out)?;
            eprintln!("wrote {} scenes to {}", plan.iter().sum::<usize>(), out.display());
            Ok(())
        }
        Command::Pretrain {
            run,
            config,
            data,
            seed,
        } => {
            let mut cfg: ExperimentConfig = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io { path, source: e })?;
                    serde_json::from_str(&text)?
                }
                None if run.run.join(ngc_core::orchestrator::CONFIG_FILE).exists() => {
                    Experiment::open(&run.run)?.config().clone()
                }
                None => ExperimentConfig::default(),
            };
            if let Some(d) = data {
                cfg.data = Some(d);
            }
            if let Some(s) = seed {
                cfg.training.seed = s;
            }
            let e = Experiment::create(&run.run, cfg)?;
            announce("pretrain", e.pretrain()?);
            Ok(())
        }
        Command::BuildGraph { run } => {
            announce("build-graph", open_run(&run.run)?.build_graph()?);
            Ok(())
        }
        Command::Iterate { run, round } => {
            let e = open_run(&run.run)?;
            announce(&format!("iterate {round}"), e.iterate(round)?);
            Ok(())
        }
        Command::Evaluate { run } => {
            announce("evaluate", open_run(&run.run)?.evaluate()?);
            Ok(())
        }
        Command::Report { run, json } => {
            let e = open_run(&run.run)?;
            if !e.report_path("metrics.csv").exists() {
                return Err(Error::InvalidInput("no evaluation reports yet; run `ngc evaluate` first".into()));
            }
            let table = e.report()?;
            let text = if json {
                serde_json::to_string_pretty(&table)? + "\n"
            } else {
                table.render()
            };
            io::stdout().write_all(text.as_bytes()).map_err(|e| Error::Io {
                path: PathBuf::from("<stdout>"),
                source: e,
            })
        }
    }
}

/// Validation problems exit with 1, runtime failures with 2.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidInput(_)
        | Error::Hypothesis(_)
        | Error::UnitMismatch(_)
        | Error::TopologyMissing
        | Error::MissingRepresentation(_)
        | Error::SealedAccess(_) => 1,
        _ => 2,
    }
}

fn init_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("NGC_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidInput(format!("NGC_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidInput(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match init_threads().and_then(|_| dispatch(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
