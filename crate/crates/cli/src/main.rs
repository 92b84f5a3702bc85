use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dcr_core::curriculum::{write_trace_csv, read_trace_csv, ScheduleKind};
use dcr_core::dataset::{read_feature_file, write_feature_file, Dataset, DatasetLayout, GrammarSpec, generate_synthetic, Split};
use dcr_core::engine::{
    easiness_trace_chart, evaluate, parse_suite, pretrain_model, run_ablation, run_log_charts, run_training,
    tau_sweep, train_model, Model, Precision, Pretrained, Profile, RunLog, TrainConfig, TrainOutcome,
};
use dcr_core::reasoners::Architecture;
use dcr_core::{DcrError, Result};
use dcr_tensor::Scalar;

const LAYOUT_FILE: &str = "layout.json";

#[derive(Parser)]
#[command(name = "dcr", version, about = "Curriculum training with dynamic removal of future context")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark: train/val feature files plus manifests.
    GenData {
        /// Grammar spec (JSON); the desk grammar seeded by --seed otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value = "desk")]
        profile: Profile,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Order pre-training only; writes the reasoner checkpoint.
    Pretrain(RunArgs),
    /// Pre-training (unless --init is given) and training.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Start from this pre-trained checkpoint instead of pre-training.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the validation split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also report metrics with 1..4 gap frames revealed.
        #[arg(long)]
        sweep: bool,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Train a suite of ablation variants over several seeds.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated variants, e.g. `dcr,te-1,te-0`.
        #[arg(long, default_value = "dcr,classification,no-pretrain,te-1,te-0,linear,exponential,no-rec,no-smooth")]
        suite: String,
        /// Comma-separated seeds.
        #[arg(long, default_value = "0")]
        seeds: String,
    },
    /// Render a run log and/or easiness trace as SVG charts.
    Plot {
        #[arg(long)]
        run_log: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Directory written by `gen-data`.
    #[arg(long)]
    data: PathBuf,
    /// JSON training config; the profile's defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "desk")]
    profile: Profile,
    #[arg(long)]
    arch: Option<Architecture>,
    /// instance, constant:<v>, linear or exponential.
    #[arg(long)]
    schedule: Option<ScheduleKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn write_json<S: serde::Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| DcrError::Invalid(e.to_string()))?;
    fs::write(path, text).map_err(|e| DcrError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| DcrError::io(dir, e))
}

fn load_layout(dir: &Path) -> Result<DatasetLayout> {
    let path = dir.join(LAYOUT_FILE);
    let text = fs::read(&path).map_err(|e| DcrError::io(&path, e))?;
    serde_json::from_slice(&text).map_err(|e| DcrError::Config(format!("{}: {e}", path.display())))
}

fn load_split(dir: &Path, split: Split) -> Result<Dataset> {
    let layout = load_layout(dir)?;
    let (stream, manifest) = read_feature_file(&dir.join(format!("{}.dcrf", split.key())))?;
    Dataset::from_stream(&stream, &manifest, &layout)
}

fn gen_data(spec: Option<&Path>, profile: Profile, seed: u64, out: &Path) -> Result<()> {
    let grammar = match spec {
        Some(p) => {
            let text = fs::read(p).map_err(|e| DcrError::io(p, e))?;
            serde_json::from_slice::<GrammarSpec>(&text).map_err(|e| DcrError::Config(format!("{}: {e}", p.display())))?
        }
        None => GrammarSpec::desk(seed),
    };
    grammar.validate()?;
    let layout = match profile {
        Profile::Desk => DatasetLayout::desk(),
        Profile::PaperShape => DatasetLayout::paper_shape(),
    };
    create_dir(out)?;
    for split in [Split::Train, Split::Val] {
        let (stream, manifest) = generate_synthetic(&grammar, &layout, split)?;
        let path = out.join(format!("{}.dcrf", split.key()));
        write_feature_file(&stream, &manifest, &path)?;
        println!("{}: {} frames, {} segments", path.display(), stream.frame_count(), manifest.segments.len());
    }
    write_json(&out.join(LAYOUT_FILE), &layout)?;
    write_json(&out.join("grammar.json"), &grammar)
}

fn resolve_config(run: &RunArgs, dim: usize) -> Result<TrainConfig> {
    let mut cfg = match &run.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::for_profile(run.profile, dim),
    };
    if run.arch == Some(Architecture::Lstm) && cfg.reasoner.architecture != Architecture::Lstm {
        cfg = cfg.with_lstm();
    }
    if let Some(kind) = run.schedule {
        cfg.schedule.kind = kind;
    }
    if let Some(seed) = run.seed {
        cfg.seed = seed;
    }
    if cfg.reasoner.input_dim != dim {
        return Err(DcrError::Config(format!(
            "config expects {}-dim features, data has {dim}",
            cfg.reasoner.input_dim
        )));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn save_outcome<T: Scalar>(out: &Path, outcome: &TrainOutcome<T>) -> Result<()> {
    outcome.model.save(&out.join("model.dcrc"))?;
    outcome.log.save_json(&out.join("runlog.json"))?;
    let csv = outcome.log.to_csv()?;
    fs::write(out.join("runlog.csv"), csv).map_err(|e| DcrError::io(out.join("runlog.csv"), e))?;
    if !outcome.trace.is_empty() {
        let path = out.join("easiness.csv");
        let file = fs::File::create(&path).map_err(|e| DcrError::io(&path, e))?;
        write_trace_csv(&outcome.trace, file)?;
    }
    if let Some(r) = &outcome.report {
        write_json(&out.join("metrics.json"), r)?;
        if let Some(a) = r.action() {
            println!("action top-1 {:.4} top-5 {:.4} mean recall@5 {:.4}", a.top1, a.top5, a.mean_recall5);
        }
    }
    Ok(())
}

fn pretrain_cmd<T: Scalar>(cfg: &TrainConfig, train: &Dataset, out: &Path) -> Result<()> {
    let p: Pretrained<T> = pretrain_model(cfg, train)?;
    p.model.save(&out.join("pretrained.dcrc"))?;
    p.log.save_json(&out.join("pretrain_log.json"))?;
    if let Some(r) = p.log.rows().last() {
        println!("order loss {:.4} position accuracy {:.4}", r.total, r.position_accuracy.unwrap_or(0.0));
    }
    Ok(())
}

fn train_cmd<T: Scalar>(cfg: &TrainConfig, init: Option<&Path>, train: &Dataset, val: &Dataset, out: &Path) -> Result<()> {
    let outcome: TrainOutcome<T> = match init {
        Some(p) => {
            let model = Model::load(p)?;
            let pre = Pretrained { model, log: RunLog::new() };
            train_model(cfg, Some(&pre), train, Some(val))?
        }
        None => run_training(cfg, train, Some(val))?,
    };
    save_outcome(out, &outcome)
}

fn eval_cmd(data: &Path, checkpoint: &Path, sweep: bool, out: Option<&Path>) -> Result<()> {
    let val = load_split(data, Split::Val)?;
    let model: Model<f32> = Model::load(checkpoint)?;
    let reports = if sweep { tau_sweep(&model, &val)? } else { vec![evaluate(&model, &val, 0)?] };
    for (revealed, r) in reports.iter().enumerate() {
        if let Some(a) = r.action() {
            println!(
                "revealed {revealed}: top-1 {:.4} top-5 {:.4} mean recall@5 {:.4}",
                a.top1, a.top5, a.mean_recall5
            );
        }
    }
    if let Some(out) = out {
        create_dir(out)?;
        write_json(&out.join("eval.json"), &reports)?;
    }
    Ok(())
}

fn ablate_cmd<T: Scalar>(cfg: &TrainConfig, suite: &str, seeds: &str, train: &Dataset, val: &Dataset, out: &Path) -> Result<()> {
    let suite = parse_suite(suite)?;
    let seeds = seeds
        .split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|e| DcrError::Config(format!("bad seed {s:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let table = run_ablation::<T>(&suite, train, val, cfg, &seeds, None)?;
    let md = table.to_markdown();
    print!("{md}");
    fs::write(out.join("ablation.md"), md).map_err(|e| DcrError::io(out.join("ablation.md"), e))?;
    write_json(&out.join("ablation.json"), &table)
}

fn plot_cmd(run_log: Option<&Path>, trace: Option<&Path>, out: &Path) -> Result<()> {
    if run_log.is_none() && trace.is_none() {
        return Err(DcrError::Config("plot needs --run-log and/or --trace".into()));
    }
    create_dir(out)?;
    let write = |name: &str, body: &str| {
        let path = out.join(name);
        fs::write(&path, body).map_err(|e| DcrError::io(&path, e))?;
        println!("{}", path.display());
        Ok::<_, DcrError>(())
    };
    if let Some(p) = run_log {
        let log = RunLog::load_json(p)?;
        for (stem, svg) in run_log_charts(&log)? {
            write(&format!("{stem}.svg"), &svg)?;
        }
        write("runlog_summary.csv", &log.to_csv()?)?;
    }
    if let Some(p) = trace {
        let file = fs::File::open(p).map_err(|e| DcrError::io(p, e))?;
        let rows = read_trace_csv(file)?;
        let (svg, csv) = easiness_trace_chart(&rows)?;
        write("easiness_trace.svg", &svg)?;
        write("easiness_summary.csv", &csv)?;
    }
    Ok(())
}

fn with_run<F32, F64>(run: &RunArgs, f32_run: F32, f64_run: F64) -> Result<()>
where
    F32: FnOnce(&TrainConfig, &Dataset, &Dataset, &Path) -> Result<()>,
    F64: FnOnce(&TrainConfig, &Dataset, &Dataset, &Path) -> Result<()>,
{
    let train = load_split(&run.data, Split::Train)?;
    let val = load_split(&run.data, Split::Val)?;
    let dim = train.dim().ok_or_else(|| DcrError::Invalid("training split is empty".into()))?;
    let cfg = resolve_config(run, dim)?;
    create_dir(&run.out_dir)?;
    cfg.save(&run.out_dir.join("config.json"))?;
    match cfg.precision {
        Precision::F32 => f32_run(&cfg, &train, &val, &run.out_dir),
        Precision::F64 => f64_run(&cfg, &train, &val, &run.out_dir),
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { spec, profile, seed, out_dir } => gen_data(spec.as_deref(), profile, seed, &out_dir),
        Command::Pretrain(run) => with_run(
            &run,
            |c, t, _, o| pretrain_cmd::<f32>(c, t, o),
            |c, t, _, o| pretrain_cmd::<f64>(c, t, o),
        ),
        Command::Train { run, init } => {
            let init = init.as_deref();
            with_run(
                &run,
                |c, t, v, o| train_cmd::<f32>(c, init, t, v, o),
                |c, t, v, o| train_cmd::<f64>(c, init, t, v, o),
            )
        }
        Command::Eval { data, checkpoint, sweep, out_dir } => eval_cmd(&data, &checkpoint, sweep, out_dir.as_deref()),
        Command::Ablate { run, suite, seeds } => with_run(
            &run,
            |c, t, v, o| ablate_cmd::<f32>(c, &suite, &seeds, t, v, o),
            |c, t, v, o| ablate_cmd::<f64>(c, &suite, &seeds, t, v, o),
        ),
        Command::Plot { run_log, trace, out_dir } => plot_cmd(run_log.as_deref(), trace.as_deref(), &out_dir),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else if e.is_numeric() {
                ExitCode::from(3)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
