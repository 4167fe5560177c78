//! `ratsir`: dataset generation, training, evaluation, ablation sweeps and
//! plotting for the two-hand mesh recovery model.

mod exit;
mod manifest;
mod plot;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use exit::{fail, CliResult, LibTag, Tag, BAD_DATA, CONFIG, MISSING_INPUT, OTHER};
use manifest::{hash_dataset, hash_json, RunManifest};
use plot::{line_panel, Series};
use ratsir::metrics::MetricReport;
use ratsir::net::{load_model, Model};
use ratsir::synthdata::{inject_occlusion, load_dataset, make_dataset, DataConfig, Dataset, Occlusion, Target};
use ratsir::trainer::{evaluate, run_ablation, AblationSpec, EvalReport, OccludedSet, StepLog, TrainConfig, Trainer, MODEL_DIR};

const TRAIN_LOG: &str = "train_log.jsonl";
const METRICS_LOG: &str = "metrics.jsonl";
const CHECKPOINT_DIR: &str = "checkpoint";
const EVAL_JSON: &str = "eval.json";

#[derive(Parser)]
#[command(name = "ratsir", version, about = "Two-hand mesh recovery: data, training, evaluation and ablations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Generate(GenerateArgs),
    /// Train one model variant.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Train every variant under several seeds and tabulate the results.
    Ablate(AblateArgs),
    /// Draw loss, learning-rate, metric and per-frame error plots.
    Plot(PlotArgs),
}

#[derive(Args)]
struct SeedArg {
    /// Overrides the seed in the configuration.
    #[arg(long, env = "RATSIR_SEED")]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Dataset configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    seed: SeedArg,
    /// Overrides the number of sequences.
    #[arg(long)]
    count: Option<usize>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Training configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    seed: SeedArg,
    /// Overrides the total number of optimizer steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Continue from the checkpoint in `--out`.
    #[arg(long)]
    resume: bool,
    /// Evaluate on the training data every N steps (0 disables).
    #[arg(long, default_value_t = 0)]
    eval_every: usize,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// A training output's checkpoint directory or a bare model directory.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Also write `eval.json` and a run manifest here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct AblateArgs {
    /// Training sequences; a tail share is held out unless `--test-data` is given.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Ablation spec (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    test_data: Option<PathBuf>,
    /// Share of `--data` held out for testing when no test set is given.
    #[arg(long, default_value_t = 0.25)]
    holdout: f64,
    /// Comma-separated seeds, overriding the spec.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    steps: Option<usize>,
    /// Also score every model with the left hand blacked out at this frame.
    #[arg(long)]
    occlude_frame: Option<usize>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct PlotArgs {
    /// Training output directories or log files.
    #[arg(long, required = true, num_args = 1..)]
    logs: Vec<PathBuf>,
    /// Evaluation report for the per-frame error trace.
    #[arg(long)]
    eval: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Panels to draw: loss, lr, grad_norm, metrics, frames. Defaults to every panel with data.
    #[arg(long, value_delimiter = ',')]
    panels: Option<Vec<String>>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(p) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(p).tag(MISSING_INPUT, &format!("cannot read config {}", p.display()))?;
    serde_json::from_str(&text).tag(CONFIG, &format!("invalid config {}", p.display()))
}

fn is_nonempty_dir(p: &Path) -> bool {
    fs::read_dir(p).map(|mut d| d.next().is_some()).unwrap_or(false)
}

fn prepare_out(out: &Path, force: bool) -> CliResult<()> {
    if is_nonempty_dir(out) && !force {
        return Err(fail(
            CONFIG,
            anyhow::anyhow!("output directory {} is not empty; pass --force to overwrite", out.display()),
        ));
    }
    fs::create_dir_all(out).tag(OTHER, "cannot create output directory")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).tag(OTHER, "serialization failed")?;
    fs::write(path, text).tag(OTHER, &format!("cannot write {}", path.display()))
}

fn open_dataset(dir: &Path) -> CliResult<Dataset> {
    if !dir.join(ratsir::synthdata::DATA_MANIFEST).exists() {
        return Err(fail(MISSING_INPUT, anyhow::anyhow!("no dataset at {}", dir.display())));
    }
    let d = load_dataset(dir).lib(&format!("cannot load dataset {}", dir.display()))?;
    if d.samples.is_empty() {
        return Err(fail(BAD_DATA, anyhow::anyhow!("dataset {} is empty", dir.display())));
    }
    Ok(d)
}

fn cmd_generate(a: GenerateArgs) -> CliResult<()> {
    let mut cfg: DataConfig = read_config(a.config.as_deref())?;
    if let Some(s) = a.seed.seed {
        cfg.seed = s;
    }
    if let Some(c) = a.count {
        cfg.count = c;
    }
    cfg.validate().lib("invalid dataset config")?;
    prepare_out(&a.out, a.force)?;
    let mut run = RunManifest::new("generate", a.config.as_deref(), hash_json(&cfg).tag(OTHER, "hash")?);
    let m = make_dataset(&cfg, &a.out).lib("dataset generation failed")?;
    run.dataset_hash = Some(hash_dataset(&a.out).tag(OTHER, "cannot hash dataset")?);
    run.outputs = vec![a.out.join(ratsir::synthdata::DATA_MANIFEST), a.out.join(ratsir::synthdata::DATA_BLOB)];
    run.write(&a.out).tag(OTHER, "cannot write run manifest")?;

    let mut mix = [0usize; 3];
    for s in &m.samples {
        mix[((s.interaction * 3.0) as usize).min(2)] += 1;
    }
    println!("sequences   {}", m.samples.len());
    println!("frames (T)  {}", cfg.seq_len);
    println!("gap         {}", cfg.gap);
    println!("fps         {}", m.fps);
    println!("interaction low {} / mid {} / high {}", mix[0], mix[1], mix[2]);
    println!("written to  {}", a.out.display());
    Ok(())
}

fn append_jsonl<T: Serialize>(w: &mut impl Write, value: &T) -> CliResult<()> {
    serde_json::to_writer(&mut *w, value).tag(OTHER, "log serialization failed")?;
    w.write_all(b"\n").tag(OTHER, "cannot write log")
}

#[derive(Serialize, serde::Deserialize)]
struct MetricsLine {
    step: usize,
    report: MetricReport,
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let mut cfg: TrainConfig = read_config(a.config.as_deref())?;
    if let Some(s) = a.seed.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    cfg.validate().lib("invalid training config")?;
    let data = open_dataset(&a.data)?;
    let ckpt = a.out.join(CHECKPOINT_DIR);
    let resuming = a.resume && ckpt.join(ratsir::trainer::TRAINER_STATE).exists();
    let mut trainer = if resuming {
        Trainer::resume(&ckpt, &data.manifest.config, Some(cfg.steps)).lib("cannot resume")?
    } else {
        prepare_out(&a.out, a.force)?;
        for f in [TRAIN_LOG, METRICS_LOG] {
            let _ = fs::remove_file(a.out.join(f));
        }
        Trainer::new(cfg.clone(), &data.manifest.config).lib("cannot build trainer")?
    };
    let mut run = RunManifest::new("train", a.config.as_deref(), hash_json(&trainer.config).tag(OTHER, "hash")?);
    run.dataset_hash = Some(hash_dataset(&a.data).tag(OTHER, "cannot hash dataset")?);

    let open = |name: &str| {
        fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(a.out.join(name))
            .map(BufWriter::new)
            .tag(OTHER, "cannot open log")
    };
    let mut log = open(TRAIN_LOG)?;
    let mut metrics = if a.eval_every > 0 { Some(open(METRICS_LOG)?) } else { None };
    let hands = data.manifest.config.hand_model().lib("hand model")?;
    let eval_set = &data.samples[..data.samples.len().min(8)];
    println!("training {} from step {} to {}", trainer.config.variant, trainer.step, trainer.config.steps);
    while trainer.step < trainer.config.steps {
        let line: StepLog = trainer.train_step(&data.samples).lib("training failed")?;
        append_jsonl(&mut log, &line)?;
        if let Some(w) = metrics.as_mut() {
            if trainer.step % a.eval_every == 0 || trainer.step == trainer.config.steps {
                let report = evaluate(&trainer.model, &hands, eval_set).lib("evaluation failed")?.mean;
                append_jsonl(w, &MetricsLine { step: trainer.step, report })?;
            }
        }
        if line.step % 50 == 0 || trainer.step == trainer.config.steps {
            println!("step {:>6}  loss {:>12.5}  lr {:.3e}  grad {:.3}", line.step, line.loss.total, line.lr, line.grad_norm);
        }
    }
    log.flush().tag(OTHER, "cannot write log")?;
    if let Some(w) = metrics.as_mut() {
        w.flush().tag(OTHER, "cannot write log")?;
    }
    trainer.save(&ckpt).lib("cannot save checkpoint")?;
    write_json(&a.out.join("train_config.json"), &trainer.config)?;
    run.outputs = vec![ckpt, a.out.join(TRAIN_LOG), a.out.join("train_config.json")];
    if a.eval_every > 0 {
        run.outputs.push(a.out.join(METRICS_LOG));
    }
    run.write(&a.out).tag(OTHER, "cannot write run manifest")
}

fn load_checkpoint(dir: &Path) -> CliResult<Model> {
    let model_dir = if dir.join(MODEL_DIR).is_dir() {
        dir.join(MODEL_DIR)
    } else if dir.join(CHECKPOINT_DIR).join(MODEL_DIR).is_dir() {
        dir.join(CHECKPOINT_DIR).join(MODEL_DIR)
    } else {
        dir.to_path_buf()
    };
    if !model_dir.join(ratsir::net::MODEL_MANIFEST).exists() {
        return Err(fail(MISSING_INPUT, anyhow::anyhow!("no checkpoint at {}", dir.display())));
    }
    load_model(&model_dir).lib("cannot load checkpoint")
}

fn report_table(r: &MetricReport) -> String {
    let rows = [
        ("MPJPE (mm)", r.mpjpe_mm),
        ("MPVPE (mm)", r.mpvpe_mm),
        ("MRRPE (mm)", r.mrrpe_mm),
        ("Accel_E (mm/s^2)", r.accel_e_mm_s2),
        ("AUC (0-50 mm)", r.auc),
    ];
    rows.iter().map(|(k, v)| format!("{k:<18}{v:>14.4}\n")).collect()
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let data = open_dataset(&a.data)?;
    ratsir::trainer::check_compatible(&model.config, &data.manifest.config, model.variant).lib("checkpoint does not fit the dataset")?;
    let hands = data.manifest.config.hand_model().lib("hand model")?;
    let report = evaluate(&model, &hands, &data.samples).lib("evaluation failed")?;
    println!("variant {}  sequences {}", model.variant, report.sequences.len());
    print!("{}", report_table(&report.mean));
    if let Some(out) = &a.out {
        prepare_out(out, a.force)?;
        let mut run = RunManifest::new("evaluate", None, hash_json(&model.config).tag(OTHER, "hash")?);
        run.dataset_hash = Some(hash_dataset(&a.data).tag(OTHER, "cannot hash dataset")?);
        write_json(&out.join(EVAL_JSON), &report)?;
        run.outputs = vec![out.join(EVAL_JSON)];
        run.write(out).tag(OTHER, "cannot write run manifest")?;
    }
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> CliResult<()> {
    let mut spec: AblationSpec = read_config(a.config.as_deref())?;
    if let Some(s) = a.seeds.clone() {
        spec.seeds = s;
    }
    if let Some(s) = a.steps {
        spec.train.steps = s;
    }
    spec.train.validate().lib("invalid training settings")?;
    if !(0.0..1.0).contains(&a.holdout) {
        return Err(fail(CONFIG, anyhow::anyhow!("--holdout must lie in [0, 1)")));
    }
    let data = open_dataset(&a.data)?;
    let (train_set, test_set) = match &a.test_data {
        Some(p) => (data.samples.clone(), open_dataset(p)?.samples),
        None => {
            let n = data.samples.len();
            let n_test = ((n as f64) * a.holdout).round() as usize;
            if n_test == 0 || n_test == n {
                return Err(fail(BAD_DATA, anyhow::anyhow!("cannot hold out {n_test} of {n} sequences")));
            }
            let (tr, te) = data.samples.split_at(n - n_test);
            (tr.to_vec(), te.to_vec())
        }
    };
    prepare_out(&a.out, a.force)?;
    let occluded: Option<(Vec<_>, usize)> = a.occlude_frame.map(|t| {
        let occ = Occlusion::FrameBlackout {
            frames: vec![t],
            target: Target::Left,
        };
        (test_set.iter().map(|s| inject_occlusion(s, &occ, s.seed)).collect(), t)
    });
    let mut run = RunManifest::new("ablate", a.config.as_deref(), hash_json(&spec).tag(OTHER, "hash")?);
    run.dataset_hash = Some(hash_dataset(&a.data).tag(OTHER, "cannot hash dataset")?);
    let table = run_ablation(
        &spec,
        &data.manifest.config,
        &train_set,
        &test_set,
        occluded.as_ref().map(|(s, t)| OccludedSet { samples: s, frame: *t }),
        |v, s| println!("training {v} with seed {s}"),
    )
    .lib("ablation failed")?;
    let text = table.to_text();
    print!("{text}");
    fs::write(a.out.join("ablation.txt"), &text).tag(OTHER, "cannot write table")?;
    write_json(&a.out.join("ablation.json"), &table)?;
    run.outputs = vec![a.out.join("ablation.txt"), a.out.join("ablation.json")];
    run.write(&a.out).tag(OTHER, "cannot write run manifest")
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let text = fs::read_to_string(path).tag(MISSING_INPUT, &format!("cannot read {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).tag(BAD_DATA, &format!("malformed line in {}", path.display())))
        .collect()
}

fn cmd_plot(a: PlotArgs) -> CliResult<()> {
    let mut steps: Vec<StepLog> = Vec::new();
    let mut metric_lines: Vec<MetricsLine> = Vec::new();
    for p in &a.logs {
        if p.is_dir() {
            steps.extend(read_jsonl::<StepLog>(&p.join(TRAIN_LOG))?);
            if p.join(METRICS_LOG).exists() {
                metric_lines.extend(read_jsonl::<MetricsLine>(&p.join(METRICS_LOG))?);
            }
        } else {
            steps.extend(read_jsonl::<StepLog>(p)?);
        }
    }
    if steps.is_empty() {
        return Err(fail(BAD_DATA, anyhow::anyhow!("the training logs contain no steps")));
    }
    let eval: Option<EvalReport> = match &a.eval {
        Some(p) => {
            let text = fs::read_to_string(p).tag(MISSING_INPUT, &format!("cannot read {}", p.display()))?;
            Some(serde_json::from_str(&text).tag(BAD_DATA, "malformed evaluation report")?)
        }
        None => None,
    };
    let panels = match a.panels {
        Some(p) => p,
        None => {
            let mut p = vec!["loss".to_string(), "lr".into(), "grad_norm".into()];
            if !metric_lines.is_empty() {
                p.push("metrics".into());
            }
            if eval.is_some() {
                p.push("frames".into());
            }
            p
        }
    };
    fs::create_dir_all(&a.out).tag(OTHER, "cannot create output directory")?;
    let xs = |f: &dyn Fn(&StepLog) -> f64| steps.iter().map(|l| (l.step as f64, f(l))).collect::<Vec<_>>();
    for panel in &panels {
        let path = a.out.join(format!("{panel}.svg"));
        let drawn = match panel.as_str() {
            "loss" => {
                let term = |name: &str, f: fn(&StepLog) -> f64| Series {
                    name: name.into(),
                    points: xs(&|l| f(l).max(1e-12).log10()),
                };
                let series = [
                    term("total", |l| l.loss.total),
                    term("mano", |l| l.loss.mano),
                    term("3d", |l| l.loss.l3d),
                    term("2d", |l| l.loss.l2d),
                    term("jrel", |l| l.loss.jrel),
                    term("close", |l| l.loss.close),
                ];
                line_panel(&path, "training loss", "step", "log10 loss", &series)
            }
            "lr" => line_panel(&path, "learning rate", "step", "lr", &[Series { name: "lr".into(), points: xs(&|l| l.lr) }]),
            "grad_norm" => line_panel(
                &path,
                "gradient norm (before clipping)",
                "step",
                "norm",
                &[Series {
                    name: "grad_norm".into(),
                    points: xs(&|l| l.grad_norm),
                }],
            ),
            "metrics" => {
                if metric_lines.is_empty() {
                    return Err(fail(BAD_DATA, anyhow::anyhow!("no metrics log for the metrics panel")));
                }
                let pick = |name: &str, f: fn(&MetricReport) -> f64| Series {
                    name: name.into(),
                    points: metric_lines.iter().map(|m| (m.step as f64, f(&m.report))).collect(),
                };
                line_panel(
                    &path,
                    "metrics during training",
                    "step",
                    "mm",
                    &[pick("MPJPE", |r| r.mpjpe_mm), pick("MPVPE", |r| r.mpvpe_mm), pick("MRRPE", |r| r.mrrpe_mm)],
                )
            }
            "frames" => {
                let Some(e) = &eval else {
                    return Err(fail(CONFIG, anyhow::anyhow!("the frames panel needs --eval")));
                };
                let t = e.sequences.first().map_or(0, |s| s.per_frame_mpjpe_mm.len());
                if t == 0 {
                    return Err(fail(BAD_DATA, anyhow::anyhow!("evaluation report has no sequences")));
                }
                let points = (0..t).map(|i| (i as f64, e.frame_mpjpe(i))).collect();
                line_panel(&path, "per-frame MPJPE", "frame", "mm", &[Series { name: "MPJPE".into(), points }])
            }
            other => {
                return Err(fail(CONFIG, anyhow::anyhow!("unknown panel {other:?}")));
            }
        };
        drawn.tag(BAD_DATA, &format!("cannot draw {panel}"))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
