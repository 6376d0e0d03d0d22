//! The `radar-har` command set. Every command resolves a [`RunConfig`] from
//! defaults, an optional `--config` file and flags (flags win), creates a
//! timestamped run directory under `out`, echoes the resolved configuration
//! into it as `config.txt` and records the directory name in `out/latest`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::comms::{snr_sweep, summarize, train_for_scheme, write_summary_csv, write_sweep_csv, CompressionScheme};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::interpret::importance_ablation_study;
use crate::learning::{evaluate, lopo_run, train, TrainReport};
use crate::model::{forward_batch, load_checkpoint, save_checkpoint, ModelState};
use crate::radar::{load_recording, lopo_split, save_recording, synthesize_recording, WindowSample};
use crate::seed;
use crate::tensor::Mode;

#[derive(Debug, Parser)]
#[command(name = "radar-har", version, about = "Distributed UWB radar activity recognition")]
pub struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Parent directory for run artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set train.lr=0.001`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a labelled multi-node recording.
    Generate {
        #[arg(long)]
        participants: Option<usize>,
        #[arg(long)]
        samples_per_class: Option<usize>,
    },
    /// Train on all but the hold-out participant and test on it.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the hold-out participant.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Leave-one-participant-out cross-validation.
    Lopo {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Encoder features vs downsampling over a noisy channel.
    Compress {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Node importance and node-ablation study.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Export fused embeddings for external visualization.
    Embed {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Lopo { .. } => "lopo",
            Command::Compress { .. } => "compress",
            Command::Ablate { .. } => "ablate",
            Command::Embed { .. } => "embed",
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(dir) => {
            println!("run directory: {}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Resolves the configuration for `cli`: defaults, then the file, then flags.
pub fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    match &cli.command {
        Command::Generate { participants, samples_per_class } => {
            cfg.participants = participants.unwrap_or(cfg.participants);
            cfg.samples_per_class = samples_per_class.unwrap_or(cfg.samples_per_class);
        }
        Command::Train { data } | Command::Lopo { data } | Command::Compress { data } => {
            cfg.data_path = data.clone().or(cfg.data_path);
        }
        Command::Eval { data, checkpoint } | Command::Ablate { data, checkpoint } | Command::Embed { data, checkpoint } => {
            cfg.data_path = data.clone().or(cfg.data_path);
            cfg.checkpoint = checkpoint.clone().or(cfg.checkpoint);
        }
    }
    Ok(cfg)
}

/// Runs the command and returns its run directory.
pub fn execute(cli: &Cli) -> Result<PathBuf> {
    let cfg = resolve(cli)?;
    // inputs are checked before anything is written
    let inputs = match cli.command {
        Command::Generate { .. } => None,
        _ => Some(load_samples(&cfg)?),
    };
    let dir = run_directory(&cfg, cli.command.name())?;
    let samples = inputs.unwrap_or_default();
    match cli.command {
        Command::Generate { .. } => cmd_generate(&cfg, &dir)?,
        Command::Train { .. } => cmd_train(&cfg, &samples, &dir)?,
        Command::Eval { .. } => cmd_eval(&cfg, &samples, &dir)?,
        Command::Lopo { .. } => cmd_lopo(&cfg, &samples, &dir)?,
        Command::Compress { .. } => cmd_compress(&cfg, &samples, &dir)?,
        Command::Ablate { .. } => cmd_ablate(&cfg, &samples, &dir)?,
        Command::Embed { .. } => cmd_embed(&cfg, &samples, &dir)?,
    }
    Ok(dir)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

fn run_directory(cfg: &RunConfig, command: &str) -> Result<PathBuf> {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let base = format!("{command}-{stamp}-seed{}", cfg.seed);
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(format!("creating {}", cfg.out.display()), e))?;
    let mut name = base.clone();
    let mut k = 1;
    while cfg.out.join(&name).exists() {
        name = format!("{base}-{k}");
        k += 1;
    }
    let dir = cfg.out.join(&name);
    fs::create_dir(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    write(&dir.join("config.txt"), cfg.to_text())?;
    write(&cfg.out.join("latest"), format!("{name}\n"))?;
    Ok(dir)
}

fn load_samples(cfg: &RunConfig) -> Result<Vec<WindowSample>> {
    let path = cfg.data_path.as_ref().ok_or_else(|| Error::Config("no dataset given (use --data or data.path)".into()))?;
    load_recording(path)?.samples()
}

fn checkpoint(cfg: &RunConfig) -> Result<ModelState> {
    let path = cfg.checkpoint.as_ref().ok_or_else(|| Error::Config("no checkpoint given (use --checkpoint or eval.checkpoint)".into()))?;
    load_checkpoint(path)
}

fn extents(samples: &[WindowSample]) -> Result<(usize, usize, usize)> {
    let s = samples.first().ok_or_else(|| Error::Config("dataset contains no labelled windows".into()))?;
    Ok((s.nodes.len(), s.fast_bins(), s.window()))
}

fn holdout_samples(cfg: &RunConfig, samples: &[WindowSample]) -> Result<Vec<WindowSample>> {
    let test: Vec<WindowSample> = samples.iter().filter(|s| s.participant == cfg.holdout).cloned().collect();
    if test.is_empty() {
        return Err(Error::Split(format!("no samples for hold-out participant {}", cfg.holdout)));
    }
    Ok(test)
}

fn pick(samples: &[WindowSample], idx: &[usize]) -> Vec<WindowSample> {
    idx.iter().map(|&i| samples[i].clone()).collect()
}

fn cmd_generate(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let rec = synthesize_recording(&cfg.synth())?;
    let path = dir.join("dataset.rdr");
    save_recording(&rec, &path)?;
    let mut hist = vec![0usize; 9];
    for w in &rec.windows {
        hist[w.class as usize] += 1;
    }
    println!("wrote {} ({} windows, {} nodes, {} fast bins)", path.display(), rec.windows.len(), rec.nodes(), rec.fast_bins());
    println!("class histogram: {hist:?}");
    Ok(())
}

fn cmd_train(cfg: &RunConfig, samples: &[WindowSample], dir: &Path) -> Result<()> {
    let (n, f, w) = extents(samples)?;
    let split = lopo_split(samples, cfg.holdout, cfg.seed)?;
    let (state, mut report) = train(&pick(samples, &split.train), &pick(samples, &split.validation), &cfg.model(n, f, w), &cfg.train(), &cfg.loss())?;
    let test = evaluate(&state, &pick(samples, &split.test))?;
    println!("epochs {} (best {}), test accuracy {:.4}", report.epochs_run, report.best_epoch, test.accuracy);
    report.held_out = Some(cfg.holdout);
    report.test = Some(test);
    save_checkpoint(&state, &dir.join("checkpoint.rfm"))?;
    write(&dir.join("report.json"), report.to_json())
}

fn cmd_eval(cfg: &RunConfig, samples: &[WindowSample], dir: &Path) -> Result<()> {
    let state = checkpoint(cfg)?;
    let e = evaluate(&state, &holdout_samples(cfg, samples)?)?;
    println!("test accuracy {:.4}", e.accuracy);
    write(&dir.join("eval.json"), serde_json::to_string_pretty(&e).expect("evaluation serializes"))
}

fn cmd_lopo(cfg: &RunConfig, samples: &[WindowSample], dir: &Path) -> Result<()> {
    let (n, f, w) = extents(samples)?;
    let summary = lopo_run(samples, &cfg.model(n, f, w), &cfg.train(), &cfg.loss(), |state, report: &TrainReport| {
        let p = report.held_out.expect("set by lopo_run");
        let acc = report.test.as_ref().map_or(f64::NAN, |t| t.accuracy);
        println!("participant {p}: epochs {}, test accuracy {acc:.4}", report.epochs_run);
        save_checkpoint(state, &dir.join(format!("fold-{p}.rfm")))?;
        write(&dir.join(format!("report-{p}.json")), report.to_json())
    })?;
    println!("max test accuracy {:.4}, mean {:.4}", summary.max_accuracy, summary.mean_accuracy);
    let aggregate = serde_json::json!({
        "folds": summary.reports.len(),
        "max_accuracy": summary.max_accuracy,
        "mean_accuracy": summary.mean_accuracy,
        "accuracies": summary.reports.iter().map(|r| r.test.as_ref().map(|t| t.accuracy)).collect::<Vec<_>>(),
    });
    write(&dir.join("summary.json"), serde_json::to_string_pretty(&aggregate).expect("summary serializes"))
}

fn cmd_compress(cfg: &RunConfig, samples: &[WindowSample], dir: &Path) -> Result<()> {
    let (n, f, w) = extents(samples)?;
    let split = lopo_split(samples, cfg.holdout, cfg.seed)?;
    let (train_set, val, test) = (pick(samples, &split.train), pick(samples, &split.validation), pick(samples, &split.test));
    let base = cfg.model(n, f, w);
    let mut states = Vec::with_capacity(cfg.schemes.len());
    for scheme in &cfg.schemes {
        let cf = scheme.compression_factor(f, w)?;
        println!("{scheme}: payload {} values/node, compression factor {cf}", scheme.payload(f, w));
        let (state, _) = train_for_scheme(scheme, &base, &train_set, &val, &cfg.train(), &cfg.loss())?;
        states.push(state);
    }
    let pairs: Vec<(CompressionScheme, &ModelState)> = cfg.schemes.iter().copied().zip(states.iter()).collect();
    let rows = snr_sweep(&pairs, &cfg.snr_db, &test, cfg.repeats, seed::derive(cfg.seed, &[0xC0]))?;
    write_sweep_csv(&rows, create(&dir.join("sweep.csv"))?)?;
    let summary = summarize(&rows);
    for s in &summary {
        println!("{} {} @ {} dB: {:.4} ± {:.4}", s.scheme, s.setting, s.snr_db, s.mean_accuracy, s.std_accuracy);
    }
    write_summary_csv(&summary, create(&dir.join("sweep_summary.csv"))?)
}

fn cmd_ablate(cfg: &RunConfig, samples: &[WindowSample], dir: &Path) -> Result<()> {
    let state = checkpoint(cfg)?;
    let study = importance_ablation_study(&state, &holdout_samples(cfg, samples)?, &cfg.ablation_seeds)?;
    println!("baseline accuracy {:.4}", study.baseline_accuracy);
    println!("importance {:?}", study.importance.mean);
    println!("spearman(importance, zero-ablation drop) = {:.4}", study.spearman_zero);
    study.write_csv(create(&dir.join("ablation.csv"))?)?;
    write(&dir.join("importance.json"), serde_json::to_string_pretty(&study.importance).expect("importance serializes"))
}

fn cmd_embed(cfg: &RunConfig, samples: &[WindowSample], dir: &Path) -> Result<()> {
    let state = checkpoint(cfg)?;
    let path = dir.join("embeddings.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    let io = |e: csv::Error| Error::io(format!("writing {}", path.display()), e.into());
    let dim = state.config.nodes * state.config.d_model();
    let header = ["sample", "label", "participant"].into_iter().map(String::from).chain((0..dim).map(|k| format!("s{k}")));
    w.write_record(header).map_err(io)?;
    let mut rng = seed::rng(0, &[]);
    for (b, chunk) in samples.chunks(32).enumerate() {
        let refs: Vec<&WindowSample> = chunk.iter().collect();
        for (k, (s, out)) in chunk.iter().zip(forward_batch(&state, &refs, Mode::Infer, &mut rng)?.outputs()).enumerate() {
            let fields = [b * 32 + k, s.label, s.participant].into_iter().map(|v| v.to_string()).chain(out.embedding.iter().map(f64::to_string));
            w.write_record(fields).map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    println!("wrote {} embeddings of dimension {dim}", samples.len());
    Ok(())
}
