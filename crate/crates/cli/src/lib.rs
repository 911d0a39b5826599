//! `mfnet` command line: train, enhance, evaluate, gradcheck, info.
//!
//! Machine-readable results go to stdout as one JSON document; diagnostics
//! go to stderr. Exit codes are stable:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | a check failed |
//! | 2 | usage, config or input error |
//! | 3 | numeric failure at run time |

mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::{json, Value};

use mfnet_core::dsp::wav::{read_wav, write_wav, WavEncoding};
use mfnet_core::gradsuite::{Registry, DEFAULT_SEEDS, THRESHOLD};
use mfnet_core::model::{count_params_and_macs, default_frame_rate, load_checkpoint, ModelConfig};
use mfnet_core::objectives::MetricRecord;
use mfnet_core::pipeline::{load_manifest, materialize, train, Enhancer};
use mfnet_core::Error;

pub use config::{apply_override, CliConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Reported MACs/s for the default configuration, and the accepted band.
pub const REFERENCE_MACS: f64 = 6.09e9;
pub const MACS_BAND: (f64, f64) = (3e9, 1.2e10);

#[derive(Debug, Parser)]
#[command(name = "mfnet", version, about = "Mask-free STDCT speech enhancement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a manifest of clean/noise pairs.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dotted override applied after the file, e.g. train.gamma=0.3
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Shorthand for --set train.seed=N
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Enhance one WAV file with a checkpoint.
    Enhance {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
    },
    /// SNR and SI-SDR of an estimate against a reference.
    Evaluate {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        est: PathBuf,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        /// One registered case; all cases when omitted.
        #[arg(long)]
        op: Option<String>,
        #[arg(long, default_value_t = DEFAULT_SEEDS)]
        seeds: u64,
    },
    /// Parameter count, MACs and layout of a checkpoint or config.
    Info(InfoSource),
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct InfoSource {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Result of one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    /// JSON document or help text for stdout.
    pub stdout: String,
    /// Diagnostics for stderr.
    pub stderr: String,
}

impl Outcome {
    fn json(code: i32, v: Value, stderr: impl Into<String>) -> Self {
        Self {
            code,
            stdout: serde_json::to_string_pretty(&v).expect("json") + "\n",
            stderr: stderr.into(),
        }
    }

    fn fail(code: i32, msg: impl Into<String>) -> Self {
        let mut stderr = msg.into();
        stderr.push('\n');
        Self {
            code,
            stdout: String::new(),
            stderr,
        }
    }

    /// The stdout document, parsed.
    pub fn value(&self) -> Option<Value> {
        serde_json::from_str(&self.stdout).ok()
    }
}

fn engine_failure(e: Error) -> Outcome {
    let code = match e {
        Error::NonFinite { .. } | Error::NonFiniteLoss { .. } => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    };
    Outcome::fail(code, format!("error: {e}"))
}

/// Parses `args` (program name first) and runs the command.
pub fn execute<I, T>(args: I, registry: &Registry) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli, registry),
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                Outcome::fail(EXIT_USAGE, text.trim_end())
            } else {
                Outcome { code: EXIT_OK, stdout: text, stderr: String::new() }
            }
        }
    }
}

pub fn run(cli: Cli, registry: &Registry) -> Outcome {
    match cli.command {
        Command::Train { config, overrides, seed } => cmd_train(&config, overrides, seed),
        Command::Enhance { ckpt, input, output } => cmd_enhance(&ckpt, &input, &output),
        Command::Evaluate { reference, est } => cmd_evaluate(&reference, &est),
        Command::Gradcheck { op, seeds } => cmd_gradcheck(registry, op.as_deref(), seeds),
        Command::Info(src) => cmd_info(src),
    }
}

fn cmd_train(config: &Path, mut overrides: Vec<String>, seed: Option<u64>) -> Outcome {
    if let Some(s) = seed {
        overrides.push(format!("train.seed={s}"));
    }
    let cfg = match CliConfig::load(config, &overrides) {
        Ok(c) => c,
        Err(e) => return Outcome::fail(EXIT_USAGE, format!("config error: {e}")),
    };
    let Some(manifest) = cfg.manifest.as_deref() else {
        return Outcome::fail(EXIT_USAGE, "config error: no manifest given");
    };
    let out_dir = cfg
        .out_dir
        .clone()
        .unwrap_or_else(|| config.parent().unwrap_or(Path::new(".")).join("run"));
    let data = match load_manifest(manifest).and_then(|m| materialize(&m)) {
        Ok(d) => d,
        Err(e) => return engine_failure(e),
    };
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        return Outcome::fail(EXIT_USAGE, format!("{}: {e}", out_dir.display()));
    }
    info!("training on {} pairs into {}", data.len(), out_dir.display());
    match train(&data, &cfg.train, &cfg.model, Some(&out_dir)) {
        Ok(out) => Outcome::json(
            EXIT_OK,
            json!({
                "checkpoint": out.checkpoints.last(),
                "checkpoints": out.checkpoints,
                "loss_curve": out_dir.join("loss_curve.json"),
                "steps": out.curve.len(),
                "initial_loss": out.initial_loss(),
                "final_loss": out.final_loss(),
                "epoch_means": out.epoch_means,
            }),
            "",
        ),
        Err(e) => engine_failure(e),
    }
}

fn cmd_enhance(ckpt: &Path, input: &Path, output: &Path) -> Outcome {
    let enhancer = match Enhancer::from_checkpoint(ckpt) {
        Ok(e) => e,
        Err(e) => return engine_failure(e),
    };
    let noisy = match read_wav(input) {
        Ok(w) => w,
        Err(e) => return engine_failure(e),
    };
    let start = Instant::now();
    let out = match enhancer.enhance(&noisy) {
        Ok(o) => o,
        Err(e) => return engine_failure(e),
    };
    let rtf = start.elapsed().as_secs_f64() / noisy.duration_secs();
    if let Err(e) = write_wav(output, &out.wave, WavEncoding::Float32) {
        return engine_failure(e);
    }
    let warn = if out.clipped_samples > 0 {
        format!("warning: {} samples clipped to [-1, 1]\n", out.clipped_samples)
    } else {
        String::new()
    };
    Outcome::json(
        EXIT_OK,
        json!({"rtf": rtf, "frames": out.frames, "clipped_samples": out.clipped_samples}),
        warn,
    )
}

fn cmd_evaluate(reference: &Path, est: &Path) -> Outcome {
    let pair = read_wav(reference).and_then(|r| Ok((r, read_wav(est)?)));
    let (r, e) = match pair {
        Ok(p) => p,
        Err(e) => return engine_failure(e),
    };
    match MetricRecord::measure(est.display().to_string(), &r, &e) {
        Ok(rec) => Outcome::json(EXIT_OK, serde_json::to_value(rec).expect("json"), ""),
        Err(e) => engine_failure(e),
    }
}

fn cmd_gradcheck(registry: &Registry, op: Option<&str>, seeds: u64) -> Outcome {
    if seeds == 0 {
        return Outcome::fail(EXIT_USAGE, "--seeds must be at least 1");
    }
    let results = match registry.run(op, seeds) {
        Ok(r) => r,
        Err(e) => {
            let known = registry.names().join(", ");
            return Outcome::fail(EXIT_USAGE, format!("error: {e}\nknown cases: {known}"));
        }
    };
    let failing: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    let doc = json!({
        "threshold": THRESHOLD,
        "seeds": seeds,
        "passed": failing.is_empty(),
        "cases": results,
    });
    if failing.is_empty() {
        Outcome::json(EXIT_OK, doc, "")
    } else {
        Outcome::json(
            EXIT_CHECK_FAILED,
            doc,
            format!("gradient check failed: {}\n", failing.join(", ")),
        )
    }
}

fn cmd_info(src: InfoSource) -> Outcome {
    let model = match (src.ckpt, src.config) {
        (Some(p), _) => match load_checkpoint(&p) {
            Ok((cfg, _)) => cfg,
            Err(e) => return engine_failure(e),
        },
        (None, Some(p)) => match CliConfig::load(&p, &[]) {
            Ok(c) => c.model,
            Err(e) => return Outcome::fail(EXIT_USAGE, format!("config error: {e}")),
        },
        (None, None) => return Outcome::fail(EXIT_USAGE, "give --ckpt or --config"),
    };
    match info_document(&model) {
        Ok(v) => Outcome::json(EXIT_OK, v, ""),
        Err(e) => engine_failure(e),
    }
}

/// The `info` JSON for a model configuration.
pub fn info_document(model: &ModelConfig) -> mfnet_core::Result<Value> {
    let acc = count_params_and_macs(model, default_frame_rate())?;
    let in_band = (MACS_BAND.0..=MACS_BAND.1).contains(&acc.macs_per_second);
    Ok(json!({
        "params": acc.params,
        "macs_per_second": acc.macs_per_second,
        "channel_plan": model.channel_plan(),
        "depths": {
            "enc": model.encoder_depths,
            "mid": model.bottleneck_depth,
            "dec": model.decoder_depths,
        },
        "head": model.head,
        "macs_reference": REFERENCE_MACS,
        "macs_band": [MACS_BAND.0, MACS_BAND.1],
        "macs_in_band": in_band,
    }))
}

/// Sizes the global worker pool from `MFNET_THREADS` when set.
pub fn configure_threads(var: Option<&str>) -> Result<(), String> {
    let Some(raw) = var else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("MFNET_THREADS must be a positive integer, got '{raw}'"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}
