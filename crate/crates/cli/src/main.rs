//! `apc`: command-line front end for piano-roll encoding, style extraction,
//! the toy transcription network and the evaluation metrics.

mod dataset;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use apc_core::evalkit::{
    chroma_from_audio, chroma_from_notes, dtw_align, f1_scores, qmax, read_wav, ChromaSequence, QmaxParams, QmaxResult,
};
use apc_core::loss::total_loss;
use apc_core::postproc::{decode_and_clean, PostprocConfig};
use apc_core::roll::{notes_to_tensors, DEFAULT_SOFT_ONSET_WIDTH};
use apc_core::style::extract_style_vector;
use apc_core::toynet::{gen_synthetic_dataset, infer, train, write_trace, ToyNetParams, TrainConfig};
use apc_core::{FrameGrid, LossConfig, PianoRollTensors, StyleVector, Tensor};
use clap::{Parser, Subcommand};
use serde::Serialize;

use dataset::{pair_dir, read_dataset, read_json, read_notes, write_json, write_notes, write_pair};

#[derive(Parser)]
#[command(name = "apc", version, about = "Piano cover transcription toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract a style vector from a MIDI cover, or average many.
    Style {
        /// `MIDI_IN JSON_OUT`, or just `JSON_OUT` with --average.
        #[arg(num_args = 1..=2, required = true)]
        paths: Vec<PathBuf>,
        /// Average every *.json style vector and *.mid cover in this directory.
        #[arg(long, value_name = "DIR")]
        average: Option<PathBuf>,
    },
    /// Write the piano-roll tensors of one 512-frame segment.
    Roll {
        midi_in: PathBuf,
        tensor_out: PathBuf,
        #[arg(long, default_value_t = 0)]
        segment: usize,
    },
    /// Print the masked loss breakdown of two predictions against a target.
    Loss {
        pred_h1: PathBuf,
        pred_h2: PathBuf,
        truth: PathBuf,
        #[arg(long, value_name = "JSON")]
        config: Option<PathBuf>,
    },
    /// Write a synthetic original/cover dataset.
    Gen {
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        out_dir: PathBuf,
    },
    /// Train the toy network on a generated dataset.
    Train {
        data_dir: PathBuf,
        ckpt_out: PathBuf,
        #[arg(long, value_name = "JSON")]
        config: Option<PathBuf>,
    },
    /// Transcribe input features under a style into a cleaned MIDI file.
    Infer {
        ckpt: PathBuf,
        features_in: PathBuf,
        style_json: PathBuf,
        midi_out: PathBuf,
        #[arg(long, value_name = "JSON")]
        postproc: Option<PathBuf>,
    },
    /// Print cell-level F1 scores of a prediction against a target.
    F1 { pred: PathBuf, truth: PathBuf },
    /// Q_max cover distance between two WAV or MIDI files.
    Qmax {
        /// `A B`, or nothing with --batch.
        #[arg(num_args = 0..=2)]
        files: Vec<PathBuf>,
        #[arg(long, value_name = "JSON")]
        params: Option<PathBuf>,
        /// CSV with columns a,b and an optional model column.
        #[arg(long, value_name = "CSV")]
        batch: Option<PathBuf>,
    },
    /// Write the DTW warping path between two WAV or MIDI files.
    Align {
        a: PathBuf,
        b: PathBuf,
        path_out: PathBuf,
        #[arg(long, value_name = "JSON")]
        params: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", error_kind(&e), format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(core) = cause.downcast_ref::<apc_core::Error>() {
            return core.kind();
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
        if cause.downcast_ref::<csv::Error>().is_some() {
            return "csv";
        }
    }
    "invalid_input"
}

fn run(command: Command) -> Result<()> {
    let grid = FrameGrid::default();
    match command {
        Command::Style { paths, average } => cmd_style(&paths, average.as_deref(), &grid),
        Command::Roll { midi_in, tensor_out, segment } => {
            let notes = read_notes(&midi_in)?;
            let roll = notes_to_tensors(&notes, segment * grid.frames_per_segment, &grid, DEFAULT_SOFT_ONSET_WIDTH);
            roll.write_dir(&tensor_out)?;
            Ok(())
        }
        Command::Loss { pred_h1, pred_h2, truth, config } => {
            let config: LossConfig = optional_json(config.as_deref())?;
            let h1 = PianoRollTensors::read_dir(&pred_h1)?;
            let h2 = PianoRollTensors::read_dir(&pred_h2)?;
            let truth = PianoRollTensors::read_dir(&truth)?;
            print_json(&total_loss(&h1, &h2, &truth, &config)?)
        }
        Command::Gen { n, seed, out_dir } => {
            if n == 0 {
                bail!("--n must be at least 1");
            }
            for (i, pair) in gen_synthetic_dataset(n, seed)?.iter().enumerate() {
                write_pair(&pair_dir(&out_dir, i), pair)?;
            }
            log::info!("wrote {n} pairs to {}", out_dir.display());
            Ok(())
        }
        Command::Train { data_dir, ckpt_out, config } => cmd_train(&data_dir, &ckpt_out, config.as_deref(), &grid),
        Command::Infer { ckpt, features_in, style_json, midi_out, postproc } => {
            let post: PostprocConfig = optional_json(postproc.as_deref())?;
            post.validate()?;
            let (params, _) = ToyNetParams::load(&ckpt)?;
            let features = Tensor::read(&features_in)?;
            let style: StyleVector = read_json(&style_json)?;
            let pred = infer(&params, &features, &style)?;
            let notes = decode_and_clean(&pred, &post, &grid);
            log::info!("decoded {} notes", notes.len());
            write_notes(&midi_out, &notes)
        }
        Command::F1 { pred, truth } => {
            let pred = PianoRollTensors::read_dir(&pred)?;
            let truth = PianoRollTensors::read_dir(&truth)?;
            print_json(&f1_scores(&pred, &truth)?)
        }
        Command::Qmax { files, params, batch } => {
            let (params, hop) = qmax_config(params.as_deref())?;
            match (batch, files.as_slice()) {
                (Some(csv), []) => cmd_qmax_batch(&csv, &params, hop),
                (None, [a, b]) => print_json(&qmax(&load_chroma(a, hop)?, &load_chroma(b, hop)?, &params)?),
                _ => bail!("qmax takes two files or --batch CSV"),
            }
        }
        Command::Align { a, b, path_out, params } => {
            let (_, hop) = qmax_config(params.as_deref())?;
            let result = dtw_align(&load_chroma(&a, hop)?, &load_chroma(&b, hop)?)?;
            let mut w = csv::Writer::from_path(&path_out).with_context(|| format!("writing {}", path_out.display()))?;
            w.write_record(["i", "j"])?;
            for (i, j) in &result.path {
                w.write_record([i.to_string(), j.to_string()])?;
            }
            w.flush()?;
            print_json(&serde_json::json!({ "cost": result.cost, "path_length": result.path.len() }))
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn optional_json<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

fn cmd_style(paths: &[PathBuf], average: Option<&Path>, grid: &FrameGrid) -> Result<()> {
    let (vector, out) = match (average, paths) {
        (Some(dir), [out]) => {
            let mut files: Vec<PathBuf> = fs::read_dir(dir)
                .with_context(|| format!("reading {}", dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("json" | "mid" | "midi")))
                .collect();
            files.sort();
            let vectors = files
                .iter()
                .map(|f| match f.extension().and_then(|e| e.to_str()) {
                    Some("json") => read_json::<StyleVector>(f),
                    _ => Ok(extract_style_vector(&read_notes(f)?, grid)?),
                })
                .collect::<Result<Vec<_>>>()?;
            if vectors.is_empty() {
                bail!("no style vectors or MIDI files in {}", dir.display());
            }
            log::info!("averaged {} style vectors", vectors.len());
            (StyleVector::average(&vectors)?, out)
        }
        (None, [midi, out]) => (extract_style_vector(&read_notes(midi)?, grid)?, out),
        (Some(_), _) => bail!("style --average DIR takes only JSON_OUT"),
        (None, _) => bail!("style takes MIDI_IN JSON_OUT"),
    };
    write_json(out, &vector)
}

fn cmd_train(data_dir: &Path, ckpt_out: &Path, config: Option<&Path>, grid: &FrameGrid) -> Result<()> {
    let config: TrainConfig = optional_json(config)?;
    config.validate()?;
    let pairs = read_dataset(data_dir, grid)?;
    log::info!("training on {} pairs for {} epochs", pairs.len(), config.epochs);
    let mut params = ToyNetParams::init(config.model, config.seed)?;
    let trace = train(&mut params, &pairs, &config)?;
    params.save(ckpt_out, config.seed)?;
    write_trace(&trace, ckpt_out.join("trace.csv"))?;
    write_json(&ckpt_out.join("train.json"), &config)?;
    let (first, last) = (trace[0], trace[trace.len() - 1]);
    print_json(&serde_json::json!({
        "epochs": config.epochs,
        "initial_loss": first.l,
        "final_loss": last.l,
        "ratio": last.l / first.l,
    }))
}

/// `q.json` holds the Q_max parameters plus the chroma `hop_seconds`.
fn qmax_config(path: Option<&Path>) -> Result<(QmaxParams, f64)> {
    const DEFAULT_HOP: f64 = 0.1;
    let Some(path) = path else {
        return Ok((QmaxParams::default(), DEFAULT_HOP));
    };
    let mut value: serde_json::Value = read_json(path)?;
    let hop = match value.as_object_mut().and_then(|m| m.remove("hop_seconds")) {
        Some(v) => v.as_f64().context("hop_seconds must be a number")?,
        None => DEFAULT_HOP,
    };
    if hop.is_nan() || hop <= 0.0 {
        return Err(apc_core::Error::Config(format!("hop_seconds must be > 0, got {hop}")).into());
    }
    let params = serde_json::from_value(value).map_err(apc_core::Error::from)?;
    Ok((params, hop))
}

fn load_chroma(path: &Path, hop: f64) -> Result<ChromaSequence> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("wav") => {
            let (pcm, sr) = read_wav(path)?;
            Ok(chroma_from_audio(&pcm, sr, hop)?)
        }
        Some("mid" | "midi") => Ok(chroma_from_notes(&read_notes(path)?, hop)),
        _ => bail!("{}: expected a .wav or .mid file", path.display()),
    }
}

#[derive(Serialize)]
struct BatchRow<'a> {
    model: &'a str,
    a: &'a str,
    b: &'a str,
    qmax: f64,
    distance: String,
    oti: String,
    n_a: String,
    n_b: String,
}

fn fmt_distance(d: f64) -> String {
    if d.is_finite() {
        d.to_string()
    } else {
        "inf".into()
    }
}

/// One row per input pair, then one `mean` row per model in first-seen order.
fn cmd_qmax_batch(csv_path: &Path, params: &QmaxParams, hop: f64) -> Result<()> {
    let mut reader = csv::Reader::from_path(csv_path).with_context(|| format!("reading {}", csv_path.display()))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(ia), Some(ib)) = (col("a"), col("b")) else {
        bail!("{}: header must contain columns a and b", csv_path.display());
    };
    let im = col("model");
    let base = csv_path.parent().unwrap_or(Path::new("."));
    let mut rows: Vec<(String, String, String, QmaxResult)> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let (a, b) = (record[ia].trim().to_string(), record[ib].trim().to_string());
        let model = im.map(|i| record[i].trim().to_string()).unwrap_or_default();
        let res = qmax(&load_chroma(&base.join(&a), hop)?, &load_chroma(&base.join(&b), hop)?, params)?;
        rows.push((model, a, b, res));
    }
    let mut out = csv::Writer::from_writer(std::io::stdout());
    for (model, a, b, r) in &rows {
        out.serialize(BatchRow {
            model,
            a,
            b,
            qmax: r.qmax,
            distance: fmt_distance(r.distance),
            oti: r.oti.to_string(),
            n_a: r.n_a.to_string(),
            n_b: r.n_b.to_string(),
        })?;
    }
    let mut models: Vec<&str> = Vec::new();
    for (m, ..) in &rows {
        if !models.contains(&m.as_str()) {
            models.push(m);
        }
    }
    for m in models {
        let group: Vec<&QmaxResult> = rows.iter().filter(|r| r.0 == m).map(|r| &r.3).collect();
        let n = group.len() as f64;
        out.serialize(BatchRow {
            model: m,
            a: "mean",
            b: "",
            qmax: group.iter().map(|r| r.qmax).sum::<f64>() / n,
            distance: fmt_distance(group.iter().map(|r| r.distance).sum::<f64>() / n),
            oti: String::new(),
            n_a: String::new(),
            n_b: String::new(),
        })?;
    }
    out.flush()?;
    Ok(())
}
