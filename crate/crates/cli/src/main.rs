//! `iim`: synthetic data, label generation, training, inference, evaluation
//! and overlays from the command line.
//!
//! Failures print one line to stderr, `error kind=<kind> message="<text>"`,
//! and exit with status 1 (2 for usage errors).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use iim::harness::checkpoint::{load_checkpoint, save_checkpoint};
use iim::harness::config::{apply_pairs, parse_pairs, read_pairs};
use iim::harness::dataset::{
    generate_labels, load_split, read_annotation, read_gray_png, read_manifest, split_dir, synth_dataset,
    DatasetSpec, LabelSource, Split,
};
use iim::harness::infer::{evaluate_predictions, localize_image, read_results, write_results};
use iim::harness::model::{Routing, ThresholdMode};
use iim::harness::render::render_overlay;
use iim::harness::train::{train, TrainConfig};
use iim::labels::Annotation;
use iim::{Error, Result};

#[derive(Parser)]
#[command(name = "iim", version, about = "Crowd localization with independent instance maps")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Flat `key = value` file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic train/val/test dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Regenerate instance label maps from annotations.
    Genlabels {
        /// Dataset root or a single directory of scenes.
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value = "boxes", value_parser = parse_source)]
        source: LabelSource,
    },
    /// Train a model and save the best checkpoint on validation.
    Train {
        /// Dataset root written by `synth`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `fixed:<t>`, `layer`, `ibm` or `pbm`.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<ThresholdMode>,
        /// `te-only` or `te-and-cp`.
        #[arg(long, value_parser = parse_routing)]
        routing: Option<Routing>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Per-epoch log as JSON.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Localize heads in one image or every image of a directory.
    Localize {
        #[arg(long)]
        model: PathBuf,
        /// A PNG file or a directory of scenes.
        #[arg(long)]
        input: PathBuf,
        /// Result file; `.json` selects the JSON format, anything else text records.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a result file against annotations.
    Eval {
        #[arg(long)]
        results: PathBuf,
        /// Directory holding `<id>.json` annotations.
        #[arg(long)]
        annotations: PathBuf,
        /// Also write the metrics as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Draw a result over its image.
    Render {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        annotation: PathBuf,
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_mode(s: &str) -> std::result::Result<ThresholdMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_routing(s: &str) -> std::result::Result<Routing, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_source(s: &str) -> std::result::Result<LabelSource, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Config file pairs, then `--set` pairs, then dedicated flags.
fn collect_pairs(cfg: &ConfigArgs, flags: Vec<(&str, String)>) -> Result<Vec<(String, String)>> {
    let mut pairs = match &cfg.config {
        Some(p) => read_pairs(p)?,
        None => Vec::new(),
    };
    for s in &cfg.set {
        pairs.extend(parse_pairs(s)?);
    }
    pairs.extend(flags.into_iter().map(|(k, v)| (k.to_string(), v)));
    Ok(pairs)
}

fn last_value<'a>(pairs: &'a [(String, String)], key: &str) -> Option<&'a str> {
    pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Image ids of a scene directory: the manifest if present, otherwise every
/// PNG that is not a label map.
fn image_ids(dir: &Path) -> Result<Vec<String>> {
    if dir.join("manifest.txt").exists() {
        return read_manifest(dir);
    }
    let entries = fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut ids: Vec<String> = entries
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter_map(|n| n.strip_suffix(".png").map(String::from))
        .filter(|id| !id.ends_with("_iim"))
        .collect();
    ids.sort();
    Ok(ids)
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Synth { out, seed, cfg } => {
            let flags = seed.map(|s| vec![("seed", s.to_string())]).unwrap_or_default();
            let spec: DatasetSpec = apply_pairs(&DatasetSpec::default(), &collect_pairs(&cfg, flags)?, &[])?;
            synth_dataset(&out, &spec)?;
            println!(
                "wrote {} / {} / {} scenes to {}",
                spec.train,
                spec.val,
                spec.test,
                out.display()
            );
        }
        Cmd::Genlabels { dir, source } => {
            let dirs: Vec<PathBuf> = if dir.join("dataset.json").exists() {
                Split::ALL.iter().map(|&s| split_dir(&dir, s)).collect()
            } else {
                vec![dir]
            };
            for d in dirs {
                let n = generate_labels(&d, source)?;
                println!("{}: {n} label maps", d.display());
            }
        }
        Cmd::Train {
            data,
            out,
            mode,
            routing,
            seed,
            epochs,
            log,
            cfg,
        } => {
            let mut flags = Vec::new();
            if let Some(s) = seed {
                flags.push(("seed", s.to_string()));
            }
            if let Some(e) = epochs {
                flags.push(("epochs", e.to_string()));
            }
            let pairs = collect_pairs(&cfg, flags)?;
            let tc: TrainConfig = apply_pairs(&TrainConfig::default(), &pairs, &["mode", "routing"])?;
            let mode = match (mode, last_value(&pairs, "mode")) {
                (Some(m), _) => m,
                (None, Some(s)) => s.parse()?,
                (None, None) => ThresholdMode::Pbm,
            };
            let routing = match (routing, last_value(&pairs, "routing")) {
                (Some(r), _) => r,
                (None, Some(s)) => s.parse()?,
                (None, None) => Routing::TeAndCp,
            };
            let train_set = load_split(&data, Split::Train)?;
            let val_set = load_split(&data, Split::Val)?;
            let outcome = train(&train_set, &val_set, &tc, mode, routing)?;
            for l in &outcome.log {
                println!(
                    "epoch {:3} loss {:.5} mse {:.5} l1 {:.5} val_f1 {:.4} val_mae {:.3} threshold {:.3}",
                    l.epoch, l.loss, l.mse, l.l1, l.val_f1, l.val_mae, l.mean_threshold
                );
            }
            save_checkpoint(&outcome.best, &out)?;
            if let Some(p) = log {
                write_json(&p, &outcome.log)?;
            }
            println!("best epoch {} saved to {}", outcome.best_epoch, out.display());
        }
        Cmd::Localize { model, input, out } => {
            let model = load_checkpoint(&model)?;
            let mut results = Vec::new();
            if input.is_dir() {
                for id in image_ids(&input)? {
                    let img = read_gray_png(&input.join(format!("{id}.png")))?;
                    results.push(localize_image(&img, &model, &id)?);
                }
            } else {
                let id = input
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| Error::InvalidArgument(format!("bad image path {}", input.display())))?;
                results.push(localize_image(&read_gray_png(&input)?, &model, id)?);
            }
            write_results(&out, &results)?;
            let heads: usize = results.iter().map(|r| r.count()).sum();
            println!("{} images, {heads} heads, written to {}", results.len(), out.display());
        }
        Cmd::Eval {
            results,
            annotations,
            json,
        } => {
            let results = read_results(&results)?;
            let anns: Vec<Annotation> = results
                .iter()
                .map(|r| read_annotation(&annotations.join(format!("{}.json", r.image_id))))
                .collect::<Result<_>>()?;
            let refs: Vec<&Annotation> = anns.iter().collect();
            let ev = evaluate_predictions(&refs, results)?;
            println!("{}", ev.report);
            if let Some(p) = json {
                write_json(&p, &ev.report)?;
            }
        }
        Cmd::Render {
            image,
            annotation,
            results,
            out,
        } => {
            let ann = read_annotation(&annotation)?;
            let res = read_results(&results)?
                .into_iter()
                .find(|r| r.image_id == ann.id)
                .ok_or_else(|| Error::InvalidArgument(format!("no result for image `{}`", ann.id)))?;
            let m = render_overlay(&out, &read_gray_png(&image)?, &res, &ann)?;
            println!("tp {} fp {} fn {} written to {}", m.tp, m.fp, m.fn_, out.display());
        }
    }
    Ok(())
}

fn error_line(kind: &str, message: &str) -> String {
    let one_line = message.split_whitespace().collect::<Vec<_>>().join(" ");
    format!(
        "error kind={kind} message={}",
        serde_json::Value::String(one_line)
    )
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", first));
            return ExitCode::from(2);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
