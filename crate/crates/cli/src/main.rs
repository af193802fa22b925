use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use layout_da::data::{generate_synthetic_corpus, load_corpus, load_gray, load_rgb, save_corpus, save_rgb, Corpus, CorpusManifest, DomainSample};
use layout_da::harness::{render_layout, run_ablation, AblationAxis, AblationSuite, RenderStyle};
use layout_da::raster::Grid;
use layout_da::training::{evaluate, predict_layout, train, TrainConfig, Trainer};
use layout_da::{Error, Result};

#[derive(Parser)]
#[command(name = "layout-da", version, about = "Content-aware layout generation with pixel-level domain adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-domain corpus.
    GenData {
        #[arg(long, default_value_t = 512)]
        n_source: usize,
        #[arg(long, default_value_t = 512)]
        n_target: usize,
        /// Image size as HxW.
        #[arg(long, default_value = "64x64", value_parser = parse_dims)]
        dims: (usize, usize),
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a generator/discriminator pair.
    Train {
        /// TrainConfig JSON; missing fields take the desk preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Samples per domain withheld from training (the tail of each domain).
        #[arg(long, default_value_t = 64)]
        holdout: usize,
    },
    /// Evaluate a checkpoint on the held-out split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 64)]
        holdout: usize,
        /// Evaluate on held-out source samples as well as targets.
        #[arg(long)]
        include_source: bool,
        /// Write the report JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one ablation axis.
    Ablate {
        /// disc_kind_and_weight, patch_size, feature_level or smoothing.
        #[arg(long)]
        axis: AblationAxis,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        trials: usize,
        #[arg(long, default_value_t = 64)]
        holdout: usize,
    },
    /// Draw a checkpoint's predicted layout over an image.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// RGB image at the checkpoint's input size.
        #[arg(long)]
        image: PathBuf,
        /// Gray saliency map; zeros when omitted.
        #[arg(long)]
        saliency: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, default_value_t = 1)]
        thickness: usize,
    },
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got {s}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v}: {e}"));
    Ok((p(h)?, p(w)?))
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    let config = match path {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => TrainConfig::desk(),
    };
    config.validate()?;
    Ok(config)
}

fn held_out<'a>(corpus: &'a Corpus, held: &CorpusManifest, include_source: bool) -> Result<Vec<&'a DomainSample>> {
    let mut ids = held.target_ids.clone();
    if include_source {
        ids.extend(held.source_ids.iter().cloned());
    }
    corpus.select(&ids)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            n_source,
            n_target,
            dims,
            seed,
            out,
        } => {
            let corpus = generate_synthetic_corpus(n_source, n_target, dims, seed)?;
            save_corpus(&corpus, &out)?;
            println!("wrote {} samples to {}", corpus.len(), out.display());
        }
        Command::Train {
            config,
            data,
            out,
            holdout,
        } => {
            let config = load_config(config.as_deref())?;
            let corpus = load_corpus(&data)?;
            let (train_m, held_m) = corpus.manifest.split_holdout(holdout)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("config.json"), serde_json::to_string_pretty(&config)?)?;
            std::fs::write(out.join("holdout.json"), serde_json::to_string_pretty(&held_m)?)?;
            let outcome = train(&config, &corpus, &train_m, Some(&out))?;
            println!("trained {} steps; model in {}", outcome.log.len(), out.display());
        }
        Command::Eval {
            checkpoint,
            data,
            holdout,
            include_source,
            out,
        } => {
            let trainer = Trainer::from_checkpoint(&checkpoint)?;
            let corpus = load_corpus(&data)?;
            let (_, held_m) = corpus.manifest.split_holdout(holdout)?;
            let samples = held_out(&corpus, &held_m, include_source)?;
            let (_, report) = evaluate(&trainer, &samples)?;
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => std::fs::write(p, json)?,
                None => println!("{json}"),
            }
            println!("{report}");
        }
        Command::Ablate {
            axis,
            config,
            data,
            out,
            trials,
            holdout,
        } => {
            let base = load_config(config.as_deref())?;
            let corpus = load_corpus(&data)?;
            let (train_m, held_m) = corpus.manifest.split_holdout(holdout)?;
            let samples = held_out(&corpus, &held_m, false)?;
            let suite = AblationSuite::for_axis(axis, &base, corpus.manifest.image_dims, trials);
            let report = run_ablation(&suite, &corpus, &train_m, &samples, Some(&out))?;
            print!("{}", report.table());
        }
        Command::Render {
            checkpoint,
            image,
            saliency,
            out,
            threshold,
            thickness,
        } => {
            let trainer = Trainer::from_checkpoint(&checkpoint)?;
            let (h, w) = trainer.image_dims;
            let img = load_rgb(&image)?;
            if img.dims() != (h, w) {
                return Err(Error::InvalidInput(format!("image is {:?}, checkpoint expects {h}x{w}", img.dims())));
            }
            let sal = match saliency {
                Some(p) => load_gray(&p)?.resize_bilinear(h, w),
                None => Grid::zeros(h, w),
            };
            let thr = threshold.unwrap_or(trainer.config.score_threshold);
            let id = image.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
            let layout = predict_layout(&trainer.generator, &img, &sal, thr, trainer.gen_store.dtype(), id)?;
            let style = RenderStyle {
                thickness,
                ..RenderStyle::default()
            };
            save_rgb(&render_layout(&img, &layout, &style), &out)?;
            println!("{}", serde_json::to_string(&layout)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::FAILURE
        }
    }
}
