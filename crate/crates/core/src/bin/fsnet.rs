use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fsnet::data::{load_image, load_mask, save_image16, save_mask, write_fixture_dataset, DatasetTag, SyntheticConfig};
use fsnet::grid::Grid;
use fsnet::metrics::Evaluation;
use fsnet::model::{count_flops, count_params, load_checkpoint, Stage};
use fsnet::postprocess::{adaptive_threshold_in, estimate_optimum_ratio, ProbabilityMap, ThresholdSearchConfig};
use fsnet::tensor::{read_tensor_file, write_tensor_file};
use fsnet::train::{
    ablate, ablation_csv, cross_evaluate, evaluate_samples, fit, prepare_data, train, DataSource, EvalOptions,
    InferenceSettings, TrainConfig, CHECKPOINT_FILE,
};
use fsnet::{Error, Result};

#[derive(Parser)]
#[command(name = "fsnet", version, about = "Retinal vessel segmentation: training, inference and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides output_dir from the config.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Probability map for one image.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// 16-bit PNG, or a tensor container when the name ends in .fsnt.
        #[arg(long)]
        out: PathBuf,
        /// Also write the binarized mask here.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        adaptive: bool,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        optimum: Option<f64>,
        /// Field of view for the adaptive ratio.
        #[arg(long)]
        fov: Option<PathBuf>,
    },
    /// Adaptive threshold search on a stored probability map.
    Threshold {
        /// 16-bit image or tensor container.
        #[arg(long)]
        probs: PathBuf,
        #[arg(long, conflicts_with = "from_masks")]
        optimum: Option<f64>,
        /// Folder of annotation masks to estimate the ratio from.
        #[arg(long)]
        from_masks: Option<PathBuf>,
        #[arg(long)]
        fov: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        theta_initial: Option<f64>,
        #[arg(long)]
        delta_theta: Option<f64>,
        /// Stop at the first threshold within tolerance instead of the grid minimum.
        #[arg(long)]
        first_hit: bool,
    },
    /// Metrics of a checkpoint on a dataset split, as CSV.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset root folder.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "custom")]
        tag: DatasetTag,
        /// train, validation, test or all.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        adaptive: bool,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        optimum: Option<f64>,
        /// Split options (fold, seeds, fractions) from a training config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score the cumulative ablation stages.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated subset of BL, EB, BE, SE, AT.
        #[arg(long)]
        stages: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on one dataset and test on another.
    Cross {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        train_tag: DatasetTag,
        #[arg(long)]
        train_root: PathBuf,
        #[arg(long)]
        test_tag: DatasetTag,
        #[arg(long)]
        test_root: PathBuf,
        /// Also run with the roles swapped.
        #[arg(long)]
        both: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter and FLOP counts.
    Stats {
        #[arg(long)]
        config: Option<PathBuf>,
        /// HxW, for example 48x48.
        #[arg(long, default_value = "48x48")]
        input_shape: String,
    },
    /// Write a synthetic dataset of vessel-like images.
    Fixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Put the last N samples in a test/ tree.
        #[arg(long, default_value_t = 0)]
        test_count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        fov: bool,
    },
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            fs::write(p, text).map_err(|e| Error::io(p, e))
        }
        None => {
            print!("{text}");
            std::io::stdout().flush().map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn is_tensor_file(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("fsnt"))
}

fn load_probabilities(p: &Path) -> Result<ProbabilityMap> {
    if is_tensor_file(p) {
        ProbabilityMap::new(Grid::from_tensor(&read_tensor_file::<f32>(p)?)?)
    } else {
        ProbabilityMap::new(load_image(p)?)
    }
}

fn parse_shape(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidArgument(format!("input shape must look like 48x48, got {s:?}"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?))
}

fn parse_stages(s: &str) -> Result<Vec<Stage>> {
    s.split(',')
        .map(|t| match t.trim().to_ascii_uppercase().trim_start_matches("BL+").rsplit('+').next().unwrap_or("") {
            "BL" | "BASELINE" => Ok(Stage::Baseline),
            "EB" => Ok(Stage::EncoderBooster),
            "BE" => Ok(Stage::BottleneckEnhancement),
            "SE" => Ok(Stage::SqueezeExcitation),
            "AT" => Ok(Stage::AdaptiveThreshold),
            other => Err(Error::InvalidArgument(format!("unknown stage {other:?}"))),
        })
        .collect()
}

fn eval_csv(eval: &Evaluation) -> Result<String> {
    let mut buf = Vec::new();
    eval.write_csv(&mut buf, true)?;
    Ok(String::from_utf8(buf).expect("CSV is UTF-8"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            output,
            epochs,
            seed,
        } => {
            let mut cfg = TrainConfig::load(&config)?;
            if let Some(o) = output {
                cfg.output_dir = Some(o);
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let outcome = train(&cfg)?;
            let best = outcome.record.best();
            println!("best_epoch,selection_loss,train_loss");
            println!("{},{},{}", best.epoch, best.selection_loss, best.train_loss);
            for (split, r) in &outcome.record.final_metrics {
                println!("{split}: {}", r.csv_row());
            }
            if let Some(dir) = &cfg.output_dir {
                println!("checkpoint: {}", dir.join(CHECKPOINT_FILE).display());
            }
            Ok(())
        }
        Command::Predict {
            ckpt,
            image,
            out,
            mask,
            adaptive,
            threshold,
            optimum,
            fov,
        } => {
            let (model, meta) = load_checkpoint::<f32>(&ckpt)?;
            let settings = InferenceSettings::from_metadata(&meta)?;
            let img = load_image(&image)?;
            let probs = settings.predict(&model, &img)?;
            if is_tensor_file(&out) {
                write_tensor_file(&probs.grid().to_tensor(), &out)?;
            } else {
                save_image16(probs.grid(), &out)?;
            }
            if let Some(mask_path) = mask {
                let fov = fov.map(load_mask).transpose()?;
                let opts = EvalOptions {
                    adaptive,
                    fixed_threshold: threshold,
                    optimum: optimum.or(settings.optimum),
                    ..Default::default()
                };
                let (m, theta) = fsnet::train::binarize_map(&probs, fov.as_ref(), &opts)?;
                save_mask(&m, &mask_path)?;
                println!("threshold,{theta}");
            }
            Ok(())
        }
        Command::Threshold {
            probs,
            optimum,
            from_masks,
            fov,
            out,
            theta_initial,
            delta_theta,
            first_hit,
        } => {
            let p = load_probabilities(&probs)?;
            let optimum = match (optimum, from_masks) {
                (Some(o), _) => o,
                (None, Some(dir)) => {
                    let mut masks = Vec::new();
                    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
                        .map_err(|e| Error::io(&dir, e))?
                        .filter_map(|e| e.ok().map(|e| e.path()))
                        .filter(|p| p.is_file())
                        .collect();
                    files.sort();
                    for f in files {
                        masks.push(load_mask(&f)?);
                    }
                    estimate_optimum_ratio(masks.iter().map(|m| (m, None)))?
                }
                (None, None) => return Err(Error::InvalidArgument("pass --optimum or --from-masks".into())),
            };
            let mut search = ThresholdSearchConfig::for_optimum(optimum);
            if let Some(t) = theta_initial {
                search.theta_initial = t;
            }
            if let Some(d) = delta_theta {
                search.delta_theta = d;
            }
            search.refine = !first_hit;
            let fov = fov.map(load_mask).transpose()?;
            let outcome = adaptive_threshold_in(&p, &search, fov.as_ref())?;
            println!("optimum,theta,ratio,deviation,iterations,within_tolerance");
            println!(
                "{optimum},{},{},{},{},{}",
                outcome.theta, outcome.ratio, outcome.deviation, outcome.iterations, outcome.within_tolerance
            );
            if let Some(o) = out {
                save_mask(&outcome.mask, &o)?;
            }
            Ok(())
        }
        Command::Eval {
            ckpt,
            dataset,
            tag,
            split,
            adaptive,
            threshold,
            optimum,
            config,
            fold,
            out,
        } => {
            let (model, meta) = load_checkpoint::<f32>(&ckpt)?;
            let settings = InferenceSettings::from_metadata(&meta)?;
            let mut cfg = match config {
                Some(p) => TrainConfig::load(p)?,
                None => TrainConfig::default(),
            };
            cfg.dataset = tag;
            cfg.source = DataSource::Folder(dataset);
            cfg.preprocess = settings.preprocess.clone();
            cfg.image_size = settings.image_size;
            cfg.full_resolution = settings.image_size.is_some();
            if let Some(f) = fold {
                cfg.split.fold = f;
            }
            let data = prepare_data(&cfg)?;
            let samples = match split.as_str() {
                "train" => data.train.clone(),
                "validation" | "val" => data.validation.clone(),
                "test" => data.test.clone(),
                "all" => data.train.iter().chain(&data.validation).chain(&data.test).cloned().collect(),
                other => return Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
            };
            let opts = EvalOptions {
                adaptive,
                fixed_threshold: threshold,
                optimum: optimum.or(settings.optimum),
                ..Default::default()
            };
            let eval = evaluate_samples(&model, &samples, &opts)?;
            emit(out.as_deref(), &eval_csv(&eval)?)
        }
        Command::Ablate { config, stages, out } => {
            let cfg = TrainConfig::load(&config)?;
            let stages = match stages {
                Some(s) => parse_stages(&s)?,
                None => Stage::ALL.to_vec(),
            };
            let rows = ablate(&cfg, &stages)?;
            emit(out.as_deref(), &ablation_csv(&rows))
        }
        Command::Cross {
            config,
            train_tag,
            train_root,
            test_tag,
            test_root,
            both,
            out,
        } => {
            let base = TrainConfig::load(&config)?;
            let mut pairs = vec![(train_tag, train_root.clone(), test_tag, test_root.clone())];
            if both {
                pairs.push((test_tag, test_root, train_tag, train_root));
            }
            let mut text = format!("train,test,optimum,{}\n", fsnet::metrics::CSV_HEADER);
            for (a, a_root, b, b_root) in pairs {
                let mut cfg = base.clone();
                cfg.dataset = a;
                cfg.source = DataSource::Folder(a_root);
                cfg.split.validation_fraction = 0.0;
                let data = prepare_data(&cfg)?;
                let outcome = fit(&cfg, &data)?;
                let report = cross_evaluate(&cfg, &outcome, &data, b, DataSource::Folder(b_root))?;
                text.push_str(&format!("{a},{b},{},{}\n", report.optimum, report.report.csv_row()));
            }
            emit(out.as_deref(), &text)
        }
        Command::Stats { config, input_shape } => {
            let model = match config {
                Some(p) => TrainConfig::load(p)?.model,
                None => Default::default(),
            };
            let (h, w) = parse_shape(&input_shape)?;
            let report = count_flops(&model, h, w)?;
            println!("params,flops,gflops,input");
            println!("{},{},{:.4},{h}x{w}", count_params(&model), report.flops, report.flops as f64 / 1e9);
            Ok(())
        }
        Command::Fixtures {
            out,
            count,
            size,
            test_count,
            seed,
            fov,
        } => {
            let cfg = SyntheticConfig {
                fov,
                ..SyntheticConfig::sized(size, size)
            };
            let samples = write_fixture_dataset(&out, &cfg, count, test_count, seed)?;
            println!("wrote {} samples to {}", samples.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
