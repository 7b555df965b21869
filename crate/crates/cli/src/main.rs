use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lesionpipe_core::eval::evaluate_batches;
use lesionpipe_core::imaging::io::{contour_overlay, read_gray, read_mask, read_rgb, write_gray, write_mask, write_rgb};
use lesionpipe_core::imaging::{crop_border, prepare_image, prepare_mask, BinaryMask};
use lesionpipe_core::pipeline::{
    augmented_samples, compare_scenarios, ingest, prepare_input, run_scenario, segment, stage_plan, synth_dataset,
    Profile, Scenario, ScenarioConfig,
};
use lesionpipe_core::postprocess::threshold_prob;
use lesionpipe_core::preprocess::preprocess;
use lesionpipe_core::transforms::{build_input_stack, lbp_map};
use lesionpipe_core::unet::{lesion_probability, train, weights};
use lesionpipe_core::{Error, GrayImage, Result};

#[derive(Parser)]
#[command(name = "lesionpipe", version, about = "Skin lesion segmentation pipeline")]
struct Cli {
    /// Scenario configuration file (TOML). Defaults to the preset selected
    /// by LESIONPIPE_PROFILE (paper or toy).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Scenario used when no configuration file is given.
    #[arg(long, global = true)]
    scenario: Option<Scenario>,

    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resize, convert to grayscale and add the border.
    Prepare {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth mask to resize alongside the image.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, requires = "mask")]
        mask_out: Option<PathBuf>,
    },
    /// Contrast stretch, hair removal and vignette correction of a gray image.
    /// Writes the result and a `.json` report next to it.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fraction of pixels clipped at each end of the histogram.
        #[arg(long)]
        clip: Option<f64>,
        #[arg(long)]
        vignette_threshold: Option<f64>,
    },
    /// Writes the network input channels of a prepared image as PNGs.
    Transform {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains a network on a dataset directory.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segments one image or every image in a directory.
    Predict {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
        /// Threshold only, skip the lesion object selection.
        #[arg(long)]
        no_postprocess: bool,
        /// Also write `<id>_overlay.png` with the mask outline.
        #[arg(long)]
        overlay: bool,
    },
    /// Batched Jaccard evaluation of predicted masks against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 72)]
        batches: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generates a synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        train: usize,
        #[arg(long, default_value_t = 20)]
        test: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Runs one scenario end to end.
    Run {
        #[command(flatten)]
        io: RunIo,
        /// Print the stage plan and exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Runs several scenarios on the same data and prints the comparison table.
    Compare {
        #[command(flatten)]
        io: RunIo,
        #[arg(long, value_delimiter = ',', default_value = "A,B,C,D")]
        scenarios: Vec<Scenario>,
    },
}

#[derive(Args)]
struct RunIo {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) => 2,
        Error::Numeric { .. } => 4,
        Error::Cache(_) => 1,
        _ => 3,
    }
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Config(format!("--jobs: {e}")))?;
    }
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Prepare {
            input,
            out,
            mask,
            mask_out,
        } => {
            write_gray(&out, &prepare_image(&read_rgb(&input)?, cfg.image_size, cfg.border)?)?;
            if let (Some(m), Some(m_out)) = (mask, mask_out) {
                write_mask(&m_out, &prepare_mask(&read_mask(&m)?, cfg.image_size))?;
            }
            Ok(())
        }
        Command::Preprocess {
            input,
            out,
            clip,
            vignette_threshold,
        } => {
            let mut params = cfg.preprocess;
            if let Some(c) = clip {
                params.contrast.clip_fraction = c;
            }
            if let Some(t) = vignette_threshold {
                params.vignette.darkness_threshold = t;
            }
            let (img, report) = preprocess(&read_gray(&input)?, &params)?;
            write_gray(&out, &img)?;
            let sidecar = out.with_extension("json");
            let json = serde_json::to_string_pretty(&report).expect("report serialises");
            fs::write(&sidecar, json).map_err(|e| io_error(&sidecar, e))
        }
        Command::Transform { input, out } => transform(&cfg, &input, &out),
        Command::Train { data, out } => {
            let data = data_dir(data, &cfg)?;
            let dataset = ingest(&data)?.load()?;
            let samples = augmented_samples(&cfg, &dataset.train)?;
            let (params, history) = train(&samples, cfg.unet_config(), &cfg.training, cfg.border)?;
            fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
            weights::save(&params, &out.join("weights.lpwt"), true)?;
            let hist = out.join("history.csv");
            fs::write(&hist, history.to_csv()).map_err(|e| io_error(&hist, e))?;
            println!("final training jaccard {:.4}", history.final_train_jaccard());
            Ok(())
        }
        Command::Predict {
            weights: wpath,
            input,
            out,
            tau,
            no_postprocess,
            overlay,
        } => {
            let mut cfg = cfg;
            if let Some(t) = tau {
                cfg.evaluation.tau = t;
            }
            predict(&cfg, &wpath, &input, &out, no_postprocess, overlay)
        }
        Command::Evaluate {
            pred,
            truth,
            batch_size,
            batches,
            out,
        } => evaluate(&cfg, &pred, &truth, batch_size, batches, out.as_deref()),
        Command::Synth { out, train, test, size } => {
            let m = synth_dataset(&out, train, test, cfg.seed, size)?;
            println!("{} pairs written to {}", m.entries.len(), out.display());
            Ok(())
        }
        Command::Run { io, dry_run } => {
            if dry_run {
                for s in stage_plan(&cfg) {
                    println!("{s}");
                }
                return Ok(());
            }
            let dataset = ingest(&data_dir(io.data, &cfg)?)?.load()?;
            let out = io.out.or_else(|| cfg.paths.output.clone());
            let outcome = run_scenario(&cfg, &dataset, out.as_deref())?;
            println!(
                "scenario {}: training {:.2}, testing mean {:.2}, std {:.2}",
                cfg.scenario,
                outcome.report.train_jaccard.unwrap_or(f64::NAN) * 100.0,
                outcome.report.mean * 100.0,
                outcome.report.std * 100.0
            );
            Ok(())
        }
        Command::Compare { io, scenarios } => {
            if scenarios.len() < 2 {
                return Err(Error::Config("compare needs at least two scenarios".into()));
            }
            let dataset = ingest(&data_dir(io.data, &cfg)?)?.load()?;
            let cfgs: Vec<ScenarioConfig> = scenarios.iter().map(|&s| cfg.for_scenario(s)).collect();
            let out = io.out.or_else(|| cfg.paths.output.clone());
            let (_, table) = compare_scenarios(&cfgs, &dataset, out.as_deref())?;
            print!("{table}");
            Ok(())
        }
    }
}

fn load_config(cli: &Cli) -> Result<ScenarioConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::preset(Profile::from_env()?, cli.scenario.unwrap_or(Scenario::B)),
    };
    if cli.config.is_some() {
        if let Some(s) = cli.scenario {
            cfg = cfg.for_scenario(s);
        }
    }
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn data_dir(flag: Option<PathBuf>, cfg: &ScenarioConfig) -> Result<PathBuf> {
    flag.or_else(|| cfg.paths.data.clone())
        .ok_or_else(|| Error::Config("no dataset given (use --data or paths.data)".into()))
}

fn transform(cfg: &ScenarioConfig, input: &Path, out: &Path) -> Result<()> {
    let img = read_gray(input)?;
    let stack = build_input_stack(&img, cfg)?;
    let names: Vec<String> = match stack.channels() {
        1 => vec!["gray".into()],
        2 => vec!["gray".into(), "lbp".into()],
        n => std::iter::once("gray".to_string())
            .chain((1..n).map(|l| format!("ll{l}")))
            .collect(),
    };
    if cfg.lbp_enabled() {
        write_gray(&out.join("lbp_raw.png"), &lbp_map(&img)?.to_gray())?;
    }
    for (c, name) in names.iter().enumerate() {
        let data = stack.channel(c).iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
        write_gray(&out.join(format!("{name}.png")), &GrayImage::new(stack.width(), stack.height(), data)?)?;
    }
    Ok(())
}

fn png_ids(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| io_error(dir, e))? {
        let path = entry.map_err(|e| io_error(dir, e))?.path();
        if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
            let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            out.insert(stem, path);
        }
    }
    Ok(out)
}

fn predict(cfg: &ScenarioConfig, wpath: &Path, input: &Path, out: &Path, raw: bool, overlay: bool) -> Result<()> {
    let params = weights::load(wpath)?;
    if params.config().in_channels != cfg.scenario.input_channels() {
        return Err(Error::Config(format!(
            "weights expect {} input channels but scenario {} produces {}; pass --scenario or --config",
            params.config().in_channels,
            cfg.scenario,
            cfg.scenario.input_channels()
        )));
    }
    let images: Vec<(String, PathBuf)> = if input.is_dir() {
        png_ids(input)?
            .into_iter()
            .filter(|(id, _)| !id.ends_with("_mask"))
            .collect()
    } else {
        let id = input.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        vec![(id, input.to_path_buf())]
    };
    if images.is_empty() {
        return Err(Error::Data(format!("no images found in {}", input.display())));
    }
    for (id, path) in images {
        let prepared = prepare_input(cfg, &read_rgb(&path)?)?;
        let stack = build_input_stack(&prepared, cfg)?;
        let mask = if raw {
            let probs = lesionpipe_core::unet::predict(&params, &stack)?;
            threshold_prob(&lesion_probability(&probs, 0, cfg.border)?, cfg.evaluation.tau)?
        } else {
            segment(cfg, &params, &stack)?.1
        };
        write_mask(&out.join(format!("{id}.png")), &mask)?;
        if overlay {
            let interior = crop_border(&prepared, cfg.border)?;
            let rgb = contour_overlay(&interior, &mask)?;
            write_rgb(&out.join(format!("{id}_overlay.png")), &rgb)?;
        }
        log::info!("{id}: {} lesion pixels", mask.area());
    }
    Ok(())
}

fn evaluate(cfg: &ScenarioConfig, pred: &Path, truth: &Path, batch_size: usize, batches: usize, out: Option<&Path>) -> Result<()> {
    let preds = png_ids(pred)?;
    let truths: BTreeMap<String, PathBuf> = png_ids(truth)?
        .into_iter()
        .map(|(id, p)| (id.strip_suffix("_mask").map(str::to_string).unwrap_or(id), p))
        .collect();
    let mut ids = Vec::new();
    let (mut p_masks, mut t_masks): (Vec<BinaryMask>, Vec<BinaryMask>) = (Vec::new(), Vec::new());
    for (id, p) in &preds {
        let Some(t) = truths.get(id) else {
            log::warn!("no ground truth for {id}");
            continue;
        };
        p_masks.push(read_mask(p)?);
        t_masks.push(read_mask(t)?);
        ids.push(id.clone());
    }
    if ids.is_empty() {
        return Err(Error::Data("no prediction has a matching ground-truth mask".into()));
    }
    let report = evaluate_batches(&cfg.scenario.to_string(), &ids, &p_masks, &t_masks, batch_size, batches, cfg.seed)?;
    if let Some(path) = out {
        fs::write(path, report.to_csv()).map_err(|e| io_error(path, e))?;
    }
    println!("jaccard mean {:.4}, std {:.4} over {batches} batches of {batch_size}", report.mean, report.std);
    Ok(())
}
