use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use featmatch::checkpoint::Checkpoint;
use featmatch::data::{load_binary_images, make_blobs, BinaryLayout, BlobSpec, ImageShape};
use featmatch::experiment::{
    evaluate_checkpoint, run_ablation, run_experiment, run_sensitivity, ExperimentConfig, SweepAxis,
};

#[derive(Parser)]
#[command(name = "featmatch", version, about = "Semi-supervised training with prototype-based feature augmentation")]
struct Cli {
    /// Run on a single thread (bit-reproducible).
    #[arg(long, global = true)]
    single_thread: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write metrics.csv, report.json and checkpoint.bin.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the four-row ablation over several seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sensitivity sweep over prototypes per class (pk) or extraction interval in iterations (ip).
    Sweep {
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, num_args = 1.., value_delimiter = ',', required = true)]
        values: Vec<usize>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a labeled dataset.
    ///
    /// `--data` is either a path to a binary image file (`cifar10:<path>` or
    /// `images:<C>x<H>x<W>x<classes>:<path>`) or `blobs:<classes>,<per_class>,<dim>,<spread>,<noise>,<seed>`.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: String,
    },
}

fn load_config(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if out.is_some() {
        cfg.output_dir = out;
    }
    Ok(cfg)
}

fn parse_data(spec: &str) -> Result<featmatch::Dataset<f64>> {
    let (kind, rest) = spec
        .split_once(':')
        .with_context(|| format!("data spec {spec:?} has no '<kind>:' prefix"))?;
    match kind {
        "cifar10" => Ok(load_binary_images(rest.as_ref(), &BinaryLayout::cifar10())?),
        "images" => {
            let (dims, path) = rest.split_once(':').context("images spec needs <C>x<H>x<W>x<classes>:<path>")?;
            let d: Vec<usize> = dims
                .split('x')
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .context("image dimensions must be integers")?;
            let [channels, height, width, classes] = d[..] else {
                bail!("images spec needs four dimensions, got {}", d.len());
            };
            let layout = BinaryLayout {
                shape: ImageShape {
                    channels,
                    height,
                    width,
                },
                classes,
            };
            Ok(load_binary_images(path.as_ref(), &layout)?)
        }
        "blobs" => {
            let p: Vec<&str> = rest.split(',').collect();
            let [c, n, dim, spread, noise, seed] = p[..] else {
                bail!("blobs spec needs classes,per_class,dim,spread,noise,seed");
            };
            let spec = BlobSpec {
                classes: c.parse()?,
                per_class: n.parse()?,
                dim: dim.parse()?,
                spread: spread.parse()?,
                noise: noise.parse()?,
                seed: seed.parse()?,
            };
            Ok(make_blobs(&spec)?)
        }
        other => bail!("unknown data kind {other:?} (cifar10, images or blobs)"),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let cfg = load_config(&config, seed, out)?;
            let outcome = run_experiment(&cfg)?;
            let r = &outcome.report.result;
            println!(
                "test error {:.4} (without AugF {:.4}) after {} epochs / {} iterations",
                r.test_error, r.test_error_without_augf, r.epochs, r.iterations
            );
            if let Some(dir) = &cfg.output_dir {
                println!("wrote {}", dir.display());
            }
        }
        Command::Ablate { config, seeds, out } => {
            let cfg = load_config(&config, None, out)?;
            let table = run_ablation(&cfg, seeds)?;
            print!("{table}");
        }
        Command::Sweep {
            axis,
            values,
            config,
            out,
        } => {
            let cfg = load_config(&config, None, out)?;
            let table = run_sensitivity(&cfg, axis, &values)?;
            print!("{}", String::from_utf8(table.to_csv_bytes()?)?);
        }
        Command::Eval { checkpoint, data } => {
            let ckpt = Checkpoint::<f64>::load(&checkpoint)
                .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
            let test = parse_data(&data)?;
            let res = evaluate_checkpoint(&ckpt, &test)?;
            println!(
                "error {:.4} (without AugF {:.4}) on {} samples",
                res.error,
                res.error_without_augf,
                test.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = if cli.single_thread {
        match rayon::ThreadPoolBuilder::new().num_threads(1).build() {
            Ok(pool) => pool.install(|| run(cli)),
            Err(e) => Err(e.into()),
        }
    } else {
        run(cli)
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
