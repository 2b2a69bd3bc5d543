use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dctm::eval::{endpoint_accuracy, flow_from_affine, pck, KeypointSet};
use dctm::flo::{read_flo, write_flo};
use dctm::image::{warp_image, Image};
use dctm::pipeline::{dctm_match, DctmConfig};
use dctm::synth::{synth_pair, WarpSpec};
use dctm::viz::visualize_flow;
use dctm::Error;

#[derive(Parser)]
#[command(name = "dctm", version, about = "Dense per-pixel affine correspondence between two images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Match SRC against TGT and write the requested outputs.
    Match {
        src: PathBuf,
        tgt: PathBuf,
        /// `key = value` configuration file; unset keys keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_flow: Option<PathBuf>,
        /// TGT resampled onto SRC through the estimated field.
        #[arg(long)]
        out_warp: Option<PathBuf>,
        /// Color-wheel rendering of the flow.
        #[arg(long)]
        out_vis: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fraction of pixels whose endpoint error is below a threshold.
    Eval {
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Grayscale PNG; nonzero pixels are evaluated.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = 5.0)]
        threshold: f64,
        /// Larger side after resampling; 0 evaluates at full resolution.
        #[arg(long, default_value_t = 100)]
        resize_max: usize,
    },
    /// Probability of correct keypoint.
    Pck {
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        keypoints: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
    },
    /// Writes src.png, tgt.png, gt.flo and mask.png for a synthetic warp of BASE.
    Synth {
        /// `identity`, `affine:theta=..,sx=..,sy=..,shear=..,tx=..,ty=..` or `mls:k=..,max=..`
        #[arg(long)]
        spec: String,
        #[arg(long)]
        base: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dctm: {e}");
            ExitCode::from(match e {
                Error::InvalidArgument(_) => 1,
                Error::Format(_) | Error::Io(_) => 2,
                Error::Config(_) => 3,
            })
        }
    }
}

fn run(command: Command) -> dctm::Result<()> {
    match command {
        Command::Match { src, tgt, config, out_flow, out_warp, out_vis, report, seed } => {
            let cfg = match config {
                Some(path) => DctmConfig::load(path)?,
                None => DctmConfig::default(),
            };
            let src = Image::load_png(src)?;
            let tgt = Image::load_png(tgt)?;
            let (field, rep) = dctm_match(&src, &tgt, &cfg, seed)?;
            for w in &rep.warnings {
                eprintln!("warning: {w}");
            }
            let flow = flow_from_affine(&field);
            if let Some(p) = out_flow {
                write_flo(p, &flow)?;
            }
            if let Some(p) = out_warp {
                warp_image(&tgt, &field)?.save_png(p)?;
            }
            if let Some(p) = out_vis {
                visualize_flow(&flow).save_png(p)?;
            }
            if let Some(p) = report {
                std::fs::write(p, rep.to_text(true))?;
            }
        }
        Command::Eval { flow, gt, mask, threshold, resize_max } => {
            let flow = read_flo(flow)?;
            let gt = read_flo(gt)?;
            let mask = mask.map(|p| load_mask(&p)).transpose()?;
            let resize = (resize_max > 0).then_some(resize_max);
            let acc = endpoint_accuracy(&flow, &gt, mask.as_deref(), threshold, resize)?;
            println!("{acc:.6}");
        }
        Command::Pck { flow, keypoints, alpha } => {
            let flow = read_flo(flow)?;
            let kp = KeypointSet::load(keypoints)?;
            kp.check_bounds(flow.width, flow.height)?;
            println!("{:.6}", pck(&kp, &flow, alpha)?);
        }
        Command::Synth { spec, base, seed, out_dir } => {
            let spec = WarpSpec::parse(&spec)?;
            let base = Image::load_png(base)?;
            let pair = synth_pair(&base, &spec, seed)?;
            std::fs::create_dir_all(&out_dir)?;
            pair.src.save_png(out_dir.join("src.png"))?;
            pair.tgt.save_png(out_dir.join("tgt.png"))?;
            write_flo(out_dir.join("gt.flo"), &flow_from_affine(&pair.gt))?;
            let mask: Vec<f64> = pair.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
            Image::new(base.width(), base.height(), 1, mask)?.save_png(out_dir.join("mask.png"))?;
        }
    }
    Ok(())
}

fn load_mask(path: &Path) -> dctm::Result<Vec<bool>> {
    let img = Image::load_png(path)?;
    Ok(img.to_gray().data.iter().map(|&v| v > 0.0).collect())
}
