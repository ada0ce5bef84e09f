//! `mrirecon`: phantom, sampling, simulation, reconstruction, training and
//! evaluation as file-to-file steps.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mrirecon::diagnostics::run_named;
use mrirecon::io::{
    load_checkpoint, load_image, load_kspace, load_maps, load_mask, save_checkpoint, save_image, save_kspace, save_maps,
    save_mask, save_pgm, write_metrics_csv, KspaceVolume, MetricsRow, Precision,
};
use mrirecon::kspace::{
    add_noise, default_acs, make_coil_maps_rect, make_mask, make_phantom, CoilKSpace, ComplexImage, Contrast,
    ForwardOperator, SamplingMask,
};
use mrirecon::metrics::evaluate_slice;
use mrirecon::networks::{Xpdnet, XpdnetConfig};
use mrirecon::pdhg::{solve_cs, zero_filled_rss, PdhgConfig};
use mrirecon::sense::estimate_maps_lowfreq;
use mrirecon::train::{from_checkpoint, smoothed_loss, synthetic_dataset, train, write_loss_csv, ExperimentConfig};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] mrirecon::Error),
    #[error("{failed} gradient check(s) exceeded tolerance")]
    GradcheckFailed { failed: usize },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use mrirecon::Error as E;
        match self {
            CliError::Core(E::InvalidConfig(_)) => 2,
            CliError::Core(E::NonFinite(_) | E::Contract(_)) | CliError::GradcheckFailed { .. } => 4,
            CliError::Core(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "mrirecon", version, about = "Multi-coil MRI reconstruction pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a Shepp-Logan phantom as a single-coil image.
    Phantom {
        #[arg(long)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a line mask with a fully sampled centre band.
    Mask {
        #[arg(long)]
        height: usize,
        /// Defaults to the height.
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        accel: usize,
        /// Centre lines; defaults to 32% of the height divided by the acceleration.
        #[arg(long)]
        acs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate masked multi-coil k-space from an image.
    Sim {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        coils: usize,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the true coil maps used for simulation.
        #[arg(long)]
        maps_out: Option<PathBuf>,
    },
    /// Estimate coil maps from the centre lines.
    Maps {
        #[arg(long)]
        kspace: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Root-sum-of-squares of the zero-filled coil images.
    ReconZf {
        #[command(flatten)]
        io: ReconIo,
    },
    /// Wavelet-sparse reconstruction with the primal-dual solver.
    ReconPdhg {
        #[command(flatten)]
        io: ReconIo,
        #[arg(long)]
        maps: PathBuf,
        #[arg(long, default_value_t = 1e-2)]
        lambda: f64,
        #[arg(long, default_value_t = 200)]
        iters: usize,
    },
    /// Reconstruction with the unrolled network.
    ReconXpdnet {
        #[command(flatten)]
        io: ReconIo,
        #[arg(long)]
        maps: PathBuf,
        /// Trained weights; without one the network is freshly initialized.
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Train the network on synthetic slices.
    Train {
        /// key=value file; unset keys keep their defaults.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_ckpt: PathBuf,
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Compare a reconstruction to a reference image.
    Eval {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out_csv: PathBuf,
        #[arg(long, default_value = "recon")]
        method: String,
        #[arg(long, default_value_t = 0)]
        accel: usize,
        #[arg(long, default_value = "phantom")]
        volume_id: String,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        /// One of conv, mwcnn, unet, xpdnet, loss, or all.
        #[arg(long, default_value = "all")]
        module: String,
    },
}

#[derive(Args)]
struct ReconIo {
    #[arg(long)]
    kspace: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// 16-bit magnitude preview.
    #[arg(long)]
    pgm: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Phantom { size, out } => {
            if size == 0 {
                return Err(mrirecon::Error::InvalidConfig("size must be positive".into()).into());
            }
            save_image(&out, &make_phantom(size), Contrast::Synthetic)?;
        }
        Command::Mask { height, width, accel, acs, out } => {
            let acs = acs.unwrap_or_else(|| default_acs(height, accel));
            let mask = make_mask(height, width.unwrap_or(height), accel, acs, 0)?;
            save_mask(&out, &mask)?;
            println!("{} of {} lines sampled", mask.selected_count(), mask.height);
        }
        Command::Sim { image, coils, mask, noise_sigma, seed, out, maps_out } => {
            let (x, contrast) = load_image(&image)?;
            let mask = load_mask(&mask)?;
            if coils == 0 {
                return Err(mrirecon::Error::InvalidConfig("need at least one coil".into()).into());
            }
            let maps = make_coil_maps_rect(x.height, x.width, coils);
            let mut y = ForwardOperator::new(mask.clone(), maps.clone())?.apply_forward(&x)?;
            add_noise(&mut y, &mask, noise_sigma, seed)?;
            save_kspace(&out, &KspaceVolume::new(contrast, Precision::Complex128, vec![y])?)?;
            if let Some(path) = maps_out {
                save_maps(path, &maps)?;
            }
        }
        Command::Maps { kspace, mask, out } => {
            let y = single_slice(&kspace)?;
            let maps = estimate_maps_lowfreq(&y, &load_mask(&mask)?, true)?;
            save_maps(&out, &maps)?;
        }
        Command::ReconZf { io } => {
            let (y, mask) = load_pair(&io)?;
            let magnitude = zero_filled_rss(&y, &mask)?;
            let img = ComplexImage::from_real(y.height, y.width, &magnitude)?;
            write_recon(&io, &img)?;
        }
        Command::ReconPdhg { io, maps, lambda, iters } => {
            let (y, mask) = load_pair(&io)?;
            let op = ForwardOperator::new(mask, load_maps(&maps)?)?;
            let cfg = PdhgConfig { lambda, n_iter: iters, ..PdhgConfig::default() };
            let result = solve_cs(&y, &op, &cfg)?;
            if let Some(last) = result.trace.last() {
                println!("objective {:.6e} after {} iterations", last.objective, last.iteration);
            }
            write_recon(&io, &result.image)?;
        }
        Command::ReconXpdnet { io, maps, ckpt } => {
            let (y, mask) = load_pair(&io)?;
            let net = match ckpt {
                Some(path) => from_checkpoint(&load_checkpoint(path)?)?.0,
                None => Xpdnet::new(&XpdnetConfig::default(), 0)?,
            };
            let img = net.reconstruct(&y, &mask, &load_maps(&maps)?)?;
            write_recon(&io, &img)?;
        }
        Command::Train { config, out_ckpt, loss_csv } => run_train(&config, &out_ckpt, loss_csv.as_deref())?,
        Command::Eval { recon, target, out_csv, method, accel, volume_id } => {
            let (pred, _) = load_image(&recon)?;
            let (truth, _) = load_image(&target)?;
            if (pred.height, pred.width) != (truth.height, truth.width) {
                return Err(mrirecon::Error::InvalidShape(format!(
                    "reconstruction is {}x{} but target is {}x{}",
                    pred.height, pred.width, truth.height, truth.width
                ))
                .into());
            }
            let m = evaluate_slice(&pred.magnitude(), &truth.magnitude(), truth.height, truth.width)?;
            println!("psnr {:.3} dB  ssim {:.4}  ms-ssim {:.4}", m.psnr_db, m.ssim, m.ms_ssim);
            let row = MetricsRow { volume_id, slice: 0, method, accel, psnr_db: m.psnr_db, ssim: m.ssim, ms_ssim: m.ms_ssim };
            write_metrics_csv(BufWriter::new(File::create(&out_csv)?), &[row])?;
        }
        Command::Gradcheck { module } => {
            let outcomes = run_named(&module)?;
            let mut failed = 0;
            for o in &outcomes {
                let verdict = if o.passed() { "ok" } else { "FAILED" };
                println!("{:<28} {:.3e} (tol {:.0e}) {verdict}", o.name, o.max_rel_error, o.tolerance);
                failed += usize::from(!o.passed());
            }
            if failed > 0 {
                return Err(CliError::GradcheckFailed { failed });
            }
        }
    }
    Ok(())
}

fn single_slice(path: &Path) -> Result<CoilKSpace> {
    let vol = load_kspace(path)?;
    match <[_; 1]>::try_from(vol.slices) {
        Ok([y]) => Ok(y),
        Err(slices) => {
            Err(mrirecon::Error::InvalidInput(format!("expected a single slice, found {}", slices.len())).into())
        }
    }
}

fn load_pair(io: &ReconIo) -> Result<(CoilKSpace, SamplingMask)> {
    Ok((single_slice(&io.kspace)?, load_mask(&io.mask)?))
}

fn write_recon(io: &ReconIo, img: &ComplexImage) -> Result<()> {
    save_image(&io.out, img, Contrast::Synthetic)?;
    if let Some(path) = &io.pgm {
        save_pgm(path, &img.magnitude(), img.height, img.width)?;
    }
    Ok(())
}

fn run_train(config: &Path, out_ckpt: &Path, loss_csv: Option<&Path>) -> Result<()> {
    let cfg = ExperimentConfig::from_kv_text(&fs::read_to_string(config)?)?;
    cfg.validate()?;
    let data = synthetic_dataset(&cfg.train.data, cfg.train.acceleration, cfg.train.acs_lines())?;
    let model = Xpdnet::new(&cfg.model, cfg.train.seed)?;
    let outcome = train(model, &cfg, &data, |step, ckpt| {
        println!("step {step}: checkpoint");
        save_checkpoint(out_ckpt, ckpt)
    })?;
    save_checkpoint(out_ckpt, &outcome.checkpoint(&cfg))?;
    if let Some(path) = loss_csv {
        write_loss_csv(BufWriter::new(File::create(path)?), &outcome.history)?;
    }
    let smooth = smoothed_loss(&outcome.history, 20);
    if let (Some(first), Some(last)) = (smooth.first(), smooth.last()) {
        println!("{} steps, smoothed loss {first:.4} -> {last:.4}", outcome.history.len());
    }
    Ok(())
}
