use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use transrx::checkpoint;
use transrx::harness::config::{ReceiverSpec, SimConfig};
use transrx::harness::e2e::{Receiver, Simulation};
use transrx::harness::image::{image_demo, Image};
use transrx::harness::selftest::{convention_tables_csv, run_selftest};
use transrx::harness::sweep::{ber_sweep, write_outputs};
use transrx::trainer::Trainer;

/// Transformer-based neural OFDM receiver: training, BER sweeps and the
/// image transmission demo.
#[derive(Parser)]
#[command(name = "transrx", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the neural receiver and write the checkpoint and log named in
    /// the config.
    Train {
        config: PathBuf,
        /// Continue from this checkpoint instead of a fresh initialization.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Monte-Carlo BER/BLER sweep over the configured receivers and SNRs.
    Sweep { config: PathBuf },
    /// Send a PGM/PPM image through the link and report PSNR.
    DemoImage {
        config: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        snr: f64,
        /// perfect-csi, ls-lmmse or transrx:<checkpoint>
        #[arg(long)]
        receiver: String,
        /// Where to write the received image [default: <image>.rx.<ext>].
        #[arg(long)]
        output: Option<PathBuf>,
        /// Block seed base [default: the sweep seed from the config].
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Demapper oracle, gradient checks and LDPC roundtrips.
    Selftest {
        /// Write the constellation and pilot tables as CSV (to stdout when
        /// no path is given) instead of running the checks.
        #[arg(long, num_args = 0..=1, default_missing_value = "-")]
        dump_constellation: Option<String>,
        /// Config whose pilot pattern is dumped.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print a config file with every default filled in.
    DumpConfig {
        /// Print the built-in defaults.
        #[arg(long, conflicts_with = "config")]
        defaults: bool,
        config: Option<PathBuf>,
    },
}

fn load_config(path: &Path) -> anyhow::Result<SimConfig> {
    SimConfig::load(path).with_context(|| format!("reading config {}", path.display()))
}

fn open_log(path: &Path, append: bool) -> anyhow::Result<BufWriter<File>> {
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn train(config: &Path, resume: Option<&Path>) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let link = cfg.link()?;
    let model_cfg = cfg.model_config()?;
    let mut trainer = match resume {
        Some(path) => Trainer::resume(link, cfg.train_config(), checkpoint::load_expecting(path, &model_cfg)?)?,
        None => Trainer::new(link, cfg.train_config(), model_cfg)?,
    };
    eprintln!(
        "training {} parameters for {} steps",
        trainer.model.num_parameters(),
        cfg.train.steps
    );
    let ckpt_path = PathBuf::from(&cfg.output.checkpoint);
    let mut log = open_log(Path::new(&cfg.output.train_log), resume.is_some())?;
    let stats = trainer.run(&mut log, Some(&ckpt_path))?;
    if let Some(last) = stats.last() {
        eprintln!("final bce {:.6}", last.bce);
    }
    eprintln!("checkpoint {}, log {}", ckpt_path.display(), cfg.output.train_log);
    Ok(())
}

fn sweep(config: &Path) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let sim = Simulation::from_config(&cfg)?;
    let model_cfg = cfg.model_config()?;
    let receivers = cfg
        .receivers()?
        .iter()
        .map(|spec| Receiver::load(spec, &model_cfg))
        .collect::<transrx::Result<Vec<_>>>()?;
    let points = ber_sweep(&sim, &receivers, &cfg.sweep)?;
    let mut out = io::stdout().lock();
    writeln!(
        out,
        "{:<28} {:>8} {:>12} {:>10} {:>12} {:>10}",
        "receiver", "snr_db", "bits", "errors", "ber", "bler"
    )?;
    for p in &points {
        writeln!(
            out,
            "{:<28} {:>8.2} {:>12} {:>10} {:>12.4e} {:>10.4e}",
            p.receiver, p.snr_db, p.bits, p.bit_errors, p.ber, p.bler
        )?;
    }
    write_outputs(
        &points,
        Path::new(&cfg.output.results_csv),
        Path::new(&cfg.output.plot_csv),
    )?;
    writeln!(out, "wrote {} and {}", cfg.output.results_csv, cfg.output.plot_csv)?;
    Ok(())
}

fn default_output(image: &Path) -> PathBuf {
    let ext = image.extension().and_then(|e| e.to_str()).unwrap_or("pnm");
    image.with_extension(format!("rx.{ext}"))
}

fn demo_image(
    config: &Path,
    image_path: &Path,
    snr_db: f64,
    receiver: &str,
    output: Option<PathBuf>,
    seed: Option<u64>,
) -> anyhow::Result<()> {
    if !snr_db.is_finite() {
        bail!("--snr must be finite");
    }
    let cfg = load_config(config)?;
    let sim = Simulation::from_config(&cfg)?;
    let rx = Receiver::load(&ReceiverSpec::parse(receiver)?, &cfg.model_config()?)?;
    let image = Image::load(image_path)?;
    let demo = image_demo(&sim, &image, &rx, snr_db, seed.unwrap_or(cfg.sweep.seed))?;
    let output = output.unwrap_or_else(|| default_output(image_path));
    demo.image.save(&output)?;
    println!(
        "{} at {snr_db} dB: {} blocks, {} bit errors in {} bits, PSNR {}",
        rx.id(),
        demo.blocks,
        demo.bit_errors,
        demo.bits,
        demo.psnr
    );
    println!("wrote {}", output.display());
    Ok(())
}

fn selftest(dump: Option<String>, config: Option<PathBuf>, seed: u64) -> anyhow::Result<()> {
    if let Some(target) = dump {
        let cfg = match config {
            Some(path) => load_config(&path)?,
            None => SimConfig::default(),
        };
        let csv = convention_tables_csv(&cfg.grid_spec()?)?;
        if target == "-" {
            io::stdout().lock().write_all(csv.as_bytes())?;
        } else {
            std::fs::write(&target, csv).with_context(|| format!("writing {target}"))?;
        }
        return Ok(());
    }
    let checks = run_selftest(seed)?;
    let mut failed = 0;
    for c in &checks {
        let verdict = if c.passed() { "PASS" } else { "FAIL" };
        println!("{verdict} {:<44} {:.3e} (limit {:.0e})", c.name, c.value, c.limit);
        failed += !c.passed() as usize;
    }
    if failed > 0 {
        bail!("{failed} of {} checks failed", checks.len());
    }
    println!("all {} checks passed", checks.len());
    Ok(())
}

fn dump_config(defaults: bool, config: Option<PathBuf>) -> anyhow::Result<()> {
    let cfg = match (defaults, config) {
        (_, Some(path)) => load_config(&path)?,
        (true, None) => SimConfig::default(),
        (false, None) => bail!("pass --defaults or a config file"),
    };
    print!("{}", cfg.to_text());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config, resume } => train(&config, resume.as_deref()),
        Command::Sweep { config } => sweep(&config),
        Command::DemoImage {
            config,
            image,
            snr,
            receiver,
            output,
            seed,
        } => demo_image(&config, &image, snr, &receiver, output, seed),
        Command::Selftest {
            dump_constellation,
            config,
            seed,
        } => selftest(dump_constellation, config, seed),
        Command::DumpConfig { defaults, config } => dump_config(defaults, config),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
