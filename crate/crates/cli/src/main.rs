use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use smamba::autodiff::Tape;
use smamba::data::{degrade_dataset, read_pgm, write_pgm16, write_phantom_dataset};
use smamba::gradsuite;
use smamba::ssm::{selective_scan, ScanMode, SsmParams};
use smamba::train::{evaluate, train, TrainConfig};
use smamba::unet::{load_checkpoint, param_report};
use smamba::{parallel, srt, Tensor};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

/// Mamba-UNet super-resolution for single-channel MR slices.
#[derive(Parser)]
#[command(name = "smamba", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic phantom dataset with a manifest.
    Phantom {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 12)]
        count: usize,
        /// Slices held out for evaluation.
        #[arg(long, default_value_t = 4)]
        test: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Produce low-resolution inputs by k-space truncation.
    Degrade {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 2)]
        scale: usize,
        /// Complex Gaussian noise std added in k-space.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model. Any config key can be overridden with `--key value`
    /// (dotted for nested keys, e.g. `--unet.scale 4`).
    Train(ConfigArgs),
    /// Score a checkpoint on the test split against the bicubic baseline.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Super-resolve one image (`.srt` tensor or 8/16-bit PGM, by extension).
    Sr {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run the finite-difference gradient suites.
    Gradcheck {
        /// One of ops, ssm, iss2d, block, network; all when omitted.
        #[arg(long)]
        suite: Option<String>,
        /// Print every case, not only failures and the summary.
        #[arg(long)]
        verbose: bool,
    },
    /// Time the sequential scan against chunked scans.
    BenchScan {
        #[arg(long, default_value_t = 4096)]
        length: usize,
        #[arg(long, default_value_t = 32)]
        channels: usize,
        #[arg(long, default_value_t = 16)]
        state: usize,
        #[arg(long, value_delimiter = ',', default_value = "16,64,256")]
        chunks: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
    },
    /// Parameter-count breakdown for a model config.
    Params(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config file; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, hide = true)]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<TrainConfig> {
        let pairs = parse_overrides(&self.overrides)?;
        Ok(TrainConfig::load(self.config.as_deref(), &pairs)?)
    }
}

#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Splits `--key value` and `--key=value` pairs.
fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let Some(key) = a.strip_prefix("--") else {
            return Err(Usage(format!("expected --key, found {a:?}")).into());
        };
        match key.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => match it.next() {
                Some(v) => out.push((key.to_string(), v.clone())),
                None => return Err(Usage(format!("--{key} needs a value")).into()),
            },
        }
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    parallel::init_from_env();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(err) = e.chain().find_map(|c| c.downcast_ref::<smamba::Error>()) {
        if err.is_numeric() {
            return EXIT_NUMERIC;
        }
        if err.is_data() {
            return EXIT_DATA;
        }
        return EXIT_USAGE;
    }
    if e.chain().any(|c| c.is::<std::io::Error>()) {
        return EXIT_DATA;
    }
    EXIT_USAGE
}

fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Phantom { out, count, test, size, seed } => {
            let m = write_phantom_dataset(&out, count, test, size, seed)?;
            println!("wrote {} slices ({} test) of {size}x{size} to {}", m.slices.len(), test, out.display());
        }
        Command::Degrade { data, scale, noise, seed } => {
            let m = degrade_dataset(&data, scale, noise, seed)?;
            println!("degraded {} slices at scale {scale}", m.slices.len());
        }
        Command::Train(args) => {
            let cfg = args.load()?;
            let t0 = Instant::now();
            let report = train(&cfg)?;
            let last = report.log.last().context("no steps were run")?;
            println!(
                "trained {} steps in {:.2}s: l1 {:.6} -> {:.6}; checkpoint {}",
                report.log.len(),
                t0.elapsed().as_secs_f64(),
                report.log[0].l1,
                last.l1,
                report.final_checkpoint().display()
            );
        }
        Command::Eval { checkpoint, data, out } => {
            let r = evaluate(&checkpoint, &data, &out)?;
            let (mp, ms) = r.model_mean();
            let (bp, bs) = r.bicubic_mean();
            println!("{:<8} {:>10} {:>8}", "", "PSNR dB", "SSIM");
            println!("{:<8} {mp:>10.3} {ms:>8.4}", "model");
            println!("{:<8} {bp:>10.3} {bs:>8.4}", "bicubic");
        }
        Command::Sr { checkpoint, input, output } => sr(&checkpoint, &input, &output)?,
        Command::Gradcheck { suite, verbose } => return gradcheck(suite.as_deref(), verbose),
        Command::BenchScan { length, channels, state, chunks, reps } => bench_scan(length, channels, state, &chunks, reps)?,
        Command::Params(args) => {
            let cfg = args.load()?;
            println!("{}", param_report(&cfg.unet)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn sr(checkpoint: &Path, input: &Path, output: &Path) -> Result<()> {
    let (_, net, store) = load_checkpoint::<f32>(checkpoint)?;
    let lr = if is_srt(input) { srt::read_any::<f32>(input)? } else { read_pgm(input)? };
    let sr = net.infer(&store, &lr)?;
    if is_srt(output) {
        srt::write(output, &sr)?;
    } else {
        write_pgm16(output, &sr)?;
    }
    println!("{}x{} -> {}x{}", lr.shape()[0], lr.shape()[1], sr.shape()[0], sr.shape()[1]);
    Ok(())
}

fn is_srt(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("srt"))
}

fn gradcheck(suite: Option<&str>, verbose: bool) -> Result<ExitCode> {
    let results = match suite {
        Some(s) => gradsuite::run_suite(s)?,
        None => gradsuite::run_all()?,
    };
    let failed = results.iter().filter(|r| !r.passed()).count();
    for r in &results {
        if verbose || !r.passed() {
            let tag = if r.passed() { "ok" } else { "FAIL" };
            println!("{:<8} {:<40} {:>10.3e} <= {:.0e}  {tag}", r.suite, r.name, r.rel, r.tol);
        }
    }
    let worst = results.iter().map(|r| r.rel / r.tol).fold(0.0, f64::max);
    println!("{} checks, {failed} failed, worst error/tolerance {worst:.3}", results.len());
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(EXIT_NUMERIC) })
}

fn bench_scan(length: usize, channels: usize, state: usize, chunks: &[usize], reps: usize) -> Result<()> {
    if length == 0 || channels == 0 || state == 0 || reps == 0 {
        bail!(Usage("length, channels, state and reps must be positive".into()));
    }
    let x = gradsuite::rand_tensor(&[length, channels], 1, -1.0, 1.0).cast::<f32>();
    let params = {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        SsmParams::<f32>::init(channels, state, true, &mut rng)
    };
    let time = |mode: ScanMode| -> Result<(f64, Tensor<f32>)> {
        let mut best = f64::INFINITY;
        let mut out = None;
        for _ in 0..reps {
            let tape = Tape::new();
            let vars = params.bind(&tape, false);
            let t0 = Instant::now();
            let y = selective_scan(tape.constant(x.clone()), &vars, mode)?;
            best = best.min(t0.elapsed().as_secs_f64() * 1e3);
            out = Some((*y.value()).clone());
        }
        Ok((best, out.expect("reps > 0")))
    };
    println!("L={length} C={channels} N={state}, best of {reps}, {} worker threads", parallel::current_threads());
    println!("{:<14} {:>10} {:>9} {:>12}", "mode", "ms", "speedup", "max |diff|");
    let (base, reference) = time(ScanMode::Sequential)?;
    println!("{:<14} {base:>10.3} {:>9.2} {:>12}", "sequential", 1.0, "-");
    for &c in chunks {
        if c == 0 {
            bail!(Usage("chunk sizes must be positive".into()));
        }
        let (ms, y) = time(ScanMode::Chunked(c))?;
        println!("{:<14} {ms:>10.3} {:>9.2} {:>12.3e}", format!("chunked({c})"), base / ms, y.max_abs_diff(&reference));
    }
    Ok(())
}

