use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tahq_core::codec::{decode_blob, encode_blob};
use tahq_core::harness::{
    compression_report, gaussian_tensor, inject_outlier_channels, load_tensor, paired_comparison, run_validation,
    save_tensor, ErrorMode,
};
use tahq_core::pipeline::{
    run_training_on, save_checkpoint, write_loss_csv, Compression, Execution, OptimizerConfig, SyntheticTask,
    TaskConfig, TheoryBounds, TrainConfig,
};
use tahq_core::quantizer::{dequantize_activation, quantize_activation, BitAllocation, QuantConfig};
use tahq_core::{ActivationTensor, Error, Result, Shape};

#[derive(Parser)]
#[command(name = "tahq", version, about = "Tile-wise adaptive Hadamard activation quantization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress a .taht tensor into a .tahq blob.
    Quantize(QuantizeArgs),
    /// Expand a .tahq blob back into a 32-bit .taht tensor.
    Dequantize(DequantizeArgs),
    /// Train the two-stage pipeline on the synthetic teacher task.
    Train(TrainArgs),
    /// Measure relative gradient errors of the quantized pipeline.
    Validate(ValidateArgs),
    /// Compression accounting and codec throughput on random tensors.
    Bench(BenchArgs),
    /// Seed-averaged paired runs with one quantizer knob switched off.
    Ablate(AblateArgs),
}

#[derive(Args, Clone)]
struct QuantArgs {
    #[arg(long, default_value_t = 32)]
    tile_size: usize,
    /// Fraction of tokens kept at the high bit width.
    #[arg(long, default_value_t = 0.8)]
    p4: f64,
    #[arg(long, default_value_t = 2.0)]
    tau: f64,
    #[arg(long, default_value_t = 4)]
    b_hi: u8,
    #[arg(long, default_value_t = 3)]
    b_lo: u8,
    /// Give every token the high bit width.
    #[arg(long)]
    no_adaptive: bool,
    /// Same high-bit token count as adaptive allocation, ignoring entropy.
    #[arg(long, conflicts_with = "no_adaptive")]
    blind_alloc: bool,
    #[arg(long)]
    no_hadamard: bool,
}

impl QuantArgs {
    fn config(&self) -> Result<QuantConfig> {
        let allocation = if self.no_adaptive {
            BitAllocation::HighOnly
        } else if self.blind_alloc {
            BitAllocation::Strided
        } else {
            BitAllocation::Entropy
        };
        QuantConfig {
            tile_size: self.tile_size,
            high_frac: self.p4,
            b_hi: self.b_hi,
            b_lo: self.b_lo,
            tau: self.tau,
            allocation,
            hadamard: !self.no_hadamard,
            ..QuantConfig::default()
        }
        .validated()
    }
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    #[command(flatten)]
    quant: QuantArgs,
}

#[derive(Args)]
struct DequantizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskKind {
    Default,
    Outlier,
    Tiny,
}

impl TaskKind {
    fn config(self, seed: u64) -> TaskConfig {
        match self {
            Self::Default => TaskConfig::default_task(seed),
            Self::Outlier => TaskConfig::outlier_task(seed),
            Self::Tiny => TaskConfig::tiny(seed),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0.1)]
    beta1: f64,
    #[arg(long, default_value_t = 6)]
    bw_bits: u8,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = TaskKind::Default)]
    task: TaskKind,
    /// Train without compression (raw 64-bit tensors on the wire).
    #[arg(long)]
    baseline: bool,
    /// Enforce the convergence-theory bounds on beta1 and lr.
    #[arg(long, requires_all = ["delta", "lsmooth"])]
    strict_theory: bool,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    lsmooth: Option<f64>,
    #[arg(long)]
    csv: PathBuf,
    /// Write the final model as a .tahm checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    quant: QuantArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Step,
    Fullbatch,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// Measure every N-th step.
    #[arg(long, default_value_t = 1)]
    every: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0.1)]
    beta1: f64,
    #[arg(long, default_value_t = 6)]
    bw_bits: u8,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = TaskKind::Tiny)]
    task: TaskKind,
    #[arg(long)]
    csv: PathBuf,
    #[command(flatten)]
    quant: QuantArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Tensor shape as BxSxC.
    #[arg(long, value_parser = parse_shape)]
    shape: Shape,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Gain applied to one channel per tile for the outlier variant.
    #[arg(long, default_value_t = 20.0)]
    outlier_gain: f32,
    #[arg(long)]
    csv: PathBuf,
    #[command(flatten)]
    quant: QuantArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Study {
    /// Hadamard on vs off, outlier task.
    Hadamard,
    /// Entropy allocation vs entropy-blind allocation at equal budget, default task.
    Allocation,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, value_enum)]
    study: Study,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    /// Steps at which the full-dataset loss is evaluated.
    #[arg(long, value_delimiter = ',', default_value = "100,300,500")]
    at: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0.1)]
    beta1: f64,
    #[arg(long, default_value_t = 6)]
    bw_bits: u8,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    quant: QuantArgs,
}

fn parse_shape(s: &str) -> std::result::Result<Shape, String> {
    let dims: Vec<usize> = s
        .split(['x', 'X'])
        .map(|d| d.trim().parse::<usize>().map_err(|e| format!("bad dimension {d:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match dims[..] {
        [b, s, c] if b > 0 && s > 0 && c > 0 => Ok(Shape::new(b, s, c)),
        _ => Err(format!("expected BxSxC with positive dimensions, got {s:?}")),
    }
}

fn quantize(args: QuantizeArgs) -> Result<()> {
    let cfg = args.quant.config()?;
    let t: ActivationTensor<f32> = load_tensor(&args.input)?;
    let c = quantize_activation(&t, &cfg)?;
    let blob = encode_blob(&c)?;
    std::fs::write(&args.output, &blob)?;
    println!(
        "{}: {} -> {} bytes ({:.3} bits/elem, payload {:.3}, {:.1}% tiles transformed)",
        t.shape(),
        t.shape().numel() * 4,
        blob.len(),
        blob.len() as f64 * 8.0 / t.shape().numel() as f64,
        c.payload_bits_per_element(),
        100.0 * c.transform_fraction()
    );
    Ok(())
}

fn dequantize(args: DequantizeArgs) -> Result<()> {
    let c = decode_blob(&std::fs::read(&args.input)?)?;
    let t: ActivationTensor<f32> = dequantize_activation(&c)?;
    save_tensor(&args.output, &t)?;
    println!("{}: wrote {}", t.shape(), args.output.display());
    Ok(())
}

fn compression(baseline: bool, quant: &QuantArgs, bw_bits: u8) -> Result<Compression> {
    Ok(if baseline {
        Compression::Passthrough
    } else {
        Compression::Tah {
            forward: quant.config()?,
            backward_bits: bw_bits,
        }
    })
}

fn train(args: TrainArgs) -> Result<()> {
    let task = SyntheticTask::new(args.task.config(args.seed))?;
    let strict = if args.strict_theory {
        Some(TheoryBounds {
            delta: args.delta.unwrap_or_default(),
            lsmooth: args.lsmooth.unwrap_or_default(),
        })
    } else {
        None
    };
    let cfg = TrainConfig {
        seed: args.seed,
        steps: args.steps,
        optimizer: OptimizerConfig {
            lr: args.lr,
            beta1: args.beta1,
            strict,
        },
        execution: Execution::from_env(),
        ..TrainConfig::new(task.config.clone(), compression(args.baseline, &args.quant, args.bw_bits)?)
    };
    let out = run_training_on(&task, &cfg)?;
    write_loss_csv(File::create(&args.csv)?, &out.curve)?;
    if let Some(path) = &args.checkpoint {
        save_checkpoint(path, &out.model)?;
    }
    let final_loss = task.full_loss(&out.model)?;
    println!(
        "{} steps ({:?}): last batch loss {:.6e}, full-dataset loss {:.6e}",
        out.curve.len(),
        cfg.execution,
        out.curve.last().map_or(f64::NAN, |r| r.loss),
        final_loss
    );
    Ok(())
}

fn validate(args: ValidateArgs) -> Result<()> {
    let task = SyntheticTask::new(args.task.config(args.seed))?;
    let cfg = TrainConfig {
        seed: args.seed,
        steps: args.steps,
        optimizer: OptimizerConfig::new(args.lr, args.beta1),
        ..TrainConfig::new(task.config.clone(), compression(false, &args.quant, args.bw_bits)?)
    };
    let mode = match args.mode {
        Mode::Step => ErrorMode::Step,
        Mode::Fullbatch => ErrorMode::FullBatch,
    };
    let report = run_validation(&task, &cfg, mode, args.every)?;
    report.write_csv(File::create(&args.csv)?)?;
    if let Some(s) = report.summary() {
        print!(
            "{} rows ({}): max {:.4e}, median {:.4e}, implied delta {:.4}",
            report.rows.len(),
            mode.as_str(),
            s.max,
            s.median,
            s.implied_delta
        );
        match report.sigma2 {
            Some(v) => println!(", gradient variance {v:.4e}"),
            None => println!(),
        }
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let cfg = args.quant.config()?;
    if args.shape.channels % cfg.tile_size != 0 {
        return Err(Error::InvalidConfig(format!(
            "tile size {} does not divide {} channels",
            cfg.tile_size, args.shape.channels
        )));
    }
    let plain = gaussian_tensor(args.shape, args.seed)?;
    let mut spiky = plain.clone();
    let channels: Vec<usize> = (0..args.shape.channels).step_by(cfg.tile_size).collect();
    inject_outlier_channels(&mut spiky, &channels, args.outlier_gain);

    let mut w = csv::Writer::from_writer(File::create(&args.csv)?);
    w.write_record([
        "variant",
        "shape",
        "tile_size",
        "p4",
        "payload_bits_per_element",
        "bits_per_element",
        "ratio_vs_fp32",
        "transform_fraction",
        "relative_l2_error",
        "header_bytes",
        "bitmap_bytes",
        "meta_bytes",
        "payload_bytes",
        "encode_elems_per_s",
        "decode_elems_per_s",
    ])?;
    for (name, t) in [("gaussian", &plain), ("outlier", &spiky)] {
        let r = compression_report(t, &cfg, args.repeats)?;
        println!(
            "{name:>8}: {:.4} bits/elem (payload {:.4}), {:.2}x vs fp32, {:.1}% transformed, rel. L2 {:.4}, enc {:.3e} el/s, dec {:.3e} el/s",
            r.bits_per_element,
            r.payload_bits_per_element,
            r.ratio_vs_fp32,
            100.0 * r.transform_fraction,
            r.relative_l2_error,
            r.encode_throughput,
            r.decode_throughput
        );
        w.write_record([
            name.to_string(),
            r.shape.to_string(),
            cfg.tile_size.to_string(),
            cfg.high_frac.to_string(),
            format!("{:.6}", r.payload_bits_per_element),
            format!("{:.6}", r.bits_per_element),
            format!("{:.4}", r.ratio_vs_fp32),
            format!("{:.6}", r.transform_fraction),
            format!("{:.6e}", r.relative_l2_error),
            r.layout.header.to_string(),
            r.layout.bitmap.to_string(),
            r.layout.meta.to_string(),
            r.layout.payload.to_string(),
            format!("{:.4e}", r.encode_throughput),
            format!("{:.4e}", r.decode_throughput),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn ablate(args: AblateArgs) -> Result<()> {
    let base = args.quant.config()?;
    let (task, treatment, control, labels) = match args.study {
        Study::Hadamard => (
            TaskConfig::outlier_task(0),
            base.clone().with_hadamard(true),
            base.with_hadamard(false),
            ("hadamard_on", "hadamard_off"),
        ),
        Study::Allocation => (
            TaskConfig::default_task(0),
            base.clone().with_allocation(BitAllocation::Entropy),
            base.with_allocation(BitAllocation::Strided),
            ("entropy", "blind"),
        ),
    };
    let arm = |forward: QuantConfig| TrainConfig {
        optimizer: OptimizerConfig::new(args.lr, args.beta1),
        ..TrainConfig::new(
            task.clone(),
            Compression::Tah {
                forward,
                backward_bits: args.bw_bits,
            },
        )
    };
    let rows = paired_comparison(&arm(treatment), &arm(control), &args.seeds, &args.at)?;
    let mut w = match &args.csv {
        Some(path) => {
            let mut w = csv::Writer::from_writer(File::create(path)?);
            w.write_record([
                "step".to_string(),
                format!("train_{}", labels.0),
                format!("train_{}", labels.1),
                "train_gap".to_string(),
                format!("full_{}", labels.0),
                format!("full_{}", labels.1),
                "full_gap".to_string(),
            ])?;
            Some(w)
        }
        None => None,
    };
    for r in &rows {
        println!(
            "step {:>5}: train loss {} {:.6e}, {} {:.6e}, gap {:+.2}%; full-dataset loss {:.6e} vs {:.6e}, gap {:+.2}%",
            r.step,
            labels.0,
            r.treatment.train,
            labels.1,
            r.control.train,
            100.0 * r.gap() / r.control.train,
            r.treatment.full,
            r.control.full,
            100.0 * r.full_gap() / r.control.full
        );
        if let Some(w) = w.as_mut() {
            w.write_record([
                r.step.to_string(),
                format!("{:.10e}", r.treatment.train),
                format!("{:.10e}", r.control.train),
                format!("{:.10e}", r.gap()),
                format!("{:.10e}", r.treatment.full),
                format!("{:.10e}", r.control.full),
                format!("{:.10e}", r.full_gap()),
            ])?;
        }
    }
    if let Some(mut w) = w {
        w.flush()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Quantize(a) => quantize(a),
        Command::Dequantize(a) => dequantize(a),
        Command::Train(a) => train(a),
        Command::Validate(a) => validate(a),
        Command::Bench(a) => bench(a),
        Command::Ablate(a) => ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
