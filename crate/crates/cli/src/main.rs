use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hmpe_cli::config::ConfigArgs;
use hmpe_cli::stages::AxisChoice;
use hmpe_cli::{ablate, gradcheck, pipeline, stages, synth};

/// Heatmap-gated positional embedding pipelines.
///
/// Exit codes: 0 success, 1 usage or configuration error, 2 verification
/// failure.
#[derive(Parser)]
#[command(name = "hmpe", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene (activations, image, target) plus seeded heads.
    Synth(SynthArgs),
    /// Build the class/bbox/mixed heatmap triplet from an activation tensor.
    GenHeatmap(GenHeatmapArgs),
    /// Threshold a heatmap into a mask and gate a sinusoidal encoding with it.
    MaskPe(MaskPeArgs),
    /// Fuse class and bbox heatmap embeddings into encoder Q/K/V.
    Encode(EncodeArgs),
    /// Induce, suppress, and decode queries from the mixed heatmap.
    Decode(DecodeArgs),
    /// Apply the dual-path linear-snake convolution to a feature tensor.
    Lsconv(LsconvArgs),
    /// Render a heatmap as a colormapped PPM with a heatbar.
    Render(RenderArgs),
    /// Run every stage end to end into an artifact directory with a manifest.
    RunPipeline(RunPipelineArgs),
    /// Verify closed-form head derivatives against central differences.
    Gradcheck(GradcheckArgs),
    /// Report decoder cost and output shapes across a layer-count range.
    AblateDecoder(AblateArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Output directory for the scene files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenHeatmapArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Activation tensor (K, H, W) in HMPT format.
    #[arg(long)]
    activations: PathBuf,
    /// Classification head weights (HMPT + .meta sidecar). Seeded when omitted.
    #[arg(long)]
    class_head: Option<PathBuf>,
    /// Box regression head weights (HMPT + .meta sidecar). Seeded when omitted.
    #[arg(long)]
    bbox_head: Option<PathBuf>,
    /// Output directory for h_class/h_bbox/h_mixed.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MaskPeArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Heatmap tensor (H, W); normalized internally.
    #[arg(long)]
    heatmap: PathBuf,
    /// Output path for the gated (H, W, D) encoding.
    #[arg(long)]
    out: PathBuf,
    /// Output path for the binary (H, W) mask.
    #[arg(long)]
    mask_out: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Class heatmap (H, W).
    #[arg(long)]
    class_heat: PathBuf,
    /// Bbox heatmap (H, W).
    #[arg(long)]
    bbox_heat: PathBuf,
    /// Output directory for Q/K/V, encoder output, and attention dumps.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Mixed heatmap (H, W).
    #[arg(long)]
    mixed_heat: PathBuf,
    /// Encoder artifact directory holding K_enc.hmpt and V_enc.hmpt.
    #[arg(long)]
    enc: PathBuf,
    /// Output directory for per-layer outputs, queries, and the cost report.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LsconvArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Feature tensor, rank 2 (H, W) or rank 3 (K, H, W).
    #[arg(long)]
    feature: PathBuf,
    /// Path axis: x, y, or xy for both in sequence.
    #[arg(long, default_value = "x")]
    axis: AxisChoice,
    /// Output tensor path.
    #[arg(long)]
    out: PathBuf,
    /// Output path for the continuity penalty.
    #[arg(long)]
    penalty_out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Heatmap tensor (H, W).
    #[arg(long)]
    heatmap: PathBuf,
    /// Optional base image (P6 PPM, body-sized) to blend under the heatmap.
    #[arg(long)]
    base: Option<PathBuf>,
    /// Output PPM path.
    #[arg(long)]
    out: PathBuf,
    /// Skip normalization; clamp out-of-range values and warn instead.
    #[arg(long)]
    raw: bool,
}

#[derive(Args)]
struct RunPipelineArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Artifact directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Number of random instances per head and order.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Where to dump the worst instance when a tolerance is breached.
    #[arg(long, default_value = "gradcheck-failure")]
    dump_dir: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// First layer count to evaluate.
    #[arg(long, default_value_t = 1)]
    layers_from: usize,
    /// Last layer count to evaluate (inclusive).
    #[arg(long, default_value_t = 8)]
    layers_to: usize,
    /// Optional file for the report (stdout otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are successes; anything else is a usage error
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.cmd {
        Command::Synth(args) => {
            let cfg = args.cfg.resolve()?;
            let scene = synth::synth(&cfg)?;
            let (class, bbox) = synth::seeded_heads(&cfg);
            synth::write_scene(&args.out, &scene, &class, &bbox)?;
        }
        Command::GenHeatmap(args) => {
            let cfg = args.cfg.resolve()?;
            stages::gen_heatmap_cmd(
                &cfg,
                &args.activations,
                args.class_head.as_deref(),
                args.bbox_head.as_deref(),
                &args.out,
            )?;
        }
        Command::MaskPe(args) => {
            let cfg = args.cfg.resolve()?;
            stages::mask_pe_cmd(&cfg, &args.heatmap, &args.out, &args.mask_out)?;
        }
        Command::Encode(args) => {
            let cfg = args.cfg.resolve()?;
            stages::encode_cmd(&cfg, &args.class_heat, &args.bbox_heat, &args.out)?;
        }
        Command::Decode(args) => {
            let cfg = args.cfg.resolve()?;
            stages::decode_cmd(&cfg, &args.mixed_heat, &args.enc, &args.out)?;
        }
        Command::Lsconv(args) => {
            let cfg = args.cfg.resolve()?;
            stages::lsconv_cmd(&cfg, &args.feature, args.axis, &args.out, &args.penalty_out)?;
        }
        Command::Render(args) => {
            let cfg = args.cfg.resolve()?;
            stages::render_cmd(&cfg, &args.heatmap, args.base.as_deref(), &args.out, args.raw)?;
        }
        Command::RunPipeline(args) => {
            let cfg = args.cfg.resolve()?;
            pipeline::run_pipeline(&cfg, &args.out)?;
            println!("pipeline artifacts written to {}", args.out.display());
        }
        Command::Gradcheck(args) => {
            let cfg = args.cfg.resolve()?;
            let report = gradcheck::gradcheck(cfg.seed, args.trials)?;
            print!("{}", report.table());
            if !report.passed() {
                report.dump_worst(&args.dump_dir)?;
                eprintln!(
                    "verification failure: worst instance dumped to {}",
                    args.dump_dir.display()
                );
                return Ok(ExitCode::from(2));
            }
        }
        Command::AblateDecoder(args) => {
            let cfg = args.cfg.resolve()?;
            let report = ablate::ablate(&cfg, args.layers_from, args.layers_to)?;
            match &args.out {
                Some(path) => std::fs::write(path, &report.table)?,
                None => print!("{}", report.table),
            }
            if !report.passed() {
                eprintln!("verification failure: decoder cost model mismatch");
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
