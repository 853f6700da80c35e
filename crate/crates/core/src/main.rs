use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use mvres::arch::ArchitectureConfig;
use mvres::codec::{self, EncodeStats, Encoded, MotionSearch};
use mvres::container::Container;
use mvres::error::{Error, Result};
use mvres::frame_io::{read_yuv420_file, upsample_420_to_444, write_yuv420, Frame420};
use mvres::metrics;
use mvres::motion::read_flo;
use mvres::rate_control::{self, ConfigPoint, DEFAULT_GRANULARITY, QUALITY_LEVELS};
use mvres::weights::Precision;

#[derive(Parser)]
#[command(name = "mvres", version, about = "MV-Residual P-frame codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a target frame against a reference frame.
    Encode {
        reference: PathBuf,
        target: PathBuf,
        #[arg(long, value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(0..QUALITY_LEVELS as i64), conflicts_with = "auto_budget")]
        q: Option<u8>,
        /// Pick the best quality whose container fits in this many bytes.
        #[arg(long)]
        auto_budget: Option<u64>,
        /// Externally computed flow (.flo) instead of block matching.
        #[arg(long)]
        flow: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        block: usize,
        #[arg(long, default_value_t = 16)]
        radius: usize,
        #[arg(short, long)]
        output: PathBuf,
        /// Write stats JSON here instead of stdout.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Also write the encoder-side reconstruction as raw YUV 4:2:0.
        #[arg(long)]
        recon: Option<PathBuf>,
        /// Worker threads for the --auto-budget quality sweep.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Decode a container back to raw YUV 4:2:0.
    Decode {
        input: PathBuf,
        reference: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Choose per-frame quality levels under a byte budget.
    Allocate {
        stats: PathBuf,
        #[arg(long)]
        budget: u64,
        #[arg(long, default_value_t = DEFAULT_GRANULARITY)]
        granularity: u64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// PSNR and MS-SSIM between two raw YUV 4:2:0 frames.
    Metrics {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, value_parser = parse_size)]
        size: (usize, usize),
        /// Compute PSNR on the native 4:2:0 planes.
        #[arg(long = "yuv420")]
        yuv420: bool,
    },
    /// Write an architecture file and seeded weights for all quality levels.
    InitWeights {
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Store weights at half precision.
        #[arg(long)]
        f16: bool,
        #[arg(long, default_value = "default", value_parser = ["default", "compact"], conflicts_with = "arch")]
        preset: String,
        /// Architecture file to use instead of a preset.
        #[arg(long)]
        arch: Option<PathBuf>,
    },
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got '{s}'"))?;
    let w: usize = w.parse().map_err(|_| format!("bad width in '{s}'"))?;
    let h: usize = h.parse().map_err(|_| format!("bad height in '{s}'"))?;
    if w == 0 || h == 0 {
        return Err(format!("empty size '{s}'"));
    }
    Ok((w, h))
}

/// Write through a temporary file in the same directory, then rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn emit_json(value: &impl Serialize, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => write_atomic(p, format!("{text}\n").as_bytes()),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct EncodeReport<'a> {
    #[serde(flatten)]
    chosen: &'a EncodeStats,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    sweep: Vec<ConfigPoint>,
}

fn encode_at(weights: &Path, q: u8, r: &Frame420, t: &Frame420, flow: Option<&mvres::FlowField>, search: MotionSearch) -> Result<Encoded> {
    let model = codec::load_model(weights, q)?;
    codec::encode_frame(&model, r, t, flow, search).map_err(|e| e.context(format!("encoding at q {q}")))
}

#[allow(clippy::too_many_arguments)]
fn cmd_encode(
    reference: &Path,
    target: &Path,
    (w, h): (usize, usize),
    weights: &Path,
    q: Option<u8>,
    auto_budget: Option<u64>,
    flow: Option<&Path>,
    search: MotionSearch,
    output: &Path,
    stats: Option<&Path>,
    recon: Option<&Path>,
    jobs: usize,
) -> Result<()> {
    let r = read_yuv420_file(reference, w, h)?;
    let t = read_yuv420_file(target, w, h)?;
    let flow = flow.map(read_flo).transpose()?;
    let (encoded, sweep) = match (q, auto_budget) {
        (Some(q), None) => (encode_at(weights, q, &r, &t, flow.as_ref(), search)?, Vec::new()),
        (None, Some(budget)) => {
            let qs: Vec<u8> = (0..QUALITY_LEVELS).collect();
            let jobs = jobs.clamp(1, qs.len());
            let mut results: Vec<Option<Result<Encoded>>> = (0..qs.len()).map(|_| None).collect();
            std::thread::scope(|s| {
                let handles: Vec<_> = qs
                    .chunks(qs.len().div_ceil(jobs))
                    .map(|chunk| {
                        let (r, t, flow) = (&r, &t, flow.as_ref());
                        s.spawn(move || {
                            chunk.iter().map(|&q| (q, encode_at(weights, q, r, t, flow, search))).collect::<Vec<_>>()
                        })
                    })
                    .collect();
                for handle in handles {
                    for (q, res) in handle.join().expect("encoder thread panicked") {
                        results[q as usize] = Some(res);
                    }
                }
            });
            let mut encodings = Vec::new();
            for res in results {
                encodings.push(res.expect("every quality visited")?);
            }
            let points: Vec<ConfigPoint> = encodings
                .iter()
                .map(|e| ConfigPoint {
                    q: e.stats.q,
                    rate_bytes: e.stats.container_bytes as u64,
                    msssim: e.stats.msssim.clamp(0.0, 1.0),
                })
                .collect();
            let plan = rate_control::allocate(std::slice::from_ref(&points), budget, 1)?;
            let chosen = encodings.swap_remove(plan.q[0] as usize);
            (chosen, points)
        }
        _ => return Err(Error::Usage("exactly one of --q or --auto-budget is required".into())),
    };
    write_atomic(output, &encoded.container.to_bytes())?;
    if let Some(path) = recon {
        write_atomic(path, &write_yuv420(&encoded.reconstruction))?;
    }
    emit_json(&EncodeReport { chosen: &encoded.stats, sweep }, stats)
}

fn cmd_decode(input: &Path, reference: &Path, weights: &Path, output: &Path) -> Result<()> {
    let bytes = std::fs::read(input)?;
    let container = Container::from_bytes(&bytes).map_err(|e| e.context(format!("reading {}", input.display())))?;
    let r = read_yuv420_file(reference, container.width as usize, container.height as usize)?;
    let model = codec::load_model(weights, container.quality)?;
    let decoded = codec::decode_frame(&model, &container, &r)?;
    write_atomic(output, &write_yuv420(&decoded.frame))
}

fn cmd_allocate(stats: &Path, budget: u64, granularity: u64, output: Option<&Path>) -> Result<()> {
    let frames = rate_control::read_stats(stats)?;
    let tables: Vec<Vec<ConfigPoint>> = frames.into_iter().map(|f| f.configs).collect();
    let plan = rate_control::allocate(&tables, budget, granularity)?;
    emit_json(&plan, output)
}

#[derive(Serialize)]
struct MetricsReport {
    #[serde(serialize_with = "inf_as_string")]
    psnr: f64,
    msssim: f64,
    msssim_scales: usize,
    psnr_domain: &'static str,
}

fn inf_as_string<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn cmd_metrics(a: &Path, b: &Path, (w, h): (usize, usize), yuv420: bool) -> Result<()> {
    let fa = read_yuv420_file(a, w, h)?;
    let fb = read_yuv420_file(b, w, h)?;
    let (ua, ub) = (upsample_420_to_444(&fa), upsample_420_to_444(&fb));
    let ms = metrics::ms_ssim_detailed(&ua, &ub)?;
    let (psnr, domain) = if yuv420 {
        (metrics::psnr_420(&fa, &fb)?, "yuv420")
    } else {
        (metrics::psnr(&ua, &ub)?, "yuv444")
    };
    emit_json(&MetricsReport { psnr, msssim: ms.value, msssim_scales: ms.scales, psnr_domain: domain }, None)
}

fn cmd_init_weights(output: &Path, seed: u64, f16: bool, preset: &str, arch: Option<&Path>) -> Result<()> {
    let config = match (arch, preset) {
        (Some(path), _) => ArchitectureConfig::load(path)?,
        (None, "compact") => ArchitectureConfig::compact(),
        (None, _) => ArchitectureConfig::default(),
    };
    let precision = if f16 { Precision::F16 } else { Precision::F32 };
    codec::init_weight_dir(output, &config, seed, precision)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Encode { reference, target, size, weights, q, auto_budget, flow, block, radius, output, stats, recon, jobs } => {
            cmd_encode(
                &reference,
                &target,
                size,
                &weights,
                q,
                auto_budget,
                flow.as_deref(),
                MotionSearch { block, radius },
                &output,
                stats.as_deref(),
                recon.as_deref(),
                jobs,
            )
        }
        Command::Decode { input, reference, weights, output } => cmd_decode(&input, &reference, &weights, &output),
        Command::Allocate { stats, budget, granularity, output } => {
            cmd_allocate(&stats, budget, granularity, output.as_deref())
        }
        Command::Metrics { a, b, size, yuv420 } => cmd_metrics(&a, &b, size, yuv420),
        Command::InitWeights { output, seed, f16, preset, arch } => {
            cmd_init_weights(&output, seed, f16, &preset, arch.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mvres: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
