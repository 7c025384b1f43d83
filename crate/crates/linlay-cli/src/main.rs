//! Command-line front end: build the standard layout families, inspect layout
//! properties, plan conversions between distributed layouts, check plans in a
//! software simulator, and propagate anchor layouts through an op graph.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use linlay::constructors::{
    blocked, mma_swizzle, mma_tile, unswizzled, BlockedSpec, MmaKind, MmaOperand, MmaSpec,
    SwizzleSpec,
};
use linlay::graph::OpGraph;
use linlay::layout::parse_layout;
use linlay::planner::{plan_convert_with, BankConfig, ConversionPlan, PlanConfig, SwizzleVariant};
use linlay::simulator::sim_convert;
use linlay::LinearLayout;

#[derive(Parser)]
#[command(name = "linlay", version, about = "Linear tensor layout toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Construct a layout and print it in the canonical text form.
    Build {
        #[command(subcommand)]
        what: BuildCmd,
    },
    /// Plan a conversion between two distributed layouts.
    Convert {
        /// Source layout file.
        a: PathBuf,
        /// Destination layout file.
        b: PathBuf,
        /// Element width in bits.
        #[arg(long)]
        elem_bits: usize,
        /// Bits one shuffle instruction moves per lane.
        #[arg(long, default_value_t = 32)]
        payload_bits: usize,
        /// Number of shared memory banks (falls back to LINLAY_BANKS, then 32).
        #[arg(long)]
        banks: Option<usize>,
        /// Bank word width in bytes (falls back to LINLAY_BANK_BYTES, then 4).
        #[arg(long)]
        bank_bytes: Option<usize>,
        /// Widest vectorized access in bytes.
        #[arg(long, default_value_t = 16)]
        max_vector_bytes: usize,
        /// Keep every thread direction in the swizzle even when wide payloads
        /// already spread them across banks.
        #[arg(long)]
        full_thread: bool,
        /// Write the full plan as JSON to this file.
        #[arg(long)]
        emit: Option<PathBuf>,
    },
    /// Replay a plan in the simulator and verify every register slot.
    Check {
        /// Plan file produced by `convert --emit`.
        plan: PathBuf,
    },
    /// Print the properties of a layout.
    Props {
        /// Layout file.
        layout: PathBuf,
    },
    /// Assign layouts to every value of an op graph from its anchors.
    Propagate {
        /// Graph file.
        graph: PathBuf,
        /// Bind an anchor name to a layout file, as name=path. Repeatable.
        #[arg(long = "layout", value_name = "NAME=FILE")]
        layouts: Vec<String>,
    },
}

#[derive(Subcommand)]
enum BuildCmd {
    /// Register/thread/warp tiled layout. All counts are real element or lane
    /// counts and must be powers of two.
    Blocked {
        /// Tensor shape, e.g. 16,16.
        #[arg(long, value_delimiter = ',')]
        shape: Vec<u64>,
        /// Elements each thread keeps per dimension (default 1 everywhere).
        #[arg(long, value_delimiter = ',')]
        reg: Option<Vec<u64>>,
        /// Threads of a warp per dimension, e.g. 4,8.
        #[arg(long, value_delimiter = ',')]
        threads: Vec<u64>,
        /// Warps of the CTA per dimension (default 1 everywhere).
        #[arg(long, value_delimiter = ',')]
        warps: Option<Vec<u64>>,
        /// Dimension walk order, fastest first (default: last dimension fastest).
        #[arg(long, value_delimiter = ',')]
        order: Option<Vec<usize>>,
        #[arg(long, default_value = "blocked")]
        name: String,
        /// Write to this file instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Matrix-unit fragment layout.
    Mma {
        #[arg(long, value_enum, default_value_t = KindArg::Mma)]
        kind: KindArg,
        #[arg(long, value_enum)]
        operand: OperandArg,
        /// Element width in bits (8, 16, or 32).
        #[arg(long)]
        bits: u32,
        /// Warps (or warp groups) per output dimension, e.g. 2,1.
        #[arg(long, value_delimiter = ',')]
        warps: Vec<u64>,
        /// Warp walk order, fastest first (default: last dimension fastest).
        #[arg(long, value_delimiter = ',')]
        order: Option<Vec<usize>>,
        #[arg(long, default_value = "mma")]
        name: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Identity memory layout over a tensor.
    Unswizzled {
        /// Tensor shape, e.g. 64,8.
        #[arg(long, value_delimiter = ',')]
        shape: Vec<u64>,
        /// Dimension order, fastest first (default: last dimension fastest).
        #[arg(long, value_delimiter = ',')]
        order: Option<Vec<usize>>,
        #[arg(long, default_value = "linear")]
        name: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Phased swizzle of a rows x cols tile.
    Swizzle {
        #[arg(long)]
        rows: u64,
        #[arg(long)]
        cols: u64,
        #[arg(long)]
        vec: u64,
        #[arg(long)]
        per_phase: u64,
        #[arg(long)]
        max_phase: u64,
        #[arg(long, default_value = "swizzled")]
        name: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Mma,
    Wgmma,
}

#[derive(Clone, Copy, ValueEnum)]
enum OperandArg {
    Lhs,
    Rhs,
    Out,
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Build { what } => run_build(what),
        Cmd::Convert {
            a,
            b,
            elem_bits,
            payload_bits,
            banks,
            bank_bytes,
            max_vector_bytes,
            full_thread,
            emit,
        } => run_convert(
            &a,
            &b,
            elem_bits,
            payload_bits,
            banks,
            bank_bytes,
            max_vector_bytes,
            full_thread,
            emit.as_deref(),
        ),
        Cmd::Check { plan } => run_check(&plan),
        Cmd::Props { layout } => run_props(&layout),
        Cmd::Propagate { graph, layouts } => run_propagate(&graph, &layouts),
    }
}

/// log2 of a power-of-two count given on the command line.
fn log2(what: &str, value: u64) -> Result<usize> {
    if value == 0 || !value.is_power_of_two() {
        bail!("{what} must be a power of two, got {value}");
    }
    Ok(value.trailing_zeros() as usize)
}

fn log2_all(what: &str, values: &[u64]) -> Result<Vec<usize>> {
    values.iter().map(|&v| log2(what, v)).collect()
}

fn default_order(rank: usize) -> Vec<usize> {
    (0..rank).rev().collect()
}

fn write_or_print(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(path) => fs::write(path, text)
            .with_context(|| format!("cannot write {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_layout(path: &Path) -> Result<(String, LinearLayout)> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    parse_layout(&text).with_context(|| format!("cannot parse {}", path.display()))
}

fn run_build(what: BuildCmd) -> Result<()> {
    let (layout, name, output) = match what {
        BuildCmd::Blocked { shape, reg, threads, warps, order, name, output } => {
            let rank = shape.len();
            let ones = vec![1u64; rank];
            let spec = BlockedSpec {
                shape: log2_all("--shape", &shape)?,
                size_per_thread: log2_all("--reg", reg.as_deref().unwrap_or(&ones))?,
                threads_per_warp: log2_all("--threads", &threads)?,
                warps_per_cta: log2_all("--warps", warps.as_deref().unwrap_or(&ones))?,
                order: order.unwrap_or_else(|| default_order(rank)),
            };
            (blocked(&spec)?, name, output)
        }
        BuildCmd::Mma { kind, operand, bits, warps, order, name, output } => {
            let spec = MmaSpec {
                kind: match kind {
                    KindArg::Mma => MmaKind::Mma,
                    KindArg::Wgmma => MmaKind::Wgmma,
                },
                operand: match operand {
                    OperandArg::Lhs => MmaOperand::Lhs,
                    OperandArg::Rhs => MmaOperand::Rhs,
                    OperandArg::Out => MmaOperand::Out,
                },
                bitwidth: bits,
                warps: log2_all("--warps", &warps)?,
                order: order.unwrap_or_else(|| default_order(2)),
            };
            (mma_tile(&spec)?, name, output)
        }
        BuildCmd::Unswizzled { shape, order, name, output } => {
            let rank = shape.len();
            let layout = unswizzled(
                &log2_all("--shape", &shape)?,
                &order.unwrap_or_else(|| default_order(rank)),
            )?;
            (layout, name, output)
        }
        BuildCmd::Swizzle { rows, cols, vec, per_phase, max_phase, name, output } => {
            let spec = SwizzleSpec {
                m: log2("--rows", rows)?,
                n: log2("--cols", cols)?,
                vec,
                per_phase,
                max_phase,
            };
            (mma_swizzle(&spec)?, name, output)
        }
    };
    write_or_print(output.as_deref(), &layout.to_text(&name))
}

fn env_usize(name: &str) -> Result<Option<usize>> {
    match std::env::var(name) {
        Ok(s) => {
            let v = s.parse().with_context(|| format!("{name} must be an integer, got {s:?}"))?;
            Ok(Some(v))
        }
        Err(_) => Ok(None),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_convert(
    a_path: &Path,
    b_path: &Path,
    elem_bits: usize,
    payload_bits: usize,
    banks: Option<usize>,
    bank_bytes: Option<usize>,
    max_vector_bytes: usize,
    full_thread: bool,
    emit: Option<&Path>,
) -> Result<()> {
    let (_, a) = read_layout(a_path)?;
    let (_, b) = read_layout(b_path)?;
    let config = PlanConfig {
        payload_bits,
        bank: BankConfig {
            banks: match banks {
                Some(v) => v,
                None => env_usize("LINLAY_BANKS")?.unwrap_or(32),
            },
            bank_bytes: match bank_bytes {
                Some(v) => v,
                None => env_usize("LINLAY_BANK_BYTES")?.unwrap_or(4),
            },
            max_vector_bytes,
        },
        variant: if full_thread {
            SwizzleVariant::FullThread
        } else {
            SwizzleVariant::BankAdjusted
        },
    };
    let plan = plan_convert_with(&a, &b, elem_bits, &config)?;
    print_plan_summary(&plan);
    if let Some(path) = emit {
        fs::write(path, plan.to_json())
            .with_context(|| format!("cannot write {}", path.display()))?;
        println!("plan written to {}", path.display());
    }
    Ok(())
}

fn print_plan_summary(plan: &ConversionPlan) {
    println!("kind: {}", plan.body.kind());
    println!("elem_bits: {}", plan.elem_bits);
    println!("shuffle_rounds: {}", plan.stats.shuffle_rounds);
    println!("read_wavefronts: {}", plan.stats.read_wavefronts);
    println!("write_wavefronts: {}", plan.stats.write_wavefronts);
    println!("smem_bytes: {}", plan.stats.smem_bytes);
}

fn run_check(plan_path: &Path) -> Result<()> {
    let text = fs::read_to_string(plan_path)
        .with_context(|| format!("cannot read {}", plan_path.display()))?;
    let plan = ConversionPlan::from_json(&text)?;
    let report = sim_convert(&plan)?;
    println!("kind: {}", plan.body.kind());
    println!("slots: {}", 1u64 << plan.b.in_bits());
    println!("shuffle_rounds: {} (planned {})", report.shuffle_rounds, plan.stats.shuffle_rounds);
    println!("read_wavefronts: {} (planned {})", report.read_wavefronts, plan.stats.read_wavefronts);
    println!(
        "write_wavefronts: {} (planned {})",
        report.write_wavefronts, plan.stats.write_wavefronts
    );
    if report.correct {
        println!("result: OK");
        return Ok(());
    }
    for m in report.mismatches.iter().take(8) {
        println!(
            "MISMATCH warp {} thread {} reg {}: expected {}, got {}",
            m.warp, m.thread, m.reg, m.expected, m.got
        );
    }
    bail!("plan does not verify: {} mismatching slots", report.mismatches.len());
}

fn run_props(path: &Path) -> Result<()> {
    let (name, l) = read_layout(path)?;
    let dims = |ds: &[linlay::DimLabel]| {
        ds.iter().map(|d| format!("{}:{}", d.name(), d.bits())).collect::<Vec<_>>().join(", ")
    };
    println!("layout: {name}");
    println!("in: {} ({} bits)", dims(l.in_dims()), l.in_bits());
    println!("out: {} ({} bits)", dims(l.out_dims()), l.out_bits());
    println!("surjective: {}", yes_no(l.is_surjective()));
    println!("injective: {}", yes_no(l.is_injective()));
    println!("distributed: {}", yes_no(l.is_distributed()));
    println!("memory: {}", yes_no(l.is_memory()));
    for d in l.in_dims() {
        if let Ok(mask) = l.broadcast_mask(d.name()) {
            if mask != 0 {
                println!("broadcast bits of {}: {mask:#b}", d.name());
            }
        }
    }
    if let Ok(k) = l.contiguous_log2() {
        println!("contiguous_log2: {k}");
    }
    Ok(())
}

fn yes_no(v: bool) -> &'static str {
    if v {
        "yes"
    } else {
        "no"
    }
}

fn run_propagate(graph_path: &Path, bindings: &[String]) -> Result<()> {
    let text = fs::read_to_string(graph_path)
        .with_context(|| format!("cannot read {}", graph_path.display()))?;
    let graph = OpGraph::parse(&text)?;
    let mut bound = HashMap::new();
    for spec in bindings {
        let (name, path) = spec
            .split_once('=')
            .with_context(|| format!("--layout needs NAME=FILE, got {spec:?}"))?;
        let (_, layout) = read_layout(Path::new(path))?;
        bound.insert(name.to_string(), layout);
    }
    let propagation = graph.propagate(&bound)?;
    let report = propagation.report(&graph);
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
