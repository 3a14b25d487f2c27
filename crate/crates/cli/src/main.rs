//! Command-line driver: graph generation and ingestion, equivalence
//! verification with communication audits, kernel microbenchmarks, strategy
//! planning from a cost profile, and end-to-end training.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use graphpar_core::agp::{agp_select, CostProfile, GraphStats};
use graphpar_core::attention::{sga_forward, sga_oracle, SgaWeights};
use graphpar_core::collectives::PrimitiveKind;
use graphpar_core::dense::{max_rel_diff, DenseMatrix};
use graphpar_core::generate::{degree_stats, erdos_renyi, power_law};
use graphpar_core::graph::CsrGraph;
use graphpar_core::io::{load_graph, read_labels, save_graph, GraphFormat, LoadOptions};
use graphpar_core::model::{
    loss_log_csv, train, Execution, GraphTransformer, Precision, TrainConfig,
};
use graphpar_core::partition::plan_partition;
use graphpar_core::sparse::{edge_softmax, sddmm, spmm};
use graphpar_core::strategies::{memory_report, run_distributed, StrategyKind};
use graphpar_core::timing::time_runs;
use graphpar_core::{Error, HeadedMatrixF64, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EXIT_VERIFICATION: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "graphpar", about = "Sparse graph attention with simulated graph parallelism")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic graph file.
    Generate(GenerateArgs),
    /// Check numerical equivalence and communication accounting.
    Verify(VerifyArgs),
    /// Time the dense and sparse kernels on a graph.
    Bench(BenchArgs),
    /// Pick (strategy, worker count) from a cost profile.
    Plan(PlanArgs),
    /// Train a graph transformer end to end.
    Train(TrainArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    ErdosRenyi,
    PowerLaw,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Edgelist,
    Bincsr,
}

impl From<FormatArg> for GraphFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Edgelist => GraphFormat::EdgeList,
            FormatArg::Bincsr => GraphFormat::BinCsr,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Single,
    GpAg,
    GpA2a,
    Auto,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Args)]
struct GraphInput {
    /// Graph file path.
    #[arg(long)]
    graph: PathBuf,
    /// Graph file format.
    #[arg(long, value_enum, default_value = "edgelist")]
    format: FormatArg,
    /// Add reverse edges and deduplicate.
    #[arg(long)]
    symmetrize: bool,
    /// Compact sparse node IDs into [0, N).
    #[arg(long)]
    relabel: bool,
}

impl GraphInput {
    fn load(&self) -> Result<Arc<CsrGraph>> {
        let opts = LoadOptions { symmetrize: self.symmetrize, relabel: self.relabel };
        Ok(Arc::new(load_graph(&self.graph, self.format.into(), opts)?))
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator family.
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Node count.
    #[arg(long)]
    nodes: usize,
    /// Target average out-degree.
    #[arg(long)]
    avg_degree: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "edgelist")]
    format: FormatArg,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    input: GraphInput,
    /// Hidden dimension.
    #[arg(long, default_value_t = 8)]
    dim: usize,
    /// Attention heads.
    #[arg(long, default_value_t = 2)]
    heads: usize,
    /// Worker count (max count when --strategy auto).
    #[arg(short = 'p', long = "workers", default_value_t = 1)]
    workers: usize,
    #[arg(long, value_enum, default_value = "single")]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cost profile JSON (required for --strategy auto).
    #[arg(long)]
    profile: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    input: GraphInput,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    /// Comma-separated kernels: mm, spmm, sddmm. Empty for none.
    #[arg(long, default_value = "mm,spmm,sddmm")]
    kernels: String,
    /// Timed runs per kernel.
    #[arg(long, default_value_t = 10)]
    runs: usize,
    /// Discarded warmup runs per kernel.
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the CSV here in addition to stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    /// Graph file to take N and E from (alternative to --nodes/--edges).
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "edgelist")]
    format: FormatArg,
    #[arg(long)]
    symmetrize: bool,
    #[arg(long)]
    relabel: bool,
    /// Node count (with --edges, replaces --graph).
    #[arg(long)]
    nodes: Option<usize>,
    /// Edge count (with --nodes, replaces --graph).
    #[arg(long)]
    edges: Option<usize>,
    /// Largest worker count to consider.
    #[arg(long, default_value_t = 8)]
    max_gpus: usize,
    /// Cost profile JSON.
    #[arg(long)]
    profile: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    input: GraphInput,
    /// Labels file: `node_id class_id` per line.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    /// Attention blocks in the model.
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(short = 'p', long = "workers", default_value_t = 1)]
    workers: usize,
    #[arg(long, value_enum, default_value = "single")]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 10)]
    steps: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "f64")]
    precision: PrecisionArg,
    /// Cost profile JSON (required for --strategy auto).
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Loss log CSV output path.
    #[arg(long, default_value = "loss.csv")]
    loss_log: PathBuf,
    /// Checkpoint output path.
    #[arg(long, default_value = "model.ckpt")]
    checkpoint: PathBuf,
}

fn main() -> ExitCode {
    // Behave like a normal pipeline citizen: die quietly on a closed pipe
    // instead of panicking mid-print.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Plan(a) => cmd_plan(a),
        Command::Train(a) => cmd_train(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Format(_) | Error::Data(_) => EXIT_IO,
        _ => EXIT_USAGE,
    }
}

fn cmd_generate(a: GenerateArgs) -> Result<u8> {
    if a.nodes == 0 {
        return Err(Error::InvalidArgument("--nodes must be >= 1".into()));
    }
    if a.avg_degree < 0.0 {
        return Err(Error::InvalidArgument("--avg-degree must be >= 0".into()));
    }
    let edges = match a.kind {
        KindArg::ErdosRenyi => erdos_renyi(a.nodes, a.avg_degree, a.seed),
        KindArg::PowerLaw => power_law(a.nodes, a.avg_degree, a.seed),
    };
    let g = CsrGraph::from_edges(a.nodes, &edges)?;
    save_graph(&a.output, a.format.into(), &g)?;
    let (max_deg, avg_deg) = degree_stats(a.nodes, &edges);
    println!(
        "nodes {} edges {} max_degree {} avg_degree {:.3} -> {}",
        g.num_nodes(),
        g.num_edges(),
        max_deg,
        avg_deg,
        a.output.display()
    );
    Ok(0)
}

fn resolve_strategy(
    arg: StrategyArg,
    workers: usize,
    profile: Option<&PathBuf>,
    stats: GraphStats,
) -> Result<(StrategyKind, usize)> {
    match arg {
        StrategyArg::Single => Ok((StrategyKind::SingleWorker, workers)),
        StrategyArg::GpAg => Ok((StrategyKind::GpAg, workers)),
        StrategyArg::GpA2a => Ok((StrategyKind::GpA2a, workers)),
        StrategyArg::Auto => {
            let path = profile.ok_or_else(|| {
                Error::Config("--strategy auto needs --profile".into())
            })?;
            let profile = CostProfile::from_json_str(&std::fs::read_to_string(path)?)?;
            let t1 = profile.alpha_1() * stats.edges as f64;
            let sel = agp_select(stats, workers, t1, &profile)?;
            if sel.ranking_disagreement {
                eprintln!(
                    "warning: score ranking and predicted-time ranking disagree; \
                     following the score ranking"
                );
            }
            println!(
                "auto-selected strategy {} on {} workers",
                sel.plan.strategy, sel.plan.gpus
            );
            Ok((sel.plan.strategy, sel.plan.gpus))
        }
    }
}

struct Checker {
    failures: usize,
}

impl Checker {
    fn new() -> Self {
        Self { failures: 0 }
    }

    fn check(&mut self, label: &str, pass: bool, detail: String) {
        if pass {
            println!("PASS {label}: {detail}");
        } else {
            self.failures += 1;
            println!("FAIL {label}: {detail}");
        }
    }
}

fn cmd_verify(a: VerifyArgs) -> Result<u8> {
    let g = a.input.load()?;
    let n = g.num_nodes();
    let d = a.dim;
    if n == 0 {
        return Err(Error::InvalidArgument("empty graph".into()));
    }
    let stats = GraphStats { nodes: n, edges: g.num_edges() };
    let (kind, p) = resolve_strategy(a.strategy, a.workers, a.profile.as_ref(), stats)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let x = DenseMatrix::<f64>::random_uniform(n, d, -1.0, 1.0, &mut rng);
    let weights = SgaWeights::random_uniform(d, -0.7, 0.7, &mut rng);
    let cot = DenseMatrix::<f64>::random_uniform(n, d, -1.0, 1.0, &mut rng);

    let run = run_distributed(kind, &g, &x, &weights, a.heads, p, Some(&cot))?;
    let mut checker = Checker::new();

    // Forward against the per-node reference.
    let oracle = sga_oracle(&x, &g, &weights, a.heads)?;
    let fwd_diff = max_rel_diff(run.output.data(), oracle.data());
    checker.check(
        "forward vs oracle",
        fwd_diff < 1e-9,
        format!("max rel diff {fwd_diff:.3e} (tolerance 1e-9)"),
    );

    // Gradients against central finite differences of the forward loss.
    let grads = run.grads.as_ref().expect("backward ran");
    let fd_diff = finite_difference_check(&g, &x, &weights, a.heads, &cot, grads)?;
    checker.check(
        "gradients vs finite differences",
        fd_diff < 1e-6,
        format!("max rel err {fd_diff:.3e} (tolerance 1e-6)"),
    );

    // Collective census and volumes.
    if p == 1 {
        checker.check("collective census", run.ledger.is_empty(), "(empty)".into());
    } else {
        let plan = plan_partition(n, p)?;
        match kind {
            StrategyKind::GpAg => {
                for rank in 0..p {
                    let ag = run.ledger.calls(rank, PrimitiveKind::AllGather);
                    let rs = run.ledger.calls(rank, PrimitiveKind::ReduceScatter);
                    let a2a = run.ledger.calls(rank, PrimitiveKind::AllToAll);
                    checker.check(
                        &format!("census rank {rank}"),
                        ag == 2 && rs == 2 && a2a == 0,
                        format!("AG={ag} RS={rs} A2A={a2a} expected AG=2 RS=2 A2A=0"),
                    );
                    let n_r = plan.part_size(rank);
                    let expect = 2 * (n - n_r) * d + 2 * n_r * (p - 1) * d;
                    let got = run.ledger.received_over(
                        rank,
                        &[PrimitiveKind::AllGather, PrimitiveKind::ReduceScatter],
                    );
                    checker.check(
                        &format!("volume rank {rank}"),
                        got == expect,
                        format!("{got} elements, expected {expect}"),
                    );
                }
            }
            StrategyKind::GpA2a => {
                for rank in 0..p {
                    let calls = run.ledger.calls(rank, PrimitiveKind::AllToAll);
                    checker.check(
                        &format!("census rank {rank}"),
                        calls == 8,
                        format!("A2A={calls} expected 8"),
                    );
                    let n_r = plan.part_size(rank);
                    let expect = 4 * (n - n_r) * d / p + 4 * n_r * (p - 1) * d / p;
                    let got = run.ledger.received(rank, PrimitiveKind::AllToAll);
                    checker.check(
                        &format!("volume rank {rank}"),
                        got == expect,
                        format!("{got} elements, expected {expect}"),
                    );
                }
            }
            StrategyKind::SingleWorker => {}
        }
        // Storage model from the memory report.
        for row in &run.memory {
            let n_r = plan.part_size(row.rank);
            let range = plan.range(row.rank);
            let e_r = g.row_ptr()[range.end] - g.row_ptr()[range.start];
            let expect = match kind {
                StrategyKind::GpAg => n_r + e_r,
                StrategyKind::GpA2a => n + g.num_edges(),
                StrategyKind::SingleWorker => n + g.num_edges(),
            };
            checker.check(
                &format!("graph storage rank {}", row.rank),
                row.meter.graph_storage_elems == expect,
                format!("{} elements, expected {expect}", row.meter.graph_storage_elems),
            );
        }
    }
    print!("{}", run.ledger.export());
    print!("{}", memory_report(&run.memory));
    if checker.failures == 0 {
        println!("RESULT: PASS");
        Ok(0)
    } else {
        println!("RESULT: FAIL ({} checks)", checker.failures);
        Ok(EXIT_VERIFICATION)
    }
}

/// Max relative error of the supplied gradients against central finite
/// differences of `sum(cot * forward)`. All weight entries are checked;
/// feature-gradient entries only on desk-scale problems.
fn finite_difference_check(
    g: &Arc<CsrGraph>,
    x: &DenseMatrix<f64>,
    weights: &SgaWeights<f64>,
    heads: usize,
    cot: &DenseMatrix<f64>,
    grads: &graphpar_core::attention::SgaGrads<f64>,
) -> Result<f64> {
    let loss = |x: &DenseMatrix<f64>, w: &SgaWeights<f64>| -> Result<f64> {
        let (out, _) = sga_forward(x, g, w, heads)?;
        Ok(out.data().iter().zip(cot.data()).map(|(a, b)| a * b).sum())
    };
    let eps = 1e-5;
    let mut worst = 0.0f64;
    let mut w = weights.clone();
    for pick in 0..4 {
        for idx in 0..w.w_q.len() {
            let bump = |w: &mut SgaWeights<f64>, delta: f64| {
                let m = match pick {
                    0 => &mut w.w_q,
                    1 => &mut w.w_k,
                    2 => &mut w.w_v,
                    _ => &mut w.w_o,
                };
                m.data_mut()[idx] += delta;
            };
            bump(&mut w, eps);
            let plus = loss(x, &w)?;
            bump(&mut w, -2.0 * eps);
            let minus = loss(x, &w)?;
            bump(&mut w, eps);
            let fd = (plus - minus) / (2.0 * eps);
            let an = match pick {
                0 => &grads.w_q,
                1 => &grads.w_k,
                2 => &grads.w_v,
                _ => &grads.w_o,
            }
            .data()[idx];
            let denom = fd.abs().max(an.abs()).max(1e-2);
            worst = worst.max((fd - an).abs() / denom);
        }
    }
    if x.len() <= 4096 {
        let mut xm = x.clone();
        for idx in 0..x.len() {
            xm.data_mut()[idx] += eps;
            let plus = loss(&xm, weights)?;
            xm.data_mut()[idx] -= 2.0 * eps;
            let minus = loss(&xm, weights)?;
            xm.data_mut()[idx] += eps;
            let fd = (plus - minus) / (2.0 * eps);
            let an = grads.x.data()[idx];
            let denom = fd.abs().max(an.abs()).max(1e-2);
            worst = worst.max((fd - an).abs() / denom);
        }
    }
    Ok(worst)
}

fn cmd_bench(a: BenchArgs) -> Result<u8> {
    let g = a.input.load()?;
    let n = g.num_nodes();
    let d = a.dim;
    if a.heads == 0 || d % a.heads != 0 {
        return Err(Error::Config(format!("--heads {} must divide --dim {d}", a.heads)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let x = DenseMatrix::<f64>::random_uniform(n, d, -1.0, 1.0, &mut rng);
    let w = DenseMatrix::<f64>::random_uniform(d, d, -1.0, 1.0, &mut rng);
    let q = HeadedMatrixF64::from_dense(
        DenseMatrix::random_uniform(n, d, -1.0, 1.0, &mut rng),
        a.heads,
    )?;
    let k = HeadedMatrixF64::from_dense(
        DenseMatrix::random_uniform(n, d, -1.0, 1.0, &mut rng),
        a.heads,
    )?;
    let v = HeadedMatrixF64::from_dense(
        DenseMatrix::random_uniform(n, d, -1.0, 1.0, &mut rng),
        a.heads,
    )?;
    let z = sddmm(&g, &q, &k)?;
    let u = edge_softmax(&z, (d as f64).sqrt())?;

    let mut csv = String::from("kernel,nodes,edges,dim,heads,runs,mean_s,min_s\n");
    for kernel in a.kernels.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let stats = match kernel {
            "mm" => time_runs(a.runs, a.warmup, || {
                std::hint::black_box(graphpar_core::dense::matmul(&x, &w).unwrap());
            })?,
            "spmm" => time_runs(a.runs, a.warmup, || {
                std::hint::black_box(spmm(&u, &v).unwrap());
            })?,
            "sddmm" => time_runs(a.runs, a.warmup, || {
                std::hint::black_box(sddmm(&g, &q, &k).unwrap());
            })?,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown kernel '{other}' (expected mm, spmm, sddmm)"
                )))
            }
        };
        csv.push_str(&format!(
            "{kernel},{n},{},{d},{},{},{:.9e},{:.9e}\n",
            g.num_edges(),
            a.heads,
            stats.runs,
            stats.mean_s,
            stats.min_s
        ));
    }
    print!("{csv}");
    if let Some(path) = &a.output {
        std::fs::write(path, &csv)?;
    }
    Ok(0)
}

fn cmd_plan(a: PlanArgs) -> Result<u8> {
    let stats = match (&a.graph, a.nodes, a.edges) {
        (Some(path), None, None) => {
            let opts = LoadOptions { symmetrize: a.symmetrize, relabel: a.relabel };
            let g = load_graph(path, a.format.into(), opts)?;
            GraphStats { nodes: g.num_nodes(), edges: g.num_edges() }
        }
        (None, Some(nodes), Some(edges)) => GraphStats { nodes, edges },
        _ => {
            return Err(Error::InvalidArgument(
                "give either --graph or both --nodes and --edges".into(),
            ))
        }
    };
    let profile = CostProfile::from_json_str(&std::fs::read_to_string(&a.profile)?)?;
    let t1 = profile.alpha_1() * stats.edges as f64;
    let sel = agp_select(stats, a.max_gpus, t1, &profile)?;
    if sel.ranking_disagreement {
        eprintln!(
            "warning: score ranking and predicted-time ranking disagree; \
             following the score ranking"
        );
    }
    if sel.plan.strategy == StrategyKind::SingleWorker && !sel.candidates.is_empty() {
        eprintln!("warning: no feasible scaling candidate; falling back to a single worker");
    }
    let doc = serde_json::json!({
        "plan": {
            "strategy": sel.plan.strategy.as_str(),
            "gpus": sel.plan.gpus,
            "score": sel.plan.score,
            "predicted_iter_time_s": sel.plan.predicted_iter_time_s,
        },
        "candidates": sel.candidates.iter().map(|c| serde_json::json!({
            "strategy": c.strategy.as_str(),
            "gpus": c.gpus,
            "score": c.score,
            "predicted_iter_time_s": c.predicted_iter_time_s,
            "feasible": c.feasible,
        })).collect::<Vec<_>>(),
        "t_iter_1_s": t1,
        "k": t1 / stats.nodes as f64,
    });
    println!("{}", serde_json::to_string_pretty(&doc).expect("plan serializes"));
    Ok(0)
}

fn cmd_train(a: TrainArgs) -> Result<u8> {
    let g = a.input.load()?;
    let n = g.num_nodes();
    let labels = read_labels(&std::fs::read_to_string(&a.labels)?, n)?;
    let classes = labels
        .iter()
        .flatten()
        .max()
        .map(|&c| c + 1)
        .ok_or_else(|| Error::InvalidArgument("labels file labels no nodes".into()))?;
    let stats = GraphStats { nodes: n, edges: g.num_edges() };
    let (kind, workers) = resolve_strategy(a.strategy, a.workers, a.profile.as_ref(), stats)?;
    let exec = Execution { kind, workers };
    let cfg = TrainConfig {
        learning_rate: a.lr,
        steps: a.steps,
        seed: a.seed,
        precision: match a.precision {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        },
    };
    // Features are synthesized from the seed: deterministic, so every
    // execution strategy sees the same inputs.
    match cfg.precision {
        Precision::F64 => run_training::<f64>(&a, &g, &labels, classes, &cfg, exec),
        Precision::F32 => run_training::<f32>(&a, &g, &labels, classes, &cfg, exec),
    }
}

fn run_training<T: graphpar_core::Scalar>(
    a: &TrainArgs,
    g: &Arc<CsrGraph>,
    labels: &[Option<usize>],
    classes: usize,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<u8> {
    let n = g.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x = DenseMatrix::<T>::random_uniform(n, a.dim, -1.0, 1.0, &mut rng);
    let model = GraphTransformer::<T>::init(a.dim, a.heads, a.layers, classes, cfg.seed)?;
    let run = train(model, g, &x, labels, cfg, exec)?;
    std::fs::write(&a.loss_log, loss_log_csv(&run.losses))?;
    let mut ckpt = std::fs::File::create(&a.checkpoint)?;
    run.model.save_checkpoint(&mut ckpt)?;
    if let Some(last) = run.losses.last() {
        println!("final loss {last}");
    } else {
        println!("no steps run; checkpoint holds the initialization");
    }
    println!("loss log -> {}", a.loss_log.display());
    println!("checkpoint -> {}", a.checkpoint.display());
    Ok(0)
}
