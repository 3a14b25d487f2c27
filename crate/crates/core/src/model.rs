//! A minimal multi-layer graph transformer with a node-classification head
//! and a plain full-batch gradient-descent trainer, runnable single-worker or
//! under either distribution strategy with identical parameter trajectories.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{sga_backward, sga_forward, SgaCache, SgaWeights};
use crate::collectives::{run_workers, CommLedger, WorkerGroup};
use crate::dense::{matmul, DenseMatrix};
use crate::error::{Error, Result};
use crate::graph::CsrGraph;
use crate::partition::{plan_partition, shard_gp_a2a, shard_gp_ag};
use crate::scalar::Scalar;
use crate::strategies::{dist_backward, dist_forward, DistSgaCache, StrategyKind};

/// Stack of attention blocks plus a linear classification head.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphTransformer<T> {
    layers: Vec<SgaWeights<T>>,
    classifier: DenseMatrix<T>,
    heads: usize,
}

impl<T: Scalar> GraphTransformer<T> {
    pub fn new(layers: Vec<SgaWeights<T>>, classifier: DenseMatrix<T>, heads: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one layer".into()));
        }
        let d = layers[0].dim();
        if layers.iter().any(|l| l.dim() != d) {
            return Err(Error::Shape("all layers must share the hidden dim".into()));
        }
        if classifier.rows() != d {
            return Err(Error::Shape(format!(
                "classifier rows {} vs hidden dim {d}",
                classifier.rows()
            )));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("head count {heads} must divide dim {d}")));
        }
        Ok(Self { layers, classifier, heads })
    }

    /// Seeded initialization, uniform in [-1/sqrt(d), 1/sqrt(d)]. The draws
    /// happen in a fixed order, so one seed gives one model regardless of the
    /// execution strategy used afterwards.
    pub fn init(
        d: usize,
        heads: usize,
        num_layers: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidArgument("need at least one class".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (d as f64).sqrt();
        let layers = (0..num_layers)
            .map(|_| SgaWeights::random_uniform(d, -bound, bound, &mut rng))
            .collect();
        let classifier = DenseMatrix::random_uniform(d, num_classes, -bound, bound, &mut rng);
        Self::new(layers, classifier, heads)
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].dim()
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.cols()
    }

    pub fn layers(&self) -> &[SgaWeights<T>] {
        &self.layers
    }

    pub fn classifier(&self) -> &DenseMatrix<T> {
        &self.classifier
    }

    /// All parameters flattened in a fixed order, for trajectory comparisons.
    pub fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            for m in [&l.w_q, &l.w_k, &l.w_v, &l.w_o] {
                out.extend_from_slice(m.data());
            }
        }
        out.extend_from_slice(self.classifier.data());
        out
    }

    /// Versioned binary checkpoint: magic, version, shape header, then every
    /// weight matrix (layer order q/k/v/o, then the classifier) with its own
    /// row/col header and little-endian f64 entries.
    pub fn save_checkpoint(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(b"GPCK")?;
        w.write_all(&1u32.to_le_bytes())?;
        for v in [
            self.hidden_dim() as u64,
            self.heads as u64,
            self.layers.len() as u64,
            self.num_classes() as u64,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut write_matrix = |m: &DenseMatrix<T>| -> Result<()> {
            w.write_all(&(m.rows() as u64).to_le_bytes())?;
            w.write_all(&(m.cols() as u64).to_le_bytes())?;
            for &v in m.data() {
                w.write_all(&v.to_f64_c().to_le_bytes())?;
            }
            Ok(())
        };
        for l in &self.layers {
            for m in [&l.w_q, &l.w_k, &l.w_v, &l.w_o] {
                write_matrix(m)?;
            }
        }
        write_matrix(&self.classifier)
    }

    pub fn load_checkpoint(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"GPCK" {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != 1 {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let read_u64 = |r: &mut dyn Read| -> Result<u64> {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            Ok(u64::from_le_bytes(buf))
        };
        let d = read_u64(r)? as usize;
        let heads = read_u64(r)? as usize;
        let num_layers = read_u64(r)? as usize;
        let num_classes = read_u64(r)? as usize;
        let read_matrix = |r: &mut dyn Read, rows: usize, cols: usize| -> Result<DenseMatrix<T>> {
            let mut hdr = [0u8; 8];
            r.read_exact(&mut hdr)?;
            let got_rows = u64::from_le_bytes(hdr) as usize;
            r.read_exact(&mut hdr)?;
            let got_cols = u64::from_le_bytes(hdr) as usize;
            if got_rows != rows || got_cols != cols {
                return Err(Error::Format(format!(
                    "checkpoint matrix is {got_rows}x{got_cols}, expected {rows}x{cols}"
                )));
            }
            let mut data = Vec::with_capacity(rows * cols);
            let mut buf = [0u8; 8];
            for _ in 0..rows * cols {
                r.read_exact(&mut buf)?;
                data.push(T::from_f64_c(f64::from_le_bytes(buf)));
            }
            DenseMatrix::from_rows(rows, cols, data)
        };
        let mut layers = Vec::with_capacity(num_layers);
        for _ in 0..num_layers {
            let w_q = read_matrix(r, d, d)?;
            let w_k = read_matrix(r, d, d)?;
            let w_v = read_matrix(r, d, d)?;
            let w_o = read_matrix(r, d, d)?;
            layers.push(SgaWeights::new(w_q, w_k, w_v, w_o)?);
        }
        let classifier = read_matrix(r, d, num_classes)?;
        Self::new(layers, classifier, heads)
    }
}

/// Numeric precision mode for training runs; the generic trainer treats it
/// as configuration surface, the CLI maps it to a concrete scalar type.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

/// Gradient-descent settings.
#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be finite and >= 0",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Where a training step executes.
#[derive(Clone, Copy, Debug)]
pub struct Execution {
    pub kind: StrategyKind,
    pub workers: usize,
}

impl Execution {
    pub fn single() -> Self {
        Self { kind: StrategyKind::SingleWorker, workers: 1 }
    }
}

/// Weight-space gradients of the whole model.
#[derive(Clone, Debug)]
pub struct ModelGrads<T> {
    pub layers: Vec<SgaWeights<T>>,
    pub classifier: DenseMatrix<T>,
}

fn relu<T: Scalar>(m: &DenseMatrix<T>) -> DenseMatrix<T> {
    DenseMatrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j).max(T::zero()))
}

fn relu_backward<T: Scalar>(upstream: &DenseMatrix<T>, source: &DenseMatrix<T>) -> DenseMatrix<T> {
    DenseMatrix::from_fn(upstream.rows(), upstream.cols(), |i, j| {
        if source.get(i, j) > T::zero() {
            upstream.get(i, j)
        } else {
            T::zero()
        }
    })
}

/// Unnormalized cross-entropy parts over the rows of `logits`: the sum of
/// negative log-likelihoods on labeled rows, and per-row `softmax - onehot`
/// (zero on unlabeled rows). The caller divides both by the global labeled
/// count.
fn cross_entropy_parts<T: Scalar>(
    logits: &DenseMatrix<T>,
    labels: &[Option<usize>],
) -> Result<(f64, DenseMatrix<T>)> {
    let classes = logits.cols();
    let mut dlogits = DenseMatrix::zeros(logits.rows(), classes);
    let mut loss_sum = 0.0f64;
    for (i, label) in labels.iter().enumerate() {
        let Some(y) = label else { continue };
        if *y >= classes {
            return Err(Error::InvalidArgument(format!(
                "label {y} out of range for {classes} classes"
            )));
        }
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v.to_f64_c()));
        let mut denom = 0.0f64;
        for &v in row {
            denom += (v.to_f64_c() - max).exp();
        }
        let log_denom = denom.ln() + max;
        loss_sum += log_denom - row[*y].to_f64_c();
        for c in 0..classes {
            let p = (row[c].to_f64_c() - max).exp() / denom;
            let grad = p - if c == *y { 1.0 } else { 0.0 };
            dlogits.set(i, c, T::from_f64_c(grad));
        }
    }
    Ok((loss_sum, dlogits))
}

fn labeled_count(labels: &[Option<usize>]) -> usize {
    labels.iter().flatten().count()
}

/// Forward pass to logits (`N x C`).
pub fn forward<T: Scalar>(
    model: &GraphTransformer<T>,
    g: &Arc<CsrGraph>,
    x: &DenseMatrix<T>,
) -> Result<DenseMatrix<T>> {
    let (logits, _) = forward_with_cache(model, g, x)?;
    Ok(logits)
}

struct ForwardCache<T> {
    layer_caches: Vec<SgaCache<T>>,
    // Pre-activation outputs of every layer except the last.
    relu_sources: Vec<DenseMatrix<T>>,
    classifier_input: DenseMatrix<T>,
}

fn forward_with_cache<T: Scalar>(
    model: &GraphTransformer<T>,
    g: &Arc<CsrGraph>,
    x: &DenseMatrix<T>,
) -> Result<(DenseMatrix<T>, ForwardCache<T>)> {
    let last = model.layers.len() - 1;
    let mut a = x.clone();
    let mut layer_caches = Vec::with_capacity(model.layers.len());
    let mut relu_sources = Vec::with_capacity(last);
    for (l, weights) in model.layers.iter().enumerate() {
        let (s, cache) = sga_forward(&a, g, weights, model.heads)?;
        layer_caches.push(cache);
        if l < last {
            a = relu(&s);
            relu_sources.push(s);
        } else {
            a = s;
        }
    }
    let logits = matmul(&a, &model.classifier)?;
    Ok((logits, ForwardCache { layer_caches, relu_sources, classifier_input: a }))
}

fn single_worker_step<T: Scalar>(
    model: &GraphTransformer<T>,
    g: &Arc<CsrGraph>,
    x: &DenseMatrix<T>,
    labels: &[Option<usize>],
) -> Result<(f64, ModelGrads<T>)> {
    let m = labeled_count(labels);
    if m == 0 {
        return Err(Error::InvalidArgument("no labeled nodes".into()));
    }
    let (logits, cache) = forward_with_cache(model, g, x)?;
    let (loss_sum, dlogits) = cross_entropy_parts(&logits, labels)?;
    let loss = loss_sum / m as f64;
    let inv_m = T::from_f64_c(1.0 / m as f64);
    let dlogits = dlogits.scale(inv_m);

    let classifier_grad = matmul(&cache.classifier_input.transpose(), &dlogits)?;
    let mut da = matmul(&dlogits, &model.classifier.transpose())?;
    let last = model.layers.len() - 1;
    let mut layer_grads = vec![None; model.layers.len()];
    for l in (0..model.layers.len()).rev() {
        let ds = if l < last {
            relu_backward(&da, &cache.relu_sources[l])
        } else {
            da
        };
        let grads = sga_backward(&ds, &cache.layer_caches[l])?;
        da = grads.x.clone();
        layer_grads[l] = Some(SgaWeights {
            w_q: grads.w_q,
            w_k: grads.w_k,
            w_v: grads.w_v,
            w_o: grads.w_o,
        });
    }
    Ok((
        loss,
        ModelGrads {
            layers: layer_grads.into_iter().map(Option::unwrap).collect(),
            classifier: classifier_grad,
        },
    ))
}

fn distributed_step<T: Scalar>(
    model: &GraphTransformer<T>,
    group: &WorkerGroup<T>,
    rank: usize,
    g: &Arc<CsrGraph>,
    x: &DenseMatrix<T>,
    labels: &[Option<usize>],
    kind: StrategyKind,
) -> Result<(f64, ModelGrads<T>)> {
    let m = labeled_count(labels);
    if m == 0 {
        return Err(Error::InvalidArgument("no labeled nodes".into()));
    }
    let plan = plan_partition(g.num_nodes(), group.size())?;
    let range = plan.range(rank);
    let ag_base = match kind {
        StrategyKind::GpAg => Some(shard_gp_ag(g, x, &plan, rank)?),
        _ => None,
    };
    let a2a_base = match kind {
        StrategyKind::GpA2a => Some(shard_gp_a2a(g, x, &plan, rank)?),
        _ => None,
    };

    let last = model.layers.len() - 1;
    let mut a_local = x.row_slice(range.start, range.end);
    let mut caches: Vec<DistSgaCache<T>> = Vec::with_capacity(model.layers.len());
    let mut relu_sources = Vec::with_capacity(last);
    for (l, weights) in model.layers.iter().enumerate() {
        let ag = ag_base.as_ref().map(|s| s.with_features(a_local.clone()));
        let a2a = a2a_base.as_ref().map(|s| s.with_features(a_local.clone()));
        let (s_local, cache) =
            dist_forward(kind, group, rank, ag.as_ref(), a2a.as_ref(), weights, model.heads)?;
        caches.push(cache);
        if l < last {
            a_local = relu(&s_local);
            relu_sources.push(s_local);
        } else {
            a_local = s_local;
        }
    }
    let logits_local = matmul(&a_local, &model.classifier)?;
    let local_labels = &labels[range.start..range.end];
    let (loss_sum_local, dlogits_local) = cross_entropy_parts(&logits_local, local_labels)?;
    let loss_total = group
        .all_reduce(rank, DenseMatrix::from_rows(1, 1, vec![T::from_f64_c(loss_sum_local)])?)?
        .get(0, 0)
        .to_f64_c();
    let loss = loss_total / m as f64;

    let inv_m = T::from_f64_c(1.0 / m as f64);
    let dlogits_local = dlogits_local.scale(inv_m);
    let classifier_grad = group.all_reduce(
        rank,
        matmul(&a_local.transpose(), &dlogits_local)?,
    )?;
    let mut da = matmul(&dlogits_local, &model.classifier.transpose())?;
    let mut layer_grads = vec![None; model.layers.len()];
    for l in (0..model.layers.len()).rev() {
        let ds = if l < last {
            relu_backward(&da, &relu_sources[l])
        } else {
            da
        };
        let cache = caches.pop().expect("one cache per layer");
        let (grads, _) = dist_backward(group, rank, &ds, cache)?;
        da = grads.x.clone();
        layer_grads[l] = Some(SgaWeights {
            w_q: grads.w_q,
            w_k: grads.w_k,
            w_v: grads.w_v,
            w_o: grads.w_o,
        });
    }
    Ok((
        loss,
        ModelGrads {
            layers: layer_grads.into_iter().map(Option::unwrap).collect(),
            classifier: classifier_grad,
        },
    ))
}

fn apply_update<T: Scalar>(
    model: &GraphTransformer<T>,
    grads: &ModelGrads<T>,
    lr: f64,
) -> Result<GraphTransformer<T>> {
    let step = T::from_f64_c(-lr);
    let layers = model
        .layers
        .iter()
        .zip(&grads.layers)
        .map(|(w, gw)| {
            Ok(SgaWeights {
                w_q: w.w_q.add(&gw.w_q.scale(step))?,
                w_k: w.w_k.add(&gw.w_k.scale(step))?,
                w_v: w.w_v.add(&gw.w_v.scale(step))?,
                w_o: w.w_o.add(&gw.w_o.scale(step))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let classifier = model.classifier.add(&grads.classifier.scale(step))?;
    GraphTransformer::new(layers, classifier, model.heads)
}

/// One full-graph gradient-descent step: cross-entropy on labeled nodes,
/// exact gradients, one update. Distributed executions produce the same loss
/// and parameters as the single-worker run up to summation order.
pub fn train_step<T: Scalar>(
    model: &GraphTransformer<T>,
    g: &Arc<CsrGraph>,
    x: &DenseMatrix<T>,
    labels: &[Option<usize>],
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<(f64, GraphTransformer<T>)> {
    let (loss, new_model, _) = train_step_with_ledger(model, g, x, labels, cfg, exec)?;
    Ok((loss, new_model))
}

fn train_step_with_ledger<T: Scalar>(
    model: &GraphTransformer<T>,
    g: &Arc<CsrGraph>,
    x: &DenseMatrix<T>,
    labels: &[Option<usize>],
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<(f64, GraphTransformer<T>, CommLedger)> {
    cfg.validate()?;
    if labels.len() != g.num_nodes() {
        return Err(Error::Shape(format!(
            "{} labels for {} nodes",
            labels.len(),
            g.num_nodes()
        )));
    }
    if exec.kind == StrategyKind::SingleWorker && exec.workers != 1 {
        return Err(Error::Config("single-worker execution requires workers=1".into()));
    }
    if exec.workers == 1 {
        let (loss, grads) = single_worker_step(model, g, x, labels)?;
        let new_model = apply_update(model, &grads, cfg.learning_rate)?;
        return Ok((loss, new_model, CommLedger::default()));
    }
    let (mut outs, ledger) = run_workers(exec.workers, |rank, group| {
        distributed_step(model, group.as_ref(), rank, g, x, labels, exec.kind)
    })?;
    // Gradients are all-reduced, hence identical across ranks; rank 0 speaks
    // for everyone.
    let (loss, grads) = outs.swap_remove(0);
    let new_model = apply_update(model, &grads, cfg.learning_rate)?;
    Ok((loss, new_model, ledger))
}

/// A completed training run.
#[derive(Debug)]
pub struct TrainRun<T> {
    pub losses: Vec<f64>,
    pub model: GraphTransformer<T>,
    pub ledger: CommLedger,
}

/// Run `cfg.steps` gradient-descent steps, logging the loss of every step.
pub fn train<T: Scalar>(
    model: GraphTransformer<T>,
    g: &Arc<CsrGraph>,
    x: &DenseMatrix<T>,
    labels: &[Option<usize>],
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<TrainRun<T>> {
    let mut current = model;
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut ledger = CommLedger::default();
    for _ in 0..cfg.steps {
        let (loss, next, step_ledger) = train_step_with_ledger(&current, g, x, labels, cfg, exec)?;
        losses.push(loss);
        ledger.merge(&step_ledger);
        current = next;
    }
    Ok(TrainRun { losses, model: current, ledger })
}

/// Loss log in the `step,loss` CSV format.
pub fn loss_log_csv(losses: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (step, loss) in losses.iter().enumerate() {
        out.push_str(&format!("{step},{loss}\n"));
    }
    out
}

/// Deterministic toy node-classification task: class-informative features
/// with mild noise over a random graph, every node labeled.
pub fn synthetic_classification_task(
    n: usize,
    d: usize,
    classes: usize,
    avg_degree: f64,
    seed: u64,
) -> Result<(Arc<CsrGraph>, DenseMatrix<f64>, Vec<Option<usize>>)> {
    let edges = crate::generate::erdos_renyi(n, avg_degree, seed);
    let g = Arc::new(CsrGraph::from_edges(n, &edges)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7454_u64);
    let labels: Vec<Option<usize>> = (0..n).map(|i| Some(i % classes)).collect();
    let x = DenseMatrix::from_fn(n, d, |i, j| {
        let class = i % classes;
        let signal = if j % classes == class { 1.0 } else { 0.0 };
        signal + 0.1 * rand::Rng::gen_range(&mut rng, -1.0..1.0)
    });
    Ok((g, x, labels))
}
