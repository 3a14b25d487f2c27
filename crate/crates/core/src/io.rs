//! Graph and label file formats.
//!
//! Edge lists are plain text, one `src dst` pair of 0-based IDs per line,
//! with `#` comments. The writer emits a `# nodes N` directive so isolated
//! trailing nodes survive a round trip; the reader honors it when present.
//! The binary CSR format is a magic/version header followed by `N`, `E`,
//! `row_ptr`, and `col_idx` as little-endian 64-bit integers.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::CsrGraph;

const BINCSR_MAGIC: &[u8; 4] = b"BCSR";
const BINCSR_VERSION: u32 = 1;

/// On-disk graph representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphFormat {
    EdgeList,
    BinCsr,
}

impl GraphFormat {
    pub fn from_str(s: &str) -> Result<Self> {
        match s {
            "edgelist" => Ok(GraphFormat::EdgeList),
            "bincsr" => Ok(GraphFormat::BinCsr),
            other => Err(Error::InvalidArgument(format!("unknown graph format '{other}'"))),
        }
    }
}

/// Edge-list ingestion choices. IDs must be dense in `[0, N)` unless
/// `relabel` compacts them; `symmetrize` adds reverse edges and deduplicates
/// the result.
#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    pub symmetrize: bool,
    pub relabel: bool,
}

/// Parse an edge-list text into a canonical graph.
pub fn read_edge_list(text: &str, opts: LoadOptions) -> Result<CsrGraph> {
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
    let mut declared_nodes: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let mut it = rest.split_whitespace();
            if it.next() == Some("nodes") {
                if let Some(n) = it.next().and_then(|t| t.parse::<usize>().ok()) {
                    declared_nodes = Some(n);
                }
            }
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::Format(format!(
                "line {}: expected 'src dst', got '{line}'",
                idx + 1
            )));
        };
        let src: usize = a
            .parse()
            .map_err(|_| Error::Format(format!("line {}: bad node id '{a}'", idx + 1)))?;
        let dst: usize = b
            .parse()
            .map_err(|_| Error::Format(format!("line {}: bad node id '{b}'", idx + 1)))?;
        if let Some(first) = seen.insert((src, dst), idx + 1) {
            return Err(Error::Format(format!(
                "line {}: duplicate edge ({src}, {dst}), first seen at line {first}",
                idx + 1
            )));
        }
        edges.push((src, dst));
    }

    if opts.relabel {
        let ids: BTreeSet<usize> = edges.iter().flat_map(|&(s, d)| [s, d]).collect();
        let map: HashMap<usize, usize> =
            ids.into_iter().enumerate().map(|(new, old)| (old, new)).collect();
        for e in &mut edges {
            *e = (map[&e.0], map[&e.1]);
        }
        declared_nodes = None;
    }
    let max_id = edges.iter().map(|&(s, d)| s.max(d)).max();
    let inferred = max_id.map_or(0, |m| m + 1);
    let num_nodes = declared_nodes.unwrap_or(inferred).max(inferred);
    if opts.symmetrize {
        let set: BTreeSet<(usize, usize)> = edges
            .iter()
            .copied()
            .chain(edges.iter().map(|&(s, d)| (d, s)))
            .collect();
        edges = set.into_iter().collect();
    }
    CsrGraph::from_edges(num_nodes, &edges)
}

/// Edge-list text for a graph, with the `# nodes` directive.
pub fn write_edge_list(g: &CsrGraph) -> String {
    let mut out = format!("# nodes {}\n", g.num_nodes());
    for i in 0..g.num_rows() {
        for &j in g.row(i) {
            out.push_str(&format!("{i} {j}\n"));
        }
    }
    out
}

/// Write the binary CSR form.
pub fn write_bincsr(g: &CsrGraph, w: &mut impl Write) -> Result<()> {
    w.write_all(BINCSR_MAGIC)?;
    w.write_all(&BINCSR_VERSION.to_le_bytes())?;
    w.write_all(&(g.num_nodes() as u64).to_le_bytes())?;
    w.write_all(&(g.num_edges() as u64).to_le_bytes())?;
    for &v in g.row_ptr() {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    for &v in g.col_idx() {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    Ok(())
}

/// Read the binary CSR form, validating every graph invariant.
pub fn read_bincsr(r: &mut impl Read) -> Result<CsrGraph> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != BINCSR_MAGIC {
        return Err(Error::Format("not a binary CSR file".into()));
    }
    let mut v4 = [0u8; 4];
    r.read_exact(&mut v4)?;
    let version = u32::from_le_bytes(v4);
    if version != BINCSR_VERSION {
        return Err(Error::Format(format!("unsupported binary CSR version {version}")));
    }
    let mut v8 = [0u8; 8];
    r.read_exact(&mut v8)?;
    let n = u64::from_le_bytes(v8) as usize;
    r.read_exact(&mut v8)?;
    let e = u64::from_le_bytes(v8) as usize;
    let mut read_vec = |len: usize| -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut buf)?;
            out.push(u64::from_le_bytes(buf) as usize);
        }
        Ok(out)
    };
    let row_ptr = read_vec(n + 1)?;
    let col_idx = read_vec(e)?;
    CsrGraph::from_parts(n, n, row_ptr, col_idx)
}

/// Load a graph file in either format.
pub fn load_graph(path: &Path, format: GraphFormat, opts: LoadOptions) -> Result<CsrGraph> {
    match format {
        GraphFormat::EdgeList => read_edge_list(&fs::read_to_string(path)?, opts),
        GraphFormat::BinCsr => read_bincsr(&mut fs::File::open(path)?),
    }
}

/// Save a graph file in either format.
pub fn save_graph(path: &Path, format: GraphFormat, g: &CsrGraph) -> Result<()> {
    match format {
        GraphFormat::EdgeList => Ok(fs::write(path, write_edge_list(g))?),
        GraphFormat::BinCsr => {
            let mut f = fs::File::create(path)?;
            write_bincsr(g, &mut f)
        }
    }
}

/// Parse a labels file (`node_id class_id` per line, `#` comments) into a
/// per-node option vector over `n` nodes.
pub fn read_labels(text: &str, n: usize) -> Result<Vec<Option<usize>>> {
    let mut labels = vec![None; n];
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::Format(format!(
                "line {}: expected 'node_id class_id', got '{line}'",
                idx + 1
            )));
        };
        let node: usize = a
            .parse()
            .map_err(|_| Error::Format(format!("line {}: bad node id '{a}'", idx + 1)))?;
        let class: usize = b
            .parse()
            .map_err(|_| Error::Format(format!("line {}: bad class id '{b}'", idx + 1)))?;
        if node >= n {
            return Err(Error::Format(format!(
                "line {}: node {node} outside graph of {n} nodes",
                idx + 1
            )));
        }
        if labels[node].is_some() {
            return Err(Error::Format(format!("line {}: node {node} labeled twice", idx + 1)));
        }
        labels[node] = Some(class);
    }
    Ok(labels)
}
