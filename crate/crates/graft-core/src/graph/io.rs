//! Graph serialization and corpus ingestion.

use crate::error::{Error, Result};
use crate::graph::{CodeGraph, EdgeType};
use crate::lang::{AstKind, Token, TokenKind};
use crate::linalg::CsrMatrix;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// On-disk graph format. Nodes are listed in row order; edges are stored
/// undirected (one entry per pair, `src <= dst`) with self-loops explicit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphJson {
    pub token_count: usize,
    pub node_count: usize,
    pub nodes: Vec<NodeJson>,
    pub edges: Vec<EdgeJson>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NodeJson {
    pub id: usize,
    /// Token kind for rows below `token_count`, AST node kind above.
    pub kind: String,
    /// Source text; present on token rows only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EdgeJson {
    pub src: usize,
    pub dst: usize,
    #[serde(rename = "type")]
    pub edge_type: String,
}

impl GraphJson {
    pub fn from_graph(graph: &CodeGraph) -> GraphJson {
        let token_count = graph.token_count();
        let mut nodes = Vec::with_capacity(graph.node_count());
        for token in &graph.tokens {
            nodes.push(NodeJson {
                id: token.position,
                kind: token.kind.as_str().to_string(),
                text: Some(token.text.clone()),
            });
        }
        for (i, kind) in graph.ast_kinds.iter().enumerate() {
            nodes.push(NodeJson {
                id: token_count + i,
                kind: kind.as_str().to_string(),
                text: None,
            });
        }
        // graph.edges is sorted by (src, dst); keeping src <= dst emits each
        // undirected pair once and every self-loop once, still sorted.
        let edges = graph
            .edges
            .iter()
            .filter(|&&(s, d, _)| s <= d)
            .map(|&(s, d, ty)| EdgeJson {
                src: s,
                dst: d,
                edge_type: ty.as_str().to_string(),
            })
            .collect();
        GraphJson {
            token_count,
            node_count: graph.node_count(),
            nodes,
            edges,
        }
    }

    /// Rebuilds the graph, validating shape: contiguous node ids, token rows
    /// carrying text and token kinds, AST rows bare with node kinds, edges
    /// in bounds with `src <= dst` and loop entries typed as self-loops.
    pub fn to_graph(&self) -> Result<CodeGraph> {
        if self.token_count > self.node_count {
            return Err(Error::DimensionMismatch(format!(
                "graph json: token_count {} exceeds node_count {}",
                self.token_count, self.node_count
            )));
        }
        if self.nodes.len() != self.node_count {
            return Err(Error::DimensionMismatch(format!(
                "graph json: node_count {} but {} node entries",
                self.node_count,
                self.nodes.len()
            )));
        }
        let mut nodes = self.nodes.clone();
        nodes.sort_by_key(|n| n.id);
        if let Some((i, n)) = nodes.iter().enumerate().find(|(i, n)| n.id != *i) {
            return Err(Error::IndexOutOfRange(format!(
                "graph json: node ids must cover 0..{} exactly, found id {} at rank {}",
                self.node_count, n.id, i
            )));
        }

        let mut tokens = Vec::with_capacity(self.token_count);
        let mut ast_kinds = Vec::with_capacity(self.node_count - self.token_count);
        for node in &nodes {
            if node.id < self.token_count {
                let kind = TokenKind::parse(&node.kind).ok_or_else(|| {
                    Error::WrongKind(format!(
                        "graph json: node {} has unknown token kind `{}`",
                        node.id, node.kind
                    ))
                })?;
                let text = node.text.clone().ok_or_else(|| {
                    Error::WrongKind(format!(
                        "graph json: token node {} is missing its text",
                        node.id
                    ))
                })?;
                tokens.push(Token {
                    kind,
                    text,
                    position: node.id,
                });
            } else {
                let kind = AstKind::parse(&node.kind).ok_or_else(|| {
                    Error::WrongKind(format!(
                        "graph json: node {} has unknown ast kind `{}`",
                        node.id, node.kind
                    ))
                })?;
                if node.text.is_some() {
                    return Err(Error::WrongKind(format!(
                        "graph json: ast node {} must not carry text",
                        node.id
                    )));
                }
                ast_kinds.push(kind);
            }
        }

        let mut edges: Vec<(usize, usize, EdgeType)> = Vec::with_capacity(2 * self.edges.len());
        for e in &self.edges {
            if e.src >= self.node_count || e.dst >= self.node_count {
                return Err(Error::IndexOutOfRange(format!(
                    "graph json: edge ({}, {}) outside {} nodes",
                    e.src, e.dst, self.node_count
                )));
            }
            if e.src > e.dst {
                return Err(Error::InvalidParameter(format!(
                    "graph json: edges are stored undirected with src <= dst, got ({}, {})",
                    e.src, e.dst
                )));
            }
            let ty = EdgeType::parse(&e.edge_type).ok_or_else(|| {
                Error::WrongKind(format!(
                    "graph json: unknown edge type `{}`",
                    e.edge_type
                ))
            })?;
            if (e.src == e.dst) != (ty == EdgeType::SelfLoop) {
                return Err(Error::WrongKind(format!(
                    "graph json: edge ({}, {}) typed `{}`",
                    e.src, e.dst, e.edge_type
                )));
            }
            if e.src == e.dst {
                edges.push((e.src, e.dst, ty));
            } else {
                edges.push((e.src, e.dst, ty));
                edges.push((e.dst, e.src, ty));
            }
        }
        edges.sort_unstable_by_key(|&(s, d, _)| (s, d));

        let weighted: Vec<(usize, usize, f64)> =
            edges.iter().map(|&(s, d, _)| (s, d, 1.0)).collect();
        let adjacency = CsrMatrix::from_edges(self.node_count, self.node_count, &weighted)?;
        let mut edge_type_ids = vec![Vec::new(); adjacency.nnz()];
        for &(s, d, ty) in &edges {
            let slot = adjacency
                .pattern()
                .find(s, d)
                .expect("every edge has a slot");
            edge_type_ids[slot].push(ty.index());
        }

        Ok(CodeGraph {
            tokens,
            ast_kinds,
            edges,
            adjacency,
            edge_type_ids,
        })
    }
}

/// One corpus file. The graph is a per-file result so a bad program surfaces
/// its error without aborting the rest of the directory.
#[derive(Debug)]
pub struct CorpusEntry {
    pub path: PathBuf,
    pub graph: Result<CodeGraph>,
}

/// Reads every `*.mini` file under `dir` (non-recursive, sorted by file
/// name) and builds its graph.
pub fn ingest_corpus(dir: &Path) -> Result<Vec<CorpusEntry>> {
    let read_ctx = || format!("reading corpus directory {}", dir.display());
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(Error::io(read_ctx()))?
        .map(|entry| entry.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .map_err(Error::io(read_ctx()))?;
    paths.retain(|p| p.extension().map_or(false, |ext| ext == "mini") && p.is_file());
    paths.sort();

    let mut entries = Vec::with_capacity(paths.len());
    for path in paths {
        let graph = std::fs::read_to_string(&path)
            .map_err(Error::io(format!("reading {}", path.display())))
            .and_then(|source| CodeGraph::from_source(&source));
        entries.push(CorpusEntry { path, graph });
    }
    Ok(entries)
}
