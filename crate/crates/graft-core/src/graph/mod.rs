//! Fused token/AST graphs and attention masks.
//!
//! A program's graph has one row per token (rows `0..L` in source order)
//! followed by one row per AST node (arena order). Three edge relations
//! connect them:
//!
//! * every token to its deepest covering AST node (both directions),
//! * every AST parent to each child (both directions),
//! * a self-loop on every row.
//!
//! For a program with `T` AST nodes this yields exactly `L + T - 1`
//! undirected non-loop edges (a tree over all rows), so edge count scales
//! linearly with node count.

mod mask;
mod io;

pub use io::{ingest_corpus, CorpusEntry, EdgeJson, GraphJson, NodeJson};
pub use mask::{build_mask, mask_edge_type_ids, MaskSpec};

use crate::error::{Error, Result};
use crate::lang::{lex, parse, Ast, AstKind, Token};
use crate::linalg::{CsrMatrix, SparsityPattern};
use serde::{Deserialize, Serialize};

/// Relation an edge encodes. The discriminant doubles as the embedding row
/// for edge-type bias lookups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeType {
    TokenToParent,
    AstChild,
    SelfLoop,
}

impl EdgeType {
    pub const ALL: [EdgeType; 3] = [EdgeType::TokenToParent, EdgeType::AstChild, EdgeType::SelfLoop];

    pub fn index(self) -> usize {
        match self {
            EdgeType::TokenToParent => 0,
            EdgeType::AstChild => 1,
            EdgeType::SelfLoop => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeType::TokenToParent => "token_to_parent",
            EdgeType::AstChild => "ast_child",
            EdgeType::SelfLoop => "self_loop",
        }
    }

    pub fn parse(s: &str) -> Option<EdgeType> {
        Self::ALL.iter().copied().find(|t| t.as_str() == s)
    }
}

/// Edge-type id used for the off-diagonal entries of synthetic (random or
/// complete) masks, which encode no source relation. Not produced by
/// [`build_graph`].
pub const SYNTHETIC_EDGE_TYPE: usize = 3;

/// Rows in an edge-type embedding table covering both real and synthetic
/// edges.
pub const EDGE_TYPE_COUNT: usize = 4;

/// Fused token/AST graph of one program.
#[derive(Clone, Debug)]
pub struct CodeGraph {
    /// Tokens in source order; token `t` is graph row `t`.
    pub tokens: Vec<Token>,
    /// AST node kinds; arena node `i` is graph row `token_count() + i`.
    pub ast_kinds: Vec<AstKind>,
    /// Directed edge list including both directions of every relation and
    /// all self-loops, sorted by `(src, dst)`.
    pub edges: Vec<(usize, usize, EdgeType)>,
    /// Structural adjacency; all values 1.0. One slot per `edges` entry.
    pub adjacency: CsrMatrix,
    /// Edge-type ids aligned with `adjacency` slots. Code graphs carry
    /// exactly one type per slot; synthetic masks may differ.
    pub edge_type_ids: Vec<Vec<usize>>,
}

impl CodeGraph {
    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    pub fn node_count(&self) -> usize {
        self.tokens.len() + self.ast_kinds.len()
    }

    /// Count of undirected non-loop edges.
    pub fn undirected_edge_count(&self) -> usize {
        self.edges.iter().filter(|&&(s, d, _)| s < d).count()
    }

    /// Lex, parse and build in one step.
    pub fn from_source(source: &str) -> Result<CodeGraph> {
        let tokens = lex(source)?;
        let ast = parse(&tokens)?;
        build_graph(&tokens, &ast)
    }
}

/// Builds the fused graph for a parsed program.
///
/// Every token must fall inside the root span (guaranteed for ASTs from
/// [`parse`]); otherwise [`Error::UncoveredToken`] is returned.
pub fn build_graph(tokens: &[Token], ast: &Ast) -> Result<CodeGraph> {
    let token_count = tokens.len();
    let node_count = token_count + ast.len();
    let ast_row = |i: usize| token_count + i;

    let mut edges: Vec<(usize, usize, EdgeType)> = Vec::with_capacity(3 * node_count);
    for (i, node) in ast.nodes().iter().enumerate() {
        for &child in &node.children {
            edges.push((ast_row(i), ast_row(child), EdgeType::AstChild));
            edges.push((ast_row(child), ast_row(i), EdgeType::AstChild));
        }
    }
    for t in 0..token_count {
        let parent = deepest_covering_node(ast, t)?;
        edges.push((t, ast_row(parent), EdgeType::TokenToParent));
        edges.push((ast_row(parent), t, EdgeType::TokenToParent));
    }
    for r in 0..node_count {
        edges.push((r, r, EdgeType::SelfLoop));
    }
    edges.sort_unstable_by_key(|&(s, d, _)| (s, d));

    let weighted: Vec<(usize, usize, f64)> =
        edges.iter().map(|&(s, d, _)| (s, d, 1.0)).collect();
    let adjacency = CsrMatrix::from_edges(node_count, node_count, &weighted)?;
    let mut edge_type_ids = vec![Vec::new(); adjacency.nnz()];
    for &(s, d, ty) in &edges {
        let slot = adjacency
            .pattern()
            .find(s, d)
            .expect("every edge has a slot");
        edge_type_ids[slot].push(ty.index());
    }
    debug_assert!(edge_type_ids.iter().all(|ids| ids.len() == 1));

    Ok(CodeGraph {
        tokens: tokens.to_vec(),
        ast_kinds: ast.nodes().iter().map(|n| n.kind).collect(),
        edges,
        adjacency,
        edge_type_ids,
    })
}

/// Deepest AST node whose span covers token `t`.
fn deepest_covering_node(ast: &Ast, t: usize) -> Result<usize> {
    let root = ast.root();
    let (start, end) = ast.node(root).token_span;
    if t < start || t >= end {
        return Err(Error::UncoveredToken(t));
    }
    let mut node = root;
    'descend: loop {
        for &child in &ast.node(node).children {
            let (s, e) = ast.node(child).token_span;
            if s <= t && t < e {
                node = child;
                continue 'descend;
            }
        }
        return Ok(node);
    }
}

/// Breadth-first hop distances from `from` over the structural pattern.
///
/// `None` marks unreachable rows. Used to validate receptive-field bounds.
pub fn bfs_distances(pattern: &SparsityPattern, from: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; pattern.rows()];
    let mut queue = std::collections::VecDeque::new();
    dist[from] = Some(0);
    queue.push_back(from);
    while let Some(node) = queue.pop_front() {
        let d = dist[node].unwrap();
        for &next in pattern.row_cols(node) {
            if dist[next].is_none() {
                dist[next] = Some(d + 1);
                queue.push_back(next);
            }
        }
    }
    dist
}

/// Per-graph size measurements plus the fitted edges-vs-nodes slope.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphStats {
    pub rows: Vec<GraphStatRow>,
    /// Least-squares slope of `edge_count` against `node_count`. When all
    /// graphs have the same node count the regression is degenerate and the
    /// ratio `sum(edges) / sum(nodes - 1)` is reported instead (1.0 for
    /// trees either way).
    pub slope: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphStatRow {
    pub token_count: usize,
    pub node_count: usize,
    /// Undirected non-loop edges.
    pub edge_count: usize,
}

pub fn graph_stats(graphs: &[CodeGraph]) -> Result<GraphStats> {
    if graphs.is_empty() {
        return Err(Error::InsufficientPoints(
            "graph_stats needs at least one graph".to_string(),
        ));
    }
    let rows: Vec<GraphStatRow> = graphs
        .iter()
        .map(|g| GraphStatRow {
            token_count: g.token_count(),
            node_count: g.node_count(),
            edge_count: g.undirected_edge_count(),
        })
        .collect();
    let n = rows.len() as f64;
    let mean_x = rows.iter().map(|r| r.node_count as f64).sum::<f64>() / n;
    let mean_y = rows.iter().map(|r| r.edge_count as f64).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for r in &rows {
        let dx = r.node_count as f64 - mean_x;
        cov += dx * (r.edge_count as f64 - mean_y);
        var += dx * dx;
    }
    let slope = if var > 0.0 {
        cov / var
    } else {
        let denom: usize = rows.iter().map(|r| r.node_count - 1).sum();
        if denom == 0 {
            return Err(Error::InsufficientPoints(
                "all graphs are single nodes; edge scaling is undefined".to_string(),
            ));
        }
        rows.iter().map(|r| r.edge_count).sum::<usize>() as f64 / denom as f64
    };
    Ok(GraphStats { rows, slope })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph_of(src: &str) -> CodeGraph {
        CodeGraph::from_source(src).unwrap()
    }

    #[test]
    fn sum_assignment_builds_the_documented_tree() {
        // x = a + b: 5 tokens, 6 AST nodes
        // (Program, Assign, Ident x, BinOp, Ident a, Ident b).
        let g = graph_of("x = a + b");
        assert_eq!(g.token_count(), 5);
        assert_eq!(g.node_count(), 11);
        assert_eq!(g.undirected_edge_count(), g.node_count() - 1);
        assert_eq!(g.adjacency.nnz(), 3 * g.node_count() - 2);
        assert!(g.adjacency.pattern().is_structurally_symmetric());
        assert!(g.adjacency.pattern().has_full_diagonal());
    }

    #[test]
    fn identifier_use_is_three_hops_from_its_statement() {
        // Token 'a' -> Ident a -> BinOp -> Assign.
        let g = graph_of("x = a + b");
        let assign_row = g.token_count()
            + g.ast_kinds
                .iter()
                .position(|&k| k == AstKind::Assign)
                .unwrap();
        let dist = bfs_distances(g.adjacency.pattern(), 2);
        assert_eq!(g.tokens[2].text, "a");
        assert_eq!(dist[assign_row], Some(3));
    }

    #[test]
    fn operators_attach_to_their_expression_node() {
        let g = graph_of("x = a + b");
        let binop_row = g.token_count()
            + g.ast_kinds
                .iter()
                .position(|&k| k == AstKind::BinOp)
                .unwrap();
        // '+' is token 3; its only non-loop edge goes to the BinOp node.
        let plus_edges: Vec<_> = g
            .edges
            .iter()
            .filter(|&&(s, d, _)| s == 3 && d != 3)
            .collect();
        assert_eq!(plus_edges.len(), 1);
        assert_eq!(plus_edges[0].1, binop_row);
        assert_eq!(plus_edges[0].2, EdgeType::TokenToParent);
    }

    #[test]
    fn parenthesis_tokens_attach_to_the_grouped_expression() {
        let g = graph_of("x = ( a + b ) * c");
        // '(' is token 2; its parent must be the inner BinOp (the one whose
        // span was widened over the parens), not the outer product.
        let paren_parent = g
            .edges
            .iter()
            .find(|&&(s, d, _)| s == 2 && d != 2)
            .unwrap()
            .1;
        assert_eq!(g.ast_kinds[paren_parent - g.token_count()], AstKind::BinOp);
        let closing_parent = g
            .edges
            .iter()
            .find(|&&(s, d, _)| s == 6 && d != 6)
            .unwrap()
            .1;
        assert_eq!(paren_parent, closing_parent);
    }

    #[test]
    fn every_graph_is_a_tree_plus_loops() {
        for src in [
            "a = 1",
            "a = 1\nb = a + 2",
            "if a < 2 { a = 1 } else { a = 2 }",
            "while x > 0 { x = x - 1 y = y * 2 }",
            "x = ( a + 2 ) * ( b - 1 )",
        ] {
            let g = graph_of(src);
            let n = g.node_count();
            assert_eq!(g.undirected_edge_count(), n - 1, "not a tree: {src}");
            assert_eq!(g.adjacency.nnz(), 3 * n - 2);
            assert!(g.adjacency.pattern().is_structurally_symmetric());
            assert!(g.adjacency.pattern().has_full_diagonal());
            // Connected: BFS from row 0 reaches everything.
            let dist = bfs_distances(g.adjacency.pattern(), 0);
            assert!(dist.iter().all(|d| d.is_some()));
            // One structural type per slot.
            assert!(g.edge_type_ids.iter().all(|ids| ids.len() == 1));
        }
    }

    #[test]
    fn rebuilding_the_same_source_is_deterministic() {
        let a = graph_of("while x > 0 { x = x - 1 }");
        let b = graph_of("while x > 0 { x = x - 1 }");
        assert_eq!(a.edges, b.edges);
        assert_eq!(a.adjacency.values(), b.adjacency.values());
        assert_eq!(a.edge_type_ids, b.edge_type_ids);
    }

    #[test]
    fn stats_slope_is_one_for_trees() {
        let graphs: Vec<CodeGraph> = [
            "a = 1",
            "a = 1\nb = a + 2",
            "a = 1\nb = a + 2\nc = b * b - 1",
            "while x > 0 { x = x - 1 }",
        ]
        .iter()
        .map(|s| graph_of(s))
        .collect();
        let stats = graph_stats(&graphs).unwrap();
        assert!((stats.slope - 1.0).abs() < 1e-9, "slope {}", stats.slope);
    }

    #[test]
    fn stats_degenerate_cases_fall_back_to_the_tree_ratio() {
        let single = vec![graph_of("a = 1\nb = a + 2")];
        let stats = graph_stats(&single).unwrap();
        assert_eq!(stats.slope, 1.0);
        assert!(graph_stats(&[]).is_err());
    }
}
