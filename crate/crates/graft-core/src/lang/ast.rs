//! Arena-allocated abstract syntax tree.

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AstKind {
    Program,
    Assign,
    If,
    While,
    Block,
    BinOp,
    Compare,
    Ident,
    Lit,
}

impl AstKind {
    pub const ALL: [AstKind; 9] = [
        AstKind::Program,
        AstKind::Assign,
        AstKind::If,
        AstKind::While,
        AstKind::Block,
        AstKind::BinOp,
        AstKind::Compare,
        AstKind::Ident,
        AstKind::Lit,
    ];

    /// Stable index used for embedding lookups.
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&k| k == self).unwrap()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AstKind::Program => "Program",
            AstKind::Assign => "Assign",
            AstKind::If => "If",
            AstKind::While => "While",
            AstKind::Block => "Block",
            AstKind::BinOp => "BinOp",
            AstKind::Compare => "Compare",
            AstKind::Ident => "Ident",
            AstKind::Lit => "Lit",
        }
    }

    pub fn parse(s: &str) -> Option<AstKind> {
        Self::ALL.iter().copied().find(|k| k.as_str() == s)
    }
}

/// One AST node. `children` index into the owning [`Ast`] arena in source
/// order; `token_span` is a half-open token-index range `[start, end)`.
///
/// Invariants (established by the parser, relied on by the graph builder):
/// child spans nest strictly inside the parent span and siblings are
/// disjoint, so every token has a unique deepest covering node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AstNode {
    pub kind: AstKind,
    pub children: Vec<usize>,
    pub depth: usize,
    pub token_span: (usize, usize),
}

/// Parse tree stored as an arena; node indices are stable and the root is
/// explicit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ast {
    nodes: Vec<AstNode>,
    root: usize,
}

impl Ast {
    pub(crate) fn new(nodes: Vec<AstNode>, root: usize) -> Ast {
        Ast { nodes, root }
    }

    pub fn nodes(&self) -> &[AstNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &AstNode {
        &self.nodes[i]
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Equality of shape and kinds, ignoring spans and arena layout.
    ///
    /// Two parses of differently-formatted but structurally identical
    /// sources compare equal here even when redundant parentheses shift the
    /// token spans.
    pub fn structural_eq(&self, other: &Ast) -> bool {
        fn eq(a: &Ast, ai: usize, b: &Ast, bi: usize) -> bool {
            let (na, nb) = (a.node(ai), b.node(bi));
            na.kind == nb.kind
                && na.children.len() == nb.children.len()
                && na
                    .children
                    .iter()
                    .zip(&nb.children)
                    .all(|(&ca, &cb)| eq(a, ca, b, cb))
        }
        eq(self, self.root, other, other.root)
    }
}
