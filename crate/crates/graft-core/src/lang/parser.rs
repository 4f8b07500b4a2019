//! Recursive-descent parser.

use crate::error::{Error, Result};
use crate::lang::ast::{Ast, AstKind, AstNode};
use crate::lang::lexer::{Token, TokenKind};

/// Parses a token stream into an [`Ast`].
///
/// The whole stream must be consumed; a program needs at least one
/// statement. Errors are [`Error::SyntaxError`] with the offending token
/// position (the stream length when input ended early).
pub fn parse(tokens: &[Token]) -> Result<Ast> {
    let mut parser = Parser {
        tokens,
        pos: 0,
        nodes: Vec::new(),
    };
    let root = parser.program()?;
    let mut nodes = parser.nodes;
    assign_depths(&mut nodes, root);
    Ok(Ast::new(nodes, root))
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    nodes: Vec<AstNode>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.tokens.len()
    }

    fn error(&self, expected: &str) -> Error {
        Error::SyntaxError {
            position: self.pos,
            expected: expected.to_string(),
            found: match self.peek() {
                Some(t) => format!("{:?}", t.text),
                None => "end of input".to_string(),
            },
        }
    }

    fn expect_kind(&mut self, kind: TokenKind, expected: &str) -> Result<usize> {
        match self.peek() {
            Some(t) if t.kind == kind => {
                let pos = self.pos;
                self.pos += 1;
                Ok(pos)
            }
            _ => Err(self.error(expected)),
        }
    }

    fn expect_text(&mut self, text: &str) -> Result<usize> {
        match self.peek() {
            Some(t) if t.text == text => {
                let pos = self.pos;
                self.pos += 1;
                Ok(pos)
            }
            _ => Err(self.error(&format!("{text:?}"))),
        }
    }

    fn eat_text(&mut self, text: &str) -> bool {
        if matches!(self.peek(), Some(t) if t.text == text) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn push(&mut self, kind: AstKind, children: Vec<usize>, span: (usize, usize)) -> usize {
        self.nodes.push(AstNode {
            kind,
            children,
            depth: 0,
            token_span: span,
        });
        self.nodes.len() - 1
    }

    fn span_end(&self, node: usize) -> usize {
        self.nodes[node].token_span.1
    }

    fn program(&mut self) -> Result<usize> {
        let mut stmts = vec![self.stmt()?];
        while !self.at_end() {
            stmts.push(self.stmt()?);
        }
        Ok(self.push(AstKind::Program, stmts, (0, self.tokens.len())))
    }

    fn stmt(&mut self) -> Result<usize> {
        match self.peek() {
            Some(t) if t.text == "if" => self.if_stmt(),
            Some(t) if t.text == "while" => self.while_stmt(),
            Some(t) if t.kind == TokenKind::Identifier => self.assign(),
            _ => Err(self.error("statement")),
        }
    }

    fn assign(&mut self) -> Result<usize> {
        let start = self.expect_kind(TokenKind::Identifier, "identifier")?;
        let lhs = self.push(AstKind::Ident, vec![], (start, start + 1));
        self.expect_text("=")?;
        let rhs = self.expect_expr()?;
        let span = (start, self.span_end(rhs));
        Ok(self.push(AstKind::Assign, vec![lhs, rhs], span))
    }

    fn if_stmt(&mut self) -> Result<usize> {
        let start = self.expect_text("if")?;
        let cmp = self.cmp()?;
        let then_block = self.block()?;
        let mut children = vec![cmp, then_block];
        let mut end = self.span_end(then_block);
        if self.eat_text("else") {
            let else_block = self.block()?;
            end = self.span_end(else_block);
            children.push(else_block);
        }
        Ok(self.push(AstKind::If, children, (start, end)))
    }

    fn while_stmt(&mut self) -> Result<usize> {
        let start = self.expect_text("while")?;
        let cmp = self.cmp()?;
        let body = self.block()?;
        let span = (start, self.span_end(body));
        Ok(self.push(AstKind::While, vec![cmp, body], span))
    }

    fn block(&mut self) -> Result<usize> {
        let start = self.expect_text("{")?;
        let mut stmts = Vec::new();
        while !matches!(self.peek(), Some(t) if t.text == "}") {
            if self.at_end() {
                return Err(self.error("\"}\""));
            }
            stmts.push(self.stmt()?);
        }
        let end = self.expect_text("}")?;
        Ok(self.push(AstKind::Block, stmts, (start, end + 1)))
    }

    fn cmp(&mut self) -> Result<usize> {
        let lhs = self.expect_expr()?;
        match self.peek() {
            Some(t) if matches!(t.text.as_str(), "<" | ">" | "==") => {
                self.pos += 1;
            }
            _ => return Err(self.error("comparison operator")),
        }
        let rhs = self.expect_expr()?;
        let span = (self.nodes[lhs].token_span.0, self.span_end(rhs));
        Ok(self.push(AstKind::Compare, vec![lhs, rhs], span))
    }

    fn expect_expr(&mut self) -> Result<usize> {
        let mut lhs = self.term()?;
        while matches!(self.peek(), Some(t) if matches!(t.text.as_str(), "+" | "-")) {
            self.pos += 1;
            let rhs = self.term()?;
            let span = (self.nodes[lhs].token_span.0, self.span_end(rhs));
            lhs = self.push(AstKind::BinOp, vec![lhs, rhs], span);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<usize> {
        let mut lhs = self.factor()?;
        while matches!(self.peek(), Some(t) if matches!(t.text.as_str(), "*" | "/")) {
            self.pos += 1;
            let rhs = self.factor()?;
            let span = (self.nodes[lhs].token_span.0, self.span_end(rhs));
            lhs = self.push(AstKind::BinOp, vec![lhs, rhs], span);
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<usize> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Identifier => {
                let pos = self.pos;
                self.pos += 1;
                Ok(self.push(AstKind::Ident, vec![], (pos, pos + 1)))
            }
            Some(t) if t.kind == TokenKind::IntLiteral => {
                let pos = self.pos;
                self.pos += 1;
                Ok(self.push(AstKind::Lit, vec![], (pos, pos + 1)))
            }
            Some(t) if t.text == "(" => {
                let open = self.pos;
                self.pos += 1;
                let inner = self.expect_expr()?;
                let close = self.expect_text(")")?;
                // Widen the inner node over the parentheses so both
                // punctuation tokens have a covering node (the graph builder
                // attaches every token to its deepest covering node).
                self.nodes[inner].token_span = (open, close + 1);
                Ok(inner)
            }
            _ => Err(self.error("expression")),
        }
    }
}

fn assign_depths(nodes: &mut [AstNode], root: usize) {
    let mut stack = vec![(root, 0usize)];
    while let Some((node, depth)) = stack.pop() {
        nodes[node].depth = depth;
        let children = nodes[node].children.clone();
        for child in children {
            stack.push((child, depth + 1));
        }
    }
}
