//! Canonical source regeneration from an AST.

use crate::lang::ast::{Ast, AstKind};
use crate::lang::lexer::Token;

/// Renders `ast` back to source text.
///
/// Tokens are space-separated, top-level statements newline-separated, and
/// parentheses are emitted exactly where precedence requires them. Parsing
/// the output reproduces the structure: for sources without redundant
/// parentheses the round trip is the identity (spans included); redundant
/// parentheses normalize away, leaving a structurally equal tree.
pub fn pretty_print(ast: &Ast, tokens: &[Token]) -> String {
    let root = ast.node(ast.root());
    let mut stmts = Vec::with_capacity(root.children.len());
    for &child in &root.children {
        let mut parts = Vec::new();
        write_stmt(ast, tokens, child, &mut parts);
        stmts.push(parts.join(" "));
    }
    stmts.join("\n")
}

fn write_stmt(ast: &Ast, tokens: &[Token], node: usize, out: &mut Vec<String>) {
    let n = ast.node(node);
    match n.kind {
        AstKind::Assign => {
            write_expr(ast, tokens, n.children[0], 0, out);
            out.push("=".to_string());
            write_expr(ast, tokens, n.children[1], 0, out);
        }
        AstKind::If => {
            out.push("if".to_string());
            write_expr(ast, tokens, n.children[0], 0, out);
            write_block(ast, tokens, n.children[1], out);
            if let Some(&else_block) = n.children.get(2) {
                out.push("else".to_string());
                write_block(ast, tokens, else_block, out);
            }
        }
        AstKind::While => {
            out.push("while".to_string());
            write_expr(ast, tokens, n.children[0], 0, out);
            write_block(ast, tokens, n.children[1], out);
        }
        other => unreachable!("statement position holds {other:?}"),
    }
}

fn write_block(ast: &Ast, tokens: &[Token], node: usize, out: &mut Vec<String>) {
    out.push("{".to_string());
    for &stmt in &ast.node(node).children {
        write_stmt(ast, tokens, stmt, out);
    }
    out.push("}".to_string());
}

/// Precedence levels: comparisons 0, sums 1, products 2, atoms 3.
fn precedence(ast: &Ast, tokens: &[Token], node: usize) -> u8 {
    let n = ast.node(node);
    match n.kind {
        AstKind::Compare => 0,
        AstKind::BinOp => match operator_text(ast, tokens, node) {
            "+" | "-" => 1,
            _ => 2,
        },
        _ => 3,
    }
}

/// The operator token sits immediately after the left operand's span (which
/// absorbs any grouping parentheses).
fn operator_text<'t>(ast: &Ast, tokens: &'t [Token], node: usize) -> &'t str {
    let left = ast.node(node).children[0];
    &tokens[ast.node(left).token_span.1].text
}

/// The payload token of a leaf, skipping parentheses the span absorbed.
fn leaf_text<'t>(ast: &Ast, tokens: &'t [Token], node: usize) -> &'t str {
    let (start, _) = ast.node(node).token_span;
    let mut t = start;
    while tokens[t].text == "(" {
        t += 1;
    }
    &tokens[t].text
}

fn write_expr(ast: &Ast, tokens: &[Token], node: usize, min_prec: u8, out: &mut Vec<String>) {
    let n = ast.node(node);
    match n.kind {
        AstKind::Ident | AstKind::Lit => out.push(leaf_text(ast, tokens, node).to_string()),
        AstKind::Compare => {
            write_expr(ast, tokens, n.children[0], 1, out);
            out.push(operator_text(ast, tokens, node).to_string());
            write_expr(ast, tokens, n.children[1], 1, out);
        }
        AstKind::BinOp => {
            let prec = precedence(ast, tokens, node);
            let needs_parens = prec < min_prec;
            if needs_parens {
                out.push("(".to_string());
            }
            // Left-associative: the left operand tolerates equal precedence,
            // the right operand needs strictly higher.
            write_expr(ast, tokens, n.children[0], prec, out);
            out.push(operator_text(ast, tokens, node).to_string());
            write_expr(ast, tokens, n.children[1], prec + 1, out);
            if needs_parens {
                out.push(")".to_string());
            }
        }
        other => unreachable!("expression position holds {other:?}"),
    }
}
