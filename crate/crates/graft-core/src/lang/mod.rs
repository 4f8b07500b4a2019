//! Lexer, parser and AST for the mini language.
//!
//! The grammar is fixed:
//!
//! ```text
//! program := stmt+
//! stmt    := assign | if | while
//! assign  := IDENT '=' expr
//! if      := 'if' cmp block ['else' block]
//! while   := 'while' cmp block
//! block   := '{' stmt* '}'
//! cmp     := expr ('<' | '>' | '==') expr
//! expr    := term (('+' | '-') term)*
//! term    := factor (('*' | '/') factor)*
//! factor  := IDENT | INT | '(' expr ')'
//! ```
//!
//! `+ - * /` are left-associative with the usual precedence. `#` starts a
//! comment running to end of line.

mod ast;
mod lexer;
mod parser;
mod pretty;

pub use ast::{Ast, AstKind, AstNode};
pub use lexer::{lex, Token, TokenKind};
pub use parser::parse;
pub use pretty::pretty_print;
