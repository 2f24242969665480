//! Recursive-descent parser for stencil code strings.
//!
//! ```text
//! expr     := compare ( '?' expr ':' expr )?
//! compare  := additive ( cmp additive )?
//! additive := term ( ('+' | '-') term )*
//! term     := unary ( ('*' | '/') unary )*
//! unary    := '-' unary | primary
//! primary  := number | '(' expr ')' | func '(' args ')' | field ( '[' index,* ']' )?
//!           | 'guard' '[' index,* ']' '(' expr ',' ( expr | 'invalid' ) ')'
//! index    := dim ( ('+' | '-') integer )?
//! ```
//!
//! A comparison is only legal as the predicate of a ternary.

use thiserror::Error;

use crate::expr::{Access, BinaryOp, CompareOp, Condition, Expression, Function, Guard, GuardFallback};
use crate::program::FieldSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at column {column}: {message}")]
    Syntax { column: usize, message: String },
    #[error("unknown field '{0}'")]
    UnknownField(String),
    #[error("field '{field}' has no dimension '{dim}' (declared: [{declared}])")]
    UndeclaredDimension { field: String, dim: String, declared: String },
    #[error("malformed index '{index}' for field '{field}': {reason}")]
    MalformedIndex { field: String, index: String, reason: String },
    #[error("unsupported function '{0}'")]
    UnsupportedFunction(String),
    #[error("function '{name}' takes {expected} argument(s), got {found}")]
    Arity { name: String, expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Int(u64),
    Ident(String),
    Sym(&'static str),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    col: usize,
    text: String,
}

const SYMBOLS: [&str; 17] = ["<=", ">=", "==", "!=", "<", ">", "+", "-", "*", "/", "(", ")", "[", "]", ",", "?", ":"];

fn tokenize(src: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || (c == '.' && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit())) {
            let mut is_float = false;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                is_float |= bytes[i] == b'.';
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    is_float = true;
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let tok =
                if is_float {
                    Tok::Num(text.parse().map_err(|_| ExprError::Syntax {
                        column: start + 1,
                        message: format!("bad number '{text}'"),
                    })?)
                } else {
                    Tok::Int(text.parse().map_err(|_| ExprError::Syntax {
                        column: start + 1,
                        message: format!("integer '{text}' out of range"),
                    })?)
                };
            out.push(Token { tok, col: start + 1, text: text.to_string() });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(src[start..i].to_string()),
                col: start + 1,
                text: src[start..i].to_string(),
            });
            continue;
        }
        let Some(sym) = SYMBOLS.iter().find(|s| src[i..].starts_with(**s)) else {
            return Err(ExprError::Syntax { column: i + 1, message: format!("unexpected character '{c}'") });
        };
        i += sym.len();
        out.push(Token { tok: Tok::Sym(sym), col: start + 1, text: sym.to_string() });
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    end_col: usize,
    fields: &'a [FieldSpec],
    dims: &'a [String],
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |t| t.col)
    }

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Syntax { column: self.col(), message: message.into() })
    }

    fn eat(&mut self, sym: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Sym(s)) if *s == sym) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, sym: &str) -> Result<(), ExprError> {
        if self.eat(sym) {
            Ok(())
        } else {
            let found = self.toks.get(self.pos).map_or("end of input".to_string(), |t| format!("'{}'", t.text));
            self.syntax(format!("expected '{sym}', found {found}"))
        }
    }

    fn expr(&mut self) -> Result<Expression, ExprError> {
        let start = self.pos;
        let lhs = self.additive()?;
        let cmp = match self.peek() {
            Some(Tok::Sym(s)) => match *s {
                "<" => Some(CompareOp::Lt),
                "<=" => Some(CompareOp::Le),
                ">" => Some(CompareOp::Gt),
                ">=" => Some(CompareOp::Ge),
                "==" => Some(CompareOp::Eq),
                "!=" => Some(CompareOp::Ne),
                _ => None,
            },
            _ => None,
        };
        let Some(op) = cmp else {
            if matches!(self.peek(), Some(Tok::Sym("?"))) {
                return self.syntax("ternary predicate must be a comparison");
            }
            return Ok(lhs);
        };
        self.pos += 1;
        let rhs = self.additive()?;
        if !self.eat("?") {
            let col = self.toks[start].col;
            return Err(ExprError::Syntax {
                column: col,
                message: "comparison is only allowed as a ternary predicate".into(),
            });
        }
        let then_branch = self.expr()?;
        self.expect(":")?;
        let else_branch = self.expr()?;
        Ok(Expression::Ternary {
            cond: Box::new(Condition { op, lhs, rhs }),
            then_branch: Box::new(then_branch),
            else_branch: Box::new(else_branch),
        })
    }

    fn additive(&mut self) -> Result<Expression, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat("+") {
                BinaryOp::Add
            } else if self.eat("-") {
                BinaryOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Expression::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expression, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat("*") {
                BinaryOp::Mul
            } else if self.eat("/") {
                BinaryOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Expression::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expression, ExprError> {
        if self.eat("-") {
            return Ok(Expression::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expression, ExprError> {
        let Some(tok) = self.toks.get(self.pos).cloned() else {
            return self.syntax("unexpected end of input");
        };
        match tok.tok {
            Tok::Num(v) => {
                self.pos += 1;
                Ok(Expression::Literal(v))
            }
            Tok::Int(v) => {
                self.pos += 1;
                Ok(Expression::Literal(v as f64))
            }
            Tok::Sym("(") => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.pos += 1;
                if name == "guard" && matches!(self.peek(), Some(Tok::Sym("["))) {
                    return self.guard();
                }
                if matches!(self.peek(), Some(Tok::Sym("("))) {
                    return self.call(&name);
                }
                self.access(&name)
            }
            _ => self.syntax(format!("unexpected '{}'", tok.text)),
        }
    }

    fn call(&mut self, name: &str) -> Result<Expression, ExprError> {
        let func = Function::from_name(name).ok_or_else(|| ExprError::UnsupportedFunction(name.into()))?;
        self.expect("(")?;
        let mut args = Vec::new();
        if !self.eat(")") {
            loop {
                args.push(self.expr()?);
                if self.eat(")") {
                    break;
                }
                self.expect(",")?;
            }
        }
        if args.len() != func.arity() {
            return Err(ExprError::Arity { name: name.into(), expected: func.arity(), found: args.len() });
        }
        Ok(Expression::Call { func, args })
    }

    /// Reads `dim`, `dim+k` or `dim-k` up to the next ',' or ']'.
    fn index(&mut self, field: &str) -> Result<(String, i64), ExprError> {
        let start = self.pos;
        while !matches!(self.peek(), None | Some(Tok::Sym(",")) | Some(Tok::Sym("]"))) {
            self.pos += 1;
        }
        let toks = &self.toks[start..self.pos];
        let text: String = toks.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ");
        let malformed = |reason: &str| ExprError::MalformedIndex {
            field: field.into(),
            index: text.clone(),
            reason: reason.into(),
        };
        match toks {
            [Token { tok: Tok::Ident(d), .. }] => Ok((d.clone(), 0)),
            [Token { tok: Tok::Ident(d), .. }, Token { tok: Tok::Sym(s), .. }, Token { tok: Tok::Int(k), .. }]
                if *s == "+" || *s == "-" =>
            {
                let k = i64::try_from(*k).map_err(|_| malformed("offset out of range"))?;
                Ok((d.clone(), if *s == "+" { k } else { -k }))
            }
            [] => Err(malformed("empty index")),
            _ if toks.iter().filter(|t| matches!(t.tok, Tok::Ident(_))).count() > 1 => {
                Err(malformed("offsets must be compile-time constants"))
            }
            _ => Err(malformed("expected 'dim', 'dim+k' or 'dim-k'")),
        }
    }

    fn index_list(&mut self, field: &str) -> Result<Vec<(String, i64)>, ExprError> {
        self.expect("[")?;
        let mut out = Vec::new();
        if self.eat("]") {
            return Ok(out);
        }
        loop {
            out.push(self.index(field)?);
            if self.eat("]") {
                return Ok(out);
            }
            self.expect(",")?;
        }
    }

    fn access(&mut self, name: &str) -> Result<Expression, ExprError> {
        let spec = self.fields.iter().find(|f| f.name == name).ok_or_else(|| ExprError::UnknownField(name.into()))?;
        if !matches!(self.peek(), Some(Tok::Sym("["))) {
            if spec.dims.is_empty() {
                return Ok(Expression::Access(Access::new(name, vec![])));
            }
            return self.syntax(format!("field '{name}' must be indexed"));
        }
        let indices = self.index_list(name)?;
        for (dim, _) in &indices {
            if !spec.dims.contains(dim) {
                return Err(ExprError::UndeclaredDimension {
                    field: name.into(),
                    dim: dim.clone(),
                    declared: spec.dims.join(","),
                });
            }
        }
        let named: Vec<&str> = indices.iter().map(|(d, _)| d.as_str()).collect();
        if named != spec.dims.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(ExprError::MalformedIndex {
                field: name.into(),
                index: named.join(","),
                reason: format!("indices must follow the field's dimensions [{}]", spec.dims.join(",")),
            });
        }
        Ok(Expression::Access(Access::new(name, indices.into_iter().map(|(_, o)| o).collect())))
    }

    fn guard(&mut self) -> Result<Expression, ExprError> {
        let indices = self.index_list("guard")?;
        let named: Vec<&str> = indices.iter().map(|(d, _)| d.as_str()).collect();
        if named != self.dims.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(ExprError::MalformedIndex {
                field: "guard".into(),
                index: named.join(","),
                reason: "guards index every iteration dimension in order".into(),
            });
        }
        self.expect("(")?;
        let body = self.expr()?;
        self.expect(",")?;
        let fallback = if matches!(self.peek(), Some(Tok::Ident(s)) if s == "invalid") {
            self.pos += 1;
            GuardFallback::Invalid
        } else {
            GuardFallback::Value(self.expr()?)
        };
        self.expect(")")?;
        Ok(Expression::Guard(Box::new(Guard {
            offsets: indices.into_iter().map(|(_, o)| o).collect(),
            body,
            fallback,
        })))
    }
}

/// Parses one code string, resolving accesses against `declared_fields`.
pub fn parse_expression(code: &str, declared_fields: &[FieldSpec], dims: &[String]) -> Result<Expression, ExprError> {
    let toks = tokenize(code)?;
    let mut p = Parser { toks, pos: 0, end_col: code.len() + 1, fields: declared_fields, dims };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return p.syntax(format!("unexpected '{}'", p.toks[p.pos].text));
    }
    Ok(e)
}
