//! Stencil expression trees.
//!
//! Accesses carry offsets in the accessed field's own dimensions, so a 2-D
//! field read from a 3-D stencil has two offsets. Guards only appear in
//! fused programs; they re-introduce the bounds check of an eliminated
//! intermediate field.

use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Add | BinaryOp::Sub => 2,
            BinaryOp::Mul | BinaryOp::Div => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CompareOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CompareOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
            CompareOp::Eq => "==",
            CompareOp::Ne => "!=",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Function {
    Sqrt,
    Exp,
    Log,
    Abs,
    Min,
    Max,
    Pow,
}

impl Function {
    pub fn from_name(name: &str) -> Option<Function> {
        Some(match name {
            "sqrt" => Function::Sqrt,
            "exp" => Function::Exp,
            "log" => Function::Log,
            "abs" => Function::Abs,
            "min" => Function::Min,
            "max" => Function::Max,
            "pow" => Function::Pow,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Function::Sqrt => "sqrt",
            Function::Exp => "exp",
            Function::Log => "log",
            Function::Abs => "abs",
            Function::Min => "min",
            Function::Max => "max",
            Function::Pow => "pow",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Function::Min | Function::Max | Function::Pow => 2,
            _ => 1,
        }
    }

    /// Whether the function is defined on integer operands.
    pub fn supports_integers(self) -> bool {
        matches!(self, Function::Abs | Function::Min | Function::Max | Function::Pow)
    }
}

/// A read of `field` at constant offsets from the current cell.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Access {
    pub field: String,
    pub offsets: Vec<i64>,
}

impl Access {
    pub fn new(field: impl Into<String>, offsets: Vec<i64>) -> Self {
        Access { field: field.into(), offsets }
    }

    pub fn is_center(&self) -> bool {
        self.offsets.iter().all(|&o| o == 0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    pub op: CompareOp,
    pub lhs: Expression,
    pub rhs: Expression,
}

/// What a guard evaluates to when its cell lies outside the domain.
#[derive(Clone, Debug, PartialEq)]
pub enum GuardFallback {
    /// The cell is dropped (shrink semantics).
    Invalid,
    Value(Expression),
}

/// Evaluates `body` only if the cell at `offsets` (one per iteration
/// dimension) is inside the domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Guard {
    pub offsets: Vec<i64>,
    pub body: Expression,
    pub fallback: GuardFallback,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expression {
    Literal(f64),
    Access(Access),
    Neg(Box<Expression>),
    Binary { op: BinaryOp, lhs: Box<Expression>, rhs: Box<Expression> },
    Call { func: Function, args: Vec<Expression> },
    Ternary { cond: Box<Condition>, then_branch: Box<Expression>, else_branch: Box<Expression> },
    Guard(Box<Guard>),
}

impl Expression {
    pub fn access(field: &str, offsets: &[i64]) -> Expression {
        Expression::Access(Access::new(field, offsets.to_vec()))
    }

    pub fn binary(op: BinaryOp, lhs: Expression, rhs: Expression) -> Expression {
        Expression::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }
    }

    /// Visits every access in evaluation order (children left to right).
    pub fn for_each_access<'a>(&'a self, f: &mut impl FnMut(&'a Access)) {
        match self {
            Expression::Literal(_) => {}
            Expression::Access(a) => f(a),
            Expression::Neg(e) => e.for_each_access(f),
            Expression::Binary { lhs, rhs, .. } => {
                lhs.for_each_access(f);
                rhs.for_each_access(f);
            }
            Expression::Call { args, .. } => args.iter().for_each(|a| a.for_each_access(f)),
            Expression::Ternary { cond, then_branch, else_branch } => {
                cond.lhs.for_each_access(f);
                cond.rhs.for_each_access(f);
                then_branch.for_each_access(f);
                else_branch.for_each_access(f);
            }
            Expression::Guard(g) => {
                g.body.for_each_access(f);
                if let GuardFallback::Value(v) = &g.fallback {
                    v.for_each_access(f);
                }
            }
        }
    }

    pub fn accesses(&self) -> Vec<&Access> {
        let mut out = Vec::new();
        self.for_each_access(&mut |a| out.push(a));
        out
    }

    /// Distinct accessed field names in first-use order.
    pub fn fields(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        self.for_each_access(&mut |a| {
            if !out.contains(&a.field.as_str()) {
                out.push(&a.field);
            }
        });
        out
    }

    /// Rewrites every access in place.
    pub fn map_accesses(&mut self, f: &mut impl FnMut(&mut Access)) {
        match self {
            Expression::Literal(_) => {}
            Expression::Access(a) => f(a),
            Expression::Neg(e) => e.map_accesses(f),
            Expression::Binary { lhs, rhs, .. } => {
                lhs.map_accesses(f);
                rhs.map_accesses(f);
            }
            Expression::Call { args, .. } => args.iter_mut().for_each(|a| a.map_accesses(f)),
            Expression::Ternary { cond, then_branch, else_branch } => {
                cond.lhs.map_accesses(f);
                cond.rhs.map_accesses(f);
                then_branch.map_accesses(f);
                else_branch.map_accesses(f);
            }
            Expression::Guard(g) => {
                g.body.map_accesses(f);
                if let GuardFallback::Value(v) = &mut g.fallback {
                    v.map_accesses(f);
                }
            }
        }
    }

    /// Shifts guard offsets (iteration-space offsets) by `delta`.
    pub fn map_guards(&mut self, f: &mut impl FnMut(&mut Vec<i64>)) {
        match self {
            Expression::Literal(_) | Expression::Access(_) => {}
            Expression::Neg(e) => e.map_guards(f),
            Expression::Binary { lhs, rhs, .. } => {
                lhs.map_guards(f);
                rhs.map_guards(f);
            }
            Expression::Call { args, .. } => args.iter_mut().for_each(|a| a.map_guards(f)),
            Expression::Ternary { cond, then_branch, else_branch } => {
                cond.lhs.map_guards(f);
                cond.rhs.map_guards(f);
                then_branch.map_guards(f);
                else_branch.map_guards(f);
            }
            Expression::Guard(g) => {
                f(&mut g.offsets);
                g.body.map_guards(f);
                if let GuardFallback::Value(v) = &mut g.fallback {
                    v.map_guards(f);
                }
            }
        }
    }

    /// Replaces every access for which `f` returns `Some`.
    pub fn substitute(&self, f: &mut impl FnMut(&Access) -> Option<Expression>) -> Expression {
        match self {
            Expression::Literal(v) => Expression::Literal(*v),
            Expression::Access(a) => f(a).unwrap_or_else(|| Expression::Access(a.clone())),
            Expression::Neg(e) => Expression::Neg(Box::new(e.substitute(f))),
            Expression::Binary { op, lhs, rhs } => {
                Expression::Binary { op: *op, lhs: Box::new(lhs.substitute(f)), rhs: Box::new(rhs.substitute(f)) }
            }
            Expression::Call { func, args } => {
                Expression::Call { func: *func, args: args.iter().map(|a| a.substitute(f)).collect() }
            }
            Expression::Ternary { cond, then_branch, else_branch } => Expression::Ternary {
                cond: Box::new(Condition { op: cond.op, lhs: cond.lhs.substitute(f), rhs: cond.rhs.substitute(f) }),
                then_branch: Box::new(then_branch.substitute(f)),
                else_branch: Box::new(else_branch.substitute(f)),
            },
            Expression::Guard(g) => Expression::Guard(Box::new(Guard {
                offsets: g.offsets.clone(),
                body: g.body.substitute(f),
                fallback: match &g.fallback {
                    GuardFallback::Invalid => GuardFallback::Invalid,
                    GuardFallback::Value(v) => GuardFallback::Value(v.substitute(f)),
                },
            })),
        }
    }

    /// Every access together with the offsets of its enclosing guards,
    /// outermost first. The innermost guard's cell is the access's center:
    /// a copy boundary inside it falls back to that cell, not the output
    /// cell.
    pub fn accesses_with_guards(&self) -> Vec<(&Access, Vec<&[i64]>)> {
        fn go<'a>(e: &'a Expression, guards: &mut Vec<&'a [i64]>, out: &mut Vec<(&'a Access, Vec<&'a [i64]>)>) {
            match e {
                Expression::Literal(_) => {}
                Expression::Access(a) => out.push((a, guards.clone())),
                Expression::Neg(x) => go(x, guards, out),
                Expression::Binary { lhs, rhs, .. } => {
                    go(lhs, guards, out);
                    go(rhs, guards, out);
                }
                Expression::Call { args, .. } => args.iter().for_each(|a| go(a, guards, out)),
                Expression::Ternary { cond, then_branch, else_branch } => {
                    go(&cond.lhs, guards, out);
                    go(&cond.rhs, guards, out);
                    go(then_branch, guards, out);
                    go(else_branch, guards, out);
                }
                Expression::Guard(g) => {
                    guards.push(&g.offsets);
                    go(&g.body, guards, out);
                    guards.pop();
                    if let GuardFallback::Value(v) = &g.fallback {
                        go(v, guards, out);
                    }
                }
            }
        }
        let mut out = Vec::new();
        go(self, &mut Vec::new(), &mut out);
        out
    }

    /// Accesses evaluated for every cell regardless of data-dependent
    /// branches or guards.
    pub fn unconditional_accesses(&self) -> Vec<&Access> {
        fn walk<'a>(e: &'a Expression, out: &mut Vec<&'a Access>) {
            match e {
                Expression::Literal(_) => {}
                Expression::Access(a) => out.push(a),
                Expression::Neg(e) => walk(e, out),
                Expression::Binary { lhs, rhs, .. } => {
                    walk(lhs, out);
                    walk(rhs, out);
                }
                Expression::Call { args, .. } => args.iter().for_each(|a| walk(a, out)),
                Expression::Ternary { cond, .. } => {
                    walk(&cond.lhs, out);
                    walk(&cond.rhs, out);
                }
                Expression::Guard(_) => {}
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }

    fn precedence(&self) -> u8 {
        match self {
            Expression::Ternary { .. } => 0,
            Expression::Binary { op, .. } => op.precedence(),
            Expression::Neg(_) => 4,
            _ => 5,
        }
    }
}

/// Renders an expression given the iteration dimension names and each
/// field's dimensions.
pub struct Printer<'a> {
    pub dims: &'a [String],
    pub field_dims: &'a dyn Fn(&str) -> Option<Vec<String>>,
}

impl Printer<'_> {
    pub fn render(&self, e: &Expression) -> String {
        let mut s = String::new();
        self.write(e, &mut s);
        s
    }

    fn write_index(s: &mut String, dim: &str, off: i64) {
        use std::fmt::Write;
        match off {
            0 => s.push_str(dim),
            o if o > 0 => {
                let _ = write!(s, "{dim}+{o}");
            }
            o => {
                let _ = write!(s, "{dim}-{}", o.unsigned_abs());
            }
        }
    }

    fn write_child(&self, e: &Expression, min_prec: u8, s: &mut String) {
        if e.precedence() < min_prec {
            s.push('(');
            self.write(e, s);
            s.push(')');
        } else {
            self.write(e, s);
        }
    }

    fn write(&self, e: &Expression, s: &mut String) {
        match e {
            Expression::Literal(v) => s.push_str(&format_literal(*v)),
            Expression::Access(a) => {
                s.push_str(&a.field);
                let dims = (self.field_dims)(&a.field).unwrap_or_default();
                if dims.is_empty() && a.offsets.is_empty() {
                    return;
                }
                s.push('[');
                for (n, off) in a.offsets.iter().enumerate() {
                    if n > 0 {
                        s.push(',');
                    }
                    let dim = dims.get(n).map(String::as_str).unwrap_or("?");
                    Self::write_index(s, dim, *off);
                }
                s.push(']');
            }
            Expression::Neg(inner) => {
                s.push('-');
                self.write_child(inner, 5, s);
            }
            Expression::Binary { op, lhs, rhs } => {
                let p = op.precedence();
                self.write_child(lhs, p, s);
                s.push(' ');
                s.push_str(op.symbol());
                s.push(' ');
                // left associative: equal precedence on the right needs parens
                self.write_child(rhs, p + 1, s);
            }
            Expression::Call { func, args } => {
                s.push_str(func.name());
                s.push('(');
                for (n, a) in args.iter().enumerate() {
                    if n > 0 {
                        s.push_str(", ");
                    }
                    self.write(a, s);
                }
                s.push(')');
            }
            Expression::Ternary { cond, then_branch, else_branch } => {
                self.write_child(&cond.lhs, 1, s);
                s.push(' ');
                s.push_str(cond.op.symbol());
                s.push(' ');
                self.write_child(&cond.rhs, 1, s);
                s.push_str(" ? ");
                self.write_child(then_branch, 1, s);
                s.push_str(" : ");
                self.write(else_branch, s);
            }
            Expression::Guard(g) => {
                s.push_str("guard[");
                for (n, off) in g.offsets.iter().enumerate() {
                    if n > 0 {
                        s.push(',');
                    }
                    let dim = self.dims.get(n).map(String::as_str).unwrap_or("?");
                    Self::write_index(s, dim, *off);
                }
                s.push_str("](");
                self.write(&g.body, s);
                s.push_str(", ");
                match &g.fallback {
                    GuardFallback::Invalid => s.push_str("invalid"),
                    GuardFallback::Value(v) => self.write(v, s),
                }
                s.push(')');
            }
        }
    }
}

/// Shortest text that parses back to the same `f64`.
pub fn format_literal(v: f64) -> String {
    let s = format!("{v}");
    if s.contains('e') || s.contains('E') {
        format!("{v:e}")
    } else {
        s
    }
}

impl fmt::Display for BinaryOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}
