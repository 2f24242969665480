//! Per-cell stencil evaluation shared by the simulator and the reference
//! interpreter, so both agree bit for bit.
//!
//! A cell carries a value and a validity flag. Only operands that are
//! actually evaluated affect validity: the untaken side of a ternary or the
//! body of a guard whose cell is outside the domain never does. Invalid
//! results store a sentinel (NaN for floats, MIN for integers).

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::buffers::stream_offset;
use crate::expr::{BinaryOp, CompareOp, Expression, Function, GuardFallback};
use crate::program::{Boundary, DType, InputBoundary, StencilNode, StencilProgram};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Value {
    F32(f32),
    F64(f64),
    I32(i32),
    I64(i64),
}

impl Value {
    /// Converts a literal or generated number to `dtype`.
    pub fn from_f64(dtype: DType, v: f64) -> Value {
        match dtype {
            DType::Float32 => Value::F32(v as f32),
            DType::Float64 => Value::F64(v),
            DType::Int32 => Value::I32(v as i32),
            DType::Int64 => Value::I64(v as i64),
        }
    }

    pub fn sentinel(dtype: DType) -> Value {
        match dtype {
            DType::Float32 => Value::F32(f32::NAN),
            DType::Float64 => Value::F64(f64::NAN),
            DType::Int32 => Value::I32(i32::MIN),
            DType::Int64 => Value::I64(i64::MIN),
        }
    }

    pub fn dtype(self) -> DType {
        match self {
            Value::F32(_) => DType::Float32,
            Value::F64(_) => DType::Float64,
            Value::I32(_) => DType::Int32,
            Value::I64(_) => DType::Int64,
        }
    }

    pub fn to_f64(self) -> f64 {
        match self {
            Value::F32(v) => f64::from(v),
            Value::F64(v) => v,
            Value::I32(v) => f64::from(v),
            Value::I64(v) => v as f64,
        }
    }

    /// Raw bit pattern, zero-extended.
    pub fn bits(self) -> u64 {
        match self {
            Value::F32(v) => u64::from(v.to_bits()),
            Value::F64(v) => v.to_bits(),
            Value::I32(v) => u64::from(v as u32),
            Value::I64(v) => v as u64,
        }
    }

    pub fn write_le(self, out: &mut Vec<u8>) {
        match self {
            Value::F32(v) => out.extend_from_slice(&v.to_le_bytes()),
            Value::F64(v) => out.extend_from_slice(&v.to_le_bytes()),
            Value::I32(v) => out.extend_from_slice(&v.to_le_bytes()),
            Value::I64(v) => out.extend_from_slice(&v.to_le_bytes()),
        }
    }

    /// Reads one little-endian value; `bytes` must hold `dtype.bytes()`.
    pub fn read_le(dtype: DType, bytes: &[u8]) -> Value {
        match dtype {
            DType::Float32 => Value::F32(f32::from_le_bytes(bytes[..4].try_into().unwrap())),
            DType::Float64 => Value::F64(f64::from_le_bytes(bytes[..8].try_into().unwrap())),
            DType::Int32 => Value::I32(i32::from_le_bytes(bytes[..4].try_into().unwrap())),
            DType::Int64 => Value::I64(i64::from_le_bytes(bytes[..8].try_into().unwrap())),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::F32(v) => write!(f, "{v}"),
            Value::F64(v) => write!(f, "{v}"),
            Value::I32(v) => write!(f, "{v}"),
            Value::I64(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub value: Value,
    pub valid: bool,
}

impl Cell {
    pub fn valid(value: Value) -> Cell {
        Cell { value, valid: true }
    }

    pub fn invalid(dtype: DType) -> Cell {
        Cell { value: Value::sentinel(dtype), valid: false }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("stencil '{stencil}': integer division by zero at {position:?}")]
    DivisionByZero { stencil: String, position: Vec<usize> },
    #[error("stencil '{stencil}': integer pow with exponent {exponent} at {position:?}")]
    BadExponent { stencil: String, exponent: i64, position: Vec<usize> },
}

/// An in-bounds operand request: read `field` (a slot in
/// [`CompiledStencil::fields`]) at the current position plus `offsets`
/// (one per iteration dimension). `stream` is the same offset flattened
/// over the iteration space.
#[derive(Clone, Copy, Debug)]
pub struct Operand<'a> {
    pub field: usize,
    pub offsets: &'a [i64],
    pub stream: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum OutOfBounds {
    Invalid,
    Literal(usize),
    /// Node id of the same field's center read.
    Center(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum Op {
    Lit(usize),
    Read { field: usize, offsets: Vec<i64>, stream: i64, oob: OutOfBounds },
    Neg(usize),
    Bin(BinaryOp, usize, usize),
    Call(Function, Vec<usize>),
    Tern(CompareOp, [usize; 4]),
    Guard { offsets: Vec<i64>, body: usize, fallback: Option<usize> },
}

/// A stencil expression lowered to a hash-consed DAG over one program's
/// iteration space.
#[derive(Clone, Debug)]
pub struct CompiledStencil {
    pub name: String,
    pub dtype: DType,
    /// Input fields in first-use order.
    pub fields: Vec<String>,
    shape: Vec<usize>,
    literals: Vec<Value>,
    ops: Vec<Op>,
    root: usize,
}

struct Builder<'p> {
    program: &'p StencilProgram,
    node: &'p StencilNode,
    shape: Vec<usize>,
    fields: Vec<String>,
    literals: Vec<Value>,
    literal_ids: HashMap<u64, usize>,
    ops: Vec<Op>,
    ids: HashMap<Op, usize>,
    /// Iteration-space offset of the innermost enclosing guard's cell.
    center: Vec<i64>,
}

impl Builder<'_> {
    fn intern(&mut self, op: Op) -> usize {
        if let Some(&id) = self.ids.get(&op) {
            return id;
        }
        self.ops.push(op.clone());
        self.ids.insert(op, self.ops.len() - 1);
        self.ops.len() - 1
    }

    fn literal(&mut self, v: f64) -> usize {
        let value = Value::from_f64(self.node.dtype, v);
        let n = self.literals.len();
        let idx = *self.literal_ids.entry(value.bits()).or_insert(n);
        if idx == n {
            self.literals.push(value);
        }
        self.intern(Op::Lit(idx))
    }

    fn field_slot(&mut self, field: &str) -> usize {
        match self.fields.iter().position(|f| f == field) {
            Some(s) => s,
            None => {
                self.fields.push(field.to_string());
                self.fields.len() - 1
            }
        }
    }

    fn read(&mut self, field: &str, field_offsets: &[i64]) -> usize {
        let axes = self.program.field_axes(field).expect("validated field");
        let mut offsets = vec![0i64; self.shape.len()];
        for (&o, &a) in field_offsets.iter().zip(&axes) {
            offsets[a] = o;
        }
        // the output cell and the innermost guard's cell are both inside the
        // box domain, so any per-axis mix of the two is too
        let at_center = axes.iter().enumerate().all(|(k, &a)| offsets[a] == self.center[a] || field_offsets[k] == 0);
        let oob = if at_center {
            OutOfBounds::Invalid
        } else {
            match (&self.node.boundary, self.node.boundary.for_input(field)) {
                (Boundary::Shrink, _) | (_, None) => OutOfBounds::Invalid,
                (_, Some(InputBoundary::Constant(v))) => OutOfBounds::Literal(self.literal_index(*v)),
                (_, Some(InputBoundary::Copy)) => {
                    let center: Vec<i64> = axes.iter().map(|&a| self.center[a]).collect();
                    OutOfBounds::Center(self.read_raw(field, &center, OutOfBounds::Invalid))
                }
            }
        };
        self.read_raw(field, field_offsets, oob)
    }

    fn read_raw(&mut self, field: &str, field_offsets: &[i64], oob: OutOfBounds) -> usize {
        let axes = self.program.field_axes(field).expect("validated field");
        let mut offsets = vec![0i64; self.shape.len()];
        for (&o, &a) in field_offsets.iter().zip(&axes) {
            offsets[a] = o;
        }
        let stream = stream_offset(field_offsets, &axes, &self.shape);
        let slot = self.field_slot(field);
        self.intern(Op::Read { field: slot, offsets, stream, oob })
    }

    fn literal_index(&mut self, v: f64) -> usize {
        let id = self.literal(v);
        match self.ops[id] {
            Op::Lit(i) => i,
            _ => unreachable!(),
        }
    }

    fn lower(&mut self, e: &Expression) -> usize {
        match e {
            Expression::Literal(v) => self.literal(*v),
            Expression::Access(a) => self.read(&a.field, &a.offsets),
            Expression::Neg(x) => {
                let x = self.lower(x);
                self.intern(Op::Neg(x))
            }
            Expression::Binary { op, lhs, rhs } => {
                let l = self.lower(lhs);
                let r = self.lower(rhs);
                self.intern(Op::Bin(*op, l, r))
            }
            Expression::Call { func, args } => {
                let args = args.iter().map(|a| self.lower(a)).collect();
                self.intern(Op::Call(*func, args))
            }
            Expression::Ternary { cond, then_branch, else_branch } => {
                let ids =
                    [self.lower(&cond.lhs), self.lower(&cond.rhs), self.lower(then_branch), self.lower(else_branch)];
                self.intern(Op::Tern(cond.op, ids))
            }
            Expression::Guard(g) => {
                let outer = std::mem::replace(&mut self.center, g.offsets.clone());
                let body = self.lower(&g.body);
                self.center = outer;
                let fallback = match &g.fallback {
                    GuardFallback::Invalid => None,
                    GuardFallback::Value(v) => Some(self.lower(v)),
                };
                self.intern(Op::Guard { offsets: g.offsets.clone(), body, fallback })
            }
        }
    }
}

impl CompiledStencil {
    pub fn new(program: &StencilProgram, node: &StencilNode) -> CompiledStencil {
        let mut b = Builder {
            program,
            node,
            shape: program.shape(),
            fields: Vec::new(),
            literals: Vec::new(),
            literal_ids: HashMap::new(),
            ops: Vec::new(),
            ids: HashMap::new(),
            center: vec![0; program.dimensions.len()],
        };
        let root = b.lower(&node.expression);
        CompiledStencil {
            name: node.name.clone(),
            dtype: node.dtype,
            fields: b.fields,
            shape: b.shape,
            literals: b.literals,
            ops: b.ops,
            root,
        }
    }

    /// Distinct DAG nodes after common-subexpression sharing.
    pub fn op_count(&self) -> usize {
        self.ops.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }
}

/// Reusable evaluation state for one compiled stencil.
pub struct Evaluator<'s> {
    stencil: &'s CompiledStencil,
    memo: Vec<Option<Cell>>,
}

impl<'s> Evaluator<'s> {
    pub fn new(stencil: &'s CompiledStencil) -> Self {
        Evaluator { stencil, memo: vec![None; stencil.ops.len()] }
    }

    /// Evaluates the stencil at `position`; `fetch` supplies in-bounds
    /// operands.
    pub fn eval(&mut self, position: &[usize], fetch: &mut dyn FnMut(Operand<'_>) -> Cell) -> Result<Cell, EvalError> {
        self.memo.iter_mut().for_each(|m| *m = None);
        let cell = self.node(self.stencil.root, position, fetch)?;
        Ok(if cell.valid { cell } else { Cell::invalid(self.stencil.dtype) })
    }

    fn in_bounds(&self, position: &[usize], offsets: &[i64]) -> bool {
        position.iter().zip(offsets).zip(&self.stencil.shape).all(|((&p, &o), &e)| {
            let t = p as i64 + o;
            t >= 0 && t < e as i64
        })
    }

    fn node(
        &mut self,
        id: usize,
        pos: &[usize],
        fetch: &mut dyn FnMut(Operand<'_>) -> Cell,
    ) -> Result<Cell, EvalError> {
        if let Some(c) = self.memo[id] {
            return Ok(c);
        }
        let s = self.stencil;
        let cell = match &s.ops[id] {
            Op::Lit(i) => Cell::valid(s.literals[*i]),
            Op::Read { field, offsets, stream, oob } => {
                if self.in_bounds(pos, offsets) {
                    fetch(Operand { field: *field, offsets, stream: *stream })
                } else {
                    match oob {
                        OutOfBounds::Invalid => Cell::invalid(s.dtype),
                        OutOfBounds::Literal(i) => Cell::valid(s.literals[*i]),
                        OutOfBounds::Center(c) => self.node(*c, pos, fetch)?,
                    }
                }
            }
            Op::Neg(x) => {
                let x = self.node(*x, pos, fetch)?;
                Cell { value: negate(x.value), valid: x.valid }
            }
            Op::Bin(op, l, r) => {
                let a = self.node(*l, pos, fetch)?;
                let b = self.node(*r, pos, fetch)?;
                self.binary(*op, a, b, pos)?
            }
            Op::Call(func, args) => {
                let mut cells = Vec::with_capacity(args.len());
                for &a in args {
                    cells.push(self.node(a, pos, fetch)?);
                }
                self.call(*func, &cells, pos)?
            }
            Op::Tern(cmp, [l, r, t, e]) => {
                let a = self.node(*l, pos, fetch)?;
                let b = self.node(*r, pos, fetch)?;
                let branch = if compare(*cmp, a.value, b.value) { *t } else { *e };
                let taken = self.node(branch, pos, fetch)?;
                Cell { value: taken.value, valid: a.valid && b.valid && taken.valid }
            }
            Op::Guard { offsets, body, fallback } => {
                if self.in_bounds(pos, offsets) {
                    self.node(*body, pos, fetch)?
                } else {
                    match fallback {
                        Some(f) => self.node(*f, pos, fetch)?,
                        None => Cell::invalid(s.dtype),
                    }
                }
            }
        };
        self.memo[id] = Some(cell);
        Ok(cell)
    }

    fn binary(&self, op: BinaryOp, a: Cell, b: Cell, pos: &[usize]) -> Result<Cell, EvalError> {
        let valid = a.valid && b.valid;
        let value = match (a.value, b.value) {
            (Value::F32(x), Value::F32(y)) => Value::F32(match op {
                BinaryOp::Add => x + y,
                BinaryOp::Sub => x - y,
                BinaryOp::Mul => x * y,
                BinaryOp::Div => x / y,
            }),
            (Value::F64(x), Value::F64(y)) => Value::F64(match op {
                BinaryOp::Add => x + y,
                BinaryOp::Sub => x - y,
                BinaryOp::Mul => x * y,
                BinaryOp::Div => x / y,
            }),
            (Value::I32(x), Value::I32(y)) => {
                if op == BinaryOp::Div && y == 0 {
                    return self.zero_division(b.valid, pos);
                }
                Value::I32(match op {
                    BinaryOp::Add => x.wrapping_add(y),
                    BinaryOp::Sub => x.wrapping_sub(y),
                    BinaryOp::Mul => x.wrapping_mul(y),
                    BinaryOp::Div => x.wrapping_div(y),
                })
            }
            (Value::I64(x), Value::I64(y)) => {
                if op == BinaryOp::Div && y == 0 {
                    return self.zero_division(b.valid, pos);
                }
                Value::I64(match op {
                    BinaryOp::Add => x.wrapping_add(y),
                    BinaryOp::Sub => x.wrapping_sub(y),
                    BinaryOp::Mul => x.wrapping_mul(y),
                    BinaryOp::Div => x.wrapping_div(y),
                })
            }
            _ => unreachable!("operands share the stencil dtype"),
        };
        Ok(Cell { value, valid })
    }

    fn zero_division(&self, divisor_valid: bool, pos: &[usize]) -> Result<Cell, EvalError> {
        // a dropped divisor yields a dropped cell rather than an error
        if divisor_valid {
            Err(EvalError::DivisionByZero { stencil: self.stencil.name.clone(), position: pos.to_vec() })
        } else {
            Ok(Cell::invalid(self.stencil.dtype))
        }
    }

    fn call(&self, func: Function, args: &[Cell], pos: &[usize]) -> Result<Cell, EvalError> {
        let valid = args.iter().all(|c| c.valid);
        let x = args[0].value;
        let y = args.get(1).map(|c| c.value);
        let value = match x {
            Value::F32(a) => {
                let b = match y {
                    Some(Value::F32(b)) => b,
                    _ => 0.0,
                };
                Value::F32(match func {
                    Function::Sqrt => a.sqrt(),
                    Function::Exp => a.exp(),
                    Function::Log => a.ln(),
                    Function::Abs => a.abs(),
                    Function::Min => a.min(b),
                    Function::Max => a.max(b),
                    Function::Pow => a.powf(b),
                })
            }
            Value::F64(a) => {
                let b = match y {
                    Some(Value::F64(b)) => b,
                    _ => 0.0,
                };
                Value::F64(match func {
                    Function::Sqrt => a.sqrt(),
                    Function::Exp => a.exp(),
                    Function::Log => a.ln(),
                    Function::Abs => a.abs(),
                    Function::Min => a.min(b),
                    Function::Max => a.max(b),
                    Function::Pow => a.powf(b),
                })
            }
            Value::I32(a) => {
                let b = match y {
                    Some(Value::I32(b)) => b,
                    _ => 0,
                };
                Value::I32(match func {
                    Function::Abs => a.wrapping_abs(),
                    Function::Min => a.min(b),
                    Function::Max => a.max(b),
                    Function::Pow => a.wrapping_pow(self.exponent(i64::from(b), valid, pos)?),
                    _ => unreachable!("rejected for integer stencils"),
                })
            }
            Value::I64(a) => {
                let b = match y {
                    Some(Value::I64(b)) => b,
                    _ => 0,
                };
                Value::I64(match func {
                    Function::Abs => a.wrapping_abs(),
                    Function::Min => a.min(b),
                    Function::Max => a.max(b),
                    Function::Pow => a.wrapping_pow(self.exponent(b, valid, pos)?),
                    _ => unreachable!("rejected for integer stencils"),
                })
            }
        };
        Ok(Cell { value, valid })
    }

    fn exponent(&self, e: i64, valid: bool, pos: &[usize]) -> Result<u32, EvalError> {
        match u32::try_from(e) {
            Ok(e) => Ok(e),
            Err(_) if !valid => Ok(0),
            Err(_) => {
                Err(EvalError::BadExponent { stencil: self.stencil.name.clone(), exponent: e, position: pos.to_vec() })
            }
        }
    }
}

fn negate(v: Value) -> Value {
    match v {
        Value::F32(x) => Value::F32(-x),
        Value::F64(x) => Value::F64(-x),
        Value::I32(x) => Value::I32(x.wrapping_neg()),
        Value::I64(x) => Value::I64(x.wrapping_neg()),
    }
}

fn compare(op: CompareOp, a: Value, b: Value) -> bool {
    let ord = match (a, b) {
        (Value::F32(x), Value::F32(y)) => x.partial_cmp(&y),
        (Value::F64(x), Value::F64(y)) => x.partial_cmp(&y),
        (Value::I32(x), Value::I32(y)) => Some(x.cmp(&y)),
        (Value::I64(x), Value::I64(y)) => Some(x.cmp(&y)),
        _ => unreachable!("operands share the stencil dtype"),
    };
    use std::cmp::Ordering::*;
    match (op, ord) {
        (_, None) => op == CompareOp::Ne,
        (CompareOp::Lt, Some(o)) => o == Less,
        (CompareOp::Le, Some(o)) => o != Greater,
        (CompareOp::Gt, Some(o)) => o == Greater,
        (CompareOp::Ge, Some(o)) => o != Less,
        (CompareOp::Eq, Some(o)) => o == Equal,
        (CompareOp::Ne, Some(o)) => o != Equal,
    }
}

/// One-off evaluation of a stencil at `position`.
pub fn evaluate_cell(
    stencil: &CompiledStencil,
    position: &[usize],
    fetch: &mut dyn FnMut(Operand<'_>) -> Cell,
) -> Result<Cell, EvalError> {
    Evaluator::new(stencil).eval(position, fetch)
}

/// Row-major index to position.
pub fn unflatten(mut index: usize, shape: &[usize], out: &mut [usize]) {
    for (d, &e) in shape.iter().enumerate().rev() {
        out[d] = index % e;
        index /= e;
    }
}
