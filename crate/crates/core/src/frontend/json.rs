use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use serde_json::{json, Map, Value};

use super::parser::parse_expression;
use super::FrontendError;
use crate::expr::{Expression, GuardFallback};
use crate::program::{
    Boundary, DType, DataSource, DevicePlacement, DeviceSpec, Dimension, FieldSpec, InputBoundary, InputField,
    RemoteParams, StencilNode, StencilProgram,
};

const DEFAULT_DIMS: [&str; 3] = ["i", "j", "k"];

fn schema<T>(msg: impl Into<String>) -> Result<T, FrontendError> {
    Err(FrontendError::Schema(msg.into()))
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn as_object<'a>(v: &'a Value, what: &str) -> Result<&'a Map<String, Value>, FrontendError> {
    v.as_object().ok_or_else(|| FrontendError::Schema(format!("{what} must be an object")))
}

fn string_list(v: &Value, what: &str) -> Result<Vec<String>, FrontendError> {
    let arr = v.as_array().ok_or_else(|| FrontendError::Schema(format!("{what} must be an array of strings")))?;
    arr.iter()
        .map(|s| {
            s.as_str()
                .map(str::to_string)
                .ok_or_else(|| FrontendError::Schema(format!("{what} must be an array of strings")))
        })
        .collect()
}

fn positive_int(v: &Value, what: &str) -> Result<usize, FrontendError> {
    match v.as_u64() {
        Some(n) if n >= 1 => Ok(n as usize),
        _ => schema(format!("{what} must be a positive integer")),
    }
}

/// Parses a program description (see README for the schema).
pub fn parse_program(text: &str) -> Result<StencilProgram, FrontendError> {
    let root: Value = serde_json::from_str(text).map_err(|e| FrontendError::Json {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let top = as_object(&root, "program description")?;
    for key in top.keys() {
        if !matches!(
            key.as_str(),
            "inputs" | "outputs" | "shape" | "program" | "dimensions" | "vectorization" | "data" | "devices"
        ) {
            return schema(format!("unknown top-level key '{key}'"));
        }
    }
    let get = |k: &str| top.get(k).ok_or_else(|| FrontendError::Schema(format!("missing key '{k}'")));

    let shape: Vec<usize> = get("shape")?
        .as_array()
        .ok_or_else(|| FrontendError::Schema("shape must be an array".into()))?
        .iter()
        .map(|v| positive_int(v, "shape extents"))
        .collect::<Result<_, _>>()?;
    if shape.is_empty() || shape.len() > 3 {
        return schema(format!("shape must have 1 to 3 dimensions, got {}", shape.len()));
    }
    let dim_names = match top.get("dimensions") {
        Some(v) => string_list(v, "dimensions")?,
        None => DEFAULT_DIMS[..shape.len()].iter().map(|s| s.to_string()).collect(),
    };
    if dim_names.len() != shape.len() {
        return schema("dimensions and shape differ in length");
    }
    for (n, d) in dim_names.iter().enumerate() {
        if !is_identifier(d) || dim_names[..n].contains(d) {
            return schema(format!("bad or duplicate dimension name '{d}'"));
        }
    }
    let dimensions: Vec<Dimension> =
        dim_names.iter().zip(&shape).map(|(name, &extent)| Dimension { name: name.clone(), extent }).collect();

    // inputs
    let mut inputs = Vec::new();
    for (name, def) in as_object(get("inputs")?, "inputs")? {
        if !is_identifier(name) {
            return schema(format!("bad input name '{name}'"));
        }
        let def = as_object(def, &format!("input '{name}'"))?;
        let dtype = match def.get("dtype").and_then(Value::as_str) {
            Some(s) => {
                DType::parse(s).ok_or_else(|| FrontendError::Schema(format!("input '{name}': unknown dtype '{s}'")))?
            }
            None => return schema(format!("input '{name}' has no dtype")),
        };
        let dims = match def.get("dims") {
            Some(v) => string_list(v, &format!("input '{name}' dims"))?,
            None => dim_names.clone(),
        };
        let mut last = None;
        for d in &dims {
            let Some(pos) = dim_names.iter().position(|g| g == d) else {
                return Err(FrontendError::UnknownDimension { field: name.clone(), dim: d.clone() });
            };
            if last.is_some_and(|l| pos <= l) {
                return schema(format!("input '{name}': dims must follow the iteration dimension order"));
            }
            last = Some(pos);
        }
        inputs.push(InputField { spec: FieldSpec { name: name.clone(), dtype, dims }, data: None });
    }

    if let Some(data) = top.get("data") {
        for (name, src) in as_object(data, "data")? {
            let Some(input) = inputs.iter_mut().find(|i| &i.spec.name == name) else {
                return schema(format!("data source for unknown input '{name}'"));
            };
            input.data = Some(parse_data_source(name, src)?);
        }
    }

    let outputs = string_list(get("outputs")?, "outputs")?;

    // stencil nodes: declare every field first so nodes may reference later ones
    let node_defs = as_object(get("program")?, "program")?;
    let mut declared: Vec<FieldSpec> = inputs.iter().map(|i| i.spec.clone()).collect();
    for name in node_defs.keys() {
        if !is_identifier(name) || name == "guard" || name == "invalid" {
            return schema(format!("bad stencil name '{name}'"));
        }
        declared.push(FieldSpec { name: name.clone(), dtype: DType::Float32, dims: dim_names.clone() });
    }

    struct RawNode {
        name: String,
        dtype: Option<DType>,
        expression: Expression,
        boundary: Boundary,
    }
    let mut raw = Vec::new();
    for (name, def) in node_defs {
        let def = as_object(def, &format!("stencil '{name}'"))?;
        for key in def.keys() {
            if !matches!(key.as_str(), "code" | "boundary_condition" | "dtype") {
                return schema(format!("stencil '{name}': unknown key '{key}'"));
            }
        }
        let code = def
            .get("code")
            .and_then(Value::as_str)
            .ok_or_else(|| FrontendError::Schema(format!("stencil '{name}' has no code string")))?;
        let expression = parse_expression(code, &declared, &dim_names)
            .map_err(|source| FrontendError::Code { node: name.clone(), source })?;
        let dtype = match def.get("dtype") {
            None => None,
            Some(v) => Some(
                v.as_str()
                    .and_then(DType::parse)
                    .ok_or_else(|| FrontendError::Schema(format!("stencil '{name}': unknown dtype")))?,
            ),
        };
        let boundary = match def.get("boundary_condition") {
            None => Boundary::none(),
            Some(v) => parse_boundary(name, v)?,
        };
        raw.push(RawNode { name: name.clone(), dtype, expression, boundary });
    }

    // dtypes: each stencil's output dtype is the dtype of all the fields it reads
    let input_dtype: HashMap<&str, DType> = inputs.iter().map(|i| (i.spec.name.as_str(), i.spec.dtype)).collect();
    let index: HashMap<&str, usize> = raw.iter().enumerate().map(|(n, r)| (r.name.as_str(), n)).collect();
    let mut resolved: Vec<Option<DType>> = vec![None; raw.len()];
    fn resolve(
        n: usize,
        raw: &[RawNode],
        index: &HashMap<&str, usize>,
        input_dtype: &HashMap<&str, DType>,
        resolved: &mut Vec<Option<DType>>,
        visiting: &mut Vec<bool>,
    ) -> Result<Option<DType>, FrontendError> {
        if let Some(d) = resolved[n] {
            return Ok(Some(d));
        }
        if visiting[n] {
            // cycle, reported by validation
            return Ok(None);
        }
        visiting[n] = true;
        let node = &raw[n];
        let mut found: Option<(String, DType)> = None;
        for field in node.expression.fields() {
            let dt = match input_dtype.get(field) {
                Some(d) => Some(*d),
                None => match index.get(field) {
                    Some(&m) => resolve(m, raw, index, input_dtype, resolved, visiting)?,
                    None => None,
                },
            };
            let Some(dt) = dt else { continue };
            let expected = node.dtype.or(found.as_ref().map(|f| f.1));
            if let Some(e) = expected {
                if e != dt {
                    return Err(FrontendError::DtypeMismatch {
                        node: node.name.clone(),
                        field: field.to_string(),
                        expected: e.to_string(),
                        found: dt.to_string(),
                    });
                }
            }
            found.get_or_insert((field.to_string(), dt));
        }
        visiting[n] = false;
        let dt = node.dtype.or(found.map(|f| f.1)).unwrap_or(DType::Float32);
        resolved[n] = Some(dt);
        Ok(Some(dt))
    }
    let mut visiting = vec![false; raw.len()];
    for n in 0..raw.len() {
        resolve(n, &raw, &index, &input_dtype, &mut resolved, &mut visiting)?;
    }

    let nodes: Vec<StencilNode> = raw
        .into_iter()
        .zip(resolved)
        .map(|(r, dt)| StencilNode {
            name: r.name,
            dtype: dt.unwrap_or(DType::Float32),
            expression: r.expression,
            boundary: r.boundary,
        })
        .collect();

    let vectorization = match top.get("vectorization") {
        Some(v) => positive_int(v, "vectorization")?,
        None => 1,
    };
    let devices = match top.get("devices") {
        Some(v) => Some(parse_devices(v)?),
        None => None,
    };

    let program = StencilProgram { dimensions, inputs, outputs, nodes, vectorization, devices };
    check_nodes(&program)?;
    Ok(program)
}

/// Per-stencil checks that need the whole program: literal types, function
/// support, boundary coverage.
fn check_nodes(program: &StencilProgram) -> Result<(), FrontendError> {
    for node in &program.nodes {
        if !node.dtype.is_float() {
            check_integer_expression(&node.name, &node.expression)?;
        }
        let read = node.inputs();
        if let Boundary::PerInput(map) = &node.boundary {
            for field in map.keys() {
                if !read.contains(&field.as_str()) {
                    return schema(format!(
                        "stencil '{}': boundary condition for '{field}', which it does not read",
                        node.name
                    ));
                }
            }
            let axes = |f: &str| program.field_axes(f).unwrap_or_default();
            for (access, guards) in node.expression.accesses_with_guards() {
                if map.contains_key(&access.field) {
                    continue;
                }
                if can_go_out_of_bounds(&access.offsets, &axes(&access.field), &guards) {
                    return Err(FrontendError::MissingBoundary {
                        node: node.name.clone(),
                        field: access.field.clone(),
                    });
                }
            }
        }
    }
    Ok(())
}

fn check_integer_expression(node: &str, e: &Expression) -> Result<(), FrontendError> {
    let mut err = None;
    walk(e, &mut |e| match e {
        Expression::Literal(v) if v.fract() != 0.0 => {
            err.get_or_insert(format!("stencil '{node}': non-integer literal {v} in an integer stencil"));
        }
        Expression::Call { func, .. } if !func.supports_integers() => {
            err.get_or_insert(format!("stencil '{node}': {} is not defined for integers", func.name()));
        }
        _ => {}
    });
    match err {
        Some(msg) => schema(msg),
        None => Ok(()),
    }
}

fn walk(e: &Expression, f: &mut impl FnMut(&Expression)) {
    f(e);
    match e {
        Expression::Literal(_) | Expression::Access(_) => {}
        Expression::Neg(x) => walk(x, f),
        Expression::Binary { lhs, rhs, .. } => {
            walk(lhs, f);
            walk(rhs, f);
        }
        Expression::Call { args, .. } => args.iter().for_each(|a| walk(a, f)),
        Expression::Ternary { cond, then_branch, else_branch } => {
            walk(&cond.lhs, f);
            walk(&cond.rhs, f);
            walk(then_branch, f);
            walk(else_branch, f);
        }
        Expression::Guard(g) => {
            walk(&g.body, f);
            if let GuardFallback::Value(v) = &g.fallback {
                walk(v, f);
            }
        }
    }
}

/// An access can leave the domain unless each nonzero offset lies between
/// the center and the offset of an enclosing guard (both known in bounds).
pub(crate) fn can_go_out_of_bounds(offsets: &[i64], axes: &[usize], guards: &[&[i64]]) -> bool {
    offsets.iter().zip(axes).any(|(&o, &axis)| {
        o != 0
            && !guards.iter().any(|g| {
                let d = g[axis];
                (d > 0 && (0..=d).contains(&o)) || (d < 0 && (d..=0).contains(&o))
            })
    })
}

fn parse_boundary(node: &str, v: &Value) -> Result<Boundary, FrontendError> {
    match v {
        Value::String(s) if s == "shrink" => Ok(Boundary::Shrink),
        Value::Object(map) => {
            if map.get("type").and_then(Value::as_str) == Some("shrink") && map.len() == 1 {
                return Ok(Boundary::Shrink);
            }
            let mut out = BTreeMap::new();
            for (field, bc) in map {
                let bc = as_object(bc, &format!("stencil '{node}' boundary for '{field}'"))?;
                let kind = bc.get("type").and_then(Value::as_str);
                let parsed = match kind {
                    Some("constant") => {
                        let value = bc.get("value").and_then(Value::as_f64).ok_or_else(|| {
                            FrontendError::Schema(format!(
                                "stencil '{node}': constant boundary for '{field}' needs a numeric value"
                            ))
                        })?;
                        InputBoundary::Constant(value)
                    }
                    Some("copy") => {
                        if bc.contains_key("value") {
                            return schema(format!("stencil '{node}': copy boundary for '{field}' takes no value"));
                        }
                        InputBoundary::Copy
                    }
                    Some("shrink") => {
                        return schema(format!(
                            "stencil '{node}': shrink applies to the stencil output, not to input '{field}'"
                        ))
                    }
                    _ => return schema(format!("stencil '{node}': unknown boundary type for '{field}'")),
                };
                out.insert(field.clone(), parsed);
            }
            Ok(Boundary::PerInput(out))
        }
        _ => schema(format!("stencil '{node}': boundary_condition must be \"shrink\" or an object")),
    }
}

fn parse_data_source(name: &str, v: &Value) -> Result<DataSource, FrontendError> {
    let bad = || FrontendError::Schema(format!("data source for '{name}' is not recognised"));
    match v {
        Value::Number(n) => Ok(DataSource::Constant(n.as_f64().ok_or_else(bad)?)),
        Value::String(s) => {
            let seed = s
                .strip_prefix("random(")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|r| r.trim().parse::<u64>().ok())
                .ok_or_else(bad)?;
            Ok(DataSource::Random(seed))
        }
        Value::Object(map) => {
            if let Some(p) = map.get("file").and_then(Value::as_str) {
                Ok(DataSource::File(PathBuf::from(p)))
            } else if let Some(c) = map.get("constant").and_then(Value::as_f64) {
                Ok(DataSource::Constant(c))
            } else if let Some(s) = map.get("random").and_then(Value::as_u64) {
                Ok(DataSource::Random(s))
            } else {
                Err(bad())
            }
        }
        _ => Err(bad()),
    }
}

/// Parses a `devices` object (also used for stand-alone device files).
pub(crate) fn parse_devices(v: &Value) -> Result<DeviceSpec, FrontendError> {
    let obj = as_object(v, "devices")?;
    let placement = match (obj.get("count"), obj.get("assignment")) {
        (Some(c), None) => DevicePlacement::Count(positive_int(c, "devices.count")?),
        (None, Some(a)) => {
            let mut map = BTreeMap::new();
            for (node, dev) in as_object(a, "devices.assignment")? {
                let dev = dev
                    .as_u64()
                    .ok_or_else(|| FrontendError::Schema(format!("device index for '{node}' must be an integer")))?;
                map.insert(node.clone(), dev as usize);
            }
            DevicePlacement::Assignment(map)
        }
        _ => return schema("devices needs exactly one of 'count' or 'assignment'"),
    };
    let mut remote = RemoteParams::default();
    if let Some(r) = obj.get("remote") {
        let r = as_object(r, "devices.remote")?;
        if let Some(l) = r.get("latency") {
            remote.latency = l
                .as_u64()
                .ok_or_else(|| FrontendError::Schema("remote.latency must be a nonnegative integer".into()))?;
        }
        if let Some(b) = r.get("bandwidth") {
            match b.as_f64() {
                Some(b) if b > 0.0 => remote.bandwidth = Some(b),
                _ => return schema("remote.bandwidth must be a positive number"),
            }
        }
        if let Some(l) = r.get("links") {
            remote.links = positive_int(l, "remote.links")? as u32;
        }
    }
    Ok(DeviceSpec { placement, remote })
}

pub fn devices_to_json(d: &DeviceSpec) -> Value {
    let mut obj = Map::new();
    match &d.placement {
        DevicePlacement::Count(k) => {
            obj.insert("count".into(), json!(k));
        }
        DevicePlacement::Assignment(a) => {
            obj.insert("assignment".into(), json!(a));
        }
    }
    let mut remote = Map::new();
    remote.insert("latency".into(), json!(d.remote.latency));
    if let Some(b) = d.remote.bandwidth {
        remote.insert("bandwidth".into(), json!(b));
    }
    remote.insert("links".into(), json!(d.remote.links));
    obj.insert("remote".into(), Value::Object(remote));
    Value::Object(obj)
}

/// Canonical JSON form; `parse_program` of the output yields an equal program.
pub fn program_to_json(p: &StencilProgram) -> Value {
    let mut inputs = Map::new();
    for i in &p.inputs {
        inputs.insert(i.spec.name.clone(), json!({ "dtype": i.spec.dtype.name(), "dims": i.spec.dims }));
    }
    let mut program = Map::new();
    for n in &p.nodes {
        let boundary = match &n.boundary {
            Boundary::Shrink => json!("shrink"),
            Boundary::PerInput(map) => {
                let mut m = Map::new();
                for (f, bc) in map {
                    m.insert(
                        f.clone(),
                        match bc {
                            InputBoundary::Constant(v) => json!({"type": "constant", "value": v}),
                            InputBoundary::Copy => json!({"type": "copy"}),
                        },
                    );
                }
                Value::Object(m)
            }
        };
        program.insert(
            n.name.clone(),
            json!({
                "code": p.render(&n.expression),
                "boundary_condition": boundary,
                "dtype": n.dtype.name(),
            }),
        );
    }
    let mut top = Map::new();
    top.insert("dimensions".into(), json!(p.dim_names()));
    top.insert("shape".into(), json!(p.shape()));
    top.insert("inputs".into(), Value::Object(inputs));
    top.insert("outputs".into(), json!(p.outputs));
    top.insert("program".into(), Value::Object(program));
    top.insert("vectorization".into(), json!(p.vectorization));
    let data: Map<String, Value> = p
        .inputs
        .iter()
        .filter_map(|i| {
            let v = match i.data.as_ref()? {
                DataSource::File(path) => json!({ "file": path.to_string_lossy() }),
                DataSource::Constant(c) => json!(c),
                DataSource::Random(s) => json!(format!("random({s})")),
            };
            Some((i.spec.name.clone(), v))
        })
        .collect();
    if !data.is_empty() {
        top.insert("data".into(), Value::Object(data));
    }
    if let Some(d) = &p.devices {
        top.insert("devices".into(), devices_to_json(d));
    }
    Value::Object(top)
}

pub fn serialize_program(p: &StencilProgram) -> String {
    serde_json::to_string_pretty(&program_to_json(p)).expect("program JSON is always serializable")
}
