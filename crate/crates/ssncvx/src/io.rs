//! Problem-file and report serialization plus the end-to-end run driver
//! behind the command-line front end.
//!
//! Problem files are JSON objects with fields `n`, `p`, `f`, `A`, `B`, `Q`,
//! `c`, `P1`, `P2`, `trust_psd`. Infinite bounds are spelled `"inf"` /
//! `"-inf"`. Operators are written inline (`identity`, `dense`, `sparse`)
//! or pulled from a Matrix Market file via `{"mtx": "path"}`. Reports and
//! traces round-trip through JSON with shortest-exact float text.

use crate::model::{
    build_problem, BoxSet, FunctionKind, FunctionSpec, LinearOperator, ModelError, ProblemSpec,
};
use crate::newton::{self, Hooks, IterTrace, SolverConfig};
use crate::presets::{generate_preset, PresetError, PresetOptions};
use crate::report::SolveReport;
use serde_json::{Map, Value};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: std::io::Error },
    #[error("problem file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("field \"{field}\": {message}")]
    Field { field: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Preset(#[from] PresetError),
}

fn err(field: &str, message: impl Into<String>) -> IoError {
    IoError::Field { field: field.to_string(), message: message.into() }
}

fn join(parent: &str, key: &str) -> String {
    if parent.is_empty() {
        key.to_string()
    } else {
        format!("{parent}.{key}")
    }
}

fn as_obj<'a>(v: &'a Value, field: &str) -> Result<&'a Map<String, Value>, IoError> {
    v.as_object().ok_or_else(|| err(field, "expected an object"))
}

fn get<'a>(obj: &'a Map<String, Value>, key: &str, parent: &str) -> Result<&'a Value, IoError> {
    obj.get(key).ok_or_else(|| err(&join(parent, key), "missing"))
}

fn reject_unknown(obj: &Map<String, Value>, allowed: &[&str], parent: &str) -> Result<(), IoError> {
    for k in obj.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(err(&join(parent, k), "unrecognized field"));
        }
    }
    Ok(())
}

fn as_f64(v: &Value, field: &str) -> Result<f64, IoError> {
    match v {
        Value::Number(x) => x.as_f64().ok_or_else(|| err(field, "number out of range")),
        Value::String(s) => match s.trim() {
            "inf" | "+inf" | "Inf" | "+Inf" => Ok(f64::INFINITY),
            "-inf" | "-Inf" => Ok(f64::NEG_INFINITY),
            other => {
                other.parse().map_err(|_| err(field, format!("cannot parse \"{other}\" as a number")))
            }
        },
        _ => Err(err(field, "expected a number")),
    }
}

fn as_usize(v: &Value, field: &str) -> Result<usize, IoError> {
    v.as_u64().map(|x| x as usize).ok_or_else(|| err(field, "expected a nonnegative integer"))
}

fn as_f64_vec(v: &Value, field: &str) -> Result<Vec<f64>, IoError> {
    let arr = v.as_array().ok_or_else(|| err(field, "expected an array of numbers"))?;
    arr.iter().enumerate().map(|(i, x)| as_f64(x, &format!("{field}[{i}]"))).collect()
}

fn as_usize_vec(v: &Value, field: &str) -> Result<Vec<usize>, IoError> {
    let arr = v.as_array().ok_or_else(|| err(field, "expected an array of integers"))?;
    arr.iter().enumerate().map(|(i, x)| as_usize(x, &format!("{field}[{i}]"))).collect()
}

fn get_f64(obj: &Map<String, Value>, key: &str, parent: &str) -> Result<f64, IoError> {
    as_f64(get(obj, key, parent)?, &join(parent, key))
}

fn get_usize(obj: &Map<String, Value>, key: &str, parent: &str) -> Result<usize, IoError> {
    as_usize(get(obj, key, parent)?, &join(parent, key))
}

fn parse_box(v: &Value, field: &str) -> Result<BoxSet, IoError> {
    let obj = as_obj(v, field)?;
    if let Some(s) = obj.get("singleton") {
        reject_unknown(obj, &["singleton"], field)?;
        return Ok(BoxSet::singleton(as_f64_vec(s, &join(field, "singleton"))?));
    }
    reject_unknown(obj, &["lower", "upper"], field)?;
    let lower = as_f64_vec(get(obj, "lower", field)?, &join(field, "lower"))?;
    let upper = as_f64_vec(get(obj, "upper", field)?, &join(field, "upper"))?;
    BoxSet::new(lower, upper).map_err(IoError::Model)
}

fn parse_function(v: &Value, field: &str) -> Result<FunctionSpec, IoError> {
    let obj = as_obj(v, field)?;
    let kind_name = get(obj, "kind", field)?
        .as_str()
        .ok_or_else(|| err(&join(field, "kind"), "expected a string"))?;
    let (kind, params): (FunctionKind, &[&str]) = match kind_name {
        "zero" => (FunctionKind::Zero, &[]),
        "l1" => (FunctionKind::L1 { lambda: get_f64(obj, "lambda", field)? }, &["lambda"]),
        "l2-norm" => (FunctionKind::L2Norm { lambda: get_f64(obj, "lambda", field)? }, &["lambda"]),
        "l2-ball" => (FunctionKind::L2Ball { radius: get_f64(obj, "radius", field)? }, &["radius"]),
        "box" => {
            let set = parse_box(v, field)?;
            (FunctionKind::BoxIndicator { set }, &["lower", "upper", "singleton"])
        }
        "soc" => {
            let dims = as_usize_vec(get(obj, "dims", field)?, &join(field, "dims"))?;
            (FunctionKind::SocIndicator { dims }, &["dims"])
        }
        "soc-barrier" => {
            let dims = as_usize_vec(get(obj, "dims", field)?, &join(field, "dims"))?;
            let mu = get_f64(obj, "mu", field)?;
            (FunctionKind::SocBarrier { dims, mu }, &["dims", "mu"])
        }
        "nuclear" => (
            FunctionKind::NuclearNorm {
                lambda: get_f64(obj, "lambda", field)?,
                n1: get_usize(obj, "n1", field)?,
                n2: get_usize(obj, "n2", field)?,
            },
            &["lambda", "n1", "n2"],
        ),
        "spectral" => (
            FunctionKind::SpectralNorm {
                lambda: get_f64(obj, "lambda", field)?,
                n1: get_usize(obj, "n1", field)?,
                n2: get_usize(obj, "n2", field)?,
            },
            &["lambda", "n1", "n2"],
        ),
        "psd" => (FunctionKind::PsdIndicator { n: get_usize(obj, "n", field)? }, &["n"]),
        "fused" => (
            FunctionKind::Fused {
                lambda1: get_f64(obj, "lambda1", field)?,
                lambda2: get_f64(obj, "lambda2", field)?,
            },
            &["lambda1", "lambda2"],
        ),
        "squared-loss" => (FunctionKind::SquaredLoss, &[]),
        other => return Err(err(&join(field, "kind"), format!("unknown function kind \"{other}\""))),
    };
    let mut allowed = vec!["kind", "shift"];
    allowed.extend_from_slice(params);
    if kind_name == "box" {
        // box reuses the lower/upper keys of the same object
        allowed.retain(|k| *k != "singleton" || obj.contains_key("singleton"));
    }
    reject_unknown(obj, &allowed, field)?;
    let shift = match obj.get("shift") {
        Some(s) => Some(as_f64_vec(s, &join(field, "shift"))?),
        None => None,
    };
    Ok(FunctionSpec { kind, shift })
}

fn parse_operator(v: &Value, field: &str, base: Option<&Path>) -> Result<LinearOperator, IoError> {
    let obj = as_obj(v, field)?;
    reject_unknown(obj, &["identity", "dense", "sparse", "mtx"], field)?;
    if obj.len() != 1 {
        return Err(err(field, "expected exactly one of \"identity\", \"dense\", \"sparse\", \"mtx\""));
    }
    if let Some(nv) = obj.get("identity") {
        return Ok(LinearOperator::identity(as_usize(nv, &join(field, "identity"))?));
    }
    if let Some(d) = obj.get("dense") {
        let sub = join(field, "dense");
        let rows = d.as_array().ok_or_else(|| err(&sub, "expected an array of rows"))?;
        if rows.is_empty() {
            return Err(err(&sub, "matrix has no rows"));
        }
        let mut data = Vec::new();
        let mut cols = None;
        for (i, row) in rows.iter().enumerate() {
            let r = as_f64_vec(row, &format!("{sub}[{i}]"))?;
            match cols {
                None => cols = Some(r.len()),
                Some(c) if c != r.len() => {
                    return Err(err(&format!("{sub}[{i}]"), format!("expected {c} entries, got {}", r.len())));
                }
                _ => {}
            }
            data.extend(r);
        }
        let cols = cols.unwrap();
        if cols == 0 {
            return Err(err(&sub, "matrix has no columns"));
        }
        return Ok(LinearOperator::dense(nalgebra::DMatrix::from_row_slice(rows.len(), cols, &data)));
    }
    if let Some(s) = obj.get("sparse") {
        let sub = join(field, "sparse");
        let sobj = as_obj(s, &sub)?;
        reject_unknown(sobj, &["rows", "cols", "entries"], &sub)?;
        let rows = get_usize(sobj, "rows", &sub)?;
        let cols = get_usize(sobj, "cols", &sub)?;
        let entries = get(sobj, "entries", &sub)?
            .as_array()
            .ok_or_else(|| err(&join(&sub, "entries"), "expected an array of [row, col, value]"))?;
        let mut triplets = Vec::with_capacity(entries.len());
        for (k, e) in entries.iter().enumerate() {
            let label = format!("{sub}.entries[{k}]");
            let t = e.as_array().filter(|t| t.len() == 3).ok_or_else(|| err(&label, "expected [row, col, value]"))?;
            triplets.push((
                as_usize(&t[0], &label)?,
                as_usize(&t[1], &label)?,
                as_f64(&t[2], &label)?,
            ));
        }
        return LinearOperator::from_triplets(rows, cols, &triplets).map_err(IoError::Model);
    }
    let mtx = obj.get("mtx").unwrap();
    let sub = join(field, "mtx");
    let rel = mtx.as_str().ok_or_else(|| err(&sub, "expected a file path string"))?;
    let path = match base {
        Some(b) => b.join(rel),
        None => PathBuf::from(rel),
    };
    read_matrix_market(&path)
}

/// Parse a JSON problem document. `base` resolves relative Matrix Market
/// references.
pub fn parse_problem(text: &str, base: Option<&Path>) -> Result<ProblemSpec, IoError> {
    let v: Value = serde_json::from_str(text)?;
    let obj = as_obj(&v, "problem")?;
    reject_unknown(obj, &["n", "p", "f", "A", "B", "Q", "c", "P1", "P2", "trust_psd"], "")?;
    let n = as_usize(get(obj, "n", "")?, "n")?;
    let p = match obj.get("p") {
        Some(pv) => parse_function(pv, "p")?,
        None => FunctionSpec::new(FunctionKind::Zero),
    };
    let c = match obj.get("c") {
        Some(cv) => as_f64_vec(cv, "c")?,
        None => vec![0.0; n],
    };
    let mut spec = ProblemSpec::new(n, p, c);
    if let Some(fv) = obj.get("f") {
        spec.f = Some(parse_function(fv, "f")?);
    }
    if let Some(av) = obj.get("A") {
        spec.a = Some(parse_operator(av, "A", base)?);
    }
    if let Some(bv) = obj.get("B") {
        spec.b = Some(parse_operator(bv, "B", base)?);
    }
    if let Some(qv) = obj.get("Q") {
        spec.q = Some(parse_operator(qv, "Q", base)?);
    }
    if let Some(p1) = obj.get("P1") {
        spec.p1 = Some(parse_box(p1, "P1")?);
    }
    if let Some(p2) = obj.get("P2") {
        spec.p2 = Some(parse_box(p2, "P2")?);
    }
    if let Some(t) = obj.get("trust_psd") {
        spec.trust_psd = t.as_bool().ok_or_else(|| err("trust_psd", "expected a boolean"))?;
    }
    Ok(spec)
}

pub fn read_problem(path: &Path) -> Result<ProblemSpec, IoError> {
    let text = fs::read_to_string(path)
        .map_err(|e| IoError::File { path: path.to_path_buf(), source: e })?;
    parse_problem(&text, path.parent())
}

fn num(x: f64) -> Value {
    if x.is_finite() {
        Value::from(x)
    } else if x > 0.0 {
        Value::from("inf")
    } else {
        Value::from("-inf")
    }
}

fn num_vec(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

fn box_to_value(set: &BoxSet) -> Value {
    let mut m = Map::new();
    m.insert("lower".into(), num_vec(&set.lower));
    m.insert("upper".into(), num_vec(&set.upper));
    Value::Object(m)
}

fn function_to_value(f: &FunctionSpec) -> Value {
    let mut m = Map::new();
    let kind = match &f.kind {
        FunctionKind::Zero => "zero",
        FunctionKind::L1 { lambda } => {
            m.insert("lambda".into(), num(*lambda));
            "l1"
        }
        FunctionKind::L2Norm { lambda } => {
            m.insert("lambda".into(), num(*lambda));
            "l2-norm"
        }
        FunctionKind::L2Ball { radius } => {
            m.insert("radius".into(), num(*radius));
            "l2-ball"
        }
        FunctionKind::BoxIndicator { set } => {
            m.insert("lower".into(), num_vec(&set.lower));
            m.insert("upper".into(), num_vec(&set.upper));
            "box"
        }
        FunctionKind::SocIndicator { dims } => {
            m.insert("dims".into(), Value::Array(dims.iter().map(|&d| Value::from(d)).collect()));
            "soc"
        }
        FunctionKind::SocBarrier { dims, mu } => {
            m.insert("dims".into(), Value::Array(dims.iter().map(|&d| Value::from(d)).collect()));
            m.insert("mu".into(), num(*mu));
            "soc-barrier"
        }
        FunctionKind::NuclearNorm { lambda, n1, n2 } => {
            m.insert("lambda".into(), num(*lambda));
            m.insert("n1".into(), Value::from(*n1));
            m.insert("n2".into(), Value::from(*n2));
            "nuclear"
        }
        FunctionKind::SpectralNorm { lambda, n1, n2 } => {
            m.insert("lambda".into(), num(*lambda));
            m.insert("n1".into(), Value::from(*n1));
            m.insert("n2".into(), Value::from(*n2));
            "spectral"
        }
        FunctionKind::PsdIndicator { n } => {
            m.insert("n".into(), Value::from(*n));
            "psd"
        }
        FunctionKind::Fused { lambda1, lambda2 } => {
            m.insert("lambda1".into(), num(*lambda1));
            m.insert("lambda2".into(), num(*lambda2));
            "fused"
        }
        FunctionKind::SquaredLoss => "squared-loss",
    };
    m.insert("kind".into(), Value::from(kind));
    if let Some(s) = &f.shift {
        m.insert("shift".into(), num_vec(s));
    }
    Value::Object(m)
}

fn operator_to_value(op: &LinearOperator) -> Value {
    use crate::model::OpRep;
    let mut m = Map::new();
    match &op.rep {
        OpRep::Identity => {
            m.insert("identity".into(), Value::from(op.rows));
        }
        OpRep::Dense(d) => {
            let rows: Vec<Value> = (0..d.nrows())
                .map(|i| Value::Array((0..d.ncols()).map(|j| num(d[(i, j)])).collect()))
                .collect();
            m.insert("dense".into(), Value::Array(rows));
        }
        OpRep::Sparse(s) => {
            let mut entries = Vec::with_capacity(s.vals.len());
            for j in 0..s.cols {
                for k in s.colptr[j]..s.colptr[j + 1] {
                    entries.push(Value::Array(vec![
                        Value::from(s.rowind[k]),
                        Value::from(j),
                        num(s.vals[k]),
                    ]));
                }
            }
            let mut sm = Map::new();
            sm.insert("rows".into(), Value::from(s.rows));
            sm.insert("cols".into(), Value::from(s.cols));
            sm.insert("entries".into(), Value::Array(entries));
            m.insert("sparse".into(), Value::Object(sm));
        }
    }
    Value::Object(m)
}

pub fn problem_to_value(spec: &ProblemSpec) -> Value {
    let mut m = Map::new();
    m.insert("n".into(), Value::from(spec.n));
    m.insert("p".into(), function_to_value(&spec.p));
    if let Some(f) = &spec.f {
        m.insert("f".into(), function_to_value(f));
    }
    if let Some(a) = &spec.a {
        m.insert("A".into(), operator_to_value(a));
    }
    if let Some(b) = &spec.b {
        m.insert("B".into(), operator_to_value(b));
    }
    if let Some(q) = &spec.q {
        m.insert("Q".into(), operator_to_value(q));
    }
    m.insert("c".into(), num_vec(&spec.c));
    if let Some(p1) = &spec.p1 {
        m.insert("P1".into(), box_to_value(p1));
    }
    if let Some(p2) = &spec.p2 {
        m.insert("P2".into(), box_to_value(p2));
    }
    if spec.trust_psd {
        m.insert("trust_psd".into(), Value::from(true));
    }
    Value::Object(m)
}

/// Canonical text encoding; equal specs produce identical bytes.
pub fn problem_to_string(spec: &ProblemSpec) -> String {
    serde_json::to_string_pretty(&problem_to_value(spec)).expect("problem encoding")
}

/// Parse a Matrix Market document (coordinate or array, real/integer,
/// general or symmetric coordinate).
pub fn parse_matrix_market(text: &str) -> Result<LinearOperator, IoError> {
    let f = "mtx";
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| err(f, "empty file"))?;
    let toks: Vec<String> = header.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if toks.len() < 4 || toks[0] != "%%matrixmarket" || toks[1] != "matrix" {
        return Err(err(f, "missing %%MatrixMarket matrix header"));
    }
    let format = toks[2].as_str();
    let value_field = toks[3].as_str();
    let symmetry = toks.get(4).map(String::as_str).unwrap_or("general");
    if value_field != "real" && value_field != "integer" {
        return Err(err(f, format!("unsupported value field \"{value_field}\"")));
    }
    let mut data = lines
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('%'));
    let size = data.next().ok_or_else(|| err(f, "missing size line"))?;
    let dims: Vec<&str> = size.split_whitespace().collect();
    match (format, symmetry) {
        ("coordinate", "general") | ("coordinate", "symmetric") => {
            if dims.len() != 3 {
                return Err(err(f, "coordinate size line must be `rows cols nnz`"));
            }
            let rows: usize = dims[0].parse().map_err(|_| err(f, "bad row count"))?;
            let cols: usize = dims[1].parse().map_err(|_| err(f, "bad column count"))?;
            let nnz: usize = dims[2].parse().map_err(|_| err(f, "bad entry count"))?;
            let mut triplets = Vec::with_capacity(nnz);
            for (k, line) in data.enumerate() {
                let t: Vec<&str> = line.split_whitespace().collect();
                if t.len() != 3 {
                    return Err(err(f, format!("entry {} must be `row col value`", k + 1)));
                }
                let i: usize = t[0].parse().map_err(|_| err(f, format!("bad row index in entry {}", k + 1)))?;
                let j: usize = t[1].parse().map_err(|_| err(f, format!("bad column index in entry {}", k + 1)))?;
                let v: f64 = t[2].parse().map_err(|_| err(f, format!("bad value in entry {}", k + 1)))?;
                if i == 0 || j == 0 {
                    return Err(err(f, format!("entry {} uses 0-based indices; Matrix Market is 1-based", k + 1)));
                }
                triplets.push((i - 1, j - 1, v));
                if symmetry == "symmetric" && i != j {
                    triplets.push((j - 1, i - 1, v));
                }
            }
            if triplets.len() < nnz {
                return Err(err(f, format!("expected {} entries, found {}", nnz, triplets.len())));
            }
            LinearOperator::from_triplets(rows, cols, &triplets).map_err(IoError::Model)
        }
        ("array", "general") => {
            if dims.len() != 2 {
                return Err(err(f, "array size line must be `rows cols`"));
            }
            let rows: usize = dims[0].parse().map_err(|_| err(f, "bad row count"))?;
            let cols: usize = dims[1].parse().map_err(|_| err(f, "bad column count"))?;
            let mut vals = Vec::with_capacity(rows * cols);
            for (k, line) in data.enumerate() {
                for tok in line.split_whitespace() {
                    let v: f64 =
                        tok.parse().map_err(|_| err(f, format!("bad value on data line {}", k + 1)))?;
                    vals.push(v);
                }
            }
            if vals.len() != rows * cols {
                return Err(err(f, format!("expected {} values, found {}", rows * cols, vals.len())));
            }
            Ok(LinearOperator::dense(nalgebra::DMatrix::from_column_slice(rows, cols, &vals)))
        }
        _ => Err(err(f, format!("unsupported matrix layout \"{format} {symmetry}\""))),
    }
}

pub fn read_matrix_market(path: &Path) -> Result<LinearOperator, IoError> {
    let text = fs::read_to_string(path)
        .map_err(|e| IoError::File { path: path.to_path_buf(), source: e })?;
    parse_matrix_market(&text)
}

pub fn write_report(path: &Path, report: &SolveReport) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(report)?;
    fs::write(path, text).map_err(|e| IoError::File { path: path.to_path_buf(), source: e })
}

pub fn read_report(path: &Path) -> Result<SolveReport, IoError> {
    let text = fs::read_to_string(path)
        .map_err(|e| IoError::File { path: path.to_path_buf(), source: e })?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_trace(path: &Path, trace: &[IterTrace]) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(trace)?;
    fs::write(path, text).map_err(|e| IoError::File { path: path.to_path_buf(), source: e })
}

/// Where a run's problem comes from.
#[derive(Debug, Clone)]
pub enum ProblemSource {
    File(PathBuf),
    Preset { name: String, seed: u64, opts: PresetOptions },
}

/// Everything one solver invocation needs.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub source: ProblemSource,
    pub config: SolverConfig,
    pub report_path: Option<PathBuf>,
    pub trace_path: Option<PathBuf>,
    pub verbosity: u8,
}

pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_INPUT_ERROR: i32 = 3;

pub fn load_problem(source: &ProblemSource) -> Result<ProblemSpec, IoError> {
    match source {
        ProblemSource::File(path) => read_problem(path),
        ProblemSource::Preset { name, seed, opts } => Ok(generate_preset(name, *seed, *opts)?),
    }
}

/// Load, solve, log, and write outputs. Returns the process exit code:
/// 0 converged, 2 finished without converging, 3 input error.
pub fn run(manifest: &RunManifest) -> i32 {
    let spec = match load_problem(&manifest.source) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INPUT_ERROR;
        }
    };
    let problem = match build_problem(spec) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INPUT_ERROR;
        }
    };
    if let Err(msg) = manifest.config.validate() {
        eprintln!("error: {msg}");
        return EXIT_INPUT_ERROR;
    }
    let verbose = manifest.verbosity > 0;
    let mut hooks = Hooks::default();
    if verbose {
        println!("   k  ||F||         eta_max    tau        sigma      accept");
        hooks.progress = Some(Box::new(|t: &IterTrace| {
            println!(
                "{:4}  {:.6e}  {:.3e}  {:.3e}  {:.3e}  {}",
                t.k,
                t.norm_f,
                t.eta_max,
                t.tau,
                t.sigma,
                t.accepted_by.as_str()
            );
        }));
    }
    let (report, _w) = newton::solve_with_hooks(&problem, &manifest.config, None, hooks);
    let mut code = if report.converged() { EXIT_CONVERGED } else { EXIT_NOT_CONVERGED };
    if let Some(p) = &manifest.report_path {
        if let Err(e) = write_report(p, &report) {
            eprintln!("error: {e}");
            code = EXIT_INPUT_ERROR;
        }
    }
    if let Some(p) = &manifest.trace_path {
        if let Err(e) = write_trace(p, &report.trace) {
            eprintln!("error: {e}");
            code = EXIT_INPUT_ERROR;
        }
    }
    println!(
        "{}: {} iterations, eta_max {:.3e}, pobj {:.9e}, wall {:.3}s",
        report.status.as_str(),
        report.iterations,
        report.kkt.eta_max,
        report.kkt.pobj,
        report.wall_time
    );
    code
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::PRESET_NAMES;

    fn small_spec(name: &str) -> ProblemSpec {
        let (n, m) = match name {
            "lasso" => (30, Some(12)),
            "fused-lasso" => (24, Some(10)),
            "qp-portfolio" => (16, None),
            "socp" => (10, Some(5)),
            "spca" => (4, None),
            "lrmc" => (6, None),
            _ => unreachable!(),
        };
        generate_preset(name, 5, PresetOptions::sized(Some(n), m)).unwrap()
    }

    #[test]
    fn problem_text_round_trips_every_preset() {
        for name in PRESET_NAMES {
            let spec = small_spec(name);
            let text = problem_to_string(&spec);
            let back = parse_problem(&text, None).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(back == spec, "{name} round-trip changed the spec");
            assert_eq!(text, problem_to_string(&back), "{name} bytes unstable");
        }
    }

    #[test]
    fn infinite_bounds_round_trip() {
        let mut spec = ProblemSpec::new(
            2,
            FunctionSpec::new(FunctionKind::Zero),
            vec![1.0, -1.0],
        );
        spec.p1 = Some(BoxSet::new(vec![f64::NEG_INFINITY, 0.0], vec![1.0, f64::INFINITY]).unwrap());
        let back = parse_problem(&problem_to_string(&spec), None).unwrap();
        assert!(back == spec);
    }

    #[test]
    fn missing_and_unknown_fields_are_named() {
        let e = parse_problem("{\"p\": {\"kind\": \"zero\"}}", None).unwrap_err();
        assert!(e.to_string().contains("\"n\""), "got: {e}");
        let e = parse_problem("{\"n\": 2, \"bogus\": 1}", None).unwrap_err();
        assert!(e.to_string().contains("bogus"), "got: {e}");
        let e = parse_problem("{\"n\": 2, \"p\": {\"kind\": \"l1\"}}", None).unwrap_err();
        assert!(e.to_string().contains("lambda"), "got: {e}");
    }

    #[test]
    fn matrix_market_coordinate_and_array() {
        let coo = "%%MatrixMarket matrix coordinate real general\n% comment\n2 3 2\n1 2 4.5\n2 3 -1\n";
        let op = parse_matrix_market(coo).unwrap();
        let d = op.to_dense();
        assert_eq!(d[(0, 1)], 4.5);
        assert_eq!(d[(1, 2)], -1.0);
        assert_eq!(d.sum(), 3.5);

        let sym = "%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 2\n2 1 3\n";
        let d = parse_matrix_market(sym).unwrap().to_dense();
        assert_eq!(d[(0, 1)], 3.0);
        assert_eq!(d[(1, 0)], 3.0);

        let arr = "%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n4\n";
        let d = parse_matrix_market(arr).unwrap().to_dense();
        assert_eq!(d[(1, 0)], 2.0);
        assert_eq!(d[(0, 1)], 3.0);

        let bad = parse_matrix_market("%%MatrixMarket matrix coordinate complex general\n1 1 0\n");
        assert!(bad.is_err());
    }

    #[test]
    fn mtx_reference_resolves_relative_to_problem_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("op.mtx"),
            "%%MatrixMarket matrix array real general\n1 2\n1\n1\n",
        )
        .unwrap();
        let text = "{\"n\": 2, \"p\": {\"kind\": \"zero\"}, \"A\": {\"mtx\": \"op.mtx\"}, \"P2\": {\"singleton\": [1.0]}}";
        let path = dir.path().join("prob.json");
        std::fs::write(&path, text).unwrap();
        let spec = read_problem(&path).unwrap();
        let a = spec.a.unwrap().to_dense();
        assert_eq!(a.sum(), 2.0);
    }

    #[test]
    fn run_writes_report_and_trace() {
        let dir = tempfile::tempdir().unwrap();
        let report_path = dir.path().join("report.json");
        let trace_path = dir.path().join("trace.json");
        let manifest = RunManifest {
            source: ProblemSource::Preset {
                name: "lasso".into(),
                seed: 1,
                opts: PresetOptions::sized(Some(40), Some(15)),
            },
            config: SolverConfig::default(),
            report_path: Some(report_path.clone()),
            trace_path: Some(trace_path.clone()),
            verbosity: 0,
        };
        assert_eq!(run(&manifest), EXIT_CONVERGED);
        let report = read_report(&report_path).unwrap();
        assert!(report.converged());
        assert!(report.kkt.eta_max <= 1e-6);
        assert!(!report.trace.is_empty());
        // byte-exact numeric round-trip
        let again = dir.path().join("report2.json");
        write_report(&again, &report).unwrap();
        assert_eq!(fs::read(&report_path).unwrap(), fs::read(&again).unwrap());
        let trace: Vec<IterTrace> = serde_json::from_str(&fs::read_to_string(&trace_path).unwrap()).unwrap();
        assert_eq!(trace.len(), report.trace.len());
    }

    #[test]
    fn run_reports_input_errors_with_code_3() {
        let manifest = RunManifest {
            source: ProblemSource::Preset {
                name: "nope".into(),
                seed: 1,
                opts: PresetOptions::default(),
            },
            config: SolverConfig::default(),
            report_path: None,
            trace_path: None,
            verbosity: 0,
        };
        assert_eq!(run(&manifest), EXIT_INPUT_ERROR);
    }

    #[test]
    fn time_limit_still_writes_report() {
        let dir = tempfile::tempdir().unwrap();
        let report_path = dir.path().join("report.json");
        let manifest = RunManifest {
            source: ProblemSource::Preset {
                name: "lasso".into(),
                seed: 1,
                opts: PresetOptions::sized(Some(40), Some(15)),
            },
            config: SolverConfig { time_limit: Some(0.0), ..SolverConfig::default() },
            report_path: Some(report_path.clone()),
            trace_path: None,
            verbosity: 0,
        };
        assert_eq!(run(&manifest), EXIT_NOT_CONVERGED);
        let report = read_report(&report_path).unwrap();
        assert!(!report.converged());
    }
}
