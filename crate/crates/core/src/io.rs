//! Run configuration, CSV/JSON export, and loading of exported profiles.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::continuation::{ContinuationTrace, EventRecord, SweepPlan, DEFAULT_EVENT_TOL};
use crate::error::{CceError, Result};
use crate::geometry::{radial_sectional, reconstruct_metric, slice_components};
use crate::series::{fg_series_origin, series_infinity, NonlocalParams};
use crate::solver::{Mesh, SeedMode, SolutionProfile, SolveReport, SolverOptions};
use crate::systems::{BoundaryData, Family, SystemKind};
use crate::verification::{VariationLedger, VerificationReport, C4, ETA0};

pub const SCHEMA_VERSION: &str = "1";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Shortest decimal that parses back to the same `f64` (at most 17 digits).
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        // keep the sign of negative zero out of files
        return "0".into();
    }
    let s = format!("{v:?}");
    s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
}

pub fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| CceError::Parse(format!("not a number: `{s}`")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub end: f64,
    pub step: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub event_tol: f64,
    pub direction: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub system: SystemKind,
    pub n: usize,
    pub phi0: Vec<f64>,
    pub grid: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub refine: bool,
    pub seed: SeedMode,
    pub experimental_sp: bool,
    pub sweep: Option<SweepConfig>,
    pub out: Option<String>,
}

const KEYS: [&str; 16] = [
    "system",
    "n",
    "phi0",
    "grid",
    "tol",
    "max_iter",
    "refine",
    "seed",
    "experimental_sp",
    "sweep_start",
    "sweep_end",
    "sweep_step",
    "sweep_min_step",
    "sweep_max_step",
    "event_tol",
    "sweep_direction",
];

fn cfg_err<T>(line: usize, key: &str, msg: impl Into<String>) -> Result<T> {
    Err(CceError::Config { line, key: key.into(), msg: msg.into() })
}

/// Parse flat `key = value` text. Unknown and repeated keys are errors.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
    let mut last_line = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((k, v)) = body.split_once('=') else {
            return cfg_err(line, body, "expected `key = value`");
        };
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return cfg_err(line, k, "unknown key");
        }
        if entries.insert(k.to_string(), (line, v.to_string())).is_some() {
            return cfg_err(line, k, "key given twice");
        }
    }
    let get = |k: &str| entries.get(k).map(|(l, v)| (*l, v.as_str()));
    let need = |k: &str| get(k).ok_or_else(|| CceError::Config { line: last_line, key: k.into(), msg: "missing required key".into() });
    let num = |k: &str, default: f64| -> Result<f64> {
        match get(k) {
            None => Ok(default),
            Some((l, v)) => v.parse::<f64>().ok().filter(|x| x.is_finite()).map_or_else(|| cfg_err(l, k, "expected a finite number"), Ok),
        }
    };
    let int = |k: &str, default: usize| -> Result<usize> {
        match get(k) {
            None => Ok(default),
            Some((l, v)) => v.parse::<usize>().map_or_else(|_| cfg_err(l, k, "expected a non-negative integer"), Ok),
        }
    };
    let boolean = |k: &str, default: bool| -> Result<bool> {
        match get(k) {
            None => Ok(default),
            Some((_, "true")) => Ok(true),
            Some((_, "false")) => Ok(false),
            Some((l, _)) => cfg_err(l, k, "expected true or false"),
        }
    };
    let list = |k: &str, l: usize, v: &str| -> Result<Vec<f64>> {
        v.split(',').map(|t| t.trim().parse::<f64>().ok().filter(|x| x.is_finite())).collect::<Option<Vec<_>>>().map_or_else(|| cfg_err(l, k, "expected comma-separated numbers"), Ok)
    };

    let (sl, sv) = need("system")?;
    let Some(system) = SystemKind::parse(sv) else {
        return cfg_err(sl, "system", "expected gberger, su or sp");
    };
    let (nl, nv) = need("n")?;
    let Ok(n) = nv.parse::<usize>() else {
        return cfg_err(nl, "n", "expected a positive integer");
    };
    if let Err(e) = system.check_dimension(n) {
        let msg = match e {
            CceError::Usage(m) => m,
            other => other.to_string(),
        };
        return cfg_err(nl, "n", msg);
    }
    let (pl, pv) = need("phi0")?;
    let phi0 = list("phi0", pl, pv)?;
    if phi0.len() != system.free_count() {
        return cfg_err(pl, "phi0", format!("{} expects {} value(s)", system.name(), system.free_count()));
    }
    if phi0.iter().any(|&p| p <= 0.0) {
        return cfg_err(pl, "phi0", "phi0 must be positive");
    }
    let grid = int("grid", 128)?;
    if grid < 3 {
        return cfg_err(get("grid").map_or(0, |g| g.0), "grid", "grid must be at least 3");
    }
    let tol = num("tol", 1e-10)?;
    if tol <= 0.0 {
        return cfg_err(get("tol").map_or(0, |g| g.0), "tol", "tol must be positive");
    }
    let max_iter = int("max_iter", 50)?;
    if max_iter == 0 {
        return cfg_err(get("max_iter").map_or(0, |g| g.0), "max_iter", "max_iter must be positive");
    }
    let refine = boolean("refine", true)?;
    let seed = match get("seed") {
        None | Some((_, "blend")) => SeedMode::Blend,
        Some((_, "zero")) => SeedMode::Zero,
        Some((l, _)) => return cfg_err(l, "seed", "expected blend or zero"),
    };
    let experimental_sp = boolean("experimental_sp", false)?;
    if system == SystemKind::SpInvariant && !experimental_sp {
        return cfg_err(sl, "system", "sp is only solved with experimental_sp = true");
    }

    let sweep_keys = ["sweep_start", "sweep_end", "sweep_step", "sweep_min_step", "sweep_max_step", "event_tol", "sweep_direction"];
    let sweep = if sweep_keys.iter().any(|k| get(k).is_some()) {
        if let Some((l, _)) = get("sweep_start") {
            if num("sweep_start", 1.0)? != 1.0 {
                return cfg_err(l, "sweep_start", "the sweep starts at 1 (round data)");
            }
        }
        let (el, _) = need("sweep_end")?;
        let end = num("sweep_end", 1.0)?;
        if end <= 0.0 {
            return cfg_err(el, "sweep_end", "sweep_end must be positive");
        }
        let step = num("sweep_step", 0.05)?;
        let min_step = num("sweep_min_step", 1e-4)?;
        let max_step = num("sweep_max_step", 0.2)?;
        let event_tol = num("event_tol", DEFAULT_EVENT_TOL)?;
        for (k, v) in [("sweep_step", step), ("sweep_min_step", min_step), ("sweep_max_step", max_step), ("event_tol", event_tol)] {
            if v <= 0.0 {
                return cfg_err(get(k).map_or(0, |g| g.0), k, format!("{k} must be positive"));
            }
        }
        if min_step > max_step {
            return cfg_err(get("sweep_min_step").map_or(0, |g| g.0), "sweep_min_step", "sweep_min_step exceeds sweep_max_step");
        }
        let direction = match get("sweep_direction") {
            None => None,
            Some((l, v)) => {
                let d = list("sweep_direction", l, v)?;
                if d.len() != system.free_count() {
                    return cfg_err(l, "sweep_direction", format!("expects {} value(s)", system.free_count()));
                }
                Some(d)
            }
        };
        Some(SweepConfig { end, step, min_step, max_step, event_tol, direction })
    } else {
        None
    };
    Ok(RunConfig { system, n, phi0, grid, tol, max_iter, refine, seed, experimental_sp, sweep, out: None })
}

impl RunConfig {
    pub fn boundary_data(&self) -> Result<BoundaryData> {
        BoundaryData::new(self.system, self.n, self.phi0.clone())
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            nodes: self.grid,
            tol: self.tol,
            max_iter: self.max_iter,
            refine: self.refine,
            seed: self.seed,
            experimental_sp: self.experimental_sp,
            ..SolverOptions::default()
        }
    }

    pub fn sweep_plan(&self, threads: usize) -> Option<SweepPlan> {
        let s = self.sweep.as_ref()?;
        let mut plan = SweepPlan::new(self.system, self.n, s.end);
        plan.initial_step = s.step;
        plan.min_step = s.min_step;
        plan.max_step = s.max_step;
        plan.event_tol = s.event_tol;
        plan.threads = threads.max(1);
        if let Some(d) = &s.direction {
            plan.direction = d.clone();
        }
        Some(plan)
    }

    /// Normalized `key = value` form (sorted keys, defaults written out).
    pub fn canonical(&self) -> String {
        let mut m: BTreeMap<&str, String> = BTreeMap::new();
        let join = |v: &[f64]| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",");
        m.insert("system", self.system.name().into());
        m.insert("n", self.n.to_string());
        m.insert("phi0", join(&self.phi0));
        m.insert("grid", self.grid.to_string());
        m.insert("tol", fmt_f64(self.tol));
        m.insert("max_iter", self.max_iter.to_string());
        m.insert("refine", self.refine.to_string());
        m.insert("seed", seed_name(self.seed).into());
        m.insert("experimental_sp", self.experimental_sp.to_string());
        if let Some(s) = &self.sweep {
            m.insert("sweep_start", "1".into());
            m.insert("sweep_end", fmt_f64(s.end));
            m.insert("sweep_step", fmt_f64(s.step));
            m.insert("sweep_min_step", fmt_f64(s.min_step));
            m.insert("sweep_max_step", fmt_f64(s.max_step));
            m.insert("event_tol", fmt_f64(s.event_tol));
            if let Some(d) = &s.direction {
                m.insert("sweep_direction", join(d));
            }
        }
        m.iter().fold(String::new(), |mut acc, (k, v)| {
            let _ = writeln!(acc, "{k} = {v}");
            acc
        })
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut acc, b| {
            let _ = write!(acc, "{b:02x}");
            acc
        })
    }
}

fn seed_name(s: SeedMode) -> &'static str {
    match s {
        SeedMode::Blend => "blend",
        SeedMode::Zero => "zero",
    }
}

/// Whole-file write through a temporary file in the target directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CceError::Io(e.error))?;
    Ok(())
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn csv_bytes(header: &[String], rows: &[Vec<String>], trailer: &[(String, String)]) -> Result<Vec<u8>> {
    let mut w = csv_writer();
    let io = |e: csv::Error| CceError::Io(std::io::Error::other(e.to_string()));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    let mut out = w.into_inner().map_err(|e| CceError::Io(std::io::Error::other(e.to_string())))?;
    for (k, v) in trailer {
        out.extend_from_slice(format!("# {k} = {v}\n").as_bytes());
    }
    Ok(out)
}

pub fn profile_header(kind: SystemKind, directions: usize) -> Vec<String> {
    let m = kind.unknowns();
    let mut h = vec!["x".to_string()];
    h.extend((1..=m).map(|i| format!("y{i}")));
    h.extend((1..=m).map(|i| format!("dy{i}")));
    h.push("K".into());
    h.extend(kind.ratio_names().iter().map(|s| s.to_string()));
    h.push("Phi".into());
    h.extend((1..=directions).map(|i| format!("I{i}")));
    h.push("max_radial_K".into());
    h
}

fn list_str(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ")
}

/// Profile CSV: one row per mesh node, then `# key = value` metadata lines.
pub fn profile_csv(p: &SolutionProfile) -> Result<Vec<u8>> {
    let fam = Family::for_data(&p.bd)?;
    let mp = reconstruct_metric(p)?;
    let header = profile_header(p.bd.kind, mp.directions());
    let mut rows = Vec::with_capacity(p.mesh.len());
    for j in 0..p.mesh.len() {
        let s = p.state(j);
        let mut r = vec![fmt_f64(s.x)];
        r.extend(s.y.iter().map(|v| fmt_f64(*v)));
        r.extend(s.yp.iter().map(|v| fmt_f64(*v)));
        r.push(fmt_f64(s.y[0].exp()));
        r.extend(s.y[1..].iter().map(|v| fmt_f64(v.exp())));
        r.push(fmt_f64(fam.evaluate(&s, None)?.constraint));
        r.extend(mp.i[j].iter().map(|v| fmt_f64(*v)));
        let kmax = (0..mp.directions()).map(|k| radial_sectional(&mp, k, j)).fold(f64::NEG_INFINITY, f64::max);
        r.push(fmt_f64(kmax));
        rows.push(r);
    }
    let trailer = vec![
        ("schema_version".to_string(), SCHEMA_VERSION.to_string()),
        ("system".into(), p.bd.kind.name().into()),
        ("n".into(), p.bd.n.to_string()),
        ("phi0".into(), list_str(&p.bd.phi0)),
        ("log_k0".into(), fmt_f64(p.log_k0)),
        ("free".into(), list_str(&p.free.coeffs)),
        ("infinity_free".into(), list_str(&p.infinity_free.coeffs)),
        ("origin_order".into(), p.origin.order.to_string()),
        ("infinity_order".into(), p.infinity.order.to_string()),
        ("tol".into(), fmt_f64(p.tol)),
        ("converged".into(), p.converged.to_string()),
        ("residual_norm".into(), fmt_f64(p.residual_norm)),
    ];
    csv_bytes(&header, &rows, &trailer)
}

fn split_trailer(text: &str) -> (String, BTreeMap<String, String>) {
    let mut body = String::new();
    let mut meta = BTreeMap::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
        } else {
            body.push_str(line);
            body.push('\n');
        }
    }
    (body, meta)
}

fn meta<'a>(m: &'a BTreeMap<String, String>, k: &str) -> Result<&'a str> {
    m.get(k).map(String::as_str).ok_or_else(|| CceError::Parse(format!("missing metadata `{k}`")))
}

fn meta_list(m: &BTreeMap<String, String>, k: &str) -> Result<Vec<f64>> {
    meta(m, k)?.split_whitespace().map(parse_f64).collect()
}

fn meta_usize(m: &BTreeMap<String, String>, k: &str) -> Result<usize> {
    meta(m, k)?.parse().map_err(|_| CceError::Parse(format!("bad metadata `{k}`")))
}

/// Rebuild a profile from [`profile_csv`] output.
pub fn parse_profile_csv(text: &str) -> Result<SolutionProfile> {
    let (body, m) = split_trailer(text);
    if meta(&m, "schema_version")? != SCHEMA_VERSION {
        return Err(CceError::Parse("unsupported schema version".into()));
    }
    let kind = SystemKind::parse(meta(&m, "system")?).ok_or_else(|| CceError::Parse("unknown system".into()))?;
    let n = meta_usize(&m, "n")?;
    let bd = BoundaryData::new(kind, n, meta_list(&m, "phi0")?)?;
    let fam = Family::for_data(&bd)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let header: Vec<String> = rdr.headers().map_err(|e| CceError::Parse(e.to_string()))?.iter().map(str::to_string).collect();
    let um = kind.unknowns();
    if header.len() < 1 + 2 * um || header[0] != "x" {
        return Err(CceError::Parse("unexpected profile header".into()));
    }
    let (mut xs, mut y, mut yp, mut ypp) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CceError::Parse(e.to_string()))?;
        if rec.len() != header.len() {
            return Err(CceError::Parse("row width does not match the header".into()));
        }
        let v = rec.iter().take(1 + 2 * um).map(parse_f64).collect::<Result<Vec<_>>>()?;
        let (yy, dy) = (v[1..=um].to_vec(), v[1 + um..].to_vec());
        let mut f = vec![0.0; um];
        let (mut a, mut b) = (vec![0.0; um * um], vec![0.0; um * um]);
        fam.rhs(v[0], &yy, &dy, &mut f, &mut a, &mut b);
        xs.push(v[0]);
        y.push(yy);
        yp.push(dy);
        ypp.push(f);
    }
    let log_k0 = parse_f64(meta(&m, "log_k0")?)?;
    let free = NonlocalParams { coeffs: meta_list(&m, "free")? };
    let infinity_free = NonlocalParams { coeffs: meta_list(&m, "infinity_free")? };
    let origin = fg_series_origin(&bd, log_k0, &free, meta_usize(&m, "origin_order")?)?;
    let infinity = series_infinity(kind, n, &infinity_free, meta_usize(&m, "infinity_order")?)?;
    Ok(SolutionProfile {
        bd,
        mesh: Mesh::from_nodes(xs)?,
        y,
        yp,
        ypp,
        log_k0,
        free,
        infinity_free,
        origin,
        infinity,
        converged: meta(&m, "converged")? == "true",
        residual_norm: parse_f64(meta(&m, "residual_norm")?)?,
        tol: parse_f64(meta(&m, "tol")?)?,
    })
}

pub fn trace_header(kind: SystemKind) -> Vec<String> {
    let r = kind.free_count();
    let mut h: Vec<String> = ["lambda", "K0", "max_curvature", "iterations", "nodes", "constraint_drift", "verified"].map(String::from).to_vec();
    h.extend((1..=r).map(|i| format!("a{}", i + 1)));
    h.extend((1..=r).map(|i| format!("c{}", i + 1)));
    h
}

/// Trace CSV: one row per λ, stop reason in the trailer.
pub fn trace_csv(t: &ContinuationTrace) -> Result<Vec<u8>> {
    let rows: Vec<Vec<String>> = t
        .records
        .iter()
        .map(|r| {
            let mut row = vec![
                fmt_f64(r.lambda),
                fmt_f64(r.k0),
                fmt_f64(r.max_curvature),
                r.iterations.to_string(),
                r.nodes.to_string(),
                fmt_f64(r.constraint_drift),
                r.verified.to_string(),
            ];
            row.extend(r.free.iter().map(|v| fmt_f64(*v)));
            row.extend(r.infinity_free.iter().map(|v| fmt_f64(*v)));
            row
        })
        .collect();
    let trailer = vec![
        ("schema_version".to_string(), SCHEMA_VERSION.to_string()),
        ("system".into(), t.plan.kind.name().into()),
        ("n".into(), t.plan.n.to_string()),
        ("direction".into(), list_str(&t.plan.direction)),
        ("stop_reason".into(), t.stop.as_str().into()),
    ];
    csv_bytes(&trace_header(t.plan.kind), &rows, &trailer)
}

fn s(v: f64) -> Value {
    Value::String(fmt_f64(v))
}

fn arr(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|x| s(*x)).collect())
}

pub fn provenance(config_hash: Option<&str>) -> Value {
    let mut p = Map::new();
    p.insert("tool".into(), Value::String("cce".into()));
    p.insert("version".into(), Value::String(TOOL_VERSION.into()));
    p.insert("config_hash".into(), config_hash.map_or(Value::Null, |h| Value::String(h.into())));
    Value::Object(p)
}

fn document(kind: &str, body: Map<String, Value>, config_hash: Option<&str>) -> Value {
    let mut doc = body;
    doc.insert("schema_version".into(), Value::String(SCHEMA_VERSION.into()));
    doc.insert("document".into(), Value::String(kind.into()));
    doc.insert("provenance".into(), provenance(config_hash));
    Value::Object(doc)
}

pub fn report_value(rep: &VerificationReport) -> Value {
    let checks = rep
        .records
        .iter()
        .map(|r| {
            let mut m = Map::new();
            m.insert("name".into(), Value::String(r.name.clone()));
            m.insert("anchor".into(), Value::String(r.anchor.into()));
            m.insert("measured".into(), s(r.measured));
            m.insert("margin".into(), s(r.margin));
            m.insert("threshold".into(), s(r.threshold));
            m.insert("status".into(), Value::String(r.status.as_str().into()));
            Value::Object(m)
        })
        .collect();
    let mut m = Map::new();
    m.insert("checks".into(), Value::Array(checks));
    m.insert("pass".into(), Value::Bool(rep.passes()));
    Value::Object(m)
}

/// Solve summary plus verification report. Wall time is left out so that
/// identical runs give identical files.
pub fn solve_json(p: &SolutionProfile, rep: &SolveReport, ver: &VerificationReport, config_hash: Option<&str>) -> Result<Vec<u8>> {
    let mut m = Map::new();
    m.insert("system".into(), Value::String(p.bd.kind.name().into()));
    m.insert("n".into(), Value::String(p.bd.n.to_string()));
    m.insert("phi0".into(), arr(&p.bd.phi0));
    m.insert("converged".into(), Value::Bool(p.converged));
    m.insert("log_k0".into(), s(p.log_k0));
    m.insert("k0".into(), s(p.log_k0.exp()));
    m.insert("slice_components_at_origin".into(), arr(&slice_components(p.bd.kind, p.bd.n, p.log_k0.exp(), &p.bd.phi0)?));
    m.insert("free".into(), arr(&p.free.coeffs));
    m.insert("infinity_free".into(), arr(&p.infinity_free.coeffs));
    let mut st = Map::new();
    st.insert("iterations".into(), Value::String(rep.iterations.to_string()));
    st.insert("refinements".into(), Value::String(rep.refinements.to_string()));
    st.insert("nodes".into(), Value::String(rep.nodes.to_string()));
    st.insert("residual_norm".into(), s(rep.residual_norm));
    st.insert("constraint_drift".into(), s(rep.constraint_drift));
    st.insert("message".into(), rep.message.clone().map_or(Value::Null, Value::String));
    m.insert("solve".into(), Value::Object(st));
    m.insert("verification".into(), report_value(ver));
    let mut c = Map::new();
    c.insert("eta0".into(), s(ETA0));
    c.insert("c4".into(), s(C4));
    m.insert("constants".into(), Value::Object(c));
    json_bytes(&document("solve-report", m, config_hash))
}

pub fn verification_json(reports: &[(String, VerificationReport)], ledger: Option<&VariationLedger>) -> Result<Vec<u8>> {
    let mut m = Map::new();
    let profiles = reports
        .iter()
        .map(|(name, r)| {
            let mut e = Map::new();
            e.insert("source".into(), Value::String(name.clone()));
            e.insert("verification".into(), report_value(r));
            Value::Object(e)
        })
        .collect();
    m.insert("profiles".into(), Value::Array(profiles));
    if let Some(l) = ledger {
        let mut e = Map::new();
        e.insert("variation".into(), arr(&l.variation));
        e.insert("inequality_residuals".into(), arr(&l.inequality_residuals));
        e.insert("forces_zero".into(), Value::Bool(l.forces_zero));
        let iv = l
            .intervals
            .iter()
            .map(|v| Value::Array(v.iter().map(|(a, b)| Value::Array(vec![s(*a), s(*b)])).collect()))
            .collect();
        e.insert("monotone_intervals".into(), Value::Array(iv));
        m.insert("uniqueness".into(), Value::Object(e));
    }
    json_bytes(&document("verification", m, None))
}

pub fn event_json(ev: &EventRecord, config_hash: Option<&str>) -> Result<Vec<u8>> {
    let mut m = Map::new();
    m.insert("lambda_lo".into(), s(ev.lambda_lo));
    m.insert("lambda_hi".into(), s(ev.lambda_hi));
    m.insert("lambda_event".into(), s(ev.lambda_event));
    m.insert("bracket_width".into(), s(ev.bracket_width));
    let mut w = Map::new();
    w.insert("x".into(), s(ev.witness.x));
    w.insert("plane".into(), Value::String(ev.witness.plane.to_string()));
    w.insert("value".into(), s(ev.witness.value));
    m.insert("witness".into(), Value::Object(w));
    m.insert("annotation".into(), ev.annotation.clone().map_or(Value::Null, Value::String));
    json_bytes(&document("event", m, config_hash))
}

pub fn json_bytes(v: &Value) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(v).map_err(|e| CceError::Internal(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::solve_bvp;

    #[test]
    fn minimal_config_defaults() {
        let c = parse_config("system = su\nn = 5\nphi0 = 0.8\n").unwrap();
        assert_eq!((c.grid, c.tol), (128, 1e-10));
        assert!(c.sweep.is_none());
    }

    fn err_of(text: &str) -> (usize, String, String) {
        match parse_config(text) {
            Err(CceError::Config { line, key, msg }) => (line, key, msg),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn config_errors_name_key_and_line() {
        let (l, k, m) = err_of("system = su\nn = 4\nphi0 = 0.8\n");
        assert_eq!((l, k.as_str(), m.as_str()), (2, "n", "n must be odd"));
        let (l, k, m) = err_of("system = su\nn = 5\n# comment\nphi0 = -1\n");
        assert_eq!((l, k.as_str()), (4, "phi0"));
        assert!(m.contains("positive"));
        let (l, k, _) = err_of("system = su\nn = 5\nphi0 = 0.8\ncolour = red\n");
        assert_eq!((l, k.as_str()), (4, "colour"));
        let (_, k, m) = err_of("system = su\nn = 5\n");
        assert_eq!((k.as_str(), m.as_str()), ("phi0", "missing required key"));
        let (l, k, _) = err_of("system = su\nn = 5\nphi0 = 0.8\ntol = small\n");
        assert_eq!((l, k.as_str()), (4, "tol"));
        let (_, k, _) = err_of("system = sp\nn = 7\nphi0 = 1,1,1\n");
        assert_eq!(k, "system");
        let (_, k, _) = err_of("system = su\nn = 5\nphi0 = 0.8\nsweep_start = 0.5\nsweep_end = 0.3\n");
        assert_eq!(k, "sweep_start");
    }

    #[test]
    fn canonical_hash_ignores_formatting() {
        let a = parse_config("system = su\nn = 5\nphi0 = 0.8\n").unwrap();
        let b = parse_config("# run\nphi0=0.80\n  n = 5\nsystem= su\ngrid = 128\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = parse_config("system = su\nn = 5\nphi0 = 0.81\n").unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn number_format() {
        assert_eq!(fmt_f64(0.0), "0");
        assert_eq!(fmt_f64(-0.0), "0");
        assert_eq!(fmt_f64(2.0), "2");
        assert_eq!(fmt_f64(0.1), "0.1");
        assert_eq!(fmt_f64(1e-10), "1e-10");
        for v in [std::f64::consts::PI, -1.0 / 3.0, 6.02214076e23, 5e-324, f64::MAX] {
            assert_eq!(parse_f64(&fmt_f64(v)).unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn zero_profile_three_nodes() {
        let bd = BoundaryData::round(SystemKind::SuInvariant, 3).unwrap();
        let opts = SolverOptions { nodes: 3, refine: false, ..SolverOptions::default() };
        let (p, _) = solve_bvp(&bd, &opts).unwrap();
        let text = String::from_utf8(profile_csv(&p).unwrap()).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
        assert_eq!(rows.len(), 3);
        let hdr: Vec<&str> = text.lines().next().unwrap().split(',').collect();
        let phi_col = hdr.iter().position(|h| *h == "Phi").unwrap();
        assert!(rows.iter().all(|r| r.split(',').nth(phi_col) == Some("0")));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn profile_round_trip_is_exact() {
        let bd = BoundaryData::new(SystemKind::GeneralizedBerger, 3, vec![0.95, 1.02]).unwrap();
        let (p, _) = solve_bvp(&bd, &SolverOptions::default()).unwrap();
        let q = parse_profile_csv(std::str::from_utf8(&profile_csv(&p).unwrap()).unwrap()).unwrap();
        assert_eq!(p.mesh.nodes, q.mesh.nodes);
        assert_eq!(p.y, q.y);
        assert_eq!(p.yp, q.yp);
        assert_eq!(p.log_k0.to_bits(), q.log_k0.to_bits());
        assert_eq!(p.free, q.free);
        assert_eq!(p.origin.table, q.origin.table);
        assert_eq!(profile_csv(&p).unwrap(), profile_csv(&q).unwrap());
    }

    #[test]
    fn json_is_sorted_and_versioned() {
        let v = verification_json(&[], None).unwrap();
        let text = String::from_utf8(v).unwrap();
        let doc: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(doc["schema_version"], "1");
        assert_eq!(doc["profiles"].as_array().unwrap().len(), 0);
        let keys: Vec<&String> = doc.as_object().unwrap().keys().collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(text.find("\"document\"").unwrap() < text.find("\"schema_version\"").unwrap());
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert!(write_atomic(&dir.path().join("missing/dir/a.txt"), b"x").is_err());
    }
}
