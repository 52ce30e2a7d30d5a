//! Probe and POVM documents.
//!
//! Parsing walks the raw JSON value so every rejection names the offending
//! field, e.g. `kets[2].encoding[0]: expected a number, found string`.

use std::fmt;

use crbkit::information::ManyBodySpec;
use crbkit::probes::{build_family, Complex, FamilySpec, Ket, Povm};
use crbkit::strategy::ProbeSpec;
use nalgebra::DMatrix;
use serde_json::{Map, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct DocError {
    pub path: String,
    pub message: String,
}

impl DocError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        DocError {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for DocError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

type DocResult<T> = std::result::Result<T, DocError>;

pub const FAMILIES: [&str; 6] = [
    "ghz_like",
    "noon_like",
    "cyclic_paired",
    "custom",
    "transverse_ising",
    "xy_three_site",
];

const COMMON_KEYS: [&str; 5] = ["family", "labels", "x", "weight", "anchor"];

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDocument {
    pub spec: ProbeSpec,
    pub labels: Option<Vec<String>>,
    pub x: Option<Vec<f64>>,
    pub weight: Option<Vec<f64>>,
    pub anchor: Option<Vec<f64>>,
}

impl ProbeDocument {
    pub fn family(&self) -> &'static str {
        match &self.spec {
            ProbeSpec::Family(f) => f.name(),
            ProbeSpec::ManyBody(m) => m.name(),
        }
    }

    pub fn n_params(&self) -> usize {
        match &self.spec {
            ProbeSpec::Family(f) => f.n_params(),
            ProbeSpec::ManyBody(_) => 2,
        }
    }
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn expected(path: &str, what: &str, v: &Value) -> DocError {
    DocError::new(path, format!("expected {what}, found {}", kind(v)))
}

fn number(v: &Value, path: &str) -> DocResult<f64> {
    match v.as_f64() {
        Some(x) if x.is_finite() => Ok(x),
        Some(_) => Err(DocError::new(path, "number is not finite")),
        None => Err(expected(path, "a number", v)),
    }
}

fn numbers(v: &Value, path: &str) -> DocResult<Vec<f64>> {
    let items = v.as_array().ok_or_else(|| expected(path, "an array of numbers", v))?;
    items
        .iter()
        .enumerate()
        .map(|(i, x)| number(x, &format!("{path}[{i}]")))
        .collect()
}

fn integer(v: &Value, path: &str) -> DocResult<usize> {
    v.as_u64()
        .map(|n| n as usize)
        .ok_or_else(|| expected(path, "a nonnegative integer", v))
}

fn string(v: &Value, path: &str) -> DocResult<String> {
    v.as_str().map(str::to_owned).ok_or_else(|| expected(path, "a string", v))
}

fn required<'a>(obj: &'a Map<String, Value>, key: &str, family: &str) -> DocResult<&'a Value> {
    obj.get(key)
        .ok_or_else(|| DocError::new(key, format!("missing (required by family `{family}`)")))
}

fn check_keys(obj: &Map<String, Value>, family: &str, allowed: &[&str]) -> DocResult<()> {
    for key in obj.keys() {
        if !COMMON_KEYS.contains(&key.as_str()) && !allowed.contains(&key.as_str()) {
            let hint = if allowed.is_empty() {
                String::new()
            } else {
                format!(" (expected {})", allowed.join(", "))
            };
            return Err(DocError::new(
                key.as_str(),
                format!("not a field of family `{family}`{hint}"),
            ));
        }
    }
    Ok(())
}

fn sized(v: Option<&Value>, key: &str, n: usize) -> DocResult<Option<Vec<f64>>> {
    let Some(v) = v else { return Ok(None) };
    let xs = numbers(v, key)?;
    if xs.len() != n {
        return Err(DocError::new(key, format!("expected {n} entries, got {}", xs.len())));
    }
    Ok(Some(xs))
}

pub fn parse_probe(text: &str) -> DocResult<ProbeDocument> {
    let root: Value = serde_json::from_str(text)
        .map_err(|e| DocError::new("$", format!("invalid JSON: {e}")))?;
    let obj = root.as_object().ok_or_else(|| expected("$", "a JSON object", &root))?;
    let family_value = obj
        .get("family")
        .ok_or_else(|| DocError::new("family", format!("missing (one of {})", FAMILIES.join(", "))))?;
    let family = string(family_value, "family")?;

    let spec = match family.as_str() {
        "ghz_like" | "noon_like" => {
            check_keys(obj, &family, &["nu"])?;
            let nu = numbers(required(obj, "nu", &family)?, "nu")?;
            if nu.is_empty() {
                return Err(DocError::new("nu", "must contain at least one entry"));
            }
            let spec = if family == "ghz_like" {
                FamilySpec::GhzLike { nu }
            } else {
                FamilySpec::NoonLike { nu }
            };
            ProbeSpec::Family(spec)
        }
        "cyclic_paired" => {
            check_keys(obj, &family, &["m"])?;
            ProbeSpec::Family(FamilySpec::CyclicPaired {
                m: integer(required(obj, "m", &family)?, "m")?,
            })
        }
        "custom" => {
            check_keys(obj, &family, &["kets", "n_params"])?;
            let kets = parse_kets(required(obj, "kets", &family)?)?;
            let n_params = match obj.get("n_params") {
                Some(v) => integer(v, "n_params")?,
                None => kets[0].encoding.len(),
            };
            ProbeSpec::Family(FamilySpec::Custom { n_params, kets })
        }
        "transverse_ising" => {
            check_keys(obj, &family, &["omega", "g", "n_sites"])?;
            ProbeSpec::ManyBody(ManyBodySpec::TransverseIsing {
                omega: number(required(obj, "omega", &family)?, "omega")?,
                g: number(required(obj, "g", &family)?, "g")?,
                n_sites: integer(required(obj, "n_sites", &family)?, "n_sites")?,
            })
        }
        "xy_three_site" => {
            check_keys(obj, &family, &["lambda", "gamma", "h"])?;
            ProbeSpec::ManyBody(ManyBodySpec::XyThreeSite {
                lambda: number(required(obj, "lambda", &family)?, "lambda")?,
                gamma: number(required(obj, "gamma", &family)?, "gamma")?,
                h: number(required(obj, "h", &family)?, "h")?,
            })
        }
        other => {
            return Err(DocError::new(
                "family",
                format!("unknown family `{other}` (expected one of {})", FAMILIES.join(", ")),
            ))
        }
    };

    let validation = match &spec {
        ProbeSpec::Family(f @ FamilySpec::Custom { .. }) => build_family(f).map(|_| ()),
        ProbeSpec::Family(f) => f.validate(),
        ProbeSpec::ManyBody(m) => m.validate(),
    };
    validation.map_err(|e| match e {
        crbkit::Error::InvalidFamily { field, reason } => DocError::new(field, reason),
        e @ crbkit::Error::NotNormalized { .. } => DocError::new("kets", e.to_string()),
        other => DocError::new("$", other.to_string()),
    })?;

    let n = match &spec {
        ProbeSpec::Family(f) => f.n_params(),
        ProbeSpec::ManyBody(_) => 2,
    };
    let labels = match obj.get("labels") {
        None => None,
        Some(v) => {
            let items = v.as_array().ok_or_else(|| expected("labels", "an array of strings", v))?;
            let labels = items
                .iter()
                .enumerate()
                .map(|(i, s)| string(s, &format!("labels[{i}]")))
                .collect::<DocResult<Vec<_>>>()?;
            if labels.len() != n {
                return Err(DocError::new("labels", format!("expected {n} entries, got {}", labels.len())));
            }
            if matches!(spec, ProbeSpec::ManyBody(_)) {
                return Err(DocError::new("labels", "spin-model parameter labels are fixed"));
            }
            Some(labels)
        }
    };

    Ok(ProbeDocument {
        spec,
        labels,
        x: sized(obj.get("x"), "x", n)?,
        weight: sized(obj.get("weight"), "weight", n)?,
        anchor: sized(obj.get("anchor"), "anchor", n)?,
    })
}

fn parse_kets(v: &Value) -> DocResult<Vec<Ket>> {
    let items = v.as_array().ok_or_else(|| expected("kets", "an array of kets", v))?;
    if items.is_empty() {
        return Err(DocError::new("kets", "must contain at least one ket"));
    }
    items
        .iter()
        .enumerate()
        .map(|(j, item)| {
            let path = format!("kets[{j}]");
            let obj = item.as_object().ok_or_else(|| expected(&path, "an object", item))?;
            for key in obj.keys() {
                if !["label", "re", "im", "encoding"].contains(&key.as_str()) {
                    return Err(DocError::new(format!("{path}.{key}"), "unknown ket field (expected label, re, im, encoding)"));
                }
            }
            let label = match obj.get("label") {
                Some(l) => string(l, &format!("{path}.label"))?,
                None => format!("k{j}"),
            };
            let re = obj
                .get("re")
                .ok_or_else(|| DocError::new(format!("{path}.re"), "missing"))
                .and_then(|v| number(v, &format!("{path}.re")))?;
            let im = match obj.get("im") {
                Some(v) => number(v, &format!("{path}.im"))?,
                None => 0.0,
            };
            let encoding = obj
                .get("encoding")
                .ok_or_else(|| DocError::new(format!("{path}.encoding"), "missing"))
                .and_then(|v| numbers(v, &format!("{path}.encoding")))?;
            Ok(Ket::new(label, Complex::new(re, im), encoding))
        })
        .collect()
}

/// Built-in measurements selectable as `builtin:NAME`.
pub const BUILTIN_POVMS: [&str; 4] = ["plus_minus", "pairwise", "computational", "identity"];

pub fn builtin_povm(name: &str, dim: usize) -> Result<Povm, String> {
    let wrong_dim = || format!("builtin POVM `{name}` needs a two-ket state, got dimension {dim}");
    match name {
        "plus_minus" if dim == 2 => Ok(Povm::plus_minus()),
        "plus_minus" => Err(wrong_dim()),
        "pairwise" => Povm::pairwise_interference(dim).map_err(|e| e.to_string()),
        "computational" => Ok(Povm::computational(dim)),
        "identity" => Ok(Povm::identity(dim)),
        other => Err(format!(
            "unknown builtin POVM `{other}` (expected one of {})",
            BUILTIN_POVMS.join(", ")
        )),
    }
}

pub fn parse_povm(text: &str) -> DocResult<Povm> {
    let root: Value = serde_json::from_str(text)
        .map_err(|e| DocError::new("$", format!("invalid JSON: {e}")))?;
    let obj = root.as_object().ok_or_else(|| expected("$", "a JSON object", &root))?;
    for key in obj.keys() {
        if key != "elements" {
            return Err(DocError::new(key.as_str(), "unknown field (expected elements)"));
        }
    }
    let elements = obj.get("elements").ok_or_else(|| DocError::new("elements", "missing"))?;
    let elements = elements
        .as_array()
        .ok_or_else(|| expected("elements", "an array of matrices", elements))?;
    if elements.is_empty() {
        return Err(DocError::new("elements", "must contain at least one element"));
    }
    let mut mats = Vec::new();
    for (k, el) in elements.iter().enumerate() {
        let path = format!("elements[{k}]");
        let rows = el.as_array().ok_or_else(|| expected(&path, "a matrix (array of rows)", el))?;
        let d = rows.len();
        if d == 0 {
            return Err(DocError::new(path, "matrix has no rows"));
        }
        let mut m = DMatrix::zeros(d, d);
        for (i, row) in rows.iter().enumerate() {
            let rpath = format!("{path}[{i}]");
            let cells = row.as_array().ok_or_else(|| expected(&rpath, "a row of [re, im] pairs", row))?;
            if cells.len() != d {
                return Err(DocError::new(rpath, format!("expected {d} entries (square matrix), got {}", cells.len())));
            }
            for (j, cell) in cells.iter().enumerate() {
                let cpath = format!("{path}[{i}][{j}]");
                let pair = cell.as_array().ok_or_else(|| expected(&cpath, "an [re, im] pair", cell))?;
                if pair.len() != 2 {
                    return Err(DocError::new(cpath, format!("expected an [re, im] pair, got {} numbers", pair.len())));
                }
                m[(i, j)] = Complex::new(number(&pair[0], &format!("{cpath}[0]"))?, number(&pair[1], &format!("{cpath}[1]"))?);
            }
        }
        if let Some(first) = mats.first() {
            let first: &DMatrix<Complex<f64>> = first;
            if first.nrows() != d {
                return Err(DocError::new(path, format!("dimension {d} differs from elements[0] ({})", first.nrows())));
            }
        }
        mats.push(m);
    }
    Povm::new(mats).map_err(|e| DocError::new("elements", e.to_string()))
}
