//! Domain configuration and histogram construction from CSV records.

use std::io::Read;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{HdmmError, Result};

/// Largest data vector the pipeline will build.
pub const MAX_CELLS: usize = 1 << 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AttributeKind {
    Categorical(Vec<String>),
    /// Bin edges; bins are `[e₀,e₁), …, [e_{k−1}, e_k]`.
    Binned(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub kind: AttributeKind,
}

impl Attribute {
    pub fn size(&self) -> usize {
        match &self.kind {
            AttributeKind::Categorical(v) => v.len(),
            AttributeKind::Binned(e) => e.len() - 1,
        }
    }

    pub fn index_of(&self, raw: &str) -> std::result::Result<usize, String> {
        let raw = raw.trim();
        match &self.kind {
            AttributeKind::Categorical(values) => values
                .iter()
                .position(|v| v == raw)
                .ok_or_else(|| format!("value {raw:?} is not one of the configured categories")),
            AttributeKind::Binned(edges) => {
                let v: f64 = raw.parse().map_err(|_| format!("value {raw:?} is not numeric"))?;
                bin_index(edges, v).ok_or_else(|| format!("value {v} is outside [{}, {}]", edges[0], edges[edges.len() - 1]))
            }
        }
    }
}

/// Left-closed bins with a closed final bin.
pub fn bin_index(edges: &[f64], v: f64) -> Option<usize> {
    let k = edges.len() - 1;
    if !(v >= edges[0] && v <= edges[k]) {
        return None;
    }
    // Last edge ≤ v among the interior edges.
    let idx = edges[1..k].partition_point(|&e| e <= v);
    Some(idx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainConfig {
    pub attributes: Vec<Attribute>,
}

impl DomainConfig {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(HdmmError::Config("domain needs at least one attribute".into()));
        }
        for a in &attributes {
            match &a.kind {
                AttributeKind::Categorical(v) => {
                    if v.is_empty() {
                        return Err(HdmmError::Config(format!("attribute {:?} has no values", a.name)));
                    }
                    let mut sorted = v.clone();
                    sorted.sort();
                    if sorted.windows(2).any(|w| w[0] == w[1]) {
                        return Err(HdmmError::Config(format!("attribute {:?} repeats a value", a.name)));
                    }
                }
                AttributeKind::Binned(e) => {
                    if e.len() < 2 || e.windows(2).any(|w| !(w[0] < w[1])) {
                        return Err(HdmmError::Config(format!(
                            "attribute {:?} needs at least two strictly increasing edges",
                            a.name
                        )));
                    }
                }
            }
        }
        Ok(DomainConfig { attributes })
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.attributes.iter().map(Attribute::size).collect()
    }

    /// `{"attributes": [{"name": ..., "values": [...]} | {"name": ..., "edges": [...]}]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text)?;
        let list = v
            .get("attributes")
            .and_then(Value::as_array)
            .ok_or_else(|| HdmmError::Parse("domain config needs an \"attributes\" array".into()))?;
        let attributes = list
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let name = a
                    .get("name")
                    .and_then(Value::as_str)
                    .ok_or_else(|| HdmmError::Parse(format!("attribute {i} needs a name")))?
                    .to_string();
                let kind = if let Some(values) = a.get("values").and_then(Value::as_array) {
                    AttributeKind::Categorical(
                        values
                            .iter()
                            .map(|v| match v {
                                Value::String(s) => s.clone(),
                                other => other.to_string(),
                            })
                            .collect(),
                    )
                } else if let Some(edges) = a.get("edges").and_then(Value::as_array) {
                    AttributeKind::Binned(
                        edges
                            .iter()
                            .map(|e| e.as_f64().ok_or_else(|| HdmmError::Parse(format!("attribute {name:?}: edges must be numbers"))))
                            .collect::<Result<_>>()?,
                    )
                } else {
                    return Err(HdmmError::Parse(format!("attribute {name:?} needs \"values\" or \"edges\"")));
                };
                Ok(Attribute { name, kind })
            })
            .collect::<Result<Vec<_>>>()?;
        DomainConfig::new(attributes)
    }
}

/// Histogram over the full domain, first attribute slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct DataVector {
    pub domain: Vec<usize>,
    pub counts: Vec<f64>,
}

impl DataVector {
    pub fn zeros(domain: Vec<usize>) -> Result<Self> {
        let n = checked_cells(&domain)?;
        Ok(DataVector { domain, counts: vec![0.0; n] })
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Row-major cell index of an attribute tuple.
    pub fn cell(&self, tuple: &[usize]) -> usize {
        tuple.iter().zip(&self.domain).fold(0, |acc, (&t, &n)| acc * n + t)
    }

    /// Counts records given as per-attribute indices.
    pub fn from_indices(domain: Vec<usize>, records: &[Vec<usize>]) -> Result<Self> {
        let mut x = DataVector::zeros(domain)?;
        for (r, rec) in records.iter().enumerate() {
            if rec.len() != x.domain.len() {
                return Err(HdmmError::Ingestion {
                    row: r + 1,
                    attribute: String::new(),
                    message: format!("record has {} fields, domain has {}", rec.len(), x.domain.len()),
                });
            }
            for (i, (&t, &n)) in rec.iter().zip(&x.domain).enumerate() {
                if t >= n {
                    return Err(HdmmError::Ingestion {
                        row: r + 1,
                        attribute: format!("#{i}"),
                        message: format!("index {t} is outside 0..{n}"),
                    });
                }
            }
            let c = x.cell(rec);
            x.counts[c] += 1.0;
        }
        Ok(x)
    }
}

fn checked_cells(domain: &[usize]) -> Result<usize> {
    let n = domain.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n));
    match n {
        Some(n) if n <= MAX_CELLS => Ok(n),
        _ => Err(HdmmError::SizeLimit {
            requested: domain.iter().map(|&n| n as u128).product(),
            cap: MAX_CELLS as u128,
        }),
    }
}

/// Reads CSV records (header row naming the attributes) into a data vector.
/// Columns not named in the configuration are ignored.
pub fn vectorize_csv<R: Read>(reader: R, cfg: &DomainConfig) -> Result<DataVector> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let columns: Vec<usize> = cfg
        .attributes
        .iter()
        .map(|a| {
            headers
                .iter()
                .position(|h| h.trim() == a.name)
                .ok_or_else(|| HdmmError::Ingestion {
                    row: 0,
                    attribute: a.name.clone(),
                    message: "column missing from header".into(),
                })
        })
        .collect::<Result<_>>()?;
    let mut x = DataVector::zeros(cfg.sizes())?;
    let mut tuple = vec![0usize; columns.len()];
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| HdmmError::Ingestion { row, attribute: String::new(), message: e.to_string() })?;
        for (i, (&col, attr)) in columns.iter().zip(&cfg.attributes).enumerate() {
            let raw = rec.get(col).ok_or_else(|| HdmmError::Ingestion {
                row,
                attribute: attr.name.clone(),
                message: "missing field".into(),
            })?;
            tuple[i] = attr.index_of(raw).map_err(|message| HdmmError::Ingestion {
                row,
                attribute: attr.name.clone(),
                message,
            })?;
        }
        let c = x.cell(&tuple);
        x.counts[c] += 1.0;
    }
    Ok(x)
}
