//! JSON workload specification files.
//!
//! ```json
//! {"domain": [10, 10],
//!  "terms": [{"weight": 1.0, "blocks": ["prefix", {"width": 3}]}],
//!  "marginals": {"weights": [0, 1, 1, 0]}}
//! ```

use serde_json::{json, Value};

use super::blocks::BuildingBlock;
use super::implicit::{LogicalProduct, LogicalWorkload};
use crate::error::{HdmmError, Result};
use crate::linalg::{from_rows, to_rows};

pub fn parse_workload(text: &str) -> Result<LogicalWorkload> {
    let v: Value = serde_json::from_str(text)?;
    let obj = v
        .as_object()
        .ok_or_else(|| HdmmError::Parse("workload spec must be a JSON object".into()))?;
    let domain: Vec<usize> = obj
        .get("domain")
        .and_then(Value::as_array)
        .ok_or_else(|| HdmmError::Parse("missing \"domain\" array".into()))?
        .iter()
        .map(|n| {
            n.as_u64()
                .filter(|&n| n > 0)
                .map(|n| n as usize)
                .ok_or_else(|| HdmmError::Parse(format!("domain size {n} is not a positive integer")))
        })
        .collect::<Result<_>>()?;
    let mut products = Vec::new();
    if let Some(terms) = obj.get("terms") {
        let terms = terms
            .as_array()
            .ok_or_else(|| HdmmError::Parse("\"terms\" must be an array".into()))?;
        for (j, t) in terms.iter().enumerate() {
            products.push(parse_term(j, t)?);
        }
    }
    let mut lw = LogicalWorkload::new(domain.clone(), products)?;
    if let Some(m) = obj.get("marginals") {
        let weights: Vec<f64> = m
            .get("weights")
            .and_then(Value::as_array)
            .ok_or_else(|| HdmmError::Parse("\"marginals\" needs a \"weights\" array".into()))?
            .iter()
            .map(|w| w.as_f64().ok_or_else(|| HdmmError::Parse("marginal weight is not a number".into())))
            .collect::<Result<_>>()?;
        let extra = LogicalWorkload::from_marginal_weights(domain, &weights)?;
        lw.products.extend(extra.products);
    }
    if lw.products.is_empty() {
        return Err(HdmmError::Parse("workload has no terms".into()));
    }
    Ok(lw)
}

fn parse_term(j: usize, t: &Value) -> Result<LogicalProduct> {
    let weight = match t.get("weight") {
        None => 1.0,
        Some(w) => w
            .as_f64()
            .ok_or_else(|| HdmmError::Parse(format!("term {j}: weight is not a number")))?,
    };
    let blocks = t
        .get("blocks")
        .and_then(Value::as_array)
        .ok_or_else(|| HdmmError::Parse(format!("term {j}: missing \"blocks\" array")))?
        .iter()
        .map(|b| parse_block(b).map_err(|e| HdmmError::Parse(format!("term {j}: {e}"))))
        .collect::<Result<_>>()?;
    Ok(LogicalProduct { weight, blocks })
}

fn parse_block(v: &Value) -> std::result::Result<BuildingBlock, String> {
    if let Some(name) = v.as_str() {
        return match name.to_ascii_lowercase().as_str() {
            "identity" => Ok(BuildingBlock::Identity),
            "total" => Ok(BuildingBlock::Total),
            "prefix" => Ok(BuildingBlock::Prefix),
            "allrange" => Ok(BuildingBlock::AllRange),
            other => Err(format!("unknown block name {other:?}")),
        };
    }
    let obj = v.as_object().ok_or_else(|| format!("block {v} is neither a name nor an object"))?;
    if obj.len() != 1 {
        return Err(format!("block object must have exactly one key, got {}", obj.len()));
    }
    let (key, body) = obj.iter().next().expect("one entry");
    match key.as_str() {
        "width" => body
            .as_u64()
            .filter(|&w| w > 0)
            .map(|w| BuildingBlock::WidthRange(w as usize))
            .ok_or_else(|| "width must be a positive integer".to_string()),
        "permuted" => {
            let inner = body.get("inner").ok_or("permuted block needs \"inner\"")?;
            let seed = body
                .get("seed")
                .and_then(Value::as_u64)
                .ok_or("permuted block needs an integer \"seed\"")?;
            Ok(BuildingBlock::Permuted {
                inner: Box::new(parse_block(inner)?),
                seed,
            })
        }
        "literal" => {
            let rows: Vec<Vec<f64>> = serde_json::from_value(body.clone())
                .map_err(|e| format!("literal matrix: {e}"))?;
            from_rows(&rows).map(BuildingBlock::Literal).map_err(|e| e.to_string())
        }
        other => Err(format!("unknown block kind {other:?}")),
    }
}

fn block_json(b: &BuildingBlock) -> Value {
    match b {
        BuildingBlock::Identity => json!("identity"),
        BuildingBlock::Total => json!("total"),
        BuildingBlock::Prefix => json!("prefix"),
        BuildingBlock::AllRange => json!("allrange"),
        BuildingBlock::WidthRange(w) => json!({ "width": w }),
        BuildingBlock::Permuted { inner, seed } => {
            json!({ "permuted": { "inner": block_json(inner), "seed": seed } })
        }
        BuildingBlock::Literal(m) => json!({ "literal": to_rows(m) }),
    }
}

/// Canonical form: marginals expanded into explicit terms, weights always present.
pub fn workload_to_json(w: &LogicalWorkload) -> Value {
    json!({
        "domain": w.domain,
        "terms": w.products.iter().map(|p| json!({
            "weight": p.weight,
            "blocks": p.blocks.iter().map(block_json).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    })
}
