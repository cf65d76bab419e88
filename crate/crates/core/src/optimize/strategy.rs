//! Measurement strategies and their file format.

use serde_json::{json, Value};

use crate::error::{HdmmError, Result};
use crate::linalg::{from_rows, kron_all, to_rows, Matrix};
use crate::marginals::{query_rows, DomainShape, MarginalVector};
use crate::workload::{ImplicitWorkload, KronTerm, NormKind};

/// One budget-weighted Kronecker product inside a union strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct UnionGroup {
    /// Budget share `a_j`.
    pub share: f64,
    pub factors: Vec<Matrix>,
    /// Workload terms answered from this group's measurements.
    pub terms: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StrategyVariant {
    Explicit(Matrix),
    Kron(Vec<Matrix>),
    UnionKron(Vec<UnionGroup>),
    Marginal(MarginalVector),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    pub variant: StrategyVariant,
    pub norm: NormKind,
}

impl Strategy {
    pub fn new(variant: StrategyVariant, norm: NormKind) -> Self {
        Strategy { variant, norm }
    }

    /// The identity strategy on a domain, as a Kronecker product.
    pub fn identity(domain: &[usize], norm: NormKind) -> Self {
        Strategy::new(
            StrategyVariant::Kron(domain.iter().map(|&n| Matrix::identity(n, n)).collect()),
            norm,
        )
    }

    pub fn kind(&self) -> &'static str {
        match self.variant {
            StrategyVariant::Explicit(_) => "explicit",
            StrategyVariant::Kron(_) => "kron",
            StrategyVariant::UnionKron(_) => "union",
            StrategyVariant::Marginal(_) => "marginal",
        }
    }

    /// Per-attribute column counts, when the variant carries them.
    pub fn domain(&self) -> Vec<usize> {
        match &self.variant {
            StrategyVariant::Explicit(a) => vec![a.ncols()],
            StrategyVariant::Kron(f) => f.iter().map(|m| m.ncols()).collect(),
            StrategyVariant::UnionKron(g) => g
                .first()
                .map(|g| g.factors.iter().map(|m| m.ncols()).collect())
                .unwrap_or_default(),
            StrategyVariant::Marginal(t) => t.domain.sizes().to_vec(),
        }
    }

    pub fn num_columns(&self) -> usize {
        self.domain().iter().product()
    }

    pub fn num_rows(&self) -> usize {
        match &self.variant {
            StrategyVariant::Explicit(a) => a.nrows(),
            StrategyVariant::Kron(f) => f.iter().map(|m| m.nrows()).product(),
            StrategyVariant::UnionKron(g) => g
                .iter()
                .map(|g| g.factors.iter().map(|m| m.nrows()).product::<usize>())
                .sum(),
            StrategyVariant::Marginal(t) => query_rows(t),
        }
    }

    /// The strategy as a weighted stack of Kronecker products, when it is one.
    pub fn as_union(&self) -> Option<ImplicitWorkload> {
        match &self.variant {
            StrategyVariant::Kron(f) => ImplicitWorkload::new(self.domain(), vec![KronTerm::new(1.0, f.clone())]).ok(),
            StrategyVariant::UnionKron(groups) => ImplicitWorkload::new(
                self.domain(),
                groups.iter().map(|g| KronTerm::new(g.share, g.factors.clone())).collect(),
            )
            .ok(),
            _ => None,
        }
    }

    pub fn sensitivity(&self) -> f64 {
        match &self.variant {
            StrategyVariant::Explicit(a) => self.norm.matrix_norm(a),
            StrategyVariant::Marginal(t) => self.norm.vector_norm(&t.weights),
            _ => self.as_union().expect("kron variants").sensitivity(self.norm),
        }
    }

    /// Rescaled to unit sensitivity. Union shares keep their ratios.
    pub fn normalized(mut self) -> Self {
        let s = self.sensitivity();
        if s == 0.0 || !s.is_finite() {
            return self;
        }
        match &mut self.variant {
            StrategyVariant::Explicit(a) => *a /= s,
            StrategyVariant::Kron(f) => {
                let per = s.powf(1.0 / f.len() as f64);
                f.iter_mut().for_each(|m| *m /= per);
            }
            StrategyVariant::UnionKron(groups) => groups.iter_mut().for_each(|g| g.share /= s),
            StrategyVariant::Marginal(t) => t.weights.iter_mut().for_each(|w| *w /= s),
        }
        self
    }

    /// Dense strategy matrix (tests and small domains only).
    pub fn dense(&self) -> Matrix {
        match &self.variant {
            StrategyVariant::Explicit(a) => a.clone(),
            StrategyVariant::Marginal(t) => t.dense_queries(),
            _ => self
                .as_union()
                .expect("kron variants")
                .materialize_explicit(u128::MAX)
                .expect("no cap"),
        }
    }

    pub fn variant_json(&self) -> Value {
        let mats = |f: &[Matrix]| f.iter().map(to_rows).collect::<Vec<_>>();
        match &self.variant {
            StrategyVariant::Explicit(a) => json!({ "explicit": to_rows(a) }),
            StrategyVariant::Kron(f) => json!({ "kron": mats(f) }),
            StrategyVariant::UnionKron(groups) => json!({
                "union": groups.iter().map(|g| json!({
                    "share": g.share,
                    "kron": mats(&g.factors),
                    "terms": g.terms,
                })).collect::<Vec<_>>()
            }),
            StrategyVariant::Marginal(t) => json!({
                "marginal": { "domain": t.domain.sizes(), "theta": t.weights }
            }),
        }
    }

    pub fn from_variant_json(v: &Value, norm: NormKind) -> Result<Self> {
        // Flat `{"type": "marginal", "domain": .., "theta": ..}` is accepted too.
        if v.get("type").and_then(Value::as_str) == Some("marginal") {
            let mut body = v.clone();
            body.as_object_mut().expect("object").remove("type");
            return Strategy::from_variant_json(&json!({ "marginal": body }), norm);
        }
        let obj = v
            .as_object()
            .filter(|o| o.len() == 1)
            .ok_or_else(|| HdmmError::Parse("variant must be an object with one key".into()))?;
        let (key, body) = obj.iter().next().expect("one key");
        let matrix = |v: &Value| -> Result<Matrix> {
            let rows: Vec<Vec<f64>> = serde_json::from_value(v.clone())?;
            from_rows(&rows)
        };
        let matrices = |v: &Value| -> Result<Vec<Matrix>> {
            v.as_array()
                .ok_or_else(|| HdmmError::Parse("expected a list of matrices".into()))?
                .iter()
                .map(matrix)
                .collect()
        };
        let variant = match key.as_str() {
            "explicit" => StrategyVariant::Explicit(matrix(body)?),
            "kron" => StrategyVariant::Kron(matrices(body)?),
            "union" => {
                let groups = body
                    .as_array()
                    .ok_or_else(|| HdmmError::Parse("union must be a list".into()))?
                    .iter()
                    .enumerate()
                    .map(|(j, g)| {
                        let share = g
                            .get("share")
                            .and_then(Value::as_f64)
                            .ok_or_else(|| HdmmError::Parse(format!("union group {j}: missing share")))?;
                        let factors = matrices(
                            g.get("kron")
                                .ok_or_else(|| HdmmError::Parse(format!("union group {j}: missing kron")))?,
                        )?;
                        let terms = match g.get("terms") {
                            Some(t) => serde_json::from_value(t.clone())?,
                            None => vec![j],
                        };
                        Ok(UnionGroup { share, factors, terms })
                    })
                    .collect::<Result<Vec<_>>>()?;
                StrategyVariant::UnionKron(groups)
            }
            "marginal" => {
                let domain: Vec<usize> = serde_json::from_value(
                    body.get("domain")
                        .cloned()
                        .ok_or_else(|| HdmmError::Parse("marginal strategy needs a domain".into()))?,
                )?;
                let theta: Vec<f64> = serde_json::from_value(
                    body.get("theta")
                        .cloned()
                        .ok_or_else(|| HdmmError::Parse("marginal strategy needs theta".into()))?,
                )?;
                if theta.iter().any(|t| *t < 0.0 || !t.is_finite()) {
                    return Err(HdmmError::Parse("theta entries must be nonnegative".into()));
                }
                StrategyVariant::Marginal(MarginalVector::new(DomainShape::new(domain)?, theta)?)
            }
            other => return Err(HdmmError::Parse(format!("unknown strategy variant {other:?}"))),
        };
        let s = Strategy::new(variant, norm);
        s.check_shape()?;
        Ok(s)
    }

    fn check_shape(&self) -> Result<()> {
        let check = |f: &[Matrix], d: &[usize]| -> Result<()> {
            if f.len() != d.len() || f.iter().zip(d).any(|(m, &n)| m.ncols() != n) {
                return Err(HdmmError::Shape("union groups disagree on the domain".into()));
            }
            Ok(())
        };
        match &self.variant {
            StrategyVariant::Kron(f) if f.is_empty() => Err(HdmmError::Shape("empty Kronecker strategy".into())),
            StrategyVariant::UnionKron(groups) => {
                if groups.is_empty() {
                    return Err(HdmmError::Shape("empty union strategy".into()));
                }
                let d = self.domain();
                for g in groups {
                    check(&g.factors, &d)?;
                    if !(g.share > 0.0) {
                        return Err(HdmmError::Shape("union shares must be positive".into()));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Dense `A` for a Kronecker variant; `None` for the others.
    pub fn kron_dense(&self) -> Option<Matrix> {
        match &self.variant {
            StrategyVariant::Kron(f) => Some(kron_all(f)),
            _ => None,
        }
    }
}
