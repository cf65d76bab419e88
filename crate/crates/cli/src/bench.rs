//! Reproduces reference error tables and checks them against stored targets.

use std::collections::HashMap;
use std::fs;

use serde::Deserialize;

use hdmm::mechanism::{calibrate, rmse_from_q};
use hdmm::optimize::opt_selected;
use hdmm::workload::{gram, identity_error, impvec, svd_bound, workload_strategy_error};
use hdmm::{BuildingBlock, ImplicitWorkload, LogicalWorkload, NoiseKind, NormKind, OptConfig, Operator};

use crate::{CliResult, Failure, Suite, EXIT_BENCH, EXIT_INPUT};

const DEFAULT_TARGETS: &str = include_str!("../fixtures/paper_targets.toml");

/// Permutation seed for the permuted range workload.
const PERMUTATION_SEED: u64 = 0x5eed;

#[derive(Debug, Deserialize)]
struct Targets {
    row: Vec<Target>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Target {
    suite: String,
    id: String,
    target: f64,
    tolerance: f64,
    check: Check,
}

#[derive(Debug, Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum Check {
    Within,
    AtMost,
}

impl Check {
    fn passes(self, measured: f64, target: f64, tolerance: f64) -> bool {
        match self {
            Check::Within => (measured / target - 1.0).abs() <= tolerance,
            Check::AtMost => measured <= target * (1.0 + tolerance),
        }
    }
}

fn suite_name(s: Suite) -> &'static str {
    match s {
        Suite::OneD => "1d",
        Suite::Marginals => "marginals",
        Suite::WorkedExample => "worked-example",
    }
}

fn laplace() -> NoiseKind {
    NoiseKind::Laplace { epsilon: 1.0 }
}

fn gaussian() -> NoiseKind {
    NoiseKind::Gaussian { epsilon: 1.0, delta: 1e-6 }
}

fn family(name: &str) -> Option<BuildingBlock> {
    Some(match name {
        "allrange" => BuildingBlock::AllRange,
        "prefix" => BuildingBlock::Prefix,
        "width32" => BuildingBlock::WidthRange(32),
        "permuted" => BuildingBlock::permuted(BuildingBlock::AllRange, PERMUTATION_SEED),
        _ => return None,
    })
}

/// Evaluates rows by id, caching optimizer runs shared between rows.
struct Runner {
    cfg: OptConfig,
    cache: HashMap<String, f64>,
}

impl Runner {
    fn optimized(&mut self, key: &str, w: &ImplicitWorkload, op: Operator, norm: NormKind) -> Result<f64, String> {
        if let Some(q) = self.cache.get(key) {
            return Ok(*q);
        }
        let (_, r) = opt_selected(w, &[op], &self.cfg, norm).pop().expect("one operator");
        let q = r.map_err(|e| e.to_string())?.unit_error;
        self.cache.insert(key.to_string(), q);
        Ok(q)
    }

    fn measure(&mut self, suite: Suite, id: &str) -> Result<f64, String> {
        let parts: Vec<&str> = id.split('/').collect();
        let err = |e: hdmm::HdmmError| e.to_string();
        match (suite, parts.as_slice()) {
            (Suite::WorkedExample, [what]) => {
                let w = impvec(&LogicalWorkload::k_way_marginals(vec![2, 5, 50, 100], 2).map_err(err)?).map_err(err)?;
                let g = gram(&w);
                match *what {
                    "identity" => Ok(identity_error(&g)),
                    "workload" => workload_strategy_error(&w, &g, NormKind::L1).map_err(err),
                    op => {
                        let op = Operator::parse(op).ok_or_else(|| format!("unknown row {id:?}"))?;
                        self.optimized(id, &w, op, NormKind::L1)
                    }
                }
            }
            (Suite::OneD, [noise, what, fam, n]) => {
                let n: usize = n.parse().map_err(|_| format!("bad size in {id:?}"))?;
                let block = family(fam).ok_or_else(|| format!("unknown family in {id:?}"))?;
                let kind = match *noise {
                    "laplace" => laplace(),
                    "gaussian" => gaussian(),
                    _ => return Err(format!("unknown noise in {id:?}")),
                };
                let noise = calibrate(kind).map_err(err)?;
                let w = impvec(&LogicalWorkload::product(vec![n], vec![block]).map_err(err)?).map_err(err)?;
                let g = gram(&w);
                let m = w.num_queries();
                let svdb = || svd_bound(&g).map_err(err);
                let key = format!("{noise:?}/opt0/{fam}/{n}", noise = kind.norm());
                match *what {
                    "identity" => Ok(rmse_from_q(identity_error(&g), &noise, m)),
                    "svdb" => Ok(rmse_from_q(svdb()?, &noise, m)),
                    "opt0" => Ok(rmse_from_q(self.optimized(&key, &w, Operator::Opt0, kind.norm())?, &noise, m)),
                    // Optimized Q on the permuted workload over Q on the plain one.
                    "permratio" => {
                        let plain = impvec(&LogicalWorkload::product(vec![n], vec![BuildingBlock::AllRange]).map_err(err)?)
                            .map_err(err)?;
                        let base = self.optimized(&format!("{:?}/opt0/allrange/{n}", kind.norm()), &plain, Operator::Opt0, kind.norm())?;
                        Ok(self.optimized(&key, &w, Operator::Opt0, kind.norm())? / base)
                    }
                    _ => Err(format!("unknown row {id:?}")),
                }
            }
            (Suite::Marginals, ["ratio", k]) => {
                let k: usize =
                    k.strip_prefix('k').and_then(|k| k.parse().ok()).ok_or_else(|| format!("unknown row {id:?}"))?;
                self.marginal_ratio(k)
            }
            _ => Err(format!("unknown row {id:?}")),
        }
    }

    fn marginal_ratio(&mut self, k: usize) -> Result<f64, String> {
        let err = |e: hdmm::HdmmError| e.to_string();
        let w = impvec(&LogicalWorkload::k_way_marginals(vec![10; 8], k).map_err(err)?).map_err(err)?;
        let identity = identity_error(&gram(&w));
        let q = self.optimized(&format!("marginals/{k}"), &w, Operator::Marginal, NormKind::L1)?;
        Ok((identity / q).sqrt())
    }
}

pub fn run(suite: Suite, seed: u64, restarts: usize, targets: Option<&str>) -> CliResult<()> {
    let text = match targets {
        Some(p) => fs::read_to_string(p).map_err(|e| Failure::new(EXIT_INPUT, format!("{p}: {e}")))?,
        None => DEFAULT_TARGETS.to_string(),
    };
    let targets: Targets = toml::from_str(&text).map_err(|e| Failure::new(EXIT_INPUT, format!("targets file: {e}")))?;
    let name = suite_name(suite);
    let mut runner = Runner { cfg: OptConfig { restarts, seed, ..Default::default() }, cache: HashMap::new() };
    let mut failed = 0;
    let mut total = 0;
    println!("{:<32} {:>14} {:>14} {:>10} {:>8}  result", "row", "measured", "target", "tolerance", "check");
    for t in targets.row.iter().filter(|t| t.suite == name) {
        total += 1;
        let check = match t.check {
            Check::Within => "within",
            Check::AtMost => "at_most",
        };
        match runner.measure(suite, &t.id) {
            Ok(v) => {
                let ok = t.check.passes(v, t.target, t.tolerance);
                failed += usize::from(!ok);
                println!(
                    "{:<32} {:>14.6} {:>14.6} {:>10.4} {:>8}  {}",
                    t.id,
                    v,
                    t.target,
                    t.tolerance,
                    check,
                    if ok { "PASS" } else { "FAIL" }
                );
            }
            Err(e) => {
                failed += 1;
                println!("{:<32} {:>14} {:>14.6} {:>10.4} {:>8}  FAIL ({e})", t.id, "error", t.target, t.tolerance, check);
            }
        }
    }
    if total == 0 {
        return Err(Failure::new(EXIT_INPUT, format!("no targets for suite {name}")));
    }
    println!("{}/{} rows within tolerance", total - failed, total);
    if failed > 0 {
        return Err(Failure::new(EXIT_BENCH, format!("{failed} bench rows outside tolerance")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_targets_parse_and_cover_every_suite() {
        let t: Targets = toml::from_str(DEFAULT_TARGETS).unwrap();
        for s in ["1d", "marginals", "worked-example"] {
            assert!(t.row.iter().any(|r| r.suite == s));
        }
        assert_eq!(t.row.iter().filter(|r| r.suite == "worked-example").count(), 5);
    }

    #[test]
    fn checks() {
        assert!(Check::Within.passes(1.009, 1.0, 0.01));
        assert!(!Check::Within.passes(0.98, 1.0, 0.01));
        assert!(Check::AtMost.passes(0.5, 1.0, 0.0));
        assert!(!Check::AtMost.passes(1.03, 1.0, 0.02));
    }

    #[test]
    fn analytic_rows_need_no_optimizer() {
        let mut r = Runner { cfg: OptConfig::default(), cache: HashMap::new() };
        assert_eq!(r.measure(Suite::WorkedExample, "identity").unwrap(), 300000.0);
        let v = r.measure(Suite::OneD, "laplace/identity/allrange/64").unwrap();
        assert!((v / 6.63 - 1.0).abs() < 0.005, "{v}");
        assert!(r.measure(Suite::OneD, "laplace/identity/nonsense/64").is_err());
    }
}
