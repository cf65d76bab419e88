//! compile, optimize, analyze and run.

use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use hdmm::mechanism::{analytic_tse, calibrate, measure, reconstruct, rmse_from_q, vectorize_csv};
use hdmm::optimize::opt_selected;
use hdmm::workload::{
    gram, impvec, parse_workload, svd_bound, unit_error, workload_to_json, identity_error, workload_strategy_error,
};
use hdmm::{DomainConfig, ImplicitWorkload, NoiseKind, NoiseSpec, NormKind, OptConfig, Operator, Strategy};

use crate::table::{render, set_ratios, Row, Values};
use crate::{exit_code, CliResult, Failure, Format, EXIT_INPUT, EXIT_OPTIMIZE, EXIT_USAGE};

fn read(path: &str) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::new(EXIT_INPUT, format!("{path}: {e}")))
}

fn write(path: &str, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| Failure::new(EXIT_INPUT, format!("{path}: {e}")))
}

fn in_file(path: &str) -> impl Fn(hdmm::HdmmError) -> Failure + '_ {
    move |e| {
        let mut f = Failure::from(e);
        f.message = format!("{path}: {}", f.message);
        f
    }
}

pub fn load_workload(path: &str) -> CliResult<ImplicitWorkload> {
    let lw = parse_workload(&read(path)?).map_err(in_file(path))?;
    impvec(&lw).map_err(in_file(path))
}

fn norm_name(n: NormKind) -> &'static str {
    match n {
        NormKind::L1 => "l1",
        NormKind::L2 => "l2",
    }
}

/// Strategy file: `{"norm", "variant", "unit_error", "provenance"}`.
pub fn strategy_json(s: &Strategy, q: f64, operator: &str, cfg: &OptConfig) -> Value {
    json!({
        "norm": norm_name(s.norm),
        "variant": s.variant_json(),
        "unit_error": q,
        "provenance": { "operator": operator, "seed": cfg.seed, "restarts": cfg.restarts },
    })
}

pub fn load_strategy(path: &str) -> CliResult<(Strategy, Value)> {
    let text = read(path)?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Failure::new(EXIT_INPUT, format!("{path}: {e}")))?;
    let norm = match v.get("norm").and_then(Value::as_str) {
        Some("l1") => NormKind::L1,
        Some("l2") => NormKind::L2,
        _ => return Err(Failure::new(EXIT_INPUT, format!("{path}: \"norm\" must be \"l1\" or \"l2\""))),
    };
    let variant = v
        .get("variant")
        .ok_or_else(|| Failure::new(EXIT_INPUT, format!("{path}: missing \"variant\"")))?;
    let s = Strategy::from_variant_json(variant, norm).map_err(in_file(path))?;
    Ok((s, v.get("provenance").cloned().unwrap_or(Value::Null)))
}

pub fn compile(workload: &str, out: Option<&str>) -> CliResult<()> {
    let lw = parse_workload(&read(workload)?).map_err(in_file(workload))?;
    let w = impvec(&lw).map_err(in_file(workload))?;
    let n = w.domain_size();
    let m = w.num_queries();
    println!("domain size N: {n}");
    println!("terms k: {}", w.terms.len());
    println!("queries m: {m}");
    println!("implicit storage: {} bytes", 8 * w.implicit_entries());
    println!("explicit storage: {} bytes", 8u128 * m as u128 * n as u128);
    if let Some(out) = out {
        let text = serde_json::to_string_pretty(&workload_to_json(&lw)).expect("serializable");
        write(out, &(text + "\n"))?;
    }
    Ok(())
}

const DEFAULT_OPERATORS: [Operator; 5] =
    [Operator::Kron, Operator::Plus, Operator::Marginal, Operator::Identity, Operator::Workload];

fn parse_operators(names: Option<&[String]>) -> CliResult<Vec<Operator>> {
    match names {
        None => Ok(DEFAULT_OPERATORS.to_vec()),
        Some(names) => names
            .iter()
            .map(|n| Operator::parse(n).ok_or_else(|| Failure::new(EXIT_USAGE, format!("unknown operator {n:?}"))))
            .collect(),
    }
}

pub fn optimize(
    workload: &str,
    noise: NoiseKind,
    operators: Option<&[String]>,
    cfg: &OptConfig,
    out: &str,
) -> CliResult<()> {
    let ops = parse_operators(operators)?;
    let w = load_workload(workload)?;
    let norm = noise.norm();
    let results = opt_selected(&w, &ops, cfg, norm);
    let mut best: Option<&hdmm::OptResult> = None;
    let mut failures = Vec::new();
    for (op, r) in &results {
        match r {
            Ok(r) => {
                let bound = r.svd_bound.map_or("n/a".to_string(), |b| format!("{b:.6e}"));
                println!(
                    "{:<9} Q = {:.6e}  svdb = {bound}  time = {:.3}s",
                    op.name(),
                    r.unit_error,
                    r.wallclock.as_secs_f64()
                );
                if best.map_or(true, |b| r.unit_error < b.unit_error) {
                    best = Some(r);
                }
            }
            Err(e) => {
                println!("{:<9} failed: {e}", op.name());
                failures.push((op, e));
            }
        }
    }
    let optimizers = ops.iter().filter(|o| !matches!(o, Operator::Identity | Operator::Workload)).count();
    let optimizer_failures = failures.iter().filter(|(o, _)| !matches!(o, Operator::Identity | Operator::Workload)).count();
    if optimizers > 0 && optimizer_failures == optimizers || best.is_none() {
        let msg = failures.iter().map(|(o, e)| format!("{}: {e}", o.name())).collect::<Vec<_>>().join("; ");
        let code = match failures.as_slice() {
            [(_, e)] => exit_code(e),
            _ => EXIT_OPTIMIZE,
        };
        return Err(Failure::new(code, msg));
    }
    let best = best.expect("checked above");
    println!("winner: {} (Q = {:.6e})", best.operator.name(), best.unit_error);
    let text = serde_json::to_string_pretty(&strategy_json(&best.strategy, best.unit_error, best.operator.name(), cfg))
        .expect("serializable");
    write(out, &(text + "\n"))
}

fn values(q: f64, noise: &NoiseSpec, m: usize) -> Values {
    Values { q, tse: analytic_tse(q, noise), rmse: rmse_from_q(q, noise, m), ratio: f64::NAN }
}

pub fn analyze_rows(w: &ImplicitWorkload, strategies: &[(String, Strategy)], noise: &NoiseSpec) -> Vec<Row> {
    let g = gram(w);
    let m = w.num_queries();
    let norm = noise.norm();
    let mut rows: Vec<Row> = strategies
        .iter()
        .map(|(name, s)| Row {
            name: name.clone(),
            values: if s.norm != norm {
                Err("strategy was optimized for the other noise mechanism".into())
            } else {
                unit_error(&g, &s.clone().normalized()).map(|q| values(q, noise, m)).map_err(|e| e.to_string())
            },
        })
        .collect();
    rows.push(Row { name: "identity".into(), values: Ok(values(identity_error(&g), noise, m)) });
    rows.push(Row {
        name: "workload".into(),
        values: workload_strategy_error(w, &g, norm).map(|q| values(q, noise, m)).map_err(|e| e.to_string()),
    });
    let candidates = rows.len();
    if let Ok(b) = svd_bound(&g) {
        rows.push(Row { name: "svdb".into(), values: Ok(values(b, noise, m)) });
    }
    set_ratios(&mut rows, candidates);
    rows
}

pub fn analyze(workload: &str, strategies: &[String], noise: NoiseKind, format: Format) -> CliResult<()> {
    let w = load_workload(workload)?;
    let spec = calibrate(noise)?;
    let loaded = strategies
        .iter()
        .map(|p| {
            let (s, _) = load_strategy(p)?;
            let name = Path::new(p).file_stem().map_or(p.clone(), |s| s.to_string_lossy().into_owned());
            Ok((name, s))
        })
        .collect::<CliResult<Vec<_>>>()?;
    print!("{}", render(&analyze_rows(&w, &loaded, &spec), format));
    Ok(())
}

pub struct RunArgs {
    pub dataset: String,
    pub domain: String,
    pub workload: String,
    pub strategy: String,
    pub seed: u64,
    pub zero_noise: bool,
    pub out: String,
}

pub fn run(args: &RunArgs, noise: NoiseKind) -> CliResult<()> {
    let cfg = DomainConfig::from_json(&read(&args.domain)?).map_err(in_file(&args.domain))?;
    let file = fs::File::open(&args.dataset).map_err(|e| Failure::new(EXIT_INPUT, format!("{}: {e}", args.dataset)))?;
    let x = vectorize_csv(file, &cfg).map_err(in_file(&args.dataset))?;
    let w = load_workload(&args.workload)?;
    let (s, provenance) = load_strategy(&args.strategy)?;
    if w.domain != x.domain || s.domain() != x.domain {
        return Err(Failure::new(
            EXIT_INPUT,
            format!("domain mismatch: data {:?}, workload {:?}, strategy {:?}", x.domain, w.domain, s.domain()),
        ));
    }
    let spec = if args.zero_noise { NoiseSpec::zero(noise) } else { calibrate(noise)? }.with_seed(args.seed);
    let m = measure(&s, &x, &spec)?;
    let answers = reconstruct(&s, &m, &w)?;
    let mut csv = String::from("term_index,row_index,answer\n");
    for (j, a) in answers.iter().enumerate() {
        for (i, v) in a.iter().enumerate() {
            csv.push_str(&format!("{j},{i},{v}\n"));
        }
    }
    write(&args.out, &csv)?;
    let (kind, epsilon, delta) = match noise {
        NoiseKind::Laplace { epsilon } => ("laplace", epsilon, None),
        NoiseKind::Gaussian { epsilon, delta } => ("gaussian", epsilon, Some(delta)),
    };
    let meta = json!({
        "noise": kind,
        "epsilon": epsilon,
        "delta": delta,
        "scale": spec.scale,
        "seed": args.seed,
        "zero_noise": args.zero_noise,
        "records": x.total(),
        "strategy": { "path": args.strategy, "kind": s.kind(), "provenance": provenance },
    });
    write(&format!("{}.meta.json", args.out), &(serde_json::to_string_pretty(&meta).expect("serializable") + "\n"))
}
