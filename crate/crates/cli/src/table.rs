//! Shared row model for comparison tables.

use crate::Format;

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub name: String,
    /// `Err` carries the reason a row could not be evaluated.
    pub values: Result<Values, String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Values {
    pub q: f64,
    pub tse: f64,
    pub rmse: f64,
    /// RMSE relative to the best strategy row.
    pub ratio: f64,
}

/// Fills in `ratio` against the lowest-Q row among `candidates`.
pub fn set_ratios(rows: &mut [Row], candidates: usize) {
    let best = rows[..candidates.min(rows.len())]
        .iter()
        .filter_map(|r| r.values.as_ref().ok())
        .map(|v| v.q)
        .fold(f64::INFINITY, f64::min);
    for r in rows.iter_mut() {
        if let Ok(v) = r.values.as_mut() {
            v.ratio = if best.is_finite() && best > 0.0 { (v.q / best).sqrt() } else { f64::NAN };
        }
    }
}

pub fn render(rows: &[Row], format: Format) -> String {
    let mut out = String::new();
    match format {
        Format::Csv => {
            out.push_str("strategy,q,tse,rmse,ratio,note\n");
            for r in rows {
                match &r.values {
                    Ok(v) => out.push_str(&format!("{},{},{},{},{},\n", csv_field(&r.name), v.q, v.tse, v.rmse, v.ratio)),
                    Err(e) => out.push_str(&format!("{},,,,,{}\n", csv_field(&r.name), csv_field(e))),
                }
            }
        }
        Format::Markdown => {
            out.push_str("| strategy | Q | TSE | RMSE | ratio |\n|---|---:|---:|---:|---:|\n");
            for r in rows {
                match &r.values {
                    Ok(v) => out.push_str(&format!(
                        "| {} | {:.6e} | {:.6e} | {:.4} | {:.4} |\n",
                        r.name, v.q, v.tse, v.rmse, v.ratio
                    )),
                    Err(e) => out.push_str(&format!("| {} | unsupported: {} | | | |\n", r.name, e)),
                }
            }
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(name: &str, q: f64) -> Row {
        Row { name: name.into(), values: Ok(Values { q, tse: q, rmse: q.sqrt(), ratio: 0.0 }) }
    }

    #[test]
    fn ratio_is_root_of_q_ratio() {
        let mut rows = vec![row("a", 4.0), row("b", 16.0), Row { name: "c".into(), values: Err("x".into()) }];
        set_ratios(&mut rows, 3);
        assert_eq!(rows[0].values.as_ref().unwrap().ratio, 1.0);
        assert_eq!(rows[1].values.as_ref().unwrap().ratio, 2.0);
    }

    #[test]
    fn csv_and_markdown_share_rows() {
        let mut rows = vec![row("a,b", 1.0), Row { name: "bad".into(), values: Err("no support".into()) }];
        set_ratios(&mut rows, 2);
        let csv = render(&rows, Format::Csv);
        assert!(csv.contains("\"a,b\",1,1,1,1,"));
        assert!(csv.ends_with("bad,,,,,no support\n"));
        let md = render(&rows, Format::Markdown);
        assert_eq!(md.lines().count(), 4);
    }
}
