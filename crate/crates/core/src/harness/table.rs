use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;

use super::run::{median, write_rows, ResultRow};
use crate::error::{FedError, Result};

/// Grouped summary of one metric across result rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub group_by: Vec<String>,
    pub metric: String,
    pub rows: Vec<TableRow>,
    /// Diverged runs left out of the statistics.
    pub excluded_diverged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub keys: Vec<String>,
    /// Runs that entered the statistics.
    pub count: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

fn cmp_keys(a: &[String], b: &[String]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = match (x.parse::<f64>(), y.parse::<f64>()) {
            (Ok(p), Ok(q)) => p.total_cmp(&q),
            _ => x.cmp(y),
        };
        if o != Ordering::Equal {
            return o;
        }
    }
    Ordering::Equal
}

/// Builds a table from rows CSV. An empty metric cell means "not reached"
/// and counts as +∞.
pub fn table_from_csv<R: Read>(input: R, group_by: &[String], metric: &str) -> Result<Table> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| FedError::config(name, "unknown field"))
    };
    let key_cols = group_by.iter().map(|g| col(g)).collect::<Result<Vec<_>>>()?;
    let metric_col = col(metric)?;
    let diverged_col = headers.iter().position(|h| h == "diverged");

    let mut groups: BTreeMap<Vec<String>, Vec<f64>> = BTreeMap::new();
    let mut excluded = 0;
    for rec in reader.records() {
        let rec = rec?;
        let keys: Vec<String> = key_cols.iter().map(|&c| rec.get(c).unwrap_or("").to_string()).collect();
        let values = groups.entry(keys).or_default();
        if diverged_col.and_then(|c| rec.get(c)) == Some("true") {
            excluded += 1;
            continue;
        }
        let cell = rec.get(metric_col).unwrap_or("").trim();
        let v = if cell.is_empty() {
            f64::INFINITY
        } else {
            cell.parse::<f64>()
                .map_err(|_| FedError::config(metric, format!("not numeric: {cell:?}")))?
        };
        values.push(v);
    }
    let mut rows: Vec<TableRow> = groups
        .into_iter()
        .map(|(keys, mut v)| {
            let (min, max) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
            TableRow {
                keys,
                count: v.len(),
                median: median(&mut v),
                min: if v.is_empty() { f64::NAN } else { min },
                max: if v.is_empty() { f64::NAN } else { max },
            }
        })
        .collect();
    rows.sort_by(|a, b| cmp_keys(&a.keys, &b.keys));
    Ok(Table {
        group_by: group_by.to_vec(),
        metric: metric.to_string(),
        rows,
        excluded_diverged: excluded,
    })
}

pub fn emit_table(rows: &[ResultRow], group_by: &[String], metric: &str) -> Result<Table> {
    let mut buf = Vec::new();
    write_rows(&mut buf, rows)?;
    if rows.is_empty() {
        return Err(FedError::config("rows", "no rows to tabulate"));
    }
    table_from_csv(buf.as_slice(), group_by, metric)
}

fn cell(v: f64) -> String {
    if v.is_nan() {
        "-".into()
    } else if v.is_infinite() {
        "inf".into()
    } else if v == v.trunc() && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v:.6e}")
    }
}

impl Table {
    fn header(&self) -> Vec<String> {
        let mut h = self.group_by.clone();
        h.extend(["n", "median", "min", "max"].map(String::from));
        h
    }

    fn body(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let mut line = r.keys.clone();
                line.extend([r.count.to_string(), cell(r.median), cell(r.min), cell(r.max)]);
                line
            })
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header())?;
        for line in self.body() {
            w.write_record(line)?;
        }
        let bytes = w.into_inner().map_err(|e| FedError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Column-aligned text with a footnote for excluded runs.
    pub fn to_text(&self) -> String {
        let header = self.header();
        let body = self.body();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| body.iter().map(|l| l[i].len()).chain([header[i].len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let mut line = |cells: &[String]| {
            let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&header);
        for l in &body {
            line(l);
        }
        let _ = writeln!(out, "metric: {}", self.metric);
        if self.excluded_diverged > 0 {
            let _ = writeln!(out, "* {} diverged run(s) excluded", self.excluded_diverged);
        }
        out
    }
}
