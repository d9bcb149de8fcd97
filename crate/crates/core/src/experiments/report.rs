//! Delimited output tables with fixed float formatting.

use serde::{Deserialize, Serialize};

use crate::metrics::{mean, std_dev};

/// Mean and a quarter of one standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub quarter_std: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        Self {
            n: xs.len(),
            mean: mean(xs),
            quarter_std: 0.25 * std_dev(xs),
        }
    }
}

pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NA".to_string()
    } else {
        format!("{x:.10}")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|s| s.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }
}

/// One point of a plotted series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub series: String,
    pub x: String,
    pub summary: Summary,
}

impl PlotPoint {
    pub fn new(series: &str, x: impl ToString, summary: Summary) -> Self {
        Self {
            series: series.to_string(),
            x: x.to_string(),
            summary,
        }
    }
}

/// `series, x, mean, quarter_std, n` rows.
pub fn plot_table(points: &[PlotPoint]) -> Table {
    let mut t = Table::new(&["series", "x", "mean", "quarter_std", "n"]);
    for p in points {
        t.push(vec![
            p.series.clone(),
            p.x.clone(),
            fmt_f64(p.summary.mean),
            fmt_f64(p.summary.quarter_std),
            p.summary.n.to_string(),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_uses_quarter_std() {
        let s = Summary::of(&[1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        // Sample standard deviation of {1, 3} is sqrt(2).
        assert!((s.quarter_std - 2f64.sqrt() / 4.0).abs() < 1e-15);
    }

    #[test]
    fn csv_quotes_fields_with_commas() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["x,y".into(), fmt_f64(0.5)]);
        assert_eq!(t.to_csv(), "a,b\n\"x,y\",0.5000000000\n");
    }

    #[test]
    fn nan_prints_na() {
        assert_eq!(fmt_f64(f64::NAN), "NA");
    }
}
