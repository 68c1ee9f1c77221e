//! Moment and tail tables assembled from simulation summaries.

use std::collections::BTreeMap;

use deal_copula::simulation::{tail_probabilities, Setting, SimulationSummary};

use crate::error::{CliError, Result};

/// Row order of the reference tables; other portfolios follow in input order.
pub const PAPER_ROW_ORDER: [&str; 9] = [
    "Portfolio A",
    "Portfolio B",
    "Portfolio C (Diversified)",
    "Portfolio C -- SaaS",
    "Portfolio C -- AI",
    "Portfolio C -- Fintech",
    "Portfolio C -- Consumer",
    "Portfolio C -- DevTools",
    "Portfolio C -- Health",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    /// Left-aligned text columns, numbers right-aligned.
    pub fn to_text(&self) -> String {
        let widths: Vec<usize> = (0..self.header.len())
            .map(|c| {
                self.rows
                    .iter()
                    .map(|r| r[c].chars().count())
                    .chain([self.header[c].chars().count()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, &w))| if c < 2 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            parts.join("  ").trim_end().to_string()
        };
        let mut out = format!("{}\n", self.title);
        out.push_str(&line(&self.header));
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }
}

pub fn fmt_moment(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

pub fn fmt_percent(p: f64) -> String {
    format!("{:.2}%", 100.0 * p)
}

/// Moment and tail tables for one portfolio size, plus warnings about
/// missing independent/correlated counterparts.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeTables {
    pub n: usize,
    pub moments: Table,
    pub tails: Table,
    pub warnings: Vec<String>,
}

fn ordered_names<'a>(summaries: &[&'a SimulationSummary]) -> Vec<&'a str> {
    let mut names: Vec<&str> = PAPER_ROW_ORDER
        .iter()
        .copied()
        .filter(|n| summaries.iter().any(|s| s.portfolio == *n))
        .collect();
    for s in summaries {
        if !names.contains(&s.portfolio.as_str()) {
            names.push(&s.portfolio);
        }
    }
    names
}

/// Builds tables for summaries that all share one portfolio size.
pub fn size_tables(summaries: &[&SimulationSummary]) -> Result<SizeTables> {
    let n = summaries
        .first()
        .map(|s| s.n)
        .ok_or_else(|| CliError::Data("no summaries to tabulate".into()))?;
    if let Some(s) = summaries.iter().find(|s| s.n != n) {
        return Err(CliError::Data(format!(
            "mixed portfolio sizes in one table: {n} and {} ({})",
            s.n, s.portfolio
        )));
    }
    let mut thresholds: Vec<u64> = Vec::new();
    for s in summaries {
        for t in &s.tail {
            if !thresholds.contains(&t.threshold) {
                thresholds.push(t.threshold);
            }
        }
    }
    let mut by_key: BTreeMap<(&str, Setting), &SimulationSummary> = BTreeMap::new();
    for s in summaries {
        if by_key.insert((s.portfolio.as_str(), s.setting), s).is_some() {
            return Err(CliError::Data(format!(
                "duplicate summary for {} ({}) at n = {n}",
                s.portfolio, s.setting
            )));
        }
    }

    let mut moments = Table {
        title: format!("Summary statistics of K, {n}-deal portfolios"),
        header: ["Portfolio", "Setting", "Mean", "Std", "Skew", "Kurt"].map(String::from).to_vec(),
        rows: Vec::new(),
    };
    let mut tails = Table {
        title: format!("Tail probabilities, {n}-deal portfolios"),
        header: ["Portfolio", "Setting"]
            .map(String::from)
            .into_iter()
            .chain(thresholds.iter().map(|t| format!("P(K>={t})")))
            .collect(),
        rows: Vec::new(),
    };
    // Placeholder rows only make sense when the input is side by side.
    let settings: Vec<Setting> = Setting::ALL
        .into_iter()
        .filter(|s| summaries.iter().any(|x| x.setting == *s))
        .collect();
    let mut warnings = Vec::new();
    for name in ordered_names(summaries) {
        for &setting in &settings {
            let label = [name.to_string(), setting.to_string()];
            match by_key.get(&(name, setting)) {
                Some(s) => {
                    moments.rows.push(
                        label
                            .iter()
                            .cloned()
                            .chain([
                                format!("{:.2}", s.mean),
                                format!("{:.2}", s.std),
                                fmt_moment(s.skew),
                                fmt_moment(s.kurt),
                            ])
                            .collect(),
                    );
                    tails.rows.push(
                        label
                            .iter()
                            .cloned()
                            .chain(tail_probabilities(s, &thresholds).iter().map(|t| fmt_percent(t.probability)))
                            .collect(),
                    );
                }
                None => {
                    warnings.push(format!("{name}: no {setting} summary at n = {n}; row left blank"));
                    moments.rows.push(label.iter().cloned().chain(vec![String::new(); 4]).collect());
                    tails
                        .rows
                        .push(label.iter().cloned().chain(vec![String::new(); thresholds.len()]).collect());
                }
            }
        }
    }
    Ok(SizeTables {
        n,
        moments,
        tails,
        warnings,
    })
}

/// Groups summaries by portfolio size (ascending) and builds each size's
/// tables. With `only = Some(n)` every summary must have that size.
pub fn build_tables(summaries: &[SimulationSummary], only: Option<usize>) -> Result<Vec<SizeTables>> {
    if let Some(n) = only {
        if let Some(s) = summaries.iter().find(|s| s.n != n) {
            return Err(CliError::Data(format!(
                "table requested for n = {n} but {} ({}) has n = {}",
                s.portfolio, s.setting, s.n
            )));
        }
    }
    let mut groups: BTreeMap<usize, Vec<&SimulationSummary>> = BTreeMap::new();
    for s in summaries {
        groups.entry(s.n).or_default().push(s);
    }
    groups.values().map(|g| size_tables(g)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> Table {
        Table {
            title: "T".into(),
            header: ["Portfolio", "Setting", "Mean"].map(String::from).to_vec(),
            rows: vec![["Portfolio A", "independent", "7.10"].map(String::from).to_vec()],
        }
    }

    #[test]
    fn text_aligns_columns() {
        let text = table().to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "T");
        assert_eq!(lines[1], "Portfolio    Setting      Mean");
        assert_eq!(lines[2], "-".repeat(30));
        assert_eq!(lines[3], "Portfolio A  independent  7.10");
    }

    #[test]
    fn csv_has_header_and_rows() {
        assert_eq!(table().to_csv(), "Portfolio,Setting,Mean\nPortfolio A,independent,7.10\n");
    }

    #[test]
    fn formatting() {
        assert_eq!(fmt_moment(None), "n/a");
        assert_eq!(fmt_moment(Some(1.234)), "1.23");
        assert_eq!(fmt_percent(0.02384), "2.38%");
    }
}
