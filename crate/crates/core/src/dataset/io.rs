//! Delimited-text formats: the deal file and labeled 12-attribute tables.
//!
//! Deal file: header `id,founder,geo,markets,p,outcome`, one deal per row,
//! markets semicolon-joined, outcome empty / `0` / `1`.
//!
//! Tables: the 12 attribute labels as header (matrix tables carry a leading
//! empty cell and a row label per row).

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::{MarginalCounts, PairCountTable};
use crate::error::{Error, Result};
use crate::mathcore::Probability;
use crate::model::{Deal, DealId, Geography, Matrix12, ATTRIBUTE_LABELS, DIM};

pub const DEAL_HEADER: [&str; 6] = ["id", "founder", "geo", "markets", "p", "outcome"];

/// Shortest round-trip decimal, zero-padded to at least 12 significant
/// digits.
pub(crate) fn format_probability(p: f64) -> String {
    // f64 Display never switches to exponent notation.
    let mut s = format!("{p}");
    if !s.contains('.') {
        s.push('.');
    }
    let significant = s
        .trim_start_matches(['0', '.'])
        .chars()
        .filter(char::is_ascii_digit)
        .count();
    s.extend(std::iter::repeat_n('0', 12usize.saturating_sub(significant)));
    s
}

fn csv_reader(path: &Path) -> Result<csv::Reader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(BufReader::new(file)))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

pub fn save_deals(deals: &[Deal], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "{}", DEAL_HEADER.join(",")).map_err(io)?;
    for d in deals {
        let outcome = match d.outcome {
            None => "",
            Some(true) => "1",
            Some(false) => "0",
        };
        writeln!(
            out,
            "{},{},{},{},{},{}",
            d.id,
            d.founder,
            d.geo,
            d.markets,
            format_probability(d.p.value()),
            outcome
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn load_deals(path: impl AsRef<Path>) -> Result<Vec<Deal>> {
    let path = path.as_ref();
    let mut reader = csv_reader(path)?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != DEAL_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {:?}, got {:?}", DEAL_HEADER, names),
        });
    }
    let mut deals = Vec::new();
    let mut seen = BTreeSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let bad = |message: String| Error::Parse { line, message };
        if record.len() != DEAL_HEADER.len() {
            return Err(bad(format!(
                "expected {} fields, got {}",
                DEAL_HEADER.len(),
                record.len()
            )));
        }
        let id = record[0]
            .trim()
            .parse::<u64>()
            .map(DealId)
            .map_err(|e| bad(format!("id {:?}: {e}", &record[0])))?;
        let founder = record[1].parse().map_err(|e: Error| bad(e.to_string()))?;
        let geo: Geography = record[2].parse().map_err(|_| {
            bad(format!(
                "geography {:?} must be exactly one of CA, NY, OtherUS, Intl",
                &record[2]
            ))
        })?;
        let markets = record[3].parse().map_err(|e: Error| bad(e.to_string()))?;
        let p = record[4]
            .trim()
            .parse::<f64>()
            .map_err(|e| bad(format!("p {:?}: {e}", &record[4])))
            .and_then(|v| Probability::new(v).map_err(|e| bad(e.to_string())))?;
        let outcome = match record[5].trim() {
            "" => None,
            "0" => Some(false),
            "1" => Some(true),
            other => return Err(bad(format!("outcome {other:?} must be empty, 0 or 1"))),
        };
        if !seen.insert(id) {
            return Err(Error::Validation(format!(
                "duplicate deal id {id} at line {line}"
            )));
        }
        deals.push(Deal {
            id,
            founder,
            geo,
            markets,
            p,
            outcome,
        });
    }
    Ok(deals)
}

fn check_labels(found: &[&str], line: usize) -> Result<()> {
    if found != ATTRIBUTE_LABELS {
        return Err(Error::Parse {
            line,
            message: format!("expected attribute labels {:?}, got {:?}", ATTRIBUTE_LABELS, found),
        });
    }
    Ok(())
}

fn parse_cell<T: std::str::FromStr>(raw: &str, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.trim().replace('_', "").parse().map_err(|e| Error::Parse {
        line,
        message: format!("cell {raw:?}: {e}"),
    })
}

/// Reads a labeled 12 x 12 table (leading label column).
fn read_matrix<T: std::str::FromStr + Copy + Default>(path: &Path) -> Result<[[T; DIM]; DIM]>
where
    T::Err: std::fmt::Display,
{
    let mut reader = csv_reader(path)?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let labels: Vec<&str> = header.iter().skip(1).map(str::trim).collect();
    check_labels(&labels, 1)?;
    let mut table = [[T::default(); DIM]; DIM];
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if rows >= DIM {
            return Err(Error::Parse {
                line,
                message: "more than 12 rows".into(),
            });
        }
        if record.get(0).map(str::trim) != Some(ATTRIBUTE_LABELS[rows]) || record.len() != DIM + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected row {} with 12 cells", ATTRIBUTE_LABELS[rows]),
            });
        }
        for v in 0..DIM {
            table[rows][v] = parse_cell(&record[v + 1], line)?;
        }
        rows += 1;
    }
    if rows != DIM {
        return Err(Error::Parse {
            line: rows + 1,
            message: format!("expected 12 rows, found {rows}"),
        });
    }
    Ok(table)
}

fn write_matrix<T: std::fmt::Display>(path: &Path, table: &[[T; DIM]; DIM]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, ",{}", ATTRIBUTE_LABELS.join(",")).map_err(io)?;
    for (u, row) in table.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(ToString::to_string).collect();
        writeln!(out, "{},{}", ATTRIBUTE_LABELS[u], cells.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn load_marginals(path: impl AsRef<Path>) -> Result<MarginalCounts> {
    let path = path.as_ref();
    let mut reader = csv_reader(path)?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let labels: Vec<&str> = header.iter().map(str::trim).collect();
    check_labels(&labels, 1)?;
    let mut records = reader.records();
    let record = match records.next() {
        Some(r) => r.map_err(|e| csv_error(path, e))?,
        None => {
            return Err(Error::Parse {
                line: 2,
                message: "missing count row".into(),
            })
        }
    };
    if record.len() != DIM {
        return Err(Error::Parse {
            line: 2,
            message: format!("expected 12 counts, got {}", record.len()),
        });
    }
    let mut counts = [0u64; DIM];
    for (u, raw) in record.iter().enumerate() {
        counts[u] = parse_cell(raw, 2)?;
    }
    MarginalCounts::new(counts)
}

pub fn save_marginals(m: &MarginalCounts, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let cells: Vec<String> = m.0.iter().map(ToString::to_string).collect();
    std::fs::write(path, format!("{}\n{}\n", ATTRIBUTE_LABELS.join(","), cells.join(",")))
        .map_err(|e| Error::io(path, e))
}

pub fn load_pair_counts(path: impl AsRef<Path>) -> Result<PairCountTable> {
    let table = PairCountTable(read_matrix::<u64>(path.as_ref())?);
    table.check_symmetric()?;
    Ok(table)
}

pub fn save_pair_counts(table: &PairCountTable, path: impl AsRef<Path>) -> Result<()> {
    write_matrix(path.as_ref(), &table.0)
}

/// Reads a labeled covariance table; rejects asymmetric input.
pub fn load_sigma_table(path: impl AsRef<Path>) -> Result<Matrix12> {
    let table = read_matrix::<f64>(path.as_ref())?;
    for u in 0..DIM {
        for v in 0..u {
            if table[u][v] != table[v][u] {
                return Err(Error::Validation(format!(
                    "covariance table not symmetric at ({}, {})",
                    ATTRIBUTE_LABELS[u], ATTRIBUTE_LABELS[v]
                )));
            }
        }
    }
    Ok(Matrix12::from_fn(|i, j| table[i][j]))
}

pub fn save_sigma_table(sigma: &Matrix12, path: impl AsRef<Path>) -> Result<()> {
    let table: [[f64; DIM]; DIM] = std::array::from_fn(|i| std::array::from_fn(|j| sigma[(i, j)]));
    write_matrix(path.as_ref(), &table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{FounderType, Market, MarketSet};
    use proptest::prelude::*;

    fn sample_deals() -> Vec<Deal> {
        vec![
            Deal {
                id: DealId(1),
                founder: FounderType::Repeat,
                geo: Geography::CA,
                markets: [Market::SaaS, Market::AI].into_iter().collect(),
                p: Probability::new(0.2).unwrap(),
                outcome: Some(true),
            },
            Deal {
                id: DealId(2),
                founder: FounderType::FirstTime,
                geo: Geography::Intl,
                markets: MarketSet::EMPTY,
                p: Probability::new(0.0712345678901234).unwrap(),
                outcome: None,
            },
            Deal {
                id: DealId(3),
                founder: FounderType::FirstTime,
                geo: Geography::OtherUS,
                markets: MarketSet::single(Market::Health),
                p: Probability::new(0.05).unwrap(),
                outcome: Some(false),
            },
        ]
    }

    #[test]
    fn deals_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deals.csv");
        let deals = sample_deals();
        save_deals(&deals, &path).unwrap();
        assert_eq!(load_deals(&path).unwrap(), deals);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("id,founder,geo,markets,p,outcome\n"));
        assert!(text.contains("1,Repeat,CA,SaaS;AI,0.200000000000,1\n"), "{text}");
        assert!(text.contains("2,FirstTime,Intl,,0.0712345678901234,\n"), "{text}");
    }

    #[test]
    fn header_only_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deals.csv");
        std::fs::write(&path, "id,founder,geo,markets,p,outcome\n").unwrap();
        assert!(load_deals(&path).unwrap().is_empty());
    }

    #[test]
    fn rejects_non_one_hot_geography() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deals.csv");
        std::fs::write(
            &path,
            "id,founder,geo,markets,p,outcome\n1,FirstTime,NY,,0.1,\n2,Repeat,\"CA,NY\",SaaS,0.15,\n",
        )
        .unwrap();
        match load_deals(&path) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("exactly one"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_duplicates_and_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deals.csv");
        std::fs::write(
            &path,
            "id,founder,geo,markets,p,outcome\n1,FirstTime,NY,,0.1,\n1,Repeat,CA,SaaS,0.15,\n",
        )
        .unwrap();
        assert!(matches!(load_deals(&path), Err(Error::Validation(_))));

        std::fs::write(&path, "id,founder,geo,markets,p,outcome\n1,FirstTime,NY,Crypto,0.1,\n").unwrap();
        assert!(matches!(load_deals(&path), Err(Error::Parse { line: 2, .. })));

        std::fs::write(&path, "id,founder,geo,markets,p,outcome\n1,FirstTime,NY,,1.3,\n").unwrap();
        assert!(matches!(load_deals(&path), Err(Error::Parse { line: 2, .. })));

        std::fs::write(&path, "id,founder,geo,markets,p,outcome\n1,FirstTime,NY,,0.1,yes\n").unwrap();
        assert!(matches!(load_deals(&path), Err(Error::Parse { line: 2, .. })));

        std::fs::write(&path, "id,founder,geo\n").unwrap();
        assert!(matches!(load_deals(&path), Err(Error::Parse { line: 1, .. })));

        assert!(matches!(
            load_deals(dir.path().join("missing.csv")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn tables_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("marginals.csv");
        save_marginals(&MarginalCounts::paper(), &m).unwrap();
        assert_eq!(load_marginals(&m).unwrap(), MarginalCounts::paper());

        let p = dir.path().join("pairs.csv");
        save_pair_counts(&PairCountTable::paper(), &p).unwrap();
        assert_eq!(load_pair_counts(&p).unwrap(), PairCountTable::paper());

        let s = dir.path().join("sigma.csv");
        let sigma = Matrix12::from_fn(|i, j| fixtures::SIGMA[i][j]);
        save_sigma_table(&sigma, &s).unwrap();
        assert_eq!(load_sigma_table(&s).unwrap(), sigma);
    }

    #[test]
    fn asymmetric_tables_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pairs.csv");
        let mut t = PairCountTable::paper();
        t.0[0][3] += 1;
        save_pair_counts(&t, &p).unwrap();
        assert!(matches!(load_pair_counts(&p), Err(Error::InconsistentTables(_))));

        let s = dir.path().join("sigma.csv");
        let mut sigma = Matrix12::from_fn(|i, j| fixtures::SIGMA[i][j]);
        sigma[(0, 5)] = 0.5;
        save_sigma_table(&sigma, &s).unwrap();
        assert!(matches!(load_sigma_table(&s), Err(Error::Validation(_))));
    }

    proptest! {
        #[test]
        fn probability_text_is_lossless(p in 0.0f64..=1.0) {
            let s = format_probability(p);
            prop_assert_eq!(s.parse::<f64>().unwrap(), p);
            let digits = s.trim_start_matches(['0', '.']).chars().filter(char::is_ascii_digit).count();
            prop_assert!(digits >= 12 || p == 0.0, "{}", s);
        }
    }
}
