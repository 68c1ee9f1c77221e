//! Deal-population reconstruction from published first- and second-order
//! counts, synthetic success probabilities, and deal/table file formats.

mod generate;
mod io;
mod probability;
mod report;

pub use generate::{generate_population, PopulationTarget};
pub(crate) use io::csv_error;
pub use io::{
    load_deals, load_marginals, load_pair_counts, load_sigma_table, save_deals, save_marginals,
    save_pair_counts, save_sigma_table, DEAL_HEADER,
};
pub use probability::{assign_probability, SectorNudge, SyntheticProbRule};
pub use report::{attribute_report, bucket_report, AttributeRow, Bucket, BucketRow};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixtures;
use crate::model::{AttributeGroup, Deal, ATTRIBUTE_LABELS, DIM};

/// Deals per attribute, in canonical attribute order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarginalCounts(pub [u64; DIM]);

impl MarginalCounts {
    pub fn new(counts: [u64; DIM]) -> Result<Self> {
        let m = MarginalCounts(counts);
        m.validate()?;
        Ok(m)
    }

    pub fn paper() -> Self {
        MarginalCounts(fixtures::MARGINALS)
    }

    /// Founder counts and geography counts must both sum to the total.
    pub fn validate(&self) -> Result<()> {
        let founders: u64 = self.0[AttributeGroup::Founder.range()].iter().sum();
        let geos: u64 = self.0[AttributeGroup::Geography.range()].iter().sum();
        if founders != geos {
            return Err(Error::InconsistentTables(format!(
                "founder counts sum to {founders} but geography counts sum to {geos}"
            )));
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.0[0] + self.0[1]
    }

    pub fn get(&self, u: usize) -> u64 {
        self.0[u]
    }
}

/// Ordered cross-deal pair counts: entry `(u, v)` counts pairs `(i, j)`,
/// `i != j`, with `i` carrying `u` and `j` carrying `v`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCountTable(pub [[u64; DIM]; DIM]);

impl PairCountTable {
    pub fn paper() -> Self {
        PairCountTable(fixtures::PAIR_COUNTS)
    }

    pub fn get(&self, u: usize, v: usize) -> u64 {
        self.0[u][v]
    }

    pub fn check_symmetric(&self) -> Result<()> {
        for u in 0..DIM {
            for v in 0..u {
                if self.0[u][v] != self.0[v][u] {
                    return Err(Error::InconsistentTables(format!(
                        "pair counts not symmetric at ({}, {}): {} vs {}",
                        ATTRIBUTE_LABELS[u], ATTRIBUTE_LABELS[v], self.0[u][v], self.0[v][u]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Recomputes the ordered pair counts of a population.
    pub fn from_deals(deals: &[Deal]) -> Self {
        let cooc = CooccurrenceMatrix::from_deals(deals);
        let n: [u64; DIM] = std::array::from_fn(|u| cooc.0[u][u]);
        PairCountTable(std::array::from_fn(|u| {
            std::array::from_fn(|v| n[u] * n[v] - cooc.0[u][v])
        }))
    }
}

/// Within-deal co-occurrence: entry `(u, v)` counts deals carrying both
/// `u` and `v`; the diagonal holds the marginal counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CooccurrenceMatrix(pub [[u64; DIM]; DIM]);

impl CooccurrenceMatrix {
    pub fn from_deals(deals: &[Deal]) -> Self {
        let mut c = [[0u64; DIM]; DIM];
        for deal in deals {
            let ones: Vec<usize> = deal.attributes().ones().collect();
            for &u in &ones {
                for &v in &ones {
                    c[u][v] += 1;
                }
            }
        }
        CooccurrenceMatrix(c)
    }

    pub fn get(&self, u: usize, v: usize) -> u64 {
        self.0[u][v]
    }

    pub fn marginals(&self) -> MarginalCounts {
        MarginalCounts(std::array::from_fn(|u| self.0[u][u]))
    }
}

/// Inverts `pairs(u, v) = n_u n_v - n_{u,v}` to recover within-deal
/// co-occurrence counts.
pub fn derive_cooccurrence(
    marginals: &MarginalCounts,
    pairs: &PairCountTable,
) -> Result<CooccurrenceMatrix> {
    marginals.validate()?;
    pairs.check_symmetric()?;
    let n = &marginals.0;
    let mut c = [[0u64; DIM]; DIM];
    let mut problems = Vec::new();
    for u in 0..DIM {
        for v in 0..DIM {
            let product = n[u] as i128 * n[v] as i128;
            let value = product - pairs.0[u][v] as i128;
            let (lu, lv) = (ATTRIBUTE_LABELS[u], ATTRIBUTE_LABELS[v]);
            if u == v {
                if pairs.0[u][u] as i128 != n[u] as i128 * (n[u] as i128 - 1).max(0) {
                    problems.push(format!(
                        "diagonal ({lu}) is {} but n(n-1) = {}",
                        pairs.0[u][u],
                        n[u] as i128 * (n[u] as i128 - 1).max(0)
                    ));
                }
                c[u][u] = n[u];
                continue;
            }
            if value < 0 {
                problems.push(format!("({lu}, {lv}) derives negative count {value}"));
                continue;
            }
            if value > n[u].min(n[v]) as i128 {
                problems.push(format!(
                    "({lu}, {lv}) derives {value} > min(n_u, n_v) = {}",
                    n[u].min(n[v])
                ));
                continue;
            }
            let same_exclusive_group = AttributeGroup::of(u) == AttributeGroup::of(v)
                && AttributeGroup::of(u) != AttributeGroup::Market;
            if same_exclusive_group && value != 0 {
                problems.push(format!(
                    "({lu}, {lv}) are mutually exclusive but derive {value} shared deals"
                ));
                continue;
            }
            c[u][v] = value as u64;
        }
    }
    if problems.is_empty() {
        Ok(CooccurrenceMatrix(c))
    } else {
        Err(Error::InconsistentTables(problems.join("; ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::attribute_index;

    #[test]
    fn derive_published_cooccurrence() {
        let c = derive_cooccurrence(&MarginalCounts::paper(), &PairCountTable::paper()).unwrap();
        let idx = |l| attribute_index(l).unwrap();
        // exact integer oracle
        assert_eq!(4162u64 * 1986 - 8_264_816, 916);
        assert_eq!(c.get(idx("M_SaaS"), idx("M_AI")), 916);
        assert_eq!(8833u64 * 3003 - 26_522_684, 2815);
        assert_eq!(c.get(idx("F_first"), idx("G_CA")), 2815);
        assert_eq!(c.get(idx("F_first"), idx("F_repeat")), 0);
        for u in 0..DIM {
            assert_eq!(c.get(u, u), fixtures::MARGINALS[u]);
            for v in 0..DIM {
                assert_eq!(c.get(u, v), c.get(v, u));
            }
        }
        // geography block is diagonal
        for u in 2..6 {
            for v in 2..6 {
                if u != v {
                    assert_eq!(c.get(u, v), 0);
                }
            }
        }
    }

    #[test]
    fn derive_rejects_inconsistent_tables() {
        let mut pairs = PairCountTable::paper();
        pairs.0[6][7] += 1_000_000;
        pairs.0[7][6] += 1_000_000;
        let err = derive_cooccurrence(&MarginalCounts::paper(), &pairs).unwrap_err();
        assert!(err.to_string().contains("M_SaaS"), "{err}");

        let mut pairs = PairCountTable::paper();
        pairs.0[0][0] += 1;
        assert!(derive_cooccurrence(&MarginalCounts::paper(), &pairs).is_err());

        let mut pairs = PairCountTable::paper();
        pairs.0[2][3] -= 1;
        pairs.0[3][2] -= 1;
        let err = derive_cooccurrence(&MarginalCounts::paper(), &pairs).unwrap_err();
        assert!(err.to_string().contains("mutually exclusive"), "{err}");

        let mut m = fixtures::MARGINALS;
        m[0] += 1;
        assert!(MarginalCounts::new(m).is_err());
    }
}
