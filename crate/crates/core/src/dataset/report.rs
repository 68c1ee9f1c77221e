use serde::Serialize;

use crate::model::{Deal, FounderType, ATTRIBUTE_LABELS, DIM};

/// Conditional buckets of the founder-split probability report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Bucket {
    None,
    CaNy,
    OtherUsIntl,
    HotSectors,
    NonHotSectors,
}

impl Bucket {
    pub const ALL: [Bucket; 5] = [
        Bucket::None,
        Bucket::CaNy,
        Bucket::OtherUsIntl,
        Bucket::HotSectors,
        Bucket::NonHotSectors,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Bucket::None => "None",
            Bucket::CaNy => "CA / NY",
            Bucket::OtherUsIntl => "Other US / Intl",
            Bucket::HotSectors => "Hot Sectors",
            Bucket::NonHotSectors => "Non-Hot Sectors",
        }
    }

    /// A deal is "hot" when it carries at least one hot-sector label.
    pub fn contains(self, deal: &Deal) -> bool {
        match self {
            Bucket::None => true,
            Bucket::CaNy => deal.geo.is_coastal(),
            Bucket::OtherUsIntl => !deal.geo.is_coastal(),
            Bucket::HotSectors => deal.markets.has_hot(),
            Bucket::NonHotSectors => !deal.markets.has_hot(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct FounderSplit {
    pub count: u64,
    pub mean_p: Option<f64>,
    /// Share of deals with outcome 1 among deals with an outcome.
    pub empirical: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketRow {
    pub bucket: Bucket,
    pub first: FounderSplit,
    pub repeat: FounderSplit,
}

#[derive(Default)]
struct Acc {
    count: u64,
    p_sum: f64,
    observed: u64,
    successes: u64,
}

impl Acc {
    fn add(&mut self, deal: &Deal) {
        self.count += 1;
        self.p_sum += deal.p.value();
        if let Some(x) = deal.outcome {
            self.observed += 1;
            self.successes += x as u64;
        }
    }

    fn finish(&self) -> FounderSplit {
        FounderSplit {
            count: self.count,
            mean_p: (self.count > 0).then(|| self.p_sum / self.count as f64),
            empirical: (self.observed > 0).then(|| self.successes as f64 / self.observed as f64),
        }
    }
}

/// Deal counts, mean synthetic probability and (when outcomes exist)
/// empirical success rate per bucket and founder type.
pub fn bucket_report(deals: &[Deal]) -> Vec<BucketRow> {
    Bucket::ALL
        .iter()
        .map(|&bucket| {
            let mut acc = [Acc::default(), Acc::default()];
            for d in deals.iter().filter(|d| bucket.contains(d)) {
                acc[d.founder.index()].add(d);
            }
            BucketRow {
                bucket,
                first: acc[FounderType::FirstTime.index()].finish(),
                repeat: acc[FounderType::Repeat.index()].finish(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeRow {
    pub attribute: &'static str,
    pub count: u64,
    pub mean_p: Option<f64>,
    pub empirical: Option<f64>,
}

/// Per-attribute deal counts and probability summaries.
pub fn attribute_report(deals: &[Deal]) -> Vec<AttributeRow> {
    let mut acc: Vec<Acc> = (0..DIM).map(|_| Acc::default()).collect();
    for d in deals {
        for u in d.attributes().ones() {
            acc[u].add(d);
        }
    }
    acc.iter()
        .enumerate()
        .map(|(u, a)| {
            let s = a.finish();
            AttributeRow {
                attribute: ATTRIBUTE_LABELS[u],
                count: s.count,
                mean_p: s.mean_p,
                empirical: s.empirical,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathcore::Probability;
    use crate::model::{DealId, Geography, Market, MarketSet};

    #[test]
    fn partitions_and_means() {
        let mk = |f, g, m: MarketSet, p, o| Deal {
            id: DealId(0),
            founder: f,
            geo: g,
            markets: m,
            p: Probability::new(p).unwrap(),
            outcome: o,
        };
        let deals = vec![
            mk(FounderType::FirstTime, Geography::CA, MarketSet::single(Market::AI), 0.1, Some(true)),
            mk(FounderType::FirstTime, Geography::Intl, MarketSet::EMPTY, 0.06, Some(false)),
            mk(FounderType::Repeat, Geography::NY, MarketSet::single(Market::Health), 0.16, None),
        ];
        let rows = bucket_report(&deals);
        assert_eq!(rows[0].first.count, 2);
        assert_eq!(rows[0].repeat.count, 1);
        assert!((rows[0].first.mean_p.unwrap() - 0.08).abs() < 1e-15);
        assert_eq!(rows[0].first.empirical, Some(0.5));
        assert_eq!(rows[0].repeat.empirical, None);
        assert_eq!(rows[1].first.count + rows[2].first.count, 2);
        assert_eq!(rows[3].first.count + rows[4].first.count, 2);
        assert_eq!(rows[3].repeat.count, 0);
        assert_eq!(rows[3].repeat.mean_p, None);

        let attrs = attribute_report(&deals);
        assert_eq!(attrs[0].count, 2);
        assert_eq!(attrs[7].attribute, "M_AI");
        assert_eq!(attrs[7].count, 1);
    }
}
