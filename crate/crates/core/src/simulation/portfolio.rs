use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::SyntheticProbRule;
use crate::error::{Error, Result};
use crate::model::{Deal, FounderType, Geography, Market, MarketSet};

const STREAM_COMPOSITION: u64 = 0;
const STREAM_PROBABILITY: u64 = 1;

/// How a portfolio's deals are composed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompositionRule {
    /// Half first-time, half repeat founders; geographies and markets cycled.
    #[serde(rename = "a_5050_geo_div")]
    A5050GeoDiv,
    /// Repeat founders in California.
    #[serde(rename = "b_repeat_ca")]
    BRepeatCa,
    /// Markets cycled; founders and geographies mirror the population.
    #[serde(rename = "c_diversified")]
    CDiversified,
    /// Every deal carries the given market.
    #[serde(rename = "c_concentrated")]
    CConcentrated(Market),
}

impl fmt::Display for CompositionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompositionRule::A5050GeoDiv => f.write_str("a_5050_geo_div"),
            CompositionRule::BRepeatCa => f.write_str("b_repeat_ca"),
            CompositionRule::CDiversified => f.write_str("c_diversified"),
            CompositionRule::CConcentrated(m) => write!(f, "c_concentrated({m})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSpec {
    pub name: String,
    pub size: usize,
    pub rule: CompositionRule,
    pub seed: u64,
}

impl PortfolioSpec {
    pub fn new(name: impl Into<String>, size: usize, rule: CompositionRule, seed: u64) -> Self {
        Self {
            name: name.into(),
            size,
            rule,
            seed,
        }
    }

    /// The nine designs used in the reference tables, in table order.
    pub fn standard_set(size: usize, seed: u64) -> Vec<PortfolioSpec> {
        let mut specs = vec![
            PortfolioSpec::new("Portfolio A", size, CompositionRule::A5050GeoDiv, seed),
            PortfolioSpec::new("Portfolio B", size, CompositionRule::BRepeatCa, seed),
            PortfolioSpec::new("Portfolio C (Diversified)", size, CompositionRule::CDiversified, seed),
        ];
        for m in Market::ALL {
            specs.push(PortfolioSpec::new(
                format!("Portfolio C -- {m}"),
                size,
                CompositionRule::CConcentrated(m),
                seed,
            ));
        }
        specs
    }
}

/// Deals with fixed success probabilities and no outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Portfolio {
    pub name: String,
    pub rule: CompositionRule,
    pub deals: Vec<Deal>,
}

impl Portfolio {
    pub fn size(&self) -> usize {
        self.deals.len()
    }
}

fn count<T: PartialEq>(items: impl Iterator<Item = T>, value: T) -> usize {
    items.filter(|x| *x == value).count()
}

fn balanced(counts: impl Iterator<Item = usize>, n: usize, groups: usize) -> bool {
    let (lo, hi) = (n / groups, n.div_ceil(groups));
    counts.into_iter().all(|c| (lo..=hi).contains(&c))
}

impl CompositionRule {
    /// Whether `deals` satisfy this rule.
    pub fn holds(&self, deals: &[Deal]) -> bool {
        let n = deals.len();
        let single = deals.iter().all(|d| d.markets.len() == 1);
        match self {
            CompositionRule::A5050GeoDiv => {
                n % 2 == 0
                    && count(deals.iter().map(|d| d.founder), FounderType::FirstTime) == n / 2
                    && balanced(
                        Geography::ALL.iter().map(|&g| count(deals.iter().map(|d| d.geo), g)),
                        n,
                        4,
                    )
                    && single
            }
            CompositionRule::BRepeatCa => deals
                .iter()
                .all(|d| d.founder == FounderType::Repeat && d.geo == Geography::CA),
            CompositionRule::CDiversified => {
                single
                    && balanced(
                        Market::ALL
                            .iter()
                            .map(|&m| deals.iter().filter(|d| d.markets.contains(m)).count()),
                        n,
                        6,
                    )
            }
            CompositionRule::CConcentrated(m) => deals.iter().all(|d| d.markets.contains(*m)),
        }
    }
}

/// Largest-remainder split of `n` in proportion to `weights`.
fn apportion(weights: &[u64], n: usize) -> Vec<usize> {
    let total: u64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|&w| w as f64 * n as f64 / total as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .total_cmp(&(exact[a] - exact[a].floor()))
            .then(a.cmp(&b))
    });
    let missing = n - out.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        out[i] += 1;
    }
    out
}

/// Keeps one label: the first hot one if any, else the first one.
fn primary_market(markets: MarketSet) -> MarketSet {
    markets
        .iter()
        .find(|m| m.is_hot())
        .or_else(|| markets.iter().next())
        .map_or(MarketSet::EMPTY, MarketSet::single)
}

struct Slot {
    founder: Option<FounderType>,
    geo: Option<Geography>,
    market: Option<Market>,
}

/// Builds a portfolio from `population`. Each slot draws a population deal
/// (with replacement) matching its fixed attributes and inherits the
/// attributes the rule leaves free; market sets are reduced to one label.
/// Probabilities come from `rule`'s synthetic draw.
pub fn build_portfolio_with(spec: &PortfolioSpec, population: &[Deal], rule: &SyntheticProbRule) -> Result<Portfolio> {
    let n = spec.size;
    if n == 0 {
        return Err(Error::Portfolio(format!("{}: size must be positive", spec.name)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(STREAM_COMPOSITION);

    let population_founders = |rng: &mut ChaCha8Rng| {
        let counts = [FounderType::FirstTime, FounderType::Repeat]
            .map(|f| population.iter().filter(|d| d.founder == f).count() as u64);
        let split = apportion(&counts, n);
        let mut founders: Vec<FounderType> = std::iter::repeat_n(FounderType::FirstTime, split[0])
            .chain(std::iter::repeat_n(FounderType::Repeat, split[1]))
            .collect();
        founders.shuffle(rng);
        founders
    };

    let slots: Vec<Slot> = match spec.rule {
        CompositionRule::A5050GeoDiv => {
            if n % 2 != 0 {
                return Err(Error::Portfolio(format!(
                    "{}: founder-split portfolios need an even size, got {n}",
                    spec.name
                )));
            }
            (0..n)
                .map(|i| Slot {
                    founder: Some(if i < n / 2 { FounderType::FirstTime } else { FounderType::Repeat }),
                    geo: Some(Geography::ALL[i % 4]),
                    market: Some(Market::ALL[i % 6]),
                })
                .collect()
        }
        CompositionRule::BRepeatCa => (0..n)
            .map(|_| Slot {
                founder: Some(FounderType::Repeat),
                geo: Some(Geography::CA),
                market: None,
            })
            .collect(),
        CompositionRule::CDiversified => population_founders(&mut rng)
            .into_iter()
            .enumerate()
            .map(|(i, f)| Slot {
                founder: Some(f),
                geo: None,
                market: Some(Market::ALL[i % 6]),
            })
            .collect(),
        CompositionRule::CConcentrated(m) => population_founders(&mut rng)
            .into_iter()
            .map(|f| Slot {
                founder: Some(f),
                geo: None,
                market: Some(m),
            })
            .collect(),
    };

    let mut prob_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    prob_rng.set_stream(STREAM_PROBABILITY);
    let mut deals = Vec::with_capacity(n);
    for slot in &slots {
        // A fully specified slot only needs its founder/geography to exist.
        let needs_market = slot.geo.is_none();
        let eligible: Vec<&Deal> = population
            .iter()
            .filter(|d| slot.founder.is_none_or(|f| d.founder == f))
            .filter(|d| slot.geo.is_none_or(|g| d.geo == g))
            .filter(|d| !needs_market || slot.market.is_none_or(|m| d.markets.contains(m)))
            .collect();
        if eligible.is_empty() {
            return Err(Error::Portfolio(format!(
                "{}: no population deal with founder {:?}, geography {:?}, market {:?}",
                spec.name, slot.founder, slot.geo, slot.market
            )));
        }
        let template = eligible[rng.random_range(0..eligible.len())];
        let markets = slot.market.map_or_else(|| primary_market(template.markets), MarketSet::single);
        let founder = slot.founder.unwrap_or(template.founder);
        let geo = slot.geo.unwrap_or(template.geo);
        deals.push(Deal {
            id: template.id,
            founder,
            geo,
            markets,
            p: rule.draw(founder, geo, markets, &mut prob_rng),
            outcome: None,
        });
    }
    debug_assert!(spec.rule.holds(&deals));
    Ok(Portfolio {
        name: spec.name.clone(),
        rule: spec.rule,
        deals,
    })
}

/// [`build_portfolio_with`] under the default synthetic probability rule.
pub fn build_portfolio(spec: &PortfolioSpec, population: &[Deal]) -> Result<Portfolio> {
    build_portfolio_with(spec, population, &SyntheticProbRule::default())
}
