//! Population reconstruction.
//!
//! A deal is one cell of the founder x geography x market-subset table
//! (2 x 4 x 64 = 512 cells). Every published count is a linear constraint
//! on that table. Iterative proportional fitting gives the maximum-entropy
//! real-valued table; largest-remainder rounding makes it integral; a
//! seeded local search over single-attribute edits and attribute swaps
//! then removes the remaining integer violations.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::probability::SyntheticProbRule;
use super::{derive_cooccurrence, CooccurrenceMatrix, MarginalCounts, PairCountTable};
use crate::error::{Error, Result};
use crate::fixtures;
use crate::model::{
    AttributeGroup, AttributeVector, Deal, DealId, FounderType, Geography, MarketSet,
    ATTRIBUTE_LABELS, DIM,
};

const CELLS: usize = 512;
const IPF_MAX_SWEEPS: usize = 5_000;
const IPF_TOLERANCE: f64 = 1e-9;
const SEARCH_MAX_STEPS: u64 = 400_000_000;

/// Stream ids within one generation seed.
const STREAM_SEARCH: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_PROBABILITY: u64 = 2;

/// Counts a generated population must reproduce exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationTarget {
    marginals: MarginalCounts,
    cooc: CooccurrenceMatrix,
    hot_by_founder: Option<[u64; 2]>,
    rule: SyntheticProbRule,
}

impl PopulationTarget {
    pub fn new(marginals: MarginalCounts, cooc: CooccurrenceMatrix) -> Result<Self> {
        marginals.validate()?;
        for u in 0..DIM {
            if cooc.get(u, u) != marginals.get(u) {
                return Err(Error::InconsistentTables(format!(
                    "co-occurrence diagonal {} = {} but marginal = {}",
                    ATTRIBUTE_LABELS[u],
                    cooc.get(u, u),
                    marginals.get(u)
                )));
            }
            for v in 0..DIM {
                if cooc.get(u, v) != cooc.get(v, u) {
                    return Err(Error::InconsistentTables(format!(
                        "co-occurrence not symmetric at ({}, {})",
                        ATTRIBUTE_LABELS[u], ATTRIBUTE_LABELS[v]
                    )));
                }
            }
        }
        Ok(Self {
            marginals,
            cooc,
            hot_by_founder: None,
            rule: SyntheticProbRule::default(),
        })
    }

    pub fn from_pair_counts(marginals: MarginalCounts, pairs: &PairCountTable) -> Result<Self> {
        let cooc = derive_cooccurrence(&marginals, pairs)?;
        Self::new(marginals, cooc)
    }

    /// Adds the per-founder count of deals carrying at least one hot-sector
    /// label (AI, Fintech, SaaS).
    pub fn with_hot_sector_counts(mut self, first_time: u64, repeat: u64) -> Self {
        self.hot_by_founder = Some([first_time, repeat]);
        self
    }

    pub fn with_rule(mut self, rule: SyntheticProbRule) -> Self {
        self.rule = rule;
        self
    }

    /// The published deal counts, pair counts, and hot-sector bucket counts.
    pub fn paper() -> Self {
        let (first, repeat) = fixtures::HOT_SECTOR_COUNTS;
        Self::from_pair_counts(MarginalCounts::paper(), &PairCountTable::paper())
            .expect("shipped fixtures are consistent")
            .with_hot_sector_counts(first, repeat)
    }

    pub fn marginals(&self) -> &MarginalCounts {
        &self.marginals
    }

    pub fn cooccurrence(&self) -> &CooccurrenceMatrix {
        &self.cooc
    }

    pub fn hot_sector_counts(&self) -> Option<[u64; 2]> {
        self.hot_by_founder
    }

    pub fn rule(&self) -> &SyntheticProbRule {
        &self.rule
    }
}

fn cell_index(founder: usize, geo: usize, markets: u8) -> usize {
    founder * 256 + geo * 64 + markets as usize
}

fn cell_parts(cell: usize) -> (FounderType, Geography, MarketSet) {
    (
        FounderType::ALL[cell / 256],
        Geography::ALL[(cell / 64) % 4],
        MarketSet::from_bits((cell % 64) as u8).expect("6-bit mask"),
    )
}

struct Constraint {
    label: String,
    target: i64,
}

/// The constraint system: targets plus, per cell, the sorted list of
/// constraints the cell contributes to.
struct System {
    constraints: Vec<Constraint>,
    members: Vec<Vec<usize>>,
}

impl System {
    fn build(target: &PopulationTarget) -> Self {
        let mut constraints = Vec::new();
        let mut predicates: Vec<Box<dyn Fn(usize) -> bool>> = Vec::new();
        let bits = |cell: usize| {
            let (f, g, m) = cell_parts(cell);
            AttributeVector::from_parts(f, g, m)
        };
        for u in 0..DIM {
            constraints.push(Constraint {
                label: format!("n({})", ATTRIBUTE_LABELS[u]),
                target: target.marginals.get(u) as i64,
            });
            predicates.push(Box::new(move |c| bits(c).get(u)));
        }
        for u in 0..DIM {
            for v in (u + 1)..DIM {
                let gu = AttributeGroup::of(u);
                if gu == AttributeGroup::of(v) && gu != AttributeGroup::Market {
                    continue;
                }
                constraints.push(Constraint {
                    label: format!("n({}, {})", ATTRIBUTE_LABELS[u], ATTRIBUTE_LABELS[v]),
                    target: target.cooc.get(u, v) as i64,
                });
                predicates.push(Box::new(move |c| bits(c).get(u) && bits(c).get(v)));
            }
        }
        if let Some(hot) = target.hot_by_founder {
            for founder in FounderType::ALL {
                constraints.push(Constraint {
                    label: format!("hot({})", founder),
                    target: hot[founder.index()] as i64,
                });
                predicates.push(Box::new(move |c| {
                    let (f, _, m) = cell_parts(c);
                    f == founder && m.has_hot()
                }));
            }
        }
        let members = (0..CELLS)
            .map(|cell| {
                predicates
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| p(cell))
                    .map(|(k, _)| k)
                    .collect()
            })
            .collect();
        System {
            constraints,
            members,
        }
    }

    /// Maximum-entropy real-valued cell table via iterative proportional
    /// fitting over the binary constraint margins.
    fn ipf(&self, total: f64) -> Vec<f64> {
        let mut x = vec![total / CELLS as f64; CELLS];
        let mut in_set = vec![vec![false; CELLS]; self.constraints.len()];
        for (cell, ks) in self.members.iter().enumerate() {
            for &k in ks {
                in_set[k][cell] = true;
            }
        }
        for _ in 0..IPF_MAX_SWEEPS {
            let mut worst: f64 = 0.0;
            for (k, constraint) in self.constraints.iter().enumerate() {
                let t = constraint.target as f64;
                let s_in: f64 = (0..CELLS).filter(|&c| in_set[k][c]).map(|c| x[c]).sum();
                let s_out = (total - s_in).max(0.0);
                worst = worst.max((s_in - t).abs());
                let f_in = if s_in > 0.0 { t / s_in } else { 1.0 };
                let f_out = if s_out > 0.0 { (total - t) / s_out } else { 1.0 };
                for c in 0..CELLS {
                    x[c] *= if in_set[k][c] { f_in } else { f_out };
                }
            }
            if worst < IPF_TOLERANCE {
                break;
            }
        }
        x
    }
}

/// Largest-remainder rounding of a nonnegative table to an integer table
/// with the given total.
fn round_table(x: &[f64], total: u64) -> Vec<u64> {
    let mut counts: Vec<u64> = x.iter().map(|v| v.max(0.0).floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = x[a] - x[a].floor();
        let fb = x[b] - x[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &c in order.iter().take(total.saturating_sub(assigned) as usize) {
        counts[c] += 1;
    }
    counts
}

struct Search<'a> {
    system: &'a System,
    current: Vec<i64>,
    cost: i64,
}

impl<'a> Search<'a> {
    fn new(system: &'a System, cells: &[usize]) -> Self {
        let mut current = vec![0i64; system.constraints.len()];
        for &c in cells {
            for &k in &system.members[c] {
                current[k] += 1;
            }
        }
        let cost = current
            .iter()
            .zip(&system.constraints)
            .map(|(v, c)| (v - c.target).abs())
            .sum();
        Search {
            system,
            current,
            cost,
        }
    }

    /// Moves one deal from cell `from` to cell `to`; returns the cost change.
    fn apply(&mut self, from: usize, to: usize) -> i64 {
        let mut delta = 0;
        for &k in &self.system.members[from] {
            let t = self.system.constraints[k].target;
            let v = self.current[k];
            delta += (v - 1 - t).abs() - (v - t).abs();
            self.current[k] = v - 1;
        }
        for &k in &self.system.members[to] {
            let t = self.system.constraints[k].target;
            let v = self.current[k];
            delta += (v + 1 - t).abs() - (v - t).abs();
            self.current[k] = v + 1;
        }
        self.cost += delta;
        delta
    }

    fn violations(&self) -> Vec<String> {
        self.current
            .iter()
            .zip(&self.system.constraints)
            .filter(|(v, c)| **v != c.target)
            .map(|(v, c)| format!("{} = {} (target {})", c.label, v, c.target))
            .collect()
    }
}

/// Which attribute a proposed edit touches.
fn neighbour(cell: usize, rng: &mut ChaCha8Rng) -> usize {
    let (f, g, m) = (cell / 256, (cell / 64) % 4, (cell % 64) as u8);
    match rng.random_range(0..4u32) {
        0 => cell_index(1 - f, g, m),
        1 => cell_index(f, (g + rng.random_range(1..4usize)) % 4, m),
        _ => cell_index(f, g, m ^ (1 << rng.random_range(0..6u32))),
    }
}

/// Swaps one attribute block (founder, geography, or one market bit)
/// between two cells.
fn swap_cells(a: usize, b: usize, rng: &mut ChaCha8Rng) -> (usize, usize) {
    let split = |c: usize| (c / 256, (c / 64) % 4, (c % 64) as u8);
    let ((fa, ga, ma), (fb, gb, mb)) = (split(a), split(b));
    match rng.random_range(0..3u32) {
        0 => (cell_index(fb, ga, ma), cell_index(fa, gb, mb)),
        1 => (cell_index(fa, gb, ma), cell_index(fb, ga, mb)),
        _ => {
            let bit = 1u8 << rng.random_range(0..6u32);
            let (na, nb) = ((ma & !bit) | (mb & bit), (mb & !bit) | (ma & bit));
            (cell_index(fa, ga, na), cell_index(fb, gb, nb))
        }
    }
}

/// Give up once the best cost has not improved for this many steps.
const SEARCH_STALL_STEPS: u64 = 20_000_000;

fn repair(system: &System, cells: &mut [usize], rng: &mut ChaCha8Rng) -> Result<()> {
    let mut search = Search::new(system, cells);
    if cells.is_empty() {
        return if search.cost == 0 {
            Ok(())
        } else {
            Err(Error::InfeasibleTarget {
                cells: search.violations(),
            })
        };
    }
    let n = cells.len();
    let mut temperature = 0.6;
    let mut step = 0u64;
    let (mut best, mut best_step) = (search.cost, 0u64);
    while search.cost > 0 && step < SEARCH_MAX_STEPS && step - best_step < SEARCH_STALL_STEPS {
        step += 1;
        if search.cost < best {
            best = search.cost;
            best_step = step;
        }
        if step % 200_000 == 0 {
            temperature = (temperature * 0.9f64).max(0.05);
        }
        let accept = |delta: i64, rng: &mut ChaCha8Rng| {
            delta <= 0 || rng.random::<f64>() < (-(delta as f64) / temperature).exp()
        };
        let i = rng.random_range(0..n);
        if rng.random_bool(0.5) {
            let from = cells[i];
            let to = neighbour(from, rng);
            let delta = search.apply(from, to);
            if accept(delta, rng) {
                cells[i] = to;
            } else {
                search.apply(to, from);
            }
        } else {
            let j = rng.random_range(0..n);
            let (a, b) = (cells[i], cells[j]);
            let (na, nb) = swap_cells(a, b, rng);
            if i == j || (na == a && nb == b) {
                continue;
            }
            let delta = search.apply(a, na) + search.apply(b, nb);
            if accept(delta, rng) {
                cells[i] = na;
                cells[j] = nb;
            } else {
                search.apply(nb, b);
                search.apply(na, a);
            }
        }
    }
    if search.cost == 0 {
        Ok(())
    } else {
        Err(Error::InfeasibleTarget {
            cells: search.violations(),
        })
    }
}

/// Generates a population whose attribute counts, within-deal
/// co-occurrences (hence ordered pair counts), and optional hot-sector
/// bucket counts match `target` exactly. Probabilities are drawn with the
/// target's synthetic rule. Deterministic in `seed`.
pub fn generate_population(target: &PopulationTarget, seed: u64) -> Result<Vec<Deal>> {
    let total = target.marginals.total();
    let system = System::build(target);
    let table = system.ipf(total as f64);
    let counts = round_table(&table, total);
    let mut cells: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &k)| std::iter::repeat_n(c, k as usize))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_SEARCH);
    repair(&system, &mut cells, &mut rng)?;

    // Canonical order, then a seeded shuffle so ids carry no structure.
    cells.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_SHUFFLE);
    cells.shuffle(&mut rng);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_PROBABILITY);
    Ok(cells
        .into_iter()
        .enumerate()
        .map(|(i, cell)| {
            let (founder, geo, markets) = cell_parts(cell);
            let p = target.rule.draw(founder, geo, markets, &mut rng);
            Deal {
                id: DealId(i as u64 + 1),
                founder,
                geo,
                markets,
                p,
                outcome: None,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::PairCountTable;

    #[test]
    fn rounding_preserves_total() {
        let x = [0.4, 1.6, 2.5, 0.5];
        let r = round_table(&x, 5);
        assert_eq!(r.iter().sum::<u64>(), 5);
        // Ties on the fractional part go to the lower index.
        assert_eq!(r, vec![0, 2, 3, 0]);
    }

    #[test]
    fn degenerate_two_deal_population() {
        let mut m = [0u64; DIM];
        m[1] = 2;
        m[2] = 2;
        let marginals = MarginalCounts::new(m).unwrap();
        let mut c = [[0u64; DIM]; DIM];
        c[1][1] = 2;
        c[2][2] = 2;
        c[1][2] = 2;
        c[2][1] = 2;
        let target = PopulationTarget::new(marginals, CooccurrenceMatrix(c)).unwrap();
        let deals = generate_population(&target, 5).unwrap();
        assert_eq!(deals.len(), 2);
        for d in &deals {
            assert_eq!(d.founder, FounderType::Repeat);
            assert_eq!(d.geo, Geography::CA);
            assert!(d.markets.is_empty());
        }
        assert_eq!(CooccurrenceMatrix::from_deals(&deals).marginals().0, m);
    }

    #[test]
    fn small_population_matches_exactly() {
        // Build a target from an arbitrary hand-made population.
        use crate::model::Market::*;
        let specs = [
            (FounderType::FirstTime, Geography::CA, vec![SaaS, AI]),
            (FounderType::FirstTime, Geography::NY, vec![Health]),
            (FounderType::Repeat, Geography::CA, vec![SaaS]),
            (FounderType::FirstTime, Geography::OtherUS, vec![]),
            (FounderType::FirstTime, Geography::Intl, vec![Consumer, DevTools]),
            (FounderType::Repeat, Geography::OtherUS, vec![Fintech, AI, SaaS]),
            (FounderType::FirstTime, Geography::CA, vec![Consumer]),
            (FounderType::FirstTime, Geography::CA, vec![AI]),
            (FounderType::Repeat, Geography::NY, vec![Health, Consumer]),
            (FounderType::FirstTime, Geography::OtherUS, vec![SaaS]),
        ];
        let deals: Vec<Deal> = specs
            .iter()
            .enumerate()
            .map(|(i, (f, g, m))| Deal {
                id: DealId(i as u64),
                founder: *f,
                geo: *g,
                markets: m.iter().copied().collect(),
                p: crate::mathcore::Probability::new(0.1).unwrap(),
                outcome: None,
            })
            .collect();
        let cooc = CooccurrenceMatrix::from_deals(&deals);
        let target = PopulationTarget::new(cooc.marginals(), cooc.clone()).unwrap();
        for seed in 0..5 {
            let generated = generate_population(&target, seed).unwrap();
            assert_eq!(CooccurrenceMatrix::from_deals(&generated), cooc);
            assert_eq!(
                PairCountTable::from_deals(&generated),
                PairCountTable::from_deals(&deals)
            );
        }
    }

    #[test]
    fn determinism_and_seed_sensitivity() {
        use crate::model::Market::*;
        let deals: Vec<Deal> = (0..40)
            .map(|i| Deal {
                id: DealId(i),
                founder: FounderType::ALL[(i % 7 == 0) as usize],
                geo: Geography::ALL[(i % 4) as usize],
                markets: [SaaS, AI, Consumer, Health]
                    .into_iter()
                    .filter(|m| (i as usize + m.index()) % 3 == 0)
                    .collect(),
                p: crate::mathcore::Probability::new(0.1).unwrap(),
                outcome: None,
            })
            .collect();
        let cooc = CooccurrenceMatrix::from_deals(&deals);
        let target = PopulationTarget::new(cooc.marginals(), cooc.clone()).unwrap();
        let a = generate_population(&target, 11).unwrap();
        let b = generate_population(&target, 11).unwrap();
        let c = generate_population(&target, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(CooccurrenceMatrix::from_deals(&c), cooc);
    }

    #[test]
    fn infeasible_target_names_cells() {
        // SaaS and AI co-occur more often than a single deal can carry.
        let mut m = [0u64; DIM];
        m[0] = 3;
        m[4] = 3;
        m[6] = 1;
        m[7] = 1;
        let mut c = [[0u64; DIM]; DIM];
        for u in 0..DIM {
            c[u][u] = m[u];
        }
        c[0][4] = 3;
        c[4][0] = 3;
        c[0][6] = 1;
        c[6][0] = 1;
        c[0][7] = 1;
        c[7][0] = 1;
        c[4][6] = 1;
        c[6][4] = 1;
        c[4][7] = 1;
        c[7][4] = 1;
        c[6][7] = 1;
        c[7][6] = 1;
        let target = PopulationTarget::new(MarginalCounts::new(m).unwrap(), CooccurrenceMatrix(c))
            .unwrap()
            .with_hot_sector_counts(3, 0);
        // hot(FirstTime) = 3 is impossible with only one SaaS and one AI deal
        // which must be the same deal.
        match generate_population(&target, 1) {
            Err(Error::InfeasibleTarget { cells }) => {
                assert!(cells.iter().any(|c| c.contains("hot(FirstTime)")), "{cells:?}")
            }
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }
}
