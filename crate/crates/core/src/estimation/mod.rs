//! Pairwise joint success probabilities and the least-squares fit of the
//! dependence parameters.
//!
//! A cell `(u, v)` collects ordered pairs of distinct deals where the first
//! carries attribute `u` and the second carries `v`. The empirical joint
//! probability of a cell is the share of sampled pairs where both deals
//! succeeded; the model joint probability averages the bivariate normal
//! orthant probability at the pair's thresholds and latent correlation.

mod fit;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::load_sigma_table;
use crate::error::{Error, Result};
use crate::mathcore::{self, Phi2Mode};
use crate::model::{idiosyncratic_variance, Deal, ModelParams, ATTRIBUTE_LABELS, DIM};

pub use fit::{
    fit, fit_samples, objective, CellReport, FitConfig, FitReport, MseCells, ThetaReport, Weighting,
};

/// Sampled ordered deal pairs for one attribute cell. Indices refer to the
/// deal slice the sample was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub u: usize,
    pub v: usize,
    pub pairs: Vec<(usize, usize)>,
    /// Size of the eligible ordered set the pairs were drawn from.
    pub available: u64,
}

/// Number of ordered pairs `(i, j)`, `i != j`, with deal `i` carrying `u`
/// and deal `j` carrying `v`.
pub fn eligible_pairs(deals: &[Deal], u: usize, v: usize) -> u64 {
    let (mut n_u, mut n_v, mut both) = (0u64, 0u64, 0u64);
    for d in deals {
        let e = d.attributes();
        let (a, b) = (e.get(u), e.get(v));
        n_u += a as u64;
        n_v += b as u64;
        both += (a && b) as u64;
    }
    n_u * n_v - both
}

fn cell_stream(u: usize, v: usize) -> u64 {
    (u * DIM + v) as u64
}

/// Draws `k` pairs uniformly with replacement from the eligible ordered set
/// of cell `(u, v)`. `k` may exceed the eligible count.
pub fn sample_pairs(deals: &[Deal], u: usize, v: usize, k: usize, seed: u64) -> Result<PairSample> {
    if u >= DIM || v >= DIM {
        return Err(Error::Domain(format!("attribute index out of range: ({u}, {v})")));
    }
    let carriers = |a: usize| -> Vec<usize> {
        deals
            .iter()
            .enumerate()
            .filter(|(_, d)| d.attributes().get(a))
            .map(|(i, _)| i)
            .collect()
    };
    let (first, second) = (carriers(u), carriers(v));
    let available = eligible_pairs(deals, u, v);
    if available == 0 {
        return Err(Error::EmptyCell {
            u: ATTRIBUTE_LABELS[u].into(),
            v: ATTRIBUTE_LABELS[v].into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(cell_stream(u, v));
    let mut pairs = Vec::with_capacity(k);
    while pairs.len() < k {
        // Uniform on the product set, conditioned on distinct deals.
        let i = first[rng.random_range(0..first.len())];
        let j = second[rng.random_range(0..second.len())];
        if i != j {
            pairs.push((i, j));
        }
    }
    Ok(PairSample { u, v, pairs, available })
}

/// Samples every unordered cell `u <= v` in row-major order.
pub fn sample_all_cells(deals: &[Deal], k: usize, seed: u64) -> Vec<Result<PairSample>> {
    unordered_cells()
        .map(|(u, v)| sample_pairs(deals, u, v, k, seed))
        .collect()
}

/// The 78 cells `(u, v)` with `u <= v`.
pub fn unordered_cells() -> impl Iterator<Item = (usize, usize)> {
    (0..DIM).flat_map(|u| (u..DIM).map(move |v| (u, v)))
}

fn outcome(deal: &Deal) -> Result<bool> {
    deal.outcome.ok_or(Error::MissingOutcome(deal.id.0))
}

/// Share of sampled pairs where both deals succeeded.
pub fn empirical_joint(sample: &PairSample, deals: &[Deal]) -> Result<f64> {
    if sample.pairs.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for &(i, j) in &sample.pairs {
        hits += (outcome(&deals[i])? && outcome(&deals[j])?) as usize;
    }
    Ok(hits as f64 / sample.pairs.len() as f64)
}

/// Model joint probability of a cell and how many pair correlations hit the
/// clamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelJoint {
    pub value: f64,
    pub clamped: usize,
}

/// Mean of `Phi2(t_i, t_j; r_ij)` over the sampled pairs, with `r_ij`
/// clamped to `[-(1 - clamp_eps), 1 - clamp_eps]`.
pub fn model_joint(
    sample: &PairSample,
    deals: &[Deal],
    params: &ModelParams,
    mode: Phi2Mode,
    clamp_eps: f64,
) -> Result<ModelJoint> {
    let mut sum = 0.0;
    let mut clamped = 0;
    for &(i, j) in &sample.pairs {
        let (a, b) = (&deals[i], &deals[j]);
        let (ea, eb) = (a.attributes(), b.attributes());
        idiosyncratic_variance(ea, params)?;
        idiosyncratic_variance(eb, params)?;
        let r = params.kernel(ea, eb);
        let bound = 1.0 - clamp_eps;
        if r.abs() > bound {
            clamped += 1;
        }
        let ta = mathcore::normal_quantile(a.p.value());
        let tb = mathcore::normal_quantile(b.p.value());
        sum += mathcore::bvn_with(mode, ta, tb, r.clamp(-bound, bound));
    }
    let value = if sample.pairs.is_empty() {
        0.0
    } else {
        sum / sample.pairs.len() as f64
    };
    Ok(ModelJoint { value, clamped })
}

/// Symmetric 12 x 12 table of joint probabilities; `None` marks cells
/// without eligible pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointProbTable(pub [[Option<f64>; DIM]; DIM]);

impl Default for JointProbTable {
    fn default() -> Self {
        JointProbTable([[None; DIM]; DIM])
    }
}

impl JointProbTable {
    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        self.0[u][v]
    }

    /// Sets both `(u, v)` and `(v, u)`.
    pub fn set_symmetric(&mut self, u: usize, v: usize, value: f64) {
        self.0[u][v] = Some(value);
        self.0[v][u] = Some(value);
    }

    pub fn validate(&self) -> Result<()> {
        for row in &self.0 {
            for x in row.iter().flatten() {
                if !(0.0..=1.0).contains(x) {
                    return Err(Error::Validation(format!("joint probability {x} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }
}

/// Empirical table from one sample per unordered cell.
pub fn empirical_table(samples: &[PairSample], deals: &[Deal]) -> Result<JointProbTable> {
    let mut t = JointProbTable::default();
    for s in samples {
        t.set_symmetric(s.u, s.v, empirical_joint(s, deals)?);
    }
    Ok(t)
}

/// Model-implied table over the same samples.
pub fn model_table(
    samples: &[PairSample],
    deals: &[Deal],
    params: &ModelParams,
    mode: Phi2Mode,
    clamp_eps: f64,
) -> Result<JointProbTable> {
    let mut t = JointProbTable::default();
    for s in samples {
        t.set_symmetric(s.u, s.v, model_joint(s, deals, params, mode, clamp_eps)?.value);
    }
    Ok(t)
}

/// Unweighted mean squared difference over cells present in both tables,
/// counting each off-diagonal cell once (`Unique`) or twice (`Directed`).
pub fn fit_metrics(empirical: &JointProbTable, model: &JointProbTable, cells: MseCells) -> Result<(f64, f64)> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for u in 0..DIM {
        for v in 0..DIM {
            if cells == MseCells::Unique && v < u {
                continue;
            }
            match (empirical.get(u, v), model.get(u, v)) {
                (Some(a), Some(b)) => {
                    sum += (a - b) * (a - b);
                    count += 1;
                }
                (None, None) => {}
                _ => {
                    return Err(Error::Shape(format!(
                        "cell ({}, {}) present in only one table",
                        ATTRIBUTE_LABELS[u], ATTRIBUTE_LABELS[v]
                    )))
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::Shape("no cells to compare".into()));
    }
    let mse = sum / count as f64;
    Ok((mse, mse.sqrt()))
}

/// Loads a labeled 12 x 12 covariance table as model parameters.
pub fn load_sigma_params(path: impl AsRef<Path>, alpha0: f64) -> Result<ModelParams> {
    ModelParams::from_sigma(alpha0, &load_sigma_table(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_population, PopulationTarget};
    use crate::fixtures;
    use crate::mathcore::Probability;
    use crate::model::{attribute_index, DealId, FounderType, Geography, Market, MarketSet};

    fn deal(id: u64, founder: FounderType, geo: Geography, markets: MarketSet, p: f64) -> Deal {
        Deal {
            id: DealId(id),
            founder,
            geo,
            markets,
            p: Probability::new(p).unwrap(),
            outcome: None,
        }
    }

    fn small() -> Vec<Deal> {
        vec![
            deal(1, FounderType::FirstTime, Geography::CA, MarketSet::single(Market::AI), 0.1),
            deal(2, FounderType::Repeat, Geography::CA, MarketSet::EMPTY, 0.2),
            deal(3, FounderType::FirstTime, Geography::NY, MarketSet::single(Market::SaaS), 0.05),
        ]
    }

    #[test]
    fn eligible_counts_are_ordered_distinct_pairs() {
        let deals = small();
        // F_first carried by deals 1 and 3.
        assert_eq!(eligible_pairs(&deals, 0, 0), 2);
        assert_eq!(eligible_pairs(&deals, 0, 1), 2);
        assert_eq!(eligible_pairs(&deals, 2, 7), 1);
        assert_eq!(eligible_pairs(&deals, 10, 0), 0);
    }

    #[test]
    fn sample_membership_and_replacement() {
        let deals = small();
        let s = sample_pairs(&deals, 0, 0, 50, 1).unwrap();
        assert_eq!(s.pairs.len(), 50);
        assert_eq!(s.available, 2);
        for &(i, j) in &s.pairs {
            assert_ne!(i, j);
            assert!(deals[i].attributes().get(0) && deals[j].attributes().get(0));
        }
        assert_eq!(s, sample_pairs(&deals, 0, 0, 50, 1).unwrap());
        assert!(matches!(
            sample_pairs(&deals, 10, 0, 5, 1),
            Err(Error::EmptyCell { .. })
        ));
    }

    #[test]
    fn population_sampling() {
        let deals = generate_population(&PopulationTarget::paper(), 3).unwrap();
        let r = attribute_index("F_repeat").unwrap();
        assert_eq!(eligible_pairs(&deals, r, r), 177_662);
        for u in 0..DIM {
            for v in 0..DIM {
                assert_eq!(eligible_pairs(&deals, u, v), fixtures::PAIR_COUNTS[u][v]);
            }
        }
        let s = sample_pairs(&deals, 0, 1, 5000, 11).unwrap();
        assert_eq!(s.pairs.len(), 5000);
        assert!(s
            .pairs
            .iter()
            .all(|&(i, j)| deals[i].founder == FounderType::FirstTime && deals[j].founder == FounderType::Repeat));
    }

    #[test]
    fn empirical_extremes_and_missing() {
        let mut deals = small();
        let s = sample_pairs(&deals, 0, 2, 20, 2).unwrap();
        assert!(matches!(empirical_joint(&s, &deals), Err(Error::MissingOutcome(_))));
        deals.iter_mut().for_each(|d| d.outcome = Some(true));
        assert_eq!(empirical_joint(&s, &deals).unwrap(), 1.0);
        deals.iter_mut().for_each(|d| d.outcome = Some(false));
        assert_eq!(empirical_joint(&s, &deals).unwrap(), 0.0);
    }

    #[test]
    fn empirical_matches_binomial_oracle() {
        // Independent outcomes with p = 0.1 on a large uniform population.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let deals: Vec<Deal> = (0..4000)
            .map(|i| {
                let mut d = deal(i, FounderType::FirstTime, Geography::CA, MarketSet::EMPTY, 0.1);
                d.outcome = Some(rng.random::<f64>() < 0.1);
                d
            })
            .collect();
        let k = 5000;
        let s = sample_pairs(&deals, 0, 2, k, 9).unwrap();
        let j = empirical_joint(&s, &deals).unwrap();
        assert!((j - 0.01).abs() < 3.0 * (0.0099f64 / k as f64).sqrt(), "{j}");
    }

    #[test]
    fn model_joint_reference_values() {
        let mut deals = small();
        let zero = ModelParams::zero(3);
        let s = sample_pairs(&deals, 0, 1, 40, 4).unwrap();
        let m = model_joint(&s, &deals, &zero, Phi2Mode::Exact, 0.01).unwrap();
        let expect = s
            .pairs
            .iter()
            .map(|&(i, j)| deals[i].p.value() * deals[j].p.value())
            .sum::<f64>()
            / 40.0;
        assert!((m.value - expect).abs() < 1e-15);

        // One pair at p = 0.5 with latent correlation 0.5: 1/3.
        deals[0].p = Probability::new(0.5).unwrap();
        deals[1].p = Probability::new(0.5).unwrap();
        let mut sigma = crate::model::Matrix12::zeros();
        let (ea, eb) = (deals[0].attributes(), deals[1].attributes());
        // Put all covariance on F_first x F_repeat.
        sigma[(0, 1)] = 0.5;
        sigma[(1, 0)] = 0.5;
        sigma[(0, 0)] = 0.5;
        sigma[(1, 1)] = 0.5;
        let params = ModelParams::from_sigma(0.0, &sigma).unwrap();
        assert!((params.kernel(ea, eb) - 0.5).abs() < 1e-12);
        let one = PairSample { u: 0, v: 1, pairs: vec![(0, 1)], available: 1 };
        let m = model_joint(&one, &deals, &params, Phi2Mode::Exact, 0.01).unwrap();
        assert!((m.value - 1.0 / 3.0).abs() < 1e-7);
        assert_eq!(m.clamped, 0);
    }

    #[test]
    fn pathological_correlation_is_clamped() {
        let deals = small();
        let mut sigma = crate::model::Matrix12::zeros();
        for u in [0, 2, 3, 6, 7] {
            for v in [0, 2, 3, 6, 7] {
                sigma[(u, v)] = 0.249;
            }
        }
        // Deals 1 and 3 each carry F_first plus one geography and one hot
        // market: 0.249 * 9 > 1, so variance is infeasible as well.
        let params = ModelParams::from_sigma(0.0, &sigma).unwrap();
        let s = PairSample { u: 0, v: 0, pairs: vec![(0, 2)], available: 2 };
        assert!(matches!(
            model_joint(&s, &deals, &params, Phi2Mode::Exact, 0.01),
            Err(Error::InfeasibleVariance { .. })
        ));

        let mut sigma = crate::model::Matrix12::zeros();
        sigma[(0, 0)] = 0.995;
        let params = ModelParams::from_sigma(0.0, &sigma).unwrap();
        let first = vec![
            deal(1, FounderType::FirstTime, Geography::CA, MarketSet::EMPTY, 0.3),
            deal(2, FounderType::FirstTime, Geography::NY, MarketSet::EMPTY, 0.3),
        ];
        let s = PairSample { u: 0, v: 0, pairs: vec![(0, 1), (1, 0)], available: 2 };
        let m = model_joint(&s, &first, &params, Phi2Mode::Exact, 0.01).unwrap();
        assert_eq!(m.clamped, 2);
        assert!(m.value.is_finite() && m.value <= 0.3);
    }

    #[test]
    fn metrics() {
        let mut a = JointProbTable::default();
        let mut b = JointProbTable::default();
        for (u, v) in unordered_cells() {
            a.set_symmetric(u, v, 0.05);
            b.set_symmetric(u, v, 0.06);
        }
        let (mse, rmse) = fit_metrics(&a, &a, MseCells::Directed).unwrap();
        assert_eq!((mse, rmse), (0.0, 0.0));
        let (mse, rmse) = fit_metrics(&a, &b, MseCells::Unique).unwrap();
        assert!((mse - 1e-4).abs() < 1e-15 && (rmse - 0.01).abs() < 1e-12);

        // Directed counting weighs off-diagonal cells twice.
        b.set_symmetric(0, 1, 0.07);
        let (directed, _) = fit_metrics(&a, &b, MseCells::Directed).unwrap();
        let (unique, _) = fit_metrics(&a, &b, MseCells::Unique).unwrap();
        assert!((directed - (142.0 * 1e-4 + 2.0 * 4e-4) / 144.0).abs() < 1e-15);
        assert!((unique - (77.0 * 1e-4 + 4e-4) / 78.0).abs() < 1e-15);

        b.0[3][3] = None;
        assert!(matches!(fit_metrics(&a, &b, MseCells::Directed), Err(Error::Shape(_))));
    }
}
