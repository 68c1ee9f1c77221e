use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::moments;
use crate::dataset::csv_error;
use crate::error::{Error, Result};
use crate::model::{bernoulli_correlation_raw, idiosyncratic_variance, Deal, DealId, ModelParams};

/// Histogram bins over [-1, 1].
pub const DEFAULT_BINS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCorrelation {
    pub i: DealId,
    pub j: DealId,
    pub latent: f64,
    pub bernoulli: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub latent: u64,
    pub bernoulli: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationHistograms {
    pub pairs: usize,
    pub seed: u64,
    /// Deals left out because their latent variance cannot be normalized.
    pub excluded_deals: usize,
    pub latent_mean: f64,
    pub latent_std: f64,
    pub bernoulli_mean: f64,
    pub bernoulli_std: f64,
    pub bins: Vec<HistogramBin>,
}

/// Latent and induced Bernoulli correlations for `m` deal pairs drawn
/// uniformly (distinct indices) from the feasible part of `population`.
/// Returns the pairs and the number of infeasible deals skipped.
pub fn correlation_samples(
    population: &[Deal],
    params: &ModelParams,
    m: usize,
    seed: u64,
) -> Result<(Vec<PairCorrelation>, usize)> {
    if m == 0 {
        return Err(Error::Validation("need at least one pair".into()));
    }
    let feasible: Vec<&Deal> = population
        .iter()
        .filter(|d| idiosyncratic_variance(d.attributes(), params).is_ok())
        .collect();
    let excluded = population.len() - feasible.len();
    if feasible.len() < 2 {
        return Err(Error::Validation("need at least two feasible deals".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<(usize, usize)> = (0..m)
        .map(|_| loop {
            let i = rng.random_range(0..feasible.len());
            let j = rng.random_range(0..feasible.len());
            if i != j {
                break (i, j);
            }
        })
        .collect();
    let pairs = picks
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = (feasible[i], feasible[j]);
            let latent = params.kernel(a.attributes(), b.attributes());
            PairCorrelation {
                i: a.id,
                j: b.id,
                latent,
                bernoulli: bernoulli_correlation_raw(a.p.value(), b.p.value(), latent),
            }
        })
        .collect();
    Ok((pairs, excluded))
}

fn bin_index(x: f64, bins: usize) -> usize {
    (((x + 1.0) / 2.0 * bins as f64).floor() as usize).min(bins - 1)
}

/// Samples `m` pairs and bins both correlation kinds on a common grid.
pub fn correlation_histograms(
    population: &[Deal],
    params: &ModelParams,
    m: usize,
    seed: u64,
) -> Result<CorrelationHistograms> {
    let (pairs, excluded) = correlation_samples(population, params, m, seed)?;
    let bins = DEFAULT_BINS;
    let width = 2.0 / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            lower: -1.0 + b as f64 * width,
            upper: -1.0 + (b + 1) as f64 * width,
            latent: 0,
            bernoulli: 0,
        })
        .collect();
    for p in &pairs {
        out[bin_index(p.latent, bins)].latent += 1;
        out[bin_index(p.bernoulli, bins)].bernoulli += 1;
    }
    let latent = moments(&pairs.iter().map(|p| p.latent).collect::<Vec<_>>())?;
    let bernoulli = moments(&pairs.iter().map(|p| p.bernoulli).collect::<Vec<_>>())?;
    Ok(CorrelationHistograms {
        pairs: pairs.len(),
        seed,
        excluded_deals: excluded,
        latent_mean: latent.mean,
        latent_std: latent.std,
        bernoulli_mean: bernoulli.mean,
        bernoulli_std: bernoulli.std,
        bins: out,
    })
}

impl CorrelationHistograms {
    /// `lower,upper,latent,bernoulli` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let io = |e: csv::Error| csv_error(path, e);
        w.write_record(["lower", "upper", "latent", "bernoulli"]).map_err(io)?;
        for b in &self.bins {
            w.write_record([
                format!("{:.4}", b.lower),
                format!("{:.4}", b.upper),
                b.latent.to_string(),
                b.bernoulli.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
