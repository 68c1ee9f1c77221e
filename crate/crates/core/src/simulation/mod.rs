//! Portfolio construction and Monte Carlo simulation of success counts.

mod correlation;
mod portfolio;

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::csv_error;
use crate::error::{Error, Result};
use crate::mathcore::normal_quantile;
use crate::model::{idiosyncratic_variance, Deal, ModelParams};

pub use correlation::{correlation_histograms, correlation_samples, CorrelationHistograms, HistogramBin, PairCorrelation};
pub use portfolio::{build_portfolio, build_portfolio_with, CompositionRule, Portfolio, PortfolioSpec};

/// Tail thresholds reported by default, in table order.
pub const DEFAULT_THRESHOLDS: [u64; 5] = [1, 2, 3, 10, 20];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Independent,
    Correlated,
}

impl Setting {
    pub const ALL: [Setting; 2] = [Setting::Independent, Setting::Correlated];
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::Independent => "Independent",
            Setting::Correlated => "Correlated",
        })
    }
}

/// Mean, standard deviation (1/R), skewness and Pearson kurtosis. The last
/// two are `None` when the sample has no spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
    pub skew: Option<f64>,
    pub kurt: Option<f64>,
}

fn moments_weighted(points: impl Iterator<Item = (f64, f64)> + Clone) -> Result<Moments> {
    let total: f64 = points.clone().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return Err(Error::Validation("moments need at least one sample".into()));
    }
    let mean = points.clone().map(|(x, w)| w * x).sum::<f64>() / total;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for (x, w) in points {
        let d = x - mean;
        let d2 = d * d;
        m2 += w * d2;
        m3 += w * d2 * d;
        m4 += w * d2 * d2;
    }
    let (m2, m3, m4) = (m2 / total, m3 / total, m4 / total);
    // Rounding in the mean leaves a tiny positive m2 for constant data.
    let degenerate = m2 <= 1e-24 * mean.abs().max(1.0).powi(2);
    Ok(Moments {
        mean,
        std: if degenerate { 0.0 } else { m2.sqrt() },
        skew: (!degenerate).then(|| m3 / m2.powf(1.5)),
        kurt: (!degenerate).then(|| m4 / (m2 * m2)),
    })
}

pub fn moments(samples: &[f64]) -> Result<Moments> {
    moments_weighted(samples.iter().map(|&x| (x, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailProbability {
    pub threshold: u64,
    pub probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountBin {
    pub k: u64,
    pub count: u64,
    pub mass: f64,
}

/// Distribution of the number of successes over R replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub portfolio: String,
    pub rule: CompositionRule,
    pub setting: Setting,
    pub n: usize,
    pub replications: u64,
    pub seed: u64,
    pub mean: f64,
    pub std: f64,
    pub skew: Option<f64>,
    pub kurt: Option<f64>,
    pub tail: Vec<TailProbability>,
    /// One entry per K in 0..=n.
    pub histogram: Vec<CountBin>,
}

impl SimulationSummary {
    pub fn moments(&self) -> Moments {
        Moments {
            mean: self.mean,
            std: self.std,
            skew: self.skew,
            kurt: self.kurt,
        }
    }

    /// Replaces the reported tail thresholds.
    pub fn with_thresholds(mut self, thresholds: &[u64]) -> Self {
        self.tail = tail_probabilities(&self, thresholds);
        self
    }

    /// `k,count,mass` rows for plotting.
    pub fn write_histogram_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let io = |e: csv::Error| csv_error(path, e);
        w.write_record(["k", "count", "mass"]).map_err(io)?;
        for bin in &self.histogram {
            w.write_record([bin.k.to_string(), bin.count.to_string(), format!("{:.8}", bin.mass)])
                .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// `P(K >= m)` from the stored histogram, for each threshold in order.
pub fn tail_probabilities(summary: &SimulationSummary, thresholds: &[u64]) -> Vec<TailProbability> {
    let total: u64 = summary.histogram.iter().map(|b| b.count).sum();
    thresholds
        .iter()
        .map(|&m| {
            let hits: u64 = summary.histogram.iter().filter(|b| b.k >= m).map(|b| b.count).sum();
            TailProbability {
                threshold: m,
                probability: if total == 0 { 0.0 } else { hits as f64 / total as f64 },
            }
        })
        .collect()
}

/// Per-deal quantities needed to draw latent variables.
struct LatentDeal {
    threshold: f64,
    loading: Vec<f64>,
    phi: f64,
}

struct Sampler {
    alpha0: f64,
    rank: usize,
    deals: Vec<LatentDeal>,
}

impl Sampler {
    fn new(deals: &[Deal], params: &ModelParams) -> Result<Self> {
        let deals = deals
            .iter()
            .map(|d| {
                let e = d.attributes();
                Ok(LatentDeal {
                    threshold: normal_quantile(d.p.value()),
                    loading: params.factor_loading(e),
                    phi: idiosyncratic_variance(e, params)?.sqrt(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            alpha0: params.alpha0(),
            rank: params.rank(),
            deals,
        })
    }

    /// Draws U, then the k factors, then one noise term per deal, and calls
    /// `visit` with each deal's latent value in deal order.
    fn draw(&self, rng: &mut ChaCha8Rng, factors: &mut Vec<f64>, mut visit: impl FnMut(usize, f64)) {
        let common: f64 = self.alpha0 * rng.sample::<f64, _>(StandardNormal);
        factors.clear();
        factors.extend((0..self.rank).map(|_| rng.sample::<f64, _>(StandardNormal)));
        for (i, d) in self.deals.iter().enumerate() {
            let eps: f64 = rng.sample(StandardNormal);
            let shared: f64 = d.loading.iter().zip(factors.iter()).map(|(a, b)| a * b).sum();
            visit(i, common + shared + d.phi * eps);
        }
    }
}

fn replication_rng(seed: u64, r: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r);
    rng
}

/// Monte Carlo distribution of the number of successes. Replication `r`
/// draws from stream `r` of the seeded generator, so the result does not
/// depend on how replications are scheduled across threads.
pub fn simulate(
    portfolio: &Portfolio,
    params: &ModelParams,
    setting: Setting,
    reps: u64,
    seed: u64,
) -> Result<SimulationSummary> {
    if reps == 0 {
        return Err(Error::Validation("replications must be at least 1".into()));
    }
    let n = portfolio.size();
    let sampler = match setting {
        Setting::Correlated => Some(Sampler::new(&portfolio.deals, params)?),
        Setting::Independent => None,
    };
    let probs: Vec<f64> = portfolio.deals.iter().map(|d| d.p.value()).collect();

    let counts = (0..reps)
        .into_par_iter()
        .fold(
            || (vec![0u64; n + 1], Vec::new()),
            |(mut hist, mut factors), r| {
                let mut rng = replication_rng(seed, r);
                let mut k = 0;
                match &sampler {
                    Some(s) => s.draw(&mut rng, &mut factors, |i, z| {
                        k += (z <= s.deals[i].threshold) as usize;
                    }),
                    None => {
                        for &p in &probs {
                            k += (rng.random::<f64>() < p) as usize;
                        }
                    }
                }
                hist[k] += 1;
                (hist, factors)
            },
        )
        .map(|(hist, _)| hist)
        .reduce(
            || vec![0u64; n + 1],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );

    let histogram: Vec<CountBin> = counts
        .iter()
        .enumerate()
        .map(|(k, &count)| CountBin {
            k: k as u64,
            count,
            mass: count as f64 / reps as f64,
        })
        .collect();
    let m = moments_weighted(histogram.iter().map(|b| (b.k as f64, b.count as f64)))?;
    let summary = SimulationSummary {
        portfolio: portfolio.name.clone(),
        rule: portfolio.rule,
        setting,
        n,
        replications: reps,
        seed,
        mean: m.mean,
        std: m.std,
        skew: m.skew,
        kurt: m.kurt,
        tail: Vec::new(),
        histogram,
    };
    Ok(summary.with_thresholds(&DEFAULT_THRESHOLDS))
}

/// Sample variance (1/R) of every deal's latent variable over `reps`
/// correlated replications, using the same draws as [`simulate`].
pub fn latent_variances(portfolio: &Portfolio, params: &ModelParams, reps: u64, seed: u64) -> Result<Vec<f64>> {
    if reps == 0 {
        return Err(Error::Validation("replications must be at least 1".into()));
    }
    let sampler = Sampler::new(&portfolio.deals, params)?;
    let n = portfolio.size();
    let (sum, sq) = (0..reps)
        .into_par_iter()
        .fold(
            || (vec![0.0; n], vec![0.0; n], Vec::new()),
            |(mut s, mut q, mut factors), r| {
                let mut rng = replication_rng(seed, r);
                sampler.draw(&mut rng, &mut factors, |i, z| {
                    s[i] += z;
                    q[i] += z * z;
                });
                (s, q, factors)
            },
        )
        .map(|(s, q, _)| (s, q))
        .reduce(
            || (vec![0.0; n], vec![0.0; n]),
            |(mut s1, mut q1), (s2, q2)| {
                s1.iter_mut().zip(s2).for_each(|(a, b)| *a += b);
                q1.iter_mut().zip(q2).for_each(|(a, b)| *a += b);
                (s1, q1)
            },
        );
    let r = reps as f64;
    Ok(sum.iter().zip(&sq).map(|(s, q)| q / r - (s / r).powi(2)).collect())
}

/// One joint realization of outcomes for `deals` (a single draw of the
/// common factors shared by every deal).
pub fn draw_outcomes(deals: &[Deal], params: &ModelParams, seed: u64) -> Result<Vec<Deal>> {
    let sampler = Sampler::new(deals, params)?;
    let mut rng = replication_rng(seed, 0);
    let mut out = deals.to_vec();
    sampler.draw(&mut rng, &mut Vec::new(), |i, z| {
        out[i].outcome = Some(z <= sampler.deals[i].threshold);
    });
    Ok(out)
}

/// Splits `deals` into those with positive idiosyncratic variance under
/// `params` and a count of the rest.
pub fn feasible_deals(deals: &[Deal], params: &ModelParams) -> (Vec<Deal>, usize) {
    let kept: Vec<Deal> = deals
        .iter()
        .filter(|d| idiosyncratic_variance(d.attributes(), params).is_ok())
        .cloned()
        .collect();
    let dropped = deals.len() - kept.len();
    (kept, dropped)
}

/// Writes summaries as pretty JSON with a trailing newline.
pub fn write_summaries_json(path: impl AsRef<Path>, summaries: &[SimulationSummary]) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(summaries)?;
    text.push('\n');
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_summaries_json(path: impl AsRef<Path>) -> Result<Vec<SimulationSummary>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
