use std::collections::VecDeque;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{empirical_joint, fit_metrics, sample_pairs, unordered_cells, JointProbTable, PairSample};
use crate::error::{Error, Result};
use crate::mathcore::{self, Phi2Mode};
use crate::model::{AttributeVector, Deal, ModelParams, ATTRIBUTE_LABELS, DIM};

/// Weight of the squared hinge on `alpha0^2 + e' Sigma e` above
/// `1 - clamp_eps`.
const PENALTY: f64 = 100.0;
/// Armijo sufficient-decrease constant.
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
const LBFGS_MEMORY: usize = 10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Uniform,
    /// `min(available pairs, K) / K` per cell.
    EffectiveSampleSize,
}

/// Which cells enter the reported MSE.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MseCells {
    /// All 144 ordered cells; off-diagonal cells count twice.
    #[default]
    Directed,
    /// The 78 cells with `u <= v`.
    Unique,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub pairs_per_cell: usize,
    pub weights: Weighting,
    pub phi2_mode: Phi2Mode,
    pub rank: usize,
    pub max_iters: usize,
    /// Relative objective improvement over `convergence_window` accepted
    /// steps below which the fit stops.
    pub convergence_tol: f64,
    pub convergence_window: usize,
    pub clamp_eps: f64,
    pub mse_cells: MseCells,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            pairs_per_cell: 5000,
            weights: Weighting::Uniform,
            phi2_mode: Phi2Mode::Exact,
            rank: DIM,
            max_iters: 5000,
            convergence_tol: 1e-9,
            convergence_window: 20,
            clamp_eps: 0.01,
            mse_cells: MseCells::Directed,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pairs_per_cell == 0 {
            return Err(Error::Validation("pairs_per_cell must be at least 1".into()));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.1) {
            return Err(Error::Validation(format!(
                "clamp_eps must lie in (0, 0.1), got {}",
                self.clamp_eps
            )));
        }
        if self.rank == 0 || self.rank > DIM {
            return Err(Error::Validation(format!("rank must lie in 1..=12, got {}", self.rank)));
        }
        if self.max_iters == 0 || self.convergence_window == 0 {
            return Err(Error::Validation("max_iters and convergence_window must be positive".into()));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::Validation("convergence_tol must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Serialized form of fitted parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaReport {
    pub alpha0: f64,
    pub rank: usize,
    /// `L`, row-major, one row per attribute.
    pub loadings: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
}

impl ThetaReport {
    pub fn from_params(p: &ModelParams) -> Self {
        let l = p.loadings();
        Self {
            alpha0: p.alpha0(),
            rank: p.rank(),
            loadings: (0..DIM).map(|r| l.row(r).iter().copied().collect()).collect(),
            sigma: (0..DIM).map(|r| (0..DIM).map(|c| p.sigma()[(r, c)]).collect()).collect(),
        }
    }

    pub fn to_params(&self) -> Result<ModelParams> {
        if self.loadings.len() != DIM || self.loadings.iter().any(|r| r.len() != self.rank) {
            return Err(Error::Shape(format!("loadings must be 12 x {}", self.rank)));
        }
        let l = DMatrix::from_fn(DIM, self.rank, |r, c| self.loadings[r][c]);
        ModelParams::new(self.alpha0, l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub u: String,
    pub v: String,
    pub pairs: usize,
    pub available: u64,
    pub weight: f64,
    pub empirical: Option<f64>,
    pub model: Option<f64>,
    /// `empirical - model`.
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub theta: ThetaReport,
    pub mse: f64,
    pub rmse: f64,
    /// Weighted sum of squared residuals at the returned parameters.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Pair correlations clamped at the returned parameters.
    pub clamped_pairs: usize,
    /// Largest `alpha0^2 + e' Sigma e` over the dataset's attribute vectors.
    pub max_kernel: f64,
    /// Scale applied to `L` after optimization to restore feasibility.
    pub shrink: f64,
    pub labels: Vec<String>,
    pub empirical: JointProbTable,
    pub model: JointProbTable,
    pub cells: Vec<CellReport>,
    /// Penalized objective after each accepted step, starting point first.
    pub objective_trace: Vec<f64>,
    pub config: FitConfig,
}

impl FitReport {
    pub fn params(&self) -> Result<ModelParams> {
        self.theta.to_params()
    }
}

struct PairTerm {
    vi: u32,
    vj: u32,
    ti: f64,
    tj: f64,
    /// `Phi(ti) Phi(tj)` and `phi(ti) phi(tj)`, the linear-mode coefficients.
    cdf: f64,
    pdf: f64,
}

struct CellProblem {
    u: usize,
    v: usize,
    empirical: f64,
    weight: f64,
    available: u64,
    pairs: Vec<PairTerm>,
}

/// Precomputed fit data: pairs reference distinct attribute vectors so the
/// latent correlation is a dot product of per-vector factor loadings.
struct Problem {
    vectors: Vec<AttributeVector>,
    cells: Vec<CellProblem>,
    empty: Vec<(usize, usize)>,
    rank: usize,
    mode: Phi2Mode,
    clamp_eps: f64,
}

struct Evaluation {
    data: f64,
    penalty: f64,
    model: Vec<f64>,
    clamped: usize,
    gradient: Option<Vec<f64>>,
}

impl Evaluation {
    fn total(&self) -> f64 {
        self.data + self.penalty
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Parameter vector: `[logit(alpha0^2), L row-major]`.
fn pack(params: &ModelParams) -> Vec<f64> {
    let a2 = (params.alpha0() * params.alpha0()).clamp(1e-300, 1.0 - 1e-12);
    let mut theta = vec![(a2 / (1.0 - a2)).ln()];
    let l = params.loadings();
    for r in 0..DIM {
        theta.extend(l.row(r).iter());
    }
    theta
}

fn unpack(theta: &[f64], rank: usize) -> (f64, DMatrix<f64>) {
    (sigmoid(theta[0]), DMatrix::from_row_slice(DIM, rank, &theta[1..]))
}

impl Problem {
    fn build(deals: &[Deal], samples: &[PairSample], config: &FitConfig) -> Result<Self> {
        let mut vectors: Vec<AttributeVector> = deals.iter().map(Deal::attributes).collect();
        vectors.sort_unstable();
        vectors.dedup();
        let index = |e: AttributeVector| vectors.binary_search(&e).expect("vector present") as u32;
        let thresholds: Vec<f64> = deals
            .iter()
            .map(|d| {
                let p = d.p.value();
                if p <= 0.0 || p >= 1.0 {
                    Err(Error::Domain(format!("deal {} has degenerate probability {p}", d.id)))
                } else {
                    Ok(mathcore::normal_quantile(p))
                }
            })
            .collect::<Result<_>>()?;

        let k = config.pairs_per_cell as f64;
        let mut cells = Vec::with_capacity(samples.len());
        for s in samples {
            let weight = match config.weights {
                Weighting::Uniform => 1.0,
                Weighting::EffectiveSampleSize => (s.available as f64).min(k) / k,
            };
            let pairs = s
                .pairs
                .iter()
                .map(|&(i, j)| {
                    let (ti, tj) = (thresholds[i], thresholds[j]);
                    PairTerm {
                        vi: index(deals[i].attributes()),
                        vj: index(deals[j].attributes()),
                        ti,
                        tj,
                        cdf: mathcore::normal_cdf(ti) * mathcore::normal_cdf(tj),
                        pdf: mathcore::normal_pdf(ti) * mathcore::normal_pdf(tj),
                    }
                })
                .collect();
            cells.push(CellProblem {
                u: s.u,
                v: s.v,
                empirical: empirical_joint(s, deals)?,
                weight,
                available: s.available,
                pairs,
            });
        }
        let sampled: Vec<(usize, usize)> = samples.iter().map(|s| (s.u, s.v)).collect();
        let empty = unordered_cells().filter(|c| !sampled.contains(c)).collect();
        Ok(Self {
            vectors,
            cells,
            empty,
            rank: config.rank,
            mode: config.phi2_mode,
            clamp_eps: config.clamp_eps,
        })
    }

    fn loadings(&self, l: &DMatrix<f64>) -> Vec<f64> {
        let k = self.rank;
        let mut f = vec![0.0; self.vectors.len() * k];
        for (n, e) in self.vectors.iter().enumerate() {
            for u in e.ones() {
                for c in 0..k {
                    f[n * k + c] += l[(u, c)];
                }
            }
        }
        f
    }

    fn max_kernel(&self, a2: f64, f: &[f64]) -> f64 {
        f.chunks(self.rank)
            .map(|fe| a2 + fe.iter().map(|x| x * x).sum::<f64>())
            .fold(f64::MIN, f64::max)
    }

    fn evaluate(&self, theta: &[f64], with_gradient: bool) -> Evaluation {
        let k = self.rank;
        let (a2, l) = unpack(theta, k);
        let f = self.loadings(&l);
        let bound = 1.0 - self.clamp_eps;
        let mode = self.mode;

        // Per-cell sums and per-pair derivatives in r; collected in cell
        // order so the reduction below is independent of scheduling.
        let per_cell: Vec<(f64, usize, Vec<f64>)> = self
            .cells
            .par_iter()
            .map(|cell| {
                let mut sum = 0.0;
                let mut clamped = 0;
                let mut deriv = Vec::with_capacity(if with_gradient { cell.pairs.len() } else { 0 });
                for p in &cell.pairs {
                    let (fi, fj) = (&f[p.vi as usize * k..][..k], &f[p.vj as usize * k..][..k]);
                    let r = a2 + fi.iter().zip(fj).map(|(x, y)| x * y).sum::<f64>();
                    let inside = r.abs() <= bound;
                    clamped += !inside as usize;
                    let rc = r.clamp(-bound, bound);
                    let value = match mode {
                        Phi2Mode::Exact => mathcore::bvn(p.ti, p.tj, rc),
                        Phi2Mode::Linear => (p.cdf + rc * p.pdf).clamp(0.0, 1.0),
                    };
                    sum += value;
                    if with_gradient {
                        let d = match mode {
                            _ if !inside => 0.0,
                            Phi2Mode::Exact => mathcore::bvn_pdf(p.ti, p.tj, rc),
                            Phi2Mode::Linear if value <= 0.0 || value >= 1.0 => 0.0,
                            Phi2Mode::Linear => p.pdf,
                        };
                        deriv.push(d);
                    }
                }
                (sum, clamped, deriv)
            })
            .collect();

        let mut data = 0.0;
        let mut clamped = 0;
        let mut model = Vec::with_capacity(self.cells.len());
        let mut g_a2 = 0.0;
        let mut g_vec = vec![0.0; if with_gradient { f.len() } else { 0 }];
        for (cell, (sum, c, deriv)) in self.cells.iter().zip(&per_cell) {
            let n = cell.pairs.len().max(1) as f64;
            let m = sum / n;
            let residual = cell.empirical - m;
            data += cell.weight * residual * residual;
            clamped += c;
            model.push(m);
            if with_gradient {
                let coef = -2.0 * cell.weight * residual / n;
                for (p, d) in cell.pairs.iter().zip(deriv) {
                    let g = coef * d;
                    if g == 0.0 {
                        continue;
                    }
                    g_a2 += g;
                    let (vi, vj) = (p.vi as usize * k, p.vj as usize * k);
                    for c in 0..k {
                        g_vec[vi + c] += g * f[vj + c];
                        g_vec[vj + c] += g * f[vi + c];
                    }
                }
            }
        }

        let mut penalty = 0.0;
        for (n, fe) in f.chunks(k).enumerate() {
            let excess = a2 + fe.iter().map(|x| x * x).sum::<f64>() - bound;
            if excess > 0.0 {
                penalty += PENALTY * excess * excess;
                if with_gradient {
                    g_a2 += 2.0 * PENALTY * excess;
                    for c in 0..k {
                        g_vec[n * k + c] += 4.0 * PENALTY * excess * fe[c];
                    }
                }
            }
        }

        let gradient = with_gradient.then(|| {
            let mut g = vec![0.0; theta.len()];
            g[0] = g_a2 * a2 * (1.0 - a2);
            for (n, e) in self.vectors.iter().enumerate() {
                for u in e.ones() {
                    for c in 0..k {
                        g[1 + u * k + c] += g_vec[n * k + c];
                    }
                }
            }
            g
        });
        Evaluation {
            data,
            penalty,
            model,
            clamped,
            gradient,
        }
    }
}

/// Weighted sum of squared differences between empirical and model joint
/// probabilities over the sampled cells.
pub fn objective(
    params: &ModelParams,
    samples: &[PairSample],
    weights: &[f64],
    deals: &[Deal],
    mode: Phi2Mode,
    clamp_eps: f64,
) -> Result<f64> {
    if weights.len() != samples.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} cells",
            weights.len(),
            samples.len()
        )));
    }
    let mut total = 0.0;
    for (s, w) in samples.iter().zip(weights) {
        let e = empirical_joint(s, deals)?;
        let m = super::model_joint(s, deals, params, mode, clamp_eps)?.value;
        total += w * (e - m) * (e - m);
    }
    Ok(total)
}

struct Optimum {
    theta: Vec<f64>,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS search direction by the two-loop recursion.
fn lbfgs_direction(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|qi| *qi *= gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|qi| *qi = -*qi);
    q
}

/// Monotone descent: L-BFGS directions with Armijo backtracking. Every
/// accepted step strictly lowers the penalized objective.
fn minimize(problem: &Problem, start: Vec<f64>, config: &FitConfig) -> Optimum {
    let mut theta = start;
    let mut current = problem.evaluate(&theta, true);
    let mut trace = vec![current.total()];
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(LBFGS_MEMORY);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iters {
        iterations += 1;
        let g = current.gradient.take().expect("gradient requested");
        let g2 = dot(&g, &g);
        if g2 == 0.0 || current.total() == 0.0 {
            converged = true;
            break;
        }
        let mut direction = lbfgs_direction(&g, &memory);
        let mut slope = dot(&g, &direction);
        if memory.is_empty() || !(slope < 0.0) {
            memory.clear();
            direction = g.iter().map(|x| -x * 1e-2 / g2.sqrt()).collect();
            slope = dot(&g, &direction);
        }

        let f0 = current.total();
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = theta.iter().zip(&direction).map(|(t, d)| t + step * d).collect();
            let eval = problem.evaluate(&trial, false);
            if eval.total().is_finite() && eval.total() <= f0 + ARMIJO * step * slope {
                accepted = Some(trial);
                break;
            }
            step *= 0.5;
        }
        let Some(next) = accepted else {
            if memory.is_empty() {
                // No descent along the gradient at any resolvable step.
                converged = true;
                break;
            }
            memory.clear();
            current.gradient = Some(g);
            continue;
        };
        let previous = std::mem::replace(&mut theta, next);
        current = problem.evaluate(&theta, true);
        trace.push(current.total());

        let g_new = current.gradient.as_ref().expect("gradient requested");
        let s: Vec<f64> = theta.iter().zip(&previous).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if memory.len() == LBFGS_MEMORY {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }

        let w = config.convergence_window;
        if trace.len() > w {
            let old = trace[trace.len() - 1 - w];
            let new = current.total();
            if (old - new) <= config.convergence_tol * old.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
    }
    Optimum {
        theta,
        iterations,
        converged,
        trace,
    }
}

/// Scales `L` (and if needed `alpha0`) in place so every vector satisfies
/// `alpha0^2 + e' Sigma e <= 1 - eps`. Returns the scale applied to `L`.
fn shrink_to_feasible(problem: &Problem, theta: &mut [f64]) -> f64 {
    let k = problem.rank;
    let bound = 1.0 - problem.clamp_eps;
    let (mut a2, l) = unpack(theta, k);
    let f = problem.loadings(&l);
    let q = problem.max_kernel(0.0, &f);
    if a2 + q <= bound {
        return 1.0;
    }
    if a2 > 0.5 * bound {
        a2 = 0.5 * bound;
        theta[0] = (a2 / (1.0 - a2)).ln();
    }
    // Strictly inside so rounding cannot push the kernel over the bound.
    let scale = ((bound - a2) / q).sqrt() * (1.0 - 1e-9);
    theta[1..].iter_mut().for_each(|x| *x *= scale);
    scale
}

fn initial_params(rank: usize) -> ModelParams {
    let l = DMatrix::from_fn(DIM, rank, |r, c| if r == c { 0.05 } else { 0.0 });
    ModelParams::new(0.1, l).expect("initial parameters are valid")
}

/// Fits `(alpha0, L)` to the deals' outcomes by weighted least squares on
/// pairwise joint success probabilities. Non-convergence is reported
/// through `converged`, not as an error.
pub fn fit(deals: &[Deal], config: &FitConfig) -> Result<FitReport> {
    config.validate()?;
    if let Some(d) = deals.iter().find(|d| d.outcome.is_none()) {
        return Err(Error::MissingOutcome(d.id.0));
    }
    let samples = fit_samples(deals, config);
    if samples.is_empty() {
        return Err(Error::Validation("no attribute cell has eligible pairs".into()));
    }
    let problem = Problem::build(deals, &samples, config)?;
    let start = pack(&initial_params(config.rank));
    let optimum = minimize(&problem, start, config);
    let mut theta = optimum.theta;
    let shrink = shrink_to_feasible(&problem, &mut theta);
    let final_eval = problem.evaluate(&theta, false);
    let (a2, l) = unpack(&theta, config.rank);
    let params = ModelParams::new(a2.sqrt(), l)?;
    let max_kernel = problem.max_kernel(a2, &problem.loadings(params.loadings()));

    let mut empirical = JointProbTable::default();
    let mut model = JointProbTable::default();
    let mut cells = Vec::with_capacity(78);
    for (cell, &m) in problem.cells.iter().zip(&final_eval.model) {
        empirical.set_symmetric(cell.u, cell.v, cell.empirical);
        model.set_symmetric(cell.u, cell.v, m);
        cells.push(CellReport {
            u: ATTRIBUTE_LABELS[cell.u].into(),
            v: ATTRIBUTE_LABELS[cell.v].into(),
            pairs: cell.pairs.len(),
            available: cell.available,
            weight: cell.weight,
            empirical: Some(cell.empirical),
            model: Some(m),
            residual: Some(cell.empirical - m),
        });
    }
    for &(u, v) in &problem.empty {
        cells.push(CellReport {
            u: ATTRIBUTE_LABELS[u].into(),
            v: ATTRIBUTE_LABELS[v].into(),
            pairs: 0,
            available: 0,
            weight: 0.0,
            empirical: None,
            model: None,
            residual: None,
        });
    }
    let (mse, rmse) = fit_metrics(&empirical, &model, config.mse_cells)?;
    Ok(FitReport {
        theta: ThetaReport::from_params(&params),
        mse,
        rmse,
        objective: final_eval.data,
        iterations: optimum.iterations,
        converged: optimum.converged,
        clamped_pairs: final_eval.clamped,
        max_kernel,
        shrink,
        labels: ATTRIBUTE_LABELS.iter().map(|s| s.to_string()).collect(),
        empirical,
        model,
        cells,
        objective_trace: optimum.trace,
        config: config.clone(),
    })
}

/// Samples used by [`fit`] for the given config, in cell order.
pub fn fit_samples(deals: &[Deal], config: &FitConfig) -> Vec<PairSample> {
    unordered_cells()
        .filter_map(|(u, v)| sample_pairs(deals, u, v, config.pairs_per_cell, config.seed).ok())
        .collect()
}
