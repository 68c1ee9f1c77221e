use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use deal_copula::dataset::{
    bucket_report, generate_population, load_deals, load_marginals, load_pair_counts, save_deals, MarginalCounts,
    PairCountTable, PopulationTarget,
};
use deal_copula::estimation::{
    fit, fit_metrics, fit_samples, load_sigma_params, model_table, FitReport, JointProbTable,
};
use deal_copula::fixtures;
use deal_copula::model::{Deal, FounderType, ModelParams, ATTRIBUTE_LABELS, DIM};
use deal_copula::simulation::{
    build_portfolio, correlation_histograms, draw_outcomes, feasible_deals, read_summaries_json, simulate,
    write_summaries_json, PortfolioSpec, Setting, SimulationSummary,
};

use crate::config::{OutcomeSource, ParamsSource, PopulationSource, RunConfig, TableSource};
use crate::error::{CliError, Result};
use crate::tables::{build_tables, fmt_moment, fmt_percent};

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(deal_copula::Error::from)?;
    text.push('\n');
    write_text(path, &text)
}

fn say(log: &mut dyn Write, line: impl AsRef<str>) {
    // Console output is best effort; a closed pipe must not abort a run.
    let _ = writeln!(log, "{}", line.as_ref());
}

pub fn load_population(cfg: &RunConfig, source: &PopulationSource) -> Result<Vec<Deal>> {
    match source {
        PopulationSource::BuiltinPaper { seed } => Ok(generate_population(&PopulationTarget::paper(), *seed)?),
        PopulationSource::File { path } => Ok(load_deals(cfg.input(path)?)?),
    }
}

pub fn load_params(cfg: &RunConfig, source: &ParamsSource) -> Result<ModelParams> {
    match source {
        ParamsSource::SigmaFixture => Ok(ModelParams::from_table(fixtures::ALPHA0, &fixtures::SIGMA)?),
        ParamsSource::SigmaFile { path, alpha0 } => Ok(load_sigma_params(cfg.input(path)?, *alpha0)?),
        ParamsSource::FitReport { path } => {
            let path = cfg.input(path)?;
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            let report: FitReport = serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("{}: not a fit report: {e}", path.display())))?;
            Ok(report.params()?)
        }
    }
}

fn matrix_text(title: &str, cell: impl Fn(usize, usize) -> String) -> String {
    let cells: Vec<Vec<String>> = (0..DIM).map(|u| (0..DIM).map(|v| cell(u, v)).collect()).collect();
    let width = cells
        .iter()
        .flatten()
        .map(String::len)
        .chain(ATTRIBUTE_LABELS.iter().map(|l| l.len()))
        .max()
        .unwrap_or(0);
    let mut out = format!("{title}\n{:<width$}", "");
    for l in ATTRIBUTE_LABELS {
        let _ = write!(out, " {l:>width$}");
    }
    out.push('\n');
    for (u, row) in cells.iter().enumerate() {
        let _ = write!(out, "{:<width$}", ATTRIBUTE_LABELS[u]);
        for c in row {
            let _ = write!(out, " {c:>width$}");
        }
        out.push('\n');
    }
    out
}

/// Result of `gen-data`: where the deals went and whether every recomputed
/// count matched its target.
#[derive(Debug, Clone, PartialEq)]
pub struct GenDataOutcome {
    pub deals_path: PathBuf,
    pub report_path: PathBuf,
    pub deals: usize,
    pub pair_count_mismatches: usize,
    pub bucket_mismatches: usize,
}

pub fn gen_data(cfg: &RunConfig, out_dir: &Path, log: &mut dyn Write) -> Result<GenDataOutcome> {
    let section = &cfg.gen_data;
    let (target, pairs) = match section.tables {
        TableSource::BuiltinPaper => (PopulationTarget::paper(), PairCountTable::paper()),
        TableSource::Custom => {
            let (Some(m), Some(p)) = (&section.marginals, &section.pair_counts) else {
                return Err(CliError::Config(
                    "gen_data.tables = \"custom\" needs both marginals and pair_counts".into(),
                ));
            };
            let marginals: MarginalCounts = load_marginals(cfg.input(m)?)?;
            let pairs = load_pair_counts(cfg.input(p)?)?;
            (PopulationTarget::from_pair_counts(marginals, &pairs)?, pairs)
        }
    };
    let deals = generate_population(&target, section.seed)?;
    ensure_dir(out_dir)?;
    let deals_path = out_dir.join(&section.output);
    save_deals(&deals, &deals_path)?;

    let got = PairCountTable::from_deals(&deals);
    let mismatches = (0..DIM)
        .flat_map(|u| (0..DIM).map(move |v| (u, v)))
        .filter(|&(u, v)| got.get(u, v) != pairs.get(u, v))
        .count();
    let mut report = format!("Population: {} deals, seed {}\n\n", deals.len(), section.seed);
    report.push_str(&matrix_text("Pair counts: recomputed minus target", |u, v| {
        (got.get(u, v) as i128 - pairs.get(u, v) as i128).to_string()
    }));
    let _ = writeln!(report, "cells differing: {mismatches}\n");

    report.push_str("Marginals\nattribute  target  generated\n");
    let generated: Vec<u64> = (0..DIM).map(|u| deals.iter().filter(|d| d.attributes().get(u)).count() as u64).collect();
    for u in 0..DIM {
        let _ = writeln!(report, "{:<10} {:>7} {:>10}", ATTRIBUTE_LABELS[u], target.marginals().get(u), generated[u]);
    }

    let buckets = bucket_report(&deals);
    let builtin = section.tables == TableSource::BuiltinPaper;
    let mut bucket_mismatches = 0;
    report.push_str("\nBuckets (first-time / repeat)\nbucket            generated      target    mean p first  mean p repeat\n");
    for (row, (label, first, repeat)) in buckets.iter().zip(fixtures::BUCKET_COUNTS) {
        debug_assert_eq!(row.bucket.label(), label);
        let expected = if builtin {
            if (row.first.count, row.repeat.count) != (first, repeat) {
                bucket_mismatches += 1;
            }
            format!("{first}/{repeat}")
        } else {
            "-".into()
        };
        let _ = writeln!(
            report,
            "{:<17} {:>10} {:>11} {:>13} {:>14}",
            row.bucket.label(),
            format!("{}/{}", row.first.count, row.repeat.count),
            expected,
            row.first.mean_p.map_or("-".into(), fmt_percent),
            row.repeat.mean_p.map_or("-".into(), fmt_percent),
        );
    }
    let report_path = out_dir.join("gen_data_report.txt");
    write_text(&report_path, &report)?;

    let mean_p = |f: FounderType| {
        let ps: Vec<f64> = deals.iter().filter(|d| d.founder == f).map(|d| d.p.value()).collect();
        if ps.is_empty() { None } else { Some(ps.iter().sum::<f64>() / ps.len() as f64) }
    };
    say(log, format!("wrote {} deals to {}", deals.len(), deals_path.display()));
    say(log, format!("pair-count cells differing from target: {mismatches}"));
    if builtin {
        say(log, format!("bucket rows differing from target: {bucket_mismatches}"));
    }
    say(
        log,
        format!(
            "mean synthetic p: first-time {}, repeat {}",
            mean_p(FounderType::FirstTime).map_or("-".into(), fmt_percent),
            mean_p(FounderType::Repeat).map_or("-".into(), fmt_percent)
        ),
    );
    say(log, format!("verification report: {}", report_path.display()));
    if mismatches > 0 || bucket_mismatches > 0 {
        return Err(CliError::Data(format!(
            "generated population misses {mismatches} pair-count cells and {bucket_mismatches} bucket rows"
        )));
    }
    Ok(GenDataOutcome {
        deals_path,
        report_path,
        deals: deals.len(),
        pair_count_mismatches: mismatches,
        bucket_mismatches,
    })
}

/// Comparison of the fitted table against the table implied by the
/// parameters that generated the outcomes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundTrip {
    pub outcome_seed: u64,
    /// Deals dropped because the truth cannot normalize their variance.
    pub excluded_deals: usize,
    pub deals: usize,
    pub successes: usize,
    pub mse: f64,
    pub rmse: f64,
    pub empirical_rmse: f64,
    pub truth_table: JointProbTable,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub report: FitReport,
    pub round_trip: Option<RoundTrip>,
    pub report_path: PathBuf,
}

pub fn fit_cmd(cfg: &RunConfig, out_dir: &Path, log: &mut dyn Write) -> Result<FitOutcome> {
    let section = &cfg.fit;
    section.settings.validate()?;
    let population = load_population(cfg, &section.deals)?;
    ensure_dir(out_dir)?;
    let (deals, truth) = match section.outcomes {
        OutcomeSource::File => {
            if let Some(d) = population.iter().find(|d| d.outcome.is_none()) {
                return Err(CliError::Data(format!(
                    "deal {} has no outcome; set fit.outcomes = \"model\" to generate them",
                    d.id
                )));
            }
            (population, None)
        }
        OutcomeSource::Model => {
            let truth = load_params(cfg, &section.truth)?;
            let (feasible, excluded) = feasible_deals(&population, &truth);
            if excluded > 0 {
                say(log, format!("warning: {excluded} deals are infeasible under the truth and were excluded"));
            }
            let deals = draw_outcomes(&feasible, &truth, section.outcome_seed)?;
            save_deals(&deals, out_dir.join("deals_with_outcomes.csv"))?;
            (deals, Some((truth, excluded)))
        }
    };
    let successes = deals.iter().filter(|d| d.outcome == Some(true)).count();
    if successes == 0 {
        say(log, "warning: no deal succeeded; the fit degenerates toward independence");
    }

    let report = fit(&deals, &section.settings)?;
    let report_path = out_dir.join(&section.output);
    write_json(&report_path, &report)?;

    say(log, format!("deals: {}, successes: {successes}", deals.len()));
    say(log, format!("iterations: {}, converged: {}", report.iterations, report.converged));
    if !report.converged {
        say(log, format!("warning: no convergence within {} iterations", section.settings.max_iters));
    }
    say(log, format!("alpha0 = {:.6}", report.theta.alpha0));
    say(log, format!("MSE = {:.3e}", report.mse));
    say(log, format!("RMSE = {:.6} ({:.4}%)", report.rmse, 100.0 * report.rmse));

    let round_trip = match truth {
        None => None,
        Some((truth, excluded)) => {
            let s = &section.settings;
            let samples = fit_samples(&deals, s);
            let truth_table = model_table(&samples, &deals, &truth, s.phi2_mode, s.clamp_eps)?;
            let (mse, rmse) = fit_metrics(&report.model, &truth_table, s.mse_cells)?;
            let (_, empirical_rmse) = fit_metrics(&report.empirical, &truth_table, s.mse_cells)?;
            let rt = RoundTrip {
                outcome_seed: section.outcome_seed,
                excluded_deals: excluded,
                deals: deals.len(),
                successes,
                mse,
                rmse,
                empirical_rmse,
                truth_table,
            };
            write_json(&out_dir.join("round_trip.json"), &rt)?;
            say(log, format!("round trip: fitted vs truth-implied RMSE = {rmse:.6} ({:.4}%)", 100.0 * rmse));
            say(
                log,
                format!(
                    "round trip: empirical vs truth-implied RMSE = {empirical_rmse:.6} ({:.4}%)",
                    100.0 * empirical_rmse
                ),
            );
            Some(rt)
        }
    };
    say(log, format!("fit report: {}", report_path.display()));
    Ok(FitOutcome {
        report,
        round_trip,
        report_path,
    })
}

fn slug(name: &str) -> String {
    let mut s = String::new();
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            s.push(c.to_ascii_lowercase());
        } else if !s.ends_with('-') {
            s.push('-');
        }
    }
    s.trim_matches('-').to_string()
}

pub fn portfolio_specs(cfg: &RunConfig) -> Vec<PortfolioSpec> {
    let section = &cfg.simulate;
    if !section.portfolios.is_empty() {
        return section.portfolios.clone();
    }
    section
        .sizes
        .iter()
        .flat_map(|&n| PortfolioSpec::standard_set(n, section.portfolio_seed))
        .collect()
}

pub fn simulate_cmd(cfg: &RunConfig, out_dir: &Path, log: &mut dyn Write) -> Result<Vec<SimulationSummary>> {
    let section = &cfg.simulate;
    if section.replications == 0 {
        return Err(CliError::Config("simulate.replications must be at least 1".into()));
    }
    let population = load_population(cfg, &section.population)?;
    let params = load_params(cfg, &section.params)?;
    let specs = portfolio_specs(cfg);
    if specs.is_empty() {
        return Err(CliError::Config("no portfolios to simulate".into()));
    }
    let hist_dir = out_dir.join("histograms");
    ensure_dir(&hist_dir)?;

    let mut summaries = Vec::with_capacity(2 * specs.len());
    for spec in &specs {
        let portfolio = build_portfolio(spec, &population)?;
        for setting in Setting::ALL {
            let summary = simulate(&portfolio, &params, setting, section.replications, section.seed)?
                .with_thresholds(&section.thresholds);
            let file = format!(
                "n{}_{}_{}.csv",
                summary.n,
                slug(&summary.portfolio),
                slug(&setting.to_string())
            );
            summary.write_histogram_csv(hist_dir.join(file))?;
            say(
                log,
                format!(
                    "n={:<3} {:<28} {:<11} mean {:>6.2}  std {:>5.2}  skew {:>5}  kurt {:>5}  {}",
                    summary.n,
                    summary.portfolio,
                    setting.to_string(),
                    summary.mean,
                    summary.std,
                    fmt_moment(summary.skew),
                    fmt_moment(summary.kurt),
                    summary
                        .tail
                        .iter()
                        .map(|t| format!("P(K>={})={}", t.threshold, fmt_percent(t.probability)))
                        .collect::<Vec<_>>()
                        .join(" ")
                ),
            );
            summaries.push(summary);
        }
    }
    let path = out_dir.join(&section.output);
    write_summaries_json(&path, &summaries)?;
    say(log, format!("summaries: {}", path.display()));

    if section.correlation_pairs > 0 {
        let h = correlation_histograms(&population, &params, section.correlation_pairs, section.seed)?;
        h.write_csv(out_dir.join("correlation_histograms.csv"))?;
        write_json(&out_dir.join("correlation_summary.json"), &h)?;
        if h.excluded_deals > 0 {
            say(log, format!("warning: {} infeasible deals excluded from pair sampling", h.excluded_deals));
        }
        say(
            log,
            format!(
                "correlations over {} pairs: latent std {:.4}, Bernoulli std {:.4}",
                h.pairs, h.latent_std, h.bernoulli_std
            ),
        );
    }
    Ok(summaries)
}

pub fn report_cmd(cfg: &RunConfig, out_dir: &Path, log: &mut dyn Write) -> Result<Vec<PathBuf>> {
    let section = &cfg.report;
    if section.inputs.is_empty() {
        return Err(CliError::Config("report.inputs is empty".into()));
    }
    let mut summaries = Vec::new();
    for input in &section.inputs {
        // Inputs are usually earlier outputs, so look under --out first.
        let in_out = out_dir.join(input);
        let path = if input.is_relative() && in_out.exists() { in_out } else { cfg.input(input)? };
        summaries.extend(read_summaries_json(&path)?);
    }
    let tables = build_tables(&summaries, section.n)?;
    ensure_dir(out_dir)?;
    let mut written = Vec::new();
    for t in &tables {
        for w in &t.warnings {
            say(log, format!("warning: {w}"));
        }
        for (kind, table) in [("moments", &t.moments), ("tails", &t.tails)] {
            let base = out_dir.join(format!("{kind}_n{}", t.n));
            let csv = base.with_extension("csv");
            let txt = base.with_extension("txt");
            write_text(&csv, &table.to_csv())?;
            write_text(&txt, &table.to_text())?;
            say(log, table.to_text());
            written.extend([csv, txt]);
        }
    }
    Ok(written)
}
