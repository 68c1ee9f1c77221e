//! Deal attributes, their 12-bit encoding, and the latent covariance kernel.
//!
//! Attribute order is fixed everywhere (files, tables, matrices):
//! `F_first, F_repeat, G_CA, G_NY, G_OtherUS, G_Intl, M_SaaS, M_AI,
//! M_Fintech, M_Consumer, M_DevTools, M_Health`.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::{DMatrix, SMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{self, LatentCorrelation, Probability};

/// Number of attribute indicators.
pub const DIM: usize = 12;

pub const ATTRIBUTE_LABELS: [&str; DIM] = [
    "F_first",
    "F_repeat",
    "G_CA",
    "G_NY",
    "G_OtherUS",
    "G_Intl",
    "M_SaaS",
    "M_AI",
    "M_Fintech",
    "M_Consumer",
    "M_DevTools",
    "M_Health",
];

pub type Matrix12 = SMatrix<f64, DIM, DIM>;

/// Looks up an attribute index by its label (`"M_AI"`, ...).
pub fn attribute_index(label: &str) -> Option<usize> {
    ATTRIBUTE_LABELS.iter().position(|l| *l == label)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FounderType {
    FirstTime,
    Repeat,
}

impl FounderType {
    pub const ALL: [FounderType; 2] = [FounderType::FirstTime, FounderType::Repeat];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FounderType::FirstTime => "FirstTime",
            FounderType::Repeat => "Repeat",
        }
    }
}

impl FromStr for FounderType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "FirstTime" => Ok(FounderType::FirstTime),
            "Repeat" => Ok(FounderType::Repeat),
            other => Err(Error::Validation(format!("unknown founder type {other:?}"))),
        }
    }
}

impl fmt::Display for FounderType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Geography {
    CA,
    NY,
    OtherUS,
    Intl,
}

impl Geography {
    pub const ALL: [Geography; 4] = [
        Geography::CA,
        Geography::NY,
        Geography::OtherUS,
        Geography::Intl,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Geography::CA => "CA",
            Geography::NY => "NY",
            Geography::OtherUS => "OtherUS",
            Geography::Intl => "Intl",
        }
    }

    /// CA or NY.
    pub fn is_coastal(self) -> bool {
        matches!(self, Geography::CA | Geography::NY)
    }
}

impl FromStr for Geography {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Geography::ALL
            .into_iter()
            .find(|g| g.as_str() == s.trim())
            .ok_or_else(|| Error::Validation(format!("unknown geography {s:?}")))
    }
}

impl fmt::Display for Geography {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Market {
    SaaS,
    AI,
    Fintech,
    Consumer,
    DevTools,
    Health,
}

impl Market {
    pub const ALL: [Market; 6] = [
        Market::SaaS,
        Market::AI,
        Market::Fintech,
        Market::Consumer,
        Market::DevTools,
        Market::Health,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Market::SaaS => "SaaS",
            Market::AI => "AI",
            Market::Fintech => "Fintech",
            Market::Consumer => "Consumer",
            Market::DevTools => "DevTools",
            Market::Health => "Health",
        }
    }

    /// AI, Fintech and SaaS.
    pub fn is_hot(self) -> bool {
        matches!(self, Market::SaaS | Market::AI | Market::Fintech)
    }
}

impl FromStr for Market {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Market::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim())
            .ok_or_else(|| Error::Validation(format!("unknown market {s:?}")))
    }
}

impl fmt::Display for Market {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Subset of the six market categories, stored as a 6-bit mask.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MarketSet(u8);

impl MarketSet {
    pub const EMPTY: MarketSet = MarketSet(0);
    const HOT_MASK: u8 = 0b0000_0111;

    pub fn from_bits(bits: u8) -> Result<Self> {
        if bits < 64 {
            Ok(MarketSet(bits))
        } else {
            Err(Error::Validation(format!("market mask {bits:#b} exceeds 6 bits")))
        }
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn single(m: Market) -> Self {
        MarketSet(1 << m.index())
    }

    pub fn contains(self, m: Market) -> bool {
        self.0 & (1 << m.index()) != 0
    }

    pub fn insert(&mut self, m: Market) {
        self.0 |= 1 << m.index();
    }

    pub fn remove(&mut self, m: Market) {
        self.0 &= !(1 << m.index());
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Number of hot-sector labels carried.
    pub fn hot_count(self) -> usize {
        (self.0 & Self::HOT_MASK).count_ones() as usize
    }

    pub fn has_hot(self) -> bool {
        self.0 & Self::HOT_MASK != 0
    }

    pub fn iter(self) -> impl Iterator<Item = Market> {
        Market::ALL.into_iter().filter(move |m| self.contains(*m))
    }
}

impl FromIterator<Market> for MarketSet {
    fn from_iter<I: IntoIterator<Item = Market>>(iter: I) -> Self {
        let mut set = MarketSet::EMPTY;
        for m in iter {
            set.insert(m);
        }
        set
    }
}

impl fmt::Display for MarketSet {
    /// Semicolon-joined labels in canonical order; empty set prints nothing.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<&str> = self.iter().map(Market::as_str).collect();
        f.write_str(&labels.join(";"))
    }
}

impl FromStr for MarketSet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut set = MarketSet::EMPTY;
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let m: Market = part.parse()?;
            if set.contains(m) {
                return Err(Error::Validation(format!("market {m} listed twice")));
            }
            set.insert(m);
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DealId(pub u64);

impl fmt::Display for DealId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A deal: categorical attributes, a success probability, and optionally a
/// realized binary outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Deal {
    pub id: DealId,
    pub founder: FounderType,
    pub geo: Geography,
    pub markets: MarketSet,
    pub p: Probability,
    pub outcome: Option<bool>,
}

impl Deal {
    pub fn attributes(&self) -> AttributeVector {
        encode(self)
    }
}

/// 12-bit attribute indicator; bit `u` set iff the deal carries attribute
/// `ATTRIBUTE_LABELS[u]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AttributeVector(u16);

impl AttributeVector {
    pub fn from_parts(founder: FounderType, geo: Geography, markets: MarketSet) -> Self {
        let bits = (1u16 << founder.index())
            | (1u16 << (2 + geo.index()))
            | ((markets.bits() as u16) << 6);
        AttributeVector(bits)
    }

    /// Builds from raw bits, enforcing the one-hot constraints.
    pub fn from_bits(bits: u16) -> Result<Self> {
        decode_bits(bits).map(|_| AttributeVector(bits))
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn get(self, u: usize) -> bool {
        self.0 & (1 << u) != 0
    }

    /// Indices of the set attributes, ascending.
    pub fn ones(self) -> impl Iterator<Item = usize> {
        (0..DIM).filter(move |&u| self.get(u))
    }

    pub fn to_array(self) -> [u8; DIM] {
        std::array::from_fn(|u| self.get(u) as u8)
    }

    pub fn founder(self) -> FounderType {
        if self.get(0) {
            FounderType::FirstTime
        } else {
            FounderType::Repeat
        }
    }

    pub fn geography(self) -> Geography {
        Geography::ALL[(2..6).find(|&u| self.get(u)).unwrap_or(2) - 2]
    }

    pub fn markets(self) -> MarketSet {
        MarketSet(((self.0 >> 6) & 0x3f) as u8)
    }
}

impl fmt::Display for AttributeVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<&str> = self.ones().map(|u| ATTRIBUTE_LABELS[u]).collect();
        write!(f, "[{}]", labels.join(", "))
    }
}

pub fn encode(deal: &Deal) -> AttributeVector {
    AttributeVector::from_parts(deal.founder, deal.geo, deal.markets)
}

fn decode_bits(bits: u16) -> Result<(FounderType, Geography, MarketSet)> {
    if bits >> DIM != 0 {
        return Err(Error::Validation(format!("attribute bits {bits:#x} exceed 12")));
    }
    let founder = bits & 0b11;
    let geo = (bits >> 2) & 0b1111;
    if founder.count_ones() != 1 {
        return Err(Error::Validation("founder block is not one-hot".into()));
    }
    if geo.count_ones() != 1 {
        return Err(Error::Validation("geography block is not one-hot".into()));
    }
    Ok((
        FounderType::ALL[founder.trailing_zeros() as usize],
        Geography::ALL[geo.trailing_zeros() as usize],
        MarketSet(((bits >> 6) & 0x3f) as u8),
    ))
}

/// Inverse of [`encode`] on the categorical fields.
pub fn decode(e: AttributeVector) -> (FounderType, Geography, MarketSet) {
    decode_bits(e.0).expect("AttributeVector invariants hold")
}

/// Global loading `alpha0` and loading matrix `L` (12 x k); the latent
/// attribute covariance is `Sigma = L L'`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    alpha0: f64,
    loadings: DMatrix<f64>,
    sigma: Matrix12,
}

impl ModelParams {
    pub fn new(alpha0: f64, loadings: DMatrix<f64>) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha0) {
            return Err(Error::Domain(format!("alpha0 {alpha0} outside [0, 1)")));
        }
        if loadings.nrows() != DIM || loadings.ncols() == 0 || loadings.ncols() > DIM {
            return Err(Error::Shape(format!(
                "loadings must be 12 x k with 1 <= k <= 12, got {} x {}",
                loadings.nrows(),
                loadings.ncols()
            )));
        }
        if loadings.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("non-finite loading".into()));
        }
        let product = &loadings * loadings.transpose();
        let sigma = Matrix12::from_fn(|i, j| 0.5 * (product[(i, j)] + product[(j, i)]));
        Ok(Self {
            alpha0,
            loadings,
            sigma,
        })
    }

    /// The independence model: `alpha0 = 0`, `L = 0` with rank `k`.
    pub fn zero(rank: usize) -> Self {
        Self::new(0.0, DMatrix::zeros(DIM, rank.clamp(1, DIM))).expect("zero model is valid")
    }

    /// Builds a full-rank factor from a symmetric covariance table. Negative
    /// eigenvalues (e.g. from rounding of a published table) are clipped to
    /// zero, so `sigma()` returns the nearest PSD matrix in that sense.
    pub fn from_sigma(alpha0: f64, sigma: &Matrix12) -> Result<Self> {
        for i in 0..DIM {
            for j in 0..i {
                if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-12 {
                    return Err(Error::Validation(format!(
                        "covariance not symmetric at ({}, {})",
                        ATTRIBUTE_LABELS[i], ATTRIBUTE_LABELS[j]
                    )));
                }
            }
        }
        let eig = SymmetricEigen::new(*sigma);
        let mut loadings = DMatrix::zeros(DIM, DIM);
        for c in 0..DIM {
            let scale = eig.eigenvalues[c].max(0.0).sqrt();
            for r in 0..DIM {
                loadings[(r, c)] = eig.eigenvectors[(r, c)] * scale;
            }
        }
        Self::new(alpha0, loadings)
    }

    pub fn from_table(alpha0: f64, table: &[[f64; DIM]; DIM]) -> Result<Self> {
        Self::from_sigma(alpha0, &Matrix12::from_fn(|i, j| table[i][j]))
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn loadings(&self) -> &DMatrix<f64> {
        &self.loadings
    }

    pub fn sigma(&self) -> &Matrix12 {
        &self.sigma
    }

    pub fn rank(&self) -> usize {
        self.loadings.ncols()
    }

    /// `alpha0^2 + e_i' Sigma e_j`.
    pub fn kernel(&self, e_i: AttributeVector, e_j: AttributeVector) -> f64 {
        let mut acc = 0.0;
        for u in e_i.ones() {
            for v in e_j.ones() {
                acc += self.sigma[(u, v)];
            }
        }
        self.alpha0 * self.alpha0 + acc
    }

    /// `L' e`, the deal's loading on the k common factors.
    pub fn factor_loading(&self, e: AttributeVector) -> Vec<f64> {
        (0..self.rank())
            .map(|c| e.ones().map(|u| self.loadings[(u, c)]).sum())
            .collect()
    }
}

/// Latent covariance (equal to the correlation when both deals are
/// feasible) between two deals with the given attribute vectors.
pub fn latent_covariance(e_i: AttributeVector, e_j: AttributeVector, params: &ModelParams) -> f64 {
    params.kernel(e_i, e_j)
}

/// `phi^2 = 1 - alpha0^2 - e' Sigma e`, the idiosyncratic variance that
/// normalizes the latent variable to unit variance.
pub fn idiosyncratic_variance(e: AttributeVector, params: &ModelParams) -> Result<f64> {
    let kernel = params.kernel(e, e);
    if kernel >= 1.0 {
        return Err(Error::InfeasibleVariance {
            attributes: e.to_string(),
            kernel,
        });
    }
    Ok(1.0 - kernel)
}

/// Correlation of the binary outcomes induced by marginals `p_i`, `p_j` and
/// latent correlation `r`.
pub fn bernoulli_correlation(
    p_i: Probability,
    p_j: Probability,
    r: LatentCorrelation,
) -> Result<f64> {
    let (pi, pj) = (p_i.value(), p_j.value());
    if pi <= 0.0 || pi >= 1.0 || pj <= 0.0 || pj >= 1.0 {
        return Err(Error::Domain(format!(
            "bernoulli correlation needs 0 < p < 1, got ({pi}, {pj})"
        )));
    }
    Ok(bernoulli_correlation_raw(pi, pj, r.value()))
}

pub(crate) fn bernoulli_correlation_raw(pi: f64, pj: f64, r: f64) -> f64 {
    let joint = mathcore::bvn(
        mathcore::normal_quantile(pi),
        mathcore::normal_quantile(pj),
        r,
    );
    let value = (joint - pi * pj) / (pi * (1.0 - pi) * pj * (1.0 - pj)).sqrt();
    value.clamp(-1.0, 1.0)
}

/// Attribute group ranges within the 12-vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttributeGroup {
    Founder,
    Geography,
    Market,
}

impl AttributeGroup {
    pub fn range(self) -> Range<usize> {
        match self {
            AttributeGroup::Founder => 0..2,
            AttributeGroup::Geography => 2..6,
            AttributeGroup::Market => 6..12,
        }
    }

    pub fn of(u: usize) -> Self {
        match u {
            0..2 => AttributeGroup::Founder,
            2..6 => AttributeGroup::Geography,
            _ => AttributeGroup::Market,
        }
    }
}

/// Labels of the 3 x 3 block partition of `Sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    FF,
    FG,
    FM,
    GF,
    GG,
    GM,
    MF,
    MG,
    MM,
}

impl Block {
    pub const ALL: [Block; 9] = [
        Block::FF,
        Block::FG,
        Block::FM,
        Block::GF,
        Block::GG,
        Block::GM,
        Block::MF,
        Block::MG,
        Block::MM,
    ];

    pub fn groups(self) -> (AttributeGroup, AttributeGroup) {
        use AttributeGroup::*;
        match self {
            Block::FF => (Founder, Founder),
            Block::FG => (Founder, Geography),
            Block::FM => (Founder, Market),
            Block::GF => (Geography, Founder),
            Block::GG => (Geography, Geography),
            Block::GM => (Geography, Market),
            Block::MF => (Market, Founder),
            Block::MG => (Market, Geography),
            Block::MM => (Market, Market),
        }
    }

    pub fn ranges(self) -> (Range<usize>, Range<usize>) {
        let (r, c) = self.groups();
        (r.range(), c.range())
    }
}

/// Copy of the `block` sub-matrix of `Sigma`.
pub fn sigma_block(params: &ModelParams, block: Block) -> DMatrix<f64> {
    let (rows, cols) = block.ranges();
    let sigma = params.sigma();
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
        sigma[(rows.start + i, cols.start + j)]
    })
}
