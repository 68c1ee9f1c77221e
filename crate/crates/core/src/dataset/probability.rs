use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mathcore::Probability;
use crate::model::{Deal, FounderType, Geography, MarketSet};

/// How the hot-sector nudge combines across several hot labels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectorNudge {
    /// One nudge if the deal carries any hot label.
    #[default]
    Once,
    /// One nudge per hot label carried.
    PerLabel,
}

/// Synthetic success probability: a founder-specific uniform base plus
/// additive nudges, capped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProbRule {
    pub repeat_range: (f64, f64),
    pub first_range: (f64, f64),
    /// Added for CA or NY.
    pub geo_nudge: f64,
    /// Added for AI, Fintech, SaaS.
    pub sector_nudge: f64,
    pub sector_mode: SectorNudge,
    pub cap: f64,
}

impl Default for SyntheticProbRule {
    fn default() -> Self {
        Self {
            repeat_range: (0.12, 0.20),
            first_range: (0.05, 0.12),
            geo_nudge: 0.01,
            sector_nudge: 0.01,
            sector_mode: SectorNudge::Once,
            cap: 0.20,
        }
    }
}

impl SyntheticProbRule {
    /// Probability before the uniform draw is added: the nudge total.
    pub fn nudge(&self, geo: Geography, markets: MarketSet) -> f64 {
        let mut nudge = 0.0;
        if geo.is_coastal() {
            nudge += self.geo_nudge;
        }
        let hot = match self.sector_mode {
            SectorNudge::Once => markets.has_hot() as usize,
            SectorNudge::PerLabel => markets.hot_count(),
        };
        nudge + self.sector_nudge * hot as f64
    }

    pub fn range(&self, founder: FounderType) -> (f64, f64) {
        match founder {
            FounderType::FirstTime => self.first_range,
            FounderType::Repeat => self.repeat_range,
        }
    }

    /// Deterministic part of the rule for a given base draw `u` in [0, 1).
    pub fn evaluate(&self, founder: FounderType, geo: Geography, markets: MarketSet, u: f64) -> f64 {
        let (lo, hi) = self.range(founder);
        (lo + (hi - lo) * u + self.nudge(geo, markets)).min(self.cap)
    }

    pub fn draw<R: Rng + ?Sized>(
        &self,
        founder: FounderType,
        geo: Geography,
        markets: MarketSet,
        rng: &mut R,
    ) -> Probability {
        let u: f64 = rng.random();
        Probability::new(self.evaluate(founder, geo, markets, u))
            .expect("rule ranges lie in [0, 1]")
    }
}

/// Draws a synthetic probability for `deal` with the default rule.
pub fn assign_probability<R: Rng + ?Sized>(deal: &Deal, rng: &mut R) -> Probability {
    SyntheticProbRule::default().draw(deal.founder, deal.geo, deal.markets, rng)
}
