//! Domain types and payoff functions shared by every solver.
//!
//! Money and data are plain `f64`s. All functions here are pure.

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One WiFi access point (a follower).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApProfile {
    pub id: usize,
    /// Cost per unit of offloaded data.
    pub cost: f64,
    /// Offloading quality weight, in (0, 1] in the reference setup.
    pub quality: f64,
    /// Data the AP can offload once its home users are served.
    pub capacity: f64,
    /// Per-unit penalty replacing the capacity constraint under the bonus-only scheme.
    pub penalty: f64,
}

impl ApProfile {
    /// Builds a profile whose penalty defaults to `1 / capacity`.
    pub fn new(id: usize, cost: f64, quality: f64, capacity: f64) -> Result<Self> {
        if capacity == 0.0 {
            return Err(Error::InvalidProfile {
                id,
                reason: "a zero-capacity AP needs an explicit penalty".into(),
            });
        }
        Self::with_penalty(id, cost, quality, capacity, 1.0 / capacity)
    }

    pub fn with_penalty(
        id: usize,
        cost: f64,
        quality: f64,
        capacity: f64,
        penalty: f64,
    ) -> Result<Self> {
        let profile = ApProfile {
            id,
            cost,
            quality,
            capacity,
            penalty,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(Error::InvalidProfile {
                id: self.id,
                reason: reason.to_string(),
            })
        };
        if !(self.cost.is_finite() && self.cost > 0.0) {
            return bad("cost must be finite and > 0");
        }
        if !(self.quality.is_finite() && self.quality > 0.0) {
            return bad("quality must be finite and > 0");
        }
        if !(self.capacity.is_finite() && self.capacity >= 0.0) {
            return bad("capacity must be finite and >= 0");
        }
        if !(self.penalty.is_finite() && self.penalty >= 0.0) {
            return bad("penalty must be finite and >= 0");
        }
        Ok(())
    }

    /// `(c_i + penalty_i) / w_i`, the ordering key of the bonus-only equilibrium.
    pub fn bonus_cost_ratio(&self) -> f64 {
        (self.cost + self.penalty) / self.quality
    }
}

/// Checks every profile and that ids match positions.
pub fn validate_profiles(profiles: &[ApProfile]) -> Result<()> {
    for (pos, p) in profiles.iter().enumerate() {
        p.validate()?;
        if p.id != pos {
            return Err(Error::InvalidProfile {
                id: p.id,
                reason: format!("id must equal its position {pos}"),
            });
        }
    }
    Ok(())
}

/// The leader's announced terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Offer {
    /// Salary paid per unit of offloaded data (`p`).
    pub salary_rate: f64,
    /// Bonus pool shared by quality-weighted contribution (`B`).
    pub bonus: f64,
}

impl Offer {
    pub fn new(salary_rate: f64, bonus: f64) -> Result<Self> {
        let offer = Offer { salary_rate, bonus };
        offer.validate()?;
        Ok(offer)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.salary_rate.is_finite() && self.salary_rate >= 0.0) {
            return Err(Error::InvalidOffer(format!(
                "salary rate must be finite and >= 0, got {}",
                self.salary_rate
            )));
        }
        if !(self.bonus.is_finite() && self.bonus >= 0.0) {
            return Err(Error::InvalidOffer(format!(
                "bonus must be finite and >= 0, got {}",
                self.bonus
            )));
        }
        Ok(())
    }

    /// The offer as seen under `scheme`: salary-only drops the bonus, bonus-only drops the salary.
    pub fn restricted_to(self, scheme: Scheme) -> Offer {
        match scheme {
            Scheme::SalaryPlusBonus => self,
            Scheme::SalaryOnly => Offer { bonus: 0.0, ..self },
            Scheme::BonusOnly => Offer {
                salary_rate: 0.0,
                ..self
            },
        }
    }
}

impl fmt::Display for Offer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p={:.4}, B={:.4}", self.salary_rate, self.bonus)
    }
}

/// Per-AP offloaded data, indexed by [`ApProfile::id`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Allocation(pub Vec<f64>);

impl Allocation {
    pub fn zeros(n: usize) -> Self {
        Allocation(vec![0.0; n])
    }

    pub fn capacities(profiles: &[ApProfile]) -> Self {
        Allocation(profiles.iter().map(|p| p.capacity).collect())
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Indices with strictly positive offload.
    pub fn active_set(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &d)| d > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Allocation {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Allocation {
    fn from(d: Vec<f64>) -> Self {
        Allocation(d)
    }
}

/// Leader-side constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MnoParams {
    /// Converts the log offloading gain into money (`λ`).
    pub gain_coefficient: f64,
}

impl MnoParams {
    pub fn new(gain_coefficient: f64) -> Result<Self> {
        if !(gain_coefficient.is_finite() && gain_coefficient > 0.0) {
            return Err(Error::InvalidParams(format!(
                "gain coefficient must be finite and > 0, got {gain_coefficient}"
            )));
        }
        Ok(MnoParams { gain_coefficient })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[serde(alias = "spb")]
    SalaryPlusBonus,
    #[serde(alias = "salary")]
    SalaryOnly,
    #[serde(alias = "bonus")]
    BonusOnly,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [
        Scheme::SalaryPlusBonus,
        Scheme::SalaryOnly,
        Scheme::BonusOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::SalaryPlusBonus => "salary-plus-bonus",
            Scheme::SalaryOnly => "salary-only",
            Scheme::BonusOnly => "bonus-only",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spb" | "salary-plus-bonus" => Ok(Scheme::SalaryPlusBonus),
            "salary" | "salary-only" => Ok(Scheme::SalaryOnly),
            "bonus" | "bonus-only" => Ok(Scheme::BonusOnly),
            other => Err(Error::InvalidOption(format!("unknown scheme `{other}`"))),
        }
    }
}

/// `Σ_j w_j d_j`.
pub fn weighted_total(profiles: &[ApProfile], d: &[f64]) -> f64 {
    profiles.iter().zip(d).map(|(p, &x)| p.quality * x).sum()
}

/// `Σ_{j≠i} w_j d_j`.
pub fn weighted_others(profiles: &[ApProfile], d: &[f64], i: usize) -> f64 {
    profiles
        .iter()
        .zip(d)
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, (p, &x))| p.quality * x)
        .sum()
}

/// Weighted proportional share of the bonus pool for AP `i`.
///
/// Zero for everyone when nobody offloads.
pub fn bonus_share(bonus: f64, profiles: &[ApProfile], d: &[f64], i: usize) -> f64 {
    let own = profiles[i].quality * d[i];
    share_of(bonus, own, weighted_others(profiles, d, i))
}

fn share_of(bonus: f64, own_weighted: f64, others_weighted: f64) -> f64 {
    let denom = own_weighted + others_weighted;
    if denom > 0.0 {
        own_weighted / denom * bonus
    } else {
        0.0
    }
}

/// Utility of a single AP offloading `own` while the others contribute `others_weighted`
/// (`z_i`) to the quality-weighted total.
pub fn ap_utility_given_others(
    profile: &ApProfile,
    own: f64,
    others_weighted: f64,
    offer: Offer,
    scheme: Scheme,
) -> f64 {
    let bonus = share_of(offer.bonus, profile.quality * own, others_weighted);
    match scheme {
        Scheme::SalaryPlusBonus => offer.salary_rate * own + bonus - profile.cost * own,
        Scheme::SalaryOnly => (offer.salary_rate - profile.cost) * own,
        Scheme::BonusOnly => {
            bonus - profile.cost * own - profile.penalty * (own - profile.capacity)
        }
    }
}

/// Utility of AP `i` under `scheme` at profile `d`.
pub fn ap_utility(
    i: usize,
    d: &[f64],
    offer: Offer,
    profiles: &[ApProfile],
    scheme: Scheme,
) -> f64 {
    ap_utility_given_others(
        &profiles[i],
        d[i],
        weighted_others(profiles, d, i),
        offer,
        scheme,
    )
}

/// `ln(1 + Σ d_i)`.
pub fn offloading_gain(d: &[f64]) -> f64 {
    d.iter().sum::<f64>().ln_1p()
}

/// Leader utility `λ ln(1 + Σd) − p Σd − B`, with the unused instrument zeroed per scheme.
pub fn mno_utility(offer: Offer, d: &[f64], params: MnoParams, scheme: Scheme) -> f64 {
    let offer = offer.restricted_to(scheme);
    let total: f64 = d.iter().sum();
    params.gain_coefficient * total.ln_1p() - offer.salary_rate * total - offer.bonus
}
