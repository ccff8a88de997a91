//! Follower best responses for the three schemes.

use crate::model::{weighted_others, ApProfile, Offer, Scheme};

/// What AP `i` sees when it best-responds: its net marginal cost `a = c_i − p`
/// and the others' quality-weighted offload `z = Σ_{j≠i} w_j d_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseContext {
    pub a: f64,
    pub z: f64,
}

impl ResponseContext {
    pub fn new(i: usize, d: &[f64], offer: Offer, profiles: &[ApProfile]) -> Self {
        ResponseContext {
            a: profiles[i].cost - offer.salary_rate,
            z: weighted_others(profiles, d, i),
        }
    }
}

/// Salary-plus-bonus best response for a profile facing context `ctx` and bonus `bonus`.
pub fn spb_response(profile: &ApProfile, ctx: ResponseContext, bonus: f64) -> f64 {
    let (w, t) = (profile.quality, profile.capacity);
    let ResponseContext { a, z } = ctx;
    if a <= 0.0 {
        return t;
    }
    // No one else offloads: the supremum sits at d -> 0+ and is not attained.
    if z <= 0.0 {
        return 0.0;
    }
    if bonus <= a * z / w {
        return 0.0;
    }
    let s = z + w * t;
    if bonus >= a * s * s / (w * z) {
        return t;
    }
    ((bonus * z / (a * w)).sqrt() - z / w).clamp(0.0, t)
}

/// Best response of AP `i` under salary-plus-bonus; `d[i]` itself is ignored.
pub fn best_response_spb(i: usize, d: &[f64], offer: Offer, profiles: &[ApProfile]) -> f64 {
    let ctx = ResponseContext::new(i, d, offer, profiles);
    spb_response(&profiles[i], ctx, offer.bonus)
}

/// Threshold response under salary only: full capacity iff `p >= c_i`.
pub fn best_response_salary(i: usize, offer: Offer, profiles: &[ApProfile]) -> f64 {
    let profile = &profiles[i];
    if offer.salary_rate >= profile.cost {
        profile.capacity
    } else {
        0.0
    }
}

/// Bonus-only best response given the others' weighted offload `z`.
pub fn bonus_response(profile: &ApProfile, z: f64, bonus: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    let w = profile.quality;
    let stationary = (bonus * z / (w * (profile.cost + profile.penalty))).sqrt() - z / w;
    stationary.max(0.0)
}

/// Best response of AP `i` under bonus only; unbounded above, capacity enters via the penalty.
pub fn best_response_bonus(i: usize, d: &[f64], bonus: f64, profiles: &[ApProfile]) -> f64 {
    bonus_response(&profiles[i], weighted_others(profiles, d, i), bonus)
}

/// Dispatches to the scheme's best response.
pub fn best_response(
    scheme: Scheme,
    i: usize,
    d: &[f64],
    offer: Offer,
    profiles: &[ApProfile],
) -> f64 {
    match scheme {
        Scheme::SalaryPlusBonus => best_response_spb(i, d, offer, profiles),
        Scheme::SalaryOnly => best_response_salary(i, offer, profiles),
        Scheme::BonusOnly => best_response_bonus(i, d, offer.bonus, profiles),
    }
}
