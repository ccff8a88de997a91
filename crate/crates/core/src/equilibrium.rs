//! Follower subgame equilibria and unilateral-deviation checks.
//!
//! Closed forms exist for homogeneous APs, for two heterogeneous APs, and for the
//! bonus-only scheme. Everything else goes through damped best-response iteration,
//! or through the fast single-pass heuristic used for large populations.

use std::cmp::Ordering;
use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    ap_utility, ap_utility_given_others, validate_profiles, weighted_total, Allocation, ApProfile,
    Offer, Scheme,
};
use crate::response::{best_response, spb_response, ResponseContext};

/// Largest unilateral gain still accepted as "no profitable deviation".
pub const NE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ClosedFormHomogeneous,
    TwoApCases,
    Iterative,
    Algorithm2,
    Algorithm3,
    Threshold,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::ClosedFormHomogeneous => "closed-form-homogeneous",
            Method::TwoApCases => "two-ap-cases",
            Method::Iterative => "iterative",
            Method::Algorithm2 => "algorithm2",
            Method::Algorithm3 => "algorithm3",
            Method::Threshold => "threshold",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub allocation: Allocation,
    /// APs with strictly positive offload.
    pub active_set: Vec<usize>,
    pub per_ap_utility: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub method: Method,
    pub scheme: Scheme,
}

impl EquilibriumReport {
    fn build(
        allocation: Vec<f64>,
        profiles: &[ApProfile],
        offer: Offer,
        scheme: Scheme,
        converged: bool,
        iterations: usize,
        method: Method,
    ) -> Self {
        let offer = offer.restricted_to(scheme);
        let per_ap_utility = (0..profiles.len())
            .map(|i| ap_utility(i, &allocation, offer, profiles, scheme))
            .collect();
        let allocation = Allocation(allocation);
        EquilibriumReport {
            active_set: allocation.active_set(),
            allocation,
            per_ap_utility,
            converged,
            iterations,
            method,
            scheme,
        }
    }
}

fn require_aps(what: &'static str, needed: usize, got: usize) -> Result<()> {
    if got < needed {
        return Err(Error::TooFewAps { what, needed, got });
    }
    Ok(())
}

/// Builds `n` identical profiles with ids `0..n`.
pub fn homogeneous_profiles(
    n: usize,
    cost: f64,
    quality: f64,
    capacity: f64,
) -> Result<Vec<ApProfile>> {
    let penalty = if capacity > 0.0 { 1.0 / capacity } else { 0.0 };
    (0..n)
        .map(|i| ApProfile::with_penalty(i, cost, quality, capacity, penalty))
        .collect()
}

/// Symmetric equilibrium of `n` identical APs.
pub fn ne_homogeneous(
    n: usize,
    cost: f64,
    quality: f64,
    capacity: f64,
    offer: Offer,
) -> Result<EquilibriumReport> {
    require_aps("the homogeneous closed form", 2, n)?;
    offer.validate()?;
    let profiles = homogeneous_profiles(n, cost, quality, capacity)?;
    let d = homogeneous_level(n, cost, capacity, offer);
    Ok(EquilibriumReport::build(
        vec![d; n],
        &profiles,
        offer,
        Scheme::SalaryPlusBonus,
        true,
        0,
        Method::ClosedFormHomogeneous,
    ))
}

/// Common offload level of the homogeneous equilibrium.
pub(crate) fn homogeneous_level(n: usize, cost: f64, capacity: f64, offer: Offer) -> f64 {
    let a = cost - offer.salary_rate;
    if a <= 0.0 {
        return capacity;
    }
    let nf = n as f64;
    if offer.bonus / a < nf * nf * capacity / (nf - 1.0) {
        offer.bonus * (nf - 1.0) / (a * nf * nf)
    } else {
        capacity
    }
}

/// Salary-only equilibrium: every AP with `c_i <= p` offloads at capacity.
pub fn ne_salary_only(profiles: &[ApProfile], salary_rate: f64) -> Result<EquilibriumReport> {
    require_aps("the salary-only scheme", 1, profiles.len())?;
    validate_profiles(profiles)?;
    let offer = Offer::new(salary_rate, 0.0)?;
    let d = (0..profiles.len())
        .map(|i| crate::response::best_response_salary(i, offer, profiles))
        .collect();
    Ok(EquilibriumReport::build(
        d,
        profiles,
        offer,
        Scheme::SalaryOnly,
        true,
        0,
        Method::Threshold,
    ))
}

/// Case-by-case closed form for two heterogeneous APs with distinct costs.
///
/// Errors with [`Error::EqualCosts`] when the costs tie; callers fall back to
/// [`ne_iterative`] in that case.
pub fn ne_two_ap(profiles: &[ApProfile], offer: Offer) -> Result<EquilibriumReport> {
    if profiles.len() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: profiles.len(),
        });
    }
    validate_profiles(profiles)?;
    offer.validate()?;
    if profiles[0].cost == profiles[1].cost {
        return Err(Error::EqualCosts(profiles[0].cost));
    }
    if profiles.iter().any(|p| p.capacity <= 0.0) {
        return Err(Error::InvalidOption(
            "the two-AP closed form needs positive capacities".into(),
        ));
    }
    // Relabel so that AP "1" is the cheaper one.
    let (lo, hi) = if profiles[0].cost < profiles[1].cost {
        (0, 1)
    } else {
        (1, 0)
    };
    let (d_lo, d_hi) = two_ap_closed_form(&profiles[lo], &profiles[hi], offer);
    let mut d = vec![0.0; 2];
    d[lo] = d_lo;
    d[hi] = d_hi;
    Ok(EquilibriumReport::build(
        d,
        profiles,
        offer,
        Scheme::SalaryPlusBonus,
        true,
        0,
        Method::TwoApCases,
    ))
}

fn two_ap_closed_form(ap1: &ApProfile, ap2: &ApProfile, offer: Offer) -> (f64, f64) {
    let (p, b) = (offer.salary_rate, offer.bonus);
    let (w1, w2) = (ap1.quality, ap2.quality);
    let (t1, t2) = (ap1.capacity, ap2.capacity);
    let (a1, a2) = (ap1.cost - p, ap2.cost - p);
    let full = w1 * t1 + w2 * t2;

    // Salary covers both costs.
    if a2 <= 0.0 {
        return (t1, t2);
    }
    // AP1 at capacity, AP2 best-responds to z = w1 T1.
    let one_capped = || {
        let lower = a2 * w1 * t1 / w2;
        let upper = a2 / t1 * full * full / (w1 * w2);
        if b < lower {
            (t1, 0.0)
        } else if b < upper {
            (t1, (b * w1 * t1 / (w2 * a2)).sqrt() - w1 * t1 / w2)
        } else {
            (t1, t2)
        }
    };
    // Salary covers only the cheaper AP.
    if a1 <= 0.0 {
        return one_capped();
    }
    let mix = w1 * a2 + w2 * a1;
    let interior = || {
        let k = b * w1 * w2 / (mix * mix);
        (k * a2, k * a1)
    };
    if a1 * t1 <= a2 * t2 {
        // AP1 reaches its capacity first.
        let first = mix * mix / (w1 * w2) * t1 / a2;
        if b < first {
            interior()
        } else {
            one_capped()
        }
    } else {
        // AP2 reaches its capacity first.
        let first = mix * mix / (w1 * w2) * t2 / a1;
        let upper = a1 / t2 * full * full / (w1 * w2);
        if b < first {
            interior()
        } else if b < upper {
            ((b * w2 * t2 / (w1 * a1)).sqrt() - w2 * t2 / w1, t2)
        } else {
            (t1, t2)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterativeOptions {
    /// Stop once `max_i |BR_i(d) − d_i| < tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial step weight on the best response, in (0, 1].
    pub damping: f64,
    /// Starting allocation; all-capacity when `None`.
    pub initial: Option<Vec<f64>>,
}

impl Default for IterativeOptions {
    fn default() -> Self {
        IterativeOptions {
            tol: 1e-8,
            max_iter: 10_000,
            damping: 0.5,
            initial: None,
        }
    }
}

const ANDERSON_MEMORY: usize = 5;
const MIN_DAMPING: f64 = 1e-3;
const ACCEPT_WINDOW: usize = 10;
/// Sweeps after which a stalled run restarts from the aggregate fixed point.
const STALL_SWEEPS: usize = 1_000;

/// Damped simultaneous best-response iteration `d ← (1−θ)d + θ·BR(d)`, with Anderson
/// mixing over the last few iterates.
///
/// Two APs with very different `a_i/w_i` make the plain map spiral (the Jacobian of the
/// best responses has imaginary eigenvalues) and the plain damped map needs tens of
/// thousands of sweeps; the mixing step removes that. Iterates are projected back onto
/// the feasible box. Non-convergence is reported through `converged = false`, not as an
/// error.
pub fn ne_iterative(
    profiles: &[ApProfile],
    offer: Offer,
    scheme: Scheme,
    opts: &IterativeOptions,
) -> Result<EquilibriumReport> {
    require_aps("the iterative solver", 2, profiles.len())?;
    validate_profiles(profiles)?;
    offer.validate()?;
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidOption(format!(
            "tol must be > 0, got {}",
            opts.tol
        )));
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::InvalidOption(format!(
            "damping must lie in (0, 1], got {}",
            opts.damping
        )));
    }
    let offer = offer.restricted_to(scheme);
    let n = profiles.len();
    let mut d = match &opts.initial {
        Some(init) => {
            if init.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: init.len(),
                });
            }
            init.clone()
        }
        None => Allocation::capacities(profiles).into_inner(),
    };

    let upper: Vec<f64> = profiles
        .iter()
        .map(|p| match scheme {
            Scheme::BonusOnly => f64::INFINITY,
            _ => p.capacity,
        })
        .collect();
    let residual_at = |x: &[f64], step: &mut [f64]| -> f64 {
        let total = weighted_total(profiles, x);
        let mut residual: f64 = 0.0;
        for (i, slot) in step.iter_mut().enumerate() {
            *slot = response_with_total(scheme, i, x, total, offer, profiles) - x[i];
            residual = residual.max(slot.abs());
        }
        residual
    };
    let project = |x: &mut [f64]| {
        for (y, &hi) in x.iter_mut().zip(&upper) {
            *y = y.clamp(0.0, hi);
        }
    };

    let mut theta = opts.damping;
    let mut history = AndersonHistory::new(ANDERSON_MEMORY, n);
    let mut step = vec![0.0; n];
    let mut trial_step = vec![0.0; n];
    let mut residual = residual_at(&d, &mut step);
    // Non-monotone acceptance: the max-norm residual legitimately oscillates while the
    // iterates spiral in, so compare against the worst of the recent residuals.
    let mut recent: VecDeque<f64> = VecDeque::with_capacity(ACCEPT_WINDOW);
    let mut converged = false;
    let mut iterations = 0;
    let mut restarted = false;
    while iterations < opts.max_iter {
        if !restarted && iterations >= STALL_SWEEPS && residual >= opts.tol {
            restarted = true;
            if let Some(start) = aggregate_fixed_point(profiles, offer, scheme) {
                d = start;
                history.clear();
                recent.clear();
                theta = opts.damping;
                residual = residual_at(&d, &mut step);
            }
        }
        if recent.len() == ACCEPT_WINDOW {
            recent.pop_front();
        }
        recent.push_back(residual);
        let reference = recent.iter().copied().fold(0.0, f64::max);
        if residual < opts.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let plain =
            |theta: f64| -> Vec<f64> { d.iter().zip(&step).map(|(x, f)| x + theta * f).collect() };
        let mut mixed = history.next(&d, &step, theta);
        project(&mut mixed);
        // With a bonus on offer, all-zero is a spurious fixed point (nobody else offloads,
        // so nobody starts); the mixed step may not collapse the weighted total faster
        // than a plain step.
        let collapsing = offer.bonus > 0.0
            && weighted_total(profiles, &mixed) < 0.5 * weighted_total(profiles, &plain(theta));
        if !collapsing {
            let r = residual_at(&mixed, &mut trial_step);
            if r < reference {
                d = mixed;
                std::mem::swap(&mut step, &mut trial_step);
                residual = r;
                continue;
            }
        }
        // Mixing did not help: restart it and take a shorter plain step.
        history.clear();
        theta = (theta * 0.5).max(MIN_DAMPING);
        let mut fallback = plain(theta);
        project(&mut fallback);
        let r = residual_at(&fallback, &mut trial_step);
        if r < reference {
            theta = (theta * 1.5).min(opts.damping);
        }
        d = fallback;
        std::mem::swap(&mut step, &mut trial_step);
        residual = r;
    }
    Ok(EquilibriumReport::build(
        d,
        profiles,
        offer,
        scheme,
        converged,
        iterations,
        Method::Iterative,
    ))
}

/// Solves for the weighted total `S` at which every AP's reply is consistent with `S`.
///
/// With `S` fixed, AP `i`'s consistent weighted offload is `S − k_i S²/(B w_i)` clipped to
/// `[0, w_i T_i]` (no upper clip under bonus only), where `k_i` is `c_i − p` or `c_i + λ_i`.
/// The sum over `S` is strictly decreasing, so bisection finds the unique root.
fn aggregate_fixed_point(profiles: &[ApProfile], offer: Offer, scheme: Scheme) -> Option<Vec<f64>> {
    let bonus = offer.bonus;
    let slope = |p: &ApProfile| match scheme {
        Scheme::SalaryPlusBonus => p.cost - offer.salary_rate,
        Scheme::BonusOnly => p.cost + p.penalty,
        Scheme::SalaryOnly => f64::NAN,
    };
    if scheme == Scheme::SalaryOnly || !(bonus > 0.0) {
        return None;
    }
    let reply = |p: &ApProfile, s: f64| -> f64 {
        let k = slope(p);
        let cap = match scheme {
            Scheme::BonusOnly => f64::INFINITY,
            _ => p.quality * p.capacity,
        };
        if k <= 0.0 {
            return cap;
        }
        (s - k * s * s / (bonus * p.quality)).clamp(0.0, cap)
    };
    let excess = |s: f64| profiles.iter().map(|p| reply(p, s)).sum::<f64>() - s;
    let mut hi = match scheme {
        Scheme::BonusOnly => profiles
            .iter()
            .map(|p| bonus * p.quality / slope(p))
            .fold(0.0, f64::max),
        _ => profiles.iter().map(|p| p.quality * p.capacity).sum(),
    };
    if !(hi > 0.0) || !hi.is_finite() {
        return None;
    }
    let mut lo = hi * 1e-300_f64.max(f64::MIN_POSITIVE);
    if excess(lo) <= 0.0 {
        return None;
    }
    if excess(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..2_000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = 0.5 * (lo + hi);
    Some(profiles.iter().map(|p| reply(p, s) / p.quality).collect())
}

/// Anderson mixing (type II) for the fixed-point residual `f(x) = BR(x) − x`.
struct AndersonHistory {
    memory: usize,
    dx: Vec<Vec<f64>>,
    df: Vec<Vec<f64>>,
    last: Option<(Vec<f64>, Vec<f64>)>,
    n: usize,
}

impl AndersonHistory {
    fn new(memory: usize, n: usize) -> Self {
        AndersonHistory {
            memory,
            dx: Vec::new(),
            df: Vec::new(),
            last: None,
            n,
        }
    }

    fn clear(&mut self) {
        self.dx.clear();
        self.df.clear();
        self.last = None;
    }

    fn next(&mut self, x: &[f64], f: &[f64], theta: f64) -> Vec<f64> {
        if let Some((px, pf)) = self.last.take() {
            if self.dx.len() == self.memory {
                self.dx.remove(0);
                self.df.remove(0);
            }
            self.dx
                .push(x.iter().zip(&px).map(|(a, b)| a - b).collect());
            self.df
                .push(f.iter().zip(&pf).map(|(a, b)| a - b).collect());
        }
        self.last = Some((x.to_vec(), f.to_vec()));
        let mut out: Vec<f64> = x.iter().zip(f).map(|(xi, fi)| xi + theta * fi).collect();
        if self.df.is_empty() {
            return out;
        }
        let gamma = least_squares(&self.df, f, self.n);
        for (k, g) in gamma.iter().enumerate() {
            for i in 0..self.n {
                out[i] -= g * (self.dx[k][i] + theta * self.df[k][i]);
            }
        }
        out
    }
}

/// Minimizes `‖f − Σ_k γ_k cols_k‖₂` by modified Gram-Schmidt, dropping near-dependent columns.
fn least_squares(cols: &[Vec<f64>], f: &[f64], n: usize) -> Vec<f64> {
    let m = cols.len();
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut r = vec![vec![0.0; m]; m];
    let mut kept = Vec::with_capacity(m);
    for (k, col) in cols.iter().enumerate() {
        let mut v = col.clone();
        let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (j, qj) in q.iter().enumerate() {
            let dot: f64 = qj.iter().zip(&v).map(|(a, b)| a * b).sum();
            r[j][k] = dot;
            for i in 0..n {
                v[i] -= dot * qj[i];
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-10 * norm0.max(f64::MIN_POSITIVE) {
            continue;
        }
        r[q.len()][k] = norm;
        v.iter_mut().for_each(|x| *x /= norm);
        q.push(v);
        kept.push(k);
    }
    let rank = q.len();
    let rhs: Vec<f64> = q
        .iter()
        .map(|qj| qj.iter().zip(f).map(|(a, b)| a * b).sum())
        .collect();
    let mut gamma = vec![0.0; m];
    for row in (0..rank).rev() {
        let mut acc = rhs[row];
        for later in row + 1..rank {
            acc -= r[row][kept[later]] * gamma[kept[later]];
        }
        gamma[kept[row]] = acc / r[row][kept[row]];
    }
    gamma
}

fn response_with_total(
    scheme: Scheme,
    i: usize,
    d: &[f64],
    weighted_total: f64,
    offer: Offer,
    profiles: &[ApProfile],
) -> f64 {
    let profile = &profiles[i];
    // Cheaper than recomputing Σ_{j≠i} for each i; clamp the cancellation error.
    let z = (weighted_total - profile.quality * d[i]).max(0.0);
    match scheme {
        Scheme::SalaryPlusBonus => spb_response(
            profile,
            ResponseContext {
                a: profile.cost - offer.salary_rate,
                z,
            },
            offer.bonus,
        ),
        Scheme::BonusOnly => crate::response::bonus_response(profile, z, offer.bonus),
        Scheme::SalaryOnly => best_response(scheme, i, d, offer, profiles),
    }
}

fn by_key_then_id(profiles: &[ApProfile], key: impl Fn(&ApProfile) -> f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..profiles.len()).collect();
    order.sort_by(|&i, &j| {
        key(&profiles[i])
            .partial_cmp(&key(&profiles[j]))
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    order
}

/// Greedy admission over `ratios` (already sorted ascending): seed with the first two,
/// then admit while `x_i < (Σ_S x + x_i) / |S|`. Returns the admitted prefix length.
fn admitted_prefix(ratios: &[f64]) -> usize {
    if ratios.len() <= 2 {
        return ratios.len();
    }
    let mut sum = ratios[0] + ratios[1];
    let mut size = 2;
    while size < ratios.len() {
        let x = ratios[size];
        if x < (sum + x) / size as f64 {
            sum += x;
            size += 1;
        } else {
            break;
        }
    }
    size
}

/// Per-unit-bonus allocation coefficient of an active AP:
/// `(|S|−1)/(w_i Σx) · (1 − x_i (|S|−1)/Σx)`. Infinite when `Σx = 0`.
pub(crate) fn share_coefficient(size: usize, ratio_sum: f64, ratio: f64, quality: f64) -> f64 {
    if ratio_sum <= 0.0 {
        return f64::INFINITY;
    }
    let m = (size as f64 - 1.0).max(0.0);
    m / (quality * ratio_sum) * (1.0 - ratio * m / ratio_sum)
}

/// Active set of the bonus-only equilibrium and each member's offload per unit of bonus.
///
/// The set depends only on the `(c_i + λ_i)/w_i` ratios, never on the bonus.
#[derive(Debug, Clone, PartialEq)]
pub struct BonusOnlyStructure {
    /// Active APs in ascending ratio order.
    pub active: Vec<usize>,
    /// `d_i = coefficient_i · B`, aligned with `active`.
    pub coefficients: Vec<f64>,
}

impl BonusOnlyStructure {
    pub fn new(profiles: &[ApProfile]) -> Result<Self> {
        require_aps("the bonus-only equilibrium", 2, profiles.len())?;
        validate_profiles(profiles)?;
        let order = by_key_then_id(profiles, ApProfile::bonus_cost_ratio);
        let ratios: Vec<f64> = order
            .iter()
            .map(|&i| profiles[i].bonus_cost_ratio())
            .collect();
        let size = admitted_prefix(&ratios);
        let sum: f64 = ratios[..size].iter().sum();
        let active = order[..size].to_vec();
        let coefficients = active
            .iter()
            .zip(&ratios)
            .map(|(&i, &x)| share_coefficient(size, sum, x, profiles[i].quality))
            .collect();
        Ok(BonusOnlyStructure {
            active,
            coefficients,
        })
    }

    /// `Σ_{i∈S} H_i`: total offload per unit of bonus.
    pub fn total_coefficient(&self) -> f64 {
        self.coefficients.iter().sum()
    }

    pub fn allocation(&self, n: usize, bonus: f64) -> Vec<f64> {
        let mut d = vec![0.0; n];
        for (&i, &h) in self.active.iter().zip(&self.coefficients) {
            d[i] = h * bonus;
        }
        d
    }
}

/// Bonus-only equilibrium: sort by `(c_i+λ_i)/w_i`, admit greedily, then assign the
/// closed-form offload to every admitted AP.
pub fn ne_bonus_only(profiles: &[ApProfile], bonus: f64) -> Result<EquilibriumReport> {
    let offer = Offer::new(0.0, bonus)?;
    let structure = BonusOnlyStructure::new(profiles)?;
    Ok(EquilibriumReport::build(
        structure.allocation(profiles.len(), bonus),
        profiles,
        offer,
        Scheme::BonusOnly,
        true,
        0,
        Method::Algorithm2,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Algorithm3Options {
    /// After the single pass, recompute the remaining members against the shrunken set
    /// until no further AP exceeds its capacity.
    pub recompute: bool,
}

/// The bonus-independent part of the single-pass heuristic at a fixed salary rate.
#[derive(Debug, Clone)]
pub struct SuboptimalPlan {
    pub(crate) n: usize,
    /// APs with `c_i < p` and their capacities; always at capacity.
    pub(crate) salaried: Vec<(usize, f64)>,
    /// `Σ_{S_T} T_i`.
    pub(crate) salaried_capacity: f64,
    pub(crate) kind: PlanKind,
}

#[derive(Debug, Clone)]
pub(crate) enum PlanKind {
    /// At most one AP is left outside the salaried set.
    Leftover {
        last: Option<(usize, ApProfile)>,
        /// `Σ_{S_T} w_j T_j`.
        z: f64,
        a: f64,
    },
    /// Two or more APs left; `members` is the admitted prefix in `a_i/w_i` order.
    Shared { members: Vec<Member> },
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Member {
    pub index: usize,
    pub ratio: f64,
    pub quality: f64,
    pub capacity: f64,
}

impl SuboptimalPlan {
    pub fn new(profiles: &[ApProfile], salary_rate: f64) -> Self {
        let n = profiles.len();
        let (salaried, rest): (Vec<usize>, Vec<usize>) =
            (0..n).partition(|&i| profiles[i].cost < salary_rate);
        let salaried_capacity = salaried.iter().map(|&i| profiles[i].capacity).sum();
        let salaried_caps = salaried
            .iter()
            .map(|&i| (i, profiles[i].capacity))
            .collect();
        let kind = if rest.len() <= 1 {
            let z = salaried
                .iter()
                .map(|&i| profiles[i].quality * profiles[i].capacity)
                .sum();
            let last = rest.first().map(|&i| (i, profiles[i]));
            let a = last.map_or(0.0, |(_, p)| p.cost - salary_rate);
            PlanKind::Leftover { last, z, a }
        } else {
            let ratio = |i: usize| (profiles[i].cost - salary_rate) / profiles[i].quality;
            let mut order = rest;
            order.sort_by(|&i, &j| {
                ratio(i)
                    .partial_cmp(&ratio(j))
                    .unwrap_or(Ordering::Equal)
                    .then(i.cmp(&j))
            });
            let ratios: Vec<f64> = order.iter().map(|&i| ratio(i)).collect();
            let size = admitted_prefix(&ratios);
            let members = order[..size]
                .iter()
                .zip(&ratios)
                .map(|(&i, &r)| Member {
                    index: i,
                    ratio: r,
                    quality: profiles[i].quality,
                    capacity: profiles[i].capacity,
                })
                .collect();
            PlanKind::Shared { members }
        };
        SuboptimalPlan {
            n,
            salaried: salaried_caps,
            salaried_capacity,
            kind,
        }
    }

    /// The heuristic's allocation at bonus `bonus`.
    pub fn allocation(&self, bonus: f64, opts: Algorithm3Options) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for &(i, capacity) in &self.salaried {
            d[i] = capacity;
        }
        self.fill(bonus, opts, |i, x| d[i] = x);
        d
    }

    fn fill(&self, bonus: f64, opts: Algorithm3Options, mut set: impl FnMut(usize, f64)) {
        match &self.kind {
            PlanKind::Leftover { last, z, a } => {
                if let Some((i, profile)) = last {
                    set(
                        *i,
                        spb_response(profile, ResponseContext { a: *a, z: *z }, bonus),
                    );
                }
            }
            PlanKind::Shared { members } => {
                for (m, state) in members.iter().zip(self.shared_states(bonus, opts, false)) {
                    let value = if state.capped {
                        m.capacity
                    } else {
                        (bonus * state.coefficient).max(0.0)
                    };
                    set(m.index, value);
                }
            }
        }
    }

    /// Cap status and bonus coefficient of each shared member at `bonus`.
    ///
    /// With `right_limit`, a member sitting exactly at its cap counts as capped when any
    /// larger bonus would push it over, so the states hold on an interval just above `bonus`.
    pub(crate) fn shared_states(
        &self,
        bonus: f64,
        opts: Algorithm3Options,
        right_limit: bool,
    ) -> Vec<MemberState> {
        let members = match &self.kind {
            PlanKind::Shared { members } => members,
            PlanKind::Leftover { .. } => return Vec::new(),
        };
        let exceeds = |coefficient: f64, capacity: f64| {
            let x = bonus * coefficient;
            if right_limit {
                coefficient == f64::INFINITY || x > capacity || (x == capacity && coefficient > 0.0)
            } else {
                x > capacity
            }
        };
        let mut states = vec![
            MemberState {
                capped: false,
                coefficient: 0.0,
            };
            members.len()
        ];
        let mut size = members.len();
        let mut sum: f64 = members.iter().map(|m| m.ratio).sum();
        let mut passes = 0;
        loop {
            let mut moved = false;
            for (state, m) in states.iter_mut().zip(members) {
                if state.capped {
                    continue;
                }
                let coefficient = share_coefficient(size, sum, m.ratio, m.quality);
                state.coefficient = coefficient;
                if exceeds(coefficient, m.capacity) {
                    state.capped = true;
                    size -= 1;
                    sum -= m.ratio;
                    moved = true;
                }
            }
            passes += 1;
            if !opts.recompute || (passes > 1 && !moved) {
                break;
            }
        }
        states
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct MemberState {
    pub capped: bool,
    pub coefficient: f64,
}

/// Single-pass suboptimal equilibrium for large heterogeneous populations.
pub fn ne_spb_suboptimal(
    profiles: &[ApProfile],
    offer: Offer,
    opts: Algorithm3Options,
) -> Result<EquilibriumReport> {
    require_aps("the suboptimal heuristic", 1, profiles.len())?;
    validate_profiles(profiles)?;
    offer.validate()?;
    let plan = SuboptimalPlan::new(profiles, offer.salary_rate);
    let d = plan.allocation(offer.bonus, opts);
    Ok(EquilibriumReport::build(
        d,
        profiles,
        offer,
        Scheme::SalaryPlusBonus,
        true,
        0,
        Method::Algorithm3,
    ))
}

/// Outcome of a unilateral-deviation scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub is_ne: bool,
    /// Largest utility improvement found (0 when none improves).
    pub max_gain: f64,
    /// AP achieving `max_gain`, if it is positive.
    pub worst_ap: Option<usize>,
    pub gains: Vec<f64>,
}

/// Scans each AP's strategy over a uniform grid of its feasible interval with the
/// others held fixed. An allocation passes when no deviation gains more than
/// [`NE_TOLERANCE`].
///
/// Under bonus only the interval is `[0, max(d_i, B/(c_i+λ_i))]`: beyond `B/(c_i+λ_i)`
/// the AP earns less than by staying out.
pub fn verify_ne(
    allocation: &[f64],
    offer: Offer,
    profiles: &[ApProfile],
    scheme: Scheme,
    grid_points: usize,
) -> Result<Verification> {
    if grid_points < 100 {
        return Err(Error::InvalidOption(format!(
            "grid_points must be >= 100, got {grid_points}"
        )));
    }
    if allocation.len() != profiles.len() {
        return Err(Error::DimensionMismatch {
            expected: profiles.len(),
            got: allocation.len(),
        });
    }
    validate_profiles(profiles)?;
    offer.validate()?;
    let offer = offer.restricted_to(scheme);
    let total = weighted_total(profiles, allocation);
    let gains: Vec<f64> = profiles
        .iter()
        .enumerate()
        .map(|(i, profile)| {
            let own = allocation[i];
            let z = (total - profile.quality * own).max(0.0);
            let current = ap_utility_given_others(profile, own, z, offer, scheme);
            let upper = match scheme {
                Scheme::BonusOnly => own.max(offer.bonus / (profile.cost + profile.penalty)),
                _ => profile.capacity,
            };
            (0..=grid_points)
                .map(|k| upper * k as f64 / grid_points as f64)
                .map(|x| ap_utility_given_others(profile, x, z, offer, scheme) - current)
                .fold(0.0, f64::max)
        })
        .collect();
    let (worst, max_gain) =
        gains
            .iter()
            .copied()
            .enumerate()
            .fold(
                (None, 0.0),
                |(wi, wg), (i, g)| if g > wg { (Some(i), g) } else { (wi, wg) },
            );
    Ok(Verification {
        is_ne: max_gain <= NE_TOLERANCE,
        max_gain,
        worst_ap: worst,
        gains,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn aps(spec: &[(f64, f64, f64)]) -> Vec<ApProfile> {
        spec.iter()
            .enumerate()
            .map(|(i, &(c, w, t))| ApProfile::new(i, c, w, t).unwrap())
            .collect()
    }

    fn offer(p: f64, b: f64) -> Offer {
        Offer::new(p, b).unwrap()
    }

    #[test]
    fn homogeneous_examples() {
        let r = ne_homogeneous(3, 2.0, 0.5, 4.0, offer(2.5, 1.0)).unwrap();
        assert_eq!(r.allocation.0, vec![4.0; 3]);

        let r = ne_homogeneous(2, 2.0, 0.5, 5.0, offer(1.0, 4.0)).unwrap();
        assert_eq!(r.allocation.0, vec![1.0, 1.0]);
        assert!(r.converged);
        assert_eq!(r.method, Method::ClosedFormHomogeneous);

        let r = ne_homogeneous(2, 2.0, 0.5, 5.0, offer(1.0, 40.0)).unwrap();
        assert_eq!(r.allocation.0, vec![5.0, 5.0]);

        assert!(matches!(
            ne_homogeneous(1, 2.0, 0.5, 5.0, offer(1.0, 4.0)),
            Err(Error::TooFewAps { .. })
        ));
    }

    #[test]
    fn homogeneous_passes_deviation_check() {
        let r = ne_homogeneous(4, 2.0, 0.6, 5.0, offer(0.5, 7.0)).unwrap();
        let profiles = homogeneous_profiles(4, 2.0, 0.6, 5.0).unwrap();
        let v = verify_ne(
            &r.allocation,
            offer(0.5, 7.0),
            &profiles,
            Scheme::SalaryPlusBonus,
            1000,
        )
        .unwrap();
        assert!(v.is_ne, "{v:?}");
    }

    #[test]
    fn two_ap_case_one() {
        let profiles = aps(&[(2.0, 0.2, 5.0), (3.0, 0.3, 5.0)]);
        let r = ne_two_ap(&profiles, offer(3.0, 1.0)).unwrap();
        assert_eq!(r.allocation.0, vec![5.0, 5.0]);
    }

    #[test]
    fn two_ap_case_two_low_bonus() {
        // a2 w1 T1 / w2 = 1 * 0.2 * 5 / 0.3 = 3.33
        let profiles = aps(&[(2.0, 0.2, 5.0), (3.0, 0.3, 5.0)]);
        let r = ne_two_ap(&profiles, offer(2.0, 3.0)).unwrap();
        assert_eq!(r.allocation.0, vec![5.0, 0.0]);
        assert_eq!(r.active_set, vec![0]);
    }

    #[test]
    fn two_ap_case_three_interior() {
        // c - p = (1, 2), w = (0.2, 0.3), B = 10.
        let profiles = aps(&[(1.0, 0.2, 5.0), (2.0, 0.3, 5.0)]);
        let r = ne_two_ap(&profiles, offer(0.0, 10.0)).unwrap();
        assert_relative_eq!(r.allocation[0], 10.0 * 0.06 * 2.0 / 0.49, epsilon = 1e-12);
        assert_relative_eq!(r.allocation[1], 10.0 * 0.06 * 1.0 / 0.49, epsilon = 1e-12);
        assert_relative_eq!(r.allocation[0], 2.449, epsilon = 1e-3);
        assert_relative_eq!(r.allocation[1], 1.224, epsilon = 1e-3);
        // Region A1 upper bound: 0.49 / 0.06 * 5 / 2 = 20.4 > 10.
        for i in 0..2 {
            let br =
                crate::response::best_response_spb(i, &r.allocation, offer(0.0, 10.0), &profiles);
            assert_relative_eq!(br, r.allocation[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn two_ap_relabels_and_rejects_ties() {
        let profiles = aps(&[(2.0, 0.3, 5.0), (1.0, 0.2, 5.0)]);
        let r = ne_two_ap(&profiles, offer(0.0, 10.0)).unwrap();
        assert_relative_eq!(r.allocation[1], 10.0 * 0.06 * 2.0 / 0.49, epsilon = 1e-12);

        let tied = aps(&[(2.0, 0.3, 5.0), (2.0, 0.2, 5.0)]);
        assert!(matches!(
            ne_two_ap(&tied, offer(0.0, 1.0)),
            Err(Error::EqualCosts(_))
        ));
        assert!(ne_two_ap(&tied[..1], offer(0.0, 1.0)).is_err());
    }

    #[test]
    fn iterative_matches_homogeneous() {
        for n in [2, 3, 10, 40] {
            let o = offer(0.5, 6.0);
            let expected = ne_homogeneous(n, 2.0, 0.4, 3.0, o).unwrap();
            let profiles = homogeneous_profiles(n, 2.0, 0.4, 3.0).unwrap();
            let r = ne_iterative(
                &profiles,
                o,
                Scheme::SalaryPlusBonus,
                &IterativeOptions::default(),
            )
            .unwrap();
            assert!(r.converged, "n={n} did not converge");
            for (x, y) in r.allocation.iter().zip(expected.allocation.iter()) {
                assert!((x - y).abs() < 1e-7, "n={n}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn iterative_matches_two_ap() {
        let profiles = aps(&[(1.0, 0.2, 5.0), (2.0, 0.3, 5.0)]);
        for b in [0.5, 5.0, 10.0, 25.0, 60.0, 200.0] {
            let o = offer(0.0, b);
            let closed = ne_two_ap(&profiles, o).unwrap();
            let it = ne_iterative(
                &profiles,
                o,
                Scheme::SalaryPlusBonus,
                &IterativeOptions::default(),
            )
            .unwrap();
            assert!(it.converged);
            for (x, y) in it.allocation.iter().zip(closed.allocation.iter()) {
                assert!((x - y).abs() < 1e-6, "B={b}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn iterative_high_salary_is_one_sweep() {
        let profiles = aps(&[(1.0, 0.2, 5.0), (2.0, 0.3, 4.0), (3.0, 0.5, 2.0)]);
        let r = ne_iterative(
            &profiles,
            offer(3.0, 2.0),
            Scheme::SalaryPlusBonus,
            &IterativeOptions::default(),
        )
        .unwrap();
        assert!(r.converged);
        assert!(r.iterations <= 1);
        assert_eq!(r.allocation.0, vec![5.0, 4.0, 2.0]);
    }

    #[test]
    fn iterative_rejects_bad_options() {
        let profiles = aps(&[(1.0, 0.2, 5.0), (2.0, 0.3, 5.0)]);
        let bad = IterativeOptions {
            damping: 0.0,
            ..Default::default()
        };
        assert!(ne_iterative(&profiles, offer(0.0, 1.0), Scheme::SalaryPlusBonus, &bad).is_err());
        let bad = IterativeOptions {
            initial: Some(vec![1.0]),
            ..Default::default()
        };
        assert!(ne_iterative(&profiles, offer(0.0, 1.0), Scheme::SalaryPlusBonus, &bad).is_err());
    }

    #[test]
    fn bonus_only_examples() {
        let twins = vec![
            ApProfile::with_penalty(0, 0.5, 1.0, 2.0, 0.5).unwrap(),
            ApProfile::with_penalty(1, 0.5, 1.0, 2.0, 0.5).unwrap(),
        ];
        let r = ne_bonus_only(&twins, 4.0).unwrap();
        assert_relative_eq!(r.allocation[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(r.allocation[1], 1.0, epsilon = 1e-12);
        let v = verify_ne(
            &r.allocation,
            offer(0.0, 4.0),
            &twins,
            Scheme::BonusOnly,
            1000,
        )
        .unwrap();
        assert!(v.is_ne);

        let mut three = twins.clone();
        three.push(ApProfile::with_penalty(2, 50.0, 0.1, 2.0, 0.5).unwrap());
        let r = ne_bonus_only(&three, 4.0).unwrap();
        assert_eq!(r.allocation[2], 0.0);
        assert_eq!(r.active_set, vec![0, 1]);

        let r2 = ne_bonus_only(&three, 8.0).unwrap();
        assert_eq!(r2.active_set, r.active_set);
        for (x, y) in r2.allocation.iter().zip(r.allocation.iter()) {
            assert_relative_eq!(*x, 2.0 * y, epsilon = 1e-12);
        }
        assert!(ne_bonus_only(&twins[..1], 1.0).is_err());
    }

    #[test]
    fn algorithm3_high_salary_caps_everyone() {
        let profiles = aps(&[(1.0, 0.2, 5.0), (2.0, 0.3, 4.0), (3.0, 0.5, 2.0)]);
        let r =
            ne_spb_suboptimal(&profiles, offer(3.5, 1.0), Algorithm3Options::default()).unwrap();
        assert_eq!(r.allocation.0, vec![5.0, 4.0, 2.0]);
    }

    #[test]
    fn algorithm3_homogeneous_interior() {
        let n = 5;
        let profiles = homogeneous_profiles(n, 2.0, 0.5, 5.0).unwrap();
        let o = offer(0.5, 3.0);
        let r = ne_spb_suboptimal(&profiles, o, Algorithm3Options::default()).unwrap();
        let expected = ne_homogeneous(n, 2.0, 0.5, 5.0, o).unwrap();
        for (x, y) in r.allocation.iter().zip(expected.allocation.iter()) {
            assert_relative_eq!(*x, *y, epsilon = 1e-12);
        }
    }

    #[test]
    fn algorithm3_leftover_matches_case_two() {
        let profiles = aps(&[(2.0, 0.2, 5.0), (3.0, 0.3, 5.0)]);
        let o = offer(2.5, 8.0);
        let r = ne_spb_suboptimal(&profiles, o, Algorithm3Options::default()).unwrap();
        let a2: f64 = 0.5;
        let expected = (8.0 * 0.2 * 5.0 / (0.3 * a2)).sqrt() - 0.2 * 5.0 / 0.3;
        assert_eq!(r.allocation[0], 5.0);
        assert_relative_eq!(r.allocation[1], expected.clamp(0.0, 5.0), epsilon = 1e-12);
        let closed = ne_two_ap(&profiles, o).unwrap();
        assert_relative_eq!(r.allocation[1], closed.allocation[1], epsilon = 1e-12);
    }

    #[test]
    fn algorithm3_single_ap() {
        let lone = aps(&[(2.0, 0.5, 3.0)]);
        let r = ne_spb_suboptimal(&lone, offer(1.0, 5.0), Algorithm3Options::default()).unwrap();
        assert_eq!(r.allocation.0, vec![0.0]);
        let r = ne_spb_suboptimal(&lone, offer(2.0, 5.0), Algorithm3Options::default()).unwrap();
        assert_eq!(r.allocation.0, vec![3.0]);
    }

    #[test]
    fn algorithm3_recompute_only_changes_capped_runs() {
        let profiles = aps(&[
            (1.0, 0.9, 0.2),
            (1.1, 0.8, 5.0),
            (1.2, 0.7, 5.0),
            (1.3, 0.6, 5.0),
        ]);
        let o = offer(0.5, 3.0);
        let single = ne_spb_suboptimal(&profiles, o, Algorithm3Options::default()).unwrap();
        let again = ne_spb_suboptimal(&profiles, o, Algorithm3Options { recompute: true }).unwrap();
        assert_eq!(single.allocation[0], 0.2);
        assert_eq!(again.allocation[0], 0.2);
        // Later members saw the shrunken set in both modes.
        assert!(single.allocation.iter().all(|x| x.is_finite() && *x >= 0.0));
        assert!(again.allocation.iter().all(|x| x.is_finite() && *x >= 0.0));
    }

    #[test]
    fn verify_flags_perturbations() {
        let profiles = aps(&[(1.0, 0.2, 5.0), (2.0, 0.3, 5.0)]);
        let o = offer(0.0, 10.0);
        let ne = ne_two_ap(&profiles, o).unwrap();
        let v = verify_ne(&ne.allocation, o, &profiles, Scheme::SalaryPlusBonus, 1000).unwrap();
        assert!(v.is_ne);
        let mut bumped = ne.allocation.0.clone();
        bumped[0] *= 1.1;
        let v = verify_ne(&bumped, o, &profiles, Scheme::SalaryPlusBonus, 1000).unwrap();
        assert!(!v.is_ne);
        assert!(v.max_gain > 0.0);
        assert_eq!(v.worst_ap, Some(0));
    }

    #[test]
    fn verify_capacity_profile_under_high_salary() {
        let profiles = aps(&[(1.0, 0.2, 5.0), (2.0, 0.3, 4.0), (3.0, 0.5, 2.0)]);
        let v = verify_ne(
            &[5.0, 4.0, 2.0],
            offer(3.0, 5.0),
            &profiles,
            Scheme::SalaryPlusBonus,
            500,
        )
        .unwrap();
        assert!(v.is_ne);
        assert_eq!(v.max_gain, 0.0);
    }

    #[test]
    fn verify_rejects_all_zero_under_bonus() {
        let profiles = aps(&[(1.0, 0.2, 5.0), (2.0, 0.3, 4.0)]);
        let v = verify_ne(
            &[0.0, 0.0],
            offer(0.0, 3.0),
            &profiles,
            Scheme::BonusOnly,
            100,
        )
        .unwrap();
        assert!(!v.is_ne);
        assert!(v.max_gain > 2.0);
        assert!(verify_ne(&[0.0], offer(0.0, 3.0), &profiles, Scheme::BonusOnly, 100).is_err());
        assert!(verify_ne(
            &[0.0, 0.0],
            offer(0.0, 3.0),
            &profiles,
            Scheme::BonusOnly,
            10
        )
        .is_err());
    }
}
