//! The operator's side: choosing the salary rate and bonus pool under each scheme.

use std::cmp::Ordering;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{
    homogeneous_level, ne_bonus_only, ne_homogeneous, ne_iterative, ne_salary_only,
    ne_spb_suboptimal, ne_two_ap, Algorithm3Options, BonusOnlyStructure, EquilibriumReport,
    IterativeOptions, PlanKind, SuboptimalPlan,
};
use crate::error::{Error, Result};
use crate::model::{mno_utility, validate_profiles, ApProfile, MnoParams, Offer, Scheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceStatus {
    Evaluated,
    /// The follower solver did not converge at this offer.
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub offer: Offer,
    pub utility: Option<f64>,
    pub status: TraceStatus,
}

impl TracePoint {
    fn evaluated(offer: Offer, utility: f64) -> Self {
        TracePoint {
            offer,
            utility: Some(utility),
            status: TraceStatus::Evaluated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnoSolution {
    pub offer: Offer,
    pub utility: f64,
    pub follower_report: EquilibriumReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_trace: Option<Vec<TracePoint>>,
}

impl MnoSolution {
    fn new(
        offer: Offer,
        report: EquilibriumReport,
        params: MnoParams,
        trace: Option<Vec<TracePoint>>,
    ) -> Self {
        MnoSolution {
            utility: mno_utility(offer, &report.allocation, params, report.scheme),
            offer: offer.restricted_to(report.scheme),
            follower_report: report,
            search_trace: trace,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    salary_rate: f64,
    bonus: f64,
    utility: f64,
}

impl Candidate {
    fn offer(&self) -> Offer {
        Offer {
            salary_rate: self.salary_rate,
            bonus: self.bonus,
        }
    }

    /// Higher utility wins; exact ties go to the smaller `(p, B)`.
    fn beats(&self, other: &Candidate) -> bool {
        match self.utility.partial_cmp(&other.utility) {
            Some(Ordering::Greater) => true,
            Some(Ordering::Equal) => {
                (self.salary_rate, self.bonus) < (other.salary_rate, other.bonus)
            }
            _ => other.utility.is_nan() && !self.utility.is_nan(),
        }
    }
}

fn best_of(candidates: impl IntoIterator<Item = Candidate>) -> Option<Candidate> {
    candidates.into_iter().fold(None, |best, c| match best {
        Some(b) if !c.beats(&b) => Some(b),
        _ => Some(c),
    })
}

fn linspace(lo: f64, hi: f64, steps: usize) -> impl Iterator<Item = f64> {
    let last = steps.saturating_sub(1).max(1) as f64;
    (0..steps).map(move |k| {
        if k + 1 == steps {
            hi
        } else {
            lo + (hi - lo) * k as f64 / last
        }
    })
}

fn require_steps(name: &str, steps: usize) -> Result<()> {
    if steps < 2 {
        return Err(Error::InvalidOption(format!(
            "{name} must be >= 2, got {steps}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SalaryOnlyOptions {
    /// Stop at the first candidate price with negative objective.
    pub early_stop: bool,
}

impl Default for SalaryOnlyOptions {
    fn default() -> Self {
        SalaryOnlyOptions { early_stop: true }
    }
}

/// Optimal salary rate when no bonus is offered.
///
/// Only `p = 0` and `p = c_i` can be optimal: between two costs the same APs offload and
/// a lower price is strictly better. Candidates are scanned in ascending cost order. Once
/// the objective turns negative it stays negative, since `ln(1+D)/D` falls as more data
/// arrives at a higher price.
pub fn optimal_price_salary_only(
    profiles: &[ApProfile],
    params: MnoParams,
    opts: SalaryOnlyOptions,
) -> Result<MnoSolution> {
    validate_profiles(profiles)?;
    if profiles.is_empty() {
        return Err(Error::TooFewAps {
            what: "the salary-only scheme",
            needed: 1,
            got: 0,
        });
    }
    let lambda = params.gain_coefficient;
    let objective = |p: f64, total: f64| lambda * total.ln_1p() - p * total;

    let mut order: Vec<&ApProfile> = profiles.iter().collect();
    order.sort_by(|a, b| a.cost.total_cmp(&b.cost).then(a.id.cmp(&b.id)));

    let free: f64 = order
        .iter()
        .filter(|ap| ap.cost <= 0.0)
        .map(|ap| ap.capacity)
        .sum();
    let mut trace = Vec::with_capacity(order.len() + 1);
    let mut best = Candidate {
        salary_rate: 0.0,
        bonus: 0.0,
        utility: objective(0.0, free),
    };
    trace.push(TracePoint::evaluated(best.offer(), best.utility));

    let mut total = 0.0;
    let mut k = 0;
    while k < order.len() {
        let price = order[k].cost;
        while k < order.len() && order[k].cost == price {
            total += order[k].capacity;
            k += 1;
        }
        let candidate = Candidate {
            salary_rate: price,
            bonus: 0.0,
            utility: objective(price, total),
        };
        trace.push(TracePoint::evaluated(candidate.offer(), candidate.utility));
        if candidate.beats(&best) {
            best = candidate;
        }
        if opts.early_stop && candidate.utility < 0.0 {
            debug!("salary-only search stopped at p = {price}");
            break;
        }
    }
    let report = ne_salary_only(profiles, best.salary_rate)?;
    Ok(MnoSolution::new(best.offer(), report, params, Some(trace)))
}

/// Leader objective for `n` identical APs at `(p, B)`.
fn homogeneous_objective(n: usize, cost: f64, capacity: f64, offer: Offer, lambda: f64) -> f64 {
    let total = n as f64 * homogeneous_level(n, cost, capacity, offer);
    lambda * total.ln_1p() - offer.salary_rate * total - offer.bonus
}

/// Optimal bonus for `n` identical APs at a salary rate below their cost.
///
/// Below the cap `B̃ = a n²T/(n−1)` the offload is linear in `B` and the objective is
/// concave, with stationary point `λ/(1 + p(n−1)/(an)) − an/(n−1)`; above it the APs
/// are saturated and extra bonus is wasted. The two candidates are compared directly.
pub fn optimal_bonus_homogeneous(
    salary_rate: f64,
    n: usize,
    cost: f64,
    quality: f64,
    capacity: f64,
    params: MnoParams,
) -> Result<f64> {
    if n < 2 {
        return Err(Error::TooFewAps {
            what: "the homogeneous bonus",
            needed: 2,
            got: n,
        });
    }
    crate::equilibrium::homogeneous_profiles(1, cost, quality, capacity)?;
    Offer::new(salary_rate, 0.0)?;
    if salary_rate >= cost {
        return Err(Error::SalaryNotBelowCost { salary_rate, cost });
    }
    let lambda = params.gain_coefficient;
    let nf = n as f64;
    let a = cost - salary_rate;
    let cap = a * nf * nf * capacity / (nf - 1.0);
    let per_bonus = (nf - 1.0) / (a * nf);
    let interior = (lambda / (1.0 + salary_rate * per_bonus) - 1.0 / per_bonus).clamp(0.0, cap);

    let value =
        |bonus: f64| homogeneous_objective(n, cost, capacity, Offer { salary_rate, bonus }, lambda);
    if value(interior) >= value(cap) {
        Ok(interior)
    } else {
        Ok(cap)
    }
}

/// Searches the salary rate over `[0, c]` for identical APs, pairing each rate with its
/// optimal bonus; `p = c, B = 0` is the endpoint. One refinement pass follows.
pub fn optimal_homogeneous(
    n: usize,
    cost: f64,
    quality: f64,
    capacity: f64,
    params: MnoParams,
    p_grid: usize,
) -> Result<MnoSolution> {
    require_steps("p_grid", p_grid)?;
    let lambda = params.gain_coefficient;
    let evaluate = |p: f64| -> Result<Candidate> {
        let bonus = if p < cost {
            optimal_bonus_homogeneous(p, n, cost, quality, capacity, params)?
        } else {
            0.0
        };
        let offer = Offer::new(p, bonus)?;
        Ok(Candidate {
            salary_rate: p,
            bonus,
            utility: homogeneous_objective(n, cost, capacity, offer, lambda),
        })
    };

    let mut trace = Vec::new();
    let mut candidates = Vec::new();
    for p in linspace(0.0, cost, p_grid) {
        let c = evaluate(p)?;
        trace.push(TracePoint::evaluated(c.offer(), c.utility));
        candidates.push(c);
    }
    let coarse = best_of(candidates.iter().copied()).expect("grid is nonempty");
    let step = cost / (p_grid - 1) as f64;
    if step > 0.0 {
        let lo = (coarse.salary_rate - step).max(0.0);
        let hi = (coarse.salary_rate + step).min(cost);
        for p in linspace(lo, hi, p_grid) {
            let c = evaluate(p)?;
            trace.push(TracePoint::evaluated(c.offer(), c.utility));
            candidates.push(c);
        }
    }
    let best = best_of(candidates).expect("grid is nonempty");
    let report = ne_homogeneous(n, cost, quality, capacity, best.offer())?;
    Ok(MnoSolution::new(best.offer(), report, params, Some(trace)))
}

/// Follower solver used inside the leader's grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeSolver {
    /// Two-AP closed form; tied costs fall back to the iterative solver.
    TwoApCases,
    Iterative,
    Algorithm3,
}

impl NeSolver {
    pub fn name(self) -> &'static str {
        match self {
            NeSolver::TwoApCases => "two-ap-cases",
            NeSolver::Iterative => "iterative",
            NeSolver::Algorithm3 => "algorithm3",
        }
    }

    pub fn solve(
        self,
        profiles: &[ApProfile],
        offer: Offer,
        iterative: &IterativeOptions,
    ) -> Result<EquilibriumReport> {
        match self {
            NeSolver::TwoApCases => match ne_two_ap(profiles, offer) {
                Err(Error::EqualCosts(_)) => {
                    ne_iterative(profiles, offer, Scheme::SalaryPlusBonus, iterative)
                }
                other => other,
            },
            NeSolver::Iterative => {
                ne_iterative(profiles, offer, Scheme::SalaryPlusBonus, iterative)
            }
            NeSolver::Algorithm3 => {
                ne_spb_suboptimal(profiles, offer, Algorithm3Options::default())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOptions {
    pub p_steps: usize,
    pub b_steps: usize,
    pub solver: NeSolver,
    /// Rerun the grid on the cells around the incumbent.
    pub refine: bool,
    pub iterative: IterativeOptions,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            p_steps: 101,
            b_steps: 101,
            solver: NeSolver::Iterative,
            refine: true,
            iterative: IterativeOptions::default(),
        }
    }
}

/// Bonus beyond which every AP is at capacity at salary rate `p`:
/// `max_i a_i⁺ (Σ_j w_j T_j)² / (w_i Σ_{j≠i} w_j T_j)`.
pub fn bonus_bound(profiles: &[ApProfile], salary_rate: f64) -> f64 {
    let full: f64 = profiles.iter().map(|ap| ap.quality * ap.capacity).sum();
    profiles
        .iter()
        .enumerate()
        .map(|(i, ap)| {
            let a = (ap.cost - salary_rate).max(0.0);
            let others: f64 = profiles
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, o)| o.quality * o.capacity)
                .sum();
            if a > 0.0 && others > 0.0 {
                a / (ap.quality * others) * full * full
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

/// Two-dimensional grid search over `p ∈ [0, max_i c_i]` and `B ∈ [0, B_max(p)]`.
///
/// The leader objective is neither convex nor concave in `(p, B)`, so this only finds the
/// best grid point. Cells where the follower solver fails to converge are recorded as
/// skipped and excluded.
pub fn grid_search_spb(
    profiles: &[ApProfile],
    params: MnoParams,
    opts: &GridOptions,
) -> Result<MnoSolution> {
    require_steps("p_steps", opts.p_steps)?;
    require_steps("b_steps", opts.b_steps)?;
    validate_profiles(profiles)?;
    if opts.solver == NeSolver::TwoApCases && profiles.len() != 2 {
        return Err(Error::InvalidOption(format!(
            "the two-AP solver needs exactly 2 access points, got {}",
            profiles.len()
        )));
    }
    let p_max = profiles.iter().map(|ap| ap.cost).fold(0.0, f64::max);

    let mut offers = Vec::with_capacity(opts.p_steps * opts.b_steps);
    for p in linspace(0.0, p_max, opts.p_steps) {
        let b_max = bonus_bound(profiles, p);
        let steps = if b_max > 0.0 { opts.b_steps } else { 1 };
        offers.extend(linspace(0.0, b_max, steps).map(|b| Offer {
            salary_rate: p,
            bonus: b,
        }));
    }
    let mut trace = evaluate_cells(profiles, params, opts, &offers)?;
    let mut best = best_in_trace(&trace);

    if opts.refine {
        if let Some(coarse) = best {
            let p_step = p_max / (opts.p_steps - 1) as f64;
            let b_step = bonus_bound(profiles, coarse.salary_rate) / (opts.b_steps - 1) as f64;
            let p_lo = (coarse.salary_rate - p_step).max(0.0);
            let p_hi = (coarse.salary_rate + p_step).min(p_max);
            let b_lo = (coarse.bonus - b_step).max(0.0);
            let b_hi = coarse.bonus + b_step;
            let p_steps = if p_hi > p_lo { opts.p_steps } else { 1 };
            let b_steps = if b_hi > b_lo { opts.b_steps } else { 1 };
            let mut fine = Vec::with_capacity(p_steps * b_steps);
            for p in linspace(p_lo, p_hi, p_steps) {
                fine.extend(linspace(b_lo, b_hi, b_steps).map(|b| Offer {
                    salary_rate: p,
                    bonus: b,
                }));
            }
            trace.extend(evaluate_cells(profiles, params, opts, &fine)?);
            best = best_in_trace(&trace);
        }
    }

    let skipped = trace
        .iter()
        .filter(|t| t.status == TraceStatus::Skipped)
        .count();
    if skipped > 0 {
        warn!(
            "{skipped} of {} grid cells skipped (no convergence)",
            trace.len()
        );
    }
    let best = best.ok_or_else(|| {
        Error::NotConverged("the follower solver converged at no grid cell".into())
    })?;
    let report = opts.solver.solve(profiles, best.offer(), &opts.iterative)?;
    Ok(MnoSolution::new(best.offer(), report, params, Some(trace)))
}

fn evaluate_cells(
    profiles: &[ApProfile],
    params: MnoParams,
    opts: &GridOptions,
    offers: &[Offer],
) -> Result<Vec<TracePoint>> {
    offers
        .par_iter()
        .map(|&offer| {
            let report = opts.solver.solve(profiles, offer, &opts.iterative)?;
            if report.converged {
                let utility =
                    mno_utility(offer, &report.allocation, params, Scheme::SalaryPlusBonus);
                Ok(TracePoint::evaluated(offer, utility))
            } else {
                debug!("no convergence at {offer}");
                Ok(TracePoint {
                    offer,
                    utility: None,
                    status: TraceStatus::Skipped,
                })
            }
        })
        .collect()
}

fn best_in_trace(trace: &[TracePoint]) -> Option<Candidate> {
    best_of(trace.iter().filter_map(|t| {
        t.utility.map(|utility| Candidate {
            salary_rate: t.offer.salary_rate,
            bonus: t.offer.bonus,
            utility,
        })
    }))
}

/// Optimal bonus when no salary is paid: `B* = (λ − 1/Σ_{i∈S} H_i)⁺`.
///
/// The total offload is `B·ΣH` with the active set fixed, so the objective
/// `λ ln(1 + B ΣH) − B` is concave in `B`.
pub fn optimal_bonus_only(profiles: &[ApProfile], params: MnoParams) -> Result<MnoSolution> {
    let structure = BonusOnlyStructure::new(profiles)?;
    let total = structure.total_coefficient();
    let bonus = if total > 0.0 && total.is_finite() {
        (params.gain_coefficient - 1.0 / total).max(0.0)
    } else {
        0.0
    };
    let report = ne_bonus_only(profiles, bonus)?;
    Ok(MnoSolution::new(
        Offer::new(0.0, bonus)?,
        report,
        params,
        None,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuboptimalSearchOptions {
    /// Evenly spaced salary rates across `[0, max_i c_i]` and again across
    /// `[min_i c_i, max_i c_i]`.
    pub p_grid: usize,
    pub algorithm3: Algorithm3Options,
    /// Keep every evaluated `(p, B)` in the solution.
    pub trace: bool,
}

impl Default for SuboptimalSearchOptions {
    fn default() -> Self {
        SuboptimalSearchOptions {
            p_grid: 101,
            algorithm3: Algorithm3Options::default(),
            trace: false,
        }
    }
}

/// Leader search paired with the single-pass follower heuristic.
///
/// For each candidate salary rate the heuristic's offload is piecewise linear in `B`
/// (piecewise square-root when at most one AP is left unsalaried), so the best bonus is
/// found segment by segment. Salary rates come from grids over the cost range plus every
/// cost and the rate just above it, followed by one refinement pass.
pub fn optimal_spb_suboptimal(
    profiles: &[ApProfile],
    params: MnoParams,
    opts: SuboptimalSearchOptions,
) -> Result<MnoSolution> {
    require_steps("p_grid", opts.p_grid)?;
    validate_profiles(profiles)?;
    if profiles.is_empty() {
        return Err(Error::TooFewAps {
            what: "the salary-plus-bonus search",
            needed: 1,
            got: 0,
        });
    }
    let c_min = profiles
        .iter()
        .map(|ap| ap.cost)
        .fold(f64::INFINITY, f64::min);
    let c_max = profiles.iter().map(|ap| ap.cost).fold(0.0, f64::max);
    let mut prices: Vec<f64> = linspace(0.0, c_max, opts.p_grid)
        .chain(linspace(c_min, c_max, opts.p_grid))
        .chain(profiles.iter().flat_map(|ap| [ap.cost, ap.cost.next_up()]))
        .collect();
    prices.sort_by(f64::total_cmp);
    prices.dedup();

    let search = |prices: &[f64]| -> Vec<(Candidate, Vec<TracePoint>)> {
        prices
            .par_iter()
            .map(|&p| best_bonus_for_price(profiles, params, p, opts))
            .collect()
    };
    let mut per_price = search(&prices);
    let coarse = best_of(per_price.iter().map(|(c, _)| *c)).expect("price set is nonempty");
    // Refine between the neighbouring grid rates.
    let step = c_max / (opts.p_grid - 1) as f64;
    if step > 0.0 {
        let lo = (coarse.salary_rate - step).max(0.0);
        let hi = (coarse.salary_rate + step).min(c_max);
        let fine: Vec<f64> = linspace(lo, hi, opts.p_grid).collect();
        per_price.extend(search(&fine));
    }
    let best = best_of(per_price.iter().map(|(c, _)| *c)).expect("price set is nonempty");
    let trace = opts
        .trace
        .then(|| per_price.into_iter().flat_map(|(_, t)| t).collect());
    let report = ne_spb_suboptimal(profiles, best.offer(), opts.algorithm3)?;
    Ok(MnoSolution::new(best.offer(), report, params, trace))
}

fn best_bonus_for_price(
    profiles: &[ApProfile],
    params: MnoParams,
    salary_rate: f64,
    opts: SuboptimalSearchOptions,
) -> (Candidate, Vec<TracePoint>) {
    let plan = SuboptimalPlan::new(profiles, salary_rate);
    let bonuses = candidate_bonuses(&plan, salary_rate, params.gain_coefficient, opts.algorithm3);
    let candidates: Vec<Candidate> = bonuses
        .into_iter()
        .map(|bonus| {
            let offer = Offer { salary_rate, bonus };
            let d = plan.allocation(bonus, opts.algorithm3);
            Candidate {
                salary_rate,
                bonus,
                utility: mno_utility(offer, &d, params, Scheme::SalaryPlusBonus),
            }
        })
        .collect();
    let trace = if opts.trace {
        candidates
            .iter()
            .map(|c| TracePoint::evaluated(c.offer(), c.utility))
            .collect()
    } else {
        Vec::new()
    };
    (
        best_of(candidates).expect("B = 0 is always a candidate"),
        trace,
    )
}

/// Bonus levels worth evaluating at a fixed salary rate: segment ends and each segment's
/// stationary point.
fn candidate_bonuses(
    plan: &SuboptimalPlan,
    salary_rate: f64,
    lambda: f64,
    opts: Algorithm3Options,
) -> Vec<f64> {
    let mut out = vec![0.0];
    let base = plan.salaried_capacity;
    match &plan.kind {
        PlanKind::Leftover { last, z, a } => {
            let Some((_, ap)) = last else {
                return out;
            };
            let (z, a, w) = (*z, *a, ap.quality);
            if a <= 0.0 || z <= 0.0 {
                return out;
            }
            let lo = a * z / w;
            let hi = a * (z + w * ap.capacity).powi(2) / (w * z);
            out.extend([lo, hi]);
            // Between lo and hi the AP plays sqrt(Bz/(aw)) − z/w. The derivative of the
            // objective changes sign at most once there.
            let slope = |b: f64| {
                let d = (b * z / (a * w)).sqrt() - z / w;
                let dd = (z / (a * w)).sqrt() / (2.0 * b.sqrt());
                (lambda / (1.0 + base + d) - salary_rate) * dd - 1.0
            };
            if hi > lo && slope(hi) < 0.0 && (lo == 0.0 || slope(lo) > 0.0) {
                let (mut l, mut h) = (lo, hi);
                for _ in 0..200 {
                    let mid = 0.5 * (l + h);
                    if mid <= l || mid >= h {
                        break;
                    }
                    if slope(mid) > 0.0 {
                        l = mid;
                    } else {
                        h = mid;
                    }
                }
                out.push(0.5 * (l + h));
            }
        }
        PlanKind::Shared { members } => {
            let max_events = 4 * (members.len() + 1).pow(2);
            let mut bonus = 0.0;
            for _ in 0..max_events {
                let states = plan.shared_states(bonus, opts, true);
                let mut level = base;
                let mut rate = 0.0;
                let mut next = f64::INFINITY;
                for (m, s) in members.iter().zip(&states) {
                    if s.capped {
                        level += m.capacity;
                    } else if s.coefficient > 0.0 {
                        rate += s.coefficient;
                        let t = m.capacity / s.coefficient;
                        if t > bonus {
                            next = next.min(t);
                        }
                    }
                }
                // Offload is `level + rate·B` on (bonus, next).
                if rate > 0.0 {
                    let stationary =
                        (lambda * rate / (salary_rate * rate + 1.0) - 1.0 - level) / rate;
                    if stationary > bonus && stationary < next {
                        out.push(stationary);
                    }
                }
                if !next.is_finite() {
                    return out;
                }
                out.push(next);
                bonus = next;
            }
            warn!("bonus segment walk hit its event limit at p = {salary_rate}");
        }
    }
    out
}
