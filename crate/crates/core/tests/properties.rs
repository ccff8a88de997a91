use offload_core::equilibrium::{homogeneous_profiles, ne_salary_only};
use offload_core::{
    grid_search_spb, mno_utility, ne_bonus_only, ne_homogeneous, ne_iterative, ne_spb_suboptimal,
    ne_two_ap, optimal_bonus_only, optimal_homogeneous, optimal_price_salary_only,
    optimal_spb_suboptimal, verify_ne, Algorithm3Options, ApProfile, GridOptions, IterativeOptions,
    MnoParams, NeSolver, Offer, SalaryOnlyOptions, Scheme, SuboptimalSearchOptions,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ap() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.1f64..5.0, 0.05f64..=1.0, 0.1f64..=5.0)
}

fn population(max: usize) -> impl Strategy<Value = Vec<ApProfile>> {
    prop::collection::vec(ap(), 2..=max).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(id, (c, w, t))| ApProfile::new(id, c, w, t).unwrap())
            .collect()
    })
}

fn total(d: &[f64]) -> f64 {
    d.iter().sum()
}

/// Exhaustive salary-only search over every subset of APs.
fn salary_only_brute_force(profiles: &[ApProfile], lambda: f64) -> f64 {
    let n = profiles.len();
    let mut best: f64 = 0.0;
    for mask in 1u32..(1 << n) {
        let members: Vec<&ApProfile> = (0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| &profiles[i])
            .collect();
        let p = members.iter().map(|ap| ap.cost).fold(0.0, f64::max);
        // The cheapest price for this set also pays every AP with cost <= p.
        let d: f64 = profiles
            .iter()
            .filter(|ap| ap.cost <= p)
            .map(|ap| ap.capacity)
            .sum();
        best = best.max(lambda * d.ln_1p() - p * d);
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn salary_only_matches_subset_enumeration(profiles in population(8), lambda in 0.1f64..50.0) {
        let params = MnoParams::new(lambda).unwrap();
        let fast = optimal_price_salary_only(&profiles, params, SalaryOnlyOptions::default()).unwrap();
        let slow = optimal_price_salary_only(&profiles, params, SalaryOnlyOptions { early_stop: false }).unwrap();
        let brute = salary_only_brute_force(&profiles, lambda);
        prop_assert!((fast.utility - brute).abs() <= 1e-9 * brute.max(1.0));
        prop_assert_eq!(fast.offer, slow.offer);
    }

    #[test]
    fn leaders_never_lose_money(profiles in population(6), lambda in 0.01f64..50.0) {
        let params = MnoParams::new(lambda).unwrap();
        let salary = optimal_price_salary_only(&profiles, params, SalaryOnlyOptions::default()).unwrap();
        let bonus = optimal_bonus_only(&profiles, params).unwrap();
        let sub = optimal_spb_suboptimal(&profiles, params, SuboptimalSearchOptions::default()).unwrap();
        for u in [salary.utility, bonus.utility, sub.utility] {
            prop_assert!(u >= -1e-12, "utility {}", u);
        }
    }

    #[test]
    fn equilibrium_is_unique_from_any_start(profiles in population(5), p in 0.0f64..5.0, b in 0.0f64..30.0, seed in any::<u64>()) {
        let offer = Offer::new(p, b).unwrap();
        let reference = ne_iterative(&profiles, offer, Scheme::SalaryPlusBonus, &IterativeOptions::default()).unwrap();
        prop_assert!(reference.converged);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let start: Vec<f64> = profiles.iter().map(|ap| r.gen_range(0.0..=ap.capacity)).collect();
            let opts = IterativeOptions { initial: Some(start), ..IterativeOptions::default() };
            let other = ne_iterative(&profiles, offer, Scheme::SalaryPlusBonus, &opts).unwrap();
            prop_assert!(other.converged);
            for (x, y) in reference.allocation.iter().zip(other.allocation.iter()) {
                prop_assert!((x - y).abs() <= 1e-6, "{} vs {}", x, y);
            }
        }
    }

    #[test]
    fn iterative_bonus_only_matches_closed_form(profiles in population(10), b in 0.1f64..100.0) {
        let closed = ne_bonus_only(&profiles, b).unwrap();
        let iter = ne_iterative(&profiles, Offer::new(0.0, b).unwrap(), Scheme::BonusOnly, &IterativeOptions::default()).unwrap();
        prop_assert!(iter.converged);
        for (x, y) in closed.allocation.iter().zip(iter.allocation.iter()) {
            prop_assert!((x - y).abs() <= 1e-6 * b.max(1.0), "{} vs {}", x, y);
        }
    }

    #[test]
    fn bonus_only_offload_is_linear_in_the_bonus(profiles in population(10), b in 0.1f64..50.0, k in 1.5f64..10.0) {
        let small = ne_bonus_only(&profiles, b).unwrap();
        let large = ne_bonus_only(&profiles, k * b).unwrap();
        prop_assert_eq!(&small.active_set, &large.active_set);
        for (x, y) in small.allocation.iter().zip(large.allocation.iter()) {
            prop_assert!((k * x - y).abs() <= 1e-9 * y.max(1.0));
        }
    }

    #[test]
    fn bonus_only_more_valuable_traffic_never_lowers_the_bonus(profiles in population(8), lambda in 0.01f64..50.0) {
        let low = optimal_bonus_only(&profiles, MnoParams::new(lambda).unwrap()).unwrap();
        let high = optimal_bonus_only(&profiles, MnoParams::new(2.0 * lambda).unwrap()).unwrap();
        prop_assert!(high.offer.bonus >= low.offer.bonus);
    }

    #[test]
    fn salary_only_offload_grows_with_price(profiles in population(10), p in 0.0f64..5.0, dp in 0.0f64..2.0) {
        let low = ne_salary_only(&profiles, p).unwrap();
        let high = ne_salary_only(&profiles, p + dp).unwrap();
        prop_assert!(total(&high.allocation) >= total(&low.allocation));
    }

    #[test]
    fn suboptimal_respects_capacities_and_salaried_aps(profiles in population(12), p in 0.0f64..5.0, b in 0.0f64..50.0, recompute in any::<bool>()) {
        let offer = Offer::new(p, b).unwrap();
        let report = ne_spb_suboptimal(&profiles, offer, Algorithm3Options { recompute }).unwrap();
        for (ap, &d) in profiles.iter().zip(report.allocation.iter()) {
            prop_assert!((0.0..=ap.capacity).contains(&d));
            if ap.cost < p {
                prop_assert_eq!(d, ap.capacity);
            }
        }
    }

    #[test]
    fn suboptimal_is_exact_for_identical_aps_below_capacity(n in 2usize..20, (c, w, t) in ap(), p in 0.0f64..5.0, b in 0.0f64..100.0) {
        let nf = n as f64;
        // Capped members leave the shared set one at a time, so only the interior branch is exact.
        prop_assume!(p >= c || b / (c - p) < nf * nf * t / (nf - 1.0));
        let profiles = homogeneous_profiles(n, c, w, t).unwrap();
        let offer = Offer::new(p, b).unwrap();
        let exact = ne_homogeneous(n, c, w, t, offer).unwrap();
        let sub = ne_spb_suboptimal(&profiles, offer, Algorithm3Options::default()).unwrap();
        for (x, y) in exact.allocation.iter().zip(sub.allocation.iter()) {
            prop_assert!((x - y).abs() <= 1e-9 * t.max(1.0), "{} vs {}", x, y);
        }
    }

    #[test]
    fn two_ap_solution_survives_deviations(profiles in population(2), p in 0.0f64..6.0, b in 0.0f64..40.0) {
        prop_assume!(profiles[0].cost != profiles[1].cost);
        let offer = Offer::new(p, b).unwrap();
        let report = ne_two_ap(&profiles, offer).unwrap();
        let check = verify_ne(&report.allocation, offer, &profiles, Scheme::SalaryPlusBonus, 500).unwrap();
        prop_assert!(check.is_ne, "gain {}", check.max_gain);
    }
}

fn two_aps() -> Vec<ApProfile> {
    vec![
        ApProfile::new(0, 2.0, 0.2, 5.0).unwrap(),
        ApProfile::new(1, 3.0, 0.3, 5.0).unwrap(),
    ]
}

#[test]
fn finer_nested_grid_is_never_worse() {
    let profiles = two_aps();
    let params = MnoParams::new(50.0).unwrap();
    let coarse = GridOptions {
        p_steps: 11,
        b_steps: 11,
        refine: false,
        ..GridOptions::default()
    };
    // 21 points per axis contain the 11-point grid.
    let fine = GridOptions {
        p_steps: 21,
        b_steps: 21,
        ..coarse.clone()
    };
    let a = grid_search_spb(&profiles, params, &coarse).unwrap();
    let b = grid_search_spb(&profiles, params, &fine).unwrap();
    assert!(
        b.utility >= a.utility - 1e-12,
        "{} < {}",
        b.utility,
        a.utility
    );
}

#[test]
fn grid_solvers_agree() {
    let profiles = two_aps();
    let params = MnoParams::new(50.0).unwrap();
    let base = GridOptions {
        p_steps: 41,
        b_steps: 41,
        ..GridOptions::default()
    };
    let cases = grid_search_spb(
        &profiles,
        params,
        &GridOptions {
            solver: NeSolver::TwoApCases,
            ..base.clone()
        },
    )
    .unwrap();
    let iter = grid_search_spb(&profiles, params, &base).unwrap();
    assert!((cases.utility - iter.utility).abs() <= 1e-6 * cases.utility.abs().max(1.0));
}

#[test]
fn grid_beats_both_single_instrument_schemes() {
    let profiles = two_aps();
    for lambda in [5.0, 20.0, 50.0] {
        let params = MnoParams::new(lambda).unwrap();
        let grid = grid_search_spb(&profiles, params, &GridOptions::default()).unwrap();
        let salary =
            optimal_price_salary_only(&profiles, params, SalaryOnlyOptions::default()).unwrap();
        let bonus = optimal_bonus_only(&profiles, params).unwrap();
        // Within grid resolution of the better of the two.
        let floor = salary.utility.max(bonus.utility);
        assert!(
            grid.utility >= floor - 0.02 * floor.abs().max(1.0),
            "lambda {lambda}: {} vs {floor}",
            grid.utility
        );
    }
}

#[test]
fn homogeneous_leader_matches_brute_force() {
    let (n, c, w, t) = (5, 1.5, 0.4, 2.0);
    let params = MnoParams::new(20.0).unwrap();
    let sol = optimal_homogeneous(n, c, w, t, params, 201).unwrap();
    let mut best = f64::NEG_INFINITY;
    for i in 0..=400 {
        let p = c * i as f64 / 400.0;
        for j in 0..=400 {
            let b = 60.0 * j as f64 / 400.0;
            let offer = Offer::new(p, b).unwrap();
            let d = ne_homogeneous(n, c, w, t, offer).unwrap();
            best = best.max(mno_utility(
                offer,
                &d.allocation,
                params,
                Scheme::SalaryPlusBonus,
            ));
        }
    }
    assert!(sol.utility >= best - 1e-9, "{} < {best}", sol.utility);
    assert!(sol.utility <= best + 0.05);
}
