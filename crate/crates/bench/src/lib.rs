//! Fixtures shared by the benchmarks.

use offload_core::{generate_scenario, ApProfile, CostRegime};

pub fn two_aps() -> Vec<ApProfile> {
    vec![
        ApProfile::new(0, 2.0, 0.2, 5.0).unwrap(),
        ApProfile::new(1, 3.0, 0.3, 5.0).unwrap(),
    ]
}

pub fn population(n: usize, regime: CostRegime) -> Vec<ApProfile> {
    generate_scenario(n, regime, 7).unwrap().profiles
}
