//! Reference computations written independently of the library.

/// Shapley values by direct summation over all 2^M coalitions:
/// φⱼ = Σ_{S ⊆ N∖{j}} |S|!(M−|S|−1)!/M! · (v(S ∪ {j}) − v(S)).
///
/// Coalitions are bitmasks, bit j set when group j is present.
pub fn shapley_values(groups: usize, value: impl Fn(u64) -> f64) -> Vec<f64> {
    assert!(groups > 0 && groups < 26, "brute force is limited to 25 groups");
    let factorial = |n: usize| (1..=n).map(|i| i as f64).product::<f64>();
    let total = factorial(groups);
    let weights: Vec<f64> = (0..groups)
        .map(|s| factorial(s) * factorial(groups - s - 1) / total)
        .collect();
    let values: Vec<f64> = (0u64..1 << groups).map(&value).collect();
    (0..groups)
        .map(|j| {
            let mut phi = 0.0;
            for bits in 0u64..1 << groups {
                if bits & (1 << j) != 0 {
                    continue;
                }
                let w = weights[bits.count_ones() as usize];
                phi += w * (values[(bits | (1 << j)) as usize] - values[bits as usize]);
            }
            phi
        })
        .collect()
}

/// min(2·M + 2048, ⌊t·r/votes⌋) with the rate given as the fraction
/// `rate_num / rate_den`, in integer arithmetic.
pub fn sample_cap(groups: u64, budget_s: u64, rate_num: u64, rate_den: u64, votes: u64) -> u64 {
    let affordable = budget_s * rate_num / (rate_den * votes);
    (2 * groups + 2048).min(affordable)
}

/// (M − 1) / (C(M, s) · s · (M − s)).
pub fn kernel(groups: u64, size: u64) -> f64 {
    let mut c: u128 = 1;
    for i in 0..size as u128 {
        c = c * (groups as u128 - i) / (i + 1);
    }
    (groups - 1) as f64 / (c as f64 * size as f64 * (groups - size) as f64)
}
