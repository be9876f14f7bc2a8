//! Shapley kernel and the coalition sampling schedule.

use std::collections::HashMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::AttributionError;
use crate::perturbation::CoalitionMask;

/// C(n, k) as f64, computed over min(k, n−k) factors so that C(n, k) and
/// C(n, n−k) are bit-identical.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut exact: u128 = 1;
    for i in 0..k {
        match exact.checked_mul((n - i) as u128) {
            Some(v) => exact = v / (i as u128 + 1),
            None => return binomial_float(n, k),
        }
    }
    exact as f64
}

fn binomial_float(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley kernel weight (M−1) / (C(M,s) · s · (M−s)) of one coalition of
/// size `s` among `groups` groups.
pub fn kernel_weight(groups: usize, size: usize) -> Result<f64, AttributionError> {
    if size == 0 || size >= groups {
        return Err(AttributionError::DegenerateSize { groups, size });
    }
    let m = groups as f64;
    let denom = binomial(groups, size) * (size * (groups - size)) as f64;
    Ok((m - 1.0) / denom)
}

/// Total kernel mass of every coalition of one size: C(M,s) · kernel(M,s).
fn layer_mass(groups: usize, size: usize) -> f64 {
    (groups as f64 - 1.0) / (size * (groups - size)) as f64
}

/// Masks to evaluate and the regression weight of each.
///
/// `masks[0]` is the empty coalition and `masks[1]` the full one; their
/// weights are 0 because the efficiency constraint pins them instead.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePlan {
    pub exact: bool,
    pub masks: Vec<CoalitionMask>,
    pub weights: Vec<f64>,
}

impl SamplePlan {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// Chooses at most `cap` distinct coalitions, empty and full included.
///
/// Size layers are filled outward-in (1 and M−1, then 2 and M−2, …), each
/// complete layer pair only if it fits what is left of the budget. The first
/// layer that does not fit ends enumeration; the rest of the budget goes to
/// random masks whose size is drawn in proportion to kernel mass, each paired
/// with its complement. Repeated draws add weight instead of new masks.
pub fn sample_coalitions(groups: usize, cap: usize, seed: u64) -> Result<SamplePlan, AttributionError> {
    if groups == 0 || cap < groups + 2 {
        return Err(AttributionError::CapBelowFloor { groups, cap });
    }
    let mut plan = SamplePlan {
        exact: true,
        masks: vec![CoalitionMask::empty(groups), CoalitionMask::full(groups)],
        weights: vec![0.0, 0.0],
    };
    let mut remaining = cap - 2;

    let mut first_open_size = None;
    for size in 1..=groups / 2 {
        let paired = size != groups - size;
        let count = binomial(groups, size) * if paired { 2.0 } else { 1.0 };
        if count > remaining as f64 {
            first_open_size = Some(size);
            break;
        }
        let weight = kernel_weight(groups, size)?;
        for members in Combinations::new(groups, size) {
            let mask = CoalitionMask::from_members(groups, members);
            let complement = paired.then(|| mask.complement());
            plan.masks.push(mask);
            plan.weights.push(weight);
            if let Some(complement) = complement {
                plan.masks.push(complement);
                plan.weights.push(weight);
            }
        }
        remaining -= count as usize;
    }

    let Some(low) = first_open_size else {
        return Ok(plan);
    };
    plan.exact = false;
    if remaining == 0 {
        return Ok(plan);
    }

    let high = groups - low;
    let sizes: Vec<usize> = (low..=high).collect();
    let masses: Vec<f64> = sizes.iter().map(|&s| layer_mass(groups, s)).collect();
    let total_mass: f64 = masses.iter().sum();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<CoalitionMask> = Vec::with_capacity(remaining);
    let mut counts: HashMap<CoalitionMask, usize> = HashMap::with_capacity(remaining);
    let mut draws = 0usize;
    let max_draws = remaining.saturating_mul(1000).max(10_000);

    let mut record = |mask: CoalitionMask, order: &mut Vec<CoalitionMask>| -> bool {
        if let Some(c) = counts.get_mut(&mask) {
            *c += 1;
            true
        } else if order.len() < remaining {
            counts.insert(mask.clone(), 1);
            order.push(mask);
            true
        } else {
            false
        }
    };

    while order.len() < remaining && draws < max_draws {
        draws += 1;
        let mut target = rng.random::<f64>() * total_mass;
        let mut size = *sizes.last().expect("at least one open size");
        for (&s, &m) in sizes.iter().zip(&masses) {
            if target < m {
                size = s;
                break;
            }
            target -= m;
        }
        let members = index::sample(&mut rng, groups, size).into_vec();
        let mask = CoalitionMask::from_members(groups, members);
        let complement = mask.complement();
        record(mask, &mut order);
        record(complement, &mut order);
    }

    let total_count: usize = order.iter().map(|m| counts[m]).sum();
    for mask in order {
        let share = counts[&mask] as f64 / total_count as f64;
        plan.masks.push(mask);
        plan.weights.push(total_mass * share);
    }
    Ok(plan)
}

/// Lexicographic k-subsets of 0..n.
struct Combinations {
    n: usize,
    current: Option<Vec<usize>>,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Self {
            n,
            current: (k <= n).then(|| (0..k).collect()),
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Self::Item> {
        let out = self.current.clone()?;
        let k = out.len();
        let mut next = out.clone();
        let mut i = k;
        loop {
            if i == 0 {
                self.current = None;
                break;
            }
            i -= 1;
            if next[i] < self.n - k + i {
                next[i] += 1;
                for j in i + 1..k {
                    next[j] = next[j - 1] + 1;
                }
                self.current = Some(next);
                break;
            }
        }
        Some(out)
    }
}
