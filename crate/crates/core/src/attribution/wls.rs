//! Kernel-weighted least squares under the efficiency constraint.

use nalgebra::{DMatrix, DVector};

use super::AttributionError;
use crate::perturbation::CoalitionMask;

/// Ridge added to the normal matrix when it is numerically singular.
pub const RIDGE: f64 = 1e-10;
const MIN_RECIPROCAL_CONDITION: f64 = 1e-12;

/// One evaluated coalition.
#[derive(Debug, Clone, PartialEq)]
pub struct CoalitionSample {
    pub mask: CoalitionMask,
    pub kernel_weight: f64,
    pub probability: f64,
}

/// Minimizes Σ wᵢ (f_empty + Σ_{j∈maskᵢ} φⱼ − pᵢ)² subject to
/// Σ φ = f_full − f_empty.
///
/// The last group's value is eliminated through the constraint, so the
/// remaining M−1 unknowns come from an unconstrained normal-equation solve.
/// Samples with zero weight (the empty and full coalitions) contribute
/// nothing.
pub fn solve_wls(
    samples: &[CoalitionSample],
    groups: usize,
    f_full: f64,
    f_empty: f64,
) -> Result<Vec<f64>, AttributionError> {
    if groups == 0 {
        return Ok(Vec::new());
    }
    let delta = f_full - f_empty;
    if groups == 1 {
        return Ok(vec![delta]);
    }
    let free = groups - 1;
    let last = groups - 1;

    let mut normal = DMatrix::<f64>::zeros(free, free);
    let mut rhs = DVector::<f64>::zeros(free);
    let mut x = vec![0.0; free];
    for sample in samples {
        if sample.mask.len() != groups {
            return Err(AttributionError::SampleShape {
                expected: groups,
                found: sample.mask.len(),
            });
        }
        let w = sample.kernel_weight;
        if w == 0.0 {
            continue;
        }
        let bits = sample.mask.bits();
        let tail = if bits[last] { 1.0 } else { 0.0 };
        for (j, xj) in x.iter_mut().enumerate() {
            *xj = if bits[j] { 1.0 } else { 0.0 } - tail;
        }
        let y = sample.probability - f_empty - delta * tail;
        for r in 0..free {
            if x[r] == 0.0 {
                continue;
            }
            rhs[r] += w * x[r] * y;
            for c in 0..free {
                normal[(r, c)] += w * x[r] * x[c];
            }
        }
    }

    let beta = solve_normal(normal, &rhs)?;
    let mut phi: Vec<f64> = beta.iter().copied().collect();
    let head: f64 = phi.iter().sum();
    phi.push(delta - head);
    Ok(phi)
}

fn solve_normal(normal: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>, AttributionError> {
    let eigen = normal.clone().symmetric_eigen();
    let max = eigen.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = eigen.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let well_conditioned = max > 0.0 && min / max > MIN_RECIPROCAL_CONDITION;

    let attempt = |matrix: DMatrix<f64>| {
        matrix
            .cholesky()
            .map(|c| c.solve(rhs))
            .filter(|v| v.iter().all(|x| x.is_finite()))
    };
    if well_conditioned {
        if let Some(beta) = attempt(normal.clone()) {
            return Ok(beta);
        }
    }
    let dim = normal.nrows();
    let ridged = normal + DMatrix::<f64>::identity(dim, dim) * RIDGE;
    attempt(ridged).ok_or(AttributionError::SingularSystem {
        min_eigenvalue: min,
        max_eigenvalue: max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::sampling::sample_coalitions;

    fn evaluate(groups: usize, cap: usize, f: impl Fn(&CoalitionMask) -> f64) -> (Vec<CoalitionSample>, f64, f64) {
        let plan = sample_coalitions(groups, cap, 3).unwrap();
        let samples: Vec<CoalitionSample> = plan
            .masks
            .iter()
            .zip(&plan.weights)
            .map(|(m, &w)| CoalitionSample {
                mask: m.clone(),
                kernel_weight: w,
                probability: f(m),
            })
            .collect();
        let full = f(&CoalitionMask::full(groups));
        let empty = f(&CoalitionMask::empty(groups));
        (samples, full, empty)
    }

    #[test]
    fn additive_two_groups() {
        let f = |m: &CoalitionMask| 0.1 + 0.2 * m.contains(0) as u8 as f64 + 0.3 * m.contains(1) as u8 as f64;
        let (samples, full, empty) = evaluate(2, 100, f);
        let phi = solve_wls(&samples, 2, full, empty).unwrap();
        assert!((phi[0] - 0.2).abs() < 1e-12);
        assert!((phi[1] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn constant_function_gives_zero() {
        let (samples, full, empty) = evaluate(5, 100, |_| 0.4);
        let phi = solve_wls(&samples, 5, full, empty).unwrap();
        assert!(phi.iter().all(|p| p.abs() < 1e-12));
    }

    #[test]
    fn majority_of_three() {
        let (samples, full, empty) = evaluate(3, 100, |m| if m.size() >= 2 { 1.0 } else { 0.0 });
        let phi = solve_wls(&samples, 3, full, empty).unwrap();
        for p in phi {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_group_is_the_difference() {
        assert_eq!(solve_wls(&[], 1, 0.9, 0.2).unwrap(), vec![0.9 - 0.2]);
    }

    #[test]
    fn underdetermined_falls_back_to_ridge() {
        // only one informative coalition for four groups
        let samples = vec![CoalitionSample {
            mask: CoalitionMask::new(vec![true, false, false, false]),
            kernel_weight: 1.0,
            probability: 0.5,
        }];
        let phi = solve_wls(&samples, 4, 1.0, 0.0).unwrap();
        assert!(phi.iter().all(|p| p.is_finite()));
        assert!((phi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((phi[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn rejects_mismatched_masks() {
        let samples = vec![CoalitionSample {
            mask: CoalitionMask::new(vec![true]),
            kernel_weight: 1.0,
            probability: 0.5,
        }];
        assert!(matches!(
            solve_wls(&samples, 3, 1.0, 0.0),
            Err(AttributionError::SampleShape { .. })
        ));
    }
}
