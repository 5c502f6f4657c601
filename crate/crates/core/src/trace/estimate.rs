/// Smallest run length `N` with `k * (1 - 1/k)^N <= miss_probability`: a
/// union bound on the chance that uniform selection over `k` operations
/// leaves one of them uninvoked. A heuristic budget for regression by
/// regeneration.
///
/// # Panics
///
/// When `k` is zero or `miss_probability` is outside `(0, 1)`.
pub fn estimate_run_length(k: u64, miss_probability: f64) -> u64 {
    assert!(k >= 1, "k must be at least 1");
    assert!(
        miss_probability > 0.0 && miss_probability < 1.0,
        "miss probability must lie in (0, 1)"
    );
    if k == 1 {
        return 1;
    }
    let kf = k as f64;
    let q = 1.0 - 1.0 / kf;
    let bound = |n: u64| kf * q.powf(n as f64);
    let mut n = ((miss_probability / kf).ln() / q.ln()).ceil().max(0.0) as u64;
    while n > 0 && bound(n - 1) <= miss_probability {
        n -= 1;
    }
    while bound(n) > miss_probability {
        n += 1;
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ten_operations_at_one_in_a_thousand() {
        // 10 * 0.9^88 = 9.52e-4 and 10 * 0.9^87 = 1.06e-3.
        assert_eq!(estimate_run_length(10, 1e-3), 88);
    }

    #[test]
    fn single_operation_needs_one_draw() {
        for eps in [0.5, 1e-3, 1e-12] {
            assert_eq!(estimate_run_length(1, eps), 1);
        }
    }

    proptest! {
        #[test]
        fn result_is_the_smallest_satisfying_n(k in 2u64..500, exp in 1.0f64..12.0) {
            let eps = 10f64.powf(-exp);
            let n = estimate_run_length(k, eps);
            let bound = |n: u64| k as f64 * (1.0 - 1.0 / k as f64).powf(n as f64);
            prop_assert!(bound(n) <= eps);
            prop_assert!(n == 0 || bound(n - 1) > eps);
        }

        #[test]
        fn monotone_in_k_and_epsilon(k in 2u64..200, exp in 1.0f64..8.0) {
            let eps = 10f64.powf(-exp);
            prop_assert!(estimate_run_length(k + 1, eps) >= estimate_run_length(k, eps));
            prop_assert!(estimate_run_length(k, eps / 2.0) >= estimate_run_length(k, eps));
        }
    }
}
