//! Polynomial recurrences and combinatorial helpers used by the Mercer bases.

/// `ln(n!)` by direct summation; exact enough for the orders used here (n ≤ a few hundred).
pub fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// `ln(n (n-1) ... (n-k+1))`, the log of the falling factorial. Requires `k <= n`.
pub fn ln_falling(n: usize, k: usize) -> f64 {
    debug_assert!(k <= n);
    (0..k).map(|m| ((n - m) as f64).ln()).sum()
}

/// Falling factorial `x (x-1) ... (x-k+1)` for integer `x`; empty product is 1.
pub fn falling(x: i64, k: usize) -> f64 {
    (0..k as i64).map(|m| (x - m) as f64).product()
}

/// Binomial coefficient by multiplicative recurrence, exact for the small sizes we need.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut c = 1.0f64;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c.round()
}

/// Fills `out[i] = exp(log_envelope) * H_i(z) / sqrt(2^i i!)` for `i < out.len()`,
/// with `H_i` the physicists' Hermite polynomials.
///
/// The normalized three-term recurrence keeps the mantissas moderate; a running
/// log-scale absorbs growth so the envelope never underflows before it is applied.
pub fn scaled_hermite(z: f64, log_envelope: f64, out: &mut [f64]) {
    const RESCALE: f64 = 1e150;
    let ln_rescale = RESCALE.ln();
    if out.is_empty() {
        return;
    }
    let mut log_scale = log_envelope;
    let mut prev = 0.0f64;
    let mut cur = 1.0f64;
    out[0] = log_envelope.exp();
    for i in 0..out.len() - 1 {
        let fi = i as f64;
        let next = z * (2.0 / (fi + 1.0)).sqrt() * cur - (fi / (fi + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        if cur.abs() > RESCALE {
            cur /= RESCALE;
            prev /= RESCALE;
            log_scale += ln_rescale;
        }
        out[i + 1] = if cur == 0.0 {
            0.0
        } else if log_scale > -600.0 {
            cur * log_scale.exp()
        } else {
            cur.signum() * (cur.abs().ln() + log_scale).exp()
        };
    }
}

/// Chebyshev polynomials of the first kind `T_0..T_{n-1}` at `x`.
pub fn chebyshev_t(x: f64, out: &mut [f64]) {
    let n = out.len();
    if n == 0 {
        return;
    }
    out[0] = 1.0;
    if n > 1 {
        out[1] = x;
    }
    for i in 2..n {
        out[i] = 2.0 * x * out[i - 1] - out[i - 2];
    }
}

/// k-th derivative of `T_i` expressed through lower-degree Chebyshev polynomials.
///
/// `t` must hold `T_0..T_i` at the evaluation point.
pub fn chebyshev_t_derivative(i: usize, k: usize, t: &[f64]) -> f64 {
    if k == 0 {
        return t[i];
    }
    if i < k {
        return 0.0;
    }
    let fi = i as f64;
    let mut sum = 0.0;
    for j in 0..=(i - k) / 2 {
        sum += fi
            * falling((i - 1 - j) as i64, k - 1)
            * binomial(k + j - 1, k - 1)
            * t[i - k - 2 * j];
    }
    let mut value = 2f64.powi(k as i32) * sum;
    if (i - k).is_multiple_of(2) {
        let h = (i + k) / 2 - 1;
        value -= 2f64.powi(k as i32 - 1) * fi * falling(h as i64, k - 1) * binomial(h, k - 1);
    }
    value
}

/// Derivatives of `T_0..T_{n-1}` of order `k`, by differentiating the three-term
/// recurrence (valid from `T_2` on): `T_{i+1}^{(k)} = 2x T_i^{(k)} + 2k T_i^{(k-1)} - T_{i-1}^{(k)}`.
pub fn chebyshev_t_derivatives_recurrence(x: f64, n: usize, k: usize) -> Vec<f64> {
    let mut prev_order = vec![0.0; n];
    chebyshev_t(x, &mut prev_order);
    for order in 1..=k {
        let mut cur = vec![0.0; n];
        if n > 1 && order == 1 {
            cur[1] = 1.0;
        }
        for i in 2..n {
            cur[i] = 2.0 * x * cur[i - 1] + 2.0 * order as f64 * prev_order[i - 1] - cur[i - 2];
        }
        prev_order = cur;
    }
    prev_order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomials_and_falling() {
        assert_eq!(binomial(5, 2), 10.0);
        assert_eq!(binomial(10, 0), 1.0);
        assert_eq!(binomial(3, 5), 0.0);
        assert_eq!(binomial(200, 5), 2_535_650_040.0);
        assert_eq!(falling(5, 3), 60.0);
        assert_eq!(falling(7, 0), 1.0);
        assert!((ln_factorial(10) - 3_628_800f64.ln()).abs() < 1e-12);
        assert!((ln_falling(10, 3) - 720f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hermite_matches_explicit_low_orders() {
        // H_0 = 1, H_1 = 2z, H_2 = 4z^2 - 2, H_3 = 8z^3 - 12z
        let z = 0.7f64;
        let mut out = [0.0; 4];
        scaled_hermite(z, 0.0, &mut out);
        let explicit = [1.0, 2.0 * z, 4.0 * z * z - 2.0, 8.0 * z.powi(3) - 12.0 * z];
        for i in 0..4 {
            let norm = (2f64.powi(i as i32) * ln_factorial(i).exp()).sqrt();
            assert!((out[i] - explicit[i] / norm).abs() < 1e-14, "order {i}");
        }
    }

    #[test]
    fn hermite_stays_finite_at_high_order() {
        let mut out = vec![0.0; 400];
        scaled_hermite(12.0, -144.0 / 2.0, &mut out);
        assert!(out.iter().all(|v| v.is_finite()));
        // Hermite functions are bounded by ~1 in magnitude.
        assert!(out.iter().all(|v| v.abs() < 10.0));
    }

    #[test]
    fn chebyshev_closed_form_matches_recurrence() {
        for &x in &[-0.95, -0.3, 0.0, 0.41, 0.99] {
            let mut t = vec![0.0; 40];
            chebyshev_t(x, &mut t);
            for k in 1..=5 {
                let rec = chebyshev_t_derivatives_recurrence(x, 40, k);
                for (i, r) in rec.iter().enumerate() {
                    let closed = chebyshev_t_derivative(i, k, &t);
                    let scale = 1.0 + r.abs();
                    assert!(
                        (closed - r).abs() / scale < 1e-10,
                        "i={i} k={k} x={x}: {closed} vs {r}"
                    );
                }
            }
        }
    }

    #[test]
    fn chebyshev_first_derivative_of_t1_is_one() {
        let mut t = vec![0.0; 4];
        chebyshev_t(0.37, &mut t);
        assert_eq!(chebyshev_t_derivative(1, 1, &t), 1.0);
        assert_eq!(chebyshev_t_derivative(0, 1, &t), 0.0);
    }
}
