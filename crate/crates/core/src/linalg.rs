//! Small dense helpers on row-major slices.

/// `log Σ exp(v)` with max-shift; `-inf` for an empty or all `-inf` input.
pub fn logsumexp(v: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let m = v.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + v.into_iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += scale * A x` for `A` of shape `rows x x.len()`.
#[inline]
pub fn gemv_acc(a: &[f64], x: &[f64], scale: f64, y: &mut [f64]) {
    let cols = x.len();
    debug_assert_eq!(a.len(), y.len() * cols);
    for (yi, row) in y.iter_mut().zip(a.chunks_exact(cols)) {
        *yi += scale * dot(row, x);
    }
}

/// `y += scale * Aᵀ x` for `A` of shape `x.len() x y.len()`.
#[inline]
pub fn gemv_t_acc(a: &[f64], x: &[f64], scale: f64, y: &mut [f64]) {
    let cols = y.len();
    debug_assert_eq!(a.len(), x.len() * cols);
    for (&xi, row) in x.iter().zip(a.chunks_exact(cols)) {
        let s = scale * xi;
        if s == 0.0 {
            continue;
        }
        for (yj, aij) in y.iter_mut().zip(row) {
            *yj += s * aij;
        }
    }
}

/// `A += scale * u vᵀ` for `A` of shape `u.len() x v.len()`.
#[inline]
pub fn ger(a: &mut [f64], u: &[f64], v: &[f64], scale: f64) {
    let cols = v.len();
    debug_assert_eq!(a.len(), u.len() * cols);
    for (&ui, row) in u.iter().zip(a.chunks_exact_mut(cols)) {
        let s = scale * ui;
        if s == 0.0 {
            continue;
        }
        for (aij, vj) in row.iter_mut().zip(v) {
            *aij += s * vj;
        }
    }
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_edge_cases() {
        assert_eq!(logsumexp(Vec::<f64>::new()), f64::NEG_INFINITY);
        assert_eq!(logsumexp(vec![f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        let v = vec![1000.0, 1000.0];
        assert!((logsumexp(v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        let v = vec![-1.0, f64::NEG_INFINITY, 2.0];
        assert!((logsumexp(v) - ((-1f64).exp() + 2f64.exp()).ln()).abs() < 1e-12);
    }

    #[test]
    fn gemv_variants_agree_with_naive() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2 x 3
        let mut y = [0.0; 2];
        gemv_acc(&a, &[1.0, 0.0, -1.0], 2.0, &mut y);
        assert_eq!(y, [-4.0, -4.0]);
        let mut z = [0.0; 3];
        gemv_t_acc(&a, &[1.0, -1.0], 1.0, &mut z);
        assert_eq!(z, [-3.0, -3.0, -3.0]);
        let mut m = [0.0; 6];
        ger(&mut m, &[1.0, 2.0], &[1.0, 0.0, 3.0], 0.5);
        assert_eq!(m, [0.5, 0.0, 1.5, 1.0, 0.0, 3.0]);
    }
}
