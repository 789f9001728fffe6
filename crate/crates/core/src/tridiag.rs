//! Symmetric tridiagonal eigenproblems: Sturm-count bisection for the top
//! eigenvalue and inverse iteration for its eigenvector.

/// Number of eigenvalues strictly below `x`.
pub fn sturm_count(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = diag[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..diag.len() {
        let qq = if q == 0.0 { f64::EPSILON * (off[i - 1].abs() + 1e-300) } else { q };
        q = diag[i] - x - off[i - 1] * off[i - 1] / qq;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Gershgorin interval containing the spectrum.
pub fn gershgorin(diag: &[f64], off: &[f64]) -> (f64, f64) {
    let n = diag.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { off[i - 1].abs() } else { 0.0 } + if i + 1 < n { off[i].abs() } else { 0.0 };
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }
    (lo, hi)
}

/// Largest eigenvalue by bisection on the Sturm count.
pub fn largest_eigenvalue(diag: &[f64], off: &[f64]) -> f64 {
    let n = diag.len();
    let (mut lo, mut hi) = gershgorin(diag, off);
    // relative stopping: graded matrices have huge entries far from the
    // eigenvector's support, and the count stays accurate near λ
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
            break;
        }
        if sturm_count(diag, off, mid) >= n {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Solves `(A − shift·I) x = rhs` by the Thomas algorithm (no pivoting; the
/// shifted matrix must be definite).
pub fn solve_shifted(diag: &[f64], off: &[f64], shift: f64, rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut b = diag[0] - shift;
    c[0] = if n > 1 { off[0] / b } else { 0.0 };
    d[0] = rhs[0] / b;
    for i in 1..n {
        b = diag[i] - shift - off[i - 1] * c[i - 1];
        if i + 1 < n {
            c[i] = off[i] / b;
        }
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / b;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Eigenvector of the top eigenvalue `lambda`, unit Euclidean norm, positive sum.
pub fn top_eigenvector(diag: &[f64], off: &[f64], lambda: f64) -> Vec<f64> {
    let n = diag.len();
    let shift = lambda + 1e-10 * lambda.abs().max(f64::MIN_POSITIVE);
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    for _ in 0..4 {
        let mut w = solve_shifted(diag, off, shift, &v);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let sign = if w.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
        for x in w.iter_mut() {
            *x *= sign / norm;
        }
        v = w;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discrete_laplacian_spectrum() {
        // tridiag(1, −2, 1): eigenvalues −2 + 2cos(kπ/(n+1))
        let n = 50;
        let d = vec![-2.0; n];
        let e = vec![1.0; n - 1];
        let top = largest_eigenvalue(&d, &e);
        let exact = -2.0 + 2.0 * (std::f64::consts::PI / (n + 1) as f64).cos();
        assert!((top - exact).abs() < 1e-13);
        assert_eq!(sturm_count(&d, &e, 0.0), n);
        assert_eq!(sturm_count(&d, &e, -4.0), 0);
        let v = top_eigenvector(&d, &e, top);
        for i in 0..n {
            let exact = (std::f64::consts::PI * (i + 1) as f64 / (n + 1) as f64).sin();
            let norm = ((n + 1) as f64 / 2.0).sqrt();
            assert!((v[i] - exact / norm).abs() < 1e-8);
        }
    }

    #[test]
    fn thomas_solves_system() {
        let d = vec![4.0, 5.0, 6.0];
        let e = vec![1.0, 2.0];
        let x = solve_shifted(&d, &e, 1.0, &[1.0, 2.0, 3.0]);
        let r0 = 3.0 * x[0] + x[1];
        let r1 = x[0] + 4.0 * x[1] + 2.0 * x[2];
        let r2 = 2.0 * x[1] + 5.0 * x[2];
        assert!((r0 - 1.0).abs() < 1e-14 && (r1 - 2.0).abs() < 1e-14 && (r2 - 3.0).abs() < 1e-14);
    }
}
