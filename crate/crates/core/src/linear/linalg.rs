//! Small dense kernels: column-pivoted Householder QR least squares and
//! Cholesky factorization. Sizes here are tens of columns, so clarity wins
//! over blocking.

/// Least-squares solution of `A β ≈ b` for column-major `a` (each inner
/// vector a column of length `n`).
pub(crate) struct LstsqSolution {
    pub beta: Vec<f64>,
    /// Columns judged linearly dependent; their coefficient is 0.
    pub dropped: Vec<usize>,
}

pub(crate) fn lstsq_pivoted(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> LstsqSolution {
    let p = a.len();
    let n = b.len();
    let steps = p.min(n);
    let mut perm: Vec<usize> = (0..p).collect();
    let mut norms: Vec<f64> = a.iter().map(|c| dot(c, c)).collect();
    let mut rank = 0;
    let mut first_diag = 0.0;
    let tol_factor = (n.max(p) as f64) * f64::EPSILON * 10.0;

    for k in 0..steps {
        // Pivot: remaining column with the largest residual norm.
        let mut best = k;
        for j in k + 1..p {
            if norms[j] > norms[best] {
                best = j;
            }
        }
        a.swap(k, best);
        norms.swap(k, best);
        perm.swap(k, best);

        let col = &a[k];
        let sigma: f64 = col[k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if k == 0 {
            first_diag = sigma;
        }
        if sigma <= tol_factor * first_diag || sigma == 0.0 {
            break;
        }
        let alpha = if col[k] > 0.0 { -sigma } else { sigma };
        let mut v: Vec<f64> = col[k..].to_vec();
        v[0] -= alpha;
        let vnorm2 = dot(&v, &v);
        rank += 1;
        if vnorm2 == 0.0 {
            continue;
        }
        for column in a.iter_mut().skip(k) {
            apply_reflector(&v, vnorm2, &mut column[k..]);
        }
        apply_reflector(&v, vnorm2, &mut b[k..]);
        a[k][k] = alpha;
        for j in k + 1..p {
            norms[j] = a[j][k + 1..].iter().map(|v| v * v).sum();
        }
    }

    // Back substitution on the leading rank×rank block.
    let mut z = vec![0.0; rank];
    for i in (0..rank).rev() {
        let mut s = b[i];
        for (j, zj) in z.iter().enumerate().skip(i + 1) {
            s -= a[j][i] * zj;
        }
        z[i] = s / a[i][i];
    }
    let mut beta = vec![0.0; p];
    for (i, &zi) in z.iter().enumerate() {
        beta[perm[i]] = zi;
    }
    let mut dropped: Vec<usize> = perm[rank..].to_vec();
    dropped.sort_unstable();
    LstsqSolution { beta, dropped }
}

fn apply_reflector(v: &[f64], vnorm2: f64, x: &mut [f64]) {
    let s = 2.0 * dot(v, x) / vnorm2;
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi -= s * vi;
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lower-triangular Cholesky factor of a symmetric positive definite
/// row-major `p×p` matrix; `None` when a pivot is not positive.
pub(crate) fn cholesky(a: &[f64], p: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i * p + i] = s.sqrt();
            } else {
                l[i * p + j] = s / l[j * p + j];
            }
        }
    }
    Some(l)
}

/// Solves `L Lᵀ x = b` given the factor from [`cholesky`].
pub(crate) fn cholesky_solve(l: &[f64], p: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; p];
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * p + k] * y[k];
        }
        y[i] = s / l[i * p + i];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = y[i];
        for k in i + 1..p {
            s -= l[k * p + i] * x[k];
        }
        x[i] = s / l[i * p + i];
    }
    x
}

/// Inverse of an SPD matrix from its Cholesky factor.
pub(crate) fn cholesky_inverse(l: &[f64], p: usize) -> Vec<f64> {
    let mut inv = vec![0.0; p * p];
    let mut e = vec![0.0; p];
    for j in 0..p {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        let col = cholesky_solve(l, p, &e);
        for i in 0..p {
            inv[i * p + j] = col[i];
        }
    }
    // Symmetrize away rounding asymmetry.
    for i in 0..p {
        for j in 0..i {
            let m = 0.5 * (inv[i * p + j] + inv[j * p + i]);
            inv[i * p + j] = m;
            inv[j * p + i] = m;
        }
    }
    inv
}

/// SPD solve with one step of iterative refinement.
pub(crate) fn spd_solve(a: &[f64], p: usize, b: &[f64]) -> Option<Vec<f64>> {
    let l = cholesky(a, p)?;
    let mut x = cholesky_solve(&l, p, b);
    let r: Vec<f64> = (0..p)
        .map(|i| b[i] - dot(&a[i * p..(i + 1) * p], &x))
        .collect();
    let dx = cholesky_solve(&l, p, &r);
    for (xi, d) in x.iter_mut().zip(dx) {
        *xi += d;
    }
    Some(x)
}

/// Dense square solve by Gaussian elimination with partial pivoting.
pub(crate) fn solve_square(mut a: Vec<f64>, p: usize, mut b: Vec<f64>) -> Option<Vec<f64>> {
    for k in 0..p {
        let piv = (k..p).max_by(|&i, &j| a[i * p + k].abs().total_cmp(&a[j * p + k].abs()))?;
        if a[piv * p + k] == 0.0 {
            return None;
        }
        if piv != k {
            for j in 0..p {
                a.swap(k * p + j, piv * p + j);
            }
            b.swap(k, piv);
        }
        for i in k + 1..p {
            let f = a[i * p + k] / a[k * p + k];
            if f != 0.0 {
                for j in k..p {
                    a[i * p + j] -= f * a[k * p + j];
                }
                b[i] -= f * b[k];
            }
        }
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = b[i];
        for j in i + 1..p {
            s -= a[i * p + j] * x[j];
        }
        x[i] = s / a[i * p + i];
    }
    Some(x)
}
