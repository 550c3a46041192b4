use nalgebra::{DMatrix, DVector};

/// Direct solves above this many states fall back to fixed-point iteration.
pub(crate) const DIRECT_SOLVE_LIMIT: usize = 2000;

pub(crate) const RESIDUAL_TOL: f64 = 1e-10;

/// Solves `(I - gamma P) x = b`, or `(I - gamma P^T) x = b` when
/// `transpose` is set. `p` is a dense row-major `n x n` stochastic matrix.
pub(crate) fn solve_discounted(p: &[f64], b: &[f64], gamma: f64, transpose: bool) -> Vec<f64> {
    let n = b.len();
    if n <= DIRECT_SOLVE_LIMIT {
        if let Some(x) = direct(p, b, gamma, transpose) {
            if residual(p, b, &x, gamma, transpose) <= RESIDUAL_TOL {
                return x;
            }
            return iterate(p, b, gamma, transpose, x);
        }
    }
    iterate(p, b, gamma, transpose, vec![0.0; n])
}

fn direct(p: &[f64], b: &[f64], gamma: f64, transpose: bool) -> Option<Vec<f64>> {
    let n = b.len();
    let mut a = DMatrix::from_row_slice(n, n, p);
    if transpose {
        a.transpose_mut();
    }
    a *= -gamma;
    for k in 0..n {
        a[(k, k)] += 1.0;
    }
    let x = a.lu().solve(&DVector::from_column_slice(b))?;
    Some(x.iter().copied().collect())
}

fn apply(p: &[f64], x: &[f64], transpose: bool) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    if transpose {
        for (i, &xi) in x.iter().enumerate() {
            for (o, &pij) in out.iter_mut().zip(&p[i * n..(i + 1) * n]) {
                *o += pij * xi;
            }
        }
    } else {
        for (i, o) in out.iter_mut().enumerate() {
            *o = p[i * n..(i + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
    out
}

/// Max-norm residual of `x = b + gamma P x`.
pub(crate) fn residual(p: &[f64], b: &[f64], x: &[f64], gamma: f64, transpose: bool) -> f64 {
    apply(p, x, transpose)
        .iter()
        .zip(b)
        .zip(x)
        .map(|((px, bi), xi)| (bi + gamma * px - xi).abs())
        .fold(0.0, f64::max)
}

/// Fixed-point iteration with the contraction-rate iteration cap.
fn iterate(p: &[f64], b: &[f64], gamma: f64, transpose: bool, mut x: Vec<f64>) -> Vec<f64> {
    let scale = b.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let cap = ((RESIDUAL_TOL * (1.0 - gamma) / scale).ln() / gamma.ln()).ceil().max(1.0) as usize;
    for _ in 0..cap.saturating_mul(2) {
        let px = apply(p, &x, transpose);
        let next: Vec<f64> = b.iter().zip(&px).map(|(bi, v)| bi + gamma * v).collect();
        let delta = next
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        x = next;
        if delta * gamma <= RESIDUAL_TOL {
            break;
        }
    }
    x
}
