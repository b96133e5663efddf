use crate::error::{Error, Result};

/// LU factorization with partial pivoting of a row-major `n×n` matrix.
struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    fn factor(a: &[f64], n: usize) -> Result<Self> {
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| lu[i * n + k].abs().total_cmp(&lu[j * n + k].abs())).expect("k < n");
            if lu[p * n + k].abs() <= scale * 1e-14 {
                return Err(Error::Singular(format!("pivot {k} vanishes")));
            }
            if p != k {
                for c in 0..n {
                    lu.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for i in k + 1..n {
                let f = lu[i * n + k] / pivot;
                lu[i * n + k] = f;
                if f != 0.0 {
                    for c in k + 1..n {
                        lu[i * n + c] -= f * lu[k * n + c];
                    }
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.lu[i * n + j] * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| self.lu[i * n + j] * x[j]).sum();
            x[i] = (x[i] - s) / self.lu[i * n + i];
        }
        x
    }
}

pub(crate) fn mat_vec(a: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    a.chunks(n).map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

/// Solves `(A + λI)·x = b` for a row-major square `A`, with one step of
/// iterative refinement. Returns `x` and the residual norm.
pub fn solve_damped(a: &[f64], b: &[f64], damping: f64) -> Result<(Vec<f64>, f64)> {
    let n = b.len();
    if a.len() != n * n {
        return Err(Error::shape("solve_damped", format!("matrix of {} entries for {n} unknowns", a.len())));
    }
    let mut m = a.to_vec();
    for i in 0..n {
        m[i * n + i] += damping;
    }
    if m.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("solve_damped"));
    }
    let lu = Lu::factor(&m, n)?;
    let mut x = lu.solve(b);
    let r: Vec<f64> = mat_vec(&m, &x).iter().zip(b).map(|(ax, bi)| bi - ax).collect();
    let dx = lu.solve(&r);
    x.iter_mut().zip(dx).for_each(|(xi, d)| *xi += d);
    let residual = mat_vec(&m, &x).iter().zip(b).map(|(ax, bi)| (bi - ax).powi(2)).sum::<f64>().sqrt();
    if !residual.is_finite() {
        return Err(Error::Singular("non-finite residual".into()));
    }
    Ok((x, residual))
}
