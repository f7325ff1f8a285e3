//! Logarithmic barriers of the supported cones.

use nalgebra::{Cholesky, DMatrix};

use super::{ConeConstraint, ConeKind};

/// Position of entry `(i, j)`, `i >= j`, in the packed lower triangle.
pub fn psd_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i >= j { (i, j) } else { (j, i) };
    j * n - j * j.saturating_sub(1) / 2 + (i - j)
}

pub(super) fn degree(c: &ConeConstraint) -> f64 {
    match c.kind {
        ConeKind::Nonneg => c.rows.len() as f64,
        ConeKind::SecondOrder => 2.0,
        ConeKind::Exponential => 3.0,
        ConeKind::Psd { n } => n as f64,
    }
}

fn unpack(n: usize, s: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v = s[psd_index(n, i, j)];
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Barrier value, or `None` outside the open cone.
pub(super) fn value(kind: ConeKind, s: &[f64]) -> Option<f64> {
    match kind {
        ConeKind::Nonneg => {
            let mut f = 0.0;
            for &v in s {
                if !(v > 0.0) {
                    return None;
                }
                f -= v.ln();
            }
            Some(f)
        }
        ConeKind::SecondOrder => {
            let t = s[0];
            let d = t * t - s[1..].iter().map(|u| u * u).sum::<f64>();
            (t > 0.0 && d > 0.0).then(|| -d.ln())
        }
        ConeKind::Exponential => {
            let (x, y, z) = (s[0], s[1], s[2]);
            if !(y > 0.0 && z > 0.0) {
                return None;
            }
            let psi = y * (z / y).ln() - x;
            (psi > 0.0).then(|| -psi.ln() - y.ln() - z.ln())
        }
        ConeKind::Psd { n } => {
            let chol = Cholesky::new(unpack(n, s))?;
            let l = chol.l_dirty();
            Some(-2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>())
        }
    }
}

/// Value, gradient and Hessian with respect to the cone rows.
pub(super) fn derivatives(
    kind: ConeKind,
    s: &[f64],
    grad: &mut [f64],
    hess: &mut DMatrix<f64>,
) -> Option<f64> {
    let m = s.len();
    hess.fill(0.0);
    match kind {
        ConeKind::Nonneg => {
            let mut f = 0.0;
            for i in 0..m {
                let v = s[i];
                if !(v > 0.0) {
                    return None;
                }
                f -= v.ln();
                grad[i] = -1.0 / v;
                hess[(i, i)] = 1.0 / (v * v);
            }
            Some(f)
        }
        ConeKind::SecondOrder => {
            let t = s[0];
            let d = t * t - s[1..].iter().map(|u| u * u).sum::<f64>();
            if !(t > 0.0 && d > 0.0) {
                return None;
            }
            // f = -ln d, ∇d = 2Jz, ∇²d = 2J with J = diag(1, -I)
            let jz: Vec<f64> = (0..m).map(|i| if i == 0 { s[0] } else { -s[i] }).collect();
            for i in 0..m {
                grad[i] = -2.0 * jz[i] / d;
                for j in 0..m {
                    hess[(i, j)] = 4.0 * jz[i] * jz[j] / (d * d);
                }
                let jii = if i == 0 { 1.0 } else { -1.0 };
                hess[(i, i)] -= 2.0 * jii / d;
            }
            Some(-d.ln())
        }
        ConeKind::Exponential => {
            let (x, y, z) = (s[0], s[1], s[2]);
            if !(y > 0.0 && z > 0.0) {
                return None;
            }
            let lzy = (z / y).ln();
            let psi = y * lzy - x;
            if !(psi > 0.0) {
                return None;
            }
            let dpsi = [-1.0, lzy - 1.0, y / z];
            let mut d2psi = [[0.0; 3]; 3];
            d2psi[1][1] = -1.0 / y;
            d2psi[1][2] = 1.0 / z;
            d2psi[2][1] = 1.0 / z;
            d2psi[2][2] = -y / (z * z);
            for i in 0..3 {
                grad[i] = -dpsi[i] / psi;
                for j in 0..3 {
                    hess[(i, j)] = dpsi[i] * dpsi[j] / (psi * psi) - d2psi[i][j] / psi;
                }
            }
            grad[1] -= 1.0 / y;
            grad[2] -= 1.0 / z;
            hess[(1, 1)] += 1.0 / (y * y);
            hess[(2, 2)] += 1.0 / (z * z);
            Some(-psi.ln() - y.ln() - z.ln())
        }
        ConeKind::Psd { n } => {
            let chol = Cholesky::new(unpack(n, s))?;
            let f = -2.0 * (0..n).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>();
            let g = chol.inverse();
            // entry e=(i,j) expands to E = e_i e_j' (+ e_j e_i' off the diagonal)
            let terms = |i: usize, j: usize| -> ([(usize, usize); 2], usize) {
                if i == j {
                    ([(i, j), (i, j)], 1)
                } else {
                    ([(i, j), (j, i)], 2)
                }
            };
            let mut entries = Vec::with_capacity(m);
            for j in 0..n {
                for i in j..n {
                    entries.push((i, j));
                }
            }
            for (e, &(i, j)) in entries.iter().enumerate() {
                let (te, ne) = terms(i, j);
                grad[e] = -te[..ne].iter().map(|&(a, b)| g[(b, a)]).sum::<f64>();
                for (fi, &(k, l)) in entries.iter().enumerate().skip(e) {
                    let (tf, nf) = terms(k, l);
                    let mut h = 0.0;
                    for &(a, b) in &te[..ne] {
                        for &(c, d) in &tf[..nf] {
                            h += g[(b, c)] * g[(d, a)];
                        }
                    }
                    hess[(e, fi)] = h;
                    hess[(fi, e)] = h;
                }
            }
            Some(f)
        }
    }
}
