//! Eigenvalues of small real matrices.
//!
//! Dimension 1 and 2 use the characteristic polynomial directly. Larger
//! matrices are balanced, reduced to upper Hessenberg form by stabilized
//! elimination, and then deflated with Francis double-shift QR sweeps. The
//! routines index a padded `(n+1) x (n+1)` buffer from 1 so the sweep logic
//! follows the classical EISPACK layout line for line.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{complex_modulus_max, Matrix};
use crate::error::{Error, Result};
use crate::numeric::NumericPolicy;

/// All eigenvalues of a square matrix and its spectral radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex64>,
    pub radius: f64,
}

impl Spectrum {
    fn from_values(mut eigenvalues: Vec<Complex64>) -> Spectrum {
        // Deterministic order: modulus descending, then real, then imaginary part.
        eigenvalues.sort_by(|a, b| {
            b.norm()
                .total_cmp(&a.norm())
                .then(b.re.total_cmp(&a.re))
                .then(b.im.total_cmp(&a.im))
        });
        let radius = complex_modulus_max(&eigenvalues);
        Spectrum { eigenvalues, radius }
    }

    pub fn min_real_part(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.re).fold(f64::INFINITY, f64::min)
    }
}

pub fn spectrum(a: &Matrix) -> Result<Spectrum> {
    let n = a.require_square("spectrum")?;
    if !a.is_finite() {
        return Err(Error::NonFinite { what: "spectrum input".into() });
    }
    let values = match n {
        0 => Vec::new(),
        1 => vec![Complex64::new(a[(0, 0)], 0.0)],
        2 => quadratic_roots(a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]).to_vec(),
        _ => {
            let mut h = Padded::from_matrix(a);
            h.balance();
            h.hessenberg();
            h.qr_eigenvalues()?
        }
    };
    Ok(Spectrum::from_values(values))
}

/// Roots of `λ² − tr λ + det` for `[[a, b], [c, d]]`.
fn quadratic_roots(a: f64, b: f64, c: f64, d: f64) -> [Complex64; 2] {
    let half_diff = 0.5 * (a - d);
    let disc = half_diff * half_diff + b * c;
    let mid = 0.5 * (a + d);
    if disc >= 0.0 {
        let s = disc.sqrt();
        // Larger-magnitude root first, then the other from the product, to
        // avoid cancellation.
        let big = mid + s.copysign(if mid == 0.0 { 1.0 } else { mid });
        let det = a * d - b * c;
        let small = if big != 0.0 { det / big } else { mid - s.copysign(mid) };
        [Complex64::new(big, 0.0), Complex64::new(small, 0.0)]
    } else {
        let s = (-disc).sqrt();
        [Complex64::new(mid, s), Complex64::new(mid, -s)]
    }
}

struct Padded {
    n: usize,
    a: Vec<f64>,
}

impl Padded {
    fn from_matrix(m: &Matrix) -> Padded {
        let n = m.rows();
        let mut a = vec![0.0; (n + 1) * (n + 1)];
        for i in 0..n {
            for j in 0..n {
                a[(i + 1) * (n + 1) + j + 1] = m[(i, j)];
            }
        }
        Padded { n, a }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * (self.n + 1) + j]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.a[i * (self.n + 1) + j]
    }

    /// Diagonal similarity scaling by powers of two so row and column norms match.
    fn balance(&mut self) {
        const RADIX: f64 = 2.0;
        let sqrdx = RADIX * RADIX;
        let n = self.n;
        let mut done = false;
        while !done {
            done = true;
            for i in 1..=n {
                let mut r = 0.0;
                let mut c = 0.0;
                for j in 1..=n {
                    if j != i {
                        c += self.at(j, i).abs();
                        r += self.at(i, j).abs();
                    }
                }
                if c != 0.0 && r != 0.0 {
                    let mut g = r / RADIX;
                    let mut f = 1.0;
                    let s = c + r;
                    while c < g {
                        f *= RADIX;
                        c *= sqrdx;
                    }
                    g = r * RADIX;
                    while c > g {
                        f /= RADIX;
                        c /= sqrdx;
                    }
                    if (c + r) / f < 0.95 * s {
                        done = false;
                        let g = 1.0 / f;
                        for j in 1..=n {
                            *self.at_mut(i, j) *= g;
                        }
                        for j in 1..=n {
                            *self.at_mut(j, i) *= f;
                        }
                    }
                }
            }
        }
    }

    /// Reduction to upper Hessenberg form by elimination with pivoting.
    fn hessenberg(&mut self) {
        let n = self.n;
        for m in 2..n {
            let mut x: f64 = 0.0;
            let mut i = m;
            for j in m..=n {
                if self.at(j, m - 1).abs() > x.abs() {
                    x = self.at(j, m - 1);
                    i = j;
                }
            }
            if i != m {
                for j in (m - 1)..=n {
                    let (p, q) = (self.at(i, j), self.at(m, j));
                    *self.at_mut(i, j) = q;
                    *self.at_mut(m, j) = p;
                }
                for j in 1..=n {
                    let (p, q) = (self.at(j, i), self.at(j, m));
                    *self.at_mut(j, i) = q;
                    *self.at_mut(j, m) = p;
                }
            }
            if x != 0.0 {
                for i in (m + 1)..=n {
                    let mut y = self.at(i, m - 1);
                    if y != 0.0 {
                        y /= x;
                        *self.at_mut(i, m - 1) = y;
                        for j in m..=n {
                            let v = self.at(m, j);
                            *self.at_mut(i, j) -= y * v;
                        }
                        for j in 1..=n {
                            let v = self.at(j, i);
                            *self.at_mut(j, m) += y * v;
                        }
                    }
                }
            }
        }
        // Elimination multipliers are stored below the subdiagonal; clear them.
        for i in 3..=n {
            for j in 1..(i - 1) {
                *self.at_mut(i, j) = 0.0;
            }
        }
    }

    fn qr_eigenvalues(mut self) -> Result<Vec<Complex64>> {
        let n = self.n;
        let cap = NumericPolicy::DEFAULT.qr_iterations_per_eigenvalue;
        let mut wr = vec![0.0; n + 1];
        let mut wi = vec![0.0; n + 1];

        let mut anorm = 0.0;
        for i in 1..=n {
            for j in i.saturating_sub(1).max(1)..=n {
                anorm += self.at(i, j).abs();
            }
        }
        let mut nn = n;
        let mut t = 0.0;
        while nn >= 1 {
            let mut its = 0;
            loop {
                // Look for a single small subdiagonal element.
                let mut l = nn;
                while l >= 2 {
                    let mut s = self.at(l - 1, l - 1).abs() + self.at(l, l).abs();
                    if s == 0.0 {
                        s = anorm;
                    }
                    if self.at(l, l - 1).abs() + s == s {
                        *self.at_mut(l, l - 1) = 0.0;
                        break;
                    }
                    l -= 1;
                }
                let mut x = self.at(nn, nn);
                if l == nn {
                    wr[nn] = x + t;
                    wi[nn] = 0.0;
                    nn -= 1;
                    break;
                }
                let mut y = self.at(nn - 1, nn - 1);
                let mut w = self.at(nn, nn - 1) * self.at(nn - 1, nn);
                if l == nn - 1 {
                    let p = 0.5 * (y - x);
                    let q = p * p + w;
                    let mut z = q.abs().sqrt();
                    x += t;
                    if q >= 0.0 {
                        z = p + z.copysign(p);
                        wr[nn - 1] = x + z;
                        wr[nn] = x + z;
                        if z != 0.0 {
                            wr[nn] = x - w / z;
                        }
                        wi[nn - 1] = 0.0;
                        wi[nn] = 0.0;
                    } else {
                        wr[nn - 1] = x + p;
                        wr[nn] = x + p;
                        wi[nn - 1] = -z;
                        wi[nn] = z;
                    }
                    nn = nn.saturating_sub(2);
                    break;
                }
                if its == cap {
                    return Err(Error::NoConvergence {
                        what: format!("QR eigenvalue iteration on a {n}x{n} matrix"),
                        iterations: its,
                    });
                }
                if its % 10 == 0 && its > 0 {
                    // Exceptional shift.
                    t += x;
                    for i in 1..=nn {
                        *self.at_mut(i, i) -= x;
                    }
                    let s = self.at(nn, nn - 1).abs() + self.at(nn - 1, nn - 2).abs();
                    x = 0.75 * s;
                    y = x;
                    w = -0.4375 * s * s;
                }
                its += 1;

                // Look for two consecutive small subdiagonal elements.
                let mut m = nn - 2;
                let (mut p, mut q, mut r);
                loop {
                    let z = self.at(m, m);
                    let rr = x - z;
                    let ss = y - z;
                    p = (rr * ss - w) / self.at(m + 1, m) + self.at(m, m + 1);
                    q = self.at(m + 1, m + 1) - z - rr - ss;
                    r = self.at(m + 2, m + 1);
                    let s = p.abs() + q.abs() + r.abs();
                    p /= s;
                    q /= s;
                    r /= s;
                    if m == l {
                        break;
                    }
                    let u = self.at(m, m - 1).abs() * (q.abs() + r.abs());
                    let v = p.abs() * (self.at(m - 1, m - 1).abs() + z.abs() + self.at(m + 1, m + 1).abs());
                    if u + v == v {
                        break;
                    }
                    m -= 1;
                }
                for i in (m + 2)..=nn {
                    *self.at_mut(i, i - 2) = 0.0;
                    if i != m + 2 {
                        *self.at_mut(i, i - 3) = 0.0;
                    }
                }
                // Double QR step on rows l..nn and columns m..nn.
                let mut k = m;
                while k < nn {
                    if k != m {
                        p = self.at(k, k - 1);
                        q = self.at(k + 1, k - 1);
                        r = if k != nn - 1 { self.at(k + 2, k - 1) } else { 0.0 };
                        x = p.abs() + q.abs() + r.abs();
                        if x != 0.0 {
                            p /= x;
                            q /= x;
                            r /= x;
                        }
                    }
                    let s = (p * p + q * q + r * r).sqrt().copysign(p);
                    if s != 0.0 {
                        if k == m {
                            if l != m {
                                *self.at_mut(k, k - 1) = -self.at(k, k - 1);
                            }
                        } else {
                            *self.at_mut(k, k - 1) = -s * x;
                        }
                        p += s;
                        x = p / s;
                        y = q / s;
                        let z = r / s;
                        q /= p;
                        r /= p;
                        for j in k..=nn {
                            let mut pp = self.at(k, j) + q * self.at(k + 1, j);
                            if k != nn - 1 {
                                pp += r * self.at(k + 2, j);
                                *self.at_mut(k + 2, j) -= pp * z;
                            }
                            *self.at_mut(k + 1, j) -= pp * y;
                            *self.at_mut(k, j) -= pp * x;
                        }
                        let mmin = if nn < k + 3 { nn } else { k + 3 };
                        for i in l..=mmin {
                            let mut pp = x * self.at(i, k) + y * self.at(i, k + 1);
                            if k != nn - 1 {
                                pp += z * self.at(i, k + 2);
                                *self.at_mut(i, k + 2) -= pp * r;
                            }
                            *self.at_mut(i, k + 1) -= pp * q;
                            *self.at_mut(i, k) -= pp;
                        }
                    }
                    k += 1;
                }
                if l >= nn - 1 {
                    break;
                }
            }
        }
        let values: Vec<Complex64> = (1..=n).map(|i| Complex64::new(wr[i], wi[i])).collect();
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite { what: "QR eigenvalue iteration".into() });
        }
        Ok(values)
    }
}

/// Unit eigenvectors for each eigenvalue in `spec`, by complex inverse iteration.
///
/// Repeated eigenvalues yield (nearly) parallel vectors, which shows up as an
/// infinite condition number downstream.
pub fn eigenvectors(a: &Matrix, spec: &Spectrum) -> Result<Vec<Vec<Complex64>>> {
    let n = a.require_square("eigenvectors")?;
    let scale = a.max_abs().max(1.0);
    spec.eigenvalues
        .iter()
        .map(|&lambda| {
            let shift = lambda + Complex64::new(scale * 1e-10, 0.0);
            let mut m: Vec<Complex64> = a.as_slice().iter().map(|&x| Complex64::new(x, 0.0)).collect();
            for i in 0..n {
                m[i * n + i] -= shift;
            }
            let lu = ComplexLu::factor(n, m, scale * 1e-300);
            let mut v: Vec<Complex64> = (0..n).map(|i| Complex64::new(1.0 + 0.1 * i as f64, 0.0)).collect();
            for _ in 0..4 {
                v = lu.solve(&v);
                normalize(&mut v);
            }
            if v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::NonFinite { what: "inverse iteration".into() });
            }
            Ok(v)
        })
        .collect()
}

fn normalize(v: &mut [Complex64]) {
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|z| *z /= norm);
    }
}

struct ComplexLu {
    n: usize,
    lu: Vec<Complex64>,
    perm: Vec<usize>,
}

impl ComplexLu {
    /// Partial-pivot LU; exactly zero pivots are replaced by `floor`, which is
    /// the usual treatment in inverse iteration.
    fn factor(n: usize, mut lu: Vec<Complex64>, floor: f64) -> ComplexLu {
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| lu[i * n + k].norm().total_cmp(&lu[j * n + k].norm()))
                .unwrap_or(k);
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            if lu[k * n + k].norm() < floor.max(f64::MIN_POSITIVE) {
                lu[k * n + k] = Complex64::new(floor.max(f64::MIN_POSITIVE), 0.0);
            }
            let d = lu[k * n + k];
            for i in k + 1..n {
                let m = lu[i * n + k] / d;
                lu[i * n + k] = m;
                for j in k + 1..n {
                    let u = lu[k * n + j];
                    lu[i * n + j] -= m * u;
                }
            }
        }
        ComplexLu { n, lu, perm }
    }

    fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut x: Vec<Complex64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                let t = self.lu[i * n + j] * x[j];
                x[i] -= t;
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let t = self.lu[i * n + j] * x[j];
                x[i] -= t;
            }
            x[i] /= self.lu[i * n + i];
        }
        x
    }
}

/// 2-norm condition number of the complex matrix whose columns are `cols`.
///
/// Uses the real embedding `[[Re, -Im], [Im, Re]]`, whose singular values are
/// those of the complex matrix, each repeated twice.
pub fn condition_number_complex(cols: &[Vec<Complex64>]) -> Result<f64> {
    let n = cols.len();
    if n == 0 {
        return Ok(1.0);
    }
    let mut emb = Matrix::zeros(2 * n, 2 * n);
    for (j, col) in cols.iter().enumerate() {
        if col.len() != n {
            return Err(Error::dims("condition_number_complex", "columns must form a square matrix"));
        }
        for (i, z) in col.iter().enumerate() {
            emb[(i, j)] = z.re;
            emb[(i, j + n)] = -z.im;
            emb[(i + n, j)] = z.im;
            emb[(i + n, j + n)] = z.re;
        }
    }
    super::condition_number(&emb)
}
