//! Operator-splitting (ADMM) solver for convex QPs with diagonal cost and
//! sparse, banded constraints:
//!
//! ```text
//! minimize   ½ xᵀ diag(p) x + qᵀ x
//! subject to l ≤ A x ≤ u
//! ```
//!
//! The linear system `diag(p) + σI + Aᵀ diag(ρ) A` is factored with a banded
//! Cholesky, so every iteration costs `O(n·w²)` for half-bandwidth `w`.

#[derive(Debug, Clone)]
pub(crate) struct Row {
    pub entries: Vec<(usize, f64)>,
    pub lo: f64,
    pub hi: f64,
}

impl Row {
    pub fn new(entries: Vec<(usize, f64)>, lo: f64, hi: f64) -> Self {
        Row { entries, lo, hi }
    }

    fn is_equality(&self) -> bool {
        self.lo == self.hi
    }

    fn dot(&self, x: &[f64]) -> f64 {
        self.entries.iter().map(|&(j, a)| a * x[j]).sum()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Qp {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Settings {
    pub max_iter: usize,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub eps_infeasible: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            max_iter: 40_000,
            eps_abs: 1e-7,
            eps_rel: 1e-6,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            eps_infeasible: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Solution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// A certificate of primal infeasibility was found.
    pub infeasible: bool,
    pub primal_residual: f64,
}

/// Lower-triangular band of an SPD matrix, row-major, `w + 1` slots per row;
/// slot `w - (i - j)` holds entry `(i, j)`.
struct Band {
    n: usize,
    w: usize,
    data: Vec<f64>,
    inv_diag: Vec<f64>,
}

impl Band {
    fn zeros(n: usize, w: usize) -> Self {
        Band {
            n,
            w,
            data: vec![0.0; n * (w + 1)],
            inv_diag: Vec::new(),
        }
    }

    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        debug_assert!(j <= i && i - j <= self.w);
        &mut self.data[i * (self.w + 1) + self.w - (i - j)]
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.w + 1) + self.w - (i - j)]
    }

    /// In-place Cholesky; returns `false` if the matrix is not positive
    /// definite.
    fn factor(&mut self) -> bool {
        let w = self.w;
        for i in 0..self.n {
            let lo = i.saturating_sub(w);
            for j in lo..=i {
                let mut sum = self.get(i, j);
                let kmin = lo.max(j.saturating_sub(w));
                for k in kmin..j {
                    sum -= self.get(i, k) * self.get(j, k);
                }
                if i == j {
                    if sum <= 0.0 {
                        return false;
                    }
                    *self.at(i, i) = sum.sqrt();
                } else {
                    *self.at(i, j) = sum / self.get(j, j);
                }
            }
        }
        self.inv_diag = (0..self.n).map(|i| 1.0 / self.get(i, i)).collect();
        true
    }

    fn solve(&self, b: &mut [f64]) {
        let (n, w) = (self.n, self.w);
        let stride = w + 1;
        for i in 0..n {
            let k0 = i.saturating_sub(w);
            let row = &self.data[i * stride..(i + 1) * stride];
            let lower = &row[w - (i - k0)..w];
            let sum = lower.iter().zip(&b[k0..i]).fold(b[i], |acc, (l, x)| acc - l * x);
            b[i] = sum * self.inv_diag[i];
        }
        for i in (0..n).rev() {
            let mut sum = b[i];
            for k in i + 1..(i + stride).min(n) {
                sum -= self.data[k * stride + w - (k - i)] * b[k];
            }
            b[i] = sum * self.inv_diag[i];
        }
    }
}

/// Constraint rows packed contiguously for the iteration loop.
struct Packed {
    ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl Packed {
    fn new(rows: &[Row]) -> Self {
        let mut ptr = Vec::with_capacity(rows.len() + 1);
        ptr.push(0);
        let (mut col, mut val) = (Vec::new(), Vec::new());
        for r in rows {
            for &(j, a) in &r.entries {
                col.push(j);
                val.push(a);
            }
            ptr.push(col.len());
        }
        Packed { ptr, col, val }
    }

    fn row(&self, k: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.ptr[k], self.ptr[k + 1]);
        (&self.col[a..b], &self.val[a..b])
    }

    fn dot(&self, k: usize, x: &[f64]) -> f64 {
        let (c, v) = self.row(k);
        c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum()
    }

    fn add_scaled(&self, k: usize, s: f64, out: &mut [f64]) {
        let (c, v) = self.row(k);
        for (&j, &a) in c.iter().zip(v) {
            out[j] += a * s;
        }
    }
}

impl Qp {
    fn bandwidth(&self) -> usize {
        self.rows
            .iter()
            .map(|r| {
                let (lo, hi) = r
                    .entries
                    .iter()
                    .fold((usize::MAX, 0), |(lo, hi), &(j, _)| (lo.min(j), hi.max(j)));
                hi.saturating_sub(lo)
            })
            .max()
            .unwrap_or(0)
    }

    fn factor(&self, rho: &[f64], sigma: f64) -> Band {
        let n = self.p.len();
        let mut band = Band::zeros(n, self.bandwidth());
        for i in 0..n {
            *band.at(i, i) = self.p[i] + sigma;
        }
        for (row, &r) in self.rows.iter().zip(rho) {
            for &(i, ai) in &row.entries {
                for &(j, aj) in &row.entries {
                    if j <= i {
                        *band.at(i, j) += r * ai * aj;
                    }
                }
            }
        }
        let ok = band.factor();
        debug_assert!(ok, "KKT matrix must be positive definite");
        band
    }

    pub fn solve(&self, settings: &Settings, warm: Option<&[f64]>) -> Solution {
        let n = self.p.len();
        let m = self.rows.len();
        let mut x = warm.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
        let mut z: Vec<f64> = self.rows.iter().map(|r| r.dot(&x).clamp(r.lo, r.hi)).collect();
        let mut y = vec![0.0; m];
        let rho_scale: Vec<f64> = self
            .rows
            .iter()
            .map(|r| if r.is_equality() { 1e3 } else { 1.0 })
            .collect();
        let mut rho_bar = settings.rho;
        let mut rho: Vec<f64> = rho_scale.iter().map(|s| s * rho_bar).collect();
        let mut kkt = self.factor(&rho, settings.sigma);
        let a_mat = Packed::new(&self.rows);
        let bounds: Vec<(f64, f64)> = self.rows.iter().map(|r| (r.lo, r.hi)).collect();

        let mut rhs = vec![0.0; n];
        let mut ax = vec![0.0; m];
        let mut aty = vec![0.0; n];
        let mut primal = f64::INFINITY;
        let mut y_prev = y.clone();
        for iter in 1..=settings.max_iter {
            for i in 0..n {
                rhs[i] = settings.sigma * x[i] - self.q[i];
            }
            for k in 0..m {
                a_mat.add_scaled(k, rho[k] * z[k] - y[k], &mut rhs);
            }
            kkt.solve(&mut rhs);
            let xt = &rhs;
            for (k, &(lo, hi)) in bounds.iter().enumerate() {
                let zt = a_mat.dot(k, xt);
                let zhat = settings.alpha * zt + (1.0 - settings.alpha) * z[k];
                let znew = (zhat + y[k] / rho[k]).clamp(lo, hi);
                y[k] += rho[k] * (zhat - znew);
                z[k] = znew;
            }
            for i in 0..n {
                x[i] = settings.alpha * xt[i] + (1.0 - settings.alpha) * x[i];
            }

            if iter % 25 == 0 || iter == settings.max_iter {
                let mut ax_norm: f64 = 0.0;
                let mut z_norm: f64 = 0.0;
                primal = 0.0;
                aty.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..m {
                    ax[k] = a_mat.dot(k, &x);
                    primal = primal.max((ax[k] - z[k]).abs());
                    ax_norm = ax_norm.max(ax[k].abs());
                    z_norm = z_norm.max(z[k].abs());
                    a_mat.add_scaled(k, y[k], &mut aty);
                }
                let mut dual: f64 = 0.0;
                let (mut px_norm, mut aty_norm, mut q_norm) = (0.0f64, 0.0f64, 0.0f64);
                for i in 0..n {
                    let px = self.p[i] * x[i];
                    dual = dual.max((px + self.q[i] + aty[i]).abs());
                    px_norm = px_norm.max(px.abs());
                    aty_norm = aty_norm.max(aty[i].abs());
                    q_norm = q_norm.max(self.q[i].abs());
                }
                let eps_p = settings.eps_abs + settings.eps_rel * ax_norm.max(z_norm);
                let eps_d = settings.eps_abs + settings.eps_rel * px_norm.max(aty_norm).max(q_norm);
                if primal <= eps_p && dual <= eps_d {
                    return Solution {
                        x,
                        iterations: iter,
                        converged: true,
                        infeasible: false,
                        primal_residual: primal,
                    };
                }
                if self.infeasibility_certificate(&y, &y_prev, settings.eps_infeasible) {
                    return Solution {
                        x,
                        iterations: iter,
                        converged: false,
                        infeasible: true,
                        primal_residual: primal,
                    };
                }
                y_prev.copy_from_slice(&y);
                // rebalance primal and dual progress
                let pn = primal / ax_norm.max(z_norm).max(1e-12);
                let dn = dual / px_norm.max(aty_norm).max(q_norm).max(1e-12);
                let ratio = (pn / dn.max(1e-30)).sqrt().clamp(1e-3, 1e3);
                if !(0.5..=2.0).contains(&ratio) {
                    rho_bar = (rho_bar * ratio).clamp(1e-6, 1e6);
                    rho = rho_scale.iter().map(|s| s * rho_bar).collect();
                    kkt = self.factor(&rho, settings.sigma);
                }
            }
        }
        Solution {
            x,
            iterations: settings.max_iter,
            converged: false,
            infeasible: false,
            primal_residual: primal,
        }
    }

    /// `δy` with `Aᵀδy ≈ 0` and `uᵀδy⁺ + lᵀδy⁻ < 0` proves `l ≤ Ax ≤ u` has
    /// no solution.
    fn infeasibility_certificate(&self, y: &[f64], y_prev: &[f64], eps: f64) -> bool {
        let dy: Vec<f64> = y.iter().zip(y_prev).map(|(a, b)| a - b).collect();
        let norm = dy.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if norm < 1e-12 {
            return false;
        }
        let mut atdy = vec![0.0; self.p.len()];
        let mut support = 0.0;
        for (row, &d) in self.rows.iter().zip(&dy) {
            for &(j, a) in &row.entries {
                atdy[j] += a * d;
            }
            let bound = if d > 0.0 { row.hi } else { row.lo };
            if d != 0.0 {
                if !bound.is_finite() {
                    if d.abs() > eps * norm {
                        return false;
                    }
                    continue;
                }
                support += bound * d;
            }
        }
        let atdy_norm = atdy.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        atdy_norm <= eps * norm && support < -eps * norm
    }
}
