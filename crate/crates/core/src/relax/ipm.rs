//! Primal-dual interior point method (Mehrotra predictor-corrector) for
//! `min c'x + x'Hx/2  s.t.  Ax = b, 0 <= x <= u` with diagonal `H`. The
//! normal equations are factored with an envelope Cholesky, so constraint rows
//! should be ordered to keep coupling local.

/// Standard-form problem. Columns are stored as sparse `(row, value)` lists.
#[derive(Debug, Clone, Default)]
pub struct StdForm {
    pub rows: usize,
    pub cols: Vec<Vec<(usize, f64)>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
    pub u: Vec<f64>,
}

impl StdForm {
    pub fn n(&self) -> usize {
        self.cols.len()
    }

    pub fn push_col(&mut self, entries: Vec<(usize, f64)>, c: f64, h: f64, u: f64) -> usize {
        self.cols.push(entries);
        self.c.push(c);
        self.h.push(h);
        self.u.push(u);
        self.cols.len() - 1
    }

    fn ax(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for (j, col) in self.cols.iter().enumerate() {
            for &(i, a) in col {
                out[i] += a * x[j];
            }
        }
        out
    }

    fn aty(&self, y: &[f64]) -> Vec<f64> {
        self.cols.iter().map(|col| col.iter().map(|&(i, a)| a * y[i]).sum()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct IpmResult {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub primal_res: f64,
    pub dual_res: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct IpmOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IpmOptions {
    fn default() -> Self {
        IpmOptions { tol: 1e-9, max_iter: 200 }
    }
}

/// Lower-triangular envelope (skyline) storage of a symmetric matrix.
struct Envelope {
    first: Vec<usize>,
    start: Vec<usize>,
    vals: Vec<f64>,
}

impl Envelope {
    fn new(first: Vec<usize>) -> Self {
        let mut start = Vec::with_capacity(first.len() + 1);
        let mut total = 0;
        for (i, &f) in first.iter().enumerate() {
            start.push(total);
            total += i - f + 1;
        }
        start.push(total);
        Envelope { first, start, vals: vec![0.0; total] }
    }

    #[inline]
    fn idx(&self, i: usize, k: usize) -> usize {
        self.start[i] + k - self.first[i]
    }

    fn clear(&mut self) {
        self.vals.iter_mut().for_each(|v| *v = 0.0);
    }

    /// In-place Cholesky. Pivots that collapse are replaced by a huge value,
    /// which zeroes the corresponding component of the solution.
    fn factor(&mut self) {
        let m = self.first.len();
        let max_diag = (0..m).map(|i| self.vals[self.idx(i, i)]).fold(0.0f64, f64::max).max(1e-300);
        for i in 0..m {
            let fi = self.first[i];
            for k in fi..=i {
                let fk = self.first[k];
                let p0 = fi.max(fk);
                let mut sum = self.vals[self.idx(i, k)];
                let ri = self.idx(i, p0);
                let rk = self.idx(k, p0);
                for p in 0..k - p0 {
                    sum -= self.vals[ri + p] * self.vals[rk + p];
                }
                if k < i {
                    let d = self.vals[self.idx(k, k)];
                    let at = self.idx(i, k);
                    self.vals[at] = sum / d;
                } else {
                    let at = self.idx(i, i);
                    self.vals[at] = if sum <= 1e-30 * max_diag { 1e64 } else { sum.sqrt() };
                }
            }
        }
    }

    fn solve(&self, rhs: &mut [f64]) {
        let m = self.first.len();
        for i in 0..m {
            let fi = self.first[i];
            let base = self.idx(i, fi);
            let mut sum = rhs[i];
            for k in fi..i {
                sum -= self.vals[base + k - fi] * rhs[k];
            }
            rhs[i] = sum / self.vals[self.idx(i, i)];
        }
        for i in (0..m).rev() {
            rhs[i] /= self.vals[self.idx(i, i)];
            let v = rhs[i];
            let fi = self.first[i];
            let base = self.idx(i, fi);
            for k in fi..i {
                rhs[k] -= self.vals[base + k - fi] * v;
            }
        }
    }
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Ruiz equilibration of the columns and rows of `A`; returns `(row_scale, col_scale)`.
fn equilibrate(p: &mut StdForm) -> (Vec<f64>, Vec<f64>) {
    let m = p.rows;
    let n = p.n();
    let mut rs = vec![1.0; m];
    let mut cs = vec![1.0; n];
    for _ in 0..12 {
        let mut rmax = vec![0.0f64; m];
        for col in &p.cols {
            for &(i, a) in col {
                rmax[i] = rmax[i].max(a.abs());
            }
        }
        let rfac: Vec<f64> = rmax.iter().map(|&v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 }).collect();
        for (j, col) in p.cols.iter_mut().enumerate() {
            let mut cmax = 0.0f64;
            for (i, a) in col.iter_mut() {
                *a *= rfac[*i];
                cmax = cmax.max(a.abs());
            }
            let cf = if cmax > 0.0 { 1.0 / cmax.sqrt() } else { 1.0 };
            for (_, a) in col.iter_mut() {
                *a *= cf;
            }
            cs[j] *= cf;
        }
        for i in 0..m {
            rs[i] *= rfac[i];
        }
    }
    for i in 0..m {
        p.b[i] *= rs[i];
    }
    for j in 0..n {
        p.c[j] *= cs[j];
        p.h[j] *= cs[j] * cs[j];
        p.u[j] /= cs[j];
    }
    (rs, cs)
}

/// Solves the problem; the result is expressed in the original (unscaled) variables.
pub fn solve(problem: &StdForm, opts: IpmOptions) -> IpmResult {
    let mut p = problem.clone();
    let (rs, cs) = equilibrate(&mut p);
    let obj_scale = norm_inf(&p.c).max(norm_inf(&p.h)).max(1e-8);
    p.c.iter_mut().for_each(|v| *v /= obj_scale);
    p.h.iter_mut().for_each(|v| *v /= obj_scale);

    let mut r = run(&p, opts);

    for (j, x) in r.x.iter_mut().enumerate() {
        *x *= cs[j];
    }
    for (i, y) in r.y.iter_mut().enumerate() {
        *y *= rs[i] * obj_scale;
    }
    r.dual_obj *= obj_scale;
    let x = &r.x;
    r.primal_obj = dot(&problem.c, x) + 0.5 * problem.h.iter().zip(x).map(|(h, v)| h * v * v).sum::<f64>();
    let ax = problem.ax(x);
    r.primal_res = ax.iter().zip(&problem.b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    r
}

fn run(p: &StdForm, opts: IpmOptions) -> IpmResult {
    let m = p.rows;
    let n = p.n();
    let bounded: Vec<bool> = p.u.iter().map(|u| u.is_finite()).collect();

    // envelope of A D A'
    let mut first: Vec<usize> = (0..m).collect();
    for col in &p.cols {
        if let Some(lo) = col.iter().map(|&(i, _)| i).min() {
            for &(i, _) in col {
                first[i] = first[i].min(lo);
            }
        }
    }
    let mut env = Envelope::new(first);

    let mut x = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut z = vec![1.0; n];
    let mut w = vec![0.0; n];
    for j in 0..n {
        if bounded[j] {
            x[j] = (p.u[j] / 2.0).min(1.0);
            t[j] = p.u[j] - x[j];
            w[j] = 1.0;
        } else {
            x[j] = 1.0;
        }
    }
    let mut y = vec![0.0; m];
    let bnorm = 1.0 + norm_inf(&p.b);
    let cnorm = 1.0 + norm_inf(&p.c).max(norm_inf(&p.h));
    let n_compl = (n + bounded.iter().filter(|&&b| b).count()).max(1) as f64;

    let mut result = IpmResult {
        x: x.clone(),
        y: y.clone(),
        primal_obj: f64::NAN,
        dual_obj: f64::NAN,
        primal_res: f64::INFINITY,
        dual_res: f64::INFINITY,
        iterations: 0,
        converged: false,
    };

    for iter in 0..opts.max_iter {
        let ax = p.ax(&x);
        let rb: Vec<f64> = (0..m).map(|i| p.b[i] - ax[i]).collect();
        let aty = p.aty(&y);
        let rc: Vec<f64> =
            (0..n).map(|j| p.c[j] + p.h[j] * x[j] - aty[j] - z[j] + if bounded[j] { w[j] } else { 0.0 }).collect();
        let ru: Vec<f64> = (0..n).map(|j| if bounded[j] { p.u[j] - x[j] - t[j] } else { 0.0 }).collect();
        let mut compl = dot(&x, &z);
        for j in 0..n {
            if bounded[j] {
                compl += t[j] * w[j];
            }
        }
        let mu = compl / n_compl;
        let quad = 0.5 * p.h.iter().zip(&x).map(|(h, v)| h * v * v).sum::<f64>();
        let pobj = dot(&p.c, &x) + quad;
        let mut dobj = dot(&p.b, &y) - quad;
        for j in 0..n {
            if bounded[j] {
                dobj -= p.u[j] * w[j];
            }
        }
        let pres = norm_inf(&rb).max(norm_inf(&ru)) / bnorm;
        let dres = norm_inf(&rc) / cnorm;
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs());

        result.x.clone_from(&x);
        result.y.clone_from(&y);
        result.primal_obj = pobj;
        result.dual_obj = dobj;
        result.primal_res = pres;
        result.dual_res = dres;
        result.iterations = iter;
        if pres < opts.tol && dres < opts.tol && gap < opts.tol {
            result.converged = true;
            return result;
        }
        if !(mu.is_finite() && pobj.is_finite()) || norm_inf(&x) > 1e14 {
            return result;
        }

        // D = H + Z/X + W/T
        let d: Vec<f64> = (0..n)
            .map(|j| {
                let mut v = p.h[j] + z[j] / x[j];
                if bounded[j] {
                    v += w[j] / t[j];
                }
                v.max(1e-14)
            })
            .collect();
        env.clear();
        for (j, col) in p.cols.iter().enumerate() {
            let inv = 1.0 / d[j];
            for &(i, ai) in col {
                for &(k, ak) in col {
                    if k <= i {
                        let at = env.idx(i, k);
                        env.vals[at] += ai * ak * inv;
                    }
                }
            }
        }
        env.factor();

        let solve_dir = |rxz: &[f64], rtw: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
            let rhs_x: Vec<f64> = (0..n)
                .map(|j| {
                    let mut v = -rc[j] + rxz[j] / x[j];
                    if bounded[j] {
                        v -= (rtw[j] - w[j] * ru[j]) / t[j];
                    }
                    v
                })
                .collect();
            let scaled: Vec<f64> = (0..n).map(|j| rhs_x[j] / d[j]).collect();
            let ad = p.ax(&scaled);
            let mut dy: Vec<f64> = (0..m).map(|i| rb[i] - ad[i]).collect();
            env.solve(&mut dy);
            let atdy = p.aty(&dy);
            let dx: Vec<f64> = (0..n).map(|j| (rhs_x[j] + atdy[j]) / d[j]).collect();
            let dz: Vec<f64> = (0..n).map(|j| (rxz[j] - z[j] * dx[j]) / x[j]).collect();
            let mut dt = vec![0.0; n];
            let mut dw = vec![0.0; n];
            for j in 0..n {
                if bounded[j] {
                    dt[j] = ru[j] - dx[j];
                    dw[j] = (rtw[j] - w[j] * dt[j]) / t[j];
                }
            }
            (dx, dy, dz, dt, dw)
        };
        let step_len = |v: &[f64], dv: &[f64], mask: Option<&[bool]>| -> f64 {
            let mut a = 1.0f64;
            for j in 0..v.len() {
                if mask.is_none_or(|m| m[j]) && dv[j] < 0.0 {
                    a = a.min(-v[j] / dv[j]);
                }
            }
            a
        };

        // predictor
        let rxz: Vec<f64> = (0..n).map(|j| -x[j] * z[j]).collect();
        let rtw: Vec<f64> = (0..n).map(|j| if bounded[j] { -t[j] * w[j] } else { 0.0 }).collect();
        let (dx, _, dz, dt, dw) = solve_dir(&rxz, &rtw);
        let ap = step_len(&x, &dx, None).min(step_len(&t, &dt, Some(&bounded)));
        let ad = step_len(&z, &dz, None).min(step_len(&w, &dw, Some(&bounded)));
        let mut compl_aff = 0.0;
        for j in 0..n {
            compl_aff += (x[j] + ap * dx[j]) * (z[j] + ad * dz[j]);
            if bounded[j] {
                compl_aff += (t[j] + ap * dt[j]) * (w[j] + ad * dw[j]);
            }
        }
        let mu_aff = compl_aff / n_compl;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // corrector
        let rxz: Vec<f64> = (0..n).map(|j| sigma * mu - x[j] * z[j] - dx[j] * dz[j]).collect();
        let rtw: Vec<f64> =
            (0..n).map(|j| if bounded[j] { sigma * mu - t[j] * w[j] - dt[j] * dw[j] } else { 0.0 }).collect();
        let (dx, dy, dz, dt, dw) = solve_dir(&rxz, &rtw);
        let eta = (1.0 - mu).clamp(0.9, 0.9995);
        let ap = (eta * step_len(&x, &dx, None).min(step_len(&t, &dt, Some(&bounded)))).min(1.0);
        let ad = (eta * step_len(&z, &dz, None).min(step_len(&w, &dw, Some(&bounded)))).min(1.0);
        for j in 0..n {
            x[j] += ap * dx[j];
            z[j] += ad * dz[j];
            if bounded[j] {
                t[j] += ap * dt[j];
                w[j] += ad * dw[j];
            }
        }
        for i in 0..m {
            y[i] += ad * dy[i];
        }
    }
    result.iterations = opts.max_iter;
    result
}
