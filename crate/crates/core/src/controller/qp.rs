//! Dense primal active-set solver for the safety-filter subproblem
//!
//! ```text
//! min  sum_i h_i (u_i - t_i)^2 + rho xi^2
//! s.t. a_k . u + xi >= b_k      (every row shares one slack)
//!      lower <= u <= upper,  xi >= 0
//! ```
//!
//! The cost is separable, so every equality-constrained step reduces to a
//! system whose size is the number of working general rows.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    /// Diagonal cost weights `h_i > 0`.
    pub weights: DVector<f64>,
    /// Cost target (the nominal input).
    pub target: DVector<f64>,
    /// Slack penalty.
    pub rho: f64,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// Rows `(a_k, b_k)` meaning `a_k . u + xi >= b_k`.
    pub rows: Vec<(DVector<f64>, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    /// Most negative multiplier (zero when dual feasible).
    pub dual: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.complementarity)
            .max(self.dual)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: DVector<f64>,
    pub xi: f64,
    /// Multipliers of the general rows.
    pub row_multipliers: Vec<f64>,
    /// Multipliers of the lower / upper bounds on `u`, and of `xi >= 0`.
    pub lower_multipliers: DVector<f64>,
    pub upper_multipliers: DVector<f64>,
    pub xi_multiplier: f64,
    pub kkt: KktResiduals,
    pub iterations: usize,
}

impl QpSolution {
    pub fn objective(&self, prob: &QpProblem) -> f64 {
        prob.objective(&self.u, self.xi)
    }
}

impl QpProblem {
    pub fn dim(&self) -> usize {
        self.target.len()
    }

    pub fn objective(&self, u: &DVector<f64>, xi: f64) -> f64 {
        let d = u - &self.target;
        d.component_mul(&d).dot(&self.weights) + self.rho * xi * xi
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.weights.len() != n
            || self.lower.len() != n
            || self.upper.len() != n
            || self.rows.iter().any(|(a, _)| a.len() != n)
        {
            return Err(Error::InvalidParameter {
                name: "qp",
                reason: "dimension mismatch".into(),
            });
        }
        if !self.weights.iter().all(|w| *w > 0.0) || !(self.rho > 0.0) {
            return Err(Error::InvalidParameter {
                name: "qp",
                reason: "weights and rho must be positive".into(),
            });
        }
        for i in 0..n {
            if !(self.lower[i] <= self.upper[i]) {
                return Err(Error::QpInfeasibleBox {
                    index: i,
                    lower: self.lower[i],
                    upper: self.upper[i],
                });
            }
        }
        Ok(())
    }

    /// Smallest slack that makes `u` satisfy every row.
    pub fn required_slack(&self, u: &DVector<f64>) -> f64 {
        self.rows
            .iter()
            .map(|(a, b)| b - a.dot(u))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

const MAX_ITERATIONS: usize = 200;

struct Step {
    p: DVector<f64>,
    /// Magnitude of the gradient terms, for relative tolerances.
    scale: f64,
    /// Multipliers of working general rows, aligned with `work_rows`.
    lambda: Vec<f64>,
}

/// Working-set state over `x = (u, xi)`.
struct Work<'a> {
    prob: &'a QpProblem,
    n: usize,
    h: DVector<f64>,
    f: DVector<f64>,
    lo: DVector<f64>,
    hi: DVector<f64>,
    bound: Vec<Bound>,
    work_rows: Vec<usize>,
}

impl<'a> Work<'a> {
    fn new(prob: &'a QpProblem) -> Self {
        let n = prob.dim();
        let mut h = DVector::zeros(n + 1);
        let mut f = DVector::zeros(n + 1);
        for i in 0..n {
            h[i] = 2.0 * prob.weights[i];
            f[i] = -2.0 * prob.weights[i] * prob.target[i];
        }
        h[n] = 2.0 * prob.rho;
        let mut lo = DVector::zeros(n + 1);
        let mut hi = DVector::zeros(n + 1);
        lo.rows_mut(0, n).copy_from(&prob.lower);
        hi.rows_mut(0, n).copy_from(&prob.upper);
        lo[n] = 0.0;
        hi[n] = f64::INFINITY;
        Self {
            prob,
            n,
            h,
            f,
            lo,
            hi,
            bound: vec![Bound::Free; n + 1],
            work_rows: Vec::new(),
        }
    }

    fn row(&self, k: usize) -> DVector<f64> {
        let (a, _) = &self.prob.rows[k];
        let mut c = DVector::zeros(self.n + 1);
        c.rows_mut(0, self.n).copy_from(a);
        c[self.n] = 1.0;
        c
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.h.component_mul(x) + &self.f
    }

    /// Minimize the quadratic model in the null space of the working set.
    fn step(&self, x: &DVector<f64>) -> Result<Step> {
        let g = self.gradient(x);
        let free: Vec<usize> = (0..=self.n).filter(|&i| self.bound[i] == Bound::Free).collect();
        let m = self.work_rows.len();
        let rows: Vec<DVector<f64>> = self.work_rows.iter().map(|&k| self.row(k)).collect();
        let mut lambda = vec![0.0; m];
        if m > 0 {
            // (C_F H_F^-1 C_F') lambda = C_F H_F^-1 g_F
            let mut s = DMatrix::zeros(m, m);
            let mut rhs = DVector::zeros(m);
            for (r, cr) in rows.iter().enumerate() {
                for &i in &free {
                    rhs[r] += cr[i] * g[i] / self.h[i];
                }
                for (c, cc) in rows.iter().enumerate() {
                    for &i in &free {
                        s[(r, c)] += cr[i] * cc[i] / self.h[i];
                    }
                }
            }
            let sol = s
                .lu()
                .solve(&rhs)
                .ok_or(Error::QpNoConverge {
                    iterations: 0,
                    residual: f64::NAN,
                })?;
            lambda.copy_from_slice(sol.as_slice());
        }
        let mut p = DVector::zeros(self.n + 1);
        let mut scale = 1.0f64;
        for &i in &free {
            let mut ct_l = 0.0;
            let mut mag = g[i].abs();
            for (r, cr) in rows.iter().enumerate() {
                ct_l += cr[i] * lambda[r];
                mag += (cr[i] * lambda[r]).abs();
            }
            p[i] = -(g[i] - ct_l) / self.h[i];
            scale = scale.max(mag);
        }
        Ok(Step { p, scale, lambda })
    }

    /// Bound multipliers implied by stationarity at `x` given row multipliers.
    fn bound_multipliers(&self, x: &DVector<f64>, lambda: &[f64]) -> DVector<f64> {
        let g = self.gradient(x);
        let mut r = g.clone();
        for (idx, &k) in self.work_rows.iter().enumerate() {
            r -= self.row(k) * lambda[idx];
        }
        // lower bound row is +e_i, upper is -e_i
        DVector::from_fn(self.n + 1, |i, _| match self.bound[i] {
            Bound::Free => 0.0,
            Bound::Lower => r[i],
            Bound::Upper => -r[i],
        })
    }
}

/// Solve from `warm` (or the clamped target) with a primal active-set method.
pub fn solve_qp(prob: &QpProblem, warm: Option<&DVector<f64>>) -> Result<QpSolution> {
    prob.validate()?;
    let mut w = Work::new(prob);
    let n = w.n;
    let start = warm.unwrap_or(&prob.target);
    let mut x = DVector::zeros(n + 1);
    for i in 0..n {
        x[i] = start[i].clamp(prob.lower[i], prob.upper[i]);
        if prob.lower[i] == prob.upper[i] {
            w.bound[i] = Bound::Lower;
        }
    }
    x[n] = prob.required_slack(&x.rows(0, n).into_owned());

    for it in 0..MAX_ITERATIONS {
        let step = w.step(&x)?;
        let scale = step.scale;
        if step.p.component_mul(&w.h).amax() <= 1e-11 * scale {
            let mu = w.bound_multipliers(&x, &step.lambda);
            // most negative multiplier among removable constraints
            let mut worst: Option<(bool, usize, f64)> = None;
            for (idx, &l) in step.lambda.iter().enumerate() {
                if l < worst.map_or(-1e-12 * scale, |v| v.2) {
                    worst = Some((true, idx, l));
                }
            }
            for i in 0..=n {
                let fixed = i < n && prob.lower[i] == prob.upper[i];
                if w.bound[i] != Bound::Free && !fixed && mu[i] < worst.map_or(-1e-12 * scale, |v| v.2) {
                    worst = Some((false, i, mu[i]));
                }
            }
            match worst {
                None => return Ok(finish(&w, x, &step.lambda, mu, it + 1)),
                Some((true, idx, _)) => {
                    w.work_rows.remove(idx);
                }
                Some((false, i, _)) => w.bound[i] = Bound::Free,
            }
            continue;
        }

        // ratio test over constraints outside the working set
        let mut alpha = 1.0;
        let mut block: Option<(bool, usize, Bound)> = None;
        for i in 0..=n {
            if w.bound[i] != Bound::Free {
                continue;
            }
            if step.p[i] < 0.0 && w.lo[i].is_finite() {
                let a = (w.lo[i] - x[i]) / step.p[i];
                if a < alpha {
                    alpha = a.max(0.0);
                    block = Some((false, i, Bound::Lower));
                }
            } else if step.p[i] > 0.0 && w.hi[i].is_finite() {
                let a = (w.hi[i] - x[i]) / step.p[i];
                if a < alpha {
                    alpha = a.max(0.0);
                    block = Some((false, i, Bound::Upper));
                }
            }
        }
        for k in 0..prob.rows.len() {
            if w.work_rows.contains(&k) {
                continue;
            }
            let c = w.row(k);
            let cp = c.dot(&step.p);
            if cp < 0.0 {
                let a = (prob.rows[k].1 - c.dot(&x)) / cp;
                if a < alpha {
                    alpha = a.max(0.0);
                    block = Some((true, k, Bound::Free));
                }
            }
        }
        x += &step.p * alpha;
        match block {
            Some((false, i, b)) => {
                w.bound[i] = b;
                x[i] = if b == Bound::Lower { w.lo[i] } else { w.hi[i] };
            }
            Some((true, k, _)) => w.work_rows.push(k),
            None => {}
        }
    }
    let kkt = kkt_residuals(prob, &x.rows(0, n).into_owned(), x[n], None);
    Err(Error::QpNoConverge {
        iterations: MAX_ITERATIONS,
        residual: kkt.max(),
    })
}

fn finish(w: &Work, x: DVector<f64>, lambda: &[f64], mu: DVector<f64>, iterations: usize) -> QpSolution {
    let n = w.n;
    let prob = w.prob;
    let mut row_multipliers = vec![0.0; prob.rows.len()];
    for (idx, &k) in w.work_rows.iter().enumerate() {
        row_multipliers[k] = lambda[idx];
    }
    let mut lower = DVector::zeros(n);
    let mut upper = DVector::zeros(n);
    for i in 0..n {
        match w.bound[i] {
            Bound::Lower => lower[i] = mu[i],
            Bound::Upper => upper[i] = mu[i],
            Bound::Free => {}
        }
        if prob.lower[i] == prob.upper[i] && mu[i] < 0.0 {
            // a fixed variable's multiplier belongs to whichever side is binding
            upper[i] = -mu[i];
            lower[i] = 0.0;
        }
    }
    let xi_multiplier = if w.bound[n] == Bound::Lower { mu[n] } else { 0.0 };
    let u = x.rows(0, n).into_owned();
    let xi = x[n];
    let duals = Duals {
        rows: &row_multipliers,
        lower: &lower,
        upper: &upper,
        xi: xi_multiplier,
    };
    let kkt = kkt_residuals(prob, &u, xi, Some(&duals));
    QpSolution {
        u,
        xi,
        row_multipliers,
        lower_multipliers: lower,
        upper_multipliers: upper,
        xi_multiplier,
        kkt,
        iterations,
    }
}

pub struct Duals<'a> {
    pub rows: &'a [f64],
    pub lower: &'a DVector<f64>,
    pub upper: &'a DVector<f64>,
    pub xi: f64,
}

/// KKT residuals of a candidate primal-dual pair, in the infinity norm.
/// Stationarity is relative to the largest gradient term.
pub fn kkt_residuals(
    prob: &QpProblem,
    u: &DVector<f64>,
    xi: f64,
    duals: Option<&Duals>,
) -> KktResiduals {
    let n = prob.dim();
    let mut primal: f64 = (-xi).max(0.0);
    for i in 0..n {
        primal = primal
            .max(prob.lower[i] - u[i])
            .max(u[i] - prob.upper[i]);
    }
    for (a, b) in &prob.rows {
        primal = primal.max(b - a.dot(u) - xi);
    }
    let Some(d) = duals else {
        return KktResiduals {
            stationarity: f64::INFINITY,
            primal,
            complementarity: f64::INFINITY,
            dual: f64::INFINITY,
        };
    };
    let mut grad_u = DVector::from_fn(n, |i, _| 2.0 * prob.weights[i] * (u[i] - prob.target[i]));
    let mut grad_xi = 2.0 * prob.rho * xi;
    let mut scale = 1.0f64.max(grad_u.amax()).max(grad_xi.abs());
    let mut comp: f64 = 0.0;
    let mut dual: f64 = 0.0;
    for ((a, b), &l) in prob.rows.iter().zip(d.rows) {
        grad_u -= a * l;
        grad_xi -= l;
        scale = scale.max((a * l).amax());
        comp = comp.max((l * (a.dot(u) + xi - b)).abs());
        dual = dual.max(-l);
    }
    for i in 0..n {
        grad_u[i] -= d.lower[i] - d.upper[i];
        scale = scale.max(d.lower[i].abs()).max(d.upper[i].abs());
        comp = comp
            .max((d.lower[i] * (u[i] - prob.lower[i])).abs())
            .max((d.upper[i] * (prob.upper[i] - u[i])).abs());
        dual = dual.max(-d.lower[i]).max(-d.upper[i]);
    }
    grad_xi -= d.xi;
    comp = comp.max((d.xi * xi).abs());
    dual = dual.max(-d.xi);
    KktResiduals {
        stationarity: grad_u.amax().max(grad_xi.abs()) / scale,
        primal: primal.max(0.0),
        complementarity: comp,
        dual: dual.max(0.0),
    }
}

/// Re-derive the KKT residuals of a returned solution from its own multipliers.
pub fn verify_solution(prob: &QpProblem, sol: &QpSolution) -> KktResiduals {
    let d = Duals {
        rows: &sol.row_multipliers,
        lower: &sol.lower_multipliers,
        upper: &sol.upper_multipliers,
        xi: sol.xi_multiplier,
    };
    kkt_residuals(prob, &sol.u, sol.xi, Some(&d))
}

/// Exhaustive oracle: enumerate every bound pattern of `(u, xi)` and every
/// subset of active rows, solve each equality-constrained problem in closed
/// form and keep the best feasible candidate. Exponential; for tests only.
pub fn enumerate_qp(prob: &QpProblem) -> Option<(DVector<f64>, f64, f64)> {
    let n = prob.dim();
    let m = prob.rows.len();
    let nv = n + 1;
    let mut h = DVector::zeros(nv);
    let mut t = DVector::zeros(nv);
    for i in 0..n {
        h[i] = 2.0 * prob.weights[i];
        t[i] = prob.target[i];
    }
    h[n] = 2.0 * prob.rho;
    let rows: Vec<DVector<f64>> = prob
        .rows
        .iter()
        .map(|(a, _)| {
            let mut c = DVector::zeros(nv);
            c.rows_mut(0, n).copy_from(a);
            c[n] = 1.0;
            c
        })
        .collect();
    let mut best: Option<(DVector<f64>, f64, f64)> = None;
    let patterns = 3usize.pow(n as u32) * 2;
    let mut state = vec![0u8; nv];
    for code in 0..patterns {
        let mut c = code;
        for (i, s) in state.iter_mut().enumerate() {
            if i < n {
                *s = (c % 3) as u8;
                c /= 3;
            } else {
                *s = (c % 2) as u8;
            }
        }
        let mut fixed = DVector::zeros(nv);
        let mut is_fixed = vec![false; nv];
        for i in 0..nv {
            match state[i] {
                1 => {
                    is_fixed[i] = true;
                    fixed[i] = if i < n { prob.lower[i] } else { 0.0 };
                }
                2 => {
                    is_fixed[i] = true;
                    fixed[i] = prob.upper[i];
                }
                _ => {}
            }
        }
        for mask in 0..(1usize << m) {
            let act: Vec<usize> = (0..m).filter(|k| mask & (1 << k) != 0).collect();
            // x_F = t_F + H_F^-1 C_F' lambda with C x = b on the active rows
            let k = act.len();
            let mut s = DMatrix::zeros(k, k);
            let mut rhs = DVector::zeros(k);
            for (r, &kr) in act.iter().enumerate() {
                let cr = &rows[kr];
                rhs[r] = prob.rows[kr].1;
                for i in 0..nv {
                    if is_fixed[i] {
                        rhs[r] -= cr[i] * fixed[i];
                    } else {
                        rhs[r] -= cr[i] * t[i];
                    }
                }
                for (cidx, &kc) in act.iter().enumerate() {
                    let cc = &rows[kc];
                    for i in 0..nv {
                        if !is_fixed[i] {
                            s[(r, cidx)] += cr[i] * cc[i] / h[i];
                        }
                    }
                }
            }
            let lambda = if k > 0 {
                match s.lu().solve(&rhs) {
                    Some(l) => l,
                    None => continue,
                }
            } else {
                DVector::zeros(0)
            };
            let mut x = DVector::zeros(nv);
            for i in 0..nv {
                if is_fixed[i] {
                    x[i] = fixed[i];
                } else {
                    let mut v = t[i];
                    for (r, &kr) in act.iter().enumerate() {
                        v += rows[kr][i] * lambda[r] / h[i];
                    }
                    x[i] = v;
                }
            }
            let u = x.rows(0, n).into_owned();
            let xi = x[n];
            let tol = 1e-9;
            let feasible = xi >= -tol
                && (0..n).all(|i| u[i] >= prob.lower[i] - tol && u[i] <= prob.upper[i] + tol)
                && prob.rows.iter().all(|(a, b)| a.dot(&u) + xi >= b - tol);
            if feasible {
                let obj = prob.objective(&u, xi);
                if best.as_ref().map_or(true, |b| obj < b.2) {
                    best = Some((u, xi, obj));
                }
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn simple(n: usize) -> QpProblem {
        QpProblem {
            weights: DVector::from_element(n, 1.0),
            target: DVector::from_fn(n, |i, _| 0.1 * i as f64),
            rho: 1e3,
            lower: DVector::from_element(n, -1.0),
            upper: DVector::from_element(n, 1.0),
            rows: vec![],
        }
    }

    #[test]
    fn unconstrained_interior_returns_target() {
        let p = simple(7);
        let s = solve_qp(&p, None).unwrap();
        assert_eq!(s.u, p.target);
        assert_eq!(s.xi, 0.0);
        assert!(s.kkt.max() < 1e-12);
    }

    #[test]
    fn single_active_bound() {
        let mut p = simple(3);
        p.target[1] = 2.0;
        let s = solve_qp(&p, None).unwrap();
        assert_eq!(s.u[1], 1.0);
        assert!(s.upper_multipliers[1] > 0.0);
        assert!(s.kkt.max() < 1e-9);
    }

    #[test]
    fn single_row_projection() {
        // min (u0^2 + u1^2) + rho xi^2 s.t. u0 + u1 + xi >= 1
        let mut p = simple(2);
        p.target = DVector::zeros(2);
        p.rho = 1e6;
        p.rows = vec![(DVector::from_vec(vec![1.0, 1.0]), 1.0)];
        let s = solve_qp(&p, None).unwrap();
        // stationarity: 2 u_i = l and 2 rho xi = l
        let xi = 1.0 / (1.0 + 2.0 * 1e6);
        assert!((s.xi - xi).abs() < 1e-12);
        assert!((s.u[0] - (1.0 - xi) / 2.0).abs() < 1e-12);
        assert!(s.kkt.max() < 1e-6);
    }

    #[test]
    fn infeasible_box_rejected() {
        let mut p = simple(2);
        p.lower[0] = 2.0;
        assert!(matches!(solve_qp(&p, None), Err(Error::QpInfeasibleBox { index: 0, .. })));
    }

    fn random_problem(rng: &mut ChaCha8Rng, n: usize, m: usize) -> QpProblem {
        let lower = DVector::from_fn(n, |_, _| rng.random_range(-1.0..0.0));
        let upper = DVector::from_fn(n, |i, _| lower[i] + rng.random_range(0.0..1.5));
        QpProblem {
            weights: DVector::from_fn(n, |_, _| rng.random_range(0.1..10.0)),
            target: DVector::from_fn(n, |_, _| rng.random_range(-1.5..1.5)),
            rho: 10f64.powf(rng.random_range(0.0..4.0)),
            lower,
            upper,
            rows: (0..m)
                .map(|_| {
                    (
                        DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
                        rng.random_range(-0.5..1.0),
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn random_problems_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let p = random_problem(&mut rng, 7, 3);
            let s = solve_qp(&p, None).unwrap();
            let (_, _, obj) = enumerate_qp(&p).unwrap();
            let got = s.objective(&p);
            assert!((got - obj).abs() <= 1e-4 * obj.abs().max(1e-8), "{got} vs {obj}");
            assert!(s.kkt.max() < 1e-6, "{:?}", s.kkt);
            assert_eq!(verify_solution(&p, &s), s.kkt);
        }
    }

    #[test]
    fn warm_start_gives_same_answer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let p = random_problem(&mut rng, 7, 2);
            let cold = solve_qp(&p, None).unwrap();
            let warm_point = DVector::from_fn(7, |_, _| rng.random_range(-1.0..1.0));
            let warm = solve_qp(&p, Some(&warm_point)).unwrap();
            assert!((cold.u.clone() - warm.u.clone()).amax() < 1e-8);
            assert!(warm.kkt.max() < 1e-6);
        }
    }

    #[test]
    fn fixed_variables_are_respected() {
        let mut p = simple(3);
        p.lower[0] = 0.4;
        p.upper[0] = 0.4;
        p.rows = vec![(DVector::from_vec(vec![-1.0, 0.0, 0.0]), 0.0)];
        let s = solve_qp(&p, None).unwrap();
        assert_eq!(s.u[0], 0.4);
        assert!(s.xi > 0.39);
        assert!(s.kkt.max() < 1e-6, "{:?}", s.kkt);
    }
}
