//! Bound-constrained minimization of `J(u) = (1/p) E_p(u) - μ(u)` subject to
//! `u_i >= l_i` on a subset of nodes. Capacity problems use `μ = 0` and
//! `l = 1` on the obstacle set; potential problems have no bounds.
//!
//! For `p != 2` the algorithms work on the smoothed energy in which every
//! `|t|^p` becomes `(t² + ε²)^{p/2}`, but convergence is always judged with
//! the exact duality map `|t|^{p-2} t`. When the smoothed problem is solved
//! yet the exact residual is still too large, `ε` is shrunk and the solve
//! continues from the current iterate.

use crate::grid::GridDomain;
use crate::linalg::BandMatrix;
use crate::sobolev::{energy_of, pairings_of};

const EPS_FLOOR: f64 = 1e-24;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
/// Coarsest smoothing used at the start of a continuation.
const EPS_START: f64 = 1e-2;
/// Extra Newton steps taken once the tolerance is met.
const POLISH_STEPS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Method {
    ActiveSet,
    Newton,
    Gradient { accelerated: bool },
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Settings {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub epsilon: f64,
    pub method: Method,
}

#[derive(Clone, Debug)]
pub(crate) struct Outcome {
    pub x: Vec<f64>,
    /// Exact-map gradient of `J` at `x` (pairings minus load).
    pub gradient: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) struct Problem<'a> {
    domain: &'a GridDomain,
    p: f64,
    load: Option<&'a [f64]>,
    lower: Vec<f64>,
    bounded: Vec<bool>,
}

impl<'a> Problem<'a> {
    pub fn new(domain: &'a GridDomain, p: f64, load: Option<&'a [f64]>, bounded: Vec<bool>) -> Self {
        let lower = bounded
            .iter()
            .map(|&b| if b { 1.0 } else { f64::NEG_INFINITY })
            .collect();
        Problem { domain, p, load, lower, bounded }
    }

    fn n(&self) -> usize {
        self.domain.len()
    }

    fn project(&self, x: &mut [f64]) {
        for (v, &l) in x.iter_mut().zip(&self.lower) {
            if *v < l {
                *v = l;
            }
        }
    }

    fn load_dot(&self, x: &[f64]) -> f64 {
        self.load.map_or(0.0, |m| m.iter().zip(x).map(|(a, b)| a * b).sum())
    }

    /// Smoothed objective.
    fn objective(&self, x: &[f64], eps: f64) -> f64 {
        let p = self.p;
        if p == 2.0 || eps == 0.0 {
            return energy_of(self.domain, x, p) / p - self.load_dot(x);
        }
        let h = self.domain.h();
        let rho = |t: f64| (t * t + eps * eps).powf(0.5 * p) - eps.powf(p);
        let grad: f64 = self
            .domain
            .edges()
            .iter()
            .map(|e| e.weight * rho((x[e.head] - x[e.tail]) / h))
            .sum();
        let mass: f64 = self.domain.weights().iter().zip(x).map(|(w, &v)| w * rho(v)).sum();
        (grad + mass) / p - self.load_dot(x)
    }

    fn sub_load(&self, g: &mut [f64]) {
        if let Some(m) = self.load {
            for (gi, mi) in g.iter_mut().zip(m) {
                *gi -= mi;
            }
        }
    }

    /// Gradient of `J` with the exact duality map.
    pub fn exact_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = pairings_of(self.domain, x, self.p);
        self.sub_load(&mut g);
        g
    }

    fn smoothed_gradient(&self, x: &[f64], eps: f64) -> Vec<f64> {
        let p = self.p;
        if p == 2.0 || eps == 0.0 {
            return self.exact_gradient(x);
        }
        let h = self.domain.h();
        let psi = |t: f64| (t * t + eps * eps).powf(0.5 * (p - 2.0)) * t;
        let mut g: Vec<f64> = self.domain.weights().iter().zip(x).map(|(w, &v)| w * psi(v)).collect();
        for e in self.domain.edges() {
            let flux = e.weight / h * psi((x[e.head] - x[e.tail]) / h);
            g[e.head] += flux;
            g[e.tail] -= flux;
        }
        self.sub_load(&mut g);
        g
    }

    /// Hessian of the smoothed objective. With `reweighted` set and `p < 2`
    /// each term uses the secant curvature `(t² + ε²)^{(p-2)/2}` instead,
    /// which majorizes the true one and keeps full steps from overshooting.
    fn hessian(&self, x: &[f64], eps: f64, reweighted: bool) -> BandMatrix {
        let p = self.p;
        let h = self.domain.h();
        let slope = if reweighted && p < 2.0 { 1.0 } else { p - 1.0 };
        let curvature = |t: f64| -> f64 {
            if p == 2.0 {
                return 1.0;
            }
            let s = t * t + eps * eps;
            if s == 0.0 {
                return if p > 2.0 { 0.0 } else { 1e16 };
            }
            (s.powf(0.5 * (p - 4.0)) * (slope * t * t + eps * eps)).min(1e16)
        };
        let mut hess = BandMatrix::zeros(self.n(), self.domain.bandwidth());
        for e in self.domain.edges() {
            hess.add_edge(e.head, e.tail, e.weight / (h * h) * curvature((x[e.head] - x[e.tail]) / h));
        }
        for (i, (&w, &v)) in self.domain.weights().iter().zip(x).enumerate() {
            hess.add_diag(i, w * curvature(v));
        }
        hess
    }

    /// KKT residual of `x` given the gradient of `J` at `x`.
    pub fn residual(&self, x: &[f64], g: &[f64]) -> f64 {
        let mut r: f64 = 0.0;
        for i in 0..x.len() {
            if self.bounded[i] {
                let gap = x[i] - self.lower[i];
                r = r.max((-g[i]).max(0.0)).max((g[i] * gap).abs()).max((-gap).max(0.0));
            } else {
                r = r.max(g[i].abs());
            }
        }
        r
    }

    pub fn solve(&self, x0: Vec<f64>, settings: &Settings) -> Outcome {
        match settings.method {
            Method::ActiveSet => self.active_set(x0, settings),
            Method::Newton => self.projected_newton(x0, settings),
            Method::Gradient { accelerated } => self.projected_gradient(x0, settings, accelerated),
        }
    }

    fn finish(&self, x: Vec<f64>, iterations: usize, tol: f64) -> Outcome {
        let gradient = self.exact_gradient(&x);
        let residual = self.residual(&x, &gradient);
        Outcome { converged: residual <= tol, x, gradient, residual, iterations }
    }

    /// Primal-dual active set method for the quadratic case. Each sweep fixes
    /// the predicted active nodes at their bound and solves the remaining
    /// linear system exactly.
    fn active_set(&self, x0: Vec<f64>, s: &Settings) -> Outcome {
        debug_assert_eq!(self.p, 2.0);
        let n = self.n();
        let stiffness = self.hessian(&x0, 0.0, false);
        let diag: Vec<f64> = (0..n).map(|i| stiffness.get(i, i)).collect();
        let predict = |x: &[f64], lambda: &[f64]| -> Vec<bool> {
            (0..n)
                .map(|i| self.bounded[i] && lambda[i] + diag[i] * (self.lower[i] - x[i]) > 0.0)
                .collect::<Vec<_>>()
        };
        let mut x = x0;
        let mut active = predict(&x, &vec![0.0; n]);
        let mut iterations = 0;
        while iterations < s.max_iterations {
            iterations += 1;
            let fixed: Vec<f64> = (0..n).map(|i| if active[i] { self.lower[i] } else { 0.0 }).collect();
            let coupling = stiffness.mul_vec(&fixed);
            let mut rhs: Vec<f64> = match self.load {
                Some(m) => m.iter().zip(&coupling).map(|(a, b)| a - b).collect(),
                None => coupling.iter().map(|b| -b).collect(),
            };
            let mut reduced = stiffness.clone();
            for i in (0..n).filter(|&i| active[i]) {
                reduced.decouple(i);
                rhs[i] = diag[i] * self.lower[i];
            }
            let Ok(factor) = reduced.cholesky() else { break };
            x = factor.solve(&rhs);
            for i in (0..n).filter(|&i| active[i]) {
                x[i] = self.lower[i];
            }
            let lambda = self.exact_gradient(&x);
            let next = predict(&x, &lambda);
            if next == active {
                break;
            }
            active = next;
        }
        self.finish(x, iterations, s.tolerance)
    }

    /// Projected Newton method with a Bertsekas-type binding set: bounded
    /// nodes sitting (nearly) at their bound with a positive gradient are
    /// moved by a diagonally scaled gradient step, all others by the Newton
    /// step of the reduced Hessian. Armijo backtracking along the projection
    /// arc; once the objective stops resolving the step, the smoothed residual
    /// serves as merit instead. The coarsest smoothing level uses the
    /// reweighted curvature for `p < 2`. After the tolerance is met a few
    /// extra steps at the finest smoothing are taken while they help.
    fn projected_newton(&self, mut x: Vec<f64>, s: &Settings) -> Outcome {
        self.project(&mut x);
        let target = s.epsilon.max(EPS_FLOOR);
        let mut eps = if self.p == 2.0 { 0.0 } else { target.max(EPS_START) };
        let mut iterations = 0;
        let mut fx = self.objective(&x, eps);
        let mut polish = POLISH_STEPS;
        let mut best: Option<(Vec<f64>, f64)> = None;
        while iterations < s.max_iterations {
            let exact = self.exact_gradient(&x);
            let r = self.residual(&x, &exact);
            if let Some((bx, br)) = &best {
                if r >= *br {
                    x.clone_from(bx);
                    break;
                }
            }
            if r <= s.tolerance {
                if polish == 0 || r <= 1e-4 * s.tolerance {
                    break;
                }
                polish -= 1;
                best = Some((x.clone(), r));
                if eps > EPS_FLOOR {
                    eps = EPS_FLOOR;
                    fx = self.objective(&x, eps);
                }
            }
            iterations += 1;
            let g = self.smoothed_gradient(&x, eps);
            let smoothed_res = self.residual(&x, &g);
            if eps > target && smoothed_res <= s.tolerance.max(eps * 1e-2) {
                eps = (eps * 0.1).max(target);
                fx = self.objective(&x, eps);
                continue;
            }
            if eps > EPS_FLOOR && eps <= target && smoothed_res <= 1e-2 * s.tolerance {
                eps = next_eps(eps);
                fx = self.objective(&x, eps);
                continue;
            }

            let mut hess = self.hessian(&x, eps, eps >= EPS_START);
            let n = self.n();
            let diag: Vec<f64> = (0..n).map(|i| hess.get(i, i).max(f64::MIN_POSITIVE)).collect();
            let mut spread: f64 = 0.0;
            for i in 0..n {
                let trial = (x[i] - g[i] / diag[i]).max(self.lower[i]);
                spread = spread.max((x[i] - trial).abs());
            }
            let band = spread.min(1e-3);
            let binding: Vec<bool> = (0..n)
                .map(|i| self.bounded[i] && x[i] - self.lower[i] <= band && g[i] > 0.0)
                .collect();
            for i in (0..n).filter(|&i| binding[i]) {
                hess.decouple(i);
            }
            let direction = match solve_shifted(hess, &g) {
                Some(d) => d,
                None => g.iter().zip(&diag).map(|(gi, di)| -gi / di).collect(),
            };

            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_BACKTRACKS {
                let mut trial: Vec<f64> = x.iter().zip(&direction).map(|(a, d)| a + alpha * d).collect();
                self.project(&mut trial);
                let f_trial = self.objective(&trial, eps);
                let decrease: f64 = g.iter().zip(trial.iter().zip(&x)).map(|(gi, (t, a))| gi * (t - a)).sum();
                let noise = 1e-13 * (fx.abs() + f_trial.abs());
                let flat = (f_trial - fx).abs() <= noise && decrease.abs() <= noise;
                let ok = if flat {
                    // The objective no longer resolves the step; fall back on
                    // the smoothed stationarity residual as merit.
                    let gt = self.smoothed_gradient(&trial, eps);
                    self.residual(&trial, &gt) < (1.0 - ARMIJO * alpha) * smoothed_res
                } else {
                    f_trial <= fx + ARMIJO * decrease
                };
                if ok {
                    accepted = Some((trial, f_trial));
                    break;
                }
                alpha *= 0.5;
            }
            match accepted {
                Some((trial, f_trial)) => {
                    x = trial;
                    fx = f_trial;
                }
                None if best.is_some() => {
                    x = best.take().map(|b| b.0).unwrap_or(x);
                    break;
                }
                None if eps > EPS_FLOOR => {
                    eps = if eps > target { (eps * 0.1).max(target) } else { next_eps(eps) };
                    fx = self.objective(&x, eps);
                }
                None => break,
            }
        }
        self.finish(x, iterations, s.tolerance)
    }

    /// Diagonally scaled projected gradient with backtracking on the
    /// quadratic upper model; optionally accelerated with adaptive restart
    /// (on objective increase or a change of the set of nodes at their bound).
    fn projected_gradient(&self, mut x: Vec<f64>, s: &Settings, accelerated: bool) -> Outcome {
        self.project(&mut x);
        let target = s.epsilon.max(EPS_FLOOR);
        let mut eps = if self.p == 2.0 { 0.0 } else { target.max(EPS_START) };
        let n = self.n();
        let mut step = 1.0;
        let mut fx = self.objective(&x, eps);
        let mut y = x.clone();
        let mut momentum = 1.0f64;
        let mut iterations = 0;
        let at_bound = |v: &[f64]| -> Vec<bool> { (0..n).map(|i| self.bounded[i] && v[i] <= self.lower[i]).collect() };
        while iterations < s.max_iterations {
            let exact = self.exact_gradient(&x);
            if self.residual(&x, &exact) <= s.tolerance {
                break;
            }
            iterations += 1;
            let gy = self.smoothed_gradient(&y, eps);
            let smoothed_res = if eps > 0.0 { self.residual(&x, &self.smoothed_gradient(&x, eps)) } else { f64::INFINITY };
            let coarse_done = eps > target && smoothed_res <= s.tolerance.max(eps * 1e-2);
            if coarse_done || (eps > EPS_FLOOR && smoothed_res <= 1e-2 * s.tolerance) {
                eps = if eps > target { (eps * 0.1).max(target) } else { next_eps(eps) };
                fx = self.objective(&x, eps);
                y.clone_from(&x);
                momentum = 1.0;
                continue;
            }
            let hess = self.hessian(&y, eps, false);
            let scale: Vec<f64> = (0..n).map(|i| 1.0 / hess.get(i, i).max(1e-300)).collect();
            let fy = self.objective(&y, eps);
            let mut next = None;
            for _ in 0..MAX_BACKTRACKS {
                let mut trial: Vec<f64> = (0..n).map(|i| y[i] - step * scale[i] * gy[i]).collect();
                self.project(&mut trial);
                let f_trial = self.objective(&trial, eps);
                let mut model = fy;
                for i in 0..n {
                    let d = trial[i] - y[i];
                    model += gy[i] * d + d * d / (2.0 * step * scale[i]);
                }
                if f_trial <= model + 1e-13 * fy.abs() {
                    next = Some((trial, f_trial));
                    break;
                }
                step *= 0.5;
            }
            let Some((trial, f_trial)) = next else {
                if eps > EPS_FLOOR {
                    eps = if eps > target { (eps * 0.1).max(target) } else { next_eps(eps) };
                    fx = self.objective(&x, eps);
                    y.clone_from(&x);
                    continue;
                }
                break;
            };
            step *= 1.25;
            if !accelerated {
                x = trial;
                fx = f_trial;
                y.clone_from(&x);
                continue;
            }
            if f_trial > fx || at_bound(&trial) != at_bound(&x) {
                momentum = 1.0;
                if f_trial <= fx {
                    x = trial;
                    fx = f_trial;
                }
                y.clone_from(&x);
                continue;
            }
            let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let beta = (momentum - 1.0) / next_momentum;
            y = (0..n).map(|i| trial[i] + beta * (trial[i] - x[i])).collect();
            self.project(&mut y);
            momentum = next_momentum;
            x = trial;
            fx = f_trial;
        }
        self.finish(x, iterations, s.tolerance)
    }
}

fn next_eps(eps: f64) -> f64 {
    (eps * 1e-3).max(EPS_FLOOR)
}

/// Solves `H d = -g`, shifting the diagonal when the factorization breaks down.
fn solve_shifted(hess: BandMatrix, g: &[f64]) -> Option<Vec<f64>> {
    let n = hess.dim();
    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
    if let Ok(f) = hess.clone().cholesky() {
        return Some(f.solve(&neg));
    }
    let scale = (0..n).map(|i| hess.get(i, i).abs()).fold(0.0, f64::max).max(1e-300);
    let mut shift = 1e-10 * scale;
    for _ in 0..12 {
        let mut m = hess.clone();
        for i in 0..n {
            m.add_diag(i, shift);
        }
        if let Ok(f) = m.cholesky() {
            return Some(f.solve(&neg));
        }
        shift *= 100.0;
    }
    None
}
