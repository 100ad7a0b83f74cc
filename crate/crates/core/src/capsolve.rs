//! Relative p-capacity of node sets and their capacitary extremals.
//!
//! `Cap_p(A)` is the minimum of the discrete energy over grid functions with
//! `u_i >= 1` on every node of `A`. The minimizer is the extremal `e_A`; its
//! nodal pairings `⟨F(e_A), δ_i⟩` are the Lagrange multipliers of the
//! obstacle constraint and vanish off `A`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridDomain, NodeSet};
use crate::sobolev::{pairings_of, sobolev_energy, GridFunction, PExponent};
use crate::solver::{Method, Problem, Settings};

/// Feasibility slack below which a candidate is rejected outright.
const INFEASIBLE_GAP: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Primal-dual active set with exact banded solves; `p = 2` only.
    ActiveSetP2,
    ProjectedNewton,
    ProjectedGradient,
    ProjectedGradientAccelerated,
}

impl Algorithm {
    /// Active set for `p = 2`, projected Newton otherwise.
    pub fn default_for(p: PExponent) -> Self {
        if p.is_quadratic() {
            Algorithm::ActiveSetP2
        } else {
            Algorithm::ProjectedNewton
        }
    }

    fn method(self) -> Method {
        match self {
            Algorithm::ActiveSetP2 => Method::ActiveSet,
            Algorithm::ProjectedNewton => Method::Newton,
            Algorithm::ProjectedGradient => Method::Gradient { accelerated: false },
            Algorithm::ProjectedGradientAccelerated => Method::Gradient { accelerated: true },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialGuess {
    Zeros,
    /// Indicator of the obstacle set.
    OnesOnA,
    /// The constant 1, admissible for every set.
    Ones,
    Supplied(GridFunction),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub epsilon_reg: f64,
    /// `None` picks [`Algorithm::default_for`].
    pub algorithm: Option<Algorithm>,
    pub initial_guess: InitialGuess,
}

impl SolverOptions {
    /// Defaults: tolerance `1e-8` for `p = 2` and `1e-6` otherwise.
    pub fn for_p(p: PExponent) -> Self {
        SolverOptions {
            tolerance: if p.is_quadratic() { 1e-8 } else { 1e-6 },
            max_iterations: 500,
            epsilon_reg: 1e-8,
            algorithm: None,
            initial_guess: InitialGuess::Zeros,
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_algorithm(mut self, algorithm: Algorithm) -> Self {
        self.algorithm = Some(algorithm);
        self
    }

    pub fn with_initial_guess(mut self, guess: InitialGuess) -> Self {
        self.initial_guess = guess;
        self
    }

    pub fn with_max_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = max_iterations;
        self
    }

    pub fn algorithm_for(&self, p: PExponent) -> Algorithm {
        self.algorithm.unwrap_or_else(|| Algorithm::default_for(p))
    }

    pub fn validate(&self, p: PExponent) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidOptions(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if !(self.epsilon_reg >= 0.0 && self.epsilon_reg.is_finite()) {
            return Err(Error::InvalidOptions(format!("epsilon_reg must be nonnegative, got {}", self.epsilon_reg)));
        }
        if self.algorithm_for(p) == Algorithm::ActiveSetP2 && !p.is_quadratic() {
            return Err(Error::InvalidOptions(format!("active_set_p2 requires p = 2, got p = {}", p.value())));
        }
        Ok(())
    }

    pub(crate) fn settings(&self, p: PExponent) -> Settings {
        Settings {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            epsilon: self.epsilon_reg,
            method: self.algorithm_for(p).method(),
        }
    }

    pub(crate) fn start(&self, domain: &GridDomain, obstacle: &[bool]) -> Result<Vec<f64>> {
        Ok(match &self.initial_guess {
            InitialGuess::Zeros => vec![0.0; domain.len()],
            InitialGuess::Ones => vec![1.0; domain.len()],
            InitialGuess::OnesOnA => obstacle.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect(),
            InitialGuess::Supplied(u) => {
                u.check_on(domain)?;
                u.values().to_vec()
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CapacityResult {
    pub value: f64,
    pub extremal: GridFunction,
    pub kkt_residual: f64,
    /// Nodes of `A` whose multiplier exceeds the tolerance.
    pub active_set: NodeSet,
    /// One multiplier per member of `A`, in member order.
    pub multipliers: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub p: PExponent,
    pub algorithm: Algorithm,
}

/// Computes `Cap_p(A)` and the extremal `e_A`.
///
/// Non-convergence yields [`Error::CapacityNotConverged`] carrying the last
/// iterate with `converged = false`.
pub fn capacity(domain: &GridDomain, set: &NodeSet, p: PExponent, opts: &SolverOptions) -> Result<CapacityResult> {
    opts.validate(p)?;
    let positions = domain.positions_of(set)?;
    let algorithm = opts.algorithm_for(p);
    if set.is_empty() {
        return Ok(CapacityResult {
            value: 0.0,
            extremal: GridFunction::zeros(domain),
            kkt_residual: 0.0,
            active_set: domain.empty_set(),
            multipliers: Vec::new(),
            iterations: 0,
            converged: true,
            p,
            algorithm,
        });
    }
    let mut obstacle = vec![false; domain.len()];
    for &i in &positions {
        obstacle[i] = true;
    }
    let start = opts.start(domain, &obstacle)?;
    let problem = Problem::new(domain, p.value(), None, obstacle);
    let out = problem.solve(start, &opts.settings(p));

    let extremal = GridFunction::from_raw(domain.id(), out.x);
    let multipliers: Vec<f64> = positions.iter().map(|&i| out.gradient[i]).collect();
    let active: Vec<usize> = set
        .members()
        .iter()
        .zip(&multipliers)
        .filter_map(|(&g, &m)| (m > opts.tolerance).then_some(g))
        .collect();
    let result = CapacityResult {
        value: sobolev_energy(domain, &extremal, p)?,
        extremal,
        kkt_residual: out.residual,
        active_set: NodeSet::from_indices(domain, active)?,
        multipliers,
        iterations: out.iterations,
        converged: out.converged,
        p,
        algorithm,
    };
    if result.converged {
        Ok(result)
    } else {
        Err(Error::CapacityNotConverged(Box::new(result)))
    }
}

/// Exact-map KKT residual of a candidate extremal together with the
/// multipliers `⟨F(u), δ_i⟩`, one per member of `A`.
pub fn kkt_residual(domain: &GridDomain, u: &GridFunction, set: &NodeSet, p: PExponent) -> Result<(f64, Vec<f64>)> {
    u.check_on(domain)?;
    let positions = domain.positions_of(set)?;
    let values = u.values();
    for (&i, &g) in positions.iter().zip(set.members()) {
        if values[i] < 1.0 - INFEASIBLE_GAP {
            return Err(Error::Infeasible { node: g, value: values[i] });
        }
    }
    let pairings = pairings_of(domain, values, p.value());
    let mut obstacle = vec![false; domain.len()];
    for &i in &positions {
        obstacle[i] = true;
    }
    let problem = Problem::new(domain, p.value(), None, obstacle);
    let residual = problem.residual(values, &pairings);
    Ok((residual, positions.iter().map(|&i| pairings[i]).collect()))
}

/// Nodewise deviation between extremals started from zero and from the
/// constant one.
pub fn capacity_uniqueness_check(domain: &GridDomain, set: &NodeSet, p: PExponent, opts: &SolverOptions) -> Result<f64> {
    let a = capacity(domain, set, p, &opts.clone().with_initial_guess(InitialGuess::Zeros))?;
    let b = capacity(domain, set, p, &opts.clone().with_initial_guess(InitialGuess::Ones))?;
    a.extremal.max_abs_diff(&b.extremal)
}

/// Nodewise agreement expected between two converged solves: uniform
/// convexity of the p-energy gives a modulus of order `tol^{min(1/2, 1/p)}`.
pub fn uniqueness_modulus(p: PExponent, tolerance: f64) -> f64 {
    10.0 * tolerance.powf(0.5f64.min(1.0 / p.value()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{DomainSpec, Selector};
    use crate::sobolev::truncate;
    use approx::assert_relative_eq;

    fn p(v: f64) -> PExponent {
        PExponent::new(v).unwrap()
    }

    fn interval(h: f64) -> GridDomain {
        GridDomain::build(&DomainSpec::unit_interval(h)).unwrap()
    }

    fn midpoint(d: &GridDomain) -> NodeSet {
        d.node_set(&Selector::Point { point: vec![0.5] }).unwrap()
    }

    #[test]
    fn empty_set_has_zero_capacity() {
        let d = interval(0.25);
        let r = capacity(&d, &d.empty_set(), p(3.0), &SolverOptions::for_p(p(3.0))).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.iterations, 0);
        assert!(r.extremal.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn three_node_problem_is_exact() {
        // Oracle: enumerate active sets of the 2-variable quadratic. With both
        // outer nodes free the stationarity 4(1-a)·(-2)·... reduces to
        // -8(1-a) + a = 0, i.e. a = 8/9 and the energy 17/18.
        let d = interval(0.5);
        let a = midpoint(&d);
        let r = capacity(&d, &a, p(2.0), &SolverOptions::for_p(p(2.0))).unwrap();
        assert!((r.value - 17.0 / 18.0).abs() <= 1e-10);
        for (got, want) in r.extremal.values().iter().zip([8.0 / 9.0, 1.0, 8.0 / 9.0]) {
            assert!((got - want).abs() <= 1e-10);
        }
        assert_eq!(r.active_set, a);
    }

    #[test]
    fn three_node_all_algorithms_agree() {
        let d = interval(0.5);
        let a = midpoint(&d);
        for alg in [Algorithm::ProjectedNewton, Algorithm::ProjectedGradient, Algorithm::ProjectedGradientAccelerated] {
            let opts = SolverOptions::for_p(p(2.0)).with_algorithm(alg).with_max_iterations(20_000);
            let r = capacity(&d, &a, p(2.0), &opts).unwrap();
            assert!((r.value - 17.0 / 18.0).abs() <= 1e-8, "{alg:?}");
        }
    }

    #[test]
    fn tanh_benchmark_fine_grid() {
        let d = interval(1.0 / 1024.0);
        let r = capacity(&d, &midpoint(&d), p(2.0), &SolverOptions::for_p(p(2.0))).unwrap();
        assert!((r.value - 2.0 * 0.5f64.tanh()).abs() <= 1e-3);
    }

    #[test]
    fn closure_gives_constant_one() {
        let d = GridDomain::build(&DomainSpec::unit_square(0.125)).unwrap();
        for q in [1.5, 2.0, 3.0] {
            let r = capacity(&d, &d.closure_set(), p(q), &SolverOptions::for_p(p(q))).unwrap();
            assert!(r.extremal.values().iter().all(|&v| (v - 1.0).abs() <= 1e-8));
            assert_relative_eq!(r.value, d.quadrature_mass(), max_relative = 1e-10);
        }
    }

    #[test]
    fn active_set_requires_p2() {
        let d = interval(0.25);
        let opts = SolverOptions::for_p(p(3.0)).with_algorithm(Algorithm::ActiveSetP2);
        assert!(matches!(capacity(&d, &midpoint(&d), p(3.0), &opts), Err(Error::InvalidOptions(_))));
        let bad = SolverOptions { tolerance: 0.0, ..SolverOptions::for_p(p(2.0)) };
        assert!(matches!(capacity(&d, &midpoint(&d), p(2.0), &bad), Err(Error::InvalidOptions(_))));
    }

    #[test]
    fn non_convergence_returns_partial_result() {
        let d = GridDomain::build(&DomainSpec::unit_square(1.0 / 16.0)).unwrap();
        let a = d.node_set(&Selector::Ball { center: vec![0.5, 0.5], radius: 0.2 }).unwrap();
        let opts = SolverOptions::for_p(p(3.0)).with_algorithm(Algorithm::ProjectedGradient).with_max_iterations(3);
        match capacity(&d, &a, p(3.0), &opts) {
            Err(Error::CapacityNotConverged(partial)) => {
                assert!(!partial.converged);
                assert_eq!(partial.iterations, 3);
                assert!(partial.kkt_residual > opts.tolerance);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn kkt_residual_examples() {
        let d = GridDomain::build(&DomainSpec::unit_square(0.25)).unwrap();
        let all = d.closure_set();
        let (res, mult) = kkt_residual(&d, &GridFunction::constant(&d, 1.0), &all, p(2.0)).unwrap();
        assert_eq!(res, 0.0);
        for (m, w) in mult.iter().zip(d.weights()) {
            assert_relative_eq!(*m, *w, max_relative = 1e-14);
        }
        let a = d.node_set(&Selector::Point { point: vec![0.5, 0.5] }).unwrap();
        assert!(matches!(
            kkt_residual(&d, &GridFunction::zeros(&d), &a, p(2.0)),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn converged_extremal_passes_kkt() {
        let d = GridDomain::build(&DomainSpec::unit_square(1.0 / 16.0)).unwrap();
        let a = d.node_set(&Selector::Ball { center: vec![0.3, 0.6], radius: 0.15 }).unwrap();
        for q in [1.5, 2.0, 3.0, 4.0] {
            let opts = SolverOptions::for_p(p(q));
            let r = capacity(&d, &a, p(q), &opts).unwrap();
            let (res, mult) = kkt_residual(&d, &r.extremal, &a, p(q)).unwrap();
            assert!(res <= opts.tolerance, "p={q} residual {res}");
            assert_eq!(mult, r.multipliers);
            assert!(r.extremal.values().iter().all(|&v| v >= -opts.tolerance && v <= 1.0 + opts.tolerance));
            let t = truncate(&r.extremal);
            assert!(t.max_abs_diff(&r.extremal).unwrap() <= opts.tolerance);
            assert_relative_eq!(r.value, sobolev_energy(&d, &r.extremal, p(q)).unwrap(), max_relative = 1e-12);
        }
    }

    #[test]
    fn uniqueness_examples() {
        let d = GridDomain::build(&DomainSpec::unit_square(1.0 / 32.0)).unwrap();
        let opts = SolverOptions::for_p(p(3.0));
        assert_eq!(capacity_uniqueness_check(&d, &d.empty_set(), p(3.0), &opts).unwrap(), 0.0);
        assert!(capacity_uniqueness_check(&d, &d.closure_set(), p(3.0), &opts).unwrap() <= opts.tolerance);
        let a = d.node_set(&Selector::Ball { center: vec![0.5, 0.5], radius: 0.2 }).unwrap();
        let dev = capacity_uniqueness_check(&d, &a, p(3.0), &opts).unwrap();
        assert!(dev <= 1e-4, "deviation {dev}");
        assert!(dev <= uniqueness_modulus(p(3.0), opts.tolerance));
    }

    #[test]
    fn boundary_only_sets_are_solved() {
        let d = GridDomain::build(&DomainSpec::unit_square(1.0 / 8.0)).unwrap();
        let a = d.node_set(&Selector::HalfSpace { normal: vec![-1.0, 0.0], offset: 0.0 }).unwrap();
        assert!(a.is_subset(&d.node_set(&Selector::Boundary).unwrap()).unwrap());
        for q in [1.5, 2.0, 3.0] {
            let r = capacity(&d, &a, p(q), &SolverOptions::for_p(p(q))).unwrap();
            assert!(r.value > 0.0 && r.value < d.quadrature_mass());
        }
    }

    mod props {
        use super::*;
        use crate::sobolev::{energy_of, sobolev_energy};
        use proptest::prelude::*;

        fn grid() -> GridDomain {
            GridDomain::build(&DomainSpec::unit_square(1.0 / 8.0)).unwrap()
        }

        fn ball_set(d: &GridDomain, cx: f64, cy: f64, r: f64) -> NodeSet {
            d.node_set(&Selector::Ball { center: vec![cx, cy], radius: r }).unwrap()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn value_dominates_mass_of_set(cx in 0.0..1.0f64, cy in 0.0..1.0f64, r in 0.05..0.5f64, q in prop::sample::select(vec![1.5, 2.0, 3.0])) {
                let d = grid();
                let a = ball_set(&d, cx, cy, r);
                let res = capacity(&d, &a, p(q), &SolverOptions::for_p(p(q))).unwrap();
                let mass: f64 = d.positions_of(&a).unwrap().iter().filter(|&&i| d.is_omega_position(i)).map(|&i| d.weights()[i]).sum();
                prop_assert!(res.value >= mass - 1e-9);
                prop_assert!((res.value - sobolev_energy(&d, &res.extremal, p(q)).unwrap()).abs() <= 1e-12 * res.value.max(1e-300));
                let clipped = truncate(&res.extremal);
                prop_assert!(clipped.max_abs_diff(&res.extremal).unwrap() <= SolverOptions::for_p(p(q)).tolerance);
                for &m in &res.multipliers {
                    prop_assert!(m >= -SolverOptions::for_p(p(q)).tolerance);
                }
            }

            #[test]
            fn feasible_probes_bound_the_value(cx in 0.2..0.8f64, cy in 0.2..0.8f64, r in 0.05..0.3f64, bumps in prop::collection::vec(0.0..2.0f64, 81), q in prop::sample::select(vec![1.5, 2.0, 3.0])) {
                let d = grid();
                let a = ball_set(&d, cx, cy, r);
                let opts = SolverOptions::for_p(p(q));
                let res = capacity(&d, &a, p(q), &opts).unwrap();
                let mask = d.mask_of(&a).unwrap();
                let probe: Vec<f64> = (0..d.len()).map(|i| if mask[i] { 1.0 + bumps[i] } else { bumps[i] }).collect();
                prop_assert!(res.value <= energy_of(&d, &probe, q) + opts.tolerance);
            }

            #[test]
            fn chebyshev_level_set_bound(values in prop::collection::vec(-1.0..2.0f64, 81), level in 0.2..1.5f64, q in prop::sample::select(vec![1.5, 2.0, 3.0])) {
                let d = grid();
                let u = GridFunction::new(&d, values).unwrap();
                let above: Vec<bool> = u.values().iter().map(|&v| v > level).collect();
                let set = d.set_from_mask(&above);
                let opts = SolverOptions::for_p(p(q));
                let res = capacity(&d, &set, p(q), &opts).unwrap();
                let bound = level.powf(-q) * sobolev_energy(&d, &u.positive_part(), p(q)).unwrap();
                prop_assert!(res.value <= bound + opts.tolerance);
            }
        }
    }
}
