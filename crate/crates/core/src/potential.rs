//! Potentials of functionals, capacitary measures and the dual energy.
//!
//! Functionals on the discrete space are nodal weight vectors `μ` acting by
//! `μ(u) = Σ μ_i u_i`. The potential of `μ` minimizes `(1/p) E_p(v) - μ(v)`
//! and is characterized by `⟨F(u), δ_i⟩ = μ_i` at every node; the energy
//! `E(μ) = ‖μ‖_*^{p'}` then equals both `μ(u)` and `E_p(u)`.

use crate::capsolve::{capacity, CapacityResult, SolverOptions};
use crate::error::{Error, Result};
use crate::grid::{DomainId, GridDomain, NodeSet};
use crate::sobolev::{dual_pair, pairings_of, sobolev_energy, GridFunction, PExponent};
use crate::solver::Problem;

/// Floor below which a weight still counts as nonnegative.
const ZERO_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    domain: DomainId,
    weights: Vec<f64>,
    nonneg: bool,
}

impl DiscreteMeasure {
    pub fn new(domain: &GridDomain, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != domain.len() {
            return Err(Error::InvalidArgument(format!(
                "{} weights for {} closure nodes",
                weights.len(),
                domain.len()
            )));
        }
        if let Some(position) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFinite { position });
        }
        let nonneg = weights.iter().all(|&w| w >= -ZERO_FLOOR);
        Ok(DiscreteMeasure { domain: domain.id(), weights, nonneg })
    }

    pub fn zero(domain: &GridDomain) -> Self {
        DiscreteMeasure { domain: domain.id(), weights: vec![0.0; domain.len()], nonneg: true }
    }

    /// Unit-free point mass at closure position `pos`.
    pub fn point_mass(domain: &GridDomain, pos: usize, mass: f64) -> Result<Self> {
        if pos >= domain.len() {
            return Err(Error::InvalidArgument(format!("closure position {pos} out of range")));
        }
        let mut weights = vec![0.0; domain.len()];
        weights[pos] = mass;
        Self::new(domain, weights)
    }

    /// The quadrature weights themselves, i.e. the discrete Lebesgue measure.
    pub fn quadrature(domain: &GridDomain) -> Self {
        DiscreteMeasure { domain: domain.id(), weights: domain.weights().to_vec(), nonneg: true }
    }

    pub fn domain(&self) -> DomainId {
        self.domain
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_nonneg(&self) -> bool {
        self.nonneg
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|&w| w == 0.0)
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `μ(A) = Σ_{i ∈ A} μ_i`.
    pub fn mass_on(&self, domain: &GridDomain, set: &NodeSet) -> Result<f64> {
        if self.domain != domain.id() {
            return Err(Error::DomainMismatch);
        }
        Ok(domain.positions_of(set)?.iter().map(|&i| self.weights[i]).sum())
    }

    pub fn scaled(&self, c: f64) -> Self {
        let weights: Vec<f64> = self.weights.iter().map(|w| c * w).collect();
        let nonneg = weights.iter().all(|&w| w >= -ZERO_FLOOR);
        DiscreteMeasure { domain: self.domain, weights, nonneg }
    }

    fn check_on(&self, domain: &GridDomain) -> Result<()> {
        if self.domain != domain.id() {
            return Err(Error::DomainMismatch);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PotentialResult {
    pub potential: GridFunction,
    /// `(1/p) E_p(u) - μ(u)` at the potential.
    pub objective: f64,
    /// `max_i |⟨F(u), δ_i⟩ - μ_i|`.
    pub el_residual: f64,
    /// `μ(u)`, the energy `E(μ)`.
    pub energy: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn solve_potential(domain: &GridDomain, mu: &DiscreteMeasure, p: PExponent, opts: &SolverOptions) -> Result<PotentialResult> {
    opts.validate(p)?;
    mu.check_on(domain)?;
    if mu.is_zero() {
        return Ok(PotentialResult {
            potential: GridFunction::zeros(domain),
            objective: 0.0,
            el_residual: 0.0,
            energy: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let unbounded = vec![false; domain.len()];
    let start = opts.start(domain, &unbounded)?;
    let problem = Problem::new(domain, p.value(), Some(mu.weights()), unbounded);
    let out = problem.solve(start, &opts.settings(p));
    let potential = GridFunction::from_raw(domain.id(), out.x);
    let energy = dual_pair(mu, &potential)?;
    let result = PotentialResult {
        objective: sobolev_energy(domain, &potential, p)? / p.value() - energy,
        potential,
        el_residual: out.residual,
        energy,
        iterations: out.iterations,
        converged: out.converged,
    };
    if result.converged {
        Ok(result)
    } else {
        Err(Error::PotentialNotConverged(Box::new(result)))
    }
}

/// The capacitary measure `μ_i = ⟨F(e_A), δ_i⟩` of `A` with its capacity solve.
///
/// Weights below `-10·tol` are an error; smaller negative noise is floored to 0.
pub fn capacitary_measure(
    domain: &GridDomain,
    set: &NodeSet,
    p: PExponent,
    opts: &SolverOptions,
) -> Result<(DiscreteMeasure, CapacityResult)> {
    let cap = capacity(domain, set, p, opts)?;
    let mut weights = pairings_of(domain, cap.extremal.values(), p.value());
    let floor = -10.0 * opts.tolerance;
    for (pos, w) in weights.iter_mut().enumerate() {
        if *w < floor {
            return Err(Error::NegativeMeasure { node: domain.grid_index(pos), weight: *w });
        }
        if *w < 0.0 {
            *w = 0.0;
        }
    }
    Ok((DiscreteMeasure { domain: domain.id(), weights, nonneg: true }, cap))
}

/// Largest capacitary-measure weight found on nodes where the extremal is
/// strictly below one (complementary slackness says these are ~0).
pub fn support_violation(measure: &DiscreteMeasure, extremal: &GridFunction, tolerance: f64) -> f64 {
    measure
        .weights()
        .iter()
        .zip(extremal.values())
        .filter(|(_, &e)| e < 1.0 - 10.0 * tolerance)
        .map(|(&w, _)| w)
        .fold(0.0, f64::max)
}

/// `E(μ) = μ(u_μ)` evaluated through the potential.
pub fn energy(domain: &GridDomain, mu: &DiscreteMeasure, p: PExponent, opts: &SolverOptions) -> Result<f64> {
    Ok(solve_potential(domain, mu, p, opts)?.energy)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyBound {
    /// `μ(A)^p`
    pub lhs: f64,
    /// `E(μ)^{p-1} · Cap(A)`
    pub rhs: f64,
    pub holds: bool,
    pub mass: f64,
    pub energy: f64,
    pub capacity: f64,
}

impl EnergyBound {
    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

/// `μ(A)^p ≤ E(μ)^{p-1} · Cap(A)` for a nonnegative measure.
pub fn energy_capacity_bound(
    domain: &GridDomain,
    mu: &DiscreteMeasure,
    set: &NodeSet,
    p: PExponent,
    opts: &SolverOptions,
) -> Result<EnergyBound> {
    mu.check_on(domain)?;
    if let Some((pos, &w)) = mu.weights().iter().enumerate().find(|(_, &w)| w < -ZERO_FLOOR) {
        return Err(Error::SignedMeasure { node: domain.grid_index(pos), weight: w });
    }
    let mass = mu.mass_on(domain, set)?;
    let energy = energy(domain, mu, p, opts)?;
    let capacity = capacity(domain, set, p, opts)?.value;
    let q = p.value();
    let lhs = mass.max(0.0).powf(q);
    let rhs = energy.powf(q - 1.0) * capacity;
    Ok(EnergyBound { lhs, rhs, holds: lhs <= rhs * (1.0 + 1e-6) + 1e-9, mass, energy, capacity })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capsolve::InitialGuess;
    use crate::grid::{DomainSpec, Selector};
    use crate::sobolev::el_pairings;
    use approx::assert_relative_eq;

    fn p(v: f64) -> PExponent {
        PExponent::new(v).unwrap()
    }

    fn square(h: f64) -> GridDomain {
        GridDomain::build(&DomainSpec::unit_square(h)).unwrap()
    }

    #[test]
    fn zero_measure() {
        let d = square(0.25);
        let r = solve_potential(&d, &DiscreteMeasure::zero(&d), p(3.0), &SolverOptions::for_p(p(3.0))).unwrap();
        assert_eq!(r.energy, 0.0);
        assert_eq!(r.objective, 0.0);
        assert!(r.potential.values().iter().all(|&v| v == 0.0));
        assert_eq!(energy(&d, &DiscreteMeasure::zero(&d), p(2.0), &SolverOptions::for_p(p(2.0))).unwrap(), 0.0);
    }

    #[test]
    fn scalar_stationarity() {
        // Oracle: with the gradient term removed (a single node decoupled from
        // everything), w |u|^{p-2} u = m gives u = sign(m) (|m|/w)^{1/(p-1)}.
        // On a grid the analogue is a constant potential under the quadrature
        // load scaled by m: the gradient term vanishes and each node solves
        // the scalar equation with its own weight.
        let d = square(0.25);
        for (q, m) in [(1.5, 0.7), (2.0, -1.3), (3.0, 2.0), (4.0, -0.4)] {
            let mu = DiscreteMeasure::quadrature(&d).scaled(m);
            let r = solve_potential(&d, &mu, p(q), &SolverOptions::for_p(p(q))).unwrap();
            let expected = m.signum() * m.abs().powf(1.0 / (q - 1.0));
            for v in r.potential.values() {
                assert_relative_eq!(*v, expected, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn quadrature_load_p2_gives_one() {
        for k in [3, 5, 7] {
            let d = GridDomain::build(&DomainSpec::unit_interval(0.5f64.powi(k))).unwrap();
            let r = solve_potential(&d, &DiscreteMeasure::quadrature(&d), p(2.0), &SolverOptions::for_p(p(2.0))).unwrap();
            assert!(r.potential.values().iter().all(|v| (v - 1.0).abs() < 1e-10));
            assert_relative_eq!(r.energy, 1.0, max_relative = 1e-10);
        }
    }

    #[test]
    fn el_residual_and_duality() {
        let d = square(1.0 / 12.0);
        let weights: Vec<f64> = (0..d.len()).map(|i| ((i * 7919) % 13) as f64 / 13.0 * d.weights()[i]).collect();
        let mu = DiscreteMeasure::new(&d, weights).unwrap();
        for q in [1.5, 2.0, 3.0, 4.0] {
            let opts = SolverOptions::for_p(p(q));
            let r = solve_potential(&d, &mu, p(q), &opts).unwrap();
            assert!(r.el_residual <= opts.tolerance);
            let pair = el_pairings(&d, &r.potential, p(q)).unwrap();
            for (a, b) in pair.iter().zip(mu.weights()) {
                assert!((a - b).abs() <= opts.tolerance);
            }
            let e = sobolev_energy(&d, &r.potential, p(q)).unwrap();
            assert!((r.energy - e).abs() <= 1e-6 * r.energy.max(1.0));
            // homogeneity of the dual energy
            let e2 = energy(&d, &mu.scaled(2.5), p(q), &opts).unwrap();
            assert_relative_eq!(e2, 2.5f64.powf(p(q).conjugate()) * r.energy, max_relative = 1e-6);
            // two starts, one minimizer
            let other = solve_potential(&d, &mu, p(q), &opts.clone().with_initial_guess(InitialGuess::Ones)).unwrap();
            assert!(other.potential.max_abs_diff(&r.potential).unwrap() <= crate::capsolve::uniqueness_modulus(p(q), opts.tolerance));
        }
    }

    #[test]
    fn capacitary_measure_of_closure_is_quadrature() {
        let d = square(0.125);
        for q in [1.5, 2.0, 3.0] {
            let (mu, cap) = capacitary_measure(&d, &d.closure_set(), p(q), &SolverOptions::for_p(p(q))).unwrap();
            for (a, b) in mu.weights().iter().zip(d.weights()) {
                assert_relative_eq!(*a, *b, max_relative = 1e-10);
            }
            assert_relative_eq!(mu.total_mass(), cap.value, max_relative = 1e-10);
        }
        let (mu, _) = capacitary_measure(&d, &d.empty_set(), p(2.0), &SolverOptions::for_p(p(2.0))).unwrap();
        assert!(mu.is_zero());
    }

    #[test]
    fn capacitary_measure_duality_chain() {
        let d = square(1.0 / 16.0);
        let a = d.node_set(&Selector::Ball { center: vec![0.4, 0.55], radius: 0.18 }).unwrap();
        for q in [1.5, 2.0, 3.0] {
            let opts = SolverOptions::for_p(p(q));
            let (mu, cap) = capacitary_measure(&d, &a, p(q), &opts).unwrap();
            let e = energy(&d, &mu, p(q), &opts).unwrap();
            let pair = dual_pair(&mu, &cap.extremal).unwrap();
            let scale = cap.value.max(1.0);
            assert!((cap.value - e).abs() <= 1e-5 * scale, "p={q}: {} vs {e}", cap.value);
            assert!((cap.value - pair).abs() <= 1e-5 * scale);
            assert!(support_violation(&mu, &cap.extremal, opts.tolerance) <= 10.0 * opts.tolerance);
            let bound = energy_capacity_bound(&d, &mu, &a, p(q), &opts).unwrap();
            assert!(bound.holds);
            assert!((bound.lhs - bound.rhs).abs() <= 1e-5 * bound.rhs);
        }
    }

    #[test]
    fn point_capacity_1d_measure_mass() {
        let d = GridDomain::build(&DomainSpec::unit_interval(1.0 / 512.0)).unwrap();
        let a = d.node_set(&Selector::Point { point: vec![0.5] }).unwrap();
        let (mu, _) = capacitary_measure(&d, &a, p(2.0), &SolverOptions::for_p(p(2.0))).unwrap();
        assert!((mu.total_mass() - 2.0 * 0.5f64.tanh()).abs() < 1e-3);
        let at = d.position(a.members()[0]).unwrap();
        assert!((mu.weights()[at] - mu.total_mass()).abs() < 1e-8);
    }

    #[test]
    fn bound_rejects_signed_measures() {
        let d = square(0.25);
        let mu = DiscreteMeasure::point_mass(&d, 3, -1.0).unwrap();
        assert!(!mu.is_nonneg());
        let a = d.node_set(&Selector::Omega).unwrap();
        assert!(matches!(
            energy_capacity_bound(&d, &mu, &a, p(2.0), &SolverOptions::for_p(p(2.0))),
            Err(Error::SignedMeasure { .. })
        ));
        let zero = energy_capacity_bound(&d, &DiscreteMeasure::zero(&d), &a, p(2.0), &SolverOptions::for_p(p(2.0))).unwrap();
        assert!(zero.holds);
        assert_eq!(zero.lhs, 0.0);
    }
}
