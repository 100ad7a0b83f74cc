//! Discrete first-order Sobolev calculus on a [`GridDomain`].
//!
//! The energy of a grid function is
//!
//! ```text
//! E_p(u) = Σ_cells h^N Σ_axes avg_{edges ∥ a} |∂_a u|^p  +  Σ_nodes w_i |u_i|^p
//! ```
//!
//! with `∂_a u` the forward difference quotient along an edge parallel to
//! axis `a` (in 2D each cell has two such edges and the p-th powers are
//! averaged). Each derivative is raised to the p-th power on its own, so the
//! energy is the sum over multi-indices `|α| ≤ 1` of `‖D^α u‖_p^p`. Every
//! gradient term couples exactly two nodes, which makes the energy
//! submodular under nodewise max/min.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DomainId, GridDomain};
use crate::potential::DiscreteMeasure;

pub const P_MIN: f64 = 1.1;
pub const P_MAX: f64 = 10.0;

/// Sobolev exponent `p ∈ [1.1, 10]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PExponent(f64);

impl PExponent {
    pub fn new(p: f64) -> Result<Self> {
        if !(P_MIN..=P_MAX).contains(&p) {
            return Err(Error::InvalidExponent(p));
        }
        Ok(PExponent(p))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Conjugate exponent `p' = p / (p - 1)`.
    pub fn conjugate(self) -> f64 {
        self.0 / (self.0 - 1.0)
    }

    pub fn is_quadratic(self) -> bool {
        self.0 == 2.0
    }
}

impl TryFrom<f64> for PExponent {
    type Error = Error;

    fn try_from(p: f64) -> Result<Self> {
        PExponent::new(p)
    }
}

impl From<PExponent> for f64 {
    fn from(p: PExponent) -> f64 {
        p.0
    }
}

/// Nodal values on the closure nodes of a domain, in closure order.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    domain: DomainId,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(domain: &GridDomain, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.len() {
            return Err(Error::InvalidArgument(format!(
                "{} values for {} closure nodes",
                values.len(),
                domain.len()
            )));
        }
        if let Some(position) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { position });
        }
        Ok(GridFunction { domain: domain.id(), values })
    }

    pub(crate) fn from_raw(domain: DomainId, values: Vec<f64>) -> Self {
        GridFunction { domain, values }
    }

    pub fn zeros(domain: &GridDomain) -> Self {
        Self::constant(domain, 0.0)
    }

    pub fn constant(domain: &GridDomain, c: f64) -> Self {
        GridFunction { domain: domain.id(), values: vec![c; domain.len()] }
    }

    /// Samples `f` at the closure node coordinates.
    pub fn from_fn(domain: &GridDomain, f: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        let values = (0..domain.len()).map(|p| f(domain.coords(p))).collect();
        Self::new(domain, values)
    }

    pub fn domain(&self) -> DomainId {
        self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn scaled(&self, c: f64) -> GridFunction {
        self.map(|v| c * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction { domain: self.domain, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Positive part `u ∨ 0`.
    pub fn positive_part(&self) -> GridFunction {
        self.map(|v| v.max(0.0))
    }

    /// Largest nodewise absolute difference.
    pub fn max_abs_diff(&self, other: &GridFunction) -> Result<f64> {
        same(self.domain, other.domain)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub(crate) fn check_on(&self, domain: &GridDomain) -> Result<()> {
        same(self.domain, domain.id())
    }
}

fn same(a: DomainId, b: DomainId) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DomainMismatch)
    }
}

/// `|t|^{p-2} t` with the value 0 at `t = 0`.
#[inline]
pub(crate) fn duality_map(t: f64, p: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else if p == 2.0 {
        t
    } else {
        t.abs().powf(p - 1.0).copysign(t)
    }
}

#[inline]
fn pow_abs(t: f64, p: f64) -> f64 {
    if p == 2.0 {
        t * t
    } else {
        t.abs().powf(p)
    }
}

/// Forward-difference gradient per cell at the cell's lowest corner, in cell
/// order. The second component is zero in 1D.
pub fn gradient(domain: &GridDomain, u: &GridFunction) -> Result<Vec<[f64; 2]>> {
    u.check_on(domain)?;
    let h = domain.h();
    let v = u.values();
    Ok(domain
        .cells()
        .iter()
        .map(|c| {
            let a = v[c.corners[0]];
            let gx = (v[c.corners[1]] - a) / h;
            let gy = if domain.dimension() == 2 { (v[c.corners[2]] - a) / h } else { 0.0 };
            [gx, gy]
        })
        .collect())
}

/// The p-th power of the discrete `W^{1,p}` norm.
pub fn sobolev_energy(domain: &GridDomain, u: &GridFunction, p: PExponent) -> Result<f64> {
    u.check_on(domain)?;
    Ok(energy_of(domain, u.values(), p.value()))
}

pub(crate) fn energy_of(domain: &GridDomain, v: &[f64], p: f64) -> f64 {
    let h = domain.h();
    let grad: f64 = domain
        .edges()
        .iter()
        .map(|e| e.weight * pow_abs((v[e.head] - v[e.tail]) / h, p))
        .sum();
    let mass: f64 = domain.weights().iter().zip(v).map(|(w, &x)| w * pow_abs(x, p)).sum();
    grad + mass
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatticeOp {
    Max,
    Min,
}

pub fn lattice(u: &GridFunction, v: &GridFunction, op: LatticeOp) -> Result<GridFunction> {
    same(u.domain, v.domain)?;
    let f = match op {
        LatticeOp::Max => f64::max,
        LatticeOp::Min => f64::min,
    };
    Ok(GridFunction {
        domain: u.domain,
        values: u.values.iter().zip(&v.values).map(|(&a, &b)| f(a, b)).collect(),
    })
}

/// `(u ∨ 0) ∧ 1`.
pub fn truncate(u: &GridFunction) -> GridFunction {
    u.map(|v| v.clamp(0.0, 1.0))
}

/// `μ(u) = Σ_i μ_i u_i`.
pub fn dual_pair(mu: &DiscreteMeasure, u: &GridFunction) -> Result<f64> {
    same(mu.domain(), u.domain)?;
    Ok(mu.weights().iter().zip(&u.values).map(|(m, x)| m * x).sum())
}

/// Gâteaux pairing `⟨F(u), v⟩` where `p·F` is the derivative of the energy:
///
/// `Σ_edges ω_e |∂_e u|^{p-2} ∂_e u ∂_e v + Σ_i w_i |u_i|^{p-2} u_i v_i`,
/// with `ω_e` the cell volume carried by edge `e`.
pub fn euler_lagrange_apply(
    domain: &GridDomain,
    u: &GridFunction,
    v: &GridFunction,
    p: PExponent,
) -> Result<f64> {
    u.check_on(domain)?;
    v.check_on(domain)?;
    let p = p.value();
    let h = domain.h();
    let (uv, vv) = (u.values(), v.values());
    let grad: f64 = domain
        .edges()
        .iter()
        .map(|e| e.weight * duality_map((uv[e.head] - uv[e.tail]) / h, p) * (vv[e.head] - vv[e.tail]) / h)
        .sum();
    let mass: f64 = domain
        .weights()
        .iter()
        .zip(uv.iter().zip(vv))
        .map(|(w, (&a, &b))| w * duality_map(a, p) * b)
        .sum();
    Ok(grad + mass)
}

/// All nodal pairings `⟨F(u), δ_i⟩`, in closure order.
pub fn el_pairings(domain: &GridDomain, u: &GridFunction, p: PExponent) -> Result<Vec<f64>> {
    u.check_on(domain)?;
    Ok(pairings_of(domain, u.values(), p.value()))
}

pub(crate) fn pairings_of(domain: &GridDomain, v: &[f64], p: f64) -> Vec<f64> {
    let h = domain.h();
    let mut out: Vec<f64> = domain
        .weights()
        .iter()
        .zip(v)
        .map(|(w, &x)| w * duality_map(x, p))
        .collect();
    for e in domain.edges() {
        let flux = e.weight / h * duality_map((v[e.head] - v[e.tail]) / h, p);
        out[e.head] += flux;
        out[e.tail] -= flux;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DomainSpec;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn interval(h: f64) -> GridDomain {
        GridDomain::build(&DomainSpec::unit_interval(h)).unwrap()
    }

    fn p(v: f64) -> PExponent {
        PExponent::new(v).unwrap()
    }

    fn random_fn(d: &GridDomain, rng: &mut ChaCha8Rng) -> GridFunction {
        GridFunction::new(d, (0..d.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn exponent_range() {
        assert!(PExponent::new(0.5).is_err());
        assert!(PExponent::new(1.0).is_err());
        assert!(PExponent::new(10.5).is_err());
        for v in [1.1, 1.5, 2.0, 3.0, 10.0] {
            let q = p(v);
            assert!((q.conjugate() * (v - 1.0) - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn gradient_examples() {
        let d = interval(0.5);
        let u = GridFunction::new(&d, vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(gradient(&d, &u).unwrap(), vec![[2.0, 0.0], [-2.0, 0.0]]);
        let c = GridFunction::constant(&d, 3.0);
        assert!(gradient(&d, &c).unwrap().iter().all(|g| *g == [0.0, 0.0]));

        for h in [0.5, 0.25, 1.0 / 7.0] {
            let sq = GridDomain::build(&DomainSpec::unit_square(h)).unwrap();
            let x = GridFunction::from_fn(&sq, |c| c[0]).unwrap();
            for g in gradient(&sq, &x).unwrap() {
                assert_relative_eq!(g[0], 1.0, epsilon = 1e-12);
                assert_relative_eq!(g[1], 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn energy_examples() {
        let d = interval(0.5);
        let u = GridFunction::new(&d, vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(sobolev_energy(&d, &u, p(2.0)).unwrap(), 4.5);
        assert_eq!(sobolev_energy(&d, &GridFunction::zeros(&d), p(3.0)).unwrap(), 0.0);
        for h in [0.5, 0.1, 1.0 / 64.0] {
            let d = interval(h);
            for q in [1.5, 2.0, 7.0] {
                let e = sobolev_energy(&d, &GridFunction::constant(&d, 1.0), p(q)).unwrap();
                assert_relative_eq!(e, d.quadrature_mass(), max_relative = 1e-12);
                assert_relative_eq!(e, 1.0, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn lattice_examples() {
        let d = interval(0.5);
        let u = GridFunction::new(&d, vec![-1.0, 2.0, 0.5]).unwrap();
        assert_eq!(truncate(&u).values(), &[0.0, 1.0, 0.5]);
        assert_eq!(truncate(&GridFunction::constant(&d, 5.0)), GridFunction::constant(&d, 1.0));
        assert_eq!(lattice(&u, &u, LatticeOp::Max).unwrap(), u);
        let other = GridFunction::zeros(&interval(0.25));
        assert!(matches!(lattice(&u, &other, LatticeOp::Min), Err(Error::DomainMismatch)));
    }

    #[test]
    fn dual_pair_examples() {
        let d = interval(0.25);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_fn(&d, &mut rng);
        assert_eq!(dual_pair(&DiscreteMeasure::zero(&d), &u).unwrap(), 0.0);
        let point = DiscreteMeasure::point_mass(&d, 2, 1.0).unwrap();
        assert_eq!(dual_pair(&point, &u).unwrap(), u.values()[2]);
        let q = DiscreteMeasure::quadrature(&d);
        assert_relative_eq!(
            dual_pair(&q, &GridFunction::constant(&d, 1.0)).unwrap(),
            d.quadrature_mass(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn el_zero_convention_and_symmetry() {
        let d = GridDomain::build(&DomainSpec::unit_square(0.25)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z = GridFunction::zeros(&d);
        for q in [1.5, 2.0, 3.0] {
            let v = random_fn(&d, &mut rng);
            assert_eq!(euler_lagrange_apply(&d, &z, &v, p(q)).unwrap(), 0.0);
        }
        let (u, v) = (random_fn(&d, &mut rng), random_fn(&d, &mut rng));
        assert_relative_eq!(
            euler_lagrange_apply(&d, &u, &v, p(2.0)).unwrap(),
            euler_lagrange_apply(&d, &v, &u, p(2.0)).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn el_matches_centered_difference() {
        // Oracle: centered finite difference of the energy itself.
        let d = interval(1.0 / 8.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let eps = 1e-6;
        for _ in 0..10 {
            let u = random_fn(&d, &mut rng);
            let v = random_fn(&d, &mut rng);
            let q = p(3.0);
            let plus = u.values().iter().zip(v.values()).map(|(a, b)| a + eps * b).collect();
            let minus = u.values().iter().zip(v.values()).map(|(a, b)| a - eps * b).collect();
            let fd = (sobolev_energy(&d, &GridFunction::new(&d, plus).unwrap(), q).unwrap()
                - sobolev_energy(&d, &GridFunction::new(&d, minus).unwrap(), q).unwrap())
                / (2.0 * eps);
            let exact = 3.0 * euler_lagrange_apply(&d, &u, &v, q).unwrap();
            assert!((fd - exact).abs() <= 1e-4 * exact.abs().max(1e-12), "{fd} vs {exact}");
        }
    }

    #[test]
    fn pairings_agree_with_apply() {
        let d = GridDomain::build(&DomainSpec::unit_square(0.2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u = random_fn(&d, &mut rng);
        let v = random_fn(&d, &mut rng);
        let q = p(1.5);
        let pair = el_pairings(&d, &u, q).unwrap();
        let via_vec: f64 = pair.iter().zip(v.values()).map(|(a, b)| a * b).sum();
        assert_relative_eq!(via_vec, euler_lagrange_apply(&d, &u, &v, q).unwrap(), max_relative = 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn square() -> GridDomain {
            GridDomain::build(&DomainSpec::unit_square(1.0 / 6.0)).unwrap()
        }

        fn values() -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(-2.0..2.0f64, 49)
        }

        proptest! {
            #[test]
            fn energy_is_p_homogeneous(vals in values(), qi in 0usize..4) {
                let d = square();
                let q = p([1.5, 2.0, 3.0, 4.0][qi]);
                let u = GridFunction::new(&d, vals).unwrap();
                let e = sobolev_energy(&d, &u, q).unwrap();
                for c in [-2.0f64, 0.5, 3.0] {
                    let ec = sobolev_energy(&d, &u.scaled(c), q).unwrap();
                    prop_assert!((ec - c.abs().powf(q.value()) * e).abs() <= 1e-10 * ec.max(1e-300));
                }
            }

            #[test]
            fn convexity_inequality(a in values(), b in values(), qi in 0usize..4) {
                let d = square();
                let q = p([1.5, 2.0, 3.0, 4.0][qi]);
                let u = GridFunction::new(&d, a).unwrap();
                let v = GridFunction::new(&d, b).unwrap();
                let diff = GridFunction::new(&d, v.values().iter().zip(u.values()).map(|(x, y)| x - y).collect()).unwrap();
                let lhs = sobolev_energy(&d, &v, q).unwrap() - sobolev_energy(&d, &u, q).unwrap();
                let rhs = q.value() * euler_lagrange_apply(&d, &u, &diff, q).unwrap();
                prop_assert!(lhs >= rhs - 1e-9);
            }

            #[test]
            fn truncation_contracts(vals in values()) {
                let d = square();
                let u = GridFunction::new(&d, vals).unwrap();
                let t = truncate(&u);
                for (a, b) in t.values().iter().zip(u.values()) {
                    prop_assert!(a.abs() <= b.abs());
                }
                for e in d.edges() {
                    let (tv, uv) = (t.values(), u.values());
                    prop_assert!((tv[e.head] - tv[e.tail]).abs() <= (uv[e.head] - uv[e.tail]).abs());
                }
                for q in [1.5, 2.0, 3.0] {
                    prop_assert!(sobolev_energy(&d, &t, p(q)).unwrap() <= sobolev_energy(&d, &u, p(q)).unwrap());
                }
            }

            #[test]
            fn euler_identity(vals in values(), qi in 0usize..4) {
                let d = square();
                let q = p([1.5, 2.0, 3.0, 4.0][qi]);
                let u = GridFunction::new(&d, vals).unwrap();
                let e = sobolev_energy(&d, &u, q).unwrap();
                prop_assert!((euler_lagrange_apply(&d, &u, &u, q).unwrap() - e).abs() <= 1e-12 * e.max(1.0));
            }

            #[test]
            fn max_min_is_submodular(a in values(), b in values(), qi in 0usize..4) {
                let d = square();
                let q = p([1.5, 2.0, 3.0, 4.0][qi]);
                let u = GridFunction::new(&d, a).unwrap();
                let v = GridFunction::new(&d, b).unwrap();
                let hi = lattice(&u, &v, LatticeOp::Max).unwrap();
                let lo = lattice(&u, &v, LatticeOp::Min).unwrap();
                let lhs = sobolev_energy(&d, &hi, q).unwrap() + sobolev_energy(&d, &lo, q).unwrap();
                let rhs = sobolev_energy(&d, &u, q).unwrap() + sobolev_energy(&d, &v, q).unwrap();
                prop_assert!(lhs <= rhs * (1.0 + 1e-12));
            }

            #[test]
            fn gradient_is_linear(a in values(), b in values(), c in -3.0..3.0f64) {
                let d = square();
                let u = GridFunction::new(&d, a).unwrap();
                let v = GridFunction::new(&d, b).unwrap();
                let w = GridFunction::new(&d, u.values().iter().zip(v.values()).map(|(x, y)| x + c * y).collect()).unwrap();
                let (gu, gv, gw) = (gradient(&d, &u).unwrap(), gradient(&d, &v).unwrap(), gradient(&d, &w).unwrap());
                for k in 0..gu.len() {
                    for a in 0..2 {
                        prop_assert!((gw[k][a] - gu[k][a] - c * gv[k][a]).abs() <= 1e-9);
                    }
                }
            }
        }
    }
}
