//! Fixtures shared by the solver benchmarks.

use pcap_core::{DomainSpec, GridDomain, NodeSet, PExponent, Selector};

/// Unit square at spacing `1/n` with a centred disc of radius 0.2.
pub fn disc_problem(n: u32) -> (GridDomain, NodeSet) {
    let domain = GridDomain::build(&DomainSpec::unit_square(1.0 / f64::from(n))).expect("unit square");
    let set = domain
        .node_set(&Selector::Ball { center: vec![0.5, 0.5], radius: 0.2 })
        .expect("disc");
    (domain, set)
}

/// Unit interval at spacing `1/n` with the midpoint as obstacle.
pub fn midpoint_problem(n: u32) -> (GridDomain, NodeSet) {
    let domain = GridDomain::build(&DomainSpec::unit_interval(1.0 / f64::from(n))).expect("unit interval");
    let set = domain.node_set(&Selector::Point { point: vec![0.5] }).expect("midpoint");
    (domain, set)
}

pub fn exponent(p: f64) -> PExponent {
    PExponent::new(p).expect("exponent in range")
}
