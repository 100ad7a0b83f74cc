//! Subcommand pipelines. Each produces its artifacts in memory; the caller
//! writes them and the manifest.

use std::path::Path;

use pcap_core::io::{
    field_csv, from_json, measure_csv, read_field_csv, read_measure_csv, read_to_string, to_json, trials_csv,
    CapacityDoc, FieldDoc, MeasureDoc, PotentialDoc, ReportDoc, FORMAT_VERSION,
};
use pcap_core::potential::energy;
use pcap_core::propcheck::{
    check_countable_subadditivity, check_domain_monotonicity, check_duality_chain, check_energy_bound,
    check_extension_comparison, check_increasing_limit, check_monotonicity, check_outer_regularity,
    check_pq_comparison, check_strong_subadditivity, polar_refinement_study, random_chain, refinement_study,
    w1p0_membership, Calibration, Expectation, RefinementRow,
};
use pcap_core::sobolev::dual_pair;
use pcap_core::{
    capacitary_measure, capacity, solve_potential, CapacityResult, DiscreteMeasure, Error, GridDomain, GridFunction,
    NodeSet, PExponent, PotentialResult, PropertyReport,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Experiment, MeasureConfig};
use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Property {
    Monotonicity,
    StrongSubadditivity,
    CountableSubadditivity,
    OuterRegularity,
    IncreasingLimit,
    DualityChain,
    EnergyBound,
    DomainMonotonicity,
    ExtensionComparison,
    PqComparison,
    PolarRefinement,
    W1p0Membership,
}

impl Property {
    pub fn name(self) -> &'static str {
        match self {
            Property::Monotonicity => "monotonicity",
            Property::StrongSubadditivity => "strong_subadditivity",
            Property::CountableSubadditivity => "countable_subadditivity",
            Property::OuterRegularity => "outer_regularity",
            Property::IncreasingLimit => "increasing_limit",
            Property::DualityChain => "duality_chain",
            Property::EnergyBound => "energy_bound",
            Property::DomainMonotonicity => "domain_monotonicity",
            Property::ExtensionComparison => "extension_comparison",
            Property::PqComparison => "pq_comparison",
            Property::PolarRefinement => "polar_refinement",
            Property::W1p0Membership => "w1p0_membership",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Capacity,
    Potential,
    Measure,
    Check(Property),
    Refine,
    Emit,
}

impl Command {
    pub fn label(self) -> String {
        match self {
            Command::Capacity => "capacity".into(),
            Command::Potential => "potential".into(),
            Command::Measure => "measure".into(),
            Command::Check(p) => format!("check {}", p.name()),
            Command::Refine => "refine".into(),
            Command::Emit => "emit".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub path: String,
    pub description: String,
    pub contents: String,
}

/// Artifacts of a run plus the counts that decide its exit code.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    pub violations: usize,
    pub nonconverged: usize,
    pub messages: Vec<String>,
}

impl Outcome {
    /// 1 for a property violation, 3 for non-convergence, else 0.
    pub fn exit_code(&self) -> u8 {
        if self.violations > 0 {
            1
        } else if self.nonconverged > 0 {
            3
        } else {
            0
        }
    }

    fn add(&mut self, path: String, description: String, contents: String) {
        self.artifacts.push(Artifact { path, description, contents });
    }

    fn absorb(&mut self, other: Outcome) {
        self.artifacts.extend(other.artifacts);
        self.violations += other.violations;
        self.nonconverged += other.nonconverged;
        self.messages.extend(other.messages);
    }
}

fn label(p: PExponent) -> String {
    format!("p{}", p.value())
}

fn named_set(exp: &Experiment, name: &str) -> CliResult<NodeSet> {
    Ok(exp.domain.node_set(exp.selector(name)?)?)
}

fn need_sets(exp: &Experiment, what: &str) -> CliResult<()> {
    if exp.config.sets.is_empty() {
        return Err(CliError::Config(format!("{what} needs at least one set under [sets]")));
    }
    Ok(())
}

/// Every (set, exponent) pair, set-major.
fn set_jobs(exp: &Experiment) -> Vec<(&str, PExponent)> {
    exp.config
        .sets
        .keys()
        .flat_map(|name| exp.exponents.iter().map(move |&p| (name.as_str(), p)))
        .collect()
}

/// Solve result, or the partial result when the solve did not converge.
fn capacity_or_partial(exp: &Experiment, set: &NodeSet, p: PExponent) -> CliResult<CapacityResult> {
    match capacity(&exp.domain, set, p, &exp.options(p)) {
        Ok(r) => Ok(r),
        Err(Error::CapacityNotConverged(r)) => Ok(*r),
        Err(e) => Err(e.into()),
    }
}

fn potential_or_partial(exp: &Experiment, mu: &DiscreteMeasure, p: PExponent) -> CliResult<PotentialResult> {
    match solve_potential(&exp.domain, mu, p, &exp.options(p)) {
        Ok(r) => Ok(r),
        Err(Error::PotentialNotConverged(r)) => Ok(*r),
        Err(e) => Err(e.into()),
    }
}

fn collect(parts: Vec<CliResult<Outcome>>) -> CliResult<Outcome> {
    let mut out = Outcome::default();
    for part in parts {
        out.absorb(part?);
    }
    Ok(out)
}

pub fn execute(exp: &Experiment, command: Command) -> CliResult<Outcome> {
    match command {
        Command::Capacity => run_capacity(exp),
        Command::Potential => run_potential(exp),
        Command::Measure => run_measure(exp),
        Command::Check(property) => run_check(exp, property),
        Command::Refine => run_refine(exp),
        Command::Emit => run_emit(exp),
    }
}

fn run_capacity(exp: &Experiment) -> CliResult<Outcome> {
    need_sets(exp, "capacity")?;
    let parts = set_jobs(exp)
        .into_par_iter()
        .map(|(name, p)| {
            let set = named_set(exp, name)?;
            let r = capacity_or_partial(exp, &set, p)?;
            let mut out = Outcome::default();
            let stem = format!("capacity_{name}_{}", label(p));
            if !r.converged {
                out.nonconverged += 1;
                out.messages.push(format!("{stem}: not converged (residual {:.3e})", r.kkt_residual));
            }
            let what = format!("capacity of set '{name}' at p = {}", p.value());
            out.add(format!("{stem}.json"), what.clone(), to_json(&CapacityDoc::new(&exp.domain, &set, &r)?)?);
            out.add(format!("{stem}.csv"), format!("extremal for {what}"), field_csv(&exp.domain, &r.extremal)?);
            Ok(out)
        })
        .collect();
    collect(parts)
}

fn input_measure(exp: &Experiment, p: PExponent) -> CliResult<DiscreteMeasure> {
    let d = &exp.domain;
    let config = exp
        .config
        .measure
        .as_ref()
        .ok_or_else(|| CliError::Config("this command needs a [measure] section".into()))?;
    Ok(match config {
        MeasureConfig::Quadrature { scale } => DiscreteMeasure::quadrature(d).scaled(*scale),
        MeasureConfig::Point { point, mass } => {
            let grid = d.nearest_grid_node(point).and_then(|g| d.position(g));
            let pos = grid.ok_or_else(|| CliError::Config(format!("measure point {point:?} is not a closure node")))?;
            DiscreteMeasure::point_mass(d, pos, *mass)?
        }
        MeasureConfig::Csv { path } => read_measure_csv(d, &read_to_string(&exp.resolve(path))?)?,
        MeasureConfig::Capacitary { set } => capacitary_measure(d, &named_set(exp, set)?, p, &exp.options(p))?.0,
    })
}

fn run_potential(exp: &Experiment) -> CliResult<Outcome> {
    let parts = exp
        .exponents
        .par_iter()
        .map(|&p| {
            let mu = input_measure(exp, p)?;
            let r = potential_or_partial(exp, &mu, p)?;
            let mut out = Outcome::default();
            let stem = format!("potential_{}", label(p));
            if !r.converged {
                out.nonconverged += 1;
                out.messages.push(format!("{stem}: not converged (residual {:.3e})", r.el_residual));
            }
            let what = format!("potential at p = {}", p.value());
            out.add(format!("{stem}.json"), what.clone(), to_json(&PotentialDoc::new(&exp.domain, p.value(), &r)?)?);
            out.add(format!("{stem}.csv"), format!("{what}, nodal values"), field_csv(&exp.domain, &r.potential)?);
            Ok(out)
        })
        .collect();
    collect(parts)
}

#[derive(Serialize)]
struct CapacitaryMeasureDoc {
    format: &'static str,
    version: u32,
    set: String,
    p: f64,
    capacity: f64,
    /// `E(μ)` through the potential of `μ`.
    energy: f64,
    /// `μ(e_A)`.
    pairing: f64,
    measure: MeasureDoc,
}

fn run_measure(exp: &Experiment) -> CliResult<Outcome> {
    need_sets(exp, "measure")?;
    let d = &exp.domain;
    let parts = set_jobs(exp)
        .into_par_iter()
        .map(|(name, p)| {
            let set = named_set(exp, name)?;
            let opts = exp.options(p);
            let stem = format!("measure_{name}_{}", label(p));
            let mut out = Outcome::default();
            let solved = capacitary_measure(d, &set, p, &opts).and_then(|(mu, cap)| {
                let e = energy(d, &mu, p, &opts)?;
                Ok((mu, cap, e))
            });
            let (mu, cap, e) = match solved {
                Ok(v) => v,
                Err(err) if err.is_non_convergence() => {
                    out.nonconverged += 1;
                    out.messages.push(format!("{stem}: {err}"));
                    return Ok(out);
                }
                Err(err) => return Err(err.into()),
            };
            let doc = CapacitaryMeasureDoc {
                format: "pcap.capacitary_measure",
                version: FORMAT_VERSION,
                set: name.to_string(),
                p: p.value(),
                capacity: cap.value,
                energy: e,
                pairing: dual_pair(&mu, &cap.extremal)?,
                measure: MeasureDoc::new(d, &mu)?,
            };
            let what = format!("capacitary measure of set '{name}' at p = {}", p.value());
            out.add(format!("{stem}.json"), what.clone(), to_json(&doc)?);
            out.add(format!("{stem}.csv"), format!("{what}, nodal weights"), measure_csv(d, &mu)?);
            Ok(out)
        })
        .collect();
    collect(parts)
}

fn report_outcome(report: PropertyReport, stem: &str, what: &str) -> CliResult<Outcome> {
    let mut out = Outcome {
        violations: report.violations,
        nonconverged: report.skipped,
        ..Outcome::default()
    };
    if report.skipped > 0 {
        out.messages.push(format!("{stem}: {} trials skipped after non-convergence", report.skipped));
    }
    if report.violations > 0 {
        out.messages.push(format!("{stem}: {} violations, worst margin {:?}", report.violations, report.worst_margin));
    }
    out.add(format!("{stem}.csv"), format!("{what}, per-trial records"), trials_csv(&report)?);
    out.add(format!("{stem}.json"), what.to_string(), to_json(&ReportDoc::new(report))?);
    Ok(out)
}

fn require<T: Clone>(value: &Option<T>, key: &str, property: Property) -> CliResult<T> {
    value
        .clone()
        .ok_or_else(|| CliError::Config(format!("check {} needs [check] {key}", property.name())))
}

fn run_check(exp: &Experiment, property: Property) -> CliResult<Outcome> {
    let mut out = Outcome::default();
    for &p in &exp.exponents {
        let stem = format!("check_{}_{}", property.name(), label(p));
        let what = format!("{} at p = {}", property.name(), p.value());
        let part = match property {
            Property::PolarRefinement => polar(exp, p, &stem, &what)?,
            Property::W1p0Membership => membership(exp, p, &stem, &what)?,
            _ => {
                let report = property_report(exp, property, p)?;
                let mut part = calibrated(exp, property, &report, &stem)?;
                part.absorb(report_outcome(report, &stem, &what)?);
                part
            }
        };
        out.absorb(part);
    }
    Ok(out)
}

fn property_report(exp: &Experiment, property: Property, p: PExponent) -> CliResult<PropertyReport> {
    let c = &exp.config.check;
    let d = &exp.domain;
    let opts = exp.options(p);
    let seed = exp.config.seed;
    let trials = c.trials.unwrap_or(50);
    let h = d.h();
    let report = match property {
        Property::Monotonicity => check_monotonicity(d, p, trials, seed, &opts)?,
        Property::StrongSubadditivity => check_strong_subadditivity(d, p, trials, seed, &opts)?,
        Property::CountableSubadditivity => {
            check_countable_subadditivity(d, p, trials, c.k_max.unwrap_or(5), seed, &opts)?
        }
        Property::OuterRegularity => {
            let set = named_set(exp, &require(&c.set, "set", property)?)?;
            let radii = c.radii.clone().unwrap_or_else(|| vec![4.0 * h, 3.0 * h, 2.0 * h, h, 0.5 * h, 0.0]);
            check_outer_regularity(d, &set, p, &radii, &opts)?
        }
        Property::IncreasingLimit => {
            let chain = random_chain(d, c.chain_steps.unwrap_or(6), seed)?;
            check_increasing_limit(d, &chain, p, &opts)?
        }
        Property::DualityChain => check_duality_chain(d, p, trials, seed, &opts)?,
        Property::EnergyBound => check_energy_bound(d, p, trials, seed, &opts)?,
        Property::DomainMonotonicity => {
            let outer = require(&c.outer, "outer", property)?;
            check_domain_monotonicity(&exp.config.domain, &outer, p, trials, seed, &opts)?
        }
        Property::ExtensionComparison => {
            let outer = require(&c.outer, "outer", property)?;
            check_extension_comparison(&exp.config.domain, &outer, p, trials, seed, c.bound, &opts)?
        }
        Property::PqComparison => {
            let q = PExponent::new(require(&c.q, "q", property)?)?;
            let compact = require(&c.compact, "compact", property)?;
            check_pq_comparison(d, q, p, &compact, trials, seed, c.bound, &opts)?
        }
        Property::PolarRefinement | Property::W1p0Membership => unreachable!("handled by run_check"),
    };
    Ok(report)
}

/// Compares a sup ratio with the calibration fixture named in the config.
/// Disagreement beyond 5% counts as one violation.
fn calibrated(exp: &Experiment, property: Property, report: &PropertyReport, stem: &str) -> CliResult<Outcome> {
    let mut out = Outcome::default();
    let (Some(path), Some(observed)) = (&exp.config.check.calibration, report.sup_ratio) else {
        return Ok(out);
    };
    let cal = Calibration::from_json(&read_to_string(&exp.resolve(path))?)?;
    match cal.agrees(property.name(), observed, 0.05) {
        Some(true) => {}
        Some(false) => {
            out.violations += 1;
            let stored = cal.get(property.name()).unwrap_or(f64::NAN);
            out.messages.push(format!("{stem}: sup ratio {observed} differs from calibrated {stored} by more than 5%"));
        }
        None => {
            return Err(CliError::Config(format!("calibration file has no entry '{}'", property.name())));
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct RefinementDoc {
    format: &'static str,
    version: u32,
    p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    expectation: Option<Expectation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    holds: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference: Option<f64>,
    rows: Vec<RefinementRow>,
}

fn refinement_csv(rows: &[RefinementRow], reference: Option<f64>) -> String {
    let mut s = String::from("h,value,error\n");
    for r in rows {
        let err = reference.map(|c| (r.value - c).abs().to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{err}\n", r.h, r.value));
    }
    s
}

fn polar(exp: &Experiment, p: PExponent, stem: &str, what: &str) -> CliResult<Outcome> {
    let c = &exp.config.check;
    let point = require(&c.point, "point", Property::PolarRefinement)?;
    let h_list = require(&c.h_list, "h_list", Property::PolarRefinement)?;
    let study = polar_refinement_study(&exp.config.domain, &point, p, &h_list, &exp.options(p))?;
    let mut out = Outcome::default();
    if !study.holds {
        out.violations += 1;
        out.messages.push(format!("{stem}: refinement does not show the expected {:?} behaviour", study.expectation));
    }
    let doc = RefinementDoc {
        format: "pcap.refinement",
        version: FORMAT_VERSION,
        p: p.value(),
        expectation: Some(study.expectation),
        holds: Some(study.holds),
        reference: None,
        rows: study.rows.clone(),
    };
    out.add(format!("{stem}.csv"), format!("{what}, table"), refinement_csv(&study.rows, None));
    out.add(format!("{stem}.json"), what.to_string(), to_json(&doc)?);
    Ok(out)
}

fn read_field(exp: &Experiment, path: &Path) -> CliResult<GridFunction> {
    let text = read_to_string(&exp.resolve(path))?;
    Ok(if path.extension().is_some_and(|e| e == "json") {
        from_json::<FieldDoc>(&text)?.to_field(&exp.domain)?
    } else {
        read_field_csv(&exp.domain, &text)?
    })
}

#[derive(Serialize)]
struct MembershipDoc {
    format: &'static str,
    version: u32,
    p: f64,
    delta: f64,
    epsilon: f64,
    exceptional: Vec<usize>,
    capacity: f64,
    member: bool,
    note: &'static str,
}

fn membership(exp: &Experiment, p: PExponent, stem: &str, what: &str) -> CliResult<Outcome> {
    let c = &exp.config.check;
    let u = read_field(exp, &require(&c.field, "field", Property::W1p0Membership)?)?;
    let (delta, epsilon) = (c.delta.unwrap_or(1e-6), c.epsilon.unwrap_or(1e-6));
    let v = w1p0_membership(&exp.domain, &u, p, delta, epsilon, &exp.options(p))?;
    let doc = MembershipDoc {
        format: "pcap.w1p0_membership",
        version: FORMAT_VERSION,
        p: p.value(),
        delta,
        epsilon,
        exceptional: v.exceptional.members().to_vec(),
        capacity: v.capacity,
        member: v.member,
        note: "discrete diagnostic: small capacity of the exceptional boundary set, not a proof of membership",
    };
    let mut out = Outcome::default();
    out.add(format!("{stem}.json"), what.to_string(), to_json(&doc)?);
    Ok(out)
}

fn run_refine(exp: &Experiment) -> CliResult<Outcome> {
    let r = exp
        .config
        .refine
        .as_ref()
        .ok_or_else(|| CliError::Config("refine needs a [refine] section".into()))?;
    let h_list: Vec<f64> = match (&r.h, r.levels) {
        (Some(h), None) => h.clone(),
        (None, Some([lo, hi])) if lo <= hi && hi < 31 => (lo..=hi).map(|k| 0.5f64.powi(k as i32)).collect(),
        (None, Some(_)) => return Err(CliError::Config("refine levels must be [k_min, k_max] with k_min <= k_max <= 30".into())),
        _ => return Err(CliError::Config("refine needs exactly one of h or levels".into())),
    };
    let selector = exp.selector(&r.set)?;
    let mut out = Outcome::default();
    for &p in &exp.exponents {
        let rows = refinement_study(&exp.config.domain, selector, p, &h_list, &exp.options(p))?;
        let stem = format!("refine_{}_{}", r.set, label(p));
        let what = format!("refinement of set '{}' at p = {}", r.set, p.value());
        let doc = RefinementDoc {
            format: "pcap.refinement",
            version: FORMAT_VERSION,
            p: p.value(),
            expectation: None,
            holds: None,
            reference: r.reference,
            rows: rows.clone(),
        };
        out.add(format!("{stem}.csv"), format!("{what}, table"), refinement_csv(&rows, r.reference));
        out.add(format!("{stem}.json"), what, to_json(&doc)?);
    }
    Ok(out)
}

fn emit_field(out: &mut Outcome, domain: &GridDomain, u: &GridFunction, stem: &str, what: &str) -> CliResult<()> {
    out.add(format!("{stem}.csv"), format!("{what}, nodal values"), field_csv(domain, u)?);
    out.add(format!("{stem}.json"), what.to_string(), to_json(&FieldDoc::new(domain, u)?)?);
    Ok(())
}

fn run_emit(exp: &Experiment) -> CliResult<Outcome> {
    let e = exp
        .config
        .emit
        .as_ref()
        .ok_or_else(|| CliError::Config("emit needs an [emit] section".into()))?;
    if e.field.is_none() && e.set.is_none() {
        return Err(CliError::Config("[emit] needs field or set".into()));
    }
    let mut out = Outcome::default();
    if let Some(path) = &e.field {
        let u = read_field(exp, path)?;
        emit_field(&mut out, &exp.domain, &u, "field", &format!("field read from {}", path.display()))?;
    }
    if let Some(name) = &e.set {
        let set = named_set(exp, name)?;
        for &p in &exp.exponents {
            let r = capacity_or_partial(exp, &set, p)?;
            let stem = format!("extremal_{name}_{}", label(p));
            if !r.converged {
                out.nonconverged += 1;
                out.messages.push(format!("{stem}: not converged (residual {:.3e})", r.kkt_residual));
            }
            let what = format!("extremal of set '{name}' at p = {}", p.value());
            emit_field(&mut out, &exp.domain, &r.extremal, &stem, &what)?;
        }
    }
    Ok(out)
}
