//! Randomized and structured verification of capacity properties.
//!
//! Every check produces a [`PropertyReport`] with one record per trial. A
//! trial compares a left-hand side against a right-hand side; its slack is
//! `rhs - lhs` (or `-|lhs - rhs|` for equalities), and it counts as a
//! violation only when the slack falls below minus its allowance. Trials whose
//! solves do not converge are recorded as skipped.
//!
//! Trials run in parallel. Each draws from its own ChaCha stream selected by
//! the trial index, so reports are identical for any thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::capsolve::{capacity, SolverOptions};
use crate::error::{Error, Result};
use crate::grid::{DomainSpec, Extents, GridDomain, NodeSet, Selector};
use crate::potential::{capacitary_measure, energy, energy_capacity_bound, support_violation, DiscreteMeasure};
use crate::sobolev::{dual_pair, el_pairings, sobolev_energy, GridFunction, PExponent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Pass,
    Violation,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    /// Short sha256 of the trial inputs (node sets and exponents).
    pub inputs_hash: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    /// Combined solver tolerance the slack is allowed to undershoot by.
    pub allowance: f64,
    pub status: TrialStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub property: String,
    pub trials: usize,
    pub violations: usize,
    pub skipped: usize,
    /// Most negative slack among completed trials.
    pub worst_margin: Option<f64>,
    /// Largest `lhs / rhs` for ratio checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sup_ratio: Option<f64>,
    pub seed: u64,
    pub records: Vec<TrialRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl PropertyReport {
    fn assemble(property: &str, seed: u64, records: Vec<TrialRecord>) -> Self {
        let done = || records.iter().filter(|r| r.status != TrialStatus::Skipped);
        PropertyReport {
            property: property.to_string(),
            trials: records.len(),
            violations: records.iter().filter(|r| r.status == TrialStatus::Violation).count(),
            skipped: records.iter().filter(|r| r.status == TrialStatus::Skipped).count(),
            worst_margin: done().map(|r| r.slack).reduce(f64::min),
            sup_ratio: None,
            seed,
            records,
            note: None,
        }
    }

    fn with_ratio(mut self) -> Self {
        self.sup_ratio = self
            .records
            .iter()
            .filter(|r| r.status != TrialStatus::Skipped && r.rhs > 0.0)
            .map(|r| r.lhs / r.rhs)
            .reduce(f64::max);
        self
    }

    fn with_note(mut self, note: &str) -> Self {
        self.note = Some(note.to_string());
        self
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

fn record(trial: usize, hash: String, lhs: f64, rhs: f64, slack: f64, allowance: f64) -> TrialRecord {
    let status = if slack < -allowance { TrialStatus::Violation } else { TrialStatus::Pass };
    TrialRecord { trial, inputs_hash: hash, lhs, rhs, slack, allowance, status }
}

fn skipped(trial: usize, hash: String) -> TrialRecord {
    TrialRecord {
        trial,
        inputs_hash: hash,
        lhs: 0.0,
        rhs: 0.0,
        slack: 0.0,
        allowance: 0.0,
        status: TrialStatus::Skipped,
    }
}

fn inputs_hash(sets: &[&NodeSet], numbers: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for s in sets {
        hasher.update((s.len() as u64).to_le_bytes());
        for &m in s.members() {
            hasher.update((m as u64).to_le_bytes());
        }
    }
    for x in numbers {
        hasher.update(x.to_bits().to_le_bytes());
    }
    hasher.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Capacity value, or `None` when the solve did not converge.
fn cap(domain: &GridDomain, set: &NodeSet, p: PExponent, opts: &SolverOptions) -> Result<Option<f64>> {
    match capacity(domain, set, p, opts) {
        Ok(r) => Ok(Some(r.value)),
        Err(e) if e.is_non_convergence() => Ok(None),
        Err(e) => Err(e),
    }
}

fn caps(domain: &GridDomain, sets: &[&NodeSet], p: PExponent, opts: &SolverOptions) -> Result<Option<Vec<f64>>> {
    let mut out = Vec::with_capacity(sets.len());
    for s in sets {
        match cap(domain, s, p, opts)? {
            Some(v) => out.push(v),
            None => return Ok(None),
        }
    }
    Ok(Some(out))
}

pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

fn run_trials<F>(trials: usize, f: F) -> Result<Vec<TrialRecord>>
where
    F: Fn(usize) -> Result<TrialRecord> + Sync + Send,
{
    (0..trials).into_par_iter().map(f).collect()
}

/// Union of one to four random balls and boxes inside `region` (the extent of
/// the closure when `None`), intersected with the closure. One draw in five
/// keeps only the boundary nodes of the result.
pub fn random_set(domain: &GridDomain, rng: &mut impl Rng, region: Option<&Extents>) -> Result<NodeSet> {
    let region = match region {
        Some(r) => r.clone(),
        None => closure_extent(domain),
    };
    let dim = domain.dimension();
    let h = domain.h();
    let span = region.iter().map(|[lo, hi]| hi - lo).fold(f64::INFINITY, f64::min);
    let point = |rng: &mut dyn rand::RngCore| -> Vec<f64> {
        region.iter().map(|&[lo, hi]| rng.gen_range(lo..=hi)).collect()
    };
    let count = rng.gen_range(1..=4);
    let mut members = Vec::with_capacity(count);
    for _ in 0..count {
        if rng.gen_bool(0.5) {
            let center = point(rng);
            let radius = rng.gen_range(0.5 * h..=(0.35 * span).max(h));
            members.push(Selector::Ball { center, radius });
        } else {
            let (a, b) = (point(rng), point(rng));
            let lower = (0..dim).map(|k| a[k].min(b[k])).collect();
            let upper = (0..dim).map(|k| a[k].max(b[k])).collect();
            members.push(Selector::Box { lower, upper });
        }
    }
    let mut set = domain.node_set(&Selector::Union { members })?;
    let clip = domain.node_set(&Selector::Box {
        lower: region.iter().map(|r| r[0]).collect(),
        upper: region.iter().map(|r| r[1]).collect(),
    })?;
    set = set.intersection(&clip)?;
    if rng.gen_range(0..5) == 0 {
        set = set.intersection(&domain.node_set(&Selector::Boundary)?)?;
    }
    Ok(set)
}

fn closure_extent(domain: &GridDomain) -> Extents {
    let mut ext = vec![[f64::INFINITY, f64::NEG_INFINITY]; domain.dimension()];
    for pos in 0..domain.len() {
        let x = domain.coords(pos);
        for (axis, e) in ext.iter_mut().enumerate() {
            e[0] = e[0].min(x[axis]);
            e[1] = e[1].max(x[axis]);
        }
    }
    ext
}

/// Random subset keeping each member with probability `keep`.
fn thin(domain: &GridDomain, set: &NodeSet, keep: f64, rng: &mut impl Rng) -> Result<NodeSet> {
    let kept = set.members().iter().copied().filter(|_| rng.gen_bool(keep)).collect();
    NodeSet::from_indices(domain, kept)
}

/// `A ⊆ B ⟹ Cap(A) ≤ Cap(B)` on random nested pairs.
pub fn check_monotonicity(
    domain: &GridDomain,
    p: PExponent,
    trials: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<PropertyReport> {
    let allowance = 2.0 * opts.tolerance;
    let records = run_trials(trials, |t| {
        let mut rng = trial_rng(seed, t);
        let b = random_set(domain, &mut rng, None)?;
        let a = if rng.gen_bool(0.5) {
            thin(domain, &b, rng.gen_range(0.0..1.0), &mut rng)?
        } else {
            b.intersection(&random_set(domain, &mut rng, None)?)?
        };
        let hash = inputs_hash(&[&a, &b], &[p.value()]);
        Ok(match caps(domain, &[&a, &b], p, opts)? {
            Some(v) => record(t, hash, v[0], v[1], v[1] - v[0], allowance),
            None => skipped(t, hash),
        })
    })?;
    Ok(PropertyReport::assemble("monotonicity", seed, records))
}

/// `Cap(M₁ ∪ M₂) + Cap(M₁ ∩ M₂) ≤ Cap(M₁) + Cap(M₂)` on random pairs.
pub fn check_strong_subadditivity(
    domain: &GridDomain,
    p: PExponent,
    trials: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<PropertyReport> {
    let allowance = 4.0 * opts.tolerance;
    let records = run_trials(trials, |t| {
        let mut rng = trial_rng(seed, t);
        let m1 = random_set(domain, &mut rng, None)?;
        let m2 = random_set(domain, &mut rng, None)?;
        let (union, meet) = (m1.union(&m2)?, m1.intersection(&m2)?);
        let hash = inputs_hash(&[&m1, &m2], &[p.value()]);
        Ok(match caps(domain, &[&union, &meet, &m1, &m2], p, opts)? {
            Some(v) => {
                let (lhs, rhs) = (v[0] + v[1], v[2] + v[3]);
                record(t, hash, lhs, rhs, rhs - lhs, allowance)
            }
            None => skipped(t, hash),
        })
    })?;
    Ok(PropertyReport::assemble("strong_subadditivity", seed, records))
}

/// `Cap(A₁ ∪ … ∪ A_k) ≤ Σ Cap(A_j)` for random families with `k ≤ k_max`;
/// on a finite grid every countable family reduces to a finite one.
pub fn check_countable_subadditivity(
    domain: &GridDomain,
    p: PExponent,
    trials: usize,
    k_max: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<PropertyReport> {
    if k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be at least 1".into()));
    }
    let records = run_trials(trials, |t| {
        let mut rng = trial_rng(seed, t);
        let k = rng.gen_range(1..=k_max);
        let family = (0..k).map(|_| random_set(domain, &mut rng, None)).collect::<Result<Vec<_>>>()?;
        let mut union = domain.empty_set();
        for s in &family {
            union = union.union(s)?;
        }
        let refs: Vec<&NodeSet> = family.iter().collect();
        let hash = inputs_hash(&refs, &[p.value()]);
        let mut all = vec![&union];
        all.extend(refs.iter().copied());
        Ok(match caps(domain, &all, p, opts)? {
            Some(v) => {
                let rhs: f64 = v[1..].iter().sum();
                record(t, hash, v[0], rhs, rhs - v[0], k as f64 * opts.tolerance)
            }
            None => skipped(t, hash),
        })
    })?;
    Ok(PropertyReport::assemble("countable_subadditivity", seed, records)
        .with_note("finite families stand in for countable ones"))
}

/// Capacities of `dilate(A, r)` for decreasing radii are nonincreasing and
/// equal `Cap(A)` once `r < h`.
pub fn check_outer_regularity(
    domain: &GridDomain,
    set: &NodeSet,
    p: PExponent,
    radii: &[f64],
    opts: &SolverOptions,
) -> Result<PropertyReport> {
    if radii.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("radii must be nonnegative and strictly decreasing".into()));
    }
    let allowance = 2.0 * opts.tolerance;
    let dilated = radii.iter().map(|&r| domain.dilate(set, r)).collect::<Result<Vec<_>>>()?;
    let values = dilated
        .par_iter()
        .map(|s| cap(domain, s, p, opts))
        .collect::<Result<Vec<_>>>()?;
    let base = cap(domain, set, p, opts)?;
    let mut records = Vec::new();
    for k in 0..radii.len() {
        let hash = inputs_hash(&[&dilated[k]], &[p.value(), radii[k]]);
        if k > 0 {
            records.push(match (values[k], values[k - 1]) {
                (Some(now), Some(before)) => record(records.len(), hash.clone(), now, before, before - now, allowance),
                _ => skipped(records.len(), hash.clone()),
            });
        }
        if radii[k] < domain.h() {
            records.push(match (values[k], base) {
                (Some(v), Some(b)) => record(records.len(), hash, v, b, -(v - b).abs(), allowance),
                _ => skipped(records.len(), hash),
            });
        }
    }
    Ok(PropertyReport::assemble("outer_regularity", 0, records))
}

/// Along an increasing chain the capacity is nondecreasing and its last value
/// equals the capacity of the union.
pub fn check_increasing_limit(
    domain: &GridDomain,
    chain: &[NodeSet],
    p: PExponent,
    opts: &SolverOptions,
) -> Result<PropertyReport> {
    for w in chain.windows(2) {
        if !w[0].is_subset(&w[1])? {
            return Err(Error::InvalidArgument("chain is not increasing".into()));
        }
    }
    let allowance = 2.0 * opts.tolerance;
    let mut union = domain.empty_set();
    for s in chain {
        union = union.union(s)?;
    }
    let values = chain
        .par_iter()
        .map(|s| cap(domain, s, p, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut records = Vec::new();
    for k in 1..chain.len() {
        let hash = inputs_hash(&[&chain[k - 1], &chain[k]], &[p.value()]);
        records.push(match (values[k - 1], values[k]) {
            (Some(a), Some(b)) => record(records.len(), hash, a, b, b - a, allowance),
            _ => skipped(records.len(), hash),
        });
    }
    if let Some(last) = chain.last() {
        let hash = inputs_hash(&[last, &union], &[p.value()]);
        records.push(match (values[chain.len() - 1], cap(domain, &union, p, opts)?) {
            (Some(a), Some(b)) => record(records.len(), hash, a, b, -(a - b).abs(), allowance),
            _ => skipped(records.len(), hash),
        });
    }
    Ok(PropertyReport::assemble("increasing_limit", 0, records)
        .with_note("finite chains attain their limit"))
}

/// Increasing chain of `steps` sets, each adding a random set to the last.
pub fn random_chain(domain: &GridDomain, steps: usize, seed: u64) -> Result<Vec<NodeSet>> {
    let mut rng = trial_rng(seed, 0);
    let mut chain: Vec<NodeSet> = Vec::with_capacity(steps);
    let mut current = domain.empty_set();
    for _ in 0..steps {
        current = current.union(&random_set(domain, &mut rng, None)?)?;
        chain.push(current.clone());
    }
    Ok(chain)
}

/// Duality chain for capacitary measures of random sets: `Cap(A)`, `E(μ_A)`
/// and `μ_A(e_A)` agree to `1e-5·max(1, Cap)`, no raw weight of `μ_A` lies
/// below `-1e-7`, and `μ_A` carries at most `1e-5` where `e_A < 1`. The slack
/// of a trial is the smallest margin among these conditions.
pub fn check_duality_chain(
    domain: &GridDomain,
    p: PExponent,
    trials: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<PropertyReport> {
    let records = run_trials(trials, |t| {
        let mut rng = trial_rng(seed, t);
        let a = random_set(domain, &mut rng, None)?;
        let hash = inputs_hash(&[&a], &[p.value()]);
        let (mu, cap) = match capacitary_measure(domain, &a, p, opts) {
            Ok(v) => v,
            Err(e) if e.is_non_convergence() => return Ok(skipped(t, hash)),
            Err(e) => return Err(e),
        };
        let e = match energy(domain, &mu, p, opts) {
            Ok(v) => v,
            Err(e) if e.is_non_convergence() => return Ok(skipped(t, hash)),
            Err(e) => return Err(e),
        };
        let pair = dual_pair(&mu, &cap.extremal)?;
        let norm = sobolev_energy(domain, &cap.extremal, p)?;
        let gap = [e, pair, norm].iter().map(|v| (cap.value - v).abs()).fold(0.0, f64::max);
        let scale = 1e-5 * cap.value.max(1.0);
        let raw_min = el_pairings(domain, &cap.extremal, p)?.into_iter().fold(0.0, f64::min);
        let support = support_violation(&mu, &cap.extremal, opts.tolerance);
        let slack = (scale - gap).min(raw_min + 1e-7).min(1e-5 - support);
        Ok(record(t, hash, cap.value, e, slack, 0.0))
    })?;
    Ok(PropertyReport::assemble("duality_chain", seed, records))
}

/// Random nonnegative measure: diffuse weights on a random set plus up to
/// three point masses, scaled by a random factor in `[0.1, 10]`.
pub fn random_measure(domain: &GridDomain, rng: &mut impl Rng) -> Result<DiscreteMeasure> {
    let support = domain.mask_of(&random_set(domain, rng, None)?)?;
    let mut weights: Vec<f64> = (0..domain.len())
        .map(|i| if support[i] { rng.gen_range(0.0..1.0) * domain.weights()[i] } else { 0.0 })
        .collect();
    for _ in 0..rng.gen_range(0..=3) {
        let i = rng.gen_range(0..domain.len());
        weights[i] += rng.gen_range(0.0..0.1);
    }
    let scale = 10f64.powf(rng.gen_range(-1.0..1.0));
    DiscreteMeasure::new(domain, weights.into_iter().map(|w| w * scale).collect())
}

/// `μ(A)^p ≤ E(μ)^{p-1} Cap(A)` for random nonnegative `μ` and random `A`,
/// with the same relative and absolute slack as the bound itself.
pub fn check_energy_bound(
    domain: &GridDomain,
    p: PExponent,
    trials: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<PropertyReport> {
    let records = run_trials(trials, |t| {
        let mut rng = trial_rng(seed, t);
        let mu = random_measure(domain, &mut rng)?;
        let a = random_set(domain, &mut rng, None)?;
        let numbers: Vec<f64> = std::iter::once(p.value()).chain(mu.weights().iter().copied()).collect();
        let hash = inputs_hash(&[&a], &numbers);
        Ok(match energy_capacity_bound(domain, &mu, &a, p, opts) {
            Ok(b) => record(t, hash, b.lhs, b.rhs, b.rhs * (1.0 + 1e-6) + 1e-9 - b.lhs, 0.0),
            Err(e) if e.is_non_convergence() => skipped(t, hash),
            Err(e) => return Err(e),
        })
    })?;
    Ok(PropertyReport::assemble("energy_bound", seed, records))
}

/// Builds `U ⊆ V` on a common lattice.
fn nested_domains(inner: &DomainSpec, outer: &DomainSpec) -> Result<(GridDomain, GridDomain)> {
    let u = GridDomain::build(inner)?;
    let v = GridDomain::build(outer)?;
    if !u.same_lattice(&v) {
        return Err(Error::BadSpec("inner and outer domains must share bounding box and h".into()));
    }
    if u.omega_mask().iter().zip(v.omega_mask()).any(|(&a, &b)| a && !b) {
        return Err(Error::BadSpec("inner domain is not contained in the outer one".into()));
    }
    Ok((u, v))
}

/// `Cap_U(A) ≤ Cap_V(A)` for `U ⊆ V` and random `A ⊆ closure(U)`.
pub fn check_domain_monotonicity(
    inner: &DomainSpec,
    outer: &DomainSpec,
    p: PExponent,
    trials: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<PropertyReport> {
    let (u, v) = nested_domains(inner, outer)?;
    let allowance = 2.0 * opts.tolerance;
    let records = run_trials(trials, |t| {
        let mut rng = trial_rng(seed, t);
        let a = random_set(&u, &mut rng, None)?;
        let a_outer = a.transfer(&v)?;
        let hash = inputs_hash(&[&a], &[p.value()]);
        Ok(match (cap(&u, &a, p, opts)?, cap(&v, &a_outer, p, opts)?) {
            (Some(lhs), Some(rhs)) => record(t, hash, lhs, rhs, rhs - lhs, allowance),
            _ => skipped(t, hash),
        })
    })?;
    Ok(PropertyReport::assemble("domain_monotonicity", seed, records))
}

/// Largest `Cap_V(A) / Cap_U(A)` over random nonempty `A ⊆ closure(U)`.
/// With `bound` given, trials whose ratio exceeds it are violations.
pub fn check_extension_comparison(
    inner: &DomainSpec,
    outer: &DomainSpec,
    p: PExponent,
    trials: usize,
    seed: u64,
    bound: Option<f64>,
    opts: &SolverOptions,
) -> Result<PropertyReport> {
    let (u, v) = nested_domains(inner, outer)?;
    let records = run_trials(trials, |t| {
        let mut rng = trial_rng(seed, t);
        let a = nonempty(|| random_set(&u, &mut rng, None))?;
        let hash = inputs_hash(&[&a], &[p.value()]);
        Ok(match (cap(&v, &a.transfer(&v)?, p, opts)?, cap(&u, &a, p, opts)?) {
            (Some(lhs), Some(rhs)) => ratio_record(t, hash, lhs, rhs, bound),
            _ => skipped(t, hash),
        })
    })?;
    Ok(PropertyReport::assemble("extension_comparison", seed, records).with_ratio())
}

/// Largest `Cap_q(A) / Cap_p(A)^{q/p}` over random nonempty `A` inside the
/// compact box `compact`, for `q ≤ p`.
#[allow(clippy::too_many_arguments)]
pub fn check_pq_comparison(
    domain: &GridDomain,
    q: PExponent,
    p: PExponent,
    compact: &Extents,
    trials: usize,
    seed: u64,
    bound: Option<f64>,
    opts: &SolverOptions,
) -> Result<PropertyReport> {
    if q > p {
        return Err(Error::InvalidArgument(format!("q = {} exceeds p = {}", q.value(), p.value())));
    }
    let opts_q = options_for(opts, q);
    let opts_p = options_for(opts, p);
    let exponent = q.value() / p.value();
    let records = run_trials(trials, |t| {
        let mut rng = trial_rng(seed, t);
        let a = match nonempty(|| random_set(domain, &mut rng, Some(compact))) {
            Ok(a) => a,
            Err(Error::InvalidArgument(_)) => return Ok(skipped(t, String::new())),
            Err(e) => return Err(e),
        };
        let hash = inputs_hash(&[&a], &[q.value(), p.value()]);
        Ok(match (cap(domain, &a, q, &opts_q)?, cap(domain, &a, p, &opts_p)?) {
            (Some(cq), Some(cp)) => ratio_record(t, hash, cq, cp.powf(exponent), bound),
            _ => skipped(t, hash),
        })
    })?;
    Ok(PropertyReport::assemble("pq_comparison", seed, records).with_ratio())
}

/// The caller's options, falling back to the default algorithm when the
/// requested one does not apply to `p`.
fn options_for(opts: &SolverOptions, p: PExponent) -> SolverOptions {
    let mut o = opts.clone();
    if o.validate(p).is_err() {
        o.algorithm = None;
    }
    o
}

fn nonempty(mut draw: impl FnMut() -> Result<NodeSet>) -> Result<NodeSet> {
    for _ in 0..64 {
        let s = draw()?;
        if !s.is_empty() {
            return Ok(s);
        }
    }
    Err(Error::InvalidArgument("could not draw a nonempty set".into()))
}

fn ratio_record(t: usize, hash: String, lhs: f64, rhs: f64, bound: Option<f64>) -> TrialRecord {
    match bound {
        Some(c) => record(t, hash, lhs, rhs, c * rhs - lhs, 0.0),
        None => TrialRecord {
            trial: t,
            inputs_hash: hash,
            lhs,
            rhs,
            slack: 0.0,
            allowance: 0.0,
            status: TrialStatus::Pass,
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub h: f64,
    pub value: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    /// Values decrease strictly towards zero.
    Decay,
    /// Values settle at a positive level.
    Stable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementStudy {
    pub rows: Vec<RefinementRow>,
    pub expectation: Expectation,
    pub holds: bool,
}

/// Capacity of the set picked by `selector` on `spec` refined to each `h`.
pub fn refinement_study(
    spec: &DomainSpec,
    selector: &Selector,
    p: PExponent,
    h_list: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<RefinementRow>> {
    if h_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("h values must be strictly decreasing".into()));
    }
    h_list
        .par_iter()
        .map(|&h| {
            let domain = GridDomain::build(&spec.with_h(h))?;
            let set = domain.node_set(selector)?;
            let r = capacity(&domain, &set, p, opts)?;
            Ok(RefinementRow { h, value: r.value, iterations: r.iterations })
        })
        .collect()
}

/// Capacity of the node at `point` under refinement. Points are polar for
/// `p ≤ N`, so in 2D with `p ≤ 2` the values must decrease strictly; in 1D,
/// or for `p > N`, they must settle at a positive level.
pub fn polar_refinement_study(
    spec: &DomainSpec,
    point: &[f64],
    p: PExponent,
    h_list: &[f64],
    opts: &SolverOptions,
) -> Result<RefinementStudy> {
    let rows = refinement_study(spec, &Selector::Point { point: point.to_vec() }, p, h_list, opts)?;
    let expectation = if p.value() <= spec.dimension as f64 && spec.dimension > 1 {
        Expectation::Decay
    } else {
        Expectation::Stable
    };
    let holds = match expectation {
        Expectation::Decay => rows.windows(2).all(|w| w[1].value < w[0].value),
        Expectation::Stable => match rows.as_slice() {
            [.., a, b] => {
                let peak = rows.iter().map(|r| r.value).fold(0.0, f64::max);
                b.value >= 0.5 * peak && (b.value - a.value).abs() <= 0.05 * b.value
            }
            _ => rows.iter().all(|r| r.value > 0.0),
        },
    };
    Ok(RefinementStudy { rows, expectation, holds })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MembershipVerdict {
    /// Boundary nodes where `|u| > δ`.
    pub exceptional: NodeSet,
    pub capacity: f64,
    /// Discrete diagnostic: the exceptional set has capacity at most the
    /// threshold. It does not prove membership of a continuum function.
    pub member: bool,
}

/// Trace test for zero boundary values: collects the boundary nodes where
/// `|u| > delta` and compares their capacity with `epsilon`.
pub fn w1p0_membership(
    domain: &GridDomain,
    u: &GridFunction,
    p: PExponent,
    delta: f64,
    epsilon: f64,
    opts: &SolverOptions,
) -> Result<MembershipVerdict> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {delta}")));
    }
    u.check_on(domain)?;
    let values = u.values();
    let exceptional: Vec<usize> = (0..domain.len())
        .filter(|&i| !domain.is_omega_position(i) && values[i].abs() > delta)
        .map(|i| domain.grid_index(i))
        .collect();
    let exceptional = NodeSet::from_indices(domain, exceptional)?;
    let capacity = capacity(domain, &exceptional, p, opts)?.value;
    Ok(MembershipVerdict { exceptional, capacity, member: capacity <= epsilon })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEntry {
    pub name: String,
    pub sup_ratio: f64,
    /// Free-form description of the run that produced the constant.
    #[serde(default)]
    pub setup: String,
}

/// Versioned store of empirical comparison constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub version: u32,
    pub entries: Vec<CalibrationEntry>,
}

impl Calibration {
    pub const VERSION: u32 = 1;

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Calibration = serde_json::from_str(text).map_err(|e| Error::Format {
            what: "calibration",
            message: e.to_string(),
        })?;
        if c.version != Self::VERSION {
            return Err(Error::Format {
                what: "calibration",
                message: format!("version {} (expected {})", c.version, Self::VERSION),
            });
        }
        Ok(c)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.sup_ratio)
    }

    /// Whether `observed` lies within `rel` (relative) of the stored constant.
    pub fn agrees(&self, name: &str, observed: f64, rel: f64) -> Option<bool> {
        self.get(name).map(|c| (observed - c).abs() <= rel * c.abs())
    }
}
