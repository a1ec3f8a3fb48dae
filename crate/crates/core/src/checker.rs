//! Sampled evaluation of the MF-linearizability conditions.
//!
//! Every condition is tested pointwise at quasi-random samples of the system
//! domain. Points where the rank condition fails are excluded from the other
//! conditions and reported as excluded regions.

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{
    covariant_derivative, lie_bracket, second_covariant_derivative, FieldTape, MechanicalSystem, VectorFieldSym,
};
use crate::linalg::{conditioning, membership_residual, numerical_rank};
use crate::sampling::domain_samples;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub sample_count: usize,
    pub rng_seed: u64,
    /// Relative singular-value threshold.
    pub rank_tol: f64,
    /// Relative least-squares residual threshold.
    pub membership_tol: f64,
    /// Failing fraction at or below which a condition is "boundary".
    pub boundary_fraction: f64,
}

pub const DEFAULT_SEED: u64 = 20_240_917;

impl Default for SamplingPlan {
    fn default() -> SamplingPlan {
        SamplingPlan {
            sample_count: 128,
            rng_seed: DEFAULT_SEED,
            rank_tol: 1e-8,
            membership_tol: 1e-8,
            boundary_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CheckError {
    #[error("sample_count must be at least 8, got {0}")]
    TooFewSamples(usize),
    #[error("tolerances must be positive and finite")]
    BadTolerance,
    #[error("this check needs n = 2, system has n = {0}")]
    NeedsPlanar(usize),
    #[error("this check needs n >= 3, system has n = {0}")]
    NeedsSpatial(usize),
}

impl SamplingPlan {
    pub fn validate(&self) -> Result<(), CheckError> {
        if self.sample_count < 8 {
            return Err(CheckError::TooFewSamples(self.sample_count));
        }
        let ok = |t: f64| t > 0.0 && t.is_finite();
        if !ok(self.rank_tol) || !ok(self.membership_tol) || !(0.0..1.0).contains(&self.boundary_fraction) {
            return Err(CheckError::BadTolerance);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionVerdict {
    pub condition: String,
    pub status: Status,
    /// Worst membership residual, or for rank conditions the smallest
    /// normalized singular value seen.
    pub residual: f64,
    pub witness: Option<Vec<f64>>,
    pub samples_failed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Overall {
    Linearizable,
    NotLinearizable,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcludedRegion {
    pub point: Vec<f64>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MFReport {
    pub verdicts: Vec<ConditionVerdict>,
    pub overall: Overall,
    pub excluded: Vec<ExcludedRegion>,
    pub samples: usize,
    pub note: String,
}

impl MFReport {
    pub fn verdict(&self, condition: &str) -> Option<&ConditionVerdict> {
        self.verdicts.iter().find(|v| v.condition == condition)
    }
}

fn classify(failed: usize, total: usize, plan: &SamplingPlan) -> Status {
    if failed == 0 {
        Status::Pass
    } else if total > 0 && failed as f64 <= plan.boundary_fraction * total as f64 {
        Status::Boundary
    } else {
        Status::Fail
    }
}

/// Running worst-case tracker for one condition.
struct Tally {
    id: String,
    worst: f64,
    witness: Option<Vec<f64>>,
    failed: usize,
    total: usize,
    /// `true` when larger residuals are worse.
    maximize: bool,
}

impl Tally {
    fn new(id: String, maximize: bool) -> Tally {
        let worst = if maximize { 0.0 } else { f64::INFINITY };
        Tally { id, worst, witness: None, failed: 0, total: 0, maximize }
    }

    fn record(&mut self, x: &[f64], value: f64, failed: bool) {
        self.total += 1;
        if failed {
            self.failed += 1;
        }
        let worse = if self.maximize { !(value <= self.worst) } else { !(value >= self.worst) };
        if worse || self.witness.is_none() {
            self.worst = value;
            self.witness = Some(x.to_vec());
        }
    }

    fn finish(self, plan: &SamplingPlan) -> ConditionVerdict {
        if self.total == 0 {
            // nothing could be evaluated: no evidence either way
            return ConditionVerdict {
                condition: self.id,
                status: Status::Boundary,
                residual: 0.0,
                witness: None,
                samples_failed: 0,
            };
        }
        ConditionVerdict {
            condition: self.id,
            status: classify(self.failed, self.total, plan),
            residual: self.worst,
            witness: self.witness,
            samples_failed: self.failed,
        }
    }
}

/// Outcome of the rank condition: the verdict plus the usable samples.
struct RankScan {
    verdict: ConditionVerdict,
    valid: Vec<Vec<f64>>,
    excluded: Vec<ExcludedRegion>,
}

/// Median norm of each field over the samples, used to put the generators
/// on a common scale before rank decisions. Fields that vanish everywhere
/// keep scale 1.
fn column_scales(tape: &FieldTape, count: usize, pts: &[Vec<f64>]) -> Vec<f64> {
    let mut norms: Vec<Vec<f64>> = vec![Vec::new(); count];
    for x in pts {
        if let Ok(cols) = tape.eval(x) {
            for (acc, c) in norms.iter_mut().zip(cols) {
                let v = c.iter().map(|a| a * a).sum::<f64>().sqrt();
                if v.is_finite() && v > 0.0 {
                    acc.push(v);
                }
            }
        }
    }
    norms
        .into_iter()
        .map(|mut v| {
            if v.is_empty() {
                return 1.0;
            }
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        })
        .collect()
}

fn scaled_columns(tape: &FieldTape, scales: &[f64], x: &[f64]) -> Option<Vec<Vec<f64>>> {
    let cols = tape.eval(x).ok()?;
    if !cols.iter().flatten().all(|a| a.is_finite()) {
        return None;
    }
    Some(cols.into_iter().zip(scales).map(|(c, s)| c.iter().map(|a| a / s).collect()).collect())
}

fn rank_measure(tape: &FieldTape, scales: &[f64], x: &[f64]) -> f64 {
    scaled_columns(tape, scales, x).map_or(0.0, |c| conditioning(&c))
}

/// Compass search in unit-cube coordinates for a local minimum of the rank
/// measure, starting from `start`.
fn descend(
    sys: &MechanicalSystem,
    ad: &FieldTape,
    scales: &[f64],
    start: &[f64],
    stop_below: f64,
) -> (Vec<f64>, f64) {
    let dom = sys.domain();
    let f = |u: &[f64]| rank_measure(ad, scales, &dom.point_from_unit(u));
    let mut u = dom.unit_from_point(start);
    let mut best = f(&u);
    let mut step = 1.0 / 16.0;
    let mut iterations = 0;
    while step > 1e-13 && best > stop_below && iterations < 4000 {
        iterations += 1;
        let mut improved: Option<(Vec<f64>, f64)> = None;
        for axis in 0..u.len() {
            for sign in [-1.0, 1.0] {
                let mut cand = u.clone();
                cand[axis] = (cand[axis] + sign * step).clamp(0.0, 1.0);
                if cand[axis] == u[axis] {
                    continue;
                }
                let v = f(&cand);
                if v < improved.as_ref().map_or(best, |c| c.1) {
                    improved = Some((cand, v));
                }
            }
        }
        match improved {
            Some((cand, v)) => {
                u = cand;
                best = v;
            }
            None => step *= 0.5,
        }
    }
    (dom.point_from_unit(&u), best)
}

fn scan_rank(sys: &MechanicalSystem, plan: &SamplingPlan, id: &str) -> RankScan {
    let n = sys.n();
    let ad = sys.ad_sequence(n - 1);
    let pts = domain_samples(sys.domain(), plan.sample_count, plan.rng_seed);
    let ad = FieldTape::new(&ad, sys.params());
    let scales = column_scales(&ad, n, &pts);
    let mut measures: Vec<(usize, f64)> = Vec::with_capacity(pts.len());
    let mut tally = Tally::new(id.to_string(), false);
    let mut valid = Vec::new();
    let mut excluded = Vec::new();
    for (idx, x) in pts.iter().enumerate() {
        let m = rank_measure(&ad, &scales, x);
        let fails = m <= plan.rank_tol;
        tally.record(x, m, fails);
        measures.push((idx, m));
        if fails {
            excluded.push(ExcludedRegion { point: x.clone(), reason: format!("rank drop (measure {m:.3e})") });
        } else {
            valid.push(x.clone());
        }
    }
    // Refine from the worst passing samples to locate rank drops between them.
    measures.sort_by(|a, b| a.1.total_cmp(&b.1));
    let starts: Vec<usize> = measures.iter().filter(|m| m.1 > plan.rank_tol).take(3).map(|m| m.0).collect();
    for idx in starts {
        let (x, m) = descend(sys, &ad, &scales, &pts[idx], plan.rank_tol);
        if m <= plan.rank_tol {
            let scale: f64 = sys.domain().bounds().iter().map(|b| b.1 - b.0).fold(0.0, f64::max);
            let fresh = excluded.iter().all(|r| {
                r.point.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) > 1e-6 * scale
            });
            if fresh {
                tally.failed += 1;
                excluded.push(ExcludedRegion { point: x.clone(), reason: format!("rank drop located by refinement (measure {m:.3e})") });
            }
        }
        if m < tally.worst {
            tally.worst = m;
            tally.witness = Some(x);
        }
    }
    // failures are judged against the sample budget, refinements included
    let mut verdict = tally.finish(plan);
    verdict.status = classify(verdict.samples_failed, plan.sample_count, plan);
    RankScan { verdict, valid, excluded }
}

/// Rounding error of a tape value is taken to be at most this many ulps of
/// its error scale.
const ROUNDING_GROWTH: f64 = 16.0;

/// Membership residual normalized by `max(‖v‖, 1)`, or by a larger scale
/// when `v` comes out of heavy cancellation, so that values inside the
/// rounding envelope `ROUNDING_GROWTH · ε · error_scale` never fail.
fn floored_residual(v: &[f64], span: &[Vec<f64>], error_scale: f64, tol: f64) -> f64 {
    let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt().max(1.0);
    let absolute = membership_residual(v, span) * norm;
    let envelope = ROUNDING_GROWTH * f64::EPSILON * error_scale / tol;
    absolute / norm.max(envelope)
}

fn membership_tally(
    sys: &MechanicalSystem,
    plan: &SamplingPlan,
    id: String,
    fields: &[VectorFieldSym],
    span: &[VectorFieldSym],
    pts: &[Vec<f64>],
) -> ConditionVerdict {
    let mut tally = Tally::new(id, true);
    let fields = FieldTape::new(fields, sys.params());
    let span = FieldTape::new(span, sys.params());
    for x in pts {
        let worst = match (span.eval(x), fields.eval_with_scale(x)) {
            (Ok(d), Ok((vs, scales))) => vs
                .iter()
                .zip(&scales)
                .map(|(v, &m)| floored_residual(v, &d, m, plan.membership_tol))
                .fold(0.0, |w: f64, r| if r.is_nan() { f64::INFINITY } else { w.max(r) }),
            _ => f64::INFINITY,
        };
        tally.record(x, worst, worst > plan.membership_tol);
    }
    tally.finish(plan)
}

fn mf2_on(sys: &MechanicalSystem, plan: &SamplingPlan, pts: &[Vec<f64>]) -> Vec<ConditionVerdict> {
    let n = sys.n();
    let ad = sys.ad_sequence(n - 1);
    let p = sys.params();
    (0..=n - 2)
        .map(|i| {
            let gens = &ad[..=i];
            let mut brackets = Vec::new();
            for a in 0..=i {
                for b in a + 1..=i {
                    brackets.push(lie_bracket(&gens[a], &gens[b]));
                }
            }
            let gen_tape = FieldTape::new(gens, p);
            let bracket_tape = FieldTape::new(&brackets, p);
            let scales = column_scales(&gen_tape, gens.len(), pts);
            let ranks: Vec<Option<usize>> = pts
                .iter()
                .map(|x| scaled_columns(&gen_tape, &scales, x).map(|c| numerical_rank(&c, plan.rank_tol)))
                .collect();
            let mut counts = vec![0usize; n + 1];
            for r in ranks.iter().flatten() {
                counts[*r] += 1;
            }
            let typical = (0..=n).max_by_key(|&r| (counts[r], r)).unwrap_or(0);
            let mut tally = Tally::new(format!("MF2[{i}]"), true);
            for (x, rank) in pts.iter().zip(&ranks) {
                let mut worst: f64 = 0.0;
                match (gen_tape.eval(x), bracket_tape.eval_with_scale(x)) {
                    (Ok(d), Ok((bs, scales))) => {
                        for (b, &m) in bs.iter().zip(&scales) {
                            let r = floored_residual(b, &d, m, plan.membership_tol);
                            worst = if r.is_nan() { f64::INFINITY } else { worst.max(r) };
                        }
                    }
                    _ => worst = f64::INFINITY,
                }
                let rank_ok = *rank == Some(typical);
                tally.record(x, worst, !rank_ok || worst > plan.membership_tol);
            }
            tally.finish(plan)
        })
        .collect()
}

fn mf3_on(sys: &MechanicalSystem, plan: &SamplingPlan, pts: &[Vec<f64>]) -> Vec<ConditionVerdict> {
    let n = sys.n();
    let ad = sys.ad_sequence(n - 1);
    let g = vec![sys.g().clone()];
    (0..n)
        .map(|i| {
            let f = covariant_derivative(sys, &ad[i], sys.g());
            membership_tally(sys, plan, format!("MF3[{i}]"), &[f], &g, pts)
        })
        .collect()
}

fn mf4_on(sys: &MechanicalSystem, plan: &SamplingPlan, pts: &[Vec<f64>]) -> Vec<ConditionVerdict> {
    let n = sys.n();
    let ad = sys.ad_sequence(n - 1);
    let e1 = ad[..2].to_vec();
    let mut out = Vec::with_capacity(n * n);
    for k in 0..n {
        for j in 0..n {
            let f = second_covariant_derivative(sys, &ad[k], &ad[j], sys.e());
            out.push(membership_tally(sys, plan, format!("MF4[{k},{j}]"), &[f], &e1, pts));
        }
    }
    out
}

/// Antisymmetrized `∇²_{g,ad_e g} ad_e g − ∇²_{ad_e g,g} ad_e g`.
pub fn mf5_difference(sys: &MechanicalSystem) -> VectorFieldSym {
    let ad = sys.ad_sequence(1);
    let a = second_covariant_derivative(sys, &ad[0], &ad[1], &ad[1]);
    let b = second_covariant_derivative(sys, &ad[1], &ad[0], &ad[1]);
    a.sub(&b)
}

fn n2_on(sys: &MechanicalSystem, plan: &SamplingPlan, pts: &[Vec<f64>]) -> Vec<ConditionVerdict> {
    let ad = sys.ad_sequence(1);
    let g = vec![sys.g().clone()];
    let mf3: Vec<VectorFieldSym> = ad.iter().map(|v| covariant_derivative(sys, v, sys.g())).collect();
    vec![
        membership_tally(sys, plan, "MF3'".into(), &mf3, &g, pts),
        membership_tally(sys, plan, "MF5'".into(), &[mf5_difference(sys)], &g, pts),
    ]
}

pub fn check_mf1(sys: &MechanicalSystem, plan: &SamplingPlan) -> ConditionVerdict {
    let id = if sys.n() == 2 { "MF1'" } else { "MF1" };
    scan_rank(sys, plan, id).verdict
}

pub fn check_mf2(sys: &MechanicalSystem, plan: &SamplingPlan) -> Result<Vec<ConditionVerdict>, CheckError> {
    if sys.n() < 3 {
        return Err(CheckError::NeedsSpatial(sys.n()));
    }
    let scan = scan_rank(sys, plan, "MF1");
    Ok(mf2_on(sys, plan, &scan.valid))
}

/// Also serves the planar case, where it covers `i ∈ {0, 1}`.
pub fn check_mf3(sys: &MechanicalSystem, plan: &SamplingPlan) -> Vec<ConditionVerdict> {
    let scan = scan_rank(sys, plan, "MF1");
    mf3_on(sys, plan, &scan.valid)
}

pub fn check_mf4(sys: &MechanicalSystem, plan: &SamplingPlan) -> Result<Vec<ConditionVerdict>, CheckError> {
    if sys.n() < 3 {
        return Err(CheckError::NeedsSpatial(sys.n()));
    }
    let scan = scan_rank(sys, plan, "MF1");
    Ok(mf4_on(sys, plan, &scan.valid))
}

pub fn check_n2(sys: &MechanicalSystem, plan: &SamplingPlan) -> Result<Vec<ConditionVerdict>, CheckError> {
    if sys.n() != 2 {
        return Err(CheckError::NeedsPlanar(sys.n()));
    }
    let scan = scan_rank(sys, plan, "MF1'");
    let mut out = vec![scan.verdict];
    out.extend(n2_on(sys, plan, &scan.valid));
    Ok(out)
}

pub fn check_all(sys: &MechanicalSystem, plan: &SamplingPlan) -> Result<MFReport, CheckError> {
    plan.validate()?;
    let n = sys.n();
    let scan = scan_rank(sys, plan, if n == 2 { "MF1'" } else { "MF1" });
    let mut verdicts = vec![scan.verdict];
    if n == 2 {
        verdicts.extend(n2_on(sys, plan, &scan.valid));
    } else {
        verdicts.extend(mf2_on(sys, plan, &scan.valid));
        verdicts.extend(mf3_on(sys, plan, &scan.valid));
        verdicts.extend(mf4_on(sys, plan, &scan.valid));
    }
    let overall = if verdicts.iter().all(|v| v.status == Status::Pass) {
        Overall::Linearizable
    } else if verdicts.iter().any(|v| v.status == Status::Fail) {
        Overall::NotLinearizable
    } else {
        Overall::Inconclusive
    };
    let bounds: Vec<String> = sys.domain().bounds().iter().map(|(l, h)| format!("[{l}, {h}]")).collect();
    let mapped = if sys.domain().is_box() { "" } else { " (image under an affine map)" };
    let note = format!(
        "conditions were tested at {} quasi-random points of the box {}{}; the verdict is local to this region",
        plan.sample_count,
        bounds.join(" x "),
        mapped
    );
    Ok(MFReport { verdicts, overall, excluded: scan.excluded, samples: plan.sample_count, note })
}
