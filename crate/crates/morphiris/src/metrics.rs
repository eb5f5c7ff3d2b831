//! Recognition and attack-detection metrics: d', DET curves, EER and fixed
//! operating points, MACER/BPCER, triplet loss, the MMPMR family, RMMR, and
//! the multi-attempt multi-system MAP matrix.
//!
//! Conventions used throughout:
//! - Dissimilarity polarity: a probe matches at threshold τ iff its score is
//!   strictly below τ. Similarity mirrors this (matches iff strictly above).
//! - Candidate thresholds for curve sweeps are the distinct observed score
//!   values plus ±∞, so every reachable operating point is sampled and the
//!   results carry exact integer-count semantics.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Polarity {
    /// Lower score means more similar (e.g. Hamming distance).
    Dissimilarity,
    /// Higher score means more similar (e.g. correlation).
    Similarity,
}

impl Polarity {
    /// Match decision for one comparison score at threshold `tau`.
    #[inline]
    pub fn matches(self, score: f64, tau: f64) -> bool {
        match self {
            Polarity::Dissimilarity => score < tau,
            Polarity::Similarity => score > tau,
        }
    }
}

/// Mated and non-mated comparison scores of one recognition experiment.
#[derive(Clone, Debug)]
pub struct ScoreSet {
    mated: Vec<f64>,
    nonmated: Vec<f64>,
    polarity: Polarity,
}

impl ScoreSet {
    pub fn new(mated: Vec<f64>, nonmated: Vec<f64>, polarity: Polarity) -> Result<Self> {
        if mated.is_empty() || nonmated.is_empty() {
            return Err(Error::Metric("score set needs at least one mated and one non-mated score".into()));
        }
        if mated.iter().chain(&nonmated).any(|v| !v.is_finite()) {
            return Err(Error::Metric("score set contains a non-finite score".into()));
        }
        Ok(ScoreSet { mated, nonmated, polarity })
    }

    pub fn mated(&self) -> &[f64] {
        &self.mated
    }

    pub fn nonmated(&self) -> &[f64] {
        &self.nonmated
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }
}

/// One operating point of a DET curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub fmr: f64,
    pub fnmr: f64,
}

fn mean_and_population_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Decidability index between the mated and non-mated distributions:
/// |μ_m − μ_n| / sqrt((σ_m² + σ_n²)/2), with population standard deviations.
///
/// Identical means give 0 even when both variances vanish; distinct means
/// over zero variance give +∞.
pub fn d_prime(scores: &ScoreSet) -> Result<f64> {
    if scores.mated.len() < 2 || scores.nonmated.len() < 2 {
        return Err(Error::Metric("d_prime needs at least two scores per list".into()));
    }
    let (mm, vm) = mean_and_population_var(&scores.mated);
    let (mn, vn) = mean_and_population_var(&scores.nonmated);
    let separation = (mm - mn).abs();
    if separation == 0.0 {
        return Ok(0.0);
    }
    let spread = (0.5 * (vm + vn)).sqrt();
    if spread == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(separation / spread)
}

/// All distinct score values plus the two infinite endpoints, ascending.
fn candidate_thresholds(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut taus: Vec<f64> = Vec::with_capacity(a.len() + b.len() + 2);
    taus.push(f64::NEG_INFINITY);
    taus.extend_from_slice(a);
    taus.extend_from_slice(b);
    taus.push(f64::INFINITY);
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    taus
}

/// FMR and FNMR of a score set at one threshold.
pub fn rates_at(scores: &ScoreSet, tau: f64) -> (f64, f64) {
    let matched = |s: &&f64| scores.polarity.matches(**s, tau);
    let fmr = scores.nonmated.iter().filter(matched).count() as f64 / scores.nonmated.len() as f64;
    let fnmr = scores.mated.iter().filter(|s| !matched(s)).count() as f64 / scores.mated.len() as f64;
    (fmr, fnmr)
}

/// DET curve sampled at every candidate threshold, ascending.
pub fn det_points(scores: &ScoreSet) -> Vec<DetPoint> {
    let mut mated = scores.mated.clone();
    let mut nonmated = scores.nonmated.clone();
    mated.sort_by(f64::total_cmp);
    nonmated.sort_by(f64::total_cmp);
    let n_m = mated.len() as f64;
    let n_n = nonmated.len() as f64;
    candidate_thresholds(&mated, &nonmated)
        .into_iter()
        .map(|tau| {
            let (matched_m, matched_n) = match scores.polarity {
                Polarity::Dissimilarity => (
                    mated.partition_point(|&s| s < tau),
                    nonmated.partition_point(|&s| s < tau),
                ),
                Polarity::Similarity => (
                    mated.len() - mated.partition_point(|&s| s <= tau),
                    nonmated.len() - nonmated.partition_point(|&s| s <= tau),
                ),
            };
            DetPoint {
                threshold: tau,
                fmr: matched_n as f64 / n_n,
                fnmr: (mated.len() - matched_m) as f64 / n_m,
            }
        })
        .collect()
}

/// Equal error rate: (FMR + FNMR)/2 at the candidate threshold minimizing
/// |FMR − FNMR|, lowest such threshold on ties. Returns (eer, threshold).
pub fn eer(scores: &ScoreSet) -> (f64, f64) {
    let points = det_points(scores);
    let mut best = &points[0];
    let mut best_gap = (best.fmr - best.fnmr).abs();
    for p in &points[1..] {
        let gap = (p.fmr - p.fnmr).abs();
        if gap < best_gap {
            best = p;
            best_gap = gap;
        }
    }
    (0.5 * (best.fmr + best.fnmr), best.threshold)
}

/// Lowest reachable FNMR subject to FMR ≤ `target_fmr`, step-function
/// semantics. Returns (fnmr, threshold); on FNMR ties the most permissive
/// threshold wins.
pub fn fnmr_at_fmr(scores: &ScoreSet, target_fmr: f64) -> Result<(f64, f64)> {
    if !(target_fmr > 0.0 && target_fmr < 1.0) {
        return Err(Error::Parameter(format!("target FMR {target_fmr} outside (0, 1)")));
    }
    let mut best: Option<(f64, f64)> = None;
    for p in det_points(scores) {
        if p.fmr > target_fmr {
            continue;
        }
        let better = match best {
            None => true,
            Some((fnmr, _)) => p.fnmr < fnmr,
        };
        // Points arrive in ascending threshold order, so on an exact FNMR
        // tie the later (more permissive, dissimilarity-wise) point wins.
        if better || best.is_some_and(|(fnmr, _)| p.fnmr == fnmr) {
            best = Some((p.fnmr, p.threshold));
        }
    }
    best.ok_or_else(|| Error::Metric(format!("FMR target {target_fmr} unreachable")))
}

/// Detector decisions for morph and bona fide presentations;
/// `true` = classified as a morph.
#[derive(Clone, Debug, Default)]
pub struct DecisionSet {
    pub morph_decisions: Vec<bool>,
    pub bonafide_decisions: Vec<bool>,
}

/// Morphing attack classification error rate: fraction of morphs that were
/// not flagged.
pub fn macer(d: &DecisionSet) -> Result<f64> {
    if d.morph_decisions.is_empty() {
        return Err(Error::Metric("MACER needs at least one morph decision".into()));
    }
    let missed = d.morph_decisions.iter().filter(|&&res| !res).count();
    Ok(missed as f64 / d.morph_decisions.len() as f64)
}

/// Bona fide presentation classification error rate: fraction of bona fide
/// samples that were flagged as morphs.
pub fn bpcer(d: &DecisionSet) -> Result<f64> {
    if d.bonafide_decisions.is_empty() {
        return Err(Error::Metric("BPCER needs at least one bona fide decision".into()));
    }
    let flagged = d.bonafide_decisions.iter().filter(|&&res| res).count();
    Ok(flagged as f64 / d.bonafide_decisions.len() as f64)
}

/// BPCER at the most permissive detector threshold keeping MACER ≤ target.
///
/// Detector scores are morph-likeness (higher = more morph-like); a sample
/// is classified as morph iff its score ≥ τ. Returns (bpcer, threshold).
pub fn bpcer_at_macer(morph_scores: &[f64], bonafide_scores: &[f64], target_macer: f64) -> Result<(f64, f64)> {
    if morph_scores.is_empty() || bonafide_scores.is_empty() {
        return Err(Error::Metric("bpcer_at_macer needs non-empty score lists".into()));
    }
    if morph_scores.iter().chain(bonafide_scores).any(|v| !v.is_finite()) {
        return Err(Error::Metric("bpcer_at_macer scores must be finite".into()));
    }
    if !(0.0..=1.0).contains(&target_macer) {
        return Err(Error::Parameter(format!("target MACER {target_macer} outside [0, 1]")));
    }
    let n_m = morph_scores.len() as f64;
    let n_bf = bonafide_scores.len() as f64;
    let mut best: Option<(f64, f64)> = None;
    for tau in candidate_thresholds(morph_scores, bonafide_scores) {
        let macer = morph_scores.iter().filter(|&&s| s < tau).count() as f64 / n_m;
        if macer <= target_macer {
            let bpcer = bonafide_scores.iter().filter(|&&s| s >= tau).count() as f64 / n_bf;
            // Thresholds ascend, so the last feasible one is the loosest.
            best = Some((bpcer, tau));
        }
    }
    best.ok_or_else(|| Error::Metric(format!("MACER target {target_macer} unreachable")))
}

/// Triplet margin loss: max(d_ap − d_an + margin, 0).
pub fn triplet_loss(d_ap: f64, d_an: f64, margin: f64) -> f64 {
    (d_ap - d_an + margin).max(0.0)
}

/// Attempt scores of one morph against probes of its two contributing
/// subjects, under one recognition system.
#[derive(Clone, Debug)]
pub struct SubjectScores {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// All attempt scores collected for one morph, one entry per recognition
/// system.
#[derive(Clone, Debug)]
pub struct MorphAttackRecord {
    pub morph_id: String,
    pub systems: Vec<SubjectScores>,
}

impl MorphAttackRecord {
    /// Record for the single-system case.
    pub fn single(morph_id: impl Into<String>, a: Vec<f64>, b: Vec<f64>) -> Self {
        MorphAttackRecord { morph_id: morph_id.into(), systems: vec![SubjectScores { a, b }] }
    }
}

/// Restricts multi-system records to one system, for per-system metrics.
pub fn system_slice(records: &[MorphAttackRecord], system: usize) -> Result<Vec<MorphAttackRecord>> {
    records
        .iter()
        .map(|r| {
            let s = r.systems.get(system).ok_or_else(|| {
                Error::Metric(format!("record {} lacks system {system}", r.morph_id))
            })?;
            Ok(MorphAttackRecord { morph_id: r.morph_id.clone(), systems: vec![s.clone()] })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MmpmrVariant {
    /// A morph counts iff, for each subject, the best attempt matches.
    MinMax,
    /// Mean over morphs of the product of per-subject match fractions.
    ProdAvg,
}

fn best_attempt(scores: &[f64], polarity: Polarity) -> f64 {
    let fold = match polarity {
        Polarity::Dissimilarity => f64::min,
        Polarity::Similarity => f64::max,
    };
    scores.iter().copied().fold(
        match polarity {
            Polarity::Dissimilarity => f64::INFINITY,
            Polarity::Similarity => f64::NEG_INFINITY,
        },
        fold,
    )
}

/// Morphing attack potential rate at threshold `tau` over single-system
/// records.
pub fn mmpmr(records: &[MorphAttackRecord], tau: f64, variant: MmpmrVariant, polarity: Polarity) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Metric("mmpmr needs at least one morph record".into()));
    }
    let mut total = 0.0;
    for rec in records {
        let [system] = rec.systems.as_slice() else {
            return Err(Error::Metric(format!(
                "mmpmr is a per-system rate; record {} carries {} systems, slice it first",
                rec.morph_id,
                rec.systems.len()
            )));
        };
        if system.a.is_empty() || system.b.is_empty() {
            return Err(Error::Metric(format!("record {} has a subject with zero attempts", rec.morph_id)));
        }
        total += match variant {
            MmpmrVariant::MinMax => {
                let a = polarity.matches(best_attempt(&system.a, polarity), tau);
                let b = polarity.matches(best_attempt(&system.b, polarity), tau);
                f64::from(u8::from(a && b))
            }
            MmpmrVariant::ProdAvg => {
                let frac = |s: &[f64]| s.iter().filter(|&&v| polarity.matches(v, tau)).count() as f64 / s.len() as f64;
                frac(&system.a) * frac(&system.b)
            }
        };
    }
    Ok(total / records.len() as f64)
}

/// Relative morph match rate: MMPMR + FNMR at a common threshold. Exceeds 1
/// when the verifier's own false non-match rate is high.
pub fn rmmr(mmpmr_value: f64, fnmr_value: f64) -> f64 {
    mmpmr_value + fnmr_value
}

/// Morphing attack potential matrix.
///
/// Entry (i, j), 1-indexed, is the fraction of morphs for which at least j
/// systems each grant at least i successful attempts per contributing
/// subject, judged at that system's threshold `taus_per_system[s]`.
/// Rows run over attempt counts 1..=max_attempts, columns over system
/// counts 1..=len(taus_per_system); entries are non-increasing along both
/// axes by construction.
pub fn map_matrix(
    records: &[MorphAttackRecord],
    taus_per_system: &[f64],
    max_attempts: usize,
    polarity: Polarity,
) -> Result<Vec<Vec<f64>>> {
    if records.is_empty() {
        return Err(Error::Metric("map_matrix needs at least one morph record".into()));
    }
    if taus_per_system.is_empty() || max_attempts == 0 {
        return Err(Error::Parameter("map_matrix needs ≥1 system and ≥1 attempt level".into()));
    }
    let n_systems = taus_per_system.len();
    let mut counts = vec![vec![0usize; n_systems]; max_attempts];
    for rec in records {
        if rec.systems.len() != n_systems {
            return Err(Error::Metric(format!(
                "record {} covers {} systems, expected {n_systems}",
                rec.morph_id,
                rec.systems.len()
            )));
        }
        // Per system: how many successful attempts the weaker subject got.
        let mut granted: Vec<usize> = Vec::with_capacity(n_systems);
        for (system, &tau) in rec.systems.iter().zip(taus_per_system) {
            if system.a.is_empty() || system.b.is_empty() {
                return Err(Error::Metric(format!("record {} has a subject with zero attempts", rec.morph_id)));
            }
            let hits = |s: &[f64]| s.iter().filter(|&&v| polarity.matches(v, tau)).count();
            granted.push(hits(&system.a).min(hits(&system.b)));
        }
        for i in 1..=max_attempts {
            let fooled = granted.iter().filter(|&&g| g >= i).count();
            for j in 1..=n_systems {
                if fooled >= j {
                    counts[i - 1][j - 1] += 1;
                }
            }
        }
    }
    let n = records.len() as f64;
    Ok(counts.into_iter().map(|row| row.into_iter().map(|c| c as f64 / n).collect()).collect())
}

/// Renders DET points as `threshold,fmr,fnmr` CSV.
pub fn det_csv(points: &[DetPoint]) -> String {
    let mut out = String::from("threshold,fmr,fnmr\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.fmr, p.fnmr));
    }
    out
}
