//! Single-image morph detection: greyscale and log-magnitude frequency
//! features feeding a from-scratch random-forest classifier, plus the
//! cross-morph-type evaluation protocol.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::GrayImage;
use crate::metrics::{bpcer_at_macer, det_csv, det_points, eer, Polarity, ScoreSet};
use crate::rng::{label, stream_hash, stream_rng};

/// Feature images are resampled to this side length; vectors are 4096-d.
pub const FEATURE_SIDE: usize = 64;
pub const DEFAULT_TREES: usize = 100;
pub const DEFAULT_MAX_DEPTH: usize = 12;
pub const DEFAULT_MIN_LEAF: usize = 2;
const MODEL_MAGIC: &[u8; 4] = b"RFM1";

/// Fixed-length vector of finite feature values.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Parameter("feature vector must be non-empty".into()));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Parameter("feature values must be finite".into()));
        }
        Ok(FeatureVector { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Class label of one detector training or evaluation sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MadLabel {
    Bonafide,
    Morph,
}

/// Exact area-average resample to 64×64, as integer numerators over the
/// common denominator 255·w·h.
///
/// The 1-D overlap of pixel i with cell c, scaled by 64, is
/// min(64(i+1), (c+1)w) − max(64i, cw): an integer for any image size.
/// Cell weights therefore sum to exactly w·h and every cell numerator is
/// an exact integer, which makes downstream arithmetic order-independent.
fn resample_numerators(img: &GrayImage) -> (Vec<u64>, u64) {
    let (w, h) = (img.width() as u64, img.height() as u64);
    let side = FEATURE_SIDE as u64;
    let overlaps_1d = |len: u64| -> Vec<Vec<(u64, u64)>> {
        (0..side)
            .map(|c| {
                let lo = c * len / side;
                let hi = ((c + 1) * len).div_ceil(side).min(len);
                (lo..hi)
                    .map(|i| {
                        let weight =
                            (64 * (i + 1)).min((c + 1) * len) - (64 * i).max(c * len);
                        (i, weight)
                    })
                    .filter(|&(_, wgt)| wgt > 0)
                    .collect()
            })
            .collect()
    };
    let cols = overlaps_1d(w);
    let rows = overlaps_1d(h);
    // X-reduce each pixel row, then Y-reduce into cells.
    let mut xred = vec![0u64; h as usize * FEATURE_SIDE];
    for y in 0..h as usize {
        for (c, col) in cols.iter().enumerate() {
            let mut acc = 0u64;
            for &(i, wgt) in col {
                acc += wgt * u64::from(img.get(i as u32, y as u32));
            }
            xred[y * FEATURE_SIDE + c] = acc;
        }
    }
    let mut num = vec![0u64; FEATURE_SIDE * FEATURE_SIDE];
    for (r, row) in rows.iter().enumerate() {
        for c in 0..FEATURE_SIDE {
            let mut acc = 0u64;
            for &(y, wgt) in row {
                acc += wgt * xred[y as usize * FEATURE_SIDE + c];
            }
            num[r * FEATURE_SIDE + c] = acc;
        }
    }
    (num, 255 * w * h)
}

/// Greyscale features: exact area-average to 64×64, row-major, in [0,1].
pub fn feat_gray(img: &GrayImage) -> FeatureVector {
    let (num, den) = resample_numerators(img);
    let den = den as f64;
    FeatureVector { values: num.iter().map(|&n| n as f64 / den).collect() }
}

/// Log-magnitude frequency features: resample to 64×64, 2-D DFT
/// magnitude, log(1+m), quadrant swap putting the DC bin at (32,32),
/// row-major.
///
/// The magnitude is taken as sqrt of the DFT of the circular
/// autocorrelation rather than |DFT(x)| directly. The autocorrelation is
/// accumulated in integer arithmetic, so a circular shift of the
/// resampled grid permutes its terms without changing any sum, and the
/// feature vector is bit-for-bit shift invariant.
pub fn feat_freq(img: &GrayImage) -> FeatureVector {
    let (num, den) = resample_numerators(img);
    let n = FEATURE_SIDE;
    let n_max = *num.iter().max().expect("non-empty grid");
    let fits_u64 = (n_max as u128)
        .pow(2)
        .checked_mul((n * n) as u128)
        .is_some_and(|worst| worst <= u128::from(u64::MAX));
    let mut corr = vec![0.0f64; n * n];
    let den_sq = den as f64 * den as f64;
    for dy in 0..n {
        for dx in 0..n {
            if fits_u64 {
                let mut acc = 0u64;
                for y in 0..n {
                    let row = y * n;
                    let srow = ((y + dy) % n) * n;
                    for x in 0..n {
                        acc += num[row + x] * num[srow + (x + dx) % n];
                    }
                }
                corr[dy * n + dx] = acc as f64 / den_sq;
            } else {
                let mut acc = 0u128;
                for y in 0..n {
                    let row = y * n;
                    let srow = ((y + dy) % n) * n;
                    for x in 0..n {
                        acc += u128::from(num[row + x]) * u128::from(num[srow + (x + dx) % n]);
                    }
                }
                corr[dy * n + dx] = acc as f64 / den_sq;
            }
        }
    }
    let spectrum = fft2(&corr, n);
    let mut values = vec![0.0f64; n * n];
    for r in 0..n {
        for c in 0..n {
            let power = spectrum[r * n + c].re.max(0.0);
            let shifted = ((r + n / 2) % n) * n + (c + n / 2) % n;
            values[shifted] = power.sqrt().ln_1p();
        }
    }
    FeatureVector { values }
}

/// Unnormalized forward 2-D DFT of a real square grid.
fn fft2(data: &[f64], n: usize) -> Vec<Complex<f64>> {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut grid: Vec<Complex<f64>> = data.iter().map(|&v| Complex::new(v, 0.0)).collect();
    for row in grid.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut transposed = vec![Complex::new(0.0, 0.0); n * n];
    for r in 0..n {
        for c in 0..n {
            transposed[c * n + r] = grid[r * n + c];
        }
    }
    for row in transposed.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut out = vec![Complex::new(0.0, 0.0); n * n];
    for r in 0..n {
        for c in 0..n {
            out[c * n + r] = transposed[r * n + c];
        }
    }
    out
}

/// One decision-tree node. Children always have larger indices than
/// their parent, so prediction walks are finite on any validated model.
#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
    Leaf { p_bonafide: f64, p_morph: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

/// Random forest over fixed-length feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub seed: u64,
}

pub fn default_mtry(n_features: usize) -> usize {
    ((n_features as f64).sqrt().floor() as usize).max(1)
}

struct TrainSet<'a> {
    features: &'a [FeatureVector],
    is_morph: Vec<bool>,
    n_features: usize,
}

fn validate_training_inputs<'a>(features: &'a [FeatureVector], labels: &[MadLabel]) -> Result<TrainSet<'a>> {
    if features.is_empty() {
        return Err(Error::Parameter("training set is empty".into()));
    }
    if features.len() != labels.len() {
        return Err(Error::Parameter(format!(
            "{} feature vectors but {} labels",
            features.len(),
            labels.len()
        )));
    }
    let n_features = features[0].len();
    if features.iter().any(|f| f.len() != n_features) {
        return Err(Error::Parameter("inconsistent feature lengths in training set".into()));
    }
    let is_morph: Vec<bool> = labels.iter().map(|&l| l == MadLabel::Morph).collect();
    let morphs = is_morph.iter().filter(|&&m| m).count();
    if morphs < 2 || is_morph.len() - morphs < 2 {
        return Err(Error::Parameter(format!(
            "need at least 2 samples per class, got {} morph / {} bona fide",
            morphs,
            is_morph.len() - morphs
        )));
    }
    Ok(TrainSet { features, is_morph, n_features })
}

/// Trains one tree on a bootstrap resample. The per-tree RNG stream is
/// derived from (seed, tree index), so construction order is free.
fn grow_tree(
    set: &TrainSet<'_>,
    tree_index: u64,
    seed: u64,
    max_depth: usize,
    min_leaf: usize,
    mtry: usize,
) -> (Tree, Vec<bool>) {
    let n = set.features.len();
    let mut rng = stream_rng(seed, &[label("tree"), tree_index]);
    let mut in_bag = vec![false; n];
    let bootstrap: Vec<usize> = (0..n)
        .map(|_| {
            let i = rng.gen_range(0..n);
            in_bag[i] = true;
            i
        })
        .collect();
    let mut nodes = Vec::new();
    split_node(set, &mut nodes, bootstrap, 1, max_depth, min_leaf, mtry, &mut rng);
    (Tree { nodes }, in_bag)
}

#[allow(clippy::too_many_arguments)]
fn split_node(
    set: &TrainSet<'_>,
    nodes: &mut Vec<Node>,
    samples: Vec<usize>,
    depth: usize,
    max_depth: usize,
    min_leaf: usize,
    mtry: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> u32 {
    let index = nodes.len() as u32;
    nodes.push(Node::Leaf { p_bonafide: 1.0, p_morph: 0.0 });
    let n = samples.len();
    let morphs = samples.iter().filter(|&&i| set.is_morph[i]).count();
    let make_leaf = |nodes: &mut Vec<Node>| {
        let p_morph = morphs as f64 / n as f64;
        nodes[index as usize] = Node::Leaf { p_bonafide: 1.0 - p_morph, p_morph };
    };
    if morphs == 0 || morphs == n || depth > max_depth || n < 2 * min_leaf {
        make_leaf(nodes);
        return index;
    }
    // mtry distinct candidate features, in draw order.
    let mut chosen: Vec<usize> = Vec::with_capacity(mtry);
    while chosen.len() < mtry {
        let f = rng.gen_range(0..set.n_features);
        if !chosen.contains(&f) {
            chosen.push(f);
        }
    }
    // Best (weighted Gini, feature, threshold); earliest candidate wins
    // ties via strict improvement.
    let mut best: Option<(f64, usize, f64)> = None;
    let mut sorted: Vec<(f64, bool)> = Vec::with_capacity(n);
    for &f in &chosen {
        sorted.clear();
        sorted.extend(samples.iter().map(|&i| (set.features[i].values()[f], set.is_morph[i])));
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left_m = 0usize;
        for i in 0..n - 1 {
            if sorted[i].1 {
                left_m += 1;
            }
            let (a, b) = (sorted[i].0, sorted[i + 1].0);
            if a == b {
                continue;
            }
            let mid = 0.5 * (a + b);
            // The decision predicate is x <= mid; skip candidates whose
            // midpoint rounded onto b, or the prefix counts would lie.
            if mid >= b {
                continue;
            }
            let (nl, nr) = (i + 1, n - i - 1);
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let right_m = morphs - left_m;
            let gini = |cnt_m: usize, total: usize| {
                let pm = cnt_m as f64 / total as f64;
                let pb = 1.0 - pm;
                1.0 - pm * pm - pb * pb
            };
            let weighted = (nl as f64 * gini(left_m, nl) + nr as f64 * gini(right_m, nr)) / n as f64;
            if best.is_none_or(|(w, _, _)| weighted < w) {
                best = Some((weighted, f, mid));
            }
        }
    }
    let Some((_, feature, threshold)) = best else {
        make_leaf(nodes);
        return index;
    };
    let (left_samples, right_samples): (Vec<usize>, Vec<usize>) =
        samples.iter().partition(|&&i| set.features[i].values()[feature] <= threshold);
    let left = split_node(set, nodes, left_samples, depth + 1, max_depth, min_leaf, mtry, rng);
    let right = split_node(set, nodes, right_samples, depth + 1, max_depth, min_leaf, mtry, rng);
    nodes[index as usize] = Node::Split { feature: feature as u32, threshold, left, right };
    index
}

fn train_inner(
    features: &[FeatureVector],
    labels: &[MadLabel],
    n_trees: usize,
    max_depth: usize,
    min_leaf: usize,
    mtry: usize,
    seed: u64,
) -> Result<(ForestModel, Vec<Vec<bool>>)> {
    let set = validate_training_inputs(features, labels)?;
    if n_trees == 0 || max_depth == 0 || min_leaf == 0 {
        return Err(Error::Parameter("n_trees, max_depth and min_leaf must be positive".into()));
    }
    if !(1..=set.n_features).contains(&mtry) {
        return Err(Error::Parameter(format!("mtry {mtry} outside 1..={}", set.n_features)));
    }
    let grown: Vec<(Tree, Vec<bool>)> = (0..n_trees as u64)
        .into_par_iter()
        .map(|t| grow_tree(&set, t, seed, max_depth, min_leaf, mtry))
        .collect();
    let mut trees = Vec::with_capacity(n_trees);
    let mut in_bag = Vec::with_capacity(n_trees);
    for (tree, bag) in grown {
        trees.push(tree);
        in_bag.push(bag);
    }
    Ok((ForestModel { trees, n_features: set.n_features, seed }, in_bag))
}

/// Trains a random forest: bootstrap resamples, Gini-impurity splits over
/// `mtry` random features per node, midpoint thresholds, stopping at
/// `max_depth` split levels, `min_leaf` samples, or purity.
pub fn rf_train(
    features: &[FeatureVector],
    labels: &[MadLabel],
    n_trees: usize,
    max_depth: usize,
    min_leaf: usize,
    mtry: usize,
    seed: u64,
) -> Result<ForestModel> {
    train_inner(features, labels, n_trees, max_depth, min_leaf, mtry, seed).map(|(model, _)| model)
}

/// Like `rf_train`, additionally returning the out-of-bag accuracy: each
/// sample voted on only by trees whose bootstrap excluded it, decided at
/// mean probability 0.5.
pub fn rf_train_with_oob(
    features: &[FeatureVector],
    labels: &[MadLabel],
    n_trees: usize,
    max_depth: usize,
    min_leaf: usize,
    mtry: usize,
    seed: u64,
) -> Result<(ForestModel, f64)> {
    let (model, in_bag) = train_inner(features, labels, n_trees, max_depth, min_leaf, mtry, seed)?;
    let mut correct = 0usize;
    let mut covered = 0usize;
    for (i, (f, &lbl)) in features.iter().zip(labels).enumerate() {
        let mut sum = 0.0;
        let mut votes = 0usize;
        for (tree, bag) in model.trees.iter().zip(&in_bag) {
            if !bag[i] {
                sum += tree_probability(tree, f.values());
                votes += 1;
            }
        }
        if votes == 0 {
            continue;
        }
        covered += 1;
        let predicted = if sum / votes as f64 >= 0.5 { MadLabel::Morph } else { MadLabel::Bonafide };
        if predicted == lbl {
            correct += 1;
        }
    }
    if covered == 0 {
        return Err(Error::Parameter("no out-of-bag samples; too few trees".into()));
    }
    Ok((model, correct as f64 / covered as f64))
}

fn tree_probability(tree: &Tree, values: &[f64]) -> f64 {
    let mut at = 0usize;
    loop {
        match tree.nodes[at] {
            Node::Leaf { p_morph, .. } => return p_morph,
            Node::Split { feature, threshold, left, right } => {
                at = if values[feature as usize] <= threshold { left as usize } else { right as usize };
            }
        }
    }
}

/// Mean over trees of the leaf morph-class probability, in [0, 1].
pub fn rf_predict(model: &ForestModel, f: &FeatureVector) -> Result<f64> {
    if f.len() != model.n_features {
        return Err(Error::Parameter(format!(
            "feature length {} does not match model's {}",
            f.len(),
            model.n_features
        )));
    }
    let sum: f64 = model.trees.iter().map(|t| tree_probability(t, f.values())).sum();
    Ok(sum / model.trees.len() as f64)
}

impl ForestModel {
    /// Versioned binary serialization (magic "RFM1", little-endian).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&(self.trees.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_features as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for tree in &self.trees {
            out.extend_from_slice(&(tree.nodes.len() as u32).to_le_bytes());
            for node in &tree.nodes {
                match *node {
                    Node::Split { feature, threshold, left, right } => {
                        out.push(0);
                        out.extend_from_slice(&feature.to_le_bytes());
                        out.extend_from_slice(&threshold.to_le_bytes());
                        out.extend_from_slice(&left.to_le_bytes());
                        out.extend_from_slice(&right.to_le_bytes());
                    }
                    Node::Leaf { p_bonafide, p_morph } => {
                        out.push(1);
                        out.extend_from_slice(&p_bonafide.to_le_bytes());
                        out.extend_from_slice(&p_morph.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Parameter(format!("forest model blob: {msg}"));
        let mut at = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = at.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated"))?;
            let s = &bytes[at..end];
            at = end;
            Ok(s)
        };
        if take(4)? != MODEL_MAGIC {
            return Err(bad("wrong magic"));
        }
        let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes"));
        let n_trees = u32_at(take(4)?) as usize;
        let n_features = u32_at(take(4)?) as usize;
        let seed = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        if n_trees == 0 || n_features == 0 {
            return Err(bad("empty model"));
        }
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let n_nodes = u32_at(take(4)?) as usize;
            if n_nodes == 0 {
                return Err(bad("empty tree"));
            }
            let mut nodes = Vec::with_capacity(n_nodes);
            for idx in 0..n_nodes {
                match take(1)?[0] {
                    0 => {
                        let feature = u32_at(take(4)?);
                        let threshold = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
                        let left = u32_at(take(4)?);
                        let right = u32_at(take(4)?);
                        if feature as usize >= n_features {
                            return Err(bad("feature index out of range"));
                        }
                        if !threshold.is_finite() {
                            return Err(bad("non-finite threshold"));
                        }
                        // Forward-only children make walks finite.
                        let (idx32, n32) = (idx as u32, n_nodes as u32);
                        if left <= idx32 || right <= idx32 || left >= n32 || right >= n32 {
                            return Err(bad("child index not strictly forward"));
                        }
                        nodes.push(Node::Split { feature, threshold, left, right });
                    }
                    1 => {
                        let p_bonafide = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
                        let p_morph = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
                        let ok = (0.0..=1.0).contains(&p_bonafide)
                            && (0.0..=1.0).contains(&p_morph)
                            && (p_bonafide + p_morph - 1.0).abs() <= 1e-9;
                        if !ok {
                            return Err(bad("leaf probabilities do not sum to 1"));
                        }
                        nodes.push(Node::Leaf { p_bonafide, p_morph });
                    }
                    _ => return Err(bad("unknown node tag")),
                }
            }
            trees.push(Tree { nodes });
        }
        if at != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(ForestModel { trees, n_features, seed })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Feature extractor selector for the detector pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extractor {
    Gray,
    Freq,
}

impl Extractor {
    pub fn extract(self, img: &GrayImage) -> FeatureVector {
        match self {
            Extractor::Gray => feat_gray(img),
            Extractor::Freq => feat_freq(img),
        }
    }
}

impl std::str::FromStr for Extractor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gray" => Ok(Extractor::Gray),
            "freq" => Ok(Extractor::Freq),
            other => Err(Error::Parameter(format!("unknown extractor {other:?} (expected gray|freq)"))),
        }
    }
}

impl std::fmt::Display for Extractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Extractor::Gray => "gray",
            Extractor::Freq => "freq",
        })
    }
}

/// Counts at the fixed 0.5 decision threshold; morph is the positive
/// class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub r#fn: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BpcerAt {
    #[serde(rename = "0.10")]
    pub at_ten_percent: f64,
    #[serde(rename = "0.01")]
    pub at_one_percent: f64,
}

/// Detector evaluation report. MACER/BPCER are taken at the EER
/// threshold; the confusion matrix uses the default 0.5 decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MadReport {
    pub macer: f64,
    pub bpcer: f64,
    pub eer: f64,
    pub threshold: f64,
    pub bpcer_at: BpcerAt,
    pub confusion: Confusion,
    pub train_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
}

/// Cross-morph-type experiment: bona fide subjects are split 70/30
/// (subject-disjoint, shuffled by `split_seed`); the forest trains on
/// bona fide train subjects plus one morph type and is scored on bona
/// fide test subjects plus the other morph type. Returns the report and
/// the DET curve CSV.
pub fn smad_experiment(
    bonafide: &[(String, GrayImage)],
    morphs_train: &[GrayImage],
    morphs_test: &[GrayImage],
    extractor: Extractor,
    split_seed: u64,
) -> Result<(MadReport, String)> {
    if bonafide.is_empty() || morphs_train.is_empty() || morphs_test.is_empty() {
        return Err(Error::Parameter("bona fide and both morph sets must be non-empty".into()));
    }
    let subjects: Vec<String> = bonafide.iter().map(|(s, _)| s.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    if subjects.len() < 2 {
        return Err(Error::Parameter(format!(
            "subject-disjoint split needs at least 2 bona fide subjects, got {}",
            subjects.len()
        )));
    }
    let mut shuffled = subjects;
    let mut rng = stream_rng(split_seed, &[label("mad-split")]);
    shuffled.shuffle(&mut rng);
    let n_train = ((shuffled.len() * 7 + 5) / 10).clamp(1, shuffled.len() - 1);
    let mut train_subjects: Vec<String> = shuffled[..n_train].to_vec();
    let mut test_subjects: Vec<String> = shuffled[n_train..].to_vec();
    train_subjects.sort();
    test_subjects.sort();

    let in_train = |s: &str| train_subjects.binary_search_by(|t| t.as_str().cmp(s)).is_ok();
    let bona_features: Vec<(bool, FeatureVector)> =
        bonafide.par_iter().map(|(s, img)| (in_train(s), extractor.extract(img))).collect();
    let extract_all = |imgs: &[GrayImage]| -> Vec<FeatureVector> { imgs.par_iter().map(|i| extractor.extract(i)).collect() };
    let morph_train_features = extract_all(morphs_train);
    let morph_test_features = extract_all(morphs_test);

    let mut features: Vec<FeatureVector> = Vec::new();
    let mut labels: Vec<MadLabel> = Vec::new();
    for (is_train, f) in &bona_features {
        if *is_train {
            features.push(f.clone());
            labels.push(MadLabel::Bonafide);
        }
    }
    let bona_test: Vec<&FeatureVector> =
        bona_features.iter().filter(|(t, _)| !t).map(|(_, f)| f).collect();
    if features.is_empty() || bona_test.is_empty() {
        return Err(Error::Parameter("bona fide train/test partition is empty after the subject split".into()));
    }
    for f in &morph_train_features {
        features.push(f.clone());
        labels.push(MadLabel::Morph);
    }

    let d = features[0].len();
    let model = rf_train(
        &features,
        &labels,
        DEFAULT_TREES,
        DEFAULT_MAX_DEPTH,
        DEFAULT_MIN_LEAF,
        default_mtry(d),
        stream_hash(split_seed, &[label("mad-train")]),
    )?;

    let morph_scores: Vec<f64> =
        morph_test_features.iter().map(|f| rf_predict(&model, f)).collect::<Result<_>>()?;
    let bona_scores: Vec<f64> = bona_test.iter().map(|f| rf_predict(&model, f)).collect::<Result<_>>()?;
    report_from_scores(&morph_scores, &bona_scores, train_subjects, test_subjects)
}

/// Builds the evaluation report and DET CSV from detector scores (higher =
/// more morph-like). Morphs play the mated role of the score set, so FNMR
/// reads as MACER and FMR as BPCER.
pub fn report_from_scores(
    morph_scores: &[f64],
    bona_scores: &[f64],
    train_subjects: Vec<String>,
    test_subjects: Vec<String>,
) -> Result<(MadReport, String)> {
    let set = ScoreSet::new(morph_scores.to_vec(), bona_scores.to_vec(), Polarity::Similarity)?;
    let points = det_points(&set);
    let (eer_value, eer_threshold) = eer(&set);
    let at_eer = points
        .iter()
        .find(|p| p.threshold == eer_threshold)
        .expect("EER threshold is one of the candidate thresholds");
    let (bpcer_10, _) = bpcer_at_macer(morph_scores, bona_scores, 0.10)?;
    let (bpcer_01, _) = bpcer_at_macer(morph_scores, bona_scores, 0.01)?;
    let flag = |s: f64| s >= 0.5;
    let confusion = Confusion {
        tp: morph_scores.iter().filter(|&&s| flag(s)).count() as u64,
        r#fn: morph_scores.iter().filter(|&&s| !flag(s)).count() as u64,
        fp: bona_scores.iter().filter(|&&s| flag(s)).count() as u64,
        tn: bona_scores.iter().filter(|&&s| !flag(s)).count() as u64,
    };
    let report = MadReport {
        macer: at_eer.fnmr,
        bpcer: at_eer.fmr,
        eer: eer_value,
        threshold: eer_threshold,
        bpcer_at: BpcerAt { at_ten_percent: bpcer_10, at_one_percent: bpcer_01 },
        confusion,
        train_subjects,
        test_subjects,
    };
    Ok((report, det_csv(&points)))
}
