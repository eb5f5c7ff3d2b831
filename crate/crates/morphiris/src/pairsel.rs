//! Morph pair selection: random pairing and pupil-radius-similarity
//! pairing over a dataset manifest.
//!
//! Both strategies pair images of distinct subjects captured on the same
//! eye side, and no image joins more than one pair per run, which keeps
//! morph score sets non-overlapping. Radius similarity means pupil-radius
//! difference, with iris-radius difference and then subject ids breaking
//! ties.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{label, stream_rng};
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EyeSide {
    L,
    R,
}

impl fmt::Display for EyeSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EyeSide::L => "L",
            EyeSide::R => "R",
        })
    }
}

impl FromStr for EyeSide {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L" => Ok(EyeSide::L),
            "R" => Ok(EyeSide::R),
            other => Err(Error::format("eye side", format!("expected L or R, got {other:?}"))),
        }
    }
}

/// One dataset image with its boundary radii (ground truth or fitted).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub eye_side: EyeSide,
    pub image_path: String,
    pub pupil_radius: f64,
    pub iris_radius: f64,
}

/// Validated collection of manifest entries.
///
/// Image paths are unique across the manifest (pair files reference
/// entries by path alone), and every entry has positive radii with the
/// pupil inside the iris.
#[derive(Clone, Debug, Default)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &entries {
            if !(e.pupil_radius > 0.0 && e.pupil_radius < e.iris_radius) {
                return Err(Error::format(
                    "manifest entry",
                    format!(
                        "{}: radii must satisfy 0 < pupil < iris, got {} and {}",
                        e.image_path, e.pupil_radius, e.iris_radius
                    ),
                ));
            }
            if !seen.insert(e.image_path.clone()) {
                return Err(Error::format("manifest", format!("duplicate image path {}", e.image_path)));
            }
        }
        Ok(DatasetManifest { entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn by_path(&self, path: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.image_path == path)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Radius,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Random => "random",
            Strategy::Radius => "radius",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "radius" => Ok(Strategy::Radius),
            other => Err(Error::format("strategy", format!("expected random or radius, got {other:?}"))),
        }
    }
}

/// Two same-side images of distinct subjects selected for morphing.
#[derive(Clone, Debug, PartialEq)]
pub struct MorphPair {
    pub a: ManifestEntry,
    pub b: ManifestEntry,
    pub strategy: Strategy,
}

impl MorphPair {
    fn new(a: &ManifestEntry, b: &ManifestEntry, strategy: Strategy) -> Self {
        debug_assert!(a.subject_id != b.subject_id && a.eye_side == b.eye_side);
        MorphPair { a: a.clone(), b: b.clone(), strategy }
    }
}

/// Canonical working order, independent of manifest row order.
fn sorted_indices(manifest: &DatasetManifest) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..manifest.entries.len()).collect();
    idx.sort_by(|&i, &j| {
        let (a, b) = (&manifest.entries[i], &manifest.entries[j]);
        (a.eye_side, &a.subject_id, &a.image_path).cmp(&(b.eye_side, &b.subject_id, &b.image_path))
    });
    idx
}

fn valid(a: &ManifestEntry, b: &ManifestEntry) -> bool {
    a.subject_id != b.subject_id && a.eye_side == b.eye_side
}

/// Draws `n_pairs` pairs uniformly, without replacement, from the valid
/// (distinct-subject, same-side) pairs whose images are still unused.
///
/// Selection is sequential: each draw is uniform over the currently
/// available pairs. When an unlucky draw order strands the run short of
/// `n_pairs` even though capacity remains, the whole selection restarts on
/// the next derived sub-stream, so results stay a pure function of
/// (manifest, n_pairs, seed).
pub fn select_random(manifest: &DatasetManifest, n_pairs: usize, seed: u64) -> Result<Vec<MorphPair>> {
    let order = sorted_indices(manifest);
    let mut best: Vec<MorphPair> = Vec::new();
    for attempt in 0..64u64 {
        let mut rng = stream_rng(seed, &[label("random-pairs"), attempt]);
        let mut used = vec![false; manifest.entries.len()];
        let mut picked: Vec<MorphPair> = Vec::with_capacity(n_pairs);
        while picked.len() < n_pairs {
            let candidates: Vec<(usize, usize)> = order
                .iter()
                .enumerate()
                .flat_map(|(p, &i)| {
                    order[p + 1..]
                        .iter()
                        .map(move |&j| (i, j))
                        .filter(|&(i, j)| !used[i] && !used[j] && valid(&manifest.entries[i], &manifest.entries[j]))
                })
                .collect();
            if candidates.is_empty() {
                break;
            }
            let (i, j) = candidates[rng.gen_range(0..candidates.len())];
            used[i] = true;
            used[j] = true;
            picked.push(MorphPair::new(&manifest.entries[i], &manifest.entries[j], Strategy::Random));
        }
        if picked.len() == n_pairs {
            return Ok(picked);
        }
        if picked.len() > best.len() {
            best = picked;
        }
    }
    Err(Error::Capacity { requested: n_pairs, available: best.len() })
}

/// Greedy radius-similarity matching.
///
/// Per eye side, entries are sorted by pupil radius and the closest
/// adjacent cross-subject pair is repeatedly extracted (ties: smaller iris
/// radius difference, then lexicographic subject ids, then paths). The
/// combined result is returned in increasing pupil-radius-difference
/// order, truncated to `n_pairs`.
pub fn select_by_radius(manifest: &DatasetManifest, n_pairs: usize) -> Result<Vec<MorphPair>> {
    let mut all: Vec<(f64, f64, MorphPair)> = Vec::new();
    for side in [EyeSide::L, EyeSide::R] {
        let mut pool: Vec<&ManifestEntry> = manifest.entries.iter().filter(|e| e.eye_side == side).collect();
        pool.sort_by(|a, b| {
            a.pupil_radius
                .total_cmp(&b.pupil_radius)
                .then(a.iris_radius.total_cmp(&b.iris_radius))
                .then(a.subject_id.cmp(&b.subject_id))
                .then(a.image_path.cmp(&b.image_path))
        });
        loop {
            let mut bid: Option<(f64, f64, String, String, usize)> = None;
            for k in 0..pool.len().saturating_sub(1) {
                let (a, b) = (pool[k], pool[k + 1]);
                if a.subject_id == b.subject_id {
                    continue;
                }
                let dp = (a.pupil_radius - b.pupil_radius).abs();
                let di = (a.iris_radius - b.iris_radius).abs();
                let subj_lo = a.subject_id.clone().min(b.subject_id.clone());
                let subj_hi = a.subject_id.clone().max(b.subject_id.clone());
                let key = (dp, di, subj_lo, subj_hi, k);
                let better = match &bid {
                    None => true,
                    Some((bdp, bdi, blo, bhi, _)) => {
                        (key.0, key.1, &key.2, &key.3) < (*bdp, *bdi, blo, bhi)
                    }
                };
                if better {
                    bid = Some(key);
                }
            }
            let Some((dp, di, _, _, k)) = bid else { break };
            let pair = MorphPair::new(pool[k], pool[k + 1], Strategy::Radius);
            pool.remove(k + 1);
            pool.remove(k);
            all.push((dp, di, pair));
        }
    }
    all.sort_by(|x, y| {
        x.0.total_cmp(&y.0)
            .then(x.1.total_cmp(&y.1))
            .then(x.2.a.subject_id.cmp(&y.2.a.subject_id))
            .then(x.2.a.image_path.cmp(&y.2.a.image_path))
    });
    if all.len() < n_pairs {
        return Err(Error::Capacity { requested: n_pairs, available: all.len() });
    }
    Ok(all.into_iter().take(n_pairs).map(|(_, _, p)| p).collect())
}

/// Writes a manifest as CSV with the canonical header.
pub fn write_manifest_csv(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for e in &manifest.entries {
        w.serialize(e).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest_csv(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut entries = Vec::new();
    for rec in r.deserialize() {
        entries.push(rec.map_err(|e| csv_err(path, e))?);
    }
    DatasetManifest::new(entries)
}

#[derive(Serialize, Deserialize)]
struct PairRow {
    #[serde(rename = "pathA")]
    path_a: String,
    #[serde(rename = "pathB")]
    path_b: String,
    strategy: Strategy,
}

/// Writes pairs as `pathA,pathB,strategy` CSV.
pub fn write_pairs_csv(path: impl AsRef<Path>, pairs: &[MorphPair]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for p in pairs {
        w.serialize(PairRow {
            path_a: p.a.image_path.clone(),
            path_b: p.b.image_path.clone(),
            strategy: p.strategy,
        })
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a pair CSV back, resolving each path against the manifest.
pub fn read_pairs_csv(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<Vec<MorphPair>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut pairs = Vec::new();
    for rec in r.deserialize::<PairRow>() {
        let row = rec.map_err(|e| csv_err(path, e))?;
        let a = manifest
            .by_path(&row.path_a)
            .ok_or_else(|| Error::format("pair file", format!("{} not in manifest", row.path_a)))?;
        let b = manifest
            .by_path(&row.path_b)
            .ok_or_else(|| Error::format("pair file", format!("{} not in manifest", row.path_b)))?;
        if !valid(a, b) {
            return Err(Error::format(
                "pair file",
                format!("{} and {} do not form a distinct-subject same-side pair", row.path_a, row.path_b),
            ));
        }
        pairs.push(MorphPair { a: a.clone(), b: b.clone(), strategy: row.strategy });
    }
    Ok(pairs)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format("csv file", format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(subject: &str, side: EyeSide, path: &str, pupil: f64, iris: f64) -> ManifestEntry {
        ManifestEntry {
            subject_id: subject.into(),
            eye_side: side,
            image_path: path.into(),
            pupil_radius: pupil,
            iris_radius: iris,
        }
    }

    #[test]
    fn two_subjects_force_the_single_pair() {
        let m = DatasetManifest::new(vec![
            entry("S1", EyeSide::L, "a.pgm", 20.0, 50.0),
            entry("S2", EyeSide::L, "b.pgm", 25.0, 52.0),
        ])
        .unwrap();
        let pairs = select_random(&m, 1, 9).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_ne!(pairs[0].a.subject_id, pairs[0].b.subject_id);
        assert!(matches!(select_random(&m, 2, 9), Err(Error::Capacity { available: 1, .. })));
    }

    #[test]
    fn random_selection_is_seed_deterministic() {
        let mut entries = Vec::new();
        for s in 0..8 {
            for i in 0..3 {
                entries.push(entry(
                    &format!("S{s}"),
                    EyeSide::L,
                    &format!("s{s}_{i}.pgm"),
                    20.0 + s as f64 + 0.1 * i as f64,
                    50.0 + s as f64,
                ));
            }
        }
        let m = DatasetManifest::new(entries).unwrap();
        let a = select_random(&m, 10, 42).unwrap();
        let b = select_random(&m, 10, 42).unwrap();
        assert_eq!(a, b);
        for p in &a {
            assert!(valid(&p.a, &p.b));
        }
        // No image reused within the run.
        let mut paths: Vec<&str> = a.iter().flat_map(|p| [p.a.image_path.as_str(), p.b.image_path.as_str()]).collect();
        paths.sort_unstable();
        paths.dedup();
        assert_eq!(paths.len(), 20);
    }

    #[test]
    fn radius_selection_picks_nearest_adjacent_cross_subject() {
        let m = DatasetManifest::new(vec![
            entry("S1", EyeSide::L, "a.pgm", 20.0, 50.0),
            entry("S2", EyeSide::L, "b.pgm", 21.0, 51.0),
            entry("S3", EyeSide::L, "c.pgm", 30.0, 52.0),
        ])
        .unwrap();
        let pairs = select_by_radius(&m, 1).unwrap();
        let radii = (pairs[0].a.pupil_radius, pairs[0].b.pupil_radius);
        assert_eq!(radii, (20.0, 21.0));
    }

    #[test]
    fn same_subject_neighbours_are_skipped() {
        let m = DatasetManifest::new(vec![
            entry("X", EyeSide::L, "x1.pgm", 20.0, 50.0),
            entry("X", EyeSide::L, "x2.pgm", 20.5, 50.0),
            entry("Y", EyeSide::L, "y1.pgm", 21.0, 50.0),
        ])
        .unwrap();
        let pairs = select_by_radius(&m, 1).unwrap();
        let subjects = (pairs[0].a.subject_id.as_str(), pairs[0].b.subject_id.as_str());
        assert_eq!(subjects, ("X", "Y"));
        assert_eq!(pairs[0].a.pupil_radius, 20.5);
    }

    #[test]
    fn equal_pupil_radii_fall_back_to_iris_then_subject() {
        let m = DatasetManifest::new(vec![
            entry("S1", EyeSide::L, "a.pgm", 10.0, 40.0),
            entry("S2", EyeSide::L, "b.pgm", 10.0, 41.0),
            entry("S3", EyeSide::L, "c.pgm", 10.0, 47.0),
        ])
        .unwrap();
        let first = select_by_radius(&m, 1).unwrap();
        let again = select_by_radius(&m, 1).unwrap();
        assert_eq!(first, again);
        // Adjacent-by-sort candidates are (S1,S2) and (S2,S3); the iris
        // tie-break prefers the 1.0 px gap.
        let subjects: Vec<&str> = vec![first[0].a.subject_id.as_str(), first[0].b.subject_id.as_str()];
        assert_eq!(subjects, ["S1", "S2"]);
    }

    #[test]
    fn radius_deltas_never_decrease() {
        let mut entries = Vec::new();
        let mut rng = crate::rng::stream_rng(5, &[1]);
        for s in 0..12 {
            for i in 0..2 {
                entries.push(entry(
                    &format!("S{s:02}"),
                    if s % 2 == 0 { EyeSide::L } else { EyeSide::R },
                    &format!("s{s}_{i}.pgm"),
                    rng.gen_range(18.0..40.0),
                    rng.gen_range(48.0..60.0),
                ));
            }
        }
        let m = DatasetManifest::new(entries).unwrap();
        let pairs = select_by_radius(&m, 8).unwrap();
        let deltas: Vec<f64> = pairs.iter().map(|p| (p.a.pupil_radius - p.b.pupil_radius).abs()).collect();
        assert!(deltas.windows(2).all(|w| w[0] <= w[1]), "{deltas:?}");
    }

    #[test]
    fn radius_strategy_beats_random_on_mean_delta() {
        let mut radius_total = 0.0;
        let mut random_total = 0.0;
        for trial in 0..20u64 {
            let mut rng = crate::rng::stream_rng(77, &[trial]);
            let mut entries = Vec::new();
            for s in 0..10 {
                for i in 0..2 {
                    entries.push(entry(
                        &format!("S{s:02}"),
                        EyeSide::L,
                        &format!("t{trial}_s{s}_{i}.pgm"),
                        rng.gen_range(18.0..42.0),
                        rng.gen_range(48.0..60.0),
                    ));
                }
            }
            let m = DatasetManifest::new(entries).unwrap();
            let mean = |pairs: &[MorphPair]| {
                pairs.iter().map(|p| (p.a.pupil_radius - p.b.pupil_radius).abs()).sum::<f64>() / pairs.len() as f64
            };
            radius_total += mean(&select_by_radius(&m, 6).unwrap());
            random_total += mean(&select_random(&m, 6, trial).unwrap());
        }
        assert!(
            radius_total <= random_total,
            "radius mean {radius_total} vs random mean {random_total}"
        );
    }

    #[test]
    fn manifest_validation_catches_bad_rows() {
        assert!(DatasetManifest::new(vec![entry("S1", EyeSide::L, "a.pgm", 50.0, 20.0)]).is_err());
        assert!(DatasetManifest::new(vec![
            entry("S1", EyeSide::L, "a.pgm", 20.0, 50.0),
            entry("S2", EyeSide::L, "a.pgm", 21.0, 50.0),
        ])
        .is_err());
    }

    #[test]
    fn csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(vec![
            entry("S1", EyeSide::L, "a.pgm", 20.25, 50.5),
            entry("S2", EyeSide::R, "b.pgm", 21.125, 52.0),
            entry("S3", EyeSide::L, "c.pgm", 23.0, 51.0),
        ])
        .unwrap();
        let mpath = dir.path().join("manifest.csv");
        write_manifest_csv(&mpath, &m).unwrap();
        let back = read_manifest_csv(&mpath).unwrap();
        assert_eq!(back.entries(), m.entries());
        let header = std::fs::read_to_string(&mpath).unwrap();
        assert!(header.starts_with("subject_id,eye_side,image_path,pupil_radius,iris_radius"));

        let pairs = select_by_radius(&m, 1).unwrap();
        let ppath = dir.path().join("pairs.csv");
        write_pairs_csv(&ppath, &pairs).unwrap();
        let pback = read_pairs_csv(&ppath, &m).unwrap();
        assert_eq!(pback, pairs);
        let pheader = std::fs::read_to_string(&ppath).unwrap();
        assert!(pheader.starts_with("pathA,pathB,strategy"));
    }
}
