//! Batch experiment orchestration and the command-line front end.
//!
//! A full run is a fixed chain of stages, each reading and writing plain
//! files under one output directory:
//!
//! ```text
//! out/
//!   config.sha256                 hash of the parsed config, guards resumes
//!   images/                       synthetic captures + manifest.csv
//!   geometry.csv                  fitted circles per capture
//!   sheets/                       <stem>.rs.pgm / <stem>.rsmask.pgm
//!   codes/                        <stem>.irc
//!   pairs_<strategy>.csv          selected morph pairs
//!   morphs/<strategy>/            M_<stemA>_<stemB>_<alpha>.pgm
//!   morph_geometry_<strategy>.csv re-segmentation results (failures kept)
//!   morph_sheets/<strategy>/      normalized morphs
//!   morph_codes/<strategy>/       encoded morphs
//!   scores_recognition.csv        mated + nonmated comparisons
//!   scores_morph_<strategy>.csv   morph vs disjoint probe comparisons
//!   det_recognition.csv           threshold,fmr,fnmr sweep
//!   mad_report.json, mad_det.csv  optional detector experiment
//!   report.json                   the vulnerability report
//! ```
//!
//! Stages are resumable at file granularity: an artefact that already
//! exists is read back instead of recomputed, so deleting one file and
//! re-running regenerates exactly that file. All randomness flows from the
//! single config seed through named sub-streams, which makes repeated runs
//! byte-identical. The config hash guard aborts a resume into a directory
//! produced by a different config.
//!
//! Morphed images re-enter the pipeline through the same segmentation path
//! as bona fide captures; morphs whose segmentation fails are counted and
//! reported rather than dropped. Attack probes are captures of a parent
//! subject other than the capture that built the morph, capped per side.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{
    encode, hamming, load_code, save_code, IrisCode, DEFAULT_ATTACK_DELTA, DEFAULT_MAX_SHIFT,
    DEFAULT_ROWS_USED, DEFAULT_SIGMA_RATIO, DEFAULT_WAVELENGTH,
};
use crate::error::{Error, Result};
use crate::imgcore::{load_pgm, save_pgm, GrayImage, LabelMask};
use crate::mad::{self, Extractor};
use crate::metrics::{
    d_prime, det_csv, det_points, eer, fnmr_at_fmr, map_matrix, mmpmr, rates_at, rmmr,
    MmpmrVariant, MorphAttackRecord, Polarity, ScoreSet,
};
use crate::morphgen::morph_pair;
use crate::normalization::{
    load_rubber_sheet, save_rubber_sheet, unwrap, DEFAULT_SHEET_COLS, DEFAULT_SHEET_ROWS,
};
use crate::pairsel::{
    read_manifest_csv, read_pairs_csv, select_by_radius, select_random, write_pairs_csv,
    DatasetManifest, ManifestEntry, MorphPair, Strategy,
};
use crate::rng::{label, stream_hash};
use crate::segmentation::{
    geometry_from_mask, segment_threshold, EllipseParams, IrisGeometry, DEFAULT_IRIS_THRESH,
    DEFAULT_PUPIL_THRESH,
};
use crate::synthgen::{generate_dataset, DatasetParams};

/// Which pair-selection strategies a run exercises.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StrategyChoice {
    Radius,
    Random,
    Both,
}

impl StrategyChoice {
    /// Concrete strategies, in fixed execution order.
    pub fn strategies(self) -> Vec<Strategy> {
        match self {
            StrategyChoice::Radius => vec![Strategy::Radius],
            StrategyChoice::Random => vec![Strategy::Random],
            StrategyChoice::Both => vec![Strategy::Radius, Strategy::Random],
        }
    }
}

impl fmt::Display for StrategyChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyChoice::Radius => "radius",
            StrategyChoice::Random => "random",
            StrategyChoice::Both => "both",
        })
    }
}

impl FromStr for StrategyChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "radius" => Ok(StrategyChoice::Radius),
            "random" => Ok(StrategyChoice::Random),
            "both" => Ok(StrategyChoice::Both),
            other => Err(Error::Config(format!("expected radius, random, or both, got {other:?}"))),
        }
    }
}

/// `synth.*` config section: the synthetic dataset to render.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub subjects: usize,
    pub images_per_subject: usize,
    pub width: u32,
    pub height: u32,
    pub pupil_min: f64,
    pub pupil_max: f64,
    pub iris_min: f64,
    pub iris_max: f64,
    pub occlusion: f64,
    pub center_jitter: f64,
}

/// `seg.*` config section: intensity thresholds for the label mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SegConfig {
    pub pupil_thresh: u8,
    pub iris_thresh: u8,
}

/// `sheet.*` config section: normalized sheet dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct SheetConfig {
    pub rows: usize,
    pub cols: usize,
}

/// `codec.*` config section: filter and matcher parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct CodecConfig {
    pub wavelength: f64,
    pub sigma_ratio: f64,
    pub rows_used: usize,
    pub max_shift: usize,
}

/// `pairs.*` config section: morph pair selection.
#[derive(Clone, Debug, PartialEq)]
pub struct PairsConfig {
    pub strategy: StrategyChoice,
    /// Pairs per strategy, not a total across strategies.
    pub count: usize,
}

/// `morph.*` config section.
#[derive(Clone, Debug, PartialEq)]
pub struct MorphConfig {
    pub alpha: f64,
}

/// `attack.*` config section: the verification operating point under
/// attack and the probe budget per morph and subject.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackConfig {
    pub delta: f64,
    pub probe_cap: usize,
}

/// `report.*` config section.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportConfig {
    pub fmr_targets: Vec<f64>,
}

/// `compare.*` config section. Only the shift-compensated Hamming
/// comparator exists; the key pins the choice in the config hash.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareConfig {
    pub comparator: String,
}

/// `mad.*` config section: optional detector experiment at the end of a
/// run. Requires both pair strategies (train on one morph type, evaluate
/// on the other).
#[derive(Clone, Debug, PartialEq)]
pub struct MadConfig {
    pub enabled: bool,
    pub extractor: Extractor,
}

/// Full experiment description, parsed from a flat `key = value` file.
///
/// Every key has a default except `seed`, which must be explicit so runs
/// never depend on wall-clock entropy. The output directory is
/// deliberately not part of the config: the same file must reproduce the
/// same bytes anywhere.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub seg: SegConfig,
    pub sheet: SheetConfig,
    pub codec: CodecConfig,
    pub pairs: PairsConfig,
    pub morph: MorphConfig,
    pub attack: AttackConfig,
    pub report: ReportConfig,
    pub compare: CompareConfig,
    pub mad: MadConfig,
}

/// Typed accessor over the raw key/value map; tracks consumed keys so
/// leftovers can be rejected.
struct Bag(BTreeMap<String, String>);

impl Bag {
    fn take<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        <T as FromStr>::Err: fmt::Display,
    {
        match self.0.remove(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| Error::Config(format!("key {key}: {e} (value {v:?})"))),
        }
    }

    fn take_required<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        <T as FromStr>::Err: fmt::Display,
    {
        match self.0.remove(key) {
            None => Err(Error::Config(format!("missing required key {key}"))),
            Some(v) => v
                .parse()
                .map_err(|e| Error::Config(format!("key {key}: {e} (value {v:?})"))),
        }
    }

    fn take_list(&mut self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.0.remove(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|e| Error::Config(format!("key {key}: {e} (value {s:?})")))
                })
                .collect(),
        }
    }
}

fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected key = value, got {raw:?}", no + 1)));
        };
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", no + 1)));
        }
        if map.insert(k.clone(), v).is_some() {
            return Err(Error::Config(format!("duplicate key {k}")));
        }
    }
    Ok(map)
}

impl ExperimentConfig {
    /// All-defaults config for the given seed.
    pub fn default_with_seed(seed: u64) -> Self {
        ExperimentConfig {
            seed,
            synth: SynthConfig {
                subjects: 10,
                images_per_subject: 4,
                width: 320,
                height: 240,
                pupil_min: 20.0,
                pupil_max: 36.0,
                iris_min: 58.0,
                iris_max: 72.0,
                occlusion: 0.0,
                center_jitter: 5.0,
            },
            seg: SegConfig { pupil_thresh: DEFAULT_PUPIL_THRESH, iris_thresh: DEFAULT_IRIS_THRESH },
            sheet: SheetConfig { rows: DEFAULT_SHEET_ROWS, cols: DEFAULT_SHEET_COLS },
            codec: CodecConfig {
                wavelength: DEFAULT_WAVELENGTH,
                sigma_ratio: DEFAULT_SIGMA_RATIO,
                rows_used: DEFAULT_ROWS_USED,
                max_shift: DEFAULT_MAX_SHIFT,
            },
            pairs: PairsConfig { strategy: StrategyChoice::Both, count: 10 },
            morph: MorphConfig { alpha: 0.5 },
            attack: AttackConfig { delta: DEFAULT_ATTACK_DELTA, probe_cap: 5 },
            report: ReportConfig { fmr_targets: vec![0.10, 0.05, 0.01, 0.001] },
            compare: CompareConfig { comparator: "hamming".into() },
            mad: MadConfig { enabled: false, extractor: Extractor::Freq },
        }
    }

    /// Parses the flat `key = value` text. Unknown and duplicate keys are
    /// rejected so typos cannot silently fall back to defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut bag = Bag(parse_kv(text)?);
        let seed = bag.take_required("seed")?;
        let d = ExperimentConfig::default_with_seed(seed);
        let cfg = ExperimentConfig {
            seed,
            synth: SynthConfig {
                subjects: bag.take("synth.subjects", d.synth.subjects)?,
                images_per_subject: bag.take("synth.images_per_subject", d.synth.images_per_subject)?,
                width: bag.take("synth.width", d.synth.width)?,
                height: bag.take("synth.height", d.synth.height)?,
                pupil_min: bag.take("synth.pupil_min", d.synth.pupil_min)?,
                pupil_max: bag.take("synth.pupil_max", d.synth.pupil_max)?,
                iris_min: bag.take("synth.iris_min", d.synth.iris_min)?,
                iris_max: bag.take("synth.iris_max", d.synth.iris_max)?,
                occlusion: bag.take("synth.occlusion", d.synth.occlusion)?,
                center_jitter: bag.take("synth.center_jitter", d.synth.center_jitter)?,
            },
            seg: SegConfig {
                pupil_thresh: bag.take("seg.pupil_thresh", d.seg.pupil_thresh)?,
                iris_thresh: bag.take("seg.iris_thresh", d.seg.iris_thresh)?,
            },
            sheet: SheetConfig {
                rows: bag.take("sheet.rows", d.sheet.rows)?,
                cols: bag.take("sheet.cols", d.sheet.cols)?,
            },
            codec: CodecConfig {
                wavelength: bag.take("codec.wavelength", d.codec.wavelength)?,
                sigma_ratio: bag.take("codec.sigma_ratio", d.codec.sigma_ratio)?,
                rows_used: bag.take("codec.rows_used", d.codec.rows_used)?,
                max_shift: bag.take("codec.max_shift", d.codec.max_shift)?,
            },
            pairs: PairsConfig {
                strategy: bag.take("pairs.strategy", d.pairs.strategy)?,
                count: bag.take("pairs.count", d.pairs.count)?,
            },
            morph: MorphConfig { alpha: bag.take("morph.alpha", d.morph.alpha)? },
            attack: AttackConfig {
                delta: bag.take("attack.delta", d.attack.delta)?,
                probe_cap: bag.take("attack.probe_cap", d.attack.probe_cap)?,
            },
            report: ReportConfig {
                fmr_targets: bag.take_list("report.fmr_targets", &d.report.fmr_targets)?,
            },
            compare: CompareConfig {
                comparator: bag.take("compare.comparator", d.compare.comparator.clone())?,
            },
            mad: MadConfig {
                enabled: bag.take("mad.enabled", d.mad.enabled)?,
                extractor: bag.take("mad.extractor", d.mad.extractor)?,
            },
        };
        if let Some(k) = bag.0.keys().next() {
            return Err(Error::Config(format!("unknown key {k}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::parse(&text)
    }

    /// Eager validation so misconfiguration fails before any work starts.
    pub fn validate(&self) -> Result<()> {
        let s = &self.synth;
        if s.subjects < 2 {
            return Err(Error::Config(format!("synth.subjects must be >= 2, got {}", s.subjects)));
        }
        if s.images_per_subject < 2 {
            return Err(Error::Config(format!(
                "synth.images_per_subject must be >= 2 (mated pairs and morph probes need a second capture), got {}",
                s.images_per_subject
            )));
        }
        if !(s.pupil_min > 0.0 && s.pupil_min <= s.pupil_max && s.pupil_max < s.iris_min && s.iris_min <= s.iris_max) {
            return Err(Error::Config(format!(
                "synth radii must satisfy 0 < pupil_min <= pupil_max < iris_min <= iris_max, got {} {} {} {}",
                s.pupil_min, s.pupil_max, s.iris_min, s.iris_max
            )));
        }
        if self.seg.pupil_thresh >= self.seg.iris_thresh {
            return Err(Error::Config(format!(
                "seg.pupil_thresh {} must be below seg.iris_thresh {}",
                self.seg.pupil_thresh, self.seg.iris_thresh
            )));
        }
        if self.codec.rows_used > self.sheet.rows {
            return Err(Error::Config(format!(
                "codec.rows_used {} exceeds sheet.rows {}",
                self.codec.rows_used, self.sheet.rows
            )));
        }
        if !(0.0..=1.0).contains(&self.morph.alpha) {
            return Err(Error::Config(format!("morph.alpha {} outside [0, 1]", self.morph.alpha)));
        }
        if !(self.attack.delta > 0.0 && self.attack.delta < 1.0) {
            return Err(Error::Config(format!("attack.delta {} outside (0, 1)", self.attack.delta)));
        }
        if self.attack.probe_cap == 0 {
            return Err(Error::Config("attack.probe_cap must be >= 1".into()));
        }
        if self.pairs.count == 0 {
            return Err(Error::Config("pairs.count must be >= 1".into()));
        }
        if self.report.fmr_targets.is_empty() {
            return Err(Error::Config("report.fmr_targets must not be empty".into()));
        }
        for &t in &self.report.fmr_targets {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Config(format!("report.fmr_targets entry {t} outside (0, 1)")));
            }
        }
        if self.compare.comparator != "hamming" {
            return Err(Error::Config(format!(
                "compare.comparator must be hamming, got {:?}",
                self.compare.comparator
            )));
        }
        if self.mad.enabled && self.pairs.strategy != StrategyChoice::Both {
            return Err(Error::Config(
                "mad.enabled needs pairs.strategy = both (the detector trains on one morph type and evaluates on the other)".into(),
            ));
        }
        Ok(())
    }

    /// Normalized key/value rendering: every key, alphabetical, one per
    /// line. Two configs that parse equal hash equal regardless of the
    /// original file's layout.
    pub fn canonical(&self) -> String {
        let targets: Vec<String> = self.report.fmr_targets.iter().map(|t| t.to_string()).collect();
        let pairs: Vec<(&str, String)> = vec![
            ("attack.delta", self.attack.delta.to_string()),
            ("attack.probe_cap", self.attack.probe_cap.to_string()),
            ("codec.max_shift", self.codec.max_shift.to_string()),
            ("codec.rows_used", self.codec.rows_used.to_string()),
            ("codec.sigma_ratio", self.codec.sigma_ratio.to_string()),
            ("codec.wavelength", self.codec.wavelength.to_string()),
            ("compare.comparator", self.compare.comparator.clone()),
            ("mad.enabled", self.mad.enabled.to_string()),
            ("mad.extractor", self.mad.extractor.to_string()),
            ("morph.alpha", self.morph.alpha.to_string()),
            ("pairs.count", self.pairs.count.to_string()),
            ("pairs.strategy", self.pairs.strategy.to_string()),
            ("report.fmr_targets", targets.join(",")),
            ("seed", self.seed.to_string()),
            ("seg.iris_thresh", self.seg.iris_thresh.to_string()),
            ("seg.pupil_thresh", self.seg.pupil_thresh.to_string()),
            ("sheet.cols", self.sheet.cols.to_string()),
            ("sheet.rows", self.sheet.rows.to_string()),
            ("synth.center_jitter", self.synth.center_jitter.to_string()),
            ("synth.height", self.synth.height.to_string()),
            ("synth.images_per_subject", self.synth.images_per_subject.to_string()),
            ("synth.iris_max", self.synth.iris_max.to_string()),
            ("synth.iris_min", self.synth.iris_min.to_string()),
            ("synth.occlusion", self.synth.occlusion.to_string()),
            ("synth.pupil_max", self.synth.pupil_max.to_string()),
            ("synth.pupil_min", self.synth.pupil_min.to_string()),
            ("synth.subjects", self.synth.subjects.to_string()),
            ("synth.width", self.synth.width.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in pairs {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// Lowercase hex SHA-256 of the canonical rendering.
    pub fn sha256_hex(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        let mut hex = String::with_capacity(64);
        for b in digest {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }

    /// Synthetic dataset parameters for the generation stage.
    pub fn dataset_params(&self) -> DatasetParams {
        let mut p = DatasetParams::new(
            self.synth.subjects,
            self.synth.images_per_subject,
            (self.synth.pupil_min, self.synth.pupil_max),
            self.seed,
        );
        p.image_size = (self.synth.width, self.synth.height);
        p.iris_radius_range = (self.synth.iris_min, self.synth.iris_max);
        p.occlusion_fraction = self.synth.occlusion;
        p.center_jitter = self.synth.center_jitter;
        p
    }
}

/// Segmentation outcome for one image; `geom` is `None` when the image
/// could not be segmented (tracked, not dropped).
#[derive(Clone, Debug, PartialEq)]
pub struct GeometryRecord {
    pub image_path: String,
    pub geom: Option<IrisGeometry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SegStatus {
    Ok,
    Failed,
}

#[derive(Serialize, Deserialize)]
struct GeometryRow {
    image_path: String,
    status: SegStatus,
    pupil_cx: Option<f64>,
    pupil_cy: Option<f64>,
    pupil_radius: Option<f64>,
    iris_cx: Option<f64>,
    iris_cy: Option<f64>,
    iris_radius: Option<f64>,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format("csv file", format!("{}: {e}", path.display()))
}

/// Writes fitted circles as
/// `image_path,status,pupil_cx,pupil_cy,pupil_radius,iris_cx,iris_cy,iris_radius`
/// CSV; failed rows keep empty numeric fields.
pub fn write_geometry_csv(path: impl AsRef<Path>, records: &[GeometryRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in records {
        let row = match &r.geom {
            Some(g) => GeometryRow {
                image_path: r.image_path.clone(),
                status: SegStatus::Ok,
                pupil_cx: Some(g.pupil.center().x),
                pupil_cy: Some(g.pupil.center().y),
                pupil_radius: Some(g.pupil.effective_radius()),
                iris_cx: Some(g.iris.center().x),
                iris_cy: Some(g.iris.center().y),
                iris_radius: Some(g.iris.effective_radius()),
            },
            None => GeometryRow {
                image_path: r.image_path.clone(),
                status: SegStatus::Failed,
                pupil_cx: None,
                pupil_cy: None,
                pupil_radius: None,
                iris_cx: None,
                iris_cy: None,
                iris_radius: None,
            },
        };
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_geometry_csv(path: impl AsRef<Path>) -> Result<Vec<GeometryRecord>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut records = Vec::new();
    for rec in r.deserialize::<GeometryRow>() {
        let row = rec.map_err(|e| csv_err(path, e))?;
        let geom = match row.status {
            SegStatus::Failed => None,
            SegStatus::Ok => {
                let need = |v: Option<f64>, what: &str| {
                    v.ok_or_else(|| {
                        Error::format("geometry file", format!("{}: ok row lacks {what}", row.image_path))
                    })
                };
                let pupil = EllipseParams::circle(
                    need(row.pupil_cx, "pupil_cx")?,
                    need(row.pupil_cy, "pupil_cy")?,
                    need(row.pupil_radius, "pupil_radius")?,
                )?;
                let iris = EllipseParams::circle(
                    need(row.iris_cx, "iris_cx")?,
                    need(row.iris_cy, "iris_cy")?,
                    need(row.iris_radius, "iris_radius")?,
                )?;
                Some(IrisGeometry::new(pupil, iris)?)
            }
        };
        records.push(GeometryRecord { image_path: row.image_path, geom });
    }
    Ok(records)
}

/// Role of one comparison score row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreLabel {
    #[serde(rename = "mated")]
    Mated,
    #[serde(rename = "nonmated")]
    Nonmated,
    #[serde(rename = "morphA")]
    MorphA,
    #[serde(rename = "morphB")]
    MorphB,
}

/// One comparison: `idA,idB,label,score,shift` CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    #[serde(rename = "idA")]
    pub id_a: String,
    #[serde(rename = "idB")]
    pub id_b: String,
    pub label: ScoreLabel,
    pub score: f64,
    pub shift: i64,
}

pub fn write_scores_csv(path: impl AsRef<Path>, rows: &[ScoreRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scores_csv(path: impl AsRef<Path>) -> Result<Vec<ScoreRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec.map_err(|e| csv_err(path, e))?);
    }
    Ok(rows)
}

fn stage_err(stage: &str, input: &str, source: Error) -> Error {
    Error::Stage { stage: stage.into(), input: input.into(), source: Box::new(source) }
}

/// File name without its final extension; comparison ids and sheet/code
/// stems are derived this way.
pub fn stem_of(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string())
}

/// Threshold segmentation followed by boundary circle fits.
pub fn segment_image(img: &GrayImage, pupil_thresh: u8, iris_thresh: u8) -> Result<(LabelMask, IrisGeometry)> {
    let mask = segment_threshold(img, pupil_thresh, iris_thresh)?;
    let geom = geometry_from_mask(&mask)?;
    Ok((mask, geom))
}

/// Segments `paths` (relative to `images_dir`) in parallel, preserving
/// input order. In lenient mode segmentation failures become `geom: None`
/// records; I/O failures abort either way.
pub fn stage_segment(
    images_dir: &Path,
    paths: &[String],
    pupil_thresh: u8,
    iris_thresh: u8,
    lenient: bool,
) -> Result<Vec<GeometryRecord>> {
    paths
        .par_iter()
        .map(|p| {
            let img = load_pgm(images_dir.join(p)).map_err(|e| stage_err("segment", p, e))?;
            match segment_image(&img, pupil_thresh, iris_thresh) {
                Ok((_, geom)) => Ok(GeometryRecord { image_path: p.clone(), geom: Some(geom) }),
                Err(_) if lenient => Ok(GeometryRecord { image_path: p.clone(), geom: None }),
                Err(e) => Err(stage_err("segment", p, e)),
            }
        })
        .collect()
}

/// Resumable wrapper: reads `out_csv` if it exists, otherwise segments
/// and writes it.
pub fn stage_segment_to_csv(
    images_dir: &Path,
    paths: &[String],
    pupil_thresh: u8,
    iris_thresh: u8,
    lenient: bool,
    out_csv: &Path,
) -> Result<Vec<GeometryRecord>> {
    if out_csv.exists() {
        return read_geometry_csv(out_csv);
    }
    let records = stage_segment(images_dir, paths, pupil_thresh, iris_thresh, lenient)?;
    write_geometry_csv(out_csv, &records)?;
    Ok(records)
}

/// Unwraps every successfully segmented image onto the polar grid and
/// persists `<stem>.rs.pgm` / `<stem>.rsmask.pgm` under `sheets_dir`,
/// skipping stems whose pair of files already exists. The label mask is
/// recomputed from the image so occluded pixels are marked invalid.
/// Returns the stems processed, in record order.
pub fn stage_normalize(
    images_dir: &Path,
    records: &[GeometryRecord],
    rows: usize,
    cols: usize,
    pupil_thresh: u8,
    iris_thresh: u8,
    sheets_dir: &Path,
) -> Result<Vec<String>> {
    fs::create_dir_all(sheets_dir).map_err(|e| Error::io(sheets_dir, e))?;
    records
        .par_iter()
        .filter_map(|r| r.geom.as_ref().map(|g| (r, g)))
        .map(|(r, geom)| {
            let stem = stem_of(&r.image_path);
            let done = sheets_dir.join(format!("{stem}.rs.pgm")).exists()
                && sheets_dir.join(format!("{stem}.rsmask.pgm")).exists();
            if !done {
                let run = || -> Result<()> {
                    let img = load_pgm(images_dir.join(&r.image_path))?;
                    let mask = segment_threshold(&img, pupil_thresh, iris_thresh)?;
                    let sheet = unwrap(&img, geom, rows, cols, Some(&mask))?;
                    save_rubber_sheet(sheets_dir.join(&stem), &sheet)
                };
                run().map_err(|e| stage_err("normalize", &r.image_path, e))?;
            }
            Ok(stem)
        })
        .collect()
}

/// Encodes every sheet stem into `<stem>.irc` under `codes_dir`, skipping
/// existing code files.
pub fn stage_encode(
    sheets_dir: &Path,
    stems: &[String],
    wavelength: f64,
    sigma_ratio: f64,
    rows_used: usize,
    codes_dir: &Path,
) -> Result<()> {
    fs::create_dir_all(codes_dir).map_err(|e| Error::io(codes_dir, e))?;
    stems
        .par_iter()
        .map(|stem| {
            let out = codes_dir.join(format!("{stem}.irc"));
            if out.exists() {
                return Ok(());
            }
            let run = || -> Result<()> {
                let sheet = load_rubber_sheet(sheets_dir.join(stem))?;
                let code = encode(&sheet, wavelength, sigma_ratio, rows_used)?;
                save_code(&out, &code)
            };
            run().map_err(|e| stage_err("encode", stem, e))
        })
        .collect()
}

/// Selects morph pairs for one strategy. Randomness is a named sub-stream
/// of the run seed, so strategies never perturb each other.
pub fn stage_select_pairs(
    manifest: &DatasetManifest,
    strategy: Strategy,
    count: usize,
    seed: u64,
) -> Result<Vec<MorphPair>> {
    match strategy {
        Strategy::Radius => select_by_radius(manifest, count),
        Strategy::Random => select_random(manifest, count, stream_hash(seed, &[label("pairs-random")])),
    }
}

/// Resumable wrapper: reads `out_csv` against the manifest if present,
/// otherwise selects and writes it.
pub fn stage_select_pairs_to_csv(
    manifest: &DatasetManifest,
    strategy: Strategy,
    count: usize,
    seed: u64,
    out_csv: &Path,
) -> Result<Vec<MorphPair>> {
    if out_csv.exists() {
        return read_pairs_csv(out_csv, manifest);
    }
    let pairs = stage_select_pairs(manifest, strategy, count, seed)?;
    write_pairs_csv(out_csv, &pairs)?;
    Ok(pairs)
}

/// Output file name for one morph. The parent capture stems keep distinct
/// pairs of the same two subjects distinct; alpha is fixed to two
/// decimals.
pub fn morph_name(pair: &MorphPair, alpha: f64) -> String {
    format!("M_{}_{}_{alpha:.2}.pgm", stem_of(&pair.a.image_path), stem_of(&pair.b.image_path))
}

/// Renders each pair's morph into `morphs_dir`, skipping files that
/// already exist. Landmarks come from the fitted geometry table, keyed by
/// the parents' manifest paths. Returns morph file names in pair order.
pub fn stage_morph(
    images_dir: &Path,
    geoms: &BTreeMap<String, IrisGeometry>,
    pairs: &[MorphPair],
    alpha: f64,
    morphs_dir: &Path,
) -> Result<Vec<String>> {
    fs::create_dir_all(morphs_dir).map_err(|e| Error::io(morphs_dir, e))?;
    pairs
        .par_iter()
        .map(|pair| {
            let name = morph_name(pair, alpha);
            let out = morphs_dir.join(&name);
            if !out.exists() {
                let run = || -> Result<()> {
                    let geom = |p: &str| {
                        geoms.get(p).ok_or_else(|| {
                            Error::format("geometry table", format!("no fitted geometry for {p}"))
                        })
                    };
                    let geom_a = geom(&pair.a.image_path)?;
                    let geom_b = geom(&pair.b.image_path)?;
                    let img_a = load_pgm(images_dir.join(&pair.a.image_path))?;
                    let img_b = load_pgm(images_dir.join(&pair.b.image_path))?;
                    let result = morph_pair(
                        &img_a,
                        geom_a,
                        &img_b,
                        geom_b,
                        alpha,
                        &stem_of(&pair.a.image_path),
                        &stem_of(&pair.b.image_path),
                    )?;
                    save_pgm(&out, &result.morph)
                };
                run().map_err(|e| stage_err("morph", &name, e))?;
            }
            Ok(name)
        })
        .collect()
}

/// Loads `<stem>.irc` for every stem; a missing file is an error.
pub fn load_codes(codes_dir: &Path, stems: &[String]) -> Result<BTreeMap<String, IrisCode>> {
    let loaded: Vec<(String, IrisCode)> = stems
        .par_iter()
        .map(|stem| {
            let code = load_code(codes_dir.join(format!("{stem}.irc")))
                .map_err(|e| stage_err("compare", stem, e))?;
            Ok((stem.clone(), code))
        })
        .collect::<Result<_>>()?;
    Ok(loaded.into_iter().collect())
}

/// Loads codes that exist and silently skips stems without a code file
/// (morphs dropped earlier by segmentation).
pub fn load_codes_present(codes_dir: &Path, stems: &[String]) -> Result<BTreeMap<String, IrisCode>> {
    let present: Vec<String> = stems
        .iter()
        .filter(|stem| codes_dir.join(format!("{stem}.irc")).exists())
        .cloned()
        .collect();
    load_codes(codes_dir, &present)
}

/// All same-side comparisons across the manifest: same-subject pairs are
/// mated, distinct-subject pairs nonmated. Pairs are enumerated over
/// path-sorted entries, each unordered pair once.
pub fn recognition_scores(
    manifest: &DatasetManifest,
    codes: &BTreeMap<String, IrisCode>,
    max_shift: usize,
) -> Result<Vec<ScoreRow>> {
    let mut entries: Vec<&ManifestEntry> = manifest.entries().iter().collect();
    entries.sort_by(|x, y| x.image_path.cmp(&y.image_path));
    let mut jobs = Vec::new();
    for i in 0..entries.len() {
        for j in i + 1..entries.len() {
            if entries[i].eye_side != entries[j].eye_side {
                continue;
            }
            let label = if entries[i].subject_id == entries[j].subject_id {
                ScoreLabel::Mated
            } else {
                ScoreLabel::Nonmated
            };
            jobs.push((i, j, label));
        }
    }
    jobs.par_iter()
        .map(|&(i, j, label)| {
            let (sa, sb) = (stem_of(&entries[i].image_path), stem_of(&entries[j].image_path));
            let code = |s: &str| {
                codes.get(s).ok_or_else(|| Error::format("code set", format!("missing code for {s}")))
            };
            let cmp = hamming(code(&sa)?, code(&sb)?, max_shift)
                .map_err(|e| stage_err("compare", &format!("{sa} x {sb}"), e))?;
            Ok(ScoreRow { id_a: sa, id_b: sb, label, score: cmp.hd, shift: cmp.best_shift })
        })
        .collect()
}

/// Probe stems for one morph parent: other captures of the same subject
/// and side, never the capture that built the morph, path-sorted, capped.
pub fn probe_stems(manifest: &DatasetManifest, parent: &ManifestEntry, probe_cap: usize) -> Vec<String> {
    let mut stems: Vec<String> = manifest
        .entries()
        .iter()
        .filter(|p| {
            p.subject_id == parent.subject_id
                && p.eye_side == parent.eye_side
                && p.image_path != parent.image_path
        })
        .map(|p| stem_of(&p.image_path))
        .collect();
    stems.sort();
    stems.truncate(probe_cap);
    stems
}

/// Compares every surviving morph against its parents' probe captures.
/// Morphs without a code (segmentation casualties) contribute no rows.
pub fn morph_attack_scores(
    morphs: &[(MorphPair, String)],
    manifest: &DatasetManifest,
    bona_codes: &BTreeMap<String, IrisCode>,
    morph_codes: &BTreeMap<String, IrisCode>,
    probe_cap: usize,
    max_shift: usize,
) -> Result<Vec<ScoreRow>> {
    let nested: Vec<Vec<ScoreRow>> = morphs
        .par_iter()
        .map(|(pair, name)| -> Result<Vec<ScoreRow>> {
            let mstem = stem_of(name);
            let Some(mcode) = morph_codes.get(&mstem) else {
                return Ok(Vec::new());
            };
            let mut rows = Vec::new();
            for (parent, label) in [(&pair.a, ScoreLabel::MorphA), (&pair.b, ScoreLabel::MorphB)] {
                for ps in probe_stems(manifest, parent, probe_cap) {
                    let pc = bona_codes.get(&ps).ok_or_else(|| {
                        Error::format("code set", format!("missing probe code for {ps}"))
                    })?;
                    let cmp = hamming(mcode, pc, max_shift)
                        .map_err(|e| stage_err("compare", &mstem, e))?;
                    rows.push(ScoreRow {
                        id_a: mstem.clone(),
                        id_b: ps,
                        label,
                        score: cmp.hd,
                        shift: cmp.best_shift,
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(nested.into_iter().flatten().collect())
}

/// Five-number summary of a score list; empty lists keep `n = 0` and null
/// statistics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreSummary {
    pub n: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

fn summarize(scores: &[f64]) -> ScoreSummary {
    if scores.is_empty() {
        return ScoreSummary { n: 0, mean: None, sd: None, min: None, max: None };
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ScoreSummary { n: scores.len(), mean: Some(mean), sd: Some(var.sqrt()), min: Some(min), max: Some(max) }
}

/// A threshold together with the criterion that produced it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThresholdAt {
    pub threshold: f64,
    pub criterion: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EerReport {
    pub value: f64,
    pub threshold: f64,
    pub criterion: String,
}

/// FNMR/FMR achieved at the loosest threshold whose FMR stays within the
/// target.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub fmr_target: f64,
    pub threshold: f64,
    pub criterion: String,
    pub fmr: f64,
    pub fnmr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecognitionReport {
    pub n_mated: usize,
    pub n_nonmated: usize,
    pub d_prime: f64,
    pub eer: EerReport,
    pub thresholds: Vec<OperatingPoint>,
    pub fnmr_at: BTreeMap<String, f64>,
    pub score_summary: BTreeMap<String, ScoreSummary>,
}

/// Rate under both morph-acceptance variants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RatePair {
    pub minmax: f64,
    pub prodavg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackReport {
    pub strategy: String,
    /// Pairs selected, including morphs later lost to segmentation.
    pub n_pairs: usize,
    /// Morphs that produced at least one probe comparison.
    pub n_morphs_scored: usize,
    pub segmentation_failures: usize,
    pub probe_cap: usize,
    /// Total probe comparisons across both parents.
    pub attempts: usize,
    pub delta: ThresholdAt,
    /// Fraction of all selected pairs whose morph matches both parents'
    /// best probes at delta (score <= delta); unsegmentable morphs count
    /// as failures.
    pub attack_success_rate: f64,
    pub mmpmr: Option<RatePair>,
    pub rmmr: Option<RatePair>,
    pub map: Vec<Vec<f64>>,
    pub score_summary: ScoreSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MadSection {
    pub extractor: String,
    pub train_morphs: String,
    pub test_morphs: String,
    pub threshold_criterion: String,
    pub report: mad::MadReport,
}

/// The end-of-run vulnerability report; serialized as `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VulnReport {
    pub tool: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config_sha256: Option<String>,
    pub recognition: RecognitionReport,
    pub attacks: Vec<AttackReport>,
    pub mad: Option<MadSection>,
}

/// Morph comparison rows plus the selection context the rows alone cannot
/// carry (pair and failure counts).
#[derive(Clone, Debug)]
pub struct AttackScores {
    pub name: String,
    pub n_pairs: usize,
    pub segmentation_failures: usize,
    pub probe_cap: usize,
    pub rows: Vec<ScoreRow>,
}

/// Decimal key for an FMR target: shortest fixed-point rendering (at
/// least two decimals) that round-trips, so 0.1 keys as "0.10" and 0.001
/// as "0.001".
fn fmr_key(target: f64) -> String {
    for prec in 2..=12 {
        let s = format!("{target:.prec$}");
        if s.parse::<f64>() == Ok(target) {
            return s;
        }
    }
    target.to_string()
}

fn best_of(scores: &[f64]) -> f64 {
    scores.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Assembles the vulnerability report and the recognition DET CSV from
/// comparison rows.
pub fn build_report(
    seed: Option<u64>,
    config_sha256: Option<String>,
    recognition_rows: &[ScoreRow],
    attacks: &[AttackScores],
    delta: f64,
    fmr_targets: &[f64],
    mad: Option<MadSection>,
) -> Result<(VulnReport, String)> {
    let mut mated = Vec::new();
    let mut nonmated = Vec::new();
    for row in recognition_rows {
        match row.label {
            ScoreLabel::Mated => mated.push(row.score),
            ScoreLabel::Nonmated => nonmated.push(row.score),
            _ => {
                return Err(Error::format(
                    "recognition scores",
                    format!("unexpected morph row {} x {}", row.id_a, row.id_b),
                ))
            }
        }
    }
    let set = ScoreSet::new(mated.clone(), nonmated.clone(), Polarity::Dissimilarity)?;
    let points = det_points(&set);
    let (eer_value, eer_threshold) = eer(&set);
    let mut thresholds = Vec::new();
    let mut fnmr_at = BTreeMap::new();
    for &target in fmr_targets {
        let key = fmr_key(target);
        let (fnmr, tau) = fnmr_at_fmr(&set, target)?;
        let (fmr, _) = rates_at(&set, tau);
        thresholds.push(OperatingPoint {
            fmr_target: target,
            threshold: tau,
            criterion: format!("loosest threshold with FMR <= {key}"),
            fmr,
            fnmr,
        });
        fnmr_at.insert(key, fnmr);
    }
    let recognition = RecognitionReport {
        n_mated: mated.len(),
        n_nonmated: nonmated.len(),
        d_prime: d_prime(&set)?,
        eer: EerReport {
            value: eer_value,
            threshold: eer_threshold,
            criterion: "threshold minimizing |FMR - FNMR| over the score sweep".into(),
        },
        thresholds,
        fnmr_at,
        score_summary: BTreeMap::from([
            ("mated".to_string(), summarize(&mated)),
            ("nonmated".to_string(), summarize(&nonmated)),
        ]),
    };
    let (_, fnmr_at_delta) = rates_at(&set, delta);

    let mut attack_reports = Vec::new();
    for att in attacks {
        let mut groups: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for row in &att.rows {
            let entry = groups.entry(row.id_a.clone()).or_default();
            match row.label {
                ScoreLabel::MorphA => entry.0.push(row.score),
                ScoreLabel::MorphB => entry.1.push(row.score),
                _ => {
                    return Err(Error::format(
                        "attack scores",
                        format!("section {}: unexpected label on {} x {}", att.name, row.id_a, row.id_b),
                    ))
                }
            }
        }
        // Metrics need attempts against both parents; one-sided groups
        // stay in the attempt count but cannot demonstrate a full match.
        let records: Vec<MorphAttackRecord> = groups
            .iter()
            .filter(|(_, (a, b))| !a.is_empty() && !b.is_empty())
            .map(|(id, (a, b))| MorphAttackRecord::single(id.clone(), a.clone(), b.clone()))
            .collect();
        let successes = records
            .iter()
            .filter(|r| {
                let s = &r.systems[0];
                best_of(&s.a).max(best_of(&s.b)) <= delta
            })
            .count();
        let n_pairs = att.n_pairs.max(groups.len());
        let (mmpmr_pair, rmmr_pair, map) = if records.is_empty() {
            (None, None, Vec::new())
        } else {
            let minmax = mmpmr(&records, delta, MmpmrVariant::MinMax, Polarity::Dissimilarity)?;
            let prodavg = mmpmr(&records, delta, MmpmrVariant::ProdAvg, Polarity::Dissimilarity)?;
            let map = map_matrix(&records, &[delta], att.probe_cap.max(1), Polarity::Dissimilarity)?;
            (
                Some(RatePair { minmax, prodavg }),
                Some(RatePair {
                    minmax: rmmr(minmax, fnmr_at_delta),
                    prodavg: rmmr(prodavg, fnmr_at_delta),
                }),
                map,
            )
        };
        let scores: Vec<f64> = att.rows.iter().map(|r| r.score).collect();
        attack_reports.push(AttackReport {
            strategy: att.name.clone(),
            n_pairs,
            n_morphs_scored: groups.len(),
            segmentation_failures: att.segmentation_failures,
            probe_cap: att.probe_cap,
            attempts: att.rows.len(),
            delta: ThresholdAt {
                threshold: delta,
                criterion: "configured attack decision threshold (attack.delta)".into(),
            },
            attack_success_rate: successes as f64 / n_pairs as f64,
            mmpmr: mmpmr_pair,
            rmmr: rmmr_pair,
            map,
            score_summary: summarize(&scores),
        });
    }

    let report = VulnReport {
        tool: "morphiris".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed,
        config_sha256,
        recognition,
        attacks: attack_reports,
        mad,
    };
    Ok((report, det_csv(&points)))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn report_json(report: &VulnReport) -> Result<String> {
    let mut json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::format("report", e.to_string()))?;
    json.push('\n');
    Ok(json)
}

/// Executes the full pipeline into `out_dir` and returns the report also
/// written to `report.json`. Every stage resumes from existing files; a
/// `config.sha256` mismatch aborts before touching anything.
pub fn cmd_run(cfg: &ExperimentConfig, out_dir: impl AsRef<Path>) -> Result<VulnReport> {
    cfg.validate()?;
    let out = out_dir.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let hash = cfg.sha256_hex();
    let hash_path = out.join("config.sha256");
    if hash_path.exists() {
        let prev = fs::read_to_string(&hash_path).map_err(|e| Error::io(&hash_path, e))?;
        if prev.trim() != hash {
            return Err(Error::Config(format!(
                "{} holds artefacts for config {} but this config hashes to {hash}; use a fresh directory",
                out.display(),
                prev.trim()
            )));
        }
    } else {
        write_text(&hash_path, &format!("{hash}\n"))?;
    }

    let images_dir = out.join("images");
    let manifest = generate_dataset(&cfg.dataset_params(), &images_dir)?;
    eprintln!("gen-synthetic: {} images", manifest.entries().len());

    let mut paths: Vec<String> = manifest.entries().iter().map(|e| e.image_path.clone()).collect();
    paths.sort();
    let geometry = stage_segment_to_csv(
        &images_dir,
        &paths,
        cfg.seg.pupil_thresh,
        cfg.seg.iris_thresh,
        false,
        &out.join("geometry.csv"),
    )?;
    eprintln!("segment: {} images", geometry.len());

    let sheets_dir = out.join("sheets");
    let stems = stage_normalize(
        &images_dir,
        &geometry,
        cfg.sheet.rows,
        cfg.sheet.cols,
        cfg.seg.pupil_thresh,
        cfg.seg.iris_thresh,
        &sheets_dir,
    )?;
    let codes_dir = out.join("codes");
    stage_encode(
        &sheets_dir,
        &stems,
        cfg.codec.wavelength,
        cfg.codec.sigma_ratio,
        cfg.codec.rows_used,
        &codes_dir,
    )?;
    eprintln!("normalize+encode: {} sheets", stems.len());

    let geom_map: BTreeMap<String, IrisGeometry> = geometry
        .iter()
        .filter_map(|r| r.geom.map(|g| (r.image_path.clone(), g)))
        .collect();

    struct StrategyArtifacts {
        strategy: Strategy,
        pairs: Vec<MorphPair>,
        morph_names: Vec<String>,
        segmentation_failures: usize,
        rows: Vec<ScoreRow>,
    }

    let bona_codes = load_codes(&codes_dir, &stems)?;
    let mut per_strategy: Vec<StrategyArtifacts> = Vec::new();
    for strategy in cfg.pairs.strategy.strategies() {
        let pairs = stage_select_pairs_to_csv(
            &manifest,
            strategy,
            cfg.pairs.count,
            cfg.seed,
            &out.join(format!("pairs_{strategy}.csv")),
        )?;
        let morphs_dir = out.join("morphs").join(strategy.to_string());
        let names = stage_morph(&images_dir, &geom_map, &pairs, cfg.morph.alpha, &morphs_dir)?;

        let morph_geometry = stage_segment_to_csv(
            &morphs_dir,
            &names,
            cfg.seg.pupil_thresh,
            cfg.seg.iris_thresh,
            true,
            &out.join(format!("morph_geometry_{strategy}.csv")),
        )?;
        let failures = morph_geometry.iter().filter(|r| r.geom.is_none()).count();

        let morph_sheets = out.join("morph_sheets").join(strategy.to_string());
        let morph_stems = stage_normalize(
            &morphs_dir,
            &morph_geometry,
            cfg.sheet.rows,
            cfg.sheet.cols,
            cfg.seg.pupil_thresh,
            cfg.seg.iris_thresh,
            &morph_sheets,
        )?;
        let morph_codes_dir = out.join("morph_codes").join(strategy.to_string());
        stage_encode(
            &morph_sheets,
            &morph_stems,
            cfg.codec.wavelength,
            cfg.codec.sigma_ratio,
            cfg.codec.rows_used,
            &morph_codes_dir,
        )?;

        let scores_path = out.join(format!("scores_morph_{strategy}.csv"));
        let rows = if scores_path.exists() {
            read_scores_csv(&scores_path)?
        } else {
            let morph_codes = load_codes_present(&morph_codes_dir, &morph_stems)?;
            let with_names: Vec<(MorphPair, String)> =
                pairs.iter().cloned().zip(names.iter().cloned()).collect();
            let rows = morph_attack_scores(
                &with_names,
                &manifest,
                &bona_codes,
                &morph_codes,
                cfg.attack.probe_cap,
                cfg.codec.max_shift,
            )?;
            write_scores_csv(&scores_path, &rows)?;
            rows
        };
        eprintln!(
            "morph [{strategy}]: {} pairs, {} segmentation failures, {} probe comparisons",
            pairs.len(),
            failures,
            rows.len()
        );
        per_strategy.push(StrategyArtifacts {
            strategy,
            pairs,
            morph_names: names,
            segmentation_failures: failures,
            rows,
        });
    }

    let recognition_path = out.join("scores_recognition.csv");
    let recognition_rows = if recognition_path.exists() {
        read_scores_csv(&recognition_path)?
    } else {
        let rows = recognition_scores(&manifest, &bona_codes, cfg.codec.max_shift)?;
        write_scores_csv(&recognition_path, &rows)?;
        rows
    };
    eprintln!("compare: {} recognition scores", recognition_rows.len());

    let mad_section = if cfg.mad.enabled {
        let morph_lists: Vec<(Strategy, Vec<String>)> = per_strategy
            .iter()
            .map(|s| (s.strategy, s.morph_names.clone()))
            .collect();
        Some(run_mad_stage(cfg, out, &manifest, &images_dir, &morph_lists)?)
    } else {
        None
    };

    let attacks: Vec<AttackScores> = per_strategy
        .iter()
        .map(|s| AttackScores {
            name: s.strategy.to_string(),
            n_pairs: s.pairs.len(),
            segmentation_failures: s.segmentation_failures,
            probe_cap: cfg.attack.probe_cap,
            rows: s.rows.clone(),
        })
        .collect();
    let (report, det) = build_report(
        Some(cfg.seed),
        Some(hash),
        &recognition_rows,
        &attacks,
        cfg.attack.delta,
        &cfg.report.fmr_targets,
        mad_section,
    )?;
    write_text(&out.join("det_recognition.csv"), &det)?;
    write_text(&out.join("report.json"), &report_json(&report)?)?;
    Ok(report)
}

/// Cross-type detector experiment: train on random-pair morphs, evaluate
/// on radius-pair morphs (with a subject-disjoint bona fide split).
/// Resumes from `mad_report.json` when present.
fn run_mad_stage(
    cfg: &ExperimentConfig,
    out: &Path,
    manifest: &DatasetManifest,
    images_dir: &Path,
    morph_lists: &[(Strategy, Vec<String>)],
) -> Result<MadSection> {
    let report_path = out.join("mad_report.json");
    let report = if report_path.exists() {
        let text = fs::read_to_string(&report_path).map_err(|e| Error::io(&report_path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format("mad report", e.to_string()))?
    } else {
        let load_morphs = |strategy: Strategy| -> Result<Vec<GrayImage>> {
            let (_, names) = morph_lists
                .iter()
                .find(|(s, _)| *s == strategy)
                .ok_or_else(|| Error::Config(format!("mad stage needs {strategy} morphs")))?;
            let dir = out.join("morphs").join(strategy.to_string());
            let mut names = names.clone();
            names.sort();
            names.iter().map(|n| load_pgm(dir.join(n))).collect()
        };
        let train = load_morphs(Strategy::Random)?;
        let test = load_morphs(Strategy::Radius)?;
        let mut entries: Vec<&ManifestEntry> = manifest.entries().iter().collect();
        entries.sort_by(|x, y| x.image_path.cmp(&y.image_path));
        let bonafide: Vec<(String, GrayImage)> = entries
            .iter()
            .map(|e| Ok((e.subject_id.clone(), load_pgm(images_dir.join(&e.image_path))?)))
            .collect::<Result<_>>()?;
        let (report, det) = mad::smad_experiment(&bonafide, &train, &test, cfg.mad.extractor, cfg.seed)?;
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::format("mad report", e.to_string()))?;
        write_text(&report_path, &format!("{json}\n"))?;
        write_text(&out.join("mad_det.csv"), &det)?;
        eprintln!("mad: EER {:.4} over {} test subjects", report.eer, report.test_subjects.len());
        report
    };
    Ok(MadSection {
        extractor: cfg.mad.extractor.to_string(),
        train_morphs: "random".into(),
        test_morphs: "radius".into(),
        threshold_criterion: "detector score at the MACER/BPCER equal error rate".into(),
        report,
    })
}

pub mod cli {
    //! Command-line front end. Flags mirror the stage functions and every
    //! subcommand exits 0 on success, 2 on bad input or configuration,
    //! and 1 on runtime failures.

    use super::*;
    use clap::{Args, Parser, Subcommand};

    #[derive(Parser)]
    #[command(
        name = "morphiris",
        version,
        about = "Synthetic iris morphing pipeline: dataset generation, recognition, \
                 morph attacks, vulnerability metrics, and morph detection"
    )]
    struct Cli {
        #[command(subcommand)]
        cmd: Cmd,
    }

    #[derive(Subcommand)]
    enum Cmd {
        /// Render a synthetic eye dataset and write its manifest
        GenSynthetic(GenArgs),
        /// Fit pupil/iris circles for a set of images
        Segment(SegmentArgs),
        /// Unwrap segmented images onto the polar grid
        Normalize(NormalizeArgs),
        /// Encode polar sheets into binary iris codes
        Encode(EncodeArgs),
        /// Choose distinct-subject pairs for morphing
        SelectPairs(SelectPairsArgs),
        /// Render morphs for a pair list
        Morph(MorphArgs),
        /// Compare codes: recognition scores, or morphs against probes
        Compare(CompareArgs),
        /// Build the vulnerability report from score files
        VulnReport(VulnReportArgs),
        /// Train the morph detector forest on labeled image directories
        MadTrain(MadTrainArgs),
        /// Evaluate a trained detector on labeled image directories
        MadEval(MadEvalArgs),
        /// Execute the full pipeline from a config file
        Run(RunArgs),
    }

    #[derive(Args)]
    struct GenArgs {
        /// Output directory for images and manifest.csv
        #[arg(long)]
        out: PathBuf,
        /// RNG seed; every image derives from it deterministically
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        subjects: usize,
        /// Captures per subject per eye side
        #[arg(long, default_value_t = 4)]
        images_per_subject: usize,
        #[arg(long, default_value_t = 320)]
        width: u32,
        #[arg(long, default_value_t = 240)]
        height: u32,
        #[arg(long, default_value_t = 20.0)]
        pupil_min: f64,
        #[arg(long, default_value_t = 36.0)]
        pupil_max: f64,
        #[arg(long, default_value_t = 58.0)]
        iris_min: f64,
        #[arg(long, default_value_t = 72.0)]
        iris_max: f64,
        /// Fraction of the iris hidden by eyelid occluders, 0 to 0.4
        #[arg(long, default_value_t = 0.0)]
        occlusion: f64,
        /// Uniform center jitter in pixels per capture
        #[arg(long, default_value_t = 5.0)]
        center_jitter: f64,
    }

    #[derive(Args)]
    struct SegmentArgs {
        /// Directory holding the images
        #[arg(long)]
        images: PathBuf,
        /// Manifest naming the images; defaults to every .pgm in --images
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output geometry CSV
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PUPIL_THRESH)]
        pupil_thresh: u8,
        #[arg(long, default_value_t = DEFAULT_IRIS_THRESH)]
        iris_thresh: u8,
        /// Record segmentation failures instead of aborting on the first
        #[arg(long)]
        lenient: bool,
    }

    #[derive(Args)]
    struct NormalizeArgs {
        #[arg(long)]
        images: PathBuf,
        /// Geometry CSV from the segment step
        #[arg(long)]
        geometry: PathBuf,
        /// Output directory for .rs.pgm/.rsmask.pgm sheets
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SHEET_ROWS)]
        rows: usize,
        #[arg(long, default_value_t = DEFAULT_SHEET_COLS)]
        cols: usize,
        #[arg(long, default_value_t = DEFAULT_PUPIL_THRESH)]
        pupil_thresh: u8,
        #[arg(long, default_value_t = DEFAULT_IRIS_THRESH)]
        iris_thresh: u8,
    }

    #[derive(Args)]
    struct EncodeArgs {
        /// Directory of .rs.pgm/.rsmask.pgm sheets
        #[arg(long)]
        sheets: PathBuf,
        /// Output directory for .irc code blobs
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_WAVELENGTH)]
        wavelength: f64,
        #[arg(long, default_value_t = DEFAULT_SIGMA_RATIO)]
        sigma_ratio: f64,
        /// Innermost sheet rows carried into the code
        #[arg(long, default_value_t = DEFAULT_ROWS_USED)]
        rows_used: usize,
    }

    #[derive(Args)]
    struct SelectPairsArgs {
        #[arg(long)]
        manifest: PathBuf,
        /// radius, random, or both
        #[arg(long, default_value = "both")]
        strategy: String,
        /// Pairs per strategy
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Seed for the random strategy's draws
        #[arg(long)]
        seed: u64,
        /// Output pairs CSV (strategy column distinguishes rows)
        #[arg(long)]
        out: PathBuf,
    }

    #[derive(Args)]
    struct MorphArgs {
        /// Directory holding the parent images
        #[arg(long)]
        images: PathBuf,
        /// Pair list CSV
        #[arg(long)]
        pairs: PathBuf,
        /// Manifest resolving pair paths; defaults to <images>/manifest.csv
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Geometry CSV for the parents; segments on the fly when absent
        #[arg(long)]
        geometry: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        /// Output directory, one PGM per pair
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PUPIL_THRESH)]
        pupil_thresh: u8,
        #[arg(long, default_value_t = DEFAULT_IRIS_THRESH)]
        iris_thresh: u8,
    }

    #[derive(Args)]
    struct CompareArgs {
        /// Directory of bona fide .irc codes
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Output scores CSV
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_SHIFT)]
        max_shift: usize,
        /// Directory of morph codes; switches to attack scoring
        #[arg(long)]
        morph_codes: Option<PathBuf>,
        /// Pair list the morphs were built from (attack scoring)
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// Alpha used when naming the morphs
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        /// Probe images per morph and subject
        #[arg(long, default_value_t = 5)]
        probe_cap: usize,
    }

    #[derive(Args)]
    struct VulnReportArgs {
        /// Recognition scores CSV (mated + nonmated rows; morph rows in
        /// the same file form an attack section named "all")
        #[arg(long)]
        scores: PathBuf,
        /// Extra attack sections as name=path, repeatable
        #[arg(long = "morph-scores")]
        morph_scores: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_ATTACK_DELTA)]
        delta: f64,
        #[arg(long, default_value_t = 5)]
        probe_cap: usize,
        /// Comma-separated FMR targets for operating points
        #[arg(long, default_value = "0.10,0.05,0.01,0.001")]
        fmr_targets: String,
        /// Seed recorded as provenance, if known
        #[arg(long)]
        seed: Option<u64>,
        /// Output report JSON
        #[arg(long)]
        out: PathBuf,
        /// Optional DET curve CSV
        #[arg(long)]
        det_out: Option<PathBuf>,
    }

    #[derive(Args)]
    struct MadTrainArgs {
        /// Directory of bona fide images
        #[arg(long)]
        bonafide: PathBuf,
        /// Directory of morph images
        #[arg(long)]
        morphs: PathBuf,
        /// gray or freq
        #[arg(long, default_value = "freq")]
        extractor: String,
        #[arg(long, default_value_t = mad::DEFAULT_TREES)]
        trees: usize,
        #[arg(long, default_value_t = mad::DEFAULT_MAX_DEPTH)]
        max_depth: usize,
        #[arg(long, default_value_t = mad::DEFAULT_MIN_LEAF)]
        min_leaf: usize,
        /// Features sampled per split; 0 picks sqrt(d)
        #[arg(long, default_value_t = 0)]
        mtry: usize,
        #[arg(long)]
        seed: u64,
        /// Output model blob
        #[arg(long)]
        out: PathBuf,
    }

    #[derive(Args)]
    struct MadEvalArgs {
        /// Trained model blob
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        bonafide: PathBuf,
        #[arg(long)]
        morphs: PathBuf,
        /// Must match the extractor the model was trained with
        #[arg(long, default_value = "freq")]
        extractor: String,
        /// Output report JSON
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        det_out: Option<PathBuf>,
    }

    #[derive(Args)]
    struct RunArgs {
        /// Experiment config file (flat key = value lines)
        #[arg(long)]
        config: PathBuf,
        /// Output directory for all artefacts
        #[arg(long)]
        out: PathBuf,
    }

    /// Entry point for the binary: parses arguments, honors
    /// `MORPHIRIS_THREADS`, and maps errors to exit codes.
    pub fn run() -> i32 {
        let cli = Cli::parse();
        if let Err(e) = init_threads() {
            eprintln!("error: {e}");
            return e.exit_code();
        }
        match dispatch(cli.cmd) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        }
    }

    fn init_threads() -> Result<()> {
        match std::env::var("MORPHIRIS_THREADS") {
            Err(std::env::VarError::NotPresent) => Ok(()),
            Err(e) => Err(Error::Config(format!("MORPHIRIS_THREADS: {e}"))),
            Ok(v) => {
                let n: usize = v.trim().parse().map_err(|_| {
                    Error::Config(format!("MORPHIRIS_THREADS must be a positive integer, got {v:?}"))
                })?;
                if n == 0 {
                    return Err(Error::Config("MORPHIRIS_THREADS must be >= 1".into()));
                }
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))
            }
        }
    }

    fn list_files_with_suffix(dir: &Path, suffix: &str) -> Result<Vec<String>> {
        let mut names = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.ends_with(suffix) {
                names.push(name);
            }
        }
        names.sort();
        Ok(names)
    }

    fn list_pgm_files(dir: &Path) -> Result<Vec<String>> {
        Ok(list_files_with_suffix(dir, ".pgm")?
            .into_iter()
            .filter(|n| !n.ends_with(".rs.pgm") && !n.ends_with(".rsmask.pgm"))
            .collect())
    }

    fn load_dir_images(dir: &Path) -> Result<Vec<GrayImage>> {
        let names = list_pgm_files(dir)?;
        if names.is_empty() {
            return Err(Error::Parameter(format!("{}: no .pgm images found", dir.display())));
        }
        names.par_iter().map(|n| load_pgm(dir.join(n))).collect()
    }

    fn geometry_map(records: &[GeometryRecord]) -> BTreeMap<String, IrisGeometry> {
        records.iter().filter_map(|r| r.geom.map(|g| (r.image_path.clone(), g))).collect()
    }

    fn dispatch(cmd: Cmd) -> Result<()> {
        match cmd {
            Cmd::GenSynthetic(a) => {
                let mut params =
                    DatasetParams::new(a.subjects, a.images_per_subject, (a.pupil_min, a.pupil_max), a.seed);
                params.image_size = (a.width, a.height);
                params.iris_radius_range = (a.iris_min, a.iris_max);
                params.occlusion_fraction = a.occlusion;
                params.center_jitter = a.center_jitter;
                let manifest = generate_dataset(&params, &a.out)?;
                println!("wrote {} images and manifest.csv to {}", manifest.entries().len(), a.out.display());
                Ok(())
            }
            Cmd::Segment(a) => {
                let paths: Vec<String> = match &a.manifest {
                    Some(m) => {
                        let manifest = read_manifest_csv(m)?;
                        let mut p: Vec<String> =
                            manifest.entries().iter().map(|e| e.image_path.clone()).collect();
                        p.sort();
                        p
                    }
                    None => list_pgm_files(&a.images)?,
                };
                let records = stage_segment(&a.images, &paths, a.pupil_thresh, a.iris_thresh, a.lenient)?;
                write_geometry_csv(&a.out, &records)?;
                let failures = records.iter().filter(|r| r.geom.is_none()).count();
                println!("segmented {} images ({failures} failures) -> {}", records.len(), a.out.display());
                Ok(())
            }
            Cmd::Normalize(a) => {
                let records = read_geometry_csv(&a.geometry)?;
                let stems = stage_normalize(
                    &a.images,
                    &records,
                    a.rows,
                    a.cols,
                    a.pupil_thresh,
                    a.iris_thresh,
                    &a.out,
                )?;
                println!("normalized {} images -> {}", stems.len(), a.out.display());
                Ok(())
            }
            Cmd::Encode(a) => {
                let stems: Vec<String> = list_files_with_suffix(&a.sheets, ".rs.pgm")?
                    .into_iter()
                    .map(|n| n[..n.len() - ".rs.pgm".len()].to_string())
                    .collect();
                if stems.is_empty() {
                    return Err(Error::Parameter(format!("{}: no .rs.pgm sheets found", a.sheets.display())));
                }
                stage_encode(&a.sheets, &stems, a.wavelength, a.sigma_ratio, a.rows_used, &a.out)?;
                println!("encoded {} codes -> {}", stems.len(), a.out.display());
                Ok(())
            }
            Cmd::SelectPairs(a) => {
                let manifest = read_manifest_csv(&a.manifest)?;
                let choice: StrategyChoice = a.strategy.parse()?;
                let mut pairs = Vec::new();
                for strategy in choice.strategies() {
                    pairs.extend(stage_select_pairs(&manifest, strategy, a.count, a.seed)?);
                }
                write_pairs_csv(&a.out, &pairs)?;
                println!("selected {} pairs -> {}", pairs.len(), a.out.display());
                Ok(())
            }
            Cmd::Morph(a) => {
                let manifest_path = a.manifest.clone().unwrap_or_else(|| a.images.join("manifest.csv"));
                let manifest = read_manifest_csv(&manifest_path)?;
                let pairs = read_pairs_csv(&a.pairs, &manifest)?;
                let geoms = match &a.geometry {
                    Some(g) => geometry_map(&read_geometry_csv(g)?),
                    None => {
                        let mut parents: Vec<String> = pairs
                            .iter()
                            .flat_map(|p| [p.a.image_path.clone(), p.b.image_path.clone()])
                            .collect();
                        parents.sort();
                        parents.dedup();
                        geometry_map(&stage_segment(
                            &a.images,
                            &parents,
                            a.pupil_thresh,
                            a.iris_thresh,
                            false,
                        )?)
                    }
                };
                let names = stage_morph(&a.images, &geoms, &pairs, a.alpha, &a.out)?;
                println!("wrote {} morphs to {}", names.len(), a.out.display());
                Ok(())
            }
            Cmd::Compare(a) => {
                let manifest = read_manifest_csv(&a.manifest)?;
                let mut stems: Vec<String> =
                    manifest.entries().iter().map(|e| stem_of(&e.image_path)).collect();
                stems.sort();
                let bona_codes = load_codes(&a.codes, &stems)?;
                let rows = match (&a.morph_codes, &a.pairs) {
                    (None, None) => recognition_scores(&manifest, &bona_codes, a.max_shift)?,
                    (Some(mc), Some(p)) => {
                        let pairs = read_pairs_csv(p, &manifest)?;
                        let with_names: Vec<(MorphPair, String)> =
                            pairs.iter().map(|pr| (pr.clone(), morph_name(pr, a.alpha))).collect();
                        let morph_stems: Vec<String> =
                            with_names.iter().map(|(_, n)| stem_of(n)).collect();
                        let morph_codes = load_codes_present(mc, &morph_stems)?;
                        morph_attack_scores(
                            &with_names,
                            &manifest,
                            &bona_codes,
                            &morph_codes,
                            a.probe_cap,
                            a.max_shift,
                        )?
                    }
                    _ => {
                        return Err(Error::Parameter(
                            "--morph-codes and --pairs must be given together".into(),
                        ))
                    }
                };
                write_scores_csv(&a.out, &rows)?;
                println!("wrote {} scores -> {}", rows.len(), a.out.display());
                Ok(())
            }
            Cmd::VulnReport(a) => {
                let all = read_scores_csv(&a.scores)?;
                let (recognition, stray): (Vec<ScoreRow>, Vec<ScoreRow>) = all
                    .into_iter()
                    .partition(|r| matches!(r.label, ScoreLabel::Mated | ScoreLabel::Nonmated));
                let mut attacks = Vec::new();
                if !stray.is_empty() && a.morph_scores.is_empty() {
                    let morphs = stray.iter().map(|r| r.id_a.clone()).collect::<std::collections::BTreeSet<_>>();
                    attacks.push(AttackScores {
                        name: "all".into(),
                        n_pairs: morphs.len(),
                        segmentation_failures: 0,
                        probe_cap: a.probe_cap,
                        rows: stray,
                    });
                }
                for spec in &a.morph_scores {
                    let Some((name, path)) = spec.split_once('=') else {
                        return Err(Error::Parameter(format!(
                            "--morph-scores expects name=path, got {spec:?}"
                        )));
                    };
                    let rows = read_scores_csv(Path::new(path))?;
                    let morphs = rows.iter().map(|r| r.id_a.clone()).collect::<std::collections::BTreeSet<_>>();
                    attacks.push(AttackScores {
                        name: name.to_string(),
                        n_pairs: morphs.len(),
                        segmentation_failures: 0,
                        probe_cap: a.probe_cap,
                        rows,
                    });
                }
                let targets: Vec<f64> = a
                    .fmr_targets
                    .split(',')
                    .map(|s| {
                        s.trim().parse().map_err(|e| {
                            Error::Parameter(format!("--fmr-targets entry {s:?}: {e}"))
                        })
                    })
                    .collect::<Result<_>>()?;
                let (report, det) =
                    build_report(a.seed, None, &recognition, &attacks, a.delta, &targets, None)?;
                write_text(&a.out, &report_json(&report)?)?;
                if let Some(d) = &a.det_out {
                    write_text(d, &det)?;
                }
                println!(
                    "wrote {} (d' {:.3}, EER {:.4})",
                    a.out.display(),
                    report.recognition.d_prime,
                    report.recognition.eer.value
                );
                Ok(())
            }
            Cmd::MadTrain(a) => {
                let extractor: Extractor = a.extractor.parse()?;
                let bona = load_dir_images(&a.bonafide)?;
                let morphs = load_dir_images(&a.morphs)?;
                let features: Vec<mad::FeatureVector> = bona
                    .par_iter()
                    .chain(morphs.par_iter())
                    .map(|img| extractor.extract(img))
                    .collect();
                let labels: Vec<mad::MadLabel> = std::iter::repeat_n(mad::MadLabel::Bonafide, bona.len())
                    .chain(std::iter::repeat_n(mad::MadLabel::Morph, morphs.len()))
                    .collect();
                let mtry = if a.mtry == 0 { mad::default_mtry(features[0].len()) } else { a.mtry };
                let model =
                    mad::rf_train(&features, &labels, a.trees, a.max_depth, a.min_leaf, mtry, a.seed)?;
                model.save(&a.out)?;
                println!(
                    "trained {} trees on {} samples -> {}",
                    a.trees,
                    features.len(),
                    a.out.display()
                );
                Ok(())
            }
            Cmd::MadEval(a) => {
                let extractor: Extractor = a.extractor.parse()?;
                let model = mad::ForestModel::load(&a.model)?;
                let score_dir = |dir: &Path| -> Result<Vec<f64>> {
                    let images = load_dir_images(dir)?;
                    let features: Vec<mad::FeatureVector> =
                        images.par_iter().map(|img| extractor.extract(img)).collect();
                    features.iter().map(|f| mad::rf_predict(&model, f)).collect()
                };
                let bona_scores = score_dir(&a.bonafide)?;
                let morph_scores = score_dir(&a.morphs)?;
                let (report, det) =
                    mad::report_from_scores(&morph_scores, &bona_scores, Vec::new(), Vec::new())?;
                let json = serde_json::to_string_pretty(&report)
                    .map_err(|e| Error::format("mad report", e.to_string()))?;
                write_text(&a.out, &format!("{json}\n"))?;
                if let Some(d) = &a.det_out {
                    write_text(d, &det)?;
                }
                println!(
                    "evaluated {} morphs / {} bona fide: EER {:.4}, MACER {:.4}, BPCER {:.4}",
                    morph_scores.len(),
                    bona_scores.len(),
                    report.eer,
                    report.macer,
                    report.bpcer
                );
                Ok(())
            }
            Cmd::Run(a) => {
                let cfg = ExperimentConfig::load(&a.config)?;
                let report = cmd_run(&cfg, &a.out)?;
                println!(
                    "report: {} (d' {:.3}, EER {:.4}, {} attack sections)",
                    a.out.join("report.json").display(),
                    report.recognition.d_prime,
                    report.recognition.eer.value,
                    report.attacks.len()
                );
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_fill_unset_keys() {
        let cfg = ExperimentConfig::parse("seed = 7\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.synth.subjects, 10);
        assert_eq!(cfg.sheet.rows, 64);
        assert_eq!(cfg.sheet.cols, 512);
        assert_eq!(cfg.codec.max_shift, 8);
        assert_eq!(cfg.pairs.strategy, StrategyChoice::Both);
        assert_eq!(cfg.attack.probe_cap, 5);
        assert_eq!(cfg.attack.delta, 0.32);
        assert!(!cfg.mad.enabled);
        assert_eq!(cfg, ExperimentConfig::default_with_seed(7));
    }

    #[test]
    fn config_parses_overrides_comments_and_blanks() {
        let text = "# experiment\nseed = 3\n\nsynth.subjects = 12\npairs.strategy = radius\nreport.fmr_targets = 0.2, 0.02\nmad.extractor = gray\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.synth.subjects, 12);
        assert_eq!(cfg.pairs.strategy, StrategyChoice::Radius);
        assert_eq!(cfg.report.fmr_targets, vec![0.2, 0.02]);
        assert_eq!(cfg.mad.extractor, Extractor::Gray);
    }

    #[test]
    fn config_rejects_malformed_input() {
        for (text, needle) in [
            ("synth.subjects = 5\n", "seed"),
            ("seed = 1\nseed = 2\n", "duplicate"),
            ("seed = 1\nsynth.subject = 5\n", "unknown key"),
            ("seed = 1\nnonsense line\n", "key = value"),
            ("seed = 1\nsynth.subjects = many\n", "synth.subjects"),
            ("seed = 1\nmorph.alpha = 1.5\n", "morph.alpha"),
            ("seed = 1\ncompare.comparator = cosine\n", "comparator"),
            ("seed = 1\nmad.enabled = true\npairs.strategy = radius\n", "mad.enabled"),
            ("seed = 1\nsynth.images_per_subject = 1\n", "images_per_subject"),
        ] {
            let err = ExperimentConfig::parse(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}");
            assert!(err.to_string().contains(needle), "{text} -> {err}");
        }
    }

    #[test]
    fn canonical_form_is_stable_and_hash_tracks_content() {
        let a = ExperimentConfig::parse("seed = 7\n").unwrap();
        let b = ExperimentConfig::parse("# comment\n\nseed    =   7\n").unwrap();
        assert_eq!(a.canonical(), b.canonical());
        assert_eq!(a.sha256_hex(), b.sha256_hex());
        assert_eq!(a.sha256_hex().len(), 64);
        let c = ExperimentConfig::parse("seed = 8\n").unwrap();
        assert_ne!(a.sha256_hex(), c.sha256_hex());
        // The canonical text re-parses to the same config.
        let reparsed = ExperimentConfig::parse(&a.canonical()).unwrap();
        assert_eq!(reparsed, a);
    }

    #[test]
    fn geometry_csv_round_trips_including_failures() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("geometry.csv");
        let records = vec![
            GeometryRecord {
                image_path: "a.pgm".into(),
                geom: Some(
                    IrisGeometry::new(
                        EllipseParams::circle(160.25, 120.5, 28.0).unwrap(),
                        EllipseParams::circle(159.75, 119.5, 64.0).unwrap(),
                    )
                    .unwrap(),
                ),
            },
            GeometryRecord { image_path: "b.pgm".into(), geom: None },
        ];
        write_geometry_csv(&path, &records).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "image_path,status,pupil_cx,pupil_cy,pupil_radius,iris_cx,iris_cy,iris_radius\n"
        ));
        assert!(text.contains("b.pgm,failed,,,,,,"));
        let back = read_geometry_csv(&path).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn scores_csv_round_trips_all_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let rows = vec![
            ScoreRow { id_a: "x".into(), id_b: "y".into(), label: ScoreLabel::Mated, score: 0.25, shift: -3 },
            ScoreRow { id_a: "x".into(), id_b: "z".into(), label: ScoreLabel::Nonmated, score: 0.47, shift: 0 },
            ScoreRow { id_a: "m".into(), id_b: "x".into(), label: ScoreLabel::MorphA, score: 0.3, shift: 2 },
            ScoreRow { id_a: "m".into(), id_b: "z".into(), label: ScoreLabel::MorphB, score: 0.31, shift: 8 },
        ];
        write_scores_csv(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("idA,idB,label,score,shift\n"));
        assert!(text.contains("morphA") && text.contains("morphB"));
        assert_eq!(read_scores_csv(&path).unwrap(), rows);
    }

    #[test]
    fn fmr_keys_render_round_trip_decimals() {
        assert_eq!(fmr_key(0.1), "0.10");
        assert_eq!(fmr_key(0.05), "0.05");
        assert_eq!(fmr_key(0.01), "0.01");
        assert_eq!(fmr_key(0.001), "0.001");
        assert_eq!(fmr_key(0.25), "0.25");
    }

    fn manifest_entry(subject: &str, side: crate::pairsel::EyeSide, path: &str) -> ManifestEntry {
        ManifestEntry {
            subject_id: subject.into(),
            eye_side: side,
            image_path: path.into(),
            pupil_radius: 25.0,
            iris_radius: 60.0,
        }
    }

    #[test]
    fn probe_stems_exclude_parent_and_honor_cap() {
        use crate::pairsel::EyeSide;
        let mut entries = Vec::new();
        for i in 0..7 {
            entries.push(manifest_entry("S000", EyeSide::L, &format!("S000_L_{i:02}.pgm")));
        }
        entries.push(manifest_entry("S000", EyeSide::R, "S000_R_00.pgm"));
        entries.push(manifest_entry("S001", EyeSide::L, "S001_L_00.pgm"));
        let manifest = DatasetManifest::new(entries).unwrap();
        let parent = manifest.by_path("S000_L_03.pgm").unwrap();
        let probes = probe_stems(&manifest, parent, 5);
        // Six same-side captures remain; the cap trims them to five.
        assert_eq!(probes.len(), 5);
        assert!(!probes.contains(&"S000_L_03".to_string()));
        assert!(probes.iter().all(|p| p.starts_with("S000_L_")));
        assert_eq!(probes, {
            let mut v = probes.clone();
            v.sort();
            v
        });
        assert_eq!(probe_stems(&manifest, parent, 99).len(), 6);
    }

    #[test]
    fn morph_names_carry_parent_stems_and_alpha() {
        use crate::pairsel::EyeSide;
        let a = manifest_entry("S000", EyeSide::L, "S000_L_00.pgm");
        let b = manifest_entry("S001", EyeSide::L, "S001_L_02.pgm");
        let pair = MorphPair { a, b, strategy: Strategy::Radius };
        assert_eq!(morph_name(&pair, 0.5), "M_S000_L_00_S001_L_02_0.50.pgm");
        assert_eq!(morph_name(&pair, 0.25), "M_S000_L_00_S001_L_02_0.25.pgm");
    }

    #[test]
    fn report_computes_attack_rates_from_rows() {
        // Recognition scores: mated low, nonmated high.
        let mut rows = Vec::new();
        for (i, s) in [0.10, 0.12, 0.14, 0.16].iter().enumerate() {
            rows.push(ScoreRow {
                id_a: format!("m{i}"),
                id_b: format!("m{i}b"),
                label: ScoreLabel::Mated,
                score: *s,
                shift: 0,
            });
        }
        for (i, s) in [0.44, 0.46, 0.48, 0.50].iter().enumerate() {
            rows.push(ScoreRow {
                id_a: format!("n{i}"),
                id_b: format!("n{i}b"),
                label: ScoreLabel::Nonmated,
                score: *s,
                shift: 0,
            });
        }
        // Morph 1 fools both parents at 0.32 (best 0.20 / 0.25); morph 2
        // fails on parent A (best 0.35).
        let attack_rows = vec![
            ScoreRow { id_a: "M1".into(), id_b: "p1".into(), label: ScoreLabel::MorphA, score: 0.20, shift: 0 },
            ScoreRow { id_a: "M1".into(), id_b: "p2".into(), label: ScoreLabel::MorphA, score: 0.40, shift: 0 },
            ScoreRow { id_a: "M1".into(), id_b: "p3".into(), label: ScoreLabel::MorphB, score: 0.25, shift: 0 },
            ScoreRow { id_a: "M2".into(), id_b: "p4".into(), label: ScoreLabel::MorphA, score: 0.35, shift: 0 },
            ScoreRow { id_a: "M2".into(), id_b: "p5".into(), label: ScoreLabel::MorphB, score: 0.10, shift: 0 },
        ];
        let attacks = vec![AttackScores {
            name: "radius".into(),
            n_pairs: 3, // one selected pair never produced scores
            segmentation_failures: 1,
            probe_cap: 2,
            rows: attack_rows,
        }];
        let (report, det) =
            build_report(Some(9), Some("cafe".into()), &rows, &attacks, 0.32, &[0.1, 0.001], None).unwrap();

        assert_eq!(report.recognition.n_mated, 4);
        assert_eq!(report.recognition.n_nonmated, 4);
        assert!(report.recognition.d_prime > 2.0);
        assert_eq!(report.recognition.eer.value, 0.0);
        assert_eq!(report.recognition.fnmr_at.len(), 2);
        assert!(report.recognition.fnmr_at.contains_key("0.10"));
        assert!(report.recognition.fnmr_at.contains_key("0.001"));
        assert_eq!(report.recognition.fnmr_at["0.10"], 0.0);

        let att = &report.attacks[0];
        assert_eq!(att.n_pairs, 3);
        assert_eq!(att.n_morphs_scored, 2);
        assert_eq!(att.segmentation_failures, 1);
        assert_eq!(att.attempts, 5);
        // Only M1 fools both parents; the denominator keeps all 3 pairs.
        assert!((att.attack_success_rate - 1.0 / 3.0).abs() < 1e-12);
        let mm = att.mmpmr.unwrap();
        assert!((mm.minmax - 0.5).abs() < 1e-12);
        // ProdAvg: M1 = (1/2)*(1/1) = 0.5, M2 = 0*(1/1) = 0.
        assert!((mm.prodavg - 0.25).abs() < 1e-12);
        let rm = att.rmmr.unwrap();
        assert!((rm.minmax - 0.5).abs() < 1e-12, "FNMR at 0.32 is 0 for these scores");
        assert_eq!(att.map.len(), 2, "one row per attempt level up to the cap");
        assert_eq!(att.map[0], vec![0.5], "M1 grants min(1, 1) = 1 attempt");
        assert_eq!(att.map[1], vec![0.0], "no morph grants two attempts per subject");

        assert!(det.starts_with("threshold,fmr,fnmr\n"));
        let json = report_json(&report).unwrap();
        assert!(json.contains("\"d_prime\""));
        assert!(json.contains("\"0.10\""));
        assert!(json.contains("\"criterion\""));
        assert!(json.ends_with('\n'));
    }

    #[test]
    fn report_rejects_misplaced_labels() {
        let rows = vec![ScoreRow {
            id_a: "m".into(),
            id_b: "p".into(),
            label: ScoreLabel::MorphA,
            score: 0.2,
            shift: 0,
        }];
        let err = build_report(None, None, &rows, &[], 0.32, &[0.1], None).unwrap_err();
        assert!(err.to_string().contains("unexpected morph row"));
    }

    #[test]
    fn full_run_produces_report_and_resumes_identically() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let cfg = ExperimentConfig::parse(
            "seed = 11\nsynth.subjects = 3\nsynth.images_per_subject = 2\npairs.strategy = radius\npairs.count = 2\n",
        )
        .unwrap();
        let report = cmd_run(&cfg, &out).unwrap();
        assert_eq!(report.attacks.len(), 1);
        assert_eq!(report.attacks[0].strategy, "radius");
        assert_eq!(report.attacks[0].n_pairs, 2);
        assert_eq!(report.seed, Some(11));
        assert!(out.join("report.json").exists());
        assert!(out.join("det_recognition.csv").exists());
        assert!(out.join("scores_recognition.csv").exists());
        assert!(out.join("pairs_radius.csv").exists());
        assert!(out.join("geometry.csv").exists());
        assert!(out.join("config.sha256").exists());
        // 3 subjects x 2 sides x 2 captures.
        assert_eq!(report.recognition.n_mated, 6);
        let parsed: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
        assert!(parsed["recognition"]["d_prime"].is_number());
        assert_eq!(parsed["config_sha256"].as_str().unwrap(), cfg.sha256_hex());

        // A second run resumes from the artefacts and reproduces the
        // report byte for byte.
        let first = fs::read(out.join("report.json")).unwrap();
        cmd_run(&cfg, &out).unwrap();
        assert_eq!(fs::read(out.join("report.json")).unwrap(), first);

        // A different config must refuse to reuse the directory.
        let other = ExperimentConfig::parse("seed = 12\nsynth.subjects = 3\nsynth.images_per_subject = 2\npairs.strategy = radius\npairs.count = 2\n").unwrap();
        let err = cmd_run(&other, &out).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("fresh directory"));
    }
}
