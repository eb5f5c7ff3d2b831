//! Iris-code extraction and shift-compensated Hamming comparison.
//!
//! Selected rubber-sheet rows are filtered with a 1-D log-Gabor along the
//! periodic angular axis; each cell quantizes to two phase bits (signs of
//! the real and imaginary response) plus one validity bit. Comparison
//! XORs the planes under the joint mask over a range of circular column
//! shifts and keeps the minimum distance, which absorbs small rotations
//! between captures.

use std::path::Path;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::normalization::RubberSheet;

pub const DEFAULT_WAVELENGTH: f64 = 24.0;
pub const DEFAULT_SIGMA_RATIO: f64 = 0.5;
pub const DEFAULT_ROWS_USED: usize = 16;
pub const DEFAULT_MAX_SHIFT: usize = 8;
/// Decision criterion for a successful morph attack attempt.
pub const DEFAULT_ATTACK_DELTA: f64 = 0.32;

/// A row is treated as constant (and fully masked) below this AC RMS.
const DEGENERATE_RMS: f64 = 1e-9;
/// Mask bits clear where |response| < RESPONSE_EPS_RATIO × row AC RMS.
const RESPONSE_EPS_RATIO: f64 = 1e-3;

const MAGIC: &[u8; 4] = b"IRC1";

/// Packed two-bit phase code with a per-cell validity mask.
///
/// Bit `c` of row `r` lives in word `c / 64`, position `c % 64`, of that
/// row's slice; storage bits at columns ≥ `cols` are always zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IrisCode {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    re: Vec<u64>,
    im: Vec<u64>,
    mask: Vec<u64>,
}

/// Result of a shift-compensated comparison.
///
/// `best_shift` is the column offset applied to the second code (positive
/// values slide it toward lower indices); `valid_bits` counts the bits
/// actually compared at that shift (two per jointly valid cell).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComparisonScore {
    pub hd: f64,
    pub best_shift: i64,
    pub valid_bits: u64,
}

fn mask_lo(n: usize) -> u64 {
    if n >= 64 {
        !0
    } else {
        (1u64 << n) - 1
    }
}

impl IrisCode {
    /// Builds a code from a per-cell closure returning
    /// `(re_bit, im_bit, mask_bit)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> (bool, bool, bool)) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Encode(format!("code dimensions {rows}x{cols} must be nonzero")));
        }
        let wpr = cols.div_ceil(64);
        let mut code = IrisCode {
            rows,
            cols,
            words_per_row: wpr,
            re: vec![0; rows * wpr],
            im: vec![0; rows * wpr],
            mask: vec![0; rows * wpr],
        };
        for r in 0..rows {
            for c in 0..cols {
                let (re, im, mask) = f(r, c);
                let (w, bit) = (r * wpr + c / 64, 1u64 << (c % 64));
                if re {
                    code.re[w] |= bit;
                }
                if im {
                    code.im[w] |= bit;
                }
                if mask {
                    code.mask[w] |= bit;
                }
            }
        }
        Ok(code)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    fn plane_row<'a>(&self, plane: &'a [u64], row: usize) -> &'a [u64] {
        &plane[row * self.words_per_row..(row + 1) * self.words_per_row]
    }

    fn bit(&self, plane: &[u64], row: usize, col: usize) -> bool {
        debug_assert!(row < self.rows && col < self.cols);
        plane[row * self.words_per_row + col / 64] >> (col % 64) & 1 == 1
    }

    pub fn re_bit(&self, row: usize, col: usize) -> bool {
        self.bit(&self.re, row, col)
    }

    pub fn im_bit(&self, row: usize, col: usize) -> bool {
        self.bit(&self.im, row, col)
    }

    pub fn mask_bit(&self, row: usize, col: usize) -> bool {
        self.bit(&self.mask, row, col)
    }

    /// Fraction of cells with the validity bit set.
    pub fn mask_fraction(&self) -> f64 {
        let set: u64 = self.mask.iter().map(|w| u64::from(w.count_ones())).sum();
        set as f64 / (self.rows * self.cols) as f64
    }

    /// Serializes as magic, little-endian u32 dims, then the re, im and
    /// mask planes as little-endian u64 words.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 24 * self.re.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        for plane in [&self.re, &self.im, &self.mask] {
            for word in plane.iter() {
                out.extend_from_slice(&word.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |reason: String| Error::format("iris code blob", reason);
        if bytes.len() < 12 {
            return Err(fail(format!("{} bytes is too short for the header", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(fail(format!("bad magic {:?}, expected {MAGIC:?}", &bytes[..4])));
        }
        let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if rows == 0 || cols == 0 || rows.saturating_mul(cols) > (1 << 30) {
            return Err(fail(format!("implausible dimensions {rows}x{cols}")));
        }
        let wpr = cols.div_ceil(64);
        let plane_bytes = rows * wpr * 8;
        if bytes.len() != 12 + 3 * plane_bytes {
            return Err(fail(format!("expected {} bytes, got {}", 12 + 3 * plane_bytes, bytes.len())));
        }
        let read_plane = |offset: usize| -> Vec<u64> {
            bytes[offset..offset + plane_bytes]
                .chunks_exact(8)
                .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                .collect()
        };
        let code = IrisCode {
            rows,
            cols,
            words_per_row: wpr,
            re: read_plane(12),
            im: read_plane(12 + plane_bytes),
            mask: read_plane(12 + 2 * plane_bytes),
        };
        // Enforce the zero-tail invariant the comparison loop relies on.
        if !cols.is_multiple_of(64) {
            let tail = !mask_lo(cols % 64);
            for plane in [&code.re, &code.im, &code.mask] {
                for r in 0..rows {
                    if code.plane_row(plane, r)[wpr - 1] & tail != 0 {
                        return Err(fail(format!("nonzero storage bits beyond column {cols} in row {r}")));
                    }
                }
            }
        }
        Ok(code)
    }
}

pub fn save_code(path: impl AsRef<Path>, code: &IrisCode) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, code.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_code(path: impl AsRef<Path>) -> Result<IrisCode> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    IrisCode::from_bytes(&bytes).map_err(|e| Error::format("iris code file", format!("{}: {e}", path.display())))
}

/// Log-Gabor magnitude at frequency `f` (cycles per sample).
fn log_gabor(f: f64, f0: f64, sigma_ratio: f64) -> f64 {
    let num = (f / f0).ln().powi(2);
    let den = 2.0 * sigma_ratio.ln().powi(2);
    (-num / den).exp()
}

/// Encodes `rows_used` evenly spaced sheet rows into an iris code.
///
/// Each selected row is mean-subtracted, filtered with the analytic
/// log-Gabor along the periodic angular axis, and quantized to the signs
/// of the complex response. Cells with negligible response magnitude, or
/// whose source sheet cell was invalid, have their mask bit cleared;
/// rows with no angular variation mask out entirely.
pub fn encode(sheet: &RubberSheet, wavelength: f64, sigma_ratio: f64, rows_used: usize) -> Result<IrisCode> {
    if !(wavelength >= 4.0 && wavelength.is_finite()) {
        return Err(Error::Encode(format!("wavelength {wavelength} must be at least 4 samples")));
    }
    if !(sigma_ratio > 0.0 && sigma_ratio < 1.0) {
        return Err(Error::Encode(format!("sigma ratio {sigma_ratio} must lie strictly inside (0, 1)")));
    }
    if rows_used == 0 || rows_used > sheet.rows() {
        return Err(Error::Encode(format!(
            "rows_used {rows_used} must lie in 1..={} (sheet rows)",
            sheet.rows()
        )));
    }
    let cols = sheet.cols();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(cols);
    let ifft = planner.plan_fft_inverse(cols);
    // Analytic-signal filter: zero DC and negative frequencies, double the
    // positive band (Nyquist kept single when cols is even).
    let f0 = 1.0 / wavelength;
    let gains: Vec<f64> = (0..cols)
        .map(|k| {
            if k == 0 || k > cols / 2 {
                0.0
            } else {
                let factor = if cols.is_multiple_of(2) && k == cols / 2 { 1.0 } else { 2.0 };
                factor * log_gabor(k as f64 / cols as f64, f0, sigma_ratio)
            }
        })
        .collect();

    let mut any_valid = false;
    let mut code = IrisCode::from_fn(rows_used, cols, |_, _| (false, false, false))?;
    let wpr = code.words_per_row;
    for (out_row, slot) in (0..rows_used).enumerate() {
        let src_row = (2 * slot + 1) * sheet.rows() / (2 * rows_used);
        let signal = sheet.row(src_row);
        let valid = sheet.valid_row(src_row);
        let mean = signal.iter().sum::<f64>() / cols as f64;
        let mut buf: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v - mean, 0.0)).collect();
        let rms = (buf.iter().map(|c| c.re * c.re).sum::<f64>() / cols as f64).sqrt();
        if rms < DEGENERATE_RMS {
            continue;
        }
        fft.process(&mut buf);
        for (c, g) in buf.iter_mut().zip(&gains) {
            *c *= g;
        }
        ifft.process(&mut buf);
        let eps = RESPONSE_EPS_RATIO * rms;
        for (c, resp) in buf.iter().enumerate() {
            let resp = resp / cols as f64;
            let live = valid[c] && resp.norm() >= eps;
            let (w, bit) = (out_row * wpr + c / 64, 1u64 << (c % 64));
            if resp.re >= 0.0 {
                code.re[w] |= bit;
            }
            if resp.im >= 0.0 {
                code.im[w] |= bit;
            }
            if live {
                code.mask[w] |= bit;
                any_valid = true;
            }
        }
    }
    if !any_valid {
        return Err(Error::Encode("every cell masked out; sheet carries no usable texture".into()));
    }
    Ok(code)
}

/// Reads 64 row bits starting at circular column `64·w + shift`.
///
/// Relies on storage bits beyond `cols` being zero; positions past the
/// row end in the returned word are garbage-free for the same reason and
/// are neutralized by the joint mask in the caller.
fn shifted_word(words: &[u64], cols: usize, w: usize, shift: usize) -> u64 {
    debug_assert!(shift < cols);
    if cols < 64 {
        let mut v = 0u64;
        for t in 0..cols.min(64 - w * 64) {
            let src = (64 * w + t + shift) % cols;
            v |= (words[src / 64] >> (src % 64) & 1) << t;
        }
        return v;
    }
    let start = (64 * w + shift) % cols;
    let (q, r) = (start / 64, start % 64);
    let mut v = words[q] >> r;
    if r > 0 && q + 1 < words.len() {
        v |= words[q + 1] << (64 - r);
    }
    let linear = cols - start;
    if linear < 64 {
        v = (v & mask_lo(linear)) | ((words[0] & mask_lo(64 - linear)) << linear);
    }
    v
}

/// Shift-compensated fractional Hamming distance.
///
/// Tries circular shifts 0, +1, −1, …, ±max_shift of the second code and
/// returns the smallest distance; among equal distances the smallest
/// |shift| wins, positive before negative.
pub fn hamming(a: &IrisCode, b: &IrisCode, max_shift: usize) -> Result<ComparisonScore> {
    if (a.rows, a.cols) != (b.rows, b.cols) {
        return Err(Error::Comparison(format!(
            "code dimensions {}x{} vs {}x{} differ",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let cols = a.cols;
    let wpr = a.words_per_row;
    let mut best: Option<ComparisonScore> = None;
    let mut try_shift = |s: i64| {
        let sh = (s.rem_euclid(cols as i64)) as usize;
        let (mut diff, mut joint_cells) = (0u64, 0u64);
        for row in 0..a.rows {
            let (are, aim, amask) = (a.plane_row(&a.re, row), a.plane_row(&a.im, row), a.plane_row(&a.mask, row));
            let (bre, bim, bmask) = (b.plane_row(&b.re, row), b.plane_row(&b.im, row), b.plane_row(&b.mask, row));
            for w in 0..wpr {
                let joint = amask[w] & shifted_word(bmask, cols, w, sh);
                if joint == 0 {
                    continue;
                }
                joint_cells += u64::from(joint.count_ones());
                diff += u64::from(((are[w] ^ shifted_word(bre, cols, w, sh)) & joint).count_ones());
                diff += u64::from(((aim[w] ^ shifted_word(bim, cols, w, sh)) & joint).count_ones());
            }
        }
        if joint_cells > 0 {
            let hd = diff as f64 / (2 * joint_cells) as f64;
            if best.is_none_or(|c| hd < c.hd) {
                best = Some(ComparisonScore { hd, best_shift: s, valid_bits: 2 * joint_cells });
            }
        }
    };
    try_shift(0);
    for s in 1..=max_shift as i64 {
        try_shift(s);
        try_shift(-s);
    }
    best.ok_or_else(|| Error::Comparison("no jointly valid bits at any shift".into()))
}

/// The morph attack criterion: both parents must match the morph at or
/// below `delta` (shift search uses the default range).
pub fn attack_success(code_m: &IrisCode, code_a: &IrisCode, code_b: &IrisCode, delta: f64) -> Result<bool> {
    let ha = hamming(code_m, code_a, DEFAULT_MAX_SHIFT)?;
    let hb = hamming(code_m, code_b, DEFAULT_MAX_SHIFT)?;
    Ok(ha.hd.max(hb.hd) <= delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{label, stream_rng};
    use rand::Rng;

    fn random_code(rows: usize, cols: usize, seed: u64) -> IrisCode {
        let mut rng = stream_rng(seed, &[label("test-code")]);
        IrisCode::from_fn(rows, cols, |_, _| (rng.gen(), rng.gen(), true)).unwrap()
    }

    fn sheet_from_rows(rows: Vec<Vec<f64>>) -> RubberSheet {
        let (r, c) = (rows.len(), rows[0].len());
        let intensity: Vec<f64> = rows.into_iter().flatten().collect();
        RubberSheet::new(r, c, intensity, vec![true; r * c]).unwrap()
    }

    #[test]
    fn self_comparison_is_zero_at_shift_zero() {
        let code = random_code(16, 512, 1);
        let score = hamming(&code, &code, 8).unwrap();
        assert_eq!(score.hd, 0.0);
        assert_eq!(score.best_shift, 0);
        assert_eq!(score.valid_bits, 2 * 16 * 512);
    }

    #[test]
    fn complement_is_one_without_shifts() {
        let code = random_code(8, 512, 2);
        let comp = IrisCode::from_fn(8, 512, |r, c| (!code.re_bit(r, c), !code.im_bit(r, c), true)).unwrap();
        let score = hamming(&code, &comp, 0).unwrap();
        assert_eq!(score.hd, 1.0);
        let shifted = hamming(&code, &comp, 8).unwrap();
        assert!(shifted.hd <= 1.0);
    }

    #[test]
    fn rotation_is_recovered_by_shift_search() {
        for cols in [512usize, 500, 60] {
            let code = random_code(4, cols, 3);
            let k = 5;
            let rot = IrisCode::from_fn(4, cols, |r, c| {
                let src = (c + k) % cols;
                (code.re_bit(r, src), code.im_bit(r, src), true)
            })
            .unwrap();
            let score = hamming(&code, &rot, 8).unwrap();
            assert_eq!(score.hd, 0.0, "cols {cols}");
            assert_eq!(score.best_shift.unsigned_abs() as usize, k, "cols {cols}");
        }
    }

    #[test]
    fn symmetry_mirrors_the_shift() {
        let a = random_code(8, 512, 4);
        let mut rng = stream_rng(9, &[2]);
        let b = IrisCode::from_fn(8, 512, |r, c| {
            let src = (c + 3) % 512;
            let flip: bool = rng.gen_bool(0.1);
            (a.re_bit(r, src) ^ flip, a.im_bit(r, src), true)
        })
        .unwrap();
        let ab = hamming(&a, &b, 8).unwrap();
        let ba = hamming(&b, &a, 8).unwrap();
        assert!((ab.hd - ba.hd).abs() < 1e-12);
        assert_eq!(ab.best_shift, -ba.best_shift);
    }

    #[test]
    fn constant_sheet_masks_out_and_comparison_errors() {
        let sheet = RubberSheet::new(16, 128, vec![120.0; 16 * 128], vec![true; 16 * 128]).unwrap();
        assert!(matches!(encode(&sheet, 24.0, 0.5, 8), Err(Error::Encode(_))));
        let live = random_code(8, 128, 5);
        let dead = IrisCode::from_fn(8, 128, |_, _| (false, false, false)).unwrap();
        assert!(matches!(hamming(&live, &dead, 8), Err(Error::Comparison(_))));
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn encoding_is_deterministic_and_marks_invalid_sources() {
        let mut rng = stream_rng(6, &[0]);
        let intensity: Vec<f64> = (0..32 * 256).map(|_| rng.gen_range(0.0..255.0)).collect();
        let mut valid = vec![true; 32 * 256];
        for j in 40..80 {
            valid[j] = false; // row 0 of the sheet, sampled by slot 0
        }
        let sheet = RubberSheet::new(32, 256, intensity, valid).unwrap();
        let a = encode(&sheet, 16.0, 0.5, 16).unwrap();
        let b = encode(&sheet, 16.0, 0.5, 16).unwrap();
        assert_eq!(a, b);
        // Slot 0 reads sheet row (2*0+1)*32/(2*16) = 1, so poke row 1 instead.
        let mut valid2 = vec![true; 32 * 256];
        for j in 40..80 {
            valid2[256 + j] = false;
        }
        let sheet2 = RubberSheet::new(32, 256, sheet.row(0).iter().cloned().chain(sheet.row(1).iter().cloned()).chain((2..32).flat_map(|r| sheet.row(r).to_vec())).collect(), valid2).unwrap();
        let c = encode(&sheet2, 16.0, 0.5, 16).unwrap();
        for j in 40..80 {
            assert!(!c.mask_bit(0, j), "column {j} should be masked");
        }
        assert!(c.mask_bit(0, 100));
    }

    #[test]
    fn sinusoid_matches_direct_convolution_oracle() {
        let cols = 512usize;
        let wavelength = 32.0;
        let f0 = 1.0 / wavelength;
        // Impulse response by direct inverse DFT of the analytic filter.
        let h: Vec<(f64, f64)> = (0..cols)
            .map(|n| {
                let mut acc = (0.0f64, 0.0f64);
                for k in 1..=cols / 2 {
                    let factor = if k == cols / 2 { 1.0 } else { 2.0 };
                    let g = factor * log_gabor(k as f64 / cols as f64, f0, 0.5);
                    let phase = std::f64::consts::TAU * (k * n) as f64 / cols as f64;
                    acc.0 += g * phase.cos();
                    acc.1 += g * phase.sin();
                }
                (acc.0 / cols as f64, acc.1 / cols as f64)
            })
            .collect();
        for phase_idx in 0..8 {
            let phase = std::f64::consts::TAU * phase_idx as f64 / 8.0;
            let row: Vec<f64> =
                (0..cols).map(|j| 128.0 + 50.0 * (std::f64::consts::TAU * j as f64 / wavelength + phase).sin()).collect();
            let mean = row.iter().sum::<f64>() / cols as f64;
            let rms = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64).sqrt();
            let eps = RESPONSE_EPS_RATIO * rms;
            let sheet = sheet_from_rows(vec![row.clone(), row.clone()]);
            let code = encode(&sheet, wavelength, 0.5, 1).unwrap();
            // Direct circular convolution: response[j] = Σ_n x[(j−n) mod C]·h[n].
            let mut changes = Vec::new();
            let mut prev_sign: Option<bool> = None;
            for j in 0..cols {
                let mut acc = (0.0f64, 0.0f64);
                for (n, hv) in h.iter().enumerate() {
                    let x = row[(j + cols - n) % cols] - mean;
                    acc.0 += x * hv.0;
                    acc.1 += x * hv.1;
                }
                if code.mask_bit(0, j) {
                    assert!((acc.0 * acc.0 + acc.1 * acc.1).sqrt() >= eps * 0.5, "oracle magnitude too small at {j}");
                    // Skip components at zero crossings, where quantization
                    // is legitimately roundoff-sensitive.
                    if acc.0.abs() > 1e-9 {
                        assert_eq!(code.re_bit(0, j), acc.0 >= 0.0, "re bit at column {j}, phase {phase_idx}");
                    }
                    if acc.1.abs() > 1e-9 {
                        assert_eq!(code.im_bit(0, j), acc.1 >= 0.0, "im bit at column {j}, phase {phase_idx}");
                    }
                }
                let sign = acc.0 >= 0.0;
                if prev_sign.is_some_and(|p| p != sign) {
                    changes.push(j);
                }
                prev_sign = Some(sign);
            }
            // Real-part sign alternates every half wavelength.
            let gaps: Vec<usize> = changes.windows(2).map(|w| w[1] - w[0]).collect();
            assert!(gaps.iter().all(|&g| (15..=17).contains(&g)), "gaps {gaps:?} at phase {phase_idx}");
        }
    }

    #[test]
    fn random_codes_score_near_half() {
        let mut mean0 = 0.0;
        let mut mean_min = 0.0;
        let n = 1000;
        for t in 0..n {
            let a = random_code(16, 512, 10_000 + t);
            let b = random_code(16, 512, 20_000 + t);
            mean0 += hamming(&a, &b, 0).unwrap().hd / n as f64;
            mean_min += hamming(&a, &b, 8).unwrap().hd / n as f64;
        }
        assert!((mean0 - 0.5).abs() <= 0.02, "shift-0 mean {mean0}");
        // Min over 17 shifts of ~N(0.5, 0.0055²): expected ≈ 0.490.
        assert!(mean_min < mean0, "min {mean_min} vs shift-0 {mean0}");
        assert!((0.485..=0.495).contains(&mean_min), "min-over-shifts mean {mean_min}");
    }

    #[test]
    fn blob_round_trip_and_rejection() {
        for cols in [512usize, 100] {
            let code = random_code(16, cols, 7);
            let bytes = code.to_bytes();
            assert_eq!(IrisCode::from_bytes(&bytes).unwrap(), code);
            let mut bad_magic = bytes.clone();
            bad_magic[0] = b'X';
            assert!(IrisCode::from_bytes(&bad_magic).is_err());
            assert!(IrisCode::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        }
        // Nonzero tail bits past the column count are rejected.
        let code = random_code(2, 100, 8);
        let mut bytes = code.to_bytes();
        let last = bytes.len() - 1;
        bytes[last] = 0x80;
        assert!(IrisCode::from_bytes(&bytes).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("code.irc");
        save_code(&path, &code).unwrap();
        assert_eq!(load_code(&path).unwrap(), code);
    }

    #[test]
    fn attack_criterion_takes_the_worse_parent() {
        let a = random_code(16, 512, 30);
        assert!(attack_success(&a, &a, &a, 0.0).unwrap());
        let b = random_code(16, 512, 31);
        let comp = IrisCode::from_fn(16, 512, |r, c| (!a.re_bit(r, c), !a.im_bit(r, c), true)).unwrap();
        // comp matches a at HD ≈ 1 even after shifts, so the max rule fails it.
        assert!(!attack_success(&comp, &a, &b, DEFAULT_ATTACK_DELTA).unwrap());
        let ha = hamming(&a, &b, DEFAULT_MAX_SHIFT).unwrap().hd;
        assert_eq!(attack_success(&a, &a, &b, 0.4).unwrap(), ha <= 0.4);
    }

    #[test]
    fn parameter_validation_rejects_bad_inputs() {
        let sheet = sheet_from_rows(vec![vec![1.0; 64]; 8]);
        assert!(encode(&sheet, 3.0, 0.5, 4).is_err());
        assert!(encode(&sheet, 24.0, 1.0, 4).is_err());
        assert!(encode(&sheet, 24.0, 0.0, 4).is_err());
        assert!(encode(&sheet, 24.0, 0.5, 0).is_err());
        assert!(encode(&sheet, 24.0, 0.5, 9).is_err());
        let a = random_code(4, 128, 1);
        let b = random_code(4, 256, 1);
        assert!(hamming(&a, &b, 8).is_err());
    }

    #[test]
    fn synthetic_identities_separate() {
        use crate::imgcore::Point2D;
        use crate::metrics::{d_prime, Polarity, ScoreSet};
        use crate::normalization::unwrap;
        use crate::synthgen::{render_eye, EyeRenderSpec};

        // 10 identities, 4 captures each, varying pupil radius and noise.
        let mut codes: Vec<(usize, IrisCode)> = Vec::new();
        for subject in 0..10u64 {
            for capture in 0..4u64 {
                let mut rng = stream_rng(99, &[label("smoke"), subject, capture]);
                let pupil = rng.gen_range(20.0..30.0);
                let spec = EyeRenderSpec::new(
                    5000 + subject,
                    pupil,
                    55.0,
                    Point2D::new(100.0, 100.0),
                    (200, 200),
                    7000 + subject * 10 + capture,
                    0.0,
                )
                .unwrap();
                let (img, geom) = render_eye(&spec).unwrap();
                let sheet = unwrap(&img, &geom, 64, 512, None).unwrap();
                let code = encode(&sheet, DEFAULT_WAVELENGTH, DEFAULT_SIGMA_RATIO, DEFAULT_ROWS_USED).unwrap();
                codes.push((subject as usize, code));
            }
        }
        let mut mated = Vec::new();
        let mut nonmated = Vec::new();
        for i in 0..codes.len() {
            for j in i + 1..codes.len() {
                let hd = hamming(&codes[i].1, &codes[j].1, DEFAULT_MAX_SHIFT).unwrap().hd;
                if codes[i].0 == codes[j].0 {
                    mated.push(hd);
                } else {
                    nonmated.push(hd);
                }
            }
        }
        let mated_mean = mated.iter().sum::<f64>() / mated.len() as f64;
        let nonmated_mean = nonmated.iter().sum::<f64>() / nonmated.len() as f64;
        assert!(mated_mean < nonmated_mean, "mated {mated_mean} vs nonmated {nonmated_mean}");
        let set = ScoreSet::new(mated, nonmated, Polarity::Dissimilarity).unwrap();
        let sep = d_prime(&set).unwrap();
        assert!(sep >= 2.0, "d' {sep} (mated mean {mated_mean}, nonmated mean {nonmated_mean})");
    }
}
