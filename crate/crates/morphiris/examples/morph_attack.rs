//! Builds one landmark-guided morph and plays it against both parent
//! identities' disjoint probe captures.
//!
//! The attack succeeds when the morph's best probe distance stays at or
//! below the decision threshold for *both* parents, meaning one enrolled
//! image verifies as two people.

use morphiris::codec::{attack_success, encode, hamming, IrisCode};
use morphiris::imgcore::{GrayImage, Point2D};
use morphiris::morphgen::morph_pair;
use morphiris::normalization::unwrap;
use morphiris::segmentation::{geometry_from_mask, segment_threshold, IrisGeometry};
use morphiris::synthgen::{render_eye, EyeRenderSpec};
use morphiris::Result;

fn capture(identity_seed: u64, pupil: f64, noise_seed: u64) -> Result<(GrayImage, IrisGeometry)> {
    let spec =
        EyeRenderSpec::new(identity_seed, pupil, 62.0, Point2D::new(160.0, 120.0), (320, 240), noise_seed, 0.0)?;
    render_eye(&spec)
}

fn code_of(img: &GrayImage) -> Result<IrisCode> {
    let mask = segment_threshold(img, 40, 180)?;
    let geom = geometry_from_mask(&mask)?;
    let sheet = unwrap(img, &geom, 64, 512, Some(&mask))?;
    encode(&sheet, 24.0, 0.5, 16)
}

fn main() -> Result<()> {
    // Enrollment-quality captures for two identities plus one disjoint
    // probe capture each (different pupil size and sensor noise).
    let (img_a, geom_a) = capture(500, 27.0, 1)?;
    let (img_b, geom_b) = capture(600, 28.0, 1)?;
    let probe_a = code_of(&capture(500, 30.0, 9)?.0)?;
    let probe_b = code_of(&capture(600, 25.0, 9)?.0)?;

    let result = morph_pair(&img_a, &geom_a, &img_b, &geom_b, 0.5, "A", "B")?;
    let morph_code = code_of(&result.morph)?;

    let vs_a = hamming(&morph_code, &probe_a, 8)?;
    let vs_b = hamming(&morph_code, &probe_b, 8)?;
    let delta = 0.32;
    println!("morph of {} and {} at alpha {:.2}", result.parent_a, result.parent_b, result.alpha);
    println!("  vs probe of A: HD {:.4}", vs_a.hd);
    println!("  vs probe of B: HD {:.4}", vs_b.hd);
    println!(
        "  attack at delta {delta}: {}",
        if attack_success(&morph_code, &probe_a, &probe_b, delta)? {
            "SUCCESS (matches both)"
        } else {
            "failed"
        }
    );

    // Baseline: the raw parent image only matches itself.
    let code_a = code_of(&img_a)?;
    println!("  baseline, parent A vs probe of B: HD {:.4}", hamming(&code_a, &probe_b, 8)?.hd);
    Ok(())
}
