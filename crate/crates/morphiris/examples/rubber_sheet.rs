//! Unwraps an eye onto the fixed polar grid and saves the sheet pair.
//!
//! Each sheet row follows one radial ring from the pupil boundary (row 0)
//! to the iris boundary (last row); columns sweep the angle. An occluder
//! over the iris shows up as invalid sheet pixels, not as texture.

use morphiris::imgcore::Point2D;
use morphiris::normalization::{save_rubber_sheet, unwrap};
use morphiris::segmentation::segment_threshold;
use morphiris::synthgen::{render_eye, EyeRenderSpec};
use morphiris::Result;

fn main() -> Result<()> {
    let spec = EyeRenderSpec::new(19, 26.0, 62.0, Point2D::new(160.0, 120.0), (320, 240), 3, 0.25)?;
    let (img, geom) = render_eye(&spec)?;

    let mask = segment_threshold(&img, 40, 180)?;
    let sheet = unwrap(&img, &geom, 64, 512, Some(&mask))?;
    println!(
        "unwrapped {}x{} eye to a {}x{} sheet, {:.1}% of samples valid",
        img.width(),
        img.height(),
        sheet.rows(),
        sheet.cols(),
        100.0 * sheet.valid_fraction()
    );

    // Column-wise validity shows where the occluder cuts the annulus.
    let occluded_cols = (0..sheet.cols())
        .filter(|&j| (0..sheet.rows()).any(|i| !sheet.valid_at(i, j)))
        .count();
    println!("{occluded_cols} of {} angular positions touch the occluder", sheet.cols());

    let stem = std::env::temp_dir().join("morphiris_rubber_sheet");
    save_rubber_sheet(&stem, &sheet)?;
    println!("saved {}.rs.pgm and {}.rsmask.pgm", stem.display(), stem.display());
    Ok(())
}
