//! Segments a rendered eye and compares the fitted circles against the
//! geometry the renderer was told to draw.

use morphiris::imgcore::Point2D;
use morphiris::segmentation::{geometry_from_mask, segment_threshold};
use morphiris::synthgen::{render_eye, EyeRenderSpec};
use morphiris::Result;

fn main() -> Result<()> {
    let spec = EyeRenderSpec::new(77, 28.0, 64.0, Point2D::new(161.3, 119.4), (320, 240), 5, 0.0)?;
    let (img, truth) = render_eye(&spec)?;

    let mask = segment_threshold(&img, 40, 180)?;
    let fitted = geometry_from_mask(&mask)?;

    let report = |name: &str, t: (Point2D, f64), f: (Point2D, f64)| {
        println!(
            "{name}: center ({:7.3}, {:7.3}) -> ({:7.3}, {:7.3})  radius {:6.3} -> {:6.3}  [center off {:.4} px]",
            t.0.x,
            t.0.y,
            f.0.x,
            f.0.y,
            t.1,
            f.1,
            t.0.distance(f.0)
        );
    };
    report(
        "pupil",
        (truth.pupil.center(), truth.pupil.effective_radius()),
        (fitted.pupil.center(), fitted.pupil.effective_radius()),
    );
    report(
        "iris ",
        (truth.iris.center(), truth.iris.effective_radius()),
        (fitted.iris.center(), fitted.iris.effective_radius()),
    );
    Ok(())
}
