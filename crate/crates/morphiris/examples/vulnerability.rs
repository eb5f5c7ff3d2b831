//! Computes the vulnerability metrics from a batch of comparison scores:
//! separability (d', EER), the morph acceptance rates (MMPMR in both
//! variants, RMMR), and the multiple-attempt MAP matrix.

use morphiris::metrics::{
    d_prime, eer, fnmr_at_fmr, map_matrix, mmpmr, rmmr, MmpmrVariant, MorphAttackRecord, Polarity,
    ScoreSet,
};
use morphiris::Result;

fn main() -> Result<()> {
    // Dissimilarity scores from a small verification experiment: genuine
    // attempts cluster low, impostor attempts near 0.47.
    let mated = vec![0.18, 0.21, 0.24, 0.22, 0.26, 0.19, 0.23, 0.25];
    let nonmated = vec![0.44, 0.47, 0.45, 0.49, 0.46, 0.48, 0.43, 0.50];
    let set = ScoreSet::new(mated, nonmated, Polarity::Dissimilarity)?;

    println!("recognition:");
    println!("  d' = {:.3}", d_prime(&set)?);
    let (eer_value, eer_tau) = eer(&set);
    println!("  EER = {:.4} at threshold {:.4}", eer_value, eer_tau);
    let (fnmr, tau) = fnmr_at_fmr(&set, 0.10)?;
    println!("  FNMR = {fnmr:.4} at the loosest threshold with FMR <= 0.10 ({tau:.4})");

    // Each morph was compared against probes of both its parents.
    let records = vec![
        MorphAttackRecord::single("M1", vec![0.24, 0.30], vec![0.28, 0.33]),
        MorphAttackRecord::single("M2", vec![0.29, 0.36], vec![0.26, 0.31]),
        MorphAttackRecord::single("M3", vec![0.41, 0.44], vec![0.27, 0.30]),
        MorphAttackRecord::single("M4", vec![0.33, 0.38], vec![0.40, 0.42]),
    ];
    let tau = 0.32;
    println!("\nmorph attack at threshold {tau}:");
    for variant in [MmpmrVariant::MinMax, MmpmrVariant::ProdAvg] {
        let m = mmpmr(&records, tau, variant, Polarity::Dissimilarity)?;
        let (_, fnmr_at_tau) = morphiris::metrics::rates_at(&set, tau);
        println!("  MMPMR[{variant:?}] = {m:.4}   RMMR = {:.4}", rmmr(m, fnmr_at_tau));
    }
    let map = map_matrix(&records, &[tau], 2, Polarity::Dissimilarity)?;
    println!("  MAP (rows: attempts per subject, cols: subjects matched):");
    for (i, row) in map.iter().enumerate() {
        println!("    {} attempt(s): {row:?}", i + 1);
    }
    Ok(())
}
