//! Drives the full file-backed experiment from a config and reads the
//! resulting report. Rerunning reuses every artefact already on disk.

use morphiris::harness::{cmd_run, ExperimentConfig};
use morphiris::Result;

fn main() -> Result<()> {
    let cfg = ExperimentConfig::parse(
        "seed = 42\n\
         synth.subjects = 5\n\
         synth.images_per_subject = 3\n\
         pairs.strategy = both\n\
         pairs.count = 4\n",
    )?;
    let out = std::env::temp_dir().join("morphiris_batch_experiment");
    let report = cmd_run(&cfg, &out)?;

    println!("\nartefacts in {}", out.display());
    println!("config hash {}", report.config_sha256.as_deref().unwrap_or("-"));
    println!(
        "recognition: d' {:.3}, EER {:.4}, {} mated / {} nonmated scores",
        report.recognition.d_prime,
        report.recognition.eer.value,
        report.recognition.n_mated,
        report.recognition.n_nonmated
    );
    for att in &report.attacks {
        println!(
            "attack [{}]: success rate {:.3} over {} pairs ({} attempts), MMPMR minmax {}",
            att.strategy,
            att.attack_success_rate,
            att.n_pairs,
            att.attempts,
            att.mmpmr.map_or("n/a".into(), |m| format!("{:.3}", m.minmax)),
        );
    }
    Ok(())
}
