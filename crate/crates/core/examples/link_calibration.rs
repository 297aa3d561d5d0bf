//! Fit the affine downlink model to measured (count, seconds) pairs and
//! compare predictions with the measurements.

use orbitfilter::linksim::{calibrate, residual, transmit};

fn main() -> orbitfilter::Result<()> {
    let measured = [(420, 3.96), (276, 2.66), (282, 2.65), (279, 2.65), (272, 2.61)];

    let two_point = calibrate(&measured[..1].iter().chain(&measured[4..]).copied().collect::<Vec<_>>())?;
    let all = calibrate(&measured)?;
    for (label, p) in [("two-point", two_point), ("least squares", all)] {
        println!(
            "{label}: a = {:.6} s, b = {:.7} s/image, SSR {:.2e}",
            p.base_latency_s,
            p.per_image_s,
            residual(&p, &measured)
        );
        for (n, t) in measured {
            let sim = transmit(n, &p).total_s();
            println!("  {n:>4} images  measured {t:.2}  simulated {sim:.4}  ({:+.2}%)", (sim - t) / t * 100.0);
        }
    }

    // Jitter spreads the per-image gaps but keeps completions ordered.
    let jittered = two_point.with_jitter(0.002, 11)?;
    let r = transmit(420, &jittered);
    println!("with 2 ms jitter: 420 images in {:.4} s", r.total_s());
    Ok(())
}
