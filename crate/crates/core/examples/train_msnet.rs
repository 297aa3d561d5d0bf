//! Train MSNet on a synthetic split and report held-out metrics.
//!
//!     cargo run --release --example train_msnet -- [images] [epochs] [seed]

use std::env;
use std::time::Instant;

use orbitfilter::dataset::generate_synthetic;
use orbitfilter::train::{evaluate, split_dataset, train_model};
use orbitfilter::{Arch, Rng, TrainConfig};

fn arg(i: usize, default: u64) -> u64 {
    env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> orbitfilter::Result<()> {
    let n = arg(1, 400) as usize;
    let epochs = arg(2, 5) as usize;
    let seed = arg(3, 7);

    let images = generate_synthetic(n, &Rng::new(seed, "dataset"))?;
    let (train, test) = split_dataset(images, 0.8, &mut Rng::new(seed, "split"))?;
    println!("{} train / {} test images", train.len(), test.len());

    let mut model = Arch::MsNet.build(seed)?;
    let config = TrainConfig { epochs, ..TrainConfig::default() };
    let started = Instant::now();
    for e in train_model(&mut model, &train, &config, seed)? {
        println!("epoch {:>2}  loss {:.4}  train acc {:.3}", e.epoch + 1, e.loss, e.train_accuracy);
    }
    println!("trained in {:.1}s", started.elapsed().as_secs_f64());

    let m = evaluate(&model, &test)?.metrics;
    println!(
        "held out: precision {:.4} recall {:.4} f1 {:.4} (tp {} fp {} fn {} tn {})",
        m.precision, m.recall, m.f1, m.tp, m.fp, m.fn_, m.tn
    );
    Ok(())
}
