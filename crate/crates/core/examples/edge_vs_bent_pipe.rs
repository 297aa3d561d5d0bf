//! Compare a bent-pipe downlink with on-board filtering for a range of
//! filter quality, using a scripted classifier instead of a trained network.

use orbitfilter::dataset::generate_synthetic;
use orbitfilter::pipeline::{compare, default_mac_rate, run_bent_pipe, run_edge_filter};
use orbitfilter::report::render_table;
use orbitfilter::{EdgeClassifier, Label, LabeledImage, LinkParams, Rng};

/// Flags every natural image with probability `miss` as artificial.
struct Noisy {
    miss: f64,
    seed: u64,
}

impl EdgeClassifier for Noisy {
    fn name(&self) -> &str {
        "msnet"
    }

    fn macs_per_image(&self) -> orbitfilter::Result<u64> {
        Ok(3_428_608)
    }

    fn classify(&self, images: &[LabeledImage]) -> orbitfilter::Result<Vec<Label>> {
        let mut rng = Rng::new(self.seed, "noisy");
        Ok(images
            .iter()
            .map(|i| match i.label {
                Label::Natural if rng.next_f64() < self.miss => Label::Artificial,
                l => l,
            })
            .collect())
    }
}

fn main() -> orbitfilter::Result<()> {
    let images = generate_synthetic(420, &Rng::new(0, "dataset"))?;
    let link = LinkParams::new(0.1289, 0.0091216)?;
    let rate = default_mac_rate()?;

    for miss in [0.0, 0.5, 1.0] {
        let edge = run_edge_filter(&images, &Noisy { miss, seed: 3 }, &link, rate)?;
        let table = compare(vec![run_bent_pipe(&images, &link)?, edge])?;
        println!("natural images let through: {:.0}%", miss * 100.0);
        println!("{}", render_table(&table));
    }
    Ok(())
}
