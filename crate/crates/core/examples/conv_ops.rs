//! Dense, depthwise and grouped convolutions plus a channel shuffle on a
//! small tensor, showing how the grouped variants cut the weight count.

use orbitfilter::ops::{channel_shuffle, conv2d, ConvSpec};
use orbitfilter::{Rng, Tensor};

fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

fn main() -> orbitfilter::Result<()> {
    let mut rng = Rng::new(1, "conv-demo");
    let x = random(&[1, 8, 6, 6], &mut rng);

    let specs = [
        ("dense 3x3", ConvSpec::new(8, 8, 3).padding(1)),
        ("depthwise 3x3", ConvSpec::depthwise(8, 3)),
        ("grouped 1x1, g=4", ConvSpec::pointwise(8, 8).groups(4)),
        ("strided dense", ConvSpec::new(8, 16, 3).padding(1).stride(2)),
    ];
    for (name, spec) in specs {
        let w = random(&spec.weight_shape(), &mut rng);
        let y = conv2d(&x, &w, None, &spec)?;
        println!("{name:<18} weights {:>4}  output {:?}", w.len(), y.shape());
    }

    // Plane i of the input ends up where the shuffle sends it.
    let planes = Tensor::from_vec(&[1, 6, 1, 1], (0..6).map(f64::from).collect())?;
    let shuffled = channel_shuffle(&planes, 2)?;
    println!("shuffle(g=2) of [0..6]: {:?}", shuffled.data());
    Ok(())
}
