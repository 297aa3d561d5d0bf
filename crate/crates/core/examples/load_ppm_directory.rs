//! Load a class-per-folder directory of binary PPM images and print the
//! label balance. Without an argument a small demo tree is written first.
//!
//!     cargo run --example load_ppm_directory -- [root]

use std::path::PathBuf;

use orbitfilter::dataset::{default_binarization, encode_ppm, load_directory, RgbImage};
use orbitfilter::Label;

fn demo_tree() -> std::io::Result<PathBuf> {
    let root = std::env::temp_dir().join("orbitfilter-ppm-demo");
    for (class, shade) in [("forest", 60u8), ("parkinglot", 170u8)] {
        std::fs::create_dir_all(root.join(class))?;
        for i in 0..3u8 {
            let img = RgbImage { width: 96, height: 96, data: vec![shade + i * 10; 96 * 96 * 3] };
            std::fs::write(root.join(class).join(format!("{i}.ppm")), encode_ppm(&img))?;
        }
    }
    Ok(root)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = match std::env::args().nth(1) {
        Some(p) => PathBuf::from(p),
        None => demo_tree()?,
    };
    let images = load_directory(&root, &default_binarization())?;
    let artificial = images.iter().filter(|i| i.label == Label::Artificial).count();
    println!(
        "{}: {} images, {} artificial, {} natural",
        root.display(),
        images.len(),
        artificial,
        images.len() - artificial
    );
    if let Some(first) = images.first() {
        println!("first: class {} shape {:?}", first.origin, first.pixels.shape());
    }
    Ok(())
}
