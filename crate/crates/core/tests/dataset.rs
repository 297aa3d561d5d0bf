mod common;

use std::fs;
use std::path::Path;

use common::uniform;
use orbitfilter::dataset::{
    default_binarization, encode_ppm, generate_synthetic, load_directory, resize_bilinear, BinarizationMap, RgbImage,
    UCMERCED_CLASSES,
};
use orbitfilter::{Label, LabeledImage, Rng, Tensor};

#[test]
fn synthetic_balance_range_and_determinism() {
    let rng = Rng::new(12, "dataset");
    let a = generate_synthetic(10, &rng).unwrap();
    assert_eq!(a.iter().filter(|i| i.label == Label::Artificial).count(), 5);
    for img in &a {
        assert_eq!(img.pixels.shape(), &[3, 64, 64]);
        assert!(img.pixels.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
    let b = generate_synthetic(10, &rng).unwrap();
    assert_eq!(a, b);
    let c = generate_synthetic(10, &Rng::new(13, "dataset")).unwrap();
    assert_ne!(a[0].pixels, c[0].pixels);
    // A longer set extends a shorter one.
    assert_eq!(generate_synthetic(12, &rng).unwrap()[..10], a[..]);
    assert!(generate_synthetic(1, &rng).is_err());
}

/// Plain logistic regression on raw pixels, full-batch gradient descent.
fn logistic_probe(train: &[LabeledImage], test: &[LabeledImage]) -> (f64, f64) {
    let d = 3 * 64 * 64;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let lr = 0.01;
    let target = |img: &LabeledImage| if img.label == Label::Artificial { 1.0 } else { 0.0 };
    let score = |w: &[f64], b: f64, img: &LabeledImage| -> f64 {
        b + w.iter().zip(img.pixels.data()).map(|(a, x)| a * x).sum::<f64>()
    };
    for _ in 0..100 {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for img in train {
            let p = 1.0 / (1.0 + (-score(&w, b, img)).exp());
            let e = p - target(img);
            for (g, x) in gw.iter_mut().zip(img.pixels.data()) {
                *g += e * x;
            }
            gb += e;
        }
        let n = train.len() as f64;
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= lr * g / n;
        }
        b -= lr * gb / n;
    }
    let acc = |set: &[LabeledImage]| {
        set.iter().filter(|i| (score(&w, b, i) > 0.0) == (i.label == Label::Artificial)).count() as f64
            / set.len() as f64
    };
    (acc(train), acc(test))
}

#[test]
fn synthetic_is_linearly_learnable() {
    let train = generate_synthetic(2000, &Rng::new(0, "probe-train")).unwrap();
    let test = generate_synthetic(400, &Rng::new(0, "probe-test")).unwrap();
    let (train_acc, test_acc) = logistic_probe(&train, &test);
    assert!(train_acc >= 0.8, "train {train_acc}");
    assert!(test_acc >= 0.8, "held out {test_acc}");
    // Colour alone is not enough; the spatial layout carries the rest.
    assert!(test_acc < 0.95, "held out {test_acc}");
}

fn write_ppm(path: &Path, w: usize, h: usize, f: impl Fn(usize, usize, usize) -> u8) {
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data.push(f(x, y, c));
            }
        }
    }
    fs::write(path, encode_ppm(&RgbImage { width: w, height: h, data })).unwrap();
}

#[test]
fn directory_loader_labels_and_normalizes() {
    let root = tempfile::tempdir().unwrap();
    for class in ["forest", "storagetanks", "runway"] {
        fs::create_dir(root.path().join(class)).unwrap();
    }
    write_ppm(&root.path().join("forest/a.ppm"), 256, 256, |_, _, _| 128);
    write_ppm(&root.path().join("forest/b.ppm"), 40, 30, |x, y, c| ((x * 7 + y * 3 + c * 50) % 256) as u8);
    write_ppm(&root.path().join("storagetanks/x.ppm"), 64, 64, |x, _, _| if x < 32 { 0 } else { 255 });
    fs::write(root.path().join("storagetanks/readme.txt"), "ignored").unwrap();

    let images = load_directory(root.path(), &default_binarization()).unwrap();
    assert_eq!(images.len(), 3);
    assert_eq!(images[0].origin, "forest");
    assert_eq!(images[0].label, Label::Natural);
    assert_eq!(images[2].label, Label::Artificial);
    // 128/255 normalizes to just above zero.
    let gray = (128.0 / 255.0 - 0.5) / 0.5;
    assert!(images[0].pixels.data().iter().all(|v| (v - gray).abs() < 1e-12));
    for img in &images {
        assert_eq!(img.pixels.shape(), &[3, 64, 64]);
        assert!(img.pixels.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
    // A 64x64 source passes through the resize untouched.
    assert_eq!(images[2].pixels.data()[0], -1.0);
    assert_eq!(images[2].pixels.data()[63], 1.0);
}

#[test]
fn directory_loader_errors() {
    let root = tempfile::tempdir().unwrap();
    assert!(load_directory(root.path(), &default_binarization()).unwrap().is_empty());

    fs::create_dir(root.path().join("moonbase")).unwrap();
    let err = load_directory(root.path(), &default_binarization()).unwrap_err();
    assert!(err.to_string().contains("moonbase"), "{err}");
    fs::remove_dir(root.path().join("moonbase")).unwrap();

    fs::create_dir(root.path().join("beach")).unwrap();
    let bad = root.path().join("beach/broken.ppm");
    fs::write(&bad, b"P3\n2 2\n255\n").unwrap();
    let err = load_directory(root.path(), &default_binarization()).unwrap_err();
    assert!(err.to_string().contains("broken.ppm"), "{err}");

    let custom = BinarizationMap::new([("beach".to_owned(), Label::Artificial)]);
    fs::remove_file(&bad).unwrap();
    write_ppm(&root.path().join("beach/ok.ppm"), 8, 8, |_, _, _| 0);
    assert_eq!(load_directory(root.path(), &custom).unwrap()[0].label, Label::Artificial);
}

#[test]
fn default_map_covers_all_classes_once() {
    let m = default_binarization();
    assert_eq!(m.len(), 21);
    for class in UCMERCED_CLASSES {
        assert!(m.label_of(class).is_some(), "{class}");
    }
    let natural: Vec<&str> = m.iter().filter(|(_, l)| *l == Label::Natural).map(|(c, _)| c).collect();
    assert_eq!(natural, ["agricultural", "beach", "chaparral", "forest", "golfcourse", "river"]);
}

#[test]
fn resize_properties() {
    let mut rng = Rng::new(21, "resize");
    let img = uniform(&[3, 64, 64], 0.0, 1.0, &mut rng);
    assert_eq!(resize_bilinear(&img, 64, 64).unwrap(), img);

    for (h, w) in [(1, 1), (7, 13), (256, 256), (50, 90)] {
        let c = Tensor::from_vec(&[3, h, w], vec![0.37; 3 * h * w]).unwrap();
        let r = resize_bilinear(&c, 64, 64).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.37), "{h}x{w}");

        let x = uniform(&[3, h, w], 0.0, 1.0, &mut rng);
        let (a, b) = (2.5, -0.75);
        let lhs = resize_bilinear(&x.map(|v| a * v + b), 64, 64).unwrap();
        let rhs = resize_bilinear(&x, 64, 64).unwrap().map(|v| a * v + b);
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            assert!((l - r).abs() < 1e-12);
        }
    }

    let checker = Tensor::from_vec(&[1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    assert_eq!(resize_bilinear(&checker, 1, 1).unwrap().data(), &[0.5]);
}
