mod common;

use common::uniform;
use orbitfilter::{Arch, Model, Rng, Tensor};

/// Layer table restated independently of the builders.
#[derive(Clone, Copy)]
enum Row {
    Conv { cin: usize, cout: usize, k: usize, stride: usize, groups: usize },
    Bn,
    Act,
    Pool,
    Shuffle,
    Recombine { groups: usize, out: usize },
    Gap,
    Linear { out: usize },
}

fn conv(cin: usize, cout: usize, k: usize, stride: usize, groups: usize) -> Row {
    Row::Conv { cin, cout, k, stride, groups }
}

#[rustfmt::skip]
fn msnet_table() -> Vec<Row> {
    use Row::*;
    vec![
        conv(3, 16, 3, 2, 1), Bn, Act,
        conv(16, 16, 3, 1, 16), Bn, Act,
        conv(16, 32, 1, 1, 1), Bn, Act,
        conv(32, 32, 3, 2, 32), Bn, Act,
        conv(32, 64, 1, 1, 1), Bn, Act,
        conv(64, 64, 1, 1, 4), Bn, Shuffle,
        conv(64, 64, 3, 2, 64), Bn,
        conv(64, 128, 1, 1, 4), Bn, Act, Shuffle,
        Recombine { groups: 4, out: 128 },
        Gap, Linear { out: 2 },
    ]
}

#[rustfmt::skip]
fn simple_cnn_table() -> Vec<Row> {
    use Row::*;
    let mut t = Vec::new();
    for (cin, cout) in [(3, 32), (32, 64), (64, 128)] {
        t.extend([conv(cin, cout, 3, 1, 1), Bn, Act, Pool]);
    }
    t.extend([Gap, Linear { out: 2 }]);
    t
}

#[rustfmt::skip]
fn mobilenet_table() -> Vec<Row> {
    use Row::*;
    let mut t = vec![conv(3, 16, 3, 2, 1), Bn, Act];
    for (cin, cout, e, s) in [(16, 16, 1, 1), (16, 24, 4, 2), (24, 32, 4, 2), (32, 48, 4, 1), (48, 64, 4, 1)] {
        let h = cin * e;
        if e != 1 {
            t.extend([conv(cin, h, 1, 1, 1), Bn, Act]);
        }
        t.extend([conv(h, h, 3, s, h), Bn, Act, conv(h, cout, 1, 1, 1), Bn]);
    }
    t.extend([conv(64, 128, 1, 1, 1), Bn, Act, Gap, Linear { out: 2 }]);
    t
}

#[rustfmt::skip]
fn shufflenet_table() -> Vec<Row> {
    use Row::*;
    let mut t = vec![conv(3, 24, 3, 2, 1), Bn, Act];
    let units = [(24, 96, 2), (96, 96, 1), (96, 192, 2), (192, 192, 1), (192, 192, 1), (192, 192, 1)];
    for (cin, cout, s) in units {
        let h = cout / 2;
        t.extend([
            conv(cin, h, 1, 1, 4), Bn, Act, Shuffle,
            conv(h, h, 3, s, h), Bn,
            conv(h, cout, 1, 1, 4), Bn, Act,
        ]);
    }
    t.extend([Gap, Linear { out: 2 }]);
    t
}

/// (MACs, params) by the closed-form per-layer formulas on a 3x64x64 input.
fn table_cost(table: &[Row]) -> (u64, u64) {
    let (mut c, mut h, mut w) = (3usize, 64usize, 64usize);
    let mut flat = None;
    let (mut macs, mut params) = (0u64, 0u64);
    for row in table {
        match *row {
            Row::Conv { cin, cout, k, stride, groups } => {
                assert_eq!(cin, c);
                let pad = k / 2;
                h = (h + 2 * pad - k) / stride + 1;
                w = (w + 2 * pad - k) / stride + 1;
                let weights = cout * (cin / groups) * k * k;
                macs += (weights * h * w) as u64;
                params += weights as u64;
                c = cout;
            }
            Row::Bn => {
                macs += (2 * c * h * w) as u64;
                params += 2 * c as u64;
            }
            Row::Act | Row::Shuffle => {}
            Row::Pool => {
                h /= 2;
                w /= 2;
            }
            Row::Recombine { groups, out } => {
                let weights = groups * out * (c / groups);
                macs += (weights * h * w) as u64;
                params += weights as u64;
                c = out;
            }
            Row::Gap => flat = Some(c),
            Row::Linear { out } => {
                let inp = flat.expect("linear after pooling");
                macs += (inp * out) as u64;
                params += (inp * out + out) as u64;
            }
        }
    }
    (macs, params)
}

fn tables() -> [(Arch, Vec<Row>); 4] {
    [
        (Arch::SimpleCnn, simple_cnn_table()),
        (Arch::MobileNetV2Lite, mobilenet_table()),
        (Arch::ShuffleNetLite, shufflenet_table()),
        (Arch::MsNet, msnet_table()),
    ]
}

#[test]
fn mac_and_param_counts_match_closed_form() {
    for (arch, table) in tables() {
        let report = arch.build(0).unwrap().mac_report().unwrap();
        assert_eq!((report.total, report.params), table_cost(&table), "{arch}");
        assert_eq!(report.layers.len(), table.len(), "{arch}");
        assert_eq!(report.layers.iter().map(|l| l.macs).sum::<u64>(), report.total);
    }
}

#[test]
fn frozen_mac_totals_and_ordering() {
    let totals: Vec<u64> = Arch::ALL.iter().map(|a| a.build(0).unwrap().mac_report().unwrap().total).collect();
    assert_eq!(totals, [41_746_688, 6_476_032, 5_493_120, 3_428_608]);
    let [simple, mobile, shuffle, msnet] = totals[..] else { unreachable!() };
    assert!(msnet < shuffle && shuffle < mobile && mobile < simple);
    assert_eq!(Arch::MsNet.build(0).unwrap().param_count(), 24_546);
}

#[test]
fn small_closed_form_examples() {
    let report = Arch::MsNet.build(0).unwrap().mac_report().unwrap();
    assert_eq!(report.layers[0].macs, 16 * 3 * 9 * 32 * 32);
    assert_eq!(report.layers.last().unwrap().macs, 256);
}

#[test]
fn family_invariants() {
    let ms = Arch::MsNet.build(0).unwrap();
    let mut c = 3;
    for layer in ms.layers() {
        if layer.kind() == "shuffle" {
            assert_eq!(c % 4, 0);
        }
        if let Ok(orbitfilter::FeatureShape::Image { c: out, .. }) =
            layer.output_shape(orbitfilter::FeatureShape::Image { c, h: 8, w: 8 })
        {
            c = out;
        }
    }
    let simple = Arch::SimpleCnn.build(0).unwrap();
    let kinds: Vec<&str> =
        simple.layers().iter().map(|l| l.kind()).filter(|k| ["conv", "bn", "maxpool"].contains(k)).collect();
    assert_eq!(kinds, ["conv", "bn", "maxpool"].repeat(3));
    assert!(Arch::ShuffleNetLite.build(0).unwrap().count_kind("shuffle") >= 2);
    for row in mobilenet_table() {
        if let Row::Conv { cin, groups, .. } = row {
            assert!(groups == 1 || groups == cin);
        }
    }
}

#[test]
fn forward_shapes_and_zero_input() {
    let mut rng = Rng::new(0, "fwd");
    let x = uniform(&[2, 3, 64, 64], -1.0, 1.0, &mut rng);
    for arch in Arch::ALL {
        let mut m = arch.build(1).unwrap();
        let y = m.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2], "{arch}");
        assert!(y.is_finite());
        let report = m.mac_report().unwrap();
        assert_eq!(m.infer(&uniform(&[5, 3, 64, 64], -1.0, 1.0, &mut rng)).unwrap().shape(), &[5, 2]);
        assert_eq!(m.mac_report().unwrap(), report);
    }

    // Fresh BN statistics are identity-like, so zeros propagate to the head
    // and only the linear bias survives.
    let m = Arch::MsNet.build(3).unwrap();
    let y = m.infer(&Tensor::create(&[1, 3, 64, 64], 0.0).unwrap()).unwrap();
    let bias = m.named_params().last().unwrap().1.value().clone();
    assert_eq!(y.data(), bias.data());
}

#[test]
fn rebuild_is_bit_identical() {
    for arch in Arch::ALL {
        assert_eq!(arch.build(5).unwrap().to_bytes(), arch.build(5).unwrap().to_bytes());
        assert_ne!(arch.build(5).unwrap().to_bytes(), arch.build(6).unwrap().to_bytes());
    }
}

#[test]
fn weight_file_round_trip_and_rejection() {
    let m = Arch::ShuffleNetLite.build(8).unwrap();
    let bytes = m.to_bytes();
    assert_eq!(&bytes[..4], b"OFW1");
    let back = Model::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ofw");
    m.save(&path).unwrap();
    assert_eq!(Model::load(&path).unwrap().to_bytes(), bytes);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Model::from_bytes(&bad).is_err());
    assert!(Model::from_bytes(&bytes[..bytes.len() - 8]).is_err());

    // Tensors of one architecture under another's name.
    let name_end = 4 + 8 + "shufflenet_lite".len();
    let mut renamed = b"OFW1".to_vec();
    renamed.extend_from_slice(&5u64.to_le_bytes());
    renamed.extend_from_slice(b"msnet");
    renamed.extend_from_slice(&bytes[name_end..]);
    assert!(Model::from_bytes(&renamed).is_err());

    // An extent that disagrees with the builder is rejected.
    let first_extent = 4 + 8 + "shufflenet_lite".len() + 16 + 8 + "0.conv.weight".len() + 8;
    let mut wrong_shape = bytes.clone();
    wrong_shape[first_extent] ^= 1;
    let err = Model::from_bytes(&wrong_shape).unwrap_err();
    assert!(err.to_string().contains("shape"), "{err}");
}
