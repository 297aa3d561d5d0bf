//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use orbitfilter::layers::{BatchNorm2d, GroupRecombine};
use orbitfilter::ops::ConvSpec;
use orbitfilter::train::softmax_cross_entropy;
use orbitfilter::{Dist, Layer, Mode, Rng, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-6;
/// Floor on the relative-error denominator so exactly-zero gradients are
/// compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-3;

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor {
    Tensor::random(shape, Dist::Uniform { lo, hi }, rng).unwrap()
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRAD_FLOOR)
}

/// Direct-summation convolution, one output element at a time.
pub fn conv_oracle(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, groups: usize, stride: usize, pad: usize) -> Tensor {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, cin_g, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let cout_g = co / groups;
    let xv = |b: usize, ch: usize, y: isize, xx: isize| -> f64 {
        if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
            0.0
        } else {
            x.data()[((b * c + ch) * h + y as usize) * wd + xx as usize]
        }
    };
    let mut out = vec![0.0; n * co * ho * wo];
    for b in 0..n {
        for oc in 0..co {
            let g = oc / cout_g;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias.map_or(0.0, |bv| bv.data()[oc]);
                    for icl in 0..cin_g {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                let wv = w.data()[((oc * cin_g + icl) * k + ky) * k + kx];
                                acc += wv * xv(b, g * cin_g + icl, iy, ix);
                            }
                        }
                    }
                    out[((b * co + oc) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    Tensor::from_vec(&[n, co, ho, wo], out).unwrap()
}

/// A random conv configuration within the property-test ranges.
#[derive(Debug, Clone, Copy)]
pub struct ConvCase {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub bias: bool,
}

impl ConvCase {
    pub fn random(rng: &mut Rng, grouping: Grouping) -> Self {
        loop {
            let k = [1, 3][rng.below(2)];
            let pad = rng.below(2);
            let h = 1 + rng.below(7);
            let w = 1 + rng.below(7);
            if h + 2 * pad < k || w + 2 * pad < k {
                continue;
            }
            let (cin, cout, groups) = match grouping {
                Grouping::Dense => (1 + rng.below(8), 1 + rng.below(8), 1),
                Grouping::Grouped => {
                    let g = [2, 3, 4][rng.below(3)];
                    let cin = g * (1 + rng.below(8 / g));
                    let cout = g * (1 + rng.below(8 / g));
                    (cin, cout, g)
                }
                Grouping::Depthwise => {
                    let c = 1 + rng.below(8);
                    (c, c, c)
                }
                Grouping::Pointwise => {
                    return Self {
                        n: 1 + rng.below(2),
                        cin: 1 + rng.below(8),
                        cout: 1 + rng.below(8),
                        h,
                        w,
                        k: 1,
                        stride: 1 + rng.below(2),
                        pad: 0,
                        groups: 1,
                        bias: rng.below(2) == 1,
                    }
                }
            };
            return Self {
                n: 1 + rng.below(2),
                cin,
                cout,
                h,
                w,
                k,
                stride: 1 + rng.below(2),
                pad,
                groups,
                bias: rng.below(2) == 1,
            };
        }
    }

    pub fn spec(&self) -> ConvSpec {
        let s = ConvSpec::new(self.cin, self.cout, self.k).stride(self.stride).padding(self.pad).groups(self.groups);
        if self.bias {
            s.with_bias()
        } else {
            s
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    Dense,
    Grouped,
    Depthwise,
    Pointwise,
}

/// Run `cases` random convolutions of each grouping against the oracle and
/// return the largest absolute difference seen.
pub fn conv_oracle_sweep(cases_per_kind: usize, seed: u64) -> (usize, f64) {
    let mut rng = Rng::new(seed, "conv-sweep");
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for kind in [Grouping::Dense, Grouping::Grouped, Grouping::Depthwise, Grouping::Pointwise] {
        for _ in 0..cases_per_kind {
            let case = ConvCase::random(&mut rng, kind);
            let spec = case.spec();
            let x = uniform(&[case.n, case.cin, case.h, case.w], -1.0, 1.0, &mut rng);
            let w = uniform(&spec.weight_shape(), -1.0, 1.0, &mut rng);
            let b = case.bias.then(|| uniform(&[case.cout], -1.0, 1.0, &mut rng));
            let got = orbitfilter::ops::conv2d(&x, &w, b.as_ref(), &spec).unwrap();
            let want = conv_oracle(&x, &w, b.as_ref(), case.groups, case.stride, case.pad);
            assert_eq!(got.shape(), want.shape(), "{case:?}");
            for (a, b) in got.data().iter().zip(want.data()) {
                worst = worst.max((a - b).abs());
            }
            count += 1;
        }
    }
    (count, worst)
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checks

/// Scalar probe `sum(layer(x) * r)` whose gradient w.r.t. the output is `r`.
fn probe(layer: &mut Layer, x: &Tensor, r: &Tensor, mode: Mode) -> f64 {
    let y = layer.forward(x, mode).unwrap();
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Largest relative error between analytic and central-difference gradients
/// over the input and every parameter of `layer`.
pub fn grad_check(layer: &mut Layer, x: &Tensor, mode: Mode, rng: &mut Rng) -> f64 {
    let y = layer.forward(x, mode).unwrap();
    let r = uniform(y.shape(), -1.0, 1.0, rng);
    let gx = layer.backward(&r).unwrap();
    let param_grads: Vec<Tensor> = layer.params().iter().map(|p| p.grad().clone()).collect();

    let mut worst: f64 = 0.0;
    let mut xp = x.data().to_vec();
    for i in 0..xp.len() {
        let orig = xp[i];
        xp[i] = orig + FD_STEP;
        let up = probe(layer, &Tensor::from_vec(x.shape(), xp.clone()).unwrap(), &r, mode);
        xp[i] = orig - FD_STEP;
        let down = probe(layer, &Tensor::from_vec(x.shape(), xp.clone()).unwrap(), &r, mode);
        xp[i] = orig;
        worst = worst.max(rel_err(gx.data()[i], (up - down) / (2.0 * FD_STEP)));
    }

    for (pi, analytic) in param_grads.iter().enumerate() {
        let base = layer.params()[pi].value().clone();
        let mut v = base.data().to_vec();
        for i in 0..v.len() {
            let orig = v[i];
            let mut eval = |val: f64, layer: &mut Layer| {
                v[i] = val;
                layer.params_mut()[pi].set_value(Tensor::from_vec(base.shape(), v.clone()).unwrap()).unwrap();
                probe(layer, x, &r, mode)
            };
            let up = eval(orig + FD_STEP, layer);
            let down = eval(orig - FD_STEP, layer);
            v[i] = orig;
            worst = worst.max(rel_err(analytic.data()[i], (up - down) / (2.0 * FD_STEP)));
        }
        layer.params_mut()[pi].set_value(base).unwrap();
    }
    worst
}

/// Uniform input whose entries avoid `[k - margin, k + margin]` for each kink.
pub fn away_from(shape: &[usize], kinks: &[f64], margin: f64, lo: f64, hi: f64, rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v = rng.uniform(lo, hi);
            if kinks.iter().all(|k| (v - k).abs() > margin) {
                break v;
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Input whose 2x2 pooling windows have a unique maximum by a clear margin.
pub fn distinct_windows(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut values: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - 1.0).collect();
    rng.shuffle(&mut values);
    Tensor::from_vec(shape, values).unwrap()
}

/// One named gradient-check family: builds a layer and input per case.
pub struct GradFamily {
    pub name: &'static str,
    pub build: fn(&mut Rng) -> (Layer, Tensor, Mode),
}

fn small_image(rng: &mut Rng, c_mult: usize) -> [usize; 4] {
    [1 + rng.below(2), c_mult * (1 + rng.below(3)), 2 + rng.below(4), 2 + rng.below(4)]
}

fn recombine_case(rng: &mut Rng) -> (Layer, Tensor, Mode) {
    let groups = 1 + rng.below(3);
    let channels = groups * (1 + rng.below(3));
    let out = 1 + rng.below(4);
    let shape = [1 + rng.below(2), channels, 1 + rng.below(4), 1 + rng.below(4)];
    // Resample until no pre-activation sits near the rectifier kink.
    loop {
        let layer = Layer::Recombine(GroupRecombine::new(channels, groups, out, rng).unwrap());
        let x = uniform(&shape, -1.0, 1.0, rng);
        let per = channels / groups;
        let clear = layer.params().iter().enumerate().all(|(i, p)| {
            let slice = orbitfilter::ops::channel_slice(&x, i * per, per).unwrap();
            let z = orbitfilter::ops::conv2d(&slice, p.value(), None, &ConvSpec::pointwise(per, out)).unwrap();
            z.data().iter().all(|v| v.abs() > 1e-3)
        });
        if clear {
            return (layer, x, Mode::Train);
        }
    }
}

pub fn grad_families() -> Vec<GradFamily> {
    vec![
        GradFamily {
            name: "conv",
            build: |rng| {
                let case = ConvCase::random(rng, Grouping::Dense);
                let layer = Layer::conv(case.spec(), rng).unwrap();
                let x = uniform(&[case.n, case.cin, case.h, case.w], -1.0, 1.0, rng);
                (layer, x, Mode::Train)
            },
        },
        GradFamily {
            name: "conv_grouped",
            build: |rng| {
                let case = ConvCase::random(rng, Grouping::Grouped);
                let layer = Layer::conv(case.spec(), rng).unwrap();
                let x = uniform(&[case.n, case.cin, case.h, case.w], -1.0, 1.0, rng);
                (layer, x, Mode::Train)
            },
        },
        GradFamily {
            name: "conv_depthwise",
            build: |rng| {
                let case = ConvCase::random(rng, Grouping::Depthwise);
                let layer = Layer::conv(case.spec(), rng).unwrap();
                let x = uniform(&[case.n, case.cin, case.h, case.w], -1.0, 1.0, rng);
                (layer, x, Mode::Train)
            },
        },
        GradFamily {
            name: "conv_pointwise",
            build: |rng| {
                let case = ConvCase::random(rng, Grouping::Pointwise);
                let layer = Layer::conv(case.spec(), rng).unwrap();
                let x = uniform(&[case.n, case.cin, case.h, case.w], -1.0, 1.0, rng);
                (layer, x, Mode::Train)
            },
        },
        GradFamily {
            name: "shuffle",
            build: |rng| {
                let g = 1 + rng.below(4);
                let shape = small_image(rng, g);
                (Layer::shuffle(g).unwrap(), uniform(&shape, -1.0, 1.0, rng), Mode::Train)
            },
        },
        GradFamily { name: "recombine", build: recombine_case },
        GradFamily {
            name: "bn_train",
            build: |rng| {
                let shape = small_image(rng, 1);
                let c = shape[1];
                let bn =
                    BatchNorm2d::with_affine(c, uniform(&[c], 0.5, 1.5, rng), uniform(&[c], -0.5, 0.5, rng)).unwrap();
                (Layer::BatchNorm(bn), uniform(&shape, -1.0, 1.0, rng), Mode::Train)
            },
        },
        GradFamily {
            name: "bn_eval",
            build: |rng| {
                let shape = small_image(rng, 1);
                let c = shape[1];
                let mut bn =
                    BatchNorm2d::with_affine(c, uniform(&[c], 0.5, 1.5, rng), uniform(&[c], -0.5, 0.5, rng)).unwrap();
                bn.set_running_stats(uniform(&[c], -0.3, 0.3, rng), uniform(&[c], 0.5, 2.0, rng)).unwrap();
                (Layer::BatchNorm(bn), uniform(&shape, -1.0, 1.0, rng), Mode::Eval)
            },
        },
        GradFamily {
            name: "relu",
            build: |rng| {
                let shape = small_image(rng, 1);
                (Layer::relu(), away_from(&shape, &[0.0], 1e-3, -2.0, 2.0, rng), Mode::Train)
            },
        },
        GradFamily {
            name: "relu6",
            build: |rng| {
                let shape = small_image(rng, 1);
                (Layer::relu6(), away_from(&shape, &[0.0, 6.0], 1e-3, -2.0, 8.0, rng), Mode::Train)
            },
        },
        GradFamily {
            name: "maxpool",
            build: |rng| {
                let shape = [1 + rng.below(2), 1 + rng.below(3), 2 * (1 + rng.below(3)), 2 * (1 + rng.below(3))];
                (Layer::max_pool(), distinct_windows(&shape, rng), Mode::Train)
            },
        },
        GradFamily {
            name: "gap",
            build: |rng| {
                let shape = small_image(rng, 1);
                (Layer::global_avg_pool(), uniform(&shape, -1.0, 1.0, rng), Mode::Train)
            },
        },
        GradFamily {
            name: "linear",
            build: |rng| {
                let (n, i, o) = (1 + rng.below(3), 1 + rng.below(6), 1 + rng.below(4));
                (Layer::linear(i, o, rng).unwrap(), uniform(&[n, i], -1.0, 1.0, rng), Mode::Train)
            },
        },
    ]
}

/// Worst relative error of each family over `cases` seeded instances.
pub fn grad_sweep(cases: usize, seed: u64) -> Vec<(&'static str, f64)> {
    grad_families()
        .into_iter()
        .map(|fam| {
            let mut rng = Rng::new(seed, fam.name);
            let worst = (0..cases)
                .map(|_| {
                    let (mut layer, x, mode) = (fam.build)(&mut rng);
                    grad_check(&mut layer, &x, mode, &mut rng)
                })
                .fold(0.0, f64::max);
            (fam.name, worst)
        })
        .collect()
}

/// Worst relative error of the softmax cross-entropy gradient.
pub fn loss_grad_sweep(cases: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed, "loss");
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = 1 + rng.below(4);
        let k = 2 + rng.below(3);
        let logits = uniform(&[n, k], -3.0, 3.0, &mut rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
        let mut v = logits.data().to_vec();
        for i in 0..v.len() {
            let orig = v[i];
            let mut at = |val: f64| {
                v[i] = val;
                softmax_cross_entropy(&Tensor::from_vec(&[n, k], v.clone()).unwrap(), &labels).unwrap().0
            };
            let numeric = (at(orig + FD_STEP) - at(orig - FD_STEP)) / (2.0 * FD_STEP);
            v[i] = orig;
            worst = worst.max(rel_err(grad.data()[i], numeric));
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Channel shuffle

/// Exhaustive permutation checks; returns the number of (C, g) pairs tried.
pub fn shuffle_suite() -> Result<usize, String> {
    use orbitfilter::ops::{channel_shuffle, channel_unshuffle};
    let mut pairs = 0;
    for c in [2usize, 4, 6, 8, 12] {
        for g in (1..=c).filter(|g| c % g == 0) {
            // Distinct plane contents: value identifies (batch, channel, pixel).
            let shape = [2, c, 2, 3];
            let data: Vec<f64> = (0..shape.iter().product::<usize>()).map(|i| i as f64 * 1.5 - 7.0).collect();
            let x = Tensor::from_vec(&shape, data).unwrap();
            let y = channel_shuffle(&x, g).map_err(|e| e.to_string())?;

            let mut a = x.data().to_vec();
            let mut b = y.data().to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            if a != b {
                return Err(format!("C={c} g={g}: values not preserved"));
            }
            let back = channel_unshuffle(&y, g).map_err(|e| e.to_string())?;
            if back != x {
                return Err(format!("C={c} g={g}: inverse does not restore input"));
            }
            // Shuffling with C/g groups is the inverse permutation.
            if channel_shuffle(&y, c / g).map_err(|e| e.to_string())? != x {
                return Err(format!("C={c} g={g}: shuffle by C/g is not the inverse"));
            }
            if g == 1 && y != x {
                return Err(format!("C={c}: g=1 is not the identity"));
            }
            // Plane contents move intact to the mapped position.
            let plane = 6;
            for ch in 0..c {
                let dest = (ch % (c / g)) * g + ch / (c / g);
                for n in 0..2 {
                    let src = &x.data()[(n * c + ch) * plane..][..plane];
                    let dst = &y.data()[(n * c + dest) * plane..][..plane];
                    if src != dst {
                        return Err(format!("C={c} g={g}: channel {ch} not at {dest}"));
                    }
                }
            }
            pairs += 1;
        }
    }
    Ok(pairs)
}

// ---------------------------------------------------------------------------
// Metrics

/// Compare `Metrics::from_counts` with first-principles ratios for every
/// confusion matrix with entries in `0..=max`, and `from_predictions` with
/// explicitly enumerated label lists on a subsample.
pub fn metrics_brute_force(max: u64) -> Result<u64, String> {
    use orbitfilter::{Label, Metrics};
    let mut checked = 0;
    for tp in 0..=max {
        for fp in 0..=max {
            for fn_ in 0..=max {
                for tn in 0..=max {
                    let m = Metrics::from_counts(tp, fp, fn_, tn);
                    let p = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
                    let r = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
                    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
                    let total = tp + fp + fn_ + tn;
                    let acc = if total > 0 { (tp + tn) as f64 / total as f64 } else { 0.0 };
                    let degenerate = tp + fp == 0 || tp + fn_ == 0 || p + r == 0.0;
                    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
                    if !(close(m.precision, p) && close(m.recall, r) && close(m.f1, f) && close(m.accuracy, acc)) {
                        return Err(format!("counts ({tp},{fp},{fn_},{tn}) give {m:?}"));
                    }
                    if m.degenerate != degenerate {
                        return Err(format!("counts ({tp},{fp},{fn_},{tn}) degenerate flag {}", m.degenerate));
                    }
                    if m.samples() != total || m.predicted_positive() != tp + fp {
                        return Err(format!("counts ({tp},{fp},{fn_},{tn}) totals wrong"));
                    }
                    // Harmonic-mean identity f1 = 2tp / (2tp + fp + fn).
                    if tp > 0 && !close(m.f1, 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64) {
                        return Err(format!("counts ({tp},{fp},{fn_},{tn}) break the f1 identity"));
                    }
                    if (tp + fp + fn_ + tn) % 7 == 0 {
                        let mut truth = Vec::new();
                        let mut pred = Vec::new();
                        for (t, p, k) in [
                            (Label::Artificial, Label::Artificial, tp),
                            (Label::Natural, Label::Artificial, fp),
                            (Label::Artificial, Label::Natural, fn_),
                            (Label::Natural, Label::Natural, tn),
                        ] {
                            truth.extend(std::iter::repeat_n(t, k as usize));
                            pred.extend(std::iter::repeat_n(p, k as usize));
                        }
                        if Metrics::from_predictions(&truth, &pred) != m {
                            return Err(format!("from_predictions disagrees at ({tp},{fp},{fn_},{tn})"));
                        }
                    }
                    checked += 1;
                }
            }
        }
    }
    Ok(checked)
}
