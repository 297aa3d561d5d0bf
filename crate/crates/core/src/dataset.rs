//! Labelled 3×64×64 images: a synthetic artificial-vs-natural generator and a
//! loader for UCMerced-style class directories of binary pixmaps.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const IMAGE_SIZE: usize = 64;
pub const CHANNELS: usize = 3;

/// Binary scene label. The positive class is `Artificial`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Natural = 0,
    Artificial = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Label::Natural),
            1 => Ok(Label::Artificial),
            _ => Err(Error::InvalidArgument(format!("label index {i} outside {{0, 1}}"))),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Natural => "natural",
            Label::Artificial => "artificial",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "natural" => Ok(Label::Natural),
            "artificial" => Ok(Label::Artificial),
            _ => Err(Error::InvalidArgument(format!("label `{s}` must be `natural` or `artificial`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    /// `[3, 64, 64]`, values in `[-1, 1]`.
    pub pixels: Tensor,
    pub label: Label,
    pub origin: String,
}

/// Stack images into an `[N, 3, 64, 64]` batch.
pub fn batch_tensor<'a>(images: impl IntoIterator<Item = &'a LabeledImage>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut n = 0;
    for img in images {
        if img.pixels.shape() != [CHANNELS, IMAGE_SIZE, IMAGE_SIZE] {
            return Err(Error::ShapeMismatch {
                left: img.pixels.shape().to_vec(),
                right: vec![CHANNELS, IMAGE_SIZE, IMAGE_SIZE],
            });
        }
        data.extend_from_slice(img.pixels.data());
        n += 1;
    }
    Tensor::from_vec(&[n, CHANNELS, IMAGE_SIZE, IMAGE_SIZE], data)
}

/// `[0, 1]` intensities to the `[-1, 1]` model range.
pub fn normalize(v: f64) -> f64 {
    (v - 0.5) / 0.5
}

// ---------------------------------------------------------------------------
// Binarization

/// The 21 UCMerced land-use classes.
pub const UCMERCED_CLASSES: [&str; 21] = [
    "agricultural",
    "airplane",
    "baseballdiamond",
    "beach",
    "buildings",
    "chaparral",
    "denseresidential",
    "forest",
    "freeway",
    "golfcourse",
    "harbor",
    "intersection",
    "mediumresidential",
    "mobilehomepark",
    "overpass",
    "parkinglot",
    "river",
    "runway",
    "sparseresidential",
    "storagetanks",
    "tenniscourt",
];

pub const DEFAULT_NATURAL: [&str; 6] = ["agricultural", "beach", "chaparral", "forest", "golfcourse", "river"];

/// Maps scene class names to the binary label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinarizationMap {
    classes: BTreeMap<String, Label>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassLabel {
    pub class: String,
    pub label: Label,
}

impl BinarizationMap {
    pub fn new(entries: impl IntoIterator<Item = (String, Label)>) -> Self {
        Self { classes: entries.into_iter().collect() }
    }

    /// Replace or add entries.
    pub fn with_overrides<'a>(mut self, overrides: impl IntoIterator<Item = &'a ClassLabel>) -> Self {
        for o in overrides {
            self.classes.insert(o.class.clone(), o.label);
        }
        self
    }

    pub fn label_of(&self, class: &str) -> Option<Label> {
        self.classes.get(class).copied()
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Label)> {
        self.classes.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// Six landscape classes natural, the other fifteen artificial.
pub fn default_binarization() -> BinarizationMap {
    BinarizationMap::new(UCMERCED_CLASSES.iter().map(|&c| {
        let label = if DEFAULT_NATURAL.contains(&c) { Label::Natural } else { Label::Artificial };
        (c.to_owned(), label)
    }))
}

// ---------------------------------------------------------------------------
// Pixmaps

/// 8-bit interleaved RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    /// Planar `[3, H, W]` tensor with intensities in `[0, 1]`.
    pub fn to_planar(&self) -> Tensor {
        let plane = self.width * self.height;
        let mut out = vec![0.0; 3 * plane];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = f64::from(px[c]) / 255.0;
            }
        }
        Tensor::from_parts(vec![3, self.height, self.width], out)
    }
}

/// Decode a binary (`P6`) portable pixmap. Samples are rescaled to 8 bits when
/// `maxval != 255`; 16-bit samples are read big-endian.
pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let bad = |reason: &str| Error::Pixmap { path: path.to_path_buf(), reason: reason.to_owned() };
    let mut pos = 0;
    let mut token = || -> Option<&[u8]> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        (pos > start).then(|| &bytes[start..pos])
    };
    if token() != Some(b"P6") {
        return Err(bad("missing P6 magic"));
    }
    let mut number = |what: &str| -> Result<usize> {
        token()
            .and_then(|t| std::str::from_utf8(t).ok())
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| bad(&format!("invalid {what}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if width == 0 || height == 0 {
        return Err(bad("zero image extent"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval must be in 1..=65535"));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("missing raster separator"));
    }
    pos += 1;
    let sample_bytes = if maxval > 255 { 2 } else { 1 };
    let needed = width * height * 3 * sample_bytes;
    let raster = bytes.get(pos..pos + needed).ok_or_else(|| bad(&format!("raster truncated: need {needed} bytes")))?;
    let data = if sample_bytes == 1 && maxval == 255 {
        raster.to_vec()
    } else {
        raster
            .chunks_exact(sample_bytes)
            .map(|s| {
                let v = if sample_bytes == 2 { u32::from(u16::from_be_bytes([s[0], s[1]])) } else { u32::from(s[0]) };
                let v = v.min(maxval as u32);
                ((v * 255 + maxval as u32 / 2) / maxval as u32) as u8
            })
            .collect()
    };
    Ok(RgbImage { width, height, data })
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

/// Exact at both ends and for `a == b`.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Bilinear resize of a planar `[C, H, W]` image with half-pixel-centred
/// sampling and edge clamping. Same-size input is returned unchanged.
pub fn resize_bilinear(img: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (c, h, w) = match *img.shape() {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::InvalidArgument(format!("resize expects [C, H, W], got {:?}", img.shape()))),
    };
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("resize target must be positive".into()));
    }
    if (h, w) == (height, width) {
        return Ok(img.clone());
    }
    let taps = |out: usize, input: usize| -> Vec<(usize, usize, f64)> {
        let scale = input as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(input - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let ys = taps(height, h);
    let xs = taps(width, w);
    let src = img.data();
    let mut out = Vec::with_capacity(c * height * width);
    for ch in 0..c {
        let p = &src[ch * h * w..][..h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = lerp(p[y0 * w + x0], p[y0 * w + x1], fx);
                let bottom = lerp(p[y1 * w + x0], p[y1 * w + x1], fx);
                out.push(lerp(top, bottom, fy));
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, height, width], out))
}

/// Decode, resize to 64×64 and normalise one pixmap.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let rgb = decode_ppm(&bytes, path)?;
    let resized = resize_bilinear(&rgb.to_planar(), IMAGE_SIZE, IMAGE_SIZE)?;
    Ok(resized.map(|v| normalize(v.clamp(0.0, 1.0))))
}

/// Load `<root>/<class>/*.ppm`, labelling each image through `map`.
///
/// Classes and files are visited in sorted order. A subdirectory whose name
/// is not in `map` is an error; map classes missing on disk are skipped with a
/// warning.
pub fn load_directory(root: &Path, map: &BinarizationMap) -> Result<Vec<LabeledImage>> {
    let mut class_dirs = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_dir() {
            class_dirs.push(entry.path());
        }
    }
    class_dirs.sort();
    if class_dirs.is_empty() {
        warn!("{}: no class directories found", root.display());
    }

    let mut images = Vec::new();
    let mut seen = Vec::new();
    for dir in class_dirs {
        let class = dir.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_owned();
        let label = map.label_of(&class).ok_or_else(|| Error::UnknownClass(class.clone()))?;
        let mut files: Vec<_> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
            .collect();
        files.sort();
        for file in files {
            images.push(LabeledImage { pixels: load_image(&file)?, label, origin: class.clone() });
        }
        seen.push(class);
    }
    for (class, _) in map.iter() {
        if !seen.iter().any(|s| s == class) {
            warn!("{}: class `{class}` not present, skipping", root.display());
        }
    }
    Ok(images)
}

// ---------------------------------------------------------------------------
// Synthetic scenes

const S: usize = IMAGE_SIZE;

/// Planar RGB canvas in `[0, 1]`.
struct Canvas {
    px: Vec<f64>,
}

impl Canvas {
    fn filled(rgb: [f64; 3]) -> Self {
        let mut px = vec![0.0; 3 * S * S];
        for c in 0..3 {
            px[c * S * S..][..S * S].fill(rgb[c]);
        }
        Self { px }
    }

    fn set(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        for (c, v) in rgb.into_iter().enumerate() {
            self.px[c * S * S + y * S + x] = v;
        }
    }

    fn rect(&mut self, y0: usize, x0: usize, h: usize, w: usize, rgb: [f64; 3]) {
        for y in y0..(y0 + h).min(S) {
            for x in x0..(x0 + w).min(S) {
                self.set(y, x, rgb);
            }
        }
    }

    fn add_noise(&mut self, std: f64, rng: &mut Rng) {
        for v in &mut self.px {
            *v += rng.normal(0.0, std);
        }
    }

    fn into_image(self, label: Label, origin: &str) -> LabeledImage {
        let data = self.px.into_iter().map(|v| normalize(v.clamp(0.0, 1.0))).collect();
        LabeledImage {
            pixels: Tensor::from_parts(vec![CHANNELS, S, S], data),
            label,
            origin: format!("synthetic/{origin}"),
        }
    }
}

fn jitter(rgb: [f64; 3], amount: f64, rng: &mut Rng) -> [f64; 3] {
    rgb.map(|v| (v + rng.uniform(-amount, amount)).clamp(0.0, 1.0))
}

/// One separable box-blur pass with clamped edges.
fn box_blur(field: &[f64], radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut dst = vec![0.0; S * S];
        for y in 0..S {
            for x in 0..S {
                let mut acc = 0.0;
                for d in -r..=r {
                    let (yy, xx) = if horizontal {
                        (y as isize, (x as isize + d).clamp(0, S as isize - 1))
                    } else {
                        ((y as isize + d).clamp(0, S as isize - 1), x as isize)
                    };
                    acc += src[yy as usize * S + xx as usize];
                }
                dst[y * S + x] = acc / (2 * r + 1) as f64;
            }
        }
        dst
    };
    pass(&pass(field, true), false)
}

const NATURAL_TINTS: [[f64; 3]; 5] = [
    [0.24, 0.38, 0.20], // canopy
    [0.50, 0.45, 0.26], // dry field
    [0.12, 0.20, 0.28], // deep water
    [0.62, 0.54, 0.32], // sand
    [0.36, 0.42, 0.28], // scrub
];

const GROUND_TINTS: [[f64; 3]; 4] = [
    [0.55, 0.56, 0.58], // concrete
    [0.42, 0.44, 0.48], // asphalt
    [0.58, 0.56, 0.56], // rooftops
    [0.54, 0.53, 0.52], // bare lot
];

/// Low-frequency value noise under a landscape tint.
fn natural_scene(rng: &mut Rng) -> LabeledImage {
    let tint = jitter(NATURAL_TINTS[rng.below(NATURAL_TINTS.len())], 0.06, rng);
    let radius = 2 + rng.below(3);
    let white: Vec<f64> = (0..S * S).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let field = box_blur(&box_blur(&white, radius), radius);
    let std = (field.iter().map(|v| v * v).sum::<f64>() / field.len() as f64).sqrt().max(1e-9);
    let contrast = rng.uniform(0.15, 0.35);
    let mut canvas = Canvas::filled(tint);
    for (i, &f) in field.iter().enumerate() {
        let shade = 1.0 + contrast * f / std;
        for (c, t) in tint.iter().enumerate() {
            canvas.px[c * S * S + i] = t * shade;
        }
    }
    canvas.add_noise(0.01, rng);
    canvas.into_image(Label::Natural, "value_noise")
}

fn contrasting(base: [f64; 3], rng: &mut Rng) -> [f64; 3] {
    let delta = rng.uniform(0.15, 0.35) * if rng.below(2) == 0 { -1.0 } else { 1.0 };
    jitter(base.map(|v| v + delta), 0.06, rng)
}

fn draw_rectangles(canvas: &mut Canvas, base: [f64; 3], rng: &mut Rng) {
    for _ in 0..3 + rng.below(6) {
        let h = 4 + rng.below(14);
        let w = 4 + rng.below(14);
        let y = rng.below(S - h);
        let x = rng.below(S - w);
        canvas.rect(y, x, h, w, contrasting(base, rng));
    }
}

fn draw_grating(canvas: &mut Canvas, base: [f64; 3], rng: &mut Rng) {
    let period = 4 + rng.below(7);
    let width = 1 + rng.below(period / 2);
    let horizontal = rng.below(2) == 0;
    let offset = rng.below(period);
    let color = contrasting(base, rng);
    for i in 0..S {
        if (i + offset) % period < width {
            for j in 0..S {
                let (y, x) = if horizontal { (i, j) } else { (j, i) };
                canvas.set(y, x, color);
            }
        }
    }
}

fn draw_grid(canvas: &mut Canvas, base: [f64; 3], rng: &mut Rng) {
    let period = 8 + rng.below(9);
    let width = 1 + rng.below(2);
    let (oy, ox) = (rng.below(period), rng.below(period));
    let color = contrasting(base, rng);
    for y in 0..S {
        for x in 0..S {
            if (y + oy) % period < width || (x + ox) % period < width {
                canvas.set(y, x, color);
            }
        }
    }
}

/// Man-made layout: rectangles, line gratings or street grids over a quiet
/// background.
fn artificial_scene(rng: &mut Rng) -> LabeledImage {
    let base = jitter(GROUND_TINTS[rng.below(GROUND_TINTS.len())], 0.06, rng);
    let mut canvas = Canvas::filled(base);
    let origin = match rng.below(4) {
        0 => {
            draw_rectangles(&mut canvas, base, rng);
            "rectangles"
        }
        1 => {
            draw_grating(&mut canvas, base, rng);
            "grating"
        }
        2 => {
            draw_grid(&mut canvas, base, rng);
            "grid"
        }
        _ => {
            draw_grid(&mut canvas, base, rng);
            draw_rectangles(&mut canvas, base, rng);
            "grid+rectangles"
        }
    };
    canvas.add_noise(0.03, rng);
    canvas.into_image(Label::Artificial, origin)
}

/// `n` synthetic scenes alternating artificial/natural, so even `n` is exactly
/// balanced. Image `i` draws from the `<rng label>/<i>` stream.
pub fn generate_synthetic(n: usize, rng: &Rng) -> Result<Vec<LabeledImage>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("synthetic dataset needs at least 2 images, asked for {n}")));
    }
    Ok((0..n)
        .map(|i| {
            let mut r = rng.child(&i.to_string());
            if i % 2 == 0 {
                artificial_scene(&mut r)
            } else {
                natural_scene(&mut r)
            }
        })
        .collect())
}
