//! Sequential models, MAC accounting and the `OFW1` parameter container.

use std::io::{Read, Write};
use std::path::Path;

use crate::archs::Arch;
use crate::error::{Error, Result};
use crate::layers::{FeatureShape, Layer, Mode, Param};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Model {
    arch: String,
    input: FeatureShape,
    layers: Vec<Layer>,
    mode: Mode,
}

/// Per-layer multiply-accumulate counts for one input item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacReport {
    pub layers: Vec<LayerMacs>,
    pub total: u64,
    pub params: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMacs {
    pub index: usize,
    pub kind: &'static str,
    pub output: FeatureShape,
    pub macs: u64,
}

impl Model {
    /// Assemble a model and check that consecutive layers are shape compatible.
    pub fn new(arch: impl Into<String>, input: FeatureShape, layers: Vec<Layer>) -> Result<Self> {
        let model = Self { arch: arch.into(), input, layers, mode: Mode::Train };
        model.output_shape()?;
        Ok(model)
    }

    pub fn arch(&self) -> &str {
        &self.arch
    }

    pub fn input_shape(&self) -> FeatureShape {
        self.input
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn output_shape(&self) -> Result<FeatureShape> {
        self.layers.iter().try_fold(self.input, |shape, layer| layer.output_shape(shape))
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let n = x.shape().first().copied().unwrap_or(0);
        let expected = self.input.with_batch(n);
        if x.shape() != expected.as_slice() {
            return Err(Error::ShapeMismatch { left: x.shape().to_vec(), right: expected });
        }
        Ok(())
    }

    /// Forward pass in the model's current mode, caching activations.
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mode = self.mode;
        let mut cur = x.clone();
        for layer in &mut self.layers {
            cur = layer.forward(&cur, mode)?;
        }
        Ok(cur)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut cur = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            cur = layer.backward(&cur)?;
        }
        Ok(cur)
    }

    /// Eval-mode inference; leaves the model untouched.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = self.layers[0].infer(x)?;
        for layer in &self.layers[1..] {
            cur = layer.infer(&cur)?;
        }
        Ok(cur)
    }

    pub fn clear_caches(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    fn qualified(index: usize, layer: &Layer, name: &str) -> String {
        format!("{index}.{}.{name}", layer.kind())
    }

    /// Parameters with model-unique names such as `0.conv.weight`.
    pub fn named_params(&self) -> Vec<(String, &Param)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.params().into_iter().map(move |p| (Self::qualified(i, l, &p.name), p)))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.named_params().into_iter().map(|(n, _)| n).collect()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn param_count(&self) -> u64 {
        self.named_params().iter().map(|(_, p)| p.value().len() as u64).sum()
    }

    pub fn count_kind(&self, kind: &str) -> usize {
        self.layers.iter().filter(|l| l.kind() == kind).count()
    }

    pub fn mac_report(&self) -> Result<MacReport> {
        let mut shape = self.input;
        let mut layers = Vec::with_capacity(self.layers.len());
        for (index, layer) in self.layers.iter().enumerate() {
            let macs = layer.macs(shape)?;
            shape = layer.output_shape(shape)?;
            layers.push(LayerMacs { index, kind: layer.kind(), output: shape, macs });
        }
        Ok(MacReport { total: layers.iter().map(|l| l.macs).sum(), layers, params: self.param_count() })
    }

    /// All serialized tensors (parameters then buffers) in layer order.
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for p in layer.params() {
                out.push((Self::qualified(i, layer, &p.name), p.value()));
            }
            for (name, t) in layer.buffers() {
                out.push((Self::qualified(i, layer, name), t));
            }
        }
        out
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let tensors = self.named_tensors();
        w.write_all(MAGIC)?;
        write_bytes(&mut w, self.arch.as_bytes())?;
        write_u64(&mut w, self.layers.len() as u64)?;
        write_u64(&mut w, tensors.len() as u64)?;
        for (name, t) in tensors {
            write_bytes(&mut w, name.as_bytes())?;
            write_u64(&mut w, t.rank() as u64)?;
            for &e in t.shape() {
                write_u64(&mut w, e as u64)?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Rebuild the named architecture and overwrite every tensor from the
    /// container. The result is in eval mode.
    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::ModelFormat(format!("bad magic {magic:?}")));
        }
        let arch_name = read_string(&mut r)?;
        let arch: Arch =
            arch_name.parse().map_err(|_| Error::ModelFormat(format!("unknown architecture `{arch_name}`")))?;
        let mut model = arch.build(0)?;
        let layer_count = read_u64(&mut r)? as usize;
        if layer_count != model.layers.len() {
            return Err(Error::ModelFormat(format!(
                "{arch_name} has {} layers, file declares {layer_count}",
                model.layers.len()
            )));
        }
        let expected: Vec<(String, Vec<usize>)> =
            model.named_tensors().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
        let count = read_u64(&mut r)? as usize;
        if count != expected.len() {
            return Err(Error::ModelFormat(format!("expected {} tensors, file has {count}", expected.len())));
        }
        for (want_name, want_shape) in expected {
            let name = read_string(&mut r)?;
            if name != want_name {
                return Err(Error::ModelFormat(format!("expected tensor `{want_name}`, found `{name}`")));
            }
            let rank = read_u64(&mut r)? as usize;
            if rank != want_shape.len() {
                return Err(Error::ModelFormat(format!("`{name}`: rank {rank}, expected {}", want_shape.len())));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut r)? as usize);
            }
            if shape != want_shape {
                return Err(Error::ModelFormat(format!("`{name}`: shape {shape:?} does not match {want_shape:?}")));
            }
            let len: usize = shape.iter().product();
            let mut raw = vec![0u8; len * 8];
            read_exact(&mut r, &mut raw)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            model.assign(&name, Tensor::from_vec(&shape, data)?)?;
        }
        model.mode = Mode::Eval;
        Ok(model)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    fn assign(&mut self, qualified: &str, value: Tensor) -> Result<()> {
        let mut parts = qualified.splitn(3, '.');
        let (Some(idx), Some(_), Some(name)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::ModelFormat(format!("bad tensor name `{qualified}`")));
        };
        let idx: usize = idx.parse().map_err(|_| Error::ModelFormat(format!("bad tensor name `{qualified}`")))?;
        let layer = &mut self.layers[idx];
        if let Some(p) = layer.params_mut().into_iter().find(|p| p.name == name) {
            return p.set_value(value);
        }
        layer.set_buffer(name, value)
    }
}

const MAGIC: &[u8; 4] = b"OFW1";

fn write_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_bytes(w: &mut impl Write, b: &[u8]) -> std::io::Result<()> {
    write_u64(w, b.len() as u64)?;
    w.write_all(b)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::ModelFormat(format!("truncated container: {e}")))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string(r: &mut impl Read) -> Result<String> {
    let len = read_u64(r)? as usize;
    if len > 1 << 16 {
        return Err(Error::ModelFormat(format!("implausible name length {len}")));
    }
    let mut b = vec![0u8; len];
    read_exact(r, &mut b)?;
    String::from_utf8(b).map_err(|_| Error::ModelFormat("name is not utf-8".into()))
}
