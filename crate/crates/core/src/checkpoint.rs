//! Binary model files. Little-endian throughout:
//!
//! ```text
//! "FVAE" u16:version str:preset arch
//! u32:layer_count { u8:role u8:kind header params }*
//! u8:has_decoder head preprocessor u32:n_classes str*
//! ```
//!
//! Strings are u32-length-prefixed UTF-8; tensors are `u32 rank, u64 dims,
//! f64 values`. Batch-norm running statistics are stored with the layer.

use std::path::Path;

use crate::classifiers::{Head, LbdDetector, LlcHead, TrainedModel};
use crate::data::{Preprocessor, ScalingSpec};
use crate::error::{Error, Result};
use crate::nn::{
    Activation, BatchNorm1D, Conv1DLayer, DenseLayer, Layer, Padding, Sequential,
    TransposedConv1DLayer,
};
use crate::tensor::Tensor;
use crate::vae::{Architecture, LayerType, VaeModel};

pub const MAGIC: &[u8; 4] = b"FVAE";
pub const VERSION: u16 = 1;

const ROLE_ENCODER: u8 = 0;
const ROLE_MU: u8 = 1;
const ROLE_LOGVAR: u8 = 2;
const ROLE_DECODER: u8 = 3;

const KIND_DENSE: u8 = 1;
const KIND_CONV: u8 = 2;
const KIND_TCONV: u8 = 3;
const KIND_BN: u8 = 4;

const HEAD_NONE: u8 = 0;
const HEAD_LLC: u8 = 1;
const HEAD_LBD: u8 = 2;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u32(&mut self, v: usize) {
        self.buf.extend_from_slice(&(v as u32).to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn floats(&mut self, v: &[f64]) {
        self.u32(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.shape().len());
        for &d in t.shape() {
            self.buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        t.data().iter().for_each(|&x| self.f64(x));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated checkpoint at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Format(format!("dimension {v} too large")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn count(&mut self, elem_bytes: usize) -> Result<usize> {
        let n = self.u32()?;
        if n.saturating_mul(elem_bytes) > self.buf.len() - self.pos {
            return Err(Error::Format(format!(
                "length {n} exceeds remaining checkpoint"
            )));
        }
        Ok(n)
    }

    fn floats(&mut self) -> Result<Vec<f64>> {
        let n = self.count(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    fn str(&mut self) -> Result<String> {
        let n = self.count(1)?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("invalid UTF-8 string".into()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.count(8)?;
        let shape = (0..rank).map(|_| self.u64()).collect::<Result<Vec<_>>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let len = match len {
            Some(n) if n.saturating_mul(8) <= self.buf.len() - self.pos => n,
            _ => {
                return Err(Error::Format(format!(
                    "tensor shape {shape:?} exceeds checkpoint"
                )))
            }
        };
        let data = (0..len).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
    }

    fn activation(&mut self) -> Result<Activation> {
        let t = self.u8()?;
        Activation::from_tag(t).ok_or_else(|| Error::Format(format!("unknown activation tag {t}")))
    }

    fn padding(&mut self) -> Result<Padding> {
        let t = self.u8()?;
        Padding::from_tag(t).ok_or_else(|| Error::Format(format!("unknown padding tag {t}")))
    }
}

fn write_layer(w: &mut Writer, role: u8, layer: &Layer) {
    w.u8(role);
    match layer {
        Layer::Dense(d) => write_dense(w, d),
        Layer::Conv(c) => {
            w.u8(KIND_CONV);
            w.u8(c.activation.tag());
            w.u8(c.padding.tag());
            w.u32(c.stride);
            w.tensor(&c.kernel.value);
            w.tensor(&c.bias.value);
        }
        Layer::TransposedConv(c) => {
            w.u8(KIND_TCONV);
            w.u8(c.activation.tag());
            w.u8(c.padding.tag());
            w.u32(c.stride);
            w.u32(c.target_len);
            w.tensor(&c.kernel.value);
            w.tensor(&c.bias.value);
        }
        Layer::BatchNorm(b) => {
            w.u8(KIND_BN);
            w.f64(b.momentum);
            w.f64(b.epsilon);
            w.tensor(&b.gamma.value);
            w.tensor(&b.beta.value);
            w.floats(&b.running_mean);
            w.floats(&b.running_var);
        }
    }
}

fn write_dense(w: &mut Writer, d: &DenseLayer) {
    w.u8(KIND_DENSE);
    w.u8(d.activation.tag());
    w.tensor(&d.weights.value);
    w.tensor(&d.bias.value);
}

fn read_layer(r: &mut Reader) -> Result<(u8, Layer)> {
    let role = r.u8()?;
    let kind = r.u8()?;
    let layer = match kind {
        KIND_DENSE => Layer::Dense(read_dense_body(r)?),
        KIND_CONV => {
            let act = r.activation()?;
            let pad = r.padding()?;
            let stride = r.u32()?;
            let (k, b) = (r.tensor()?, r.tensor()?);
            Layer::Conv(Conv1DLayer::from_parts(k, b, stride, pad, act)?)
        }
        KIND_TCONV => {
            let act = r.activation()?;
            let pad = r.padding()?;
            let stride = r.u32()?;
            let target = r.u32()?;
            let (k, b) = (r.tensor()?, r.tensor()?);
            Layer::TransposedConv(TransposedConv1DLayer::from_parts(
                k, b, stride, pad, target, act,
            )?)
        }
        KIND_BN => {
            let momentum = r.f64()?;
            let epsilon = r.f64()?;
            let gamma = r.tensor()?;
            let mut bn = BatchNorm1D::new(gamma.len());
            bn.gamma.value = gamma;
            bn.beta.value = r.tensor()?;
            bn.running_mean = r.floats()?;
            bn.running_var = r.floats()?;
            bn.momentum = momentum;
            bn.epsilon = epsilon;
            bn.validate()?;
            Layer::BatchNorm(bn)
        }
        k => return Err(Error::Format(format!("unknown layer kind {k}"))),
    };
    Ok((role, layer))
}

fn read_dense_body(r: &mut Reader) -> Result<DenseLayer> {
    let act = r.activation()?;
    let (w, b) = (r.tensor()?, r.tensor()?);
    DenseLayer::from_parts(w, b, act)
}

fn read_dense(r: &mut Reader) -> Result<DenseLayer> {
    match r.u8()? {
        KIND_DENSE => read_dense_body(r),
        k => Err(Error::Format(format!(
            "expected a dense layer, found kind {k}"
        ))),
    }
}

fn write_arch(w: &mut Writer, a: &Architecture) {
    w.u32(a.input_width);
    w.u8(match a.layer_type {
        LayerType::Conv => 0,
        LayerType::Dense => 1,
    });
    w.u32(a.kernels.len());
    a.kernels.iter().for_each(|&k| w.u32(k));
    a.strides.iter().for_each(|&s| w.u32(s));
    w.u32(a.channels);
    w.u8(u8::from(a.batch_norm));
}

fn read_arch(r: &mut Reader) -> Result<Architecture> {
    let input_width = r.u32()?;
    let layer_type = match r.u8()? {
        0 => LayerType::Conv,
        1 => LayerType::Dense,
        t => return Err(Error::Format(format!("unknown layer type {t}"))),
    };
    let n = r.count(8)?;
    let kernels = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let strides = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let channels = r.u32()?;
    let batch_norm = r.u8()? != 0;
    Ok(Architecture {
        input_width,
        layer_type,
        kernels,
        strides,
        channels,
        batch_norm,
    })
}

fn write_prep(w: &mut Writer, p: &Preprocessor) {
    w.u32(p.features.len());
    p.features.iter().for_each(|f| w.str(f));
    let pairs = |w: &mut Writer, v: &[(f64, f64)]| {
        w.u32(v.len());
        for &(a, b) in v {
            w.f64(a);
            w.f64(b);
        }
    };
    match &p.scaling {
        ScalingSpec::None => w.u8(0),
        ScalingSpec::MinMax(b) => {
            w.u8(1);
            pairs(w, b);
        }
        ScalingSpec::Standard {
            stats,
            allow_degenerate,
        } => {
            w.u8(2);
            w.u8(u8::from(*allow_degenerate));
            pairs(w, stats);
        }
        ScalingSpec::Log => w.u8(3),
    }
}

fn read_prep(r: &mut Reader) -> Result<Preprocessor> {
    let n = r.count(4)?;
    let features = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let pairs = |r: &mut Reader| -> Result<Vec<(f64, f64)>> {
        let n = r.count(16)?;
        (0..n).map(|_| Ok((r.f64()?, r.f64()?))).collect()
    };
    let scaling = match r.u8()? {
        0 => ScalingSpec::None,
        1 => ScalingSpec::MinMax(pairs(r)?),
        2 => {
            let allow_degenerate = r.u8()? != 0;
            ScalingSpec::Standard {
                stats: pairs(r)?,
                allow_degenerate,
            }
        }
        3 => ScalingSpec::Log,
        t => return Err(Error::Format(format!("unknown scaling tag {t}"))),
    };
    Ok(Preprocessor { features, scaling })
}

/// Serializes `model` to bytes.
pub fn to_bytes(model: &TrainedModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(MAGIC);
    w.u16(VERSION);
    w.str(&model.preset);
    write_arch(&mut w, &model.vae.arch);
    let vae = &model.vae;
    let dec = vae.decoder.as_ref().map_or(0, Sequential::len);
    w.u32(vae.encoder.len() + 2 + dec);
    vae.encoder
        .layers
        .iter()
        .for_each(|l| write_layer(&mut w, ROLE_ENCODER, l));
    w.u8(ROLE_MU);
    write_dense(&mut w, &vae.mu);
    w.u8(ROLE_LOGVAR);
    write_dense(&mut w, &vae.logvar);
    if let Some(d) = &vae.decoder {
        d.layers
            .iter()
            .for_each(|l| write_layer(&mut w, ROLE_DECODER, l));
    }
    w.u8(u8::from(vae.decoder.is_some()));
    match &model.head {
        Head::None => w.u8(HEAD_NONE),
        Head::Llc(h) => {
            w.u8(HEAD_LLC);
            write_dense(&mut w, &h.dense);
        }
        Head::Lbd(d) => {
            w.u8(HEAD_LBD);
            w.f64(d.w);
            w.f64(d.b);
        }
    }
    write_prep(&mut w, &model.prep);
    w.u32(model.classes.len());
    model.classes.iter().for_each(|c| w.str(c));
    w.buf
}

pub fn from_bytes(bytes: &[u8]) -> Result<TrainedModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a model checkpoint (bad magic)".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let preset = r.str()?;
    let arch = read_arch(&mut r)?;
    let count = r.count(2)?;
    let (mut enc, mut dec) = (Vec::new(), Vec::new());
    let (mut mu, mut logvar) = (None, None);
    for _ in 0..count {
        let (role, layer) = read_layer(&mut r)?;
        match (role, layer) {
            (ROLE_ENCODER, l) => enc.push(l),
            (ROLE_DECODER, l) => dec.push(l),
            (ROLE_MU, Layer::Dense(d)) => mu = Some(d),
            (ROLE_LOGVAR, Layer::Dense(d)) => logvar = Some(d),
            (role, _) => return Err(Error::Format(format!("unexpected layer for role {role}"))),
        }
    }
    let has_decoder = r.u8()? != 0;
    let missing = || Error::Format("checkpoint lacks latent layers".into());
    let vae = VaeModel {
        arch,
        encoder: Sequential::new(enc),
        mu: mu.ok_or_else(missing)?,
        logvar: logvar.ok_or_else(missing)?,
        decoder: has_decoder.then(|| Sequential::new(dec)),
    };
    let head = match r.u8()? {
        HEAD_NONE => Head::None,
        HEAD_LLC => Head::Llc(LlcHead {
            dense: read_dense(&mut r)?,
        }),
        HEAD_LBD => Head::Lbd(LbdDetector {
            w: r.f64()?,
            b: r.f64()?,
        }),
        t => return Err(Error::Format(format!("unknown head tag {t}"))),
    };
    let prep = read_prep(&mut r)?;
    let n = r.count(4)?;
    let classes = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    // A single zero row through every stage surfaces inconsistent geometry now.
    let probe = Tensor::zeros(&[1, vae.input_width()]);
    let (m, _) = vae
        .encode(&probe)
        .map_err(|e| Error::Format(format!("inconsistent layers: {e}")))?;
    if vae.decoder.is_some() {
        vae.decode(&m)
            .map_err(|e| Error::Format(format!("inconsistent decoder: {e}")))?;
    }
    if vae.input_width() != prep.width() {
        return Err(Error::Format(
            "preprocessor width does not match the model".into(),
        ));
    }
    Ok(TrainedModel {
        vae,
        head,
        preset,
        prep,
        classes,
    })
}

pub fn save(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<TrainedModel> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureSchema, TOP40_FEATURES};
    use crate::nn::Parameterized;
    use crate::rng::RngStream;

    fn model(layer_type: LayerType, head: Head) -> TrainedModel {
        let arch = Architecture {
            input_width: 40,
            layer_type,
            kernels: vec![5, 5, 5],
            strides: vec![1, 1, 1],
            channels: 3,
            batch_norm: true,
        };
        let mut vae = VaeModel::new(arch, &mut RngStream::new(4)).unwrap();
        // Non-default running statistics must survive too.
        let mut rng = RngStream::new(5);
        for l in &mut vae.encoder.layers {
            if let Layer::BatchNorm(b) = l {
                b.running_mean.iter_mut().for_each(|v| *v = rng.normal());
                b.running_var
                    .iter_mut()
                    .for_each(|v| *v = rng.uniform() + 0.1);
            }
        }
        let names: Vec<String> = TOP40_FEATURES.iter().map(|s| s.to_string()).collect();
        TrainedModel {
            vae,
            head,
            preset: "4b".into(),
            prep: Preprocessor {
                features: names.clone(),
                scaling: ScalingSpec::MinMax((0..40).map(|i| (i as f64, 1e300)).collect()),
            },
            classes: FeatureSchema::new(names, vec!["Benign".into(), "Malicious".into()])
                .unwrap()
                .classes()
                .to_vec(),
        }
    }

    fn bits(m: &TrainedModel) -> Vec<u64> {
        let mut v = Vec::new();
        m.vae.visit_params("", &mut |_, p| {
            v.extend(p.value.data().iter().map(|x| x.to_bits()))
        });
        v
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for lt in [LayerType::Conv, LayerType::Dense] {
            let head = Head::Llc(LlcHead::new(28, 2, &mut RngStream::new(6)).unwrap());
            let m = model(lt, head);
            let bytes = to_bytes(&m);
            let back = from_bytes(&bytes).unwrap();
            assert_eq!(bits(&m), bits(&back));
            assert_eq!(to_bytes(&back), bytes);
            assert_eq!(back.prep, m.prep);
            let x = RngStream::new(7).normal_tensor(&[4, 40]);
            assert_eq!(m.infer_scaled(&x).unwrap(), back.infer_scaled(&x).unwrap());
        }
    }

    #[test]
    fn lbd_head_and_detached_decoder() {
        let m = model(LayerType::Conv, Head::Lbd(LbdDetector { w: 1.5, b: -0.25 }));
        let back = from_bytes(&to_bytes(&m)).unwrap();
        assert!(matches!(back.head, Head::Lbd(d) if d.w == 1.5 && d.b == -0.25));
        let mut m = model(LayerType::Conv, Head::None);
        m.vae.detach_decoder();
        assert!(from_bytes(&to_bytes(&m)).unwrap().vae.decoder.is_none());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = to_bytes(&model(LayerType::Conv, Head::None));
        assert!(matches!(from_bytes(b"NOPE"), Err(Error::Format(_))));
        for cut in [3, 10, 100, bytes.len() - 1] {
            assert!(
                matches!(from_bytes(&bytes[..cut]), Err(Error::Format(_))),
                "cut {cut}"
            );
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(from_bytes(&extra), Err(Error::Format(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.fvae");
        let m = model(LayerType::Dense, Head::None);
        save(&m, &p).unwrap();
        assert_eq!(bits(&load(&p).unwrap()), bits(&m));
    }
}
