//! Bit-exact checkpoint container and the model schemas stored in it.
//!
//! Layout: magic "PEFTCKPT", format version (u32 LE, currently 1), entry
//! count (u32 LE), then per entry: name length (u32 LE), UTF-8 name, dtype
//! tag (u8, 0 = f64), ndim (u8), dims (u32 LE each), and the raw
//! little-endian f64 payload. Every tensor survives a write/read cycle bit
//! for bit; values are validated finite on read.
//!
//! Scalar metadata (config integers, seeds) is stored as 1-element f64
//! entries under `meta.*` names. Seeds above 2^53 would lose precision in
//! that encoding; they are provenance only, since all weight tensors are
//! stored explicitly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::classifier::ClassifierHead;
use crate::encoder::{sinusoidal_table, EncoderConfig, EncoderWeights, LayerWeights};
use crate::error::{Error, Result};
use crate::features::pca::{PcaModel, Standardizer};
use crate::ndgrad::Tensor;
use crate::peft::{Adapter, AdaptedModel, AdapterConfig, AdapterVariant, LayerAdapters};
use crate::svm::{BinarySvm, MulticlassSvm, SvmPipeline};

const MAGIC: &[u8; 8] = b"PEFTCKPT";
const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;
/// Schema tags stored under `meta.kind`.
const KIND_ENCODER: f64 = 0.0;
const KIND_ADAPTED: f64 = 1.0;
const KIND_SVM: f64 = 2.0;
const KIND_ADAPTER: f64 = 3.0;

/// Ordered collection of uniquely named tensors.
#[derive(Clone, Debug, Default)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn push(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.get(name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate entry name '{name}'")));
        }
        self.entries.push((name.to_string(), tensor));
        Ok(())
    }

    pub fn push_scalar(&mut self, name: &str, value: f64) -> Result<()> {
        self.push(name, Tensor::scalar(value))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry '{name}'")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let t = self.require(name)?;
        if t.len() != 1 {
            return Err(Error::Checkpoint(format!(
                "entry '{name}' has {} values, expected a scalar",
                t.len()
            )));
        }
        Ok(t.data()[0])
    }

    /// Scalar round-tripped as a count; rejects negatives and fractions.
    fn scalar_usize(&self, name: &str) -> Result<usize> {
        let v = self.scalar(name)?;
        if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
            return Err(Error::Checkpoint(format!(
                "entry '{name}' = {v} is not a valid count"
            )));
        }
        Ok(v as usize)
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let count: u32 = self
            .entries
            .len()
            .try_into()
            .map_err(|_| Error::Checkpoint("too many entries for the container".into()))?;
        out.write_all(&count.to_le_bytes())?;
        for (name, tensor) in &self.entries {
            let name_bytes = name.as_bytes();
            let name_len: u32 = name_bytes
                .len()
                .try_into()
                .map_err(|_| Error::Checkpoint(format!("entry name '{name}' too long")))?;
            out.write_all(&name_len.to_le_bytes())?;
            out.write_all(name_bytes)?;
            out.write_all(&[DTYPE_F64])?;
            let ndim: u8 = tensor.rank() as u8;
            out.write_all(&[ndim])?;
            for &d in tensor.shape() {
                let d: u32 = d.try_into().map_err(|_| {
                    Error::Checkpoint(format!("dimension {d} of '{name}' exceeds u32"))
                })?;
                out.write_all(&d.to_le_bytes())?;
            }
            let mut payload = Vec::with_capacity(tensor.len() * 8);
            for &v in tensor.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&payload)?;
        }
        Ok(())
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            let hex: String = magic.iter().map(|b| format!("{b:02x}")).collect();
            return Err(Error::Checkpoint(format!(
                "bad magic 0x{hex}, not a checkpoint container"
            )));
        }
        let version = read_u32(input)?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported container version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let count = read_u32(input)? as usize;
        let mut ckpt = Checkpoint::new();
        for _ in 0..count {
            let name_len = read_u32(input)? as usize;
            if name_len > 4096 {
                return Err(Error::Checkpoint(format!(
                    "entry name length {name_len} is implausible; file corrupt?"
                )));
            }
            let mut name_bytes = vec![0u8; name_len];
            input.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|e| Error::Checkpoint(format!("entry name not UTF-8: {e}")))?;
            let dtype = read_u8(input)?;
            if dtype != DTYPE_F64 {
                return Err(Error::Checkpoint(format!(
                    "entry '{name}' has unknown dtype tag {dtype}"
                )));
            }
            let ndim = read_u8(input)? as usize;
            if !(1..=3).contains(&ndim) {
                return Err(Error::Checkpoint(format!(
                    "entry '{name}' has unsupported rank {ndim}"
                )));
            }
            let mut dims = Vec::with_capacity(ndim);
            let mut len = 1usize;
            for _ in 0..ndim {
                let d = read_u32(input)? as usize;
                len = len.checked_mul(d).ok_or_else(|| {
                    Error::Checkpoint(format!("entry '{name}' dimensions overflow"))
                })?;
                dims.push(d);
            }
            let mut payload = vec![0u8; len.checked_mul(8).ok_or_else(|| {
                Error::Checkpoint(format!("entry '{name}' payload overflows"))
            })?];
            input.read_exact(&mut payload)?;
            let data: Vec<f64> = payload
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect();
            let tensor = Tensor::new(&dims, data)
                .map_err(|e| Error::Checkpoint(format!("entry '{name}': {e}")))?;
            ckpt.push(&name, tensor)?;
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut input = BufReader::new(File::open(path)?);
        let ckpt = Self::read_from(&mut input)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Ok(ckpt)
    }
}

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u8(input: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    input.read_exact(&mut b)?;
    Ok(b[0])
}

fn require_kind(ckpt: &Checkpoint, kind: f64, what: &str) -> Result<()> {
    let got = ckpt.scalar("meta.kind")?;
    if got != kind {
        return Err(Error::Checkpoint(format!(
            "container holds schema tag {got}, expected {what}"
        )));
    }
    Ok(())
}

fn push_encoder_meta(ckpt: &mut Checkpoint, cfg: &EncoderConfig) -> Result<()> {
    ckpt.push_scalar("meta.n_layers", cfg.n_layers as f64)?;
    ckpt.push_scalar("meta.n_heads", cfg.n_heads as f64)?;
    ckpt.push_scalar("meta.d_model", cfg.d_model as f64)?;
    ckpt.push_scalar("meta.d_ff", cfg.d_ff as f64)?;
    ckpt.push_scalar("meta.n_mels", cfg.n_mels as f64)?;
    ckpt.push_scalar("meta.max_frames", cfg.max_frames as f64)?;
    ckpt.push_scalar("meta.seed", cfg.seed as f64)
}

fn encoder_meta(ckpt: &Checkpoint) -> Result<EncoderConfig> {
    let cfg = EncoderConfig {
        n_layers: ckpt.scalar_usize("meta.n_layers")?,
        n_heads: ckpt.scalar_usize("meta.n_heads")?,
        d_model: ckpt.scalar_usize("meta.d_model")?,
        d_ff: ckpt.scalar_usize("meta.d_ff")?,
        n_mels: ckpt.scalar_usize("meta.n_mels")?,
        max_frames: ckpt.scalar_usize("meta.max_frames")?,
        seed: ckpt.scalar("meta.seed")? as u64,
    };
    cfg.validate()
        .map_err(|e| Error::Checkpoint(format!("stored encoder config invalid: {e}")))?;
    Ok(cfg)
}

fn push_base_tensors(ckpt: &mut Checkpoint, w: &EncoderWeights) -> Result<()> {
    ckpt.push("input_proj", w.input_proj.clone())?;
    for (l, lw) in w.layers.iter().enumerate() {
        ckpt.push(&format!("layers.{l}.wq"), lw.wq.clone())?;
        ckpt.push(&format!("layers.{l}.wk"), lw.wk.clone())?;
        ckpt.push(&format!("layers.{l}.wv"), lw.wv.clone())?;
        ckpt.push(&format!("layers.{l}.wo"), lw.wo.clone())?;
        ckpt.push(&format!("layers.{l}.w1"), lw.w1.clone())?;
        ckpt.push(&format!("layers.{l}.b1"), lw.b1.clone())?;
        ckpt.push(&format!("layers.{l}.w2"), lw.w2.clone())?;
        ckpt.push(&format!("layers.{l}.b2"), lw.b2.clone())?;
        ckpt.push(&format!("layers.{l}.ln1_gamma"), lw.ln1_gamma.clone())?;
        ckpt.push(&format!("layers.{l}.ln1_beta"), lw.ln1_beta.clone())?;
        ckpt.push(&format!("layers.{l}.ln2_gamma"), lw.ln2_gamma.clone())?;
        ckpt.push(&format!("layers.{l}.ln2_beta"), lw.ln2_beta.clone())?;
    }
    Ok(())
}

fn checked(name: &str, tensor: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if tensor.shape() != shape {
        return Err(Error::Checkpoint(format!(
            "entry '{name}' has shape {:?}, expected {shape:?}",
            tensor.shape()
        )));
    }
    Ok(tensor.clone())
}

fn base_tensors(ckpt: &Checkpoint, cfg: &EncoderConfig) -> Result<EncoderWeights> {
    let d = cfg.d_model;
    let grab = |name: &str, shape: &[usize]| -> Result<Tensor> {
        checked(name, ckpt.require(name)?, shape)
    };
    let input_proj = grab("input_proj", &[cfg.n_mels, d])?;
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        layers.push(LayerWeights {
            wq: grab(&format!("layers.{l}.wq"), &[d, d])?,
            wk: grab(&format!("layers.{l}.wk"), &[d, d])?,
            wv: grab(&format!("layers.{l}.wv"), &[d, d])?,
            wo: grab(&format!("layers.{l}.wo"), &[d, d])?,
            w1: grab(&format!("layers.{l}.w1"), &[d, cfg.d_ff])?,
            b1: grab(&format!("layers.{l}.b1"), &[cfg.d_ff])?,
            w2: grab(&format!("layers.{l}.w2"), &[cfg.d_ff, d])?,
            b2: grab(&format!("layers.{l}.b2"), &[d])?,
            ln1_gamma: grab(&format!("layers.{l}.ln1_gamma"), &[d])?,
            ln1_beta: grab(&format!("layers.{l}.ln1_beta"), &[d])?,
            ln2_gamma: grab(&format!("layers.{l}.ln2_gamma"), &[d])?,
            ln2_beta: grab(&format!("layers.{l}.ln2_beta"), &[d])?,
        });
    }
    Ok(EncoderWeights {
        input_proj,
        layers,
        // The table is a pure function of the config, so recomputing it is
        // cheaper than storing max_frames * d_model extra values.
        pos: sinusoidal_table(cfg.max_frames, d),
        cfg: cfg.clone(),
    })
}

pub fn encoder_to_checkpoint(w: &EncoderWeights) -> Result<Checkpoint> {
    let mut ckpt = Checkpoint::new();
    ckpt.push_scalar("meta.kind", KIND_ENCODER)?;
    push_encoder_meta(&mut ckpt, &w.cfg)?;
    push_base_tensors(&mut ckpt, w)?;
    Ok(ckpt)
}

pub fn encoder_from_checkpoint(ckpt: &Checkpoint) -> Result<EncoderWeights> {
    require_kind(ckpt, KIND_ENCODER, "a plain encoder")?;
    let cfg = encoder_meta(ckpt)?;
    base_tensors(ckpt, &cfg)
}

pub fn save_encoder(path: &Path, w: &EncoderWeights) -> Result<()> {
    encoder_to_checkpoint(w)?.save(path)
}

pub fn load_encoder(path: &Path) -> Result<EncoderWeights> {
    encoder_from_checkpoint(&Checkpoint::load(path)?)
}

fn push_adapter_payload(
    ckpt: &mut Checkpoint,
    model: &AdaptedModel,
    head: &ClassifierHead,
) -> Result<()> {
    let acfg = &model.adapter_cfg;
    let variant = match acfg.variant {
        AdapterVariant::Lora => 0.0,
        AdapterVariant::Dora => 1.0,
    };
    ckpt.push_scalar("meta.variant", variant)?;
    ckpt.push_scalar("meta.rank", acfg.rank as f64)?;
    ckpt.push_scalar("meta.scale", acfg.scale)?;
    ckpt.push_scalar("meta.init_stddev", acfg.init_stddev)?;
    ckpt.push_scalar("meta.n_classes", head.n_classes() as f64)?;
    for (l, ad) in model.layers.iter().enumerate() {
        for (t, adapter) in [("q", &ad.q), ("k", &ad.k), ("v", &ad.v)] {
            ckpt.push(&format!("adapters.{l}.{t}.a"), adapter.a.clone())?;
            ckpt.push(&format!("adapters.{l}.{t}.b"), adapter.b.clone())?;
            if let Some(m) = &adapter.m {
                ckpt.push(&format!("adapters.{l}.{t}.m"), m.clone())?;
            }
        }
    }
    ckpt.push("head.w", head.w.clone())?;
    ckpt.push("head.b", head.b.clone())?;
    Ok(())
}

pub fn adapted_to_checkpoint(model: &AdaptedModel, head: &ClassifierHead) -> Result<Checkpoint> {
    let mut ckpt = Checkpoint::new();
    ckpt.push_scalar("meta.kind", KIND_ADAPTED)?;
    push_encoder_meta(&mut ckpt, &model.base.cfg)?;
    push_base_tensors(&mut ckpt, &model.base)?;
    push_adapter_payload(&mut ckpt, model, head)?;
    Ok(ckpt)
}

fn adapter_payload(
    ckpt: &Checkpoint,
    cfg: &EncoderConfig,
) -> Result<(AdapterConfig, Vec<LayerAdapters>, ClassifierHead)> {
    let variant = match ckpt.scalar("meta.variant")? {
        v if v == 0.0 => AdapterVariant::Lora,
        v if v == 1.0 => AdapterVariant::Dora,
        v => return Err(Error::Checkpoint(format!("unknown adapter variant tag {v}"))),
    };
    let acfg = AdapterConfig {
        variant,
        rank: ckpt.scalar_usize("meta.rank")?,
        scale: ckpt.scalar("meta.scale")?,
        init_stddev: ckpt.scalar("meta.init_stddev")?,
    };
    acfg.validate(cfg.d_model, cfg.d_model)
        .map_err(|e| Error::Checkpoint(format!("stored adapter config invalid: {e}")))?;
    let d = cfg.d_model;
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let get = |t: &str| -> Result<Adapter> {
            let a = checked(
                &format!("adapters.{l}.{t}.a"),
                ckpt.require(&format!("adapters.{l}.{t}.a"))?,
                &[acfg.rank, d],
            )?;
            let b = checked(
                &format!("adapters.{l}.{t}.b"),
                ckpt.require(&format!("adapters.{l}.{t}.b"))?,
                &[d, acfg.rank],
            )?;
            let m = match variant {
                AdapterVariant::Lora => None,
                AdapterVariant::Dora => Some(checked(
                    &format!("adapters.{l}.{t}.m"),
                    ckpt.require(&format!("adapters.{l}.{t}.m"))?,
                    &[d],
                )?),
            };
            Ok(Adapter { a, b, m })
        };
        layers.push(LayerAdapters {
            q: get("q")?,
            k: get("k")?,
            v: get("v")?,
        });
    }
    let n_classes = ckpt.scalar_usize("meta.n_classes")?;
    let head = ClassifierHead {
        w: checked("head.w", ckpt.require("head.w")?, &[d, n_classes])?,
        b: checked("head.b", ckpt.require("head.b")?, &[n_classes])?,
    };
    Ok((acfg, layers, head))
}

pub fn adapted_from_checkpoint(ckpt: &Checkpoint) -> Result<(AdaptedModel, ClassifierHead)> {
    require_kind(ckpt, KIND_ADAPTED, "an adapted model")?;
    let cfg = encoder_meta(ckpt)?;
    let base = base_tensors(ckpt, &cfg)?;
    let (adapter_cfg, layers, head) = adapter_payload(ckpt, &cfg)?;
    Ok((AdaptedModel { base, adapter_cfg, layers }, head))
}

/// Adapter-only container: the factors, magnitudes, and head, plus the
/// encoder config they were trained against. Base weights stay out, so one
/// base checkpoint can serve any number of adapters.
pub fn adapter_only_to_checkpoint(
    model: &AdaptedModel,
    head: &ClassifierHead,
) -> Result<Checkpoint> {
    let mut ckpt = Checkpoint::new();
    ckpt.push_scalar("meta.kind", KIND_ADAPTER)?;
    push_encoder_meta(&mut ckpt, &model.base.cfg)?;
    push_adapter_payload(&mut ckpt, model, head)?;
    Ok(ckpt)
}

/// Reattaches a stored adapter to `base`. The config recorded next to the
/// adapter must match the base exactly; anything else is a caller error.
pub fn adapter_only_from_checkpoint(
    ckpt: &Checkpoint,
    base: EncoderWeights,
) -> Result<(AdaptedModel, ClassifierHead)> {
    require_kind(ckpt, KIND_ADAPTER, "an adapter")?;
    let cfg = encoder_meta(ckpt)?;
    if cfg != base.cfg {
        return Err(Error::Config(format!(
            "adapter expects encoder {cfg:?} but the base holds {:?}",
            base.cfg
        )));
    }
    let (adapter_cfg, layers, head) = adapter_payload(ckpt, &cfg)?;
    Ok((AdaptedModel { base, adapter_cfg, layers }, head))
}

pub fn save_adapter_only(path: &Path, model: &AdaptedModel, head: &ClassifierHead) -> Result<()> {
    adapter_only_to_checkpoint(model, head)?.save(path)
}

pub fn load_adapter_only(path: &Path, base: EncoderWeights) -> Result<(AdaptedModel, ClassifierHead)> {
    adapter_only_from_checkpoint(&Checkpoint::load(path)?, base)
}

pub fn save_adapted(path: &Path, model: &AdaptedModel, head: &ClassifierHead) -> Result<()> {
    adapted_to_checkpoint(model, head)?.save(path)
}

pub fn load_adapted(path: &Path) -> Result<(AdaptedModel, ClassifierHead)> {
    adapted_from_checkpoint(&Checkpoint::load(path)?)
}

pub fn svm_to_checkpoint(pipeline: &SvmPipeline) -> Result<Checkpoint> {
    let mut ckpt = Checkpoint::new();
    ckpt.push_scalar("meta.kind", KIND_SVM)?;
    ckpt.push_scalar("meta.n_classes", pipeline.svm.n_classes() as f64)?;
    ckpt.push_scalar("meta.with_pca", if pipeline.pca.is_some() { 1.0 } else { 0.0 })?;
    ckpt.push("standardizer.mean", pipeline.standardizer.mean.clone())?;
    ckpt.push("standardizer.std", pipeline.standardizer.std.clone())?;
    if let Some(pca) = &pipeline.pca {
        ckpt.push("pca.mean", pca.mean.clone())?;
        ckpt.push("pca.components", pca.components.clone())?;
        ckpt.push("pca.explained_variance", pca.explained_variance.clone())?;
    }
    for (c, svm) in pipeline.svm.class_svms.iter().enumerate() {
        ckpt.push(&format!("svm.{c}.support"), svm.support.clone())?;
        ckpt.push(&format!("svm.{c}.coeffs"), svm.coeffs.clone())?;
        ckpt.push_scalar(&format!("svm.{c}.bias"), svm.bias)?;
        ckpt.push_scalar(&format!("svm.{c}.gamma"), svm.gamma)?;
    }
    Ok(ckpt)
}

pub fn svm_from_checkpoint(ckpt: &Checkpoint) -> Result<SvmPipeline> {
    require_kind(ckpt, KIND_SVM, "an SVM pipeline")?;
    let n_classes = ckpt.scalar_usize("meta.n_classes")?;
    let standardizer = Standardizer {
        mean: ckpt.require("standardizer.mean")?.clone(),
        std: ckpt.require("standardizer.std")?.clone(),
    };
    let pca = if ckpt.scalar("meta.with_pca")? == 1.0 {
        Some(PcaModel {
            mean: ckpt.require("pca.mean")?.clone(),
            components: ckpt.require("pca.components")?.clone(),
            explained_variance: ckpt.require("pca.explained_variance")?.clone(),
        })
    } else {
        None
    };
    let mut class_svms = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        class_svms.push(BinarySvm {
            support: ckpt.require(&format!("svm.{c}.support"))?.clone(),
            coeffs: ckpt.require(&format!("svm.{c}.coeffs"))?.clone(),
            bias: ckpt.scalar(&format!("svm.{c}.bias"))?,
            gamma: ckpt.scalar(&format!("svm.{c}.gamma"))?,
        });
    }
    Ok(SvmPipeline {
        standardizer,
        pca,
        svm: MulticlassSvm { class_svms },
    })
}

pub fn save_svm(path: &Path, pipeline: &SvmPipeline) -> Result<()> {
    svm_to_checkpoint(pipeline)?.save(path)
}

pub fn load_svm(path: &Path) -> Result<SvmPipeline> {
    svm_from_checkpoint(&Checkpoint::load(path)?)
}
