//! `CKPT1` checkpoints: a text manifest of metadata and tensor shapes
//! followed by little-endian `f32` payload, in manifest order.
//!
//! ```text
//! CKPT1
//! kind <kind>
//! meta <k>
//! <key>=<value>        (k lines)
//! tensors <m>
//! <name> <rows> <cols> (m lines)
//! <payload>
//! ```
//!
//! A ControlNet checkpoint records the SHA-256 of the expert checkpoint it
//! was trained against; loading refuses a different expert.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::container::{parse_field, read_file, write_file};
use crate::controlnet::ControlNetModel;
use crate::audio::encoder::{AudioEncoder, AudioEncoderConfig};
use crate::denoiser::{build_denoiser, DenoiserConfig, DenoiserModel};
use crate::error::{Error, Result};
use crate::metrics::extractor::{ExtractorConfig, FeatureExtractor};
use crate::params::Params;
use crate::tensor::Tensor;
use crate::training::{AdamW, AdamWConfig};

pub const MAGIC: &str = "CKPT1";
const KIND: &str = "checkpoint";
pub const EXPERT_HASH_KEY: &str = "expert_sha256";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

fn bad(detail: impl Into<String>) -> Error {
    Error::format(KIND, detail)
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            meta: BTreeMap::new(),
            tensors: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| bad(format!("missing metadata {key:?}")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        parse_field(KIND, key, self.get(key)?)
    }

    pub fn add_params(&mut self, prefix: &str, params: &Params) {
        for (name, t) in params.iter() {
            self.tensors.push((format!("{prefix}{name}"), t.clone()));
        }
    }

    /// Copies every `prefix`-ed tensor into `template`, which must contain
    /// exactly the same names and shapes.
    pub fn fill_params(&self, prefix: &str, template: &mut Params) -> Result<()> {
        let mut found = 0;
        for (name, t) in &self.tensors {
            let Some(local) = name.strip_prefix(prefix) else { continue };
            let Some(i) = template.position(local) else {
                return Err(Error::Checkpoint(format!("unexpected tensor {name}")));
            };
            let slot = &mut template.tensors_mut()[i];
            if slot.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} is {:?}, model expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
            found += 1;
        }
        if found != template.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {found} of {} tensors under {prefix:?}",
                template.len()
            )));
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut head = format!("{MAGIC}\nkind {}\nmeta {}\n", self.kind, self.meta.len());
        for (k, v) in &self.meta {
            debug_assert!(!k.contains('=') && !k.contains('\n') && !v.contains('\n'));
            head.push_str(&format!("{k}={v}\n"));
        }
        head.push_str(&format!("tensors {}\n", self.tensors.len()));
        for (name, t) in &self.tensors {
            head.push_str(&format!("{name} {} {}\n", t.rows(), t.cols()));
        }
        let mut out = head.into_bytes();
        for (_, t) in &self.tensors {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut line = || -> Result<String> {
            let rest = &bytes[pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("truncated header"))?;
            let s = std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not UTF-8"))?;
            pos += end + 1;
            Ok(s.to_string())
        };
        let magic = line()?;
        if magic != MAGIC {
            return Err(bad(format!("bad magic {magic:?}, expected {MAGIC:?}")));
        }
        let kind = line()?
            .strip_prefix("kind ")
            .ok_or_else(|| bad("missing kind line"))?
            .to_string();
        let count = |l: String, what: &str| -> Result<usize> {
            let n = l
                .strip_prefix(what)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| bad(format!("missing {what} line")))?;
            parse_field(KIND, what, n)
        };
        let k = count(line()?, "meta")?;
        let mut meta = BTreeMap::new();
        for _ in 0..k {
            let l = line()?;
            let (key, value) = l.split_once('=').ok_or_else(|| bad(format!("bad metadata line {l:?}")))?;
            meta.insert(key.to_string(), value.to_string());
        }
        let m = count(line()?, "tensors")?;
        let mut shapes = Vec::with_capacity(m);
        for _ in 0..m {
            let l = line()?;
            let parts: Vec<&str> = l.split(' ').collect();
            if parts.len() != 3 {
                return Err(bad(format!("bad tensor line {l:?}")));
            }
            let r: usize = parse_field(KIND, "rows", parts[1])?;
            let c: usize = parse_field(KIND, "cols", parts[2])?;
            shapes.push((parts[0].to_string(), r, c));
        }
        let payload = &bytes[pos..];
        let expected: usize = shapes.iter().map(|(_, r, c)| r * c * 4).sum();
        if payload.len() != expected {
            return Err(bad(format!(
                "payload has {} bytes, manifest describes {expected}",
                payload.len()
            )));
        }
        let mut off = 0;
        let mut tensors = Vec::with_capacity(m);
        for (name, r, c) in shapes {
            let data: Vec<f64> = payload[off..off + r * c * 4]
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
                .collect();
            off += r * c * 4;
            tensors.push((name, Tensor::from_vec(r, c, data)?));
        }
        Ok(Self { kind, meta, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn put_denoiser_config(c: &mut Checkpoint, cfg: &DenoiserConfig) {
    c.set("n_layers", cfg.n_layers);
    c.set("d_model", cfg.d_model);
    c.set("n_heads", cfg.n_heads);
    c.set("d_heads", cfg.d_heads);
    c.set("ff_multiplier", cfg.ff_multiplier);
    c.set("input_dim", cfg.input_dim);
    c.set("max_frames", cfg.max_frames);
}

fn get_denoiser_config(c: &Checkpoint) -> Result<DenoiserConfig> {
    let cfg = DenoiserConfig {
        n_layers: c.parse("n_layers")?,
        d_model: c.parse("d_model")?,
        n_heads: c.parse("n_heads")?,
        d_heads: c.parse("d_heads")?,
        ff_multiplier: c.parse("ff_multiplier")?,
        input_dim: c.parse("input_dim")?,
        max_frames: c.parse("max_frames")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn put_optimizer(c: &mut Checkpoint, prefix: &str, opt: &AdamW, params: &Params) {
    c.set(&format!("{prefix}step"), opt.step);
    c.set(&format!("{prefix}lr"), opt.config.learning_rate);
    let (m, v) = opt.moments();
    for (i, name) in params.names().iter().enumerate() {
        c.tensors.push((format!("{prefix}m/{name}"), m[i].clone()));
        c.tensors.push((format!("{prefix}v/{name}"), v[i].clone()));
    }
}

fn get_optimizer(c: &Checkpoint, prefix: &str, config: AdamWConfig, params: &Params) -> Result<Option<AdamW>> {
    if !c.meta.contains_key(&format!("{prefix}step")) {
        return Ok(None);
    }
    let step: u64 = c.parse(&format!("{prefix}step"))?;
    let mut m = params.clone();
    let mut v = params.clone();
    c.fill_params(&format!("{prefix}m/"), &mut m)?;
    c.fill_params(&format!("{prefix}v/"), &mut v)?;
    Ok(Some(AdamW::restore(config, step, m.tensors().to_vec(), v.tensors().to_vec(), params)?))
}

pub fn denoiser_checkpoint(model: &DenoiserModel, opt: Option<&AdamW>) -> Checkpoint {
    let mut c = Checkpoint::new("denoiser");
    put_denoiser_config(&mut c, &model.config);
    c.add_params("", &model.params);
    if let Some(o) = opt {
        // Optimizer tensors live under a prefix that cannot collide with
        // parameter names, which never contain '/'.
        put_optimizer(&mut c, "opt/", o, &model.params);
    }
    c
}

fn model_tensors_only(c: &Checkpoint) -> Checkpoint {
    Checkpoint {
        kind: c.kind.clone(),
        meta: c.meta.clone(),
        tensors: c.tensors.iter().filter(|(n, _)| !n.contains('/')).cloned().collect(),
    }
}

pub fn load_denoiser(c: &Checkpoint) -> Result<DenoiserModel> {
    c.expect_kind("denoiser")?;
    let cfg = get_denoiser_config(c)?;
    let mut model = build_denoiser(cfg, 0)?;
    model_tensors_only(c).fill_params("", &mut model.params)?;
    Ok(model)
}

pub fn load_denoiser_optimizer(c: &Checkpoint, config: AdamWConfig, model: &DenoiserModel) -> Result<Option<AdamW>> {
    get_optimizer(c, "opt/", config, &model.params)
}

/// ControlNet checkpoint bound to the expert whose encoded bytes hash to `expert_sha256`.
pub fn controlnet_checkpoint(
    cnet: &ControlNetModel,
    expert_sha256: &str,
    opt: Option<&crate::training::ControlNetOptimizer>,
) -> Checkpoint {
    let mut c = Checkpoint::new("controlnet");
    put_denoiser_config(&mut c, cnet.config());
    c.set("n_mels", cnet.audio.config.n_mels);
    c.set("audio_hidden", cnet.audio.config.hidden);
    c.set("audio_kernel", cnet.audio.config.kernel);
    c.set(EXPERT_HASH_KEY, expert_sha256);
    c.add_params("copy:", &cnet.copy.params);
    c.add_params("moge:", &cnet.moge);
    c.add_params("audio:", &cnet.audio.params);
    if let Some(o) = opt {
        put_optimizer(&mut c, "opt/copy/", &o.copy, &cnet.copy.params);
        put_optimizer(&mut c, "opt/moge/", &o.moge, &cnet.moge);
        put_optimizer(&mut c, "opt/audio/", &o.audio, &cnet.audio.params);
    }
    c
}

/// Loads a ControlNet, refusing it unless it was trained against an expert
/// checkpoint with hash `expert_sha256` and matching architecture.
pub fn load_controlnet(c: &Checkpoint, expert: &DenoiserModel, expert_sha256: &str) -> Result<ControlNetModel> {
    c.expect_kind("controlnet")?;
    let recorded = c.get(EXPERT_HASH_KEY)?;
    if recorded != expert_sha256 {
        return Err(Error::Checkpoint(format!(
            "ControlNet was trained against expert {recorded}, not {expert_sha256}"
        )));
    }
    let cfg = get_denoiser_config(c)?;
    if cfg != expert.config {
        return Err(Error::Checkpoint("ControlNet and expert configurations differ".into()));
    }
    let audio_cfg = AudioEncoderConfig {
        n_mels: c.parse("n_mels")?,
        hidden: c.parse("audio_hidden")?,
        d_model: cfg.d_model,
        kernel: c.parse("audio_kernel")?,
    };
    let mut cnet = ControlNetModel::from_expert(expert, audio_cfg.n_mels, 0)?;
    cnet.audio = AudioEncoder::zeros(audio_cfg);
    let plain = model_tensors_only(c);
    plain.fill_params("copy:", &mut cnet.copy.params)?;
    plain.fill_params("moge:", &mut cnet.moge)?;
    plain.fill_params("audio:", &mut cnet.audio.params)?;
    Ok(cnet)
}

pub fn load_controlnet_optimizer(
    c: &Checkpoint,
    config: AdamWConfig,
    cnet: &ControlNetModel,
) -> Result<Option<crate::training::ControlNetOptimizer>> {
    let copy = get_optimizer(c, "opt/copy/", config, &cnet.copy.params)?;
    let moge = get_optimizer(c, "opt/moge/", config, &cnet.moge)?;
    let audio = get_optimizer(c, "opt/audio/", config, &cnet.audio.params)?;
    Ok(match (copy, moge, audio) {
        (Some(copy), Some(moge), Some(audio)) => Some(crate::training::ControlNetOptimizer { copy, moge, audio }),
        _ => None,
    })
}

pub fn extractor_checkpoint(fe: &FeatureExtractor) -> Checkpoint {
    let mut c = Checkpoint::new("extractor");
    let cfg = &fe.config;
    c.set("input_dim", cfg.input_dim);
    c.set("hidden", cfg.hidden);
    c.set("latent_dim", cfg.latent_dim);
    c.set("kernel", cfg.kernel);
    c.set("max_frames", cfg.max_frames);
    c.add_params("", &fe.params);
    c
}

pub fn load_extractor(c: &Checkpoint) -> Result<FeatureExtractor> {
    c.expect_kind("extractor")?;
    let cfg = ExtractorConfig {
        input_dim: c.parse("input_dim")?,
        hidden: c.parse("hidden")?,
        latent_dim: c.parse("latent_dim")?,
        kernel: c.parse("kernel")?,
        max_frames: c.parse("max_frames")?,
    };
    let mut fe = FeatureExtractor::new(cfg, 0)?;
    c.fill_params("", &mut fe.params)?;
    Ok(fe)
}
