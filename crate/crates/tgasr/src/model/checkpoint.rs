//! Checkpoints: full parameter set, stage tag, frozen manifest, optimizer
//! state, and step counter, with a self-describing binary container.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Result, TgError};
use crate::rng::SeedRng;
use crate::tensor::{ParamSet, Tensor};
use crate::util::{check_crc_trailer, ByteReader, ByteWriter};

use super::{init_pgca_params, init_stage1_params, FusionMode, ModelConfig};

const MAGIC: u32 = 0x5447_434B; // "TGCK"
const VERSION: u32 = 1;

/// Training stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
}

impl Stage {
    pub fn as_u8(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            other => Err(TgError::Format(format!("unknown stage tag {other}"))),
        }
    }
}

/// AdamW accumulator state: first/second moments per trainable parameter
/// plus the shared step count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptState {
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
    pub t: u64,
}

impl OptState {
    /// Zero-initialized moments mirroring the trainable parameters' shapes.
    pub fn zeros_for(params: &ParamSet, trainable: &[String]) -> Result<Self> {
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for name in trainable {
            let n = params.get(name)?.numel();
            m.insert(name.clone(), vec![0.0; n]);
            v.insert(name.clone(), vec![0.0; n]);
        }
        Ok(Self { m, v, t: 0 })
    }
}

/// Which parameters a stage keeps frozen: stage 1 trains everything; stage 2
/// freezes every parameter that is not part of a fusion layer.
pub fn freeze_plan(stage: Stage, params: &ParamSet) -> Vec<String> {
    match stage {
        Stage::One => Vec::new(),
        Stage::Two => params
            .names()
            .filter(|n| !n.contains(".pgca."))
            .map(String::from)
            .collect(),
    }
}

/// Complete model state at a point in training.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub stage: Stage,
    pub params: ParamSet,
    /// Parameter names excluded from updates (sorted).
    pub frozen: Vec<String>,
    pub opt: OptState,
    pub step: u64,
}

impl ModelCheckpoint {
    /// Fresh unfused model (stage 1, everything trainable).
    pub fn init_stage1(config: &ModelConfig, rng: &SeedRng) -> Result<Self> {
        if config.fusion_mode != FusionMode::None {
            return Err(TgError::Invalid(
                "stage-1 checkpoint must use fusion mode none".into(),
            ));
        }
        let params = init_stage1_params(config, rng)?;
        let trainable: Vec<String> = params.names().map(String::from).collect();
        let opt = OptState::zeros_for(&params, &trainable)?;
        Ok(Self {
            config: config.clone(),
            stage: Stage::One,
            params,
            frozen: Vec::new(),
            opt,
            step: 0,
        })
    }

    /// Extend a stage-1 checkpoint with freshly initialized fusion layers;
    /// everything inherited is frozen, only fusion parameters train.
    pub fn to_stage2(&self, fused_config: &ModelConfig, rng: &SeedRng) -> Result<ModelCheckpoint> {
        if self.stage != Stage::One {
            return Err(TgError::Invalid(format!(
                "stage-2 must start from a stage-1 checkpoint, got stage {}",
                self.stage.as_u8()
            )));
        }
        if fused_config.fusion_mode == FusionMode::None {
            return Err(TgError::Invalid(
                "stage-2 requires a fused mode, got none".into(),
            ));
        }
        let arch_matches = fused_config.d == self.config.d
            && fused_config.feature_bins == self.config.feature_bins
            && fused_config.heads == self.config.heads
            && fused_config.d_ff == self.config.d_ff
            && fused_config.n_enc == self.config.n_enc
            && fused_config.n_dec == self.config.n_dec
            && fused_config.vocab_tgt == self.config.vocab_tgt;
        if !arch_matches {
            return Err(TgError::Invalid(
                "stage-2 config changes architecture dimensions".into(),
            ));
        }
        fused_config.validate()?;

        let mut params = self.params.clone();
        init_pgca_params(fused_config, &mut params, rng)?;
        let frozen = freeze_plan(Stage::Two, &params);
        let trainable: Vec<String> = params
            .names()
            .filter(|n| n.contains(".pgca."))
            .map(String::from)
            .collect();
        let opt = OptState::zeros_for(&params, &trainable)?;
        let ckpt = ModelCheckpoint {
            config: fused_config.clone(),
            stage: Stage::Two,
            params,
            frozen,
            opt,
            step: 0,
        };
        ckpt.check_manifest()?;
        Ok(ckpt)
    }

    /// Trainable parameter names (everything outside the frozen manifest).
    pub fn trainable(&self) -> Vec<String> {
        let frozen: std::collections::BTreeSet<&str> =
            self.frozen.iter().map(String::as_str).collect();
        self.params
            .names()
            .filter(|n| !frozen.contains(n))
            .map(String::from)
            .collect()
    }

    /// Stage-2 manifests must freeze exactly the non-fusion parameters.
    pub fn check_manifest(&self) -> Result<()> {
        match self.stage {
            Stage::One => {
                if !self.frozen.is_empty() {
                    return Err(TgError::Invalid(
                        "stage-1 checkpoint must not freeze parameters".into(),
                    ));
                }
            }
            Stage::Two => {
                let expect = freeze_plan(Stage::Two, &self.params);
                if self.frozen != expect {
                    return Err(TgError::Invalid(
                        "stage-2 frozen manifest must cover exactly the non-fusion parameters"
                            .into(),
                    ));
                }
                if !self.trainable().iter().all(|n| n.contains(".pgca.")) {
                    return Err(TgError::Invalid(
                        "stage-2 trainable set must be fusion parameters only".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn model_config_to_kv(cfg: &ModelConfig) -> String {
    let mut s = String::new();
    s.push_str(&format!("d={}\n", cfg.d));
    s.push_str(&format!("d_ff={}\n", cfg.d_ff));
    s.push_str(&format!("feature_bins={}\n", cfg.feature_bins));
    s.push_str(&format!("fusion_mode={}\n", cfg.fusion_mode));
    s.push_str(&format!("heads={}\n", cfg.heads));
    s.push_str(&format!("langs={}\n", cfg.langs.join(",")));
    s.push_str(&format!("max_t_s={}\n", cfg.max_t_s));
    s.push_str(&format!("max_t_y={}\n", cfg.max_t_y));
    s.push_str(&format!("n_dec={}\n", cfg.n_dec));
    s.push_str(&format!("n_enc={}\n", cfg.n_enc));
    s.push_str(&format!("vocab_tgt={}\n", cfg.vocab_tgt));
    s
}

pub(crate) fn model_config_from_kv(text: &str) -> Result<ModelConfig> {
    let mut map: BTreeMap<&str, &str> = BTreeMap::new();
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| TgError::Format(format!("model config: bad line {line:?}")))?;
        map.insert(k, v);
    }
    let get = |k: &str| -> Result<&str> {
        map.get(k)
            .copied()
            .ok_or_else(|| TgError::Format(format!("model config: missing key {k}")))
    };
    fn num(k: &str, v: &str) -> Result<usize> {
        v.parse()
            .map_err(|_| TgError::Format(format!("model config: bad value for {k}: {v:?}")))
    }
    let langs_raw = get("langs")?;
    let langs: Vec<String> = if langs_raw.is_empty() {
        Vec::new()
    } else {
        langs_raw.split(',').map(String::from).collect()
    };
    Ok(ModelConfig {
        d: num("d", get("d")?)?,
        d_ff: num("d_ff", get("d_ff")?)?,
        feature_bins: num("feature_bins", get("feature_bins")?)?,
        fusion_mode: FusionMode::parse(get("fusion_mode")?)?,
        heads: num("heads", get("heads")?)?,
        langs,
        max_t_s: num("max_t_s", get("max_t_s")?)?,
        max_t_y: num("max_t_y", get("max_t_y")?)?,
        n_dec: num("n_dec", get("n_dec")?)?,
        n_enc: num("n_enc", get("n_enc")?)?,
        vocab_tgt: num("vocab_tgt", get("vocab_tgt")?)?,
    })
}

/// Serialize: versioned header, config, named tensors as shape + raw
/// little-endian doubles, frozen manifest, optimizer state, step, CRC.
pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: &Path) -> Result<()> {
    let mut w = ByteWriter::new();
    w.u32(MAGIC);
    w.u32(VERSION);
    w.u8(ckpt.stage.as_u8());
    w.u64(ckpt.step);
    w.str(&model_config_to_kv(&ckpt.config));

    w.u64(ckpt.frozen.len() as u64);
    for name in &ckpt.frozen {
        w.str(name);
    }

    w.u64(ckpt.params.len() as u64);
    for (name, t) in ckpt.params.iter() {
        w.str(name);
        w.u64(t.shape().len() as u64);
        for &e in t.shape() {
            w.u64(e as u64);
        }
        for &v in t.data() {
            w.f64(v);
        }
    }

    w.u64(ckpt.opt.t);
    w.u64(ckpt.opt.m.len() as u64);
    for (name, m) in &ckpt.opt.m {
        let v = ckpt.opt.v.get(name).ok_or_else(|| {
            TgError::Invalid(format!("optimizer state missing second moment for {name}"))
        })?;
        w.str(name);
        w.f64_slice(m);
        w.f64_slice(v);
    }

    std::fs::write(path, w.finish_with_crc())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    let bytes = std::fs::read(path)?;
    let what = format!("checkpoint {}", path.display());
    let payload = check_crc_trailer(&bytes, &what)?;
    let mut r = ByteReader::new(payload, &what);

    let magic = r.u32()?;
    if magic != MAGIC {
        return Err(TgError::Format(format!(
            "{what}: bad magic {magic:08x}, expected {MAGIC:08x}"
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(TgError::Format(format!(
            "{what}: unsupported version {version} (supported: {VERSION})"
        )));
    }
    let stage = Stage::from_u8(r.u8()?)?;
    let step = r.u64()?;
    let config = model_config_from_kv(&r.str()?)?;

    let n_frozen = r.u64()? as usize;
    let mut frozen = Vec::with_capacity(n_frozen);
    for _ in 0..n_frozen {
        frozen.push(r.str()?);
    }

    let n_params = r.u64()? as usize;
    let mut params = ParamSet::new();
    for _ in 0..n_params {
        let name = r.str()?;
        let ndim = r.u64()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(r.f64()?);
        }
        params.insert(name, Tensor::new(shape, data)?);
    }

    let t = r.u64()?;
    let n_opt = r.u64()? as usize;
    let mut opt = OptState {
        t,
        ..OptState::default()
    };
    for _ in 0..n_opt {
        let name = r.str()?;
        let m = r.f64_vec()?;
        let v = r.f64_vec()?;
        opt.m.insert(name.clone(), m);
        opt.v.insert(name, v);
    }
    if r.remaining() != 0 {
        return Err(TgError::Format(format!(
            "{what}: {} trailing bytes",
            r.remaining()
        )));
    }

    let ckpt = ModelCheckpoint {
        config,
        stage,
        params,
        frozen,
        opt,
        step,
    };
    ckpt.check_manifest()?;
    Ok(ckpt)
}
