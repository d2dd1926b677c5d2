//! Versioned binary dataset container.
//!
//! Layout: magic "TGDS", format version, a flat key=value dump of the corpus
//! config (with its FNV-64 digest), per-utterance records (fixed-width
//! little-endian integers, doubles for features), and a trailing CRC-32 over
//! everything. Loads verify magic, version, digest consistency, and CRC, so
//! a corrupted byte is a checksum error rather than a silent misparse.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Result, TgError};
use crate::tensor::Tensor;
use crate::util::{check_crc_trailer, fnv1a64, ByteReader, ByteWriter};

use super::{CorpusConfig, Dataset, LanguageConfig, Utterance};

const MAGIC: u32 = 0x5447_4453; // "TGDS"
const VERSION: u32 = 1;

/// Flat, canonical text form of a corpus config (sorted keys; languages by
/// declared order under an index prefix). Round-trips exactly: floats use
/// Rust's shortest-roundtrip formatting.
pub(crate) fn corpus_config_to_kv(cfg: &CorpusConfig) -> String {
    let mut s = String::new();
    s.push_str(&format!("audio_noise={:?}\n", cfg.audio_noise));
    s.push_str(&format!("embed_dim={}\n", cfg.embed_dim));
    s.push_str(&format!("feature_bins={}\n", cfg.feature_bins));
    s.push_str(&format!("frames_per_token={}\n", cfg.frames_per_token));
    s.push_str(&format!("max_len={}\n", cfg.max_len));
    s.push_str(&format!("min_len={}\n", cfg.min_len));
    s.push_str(&format!("n_symbols={}\n", cfg.n_symbols));
    s.push_str(&format!("n_test={}\n", cfg.n_test));
    s.push_str(&format!("n_train={}\n", cfg.n_train));
    s.push_str(&format!("seed={}\n", cfg.seed));
    for (i, l) in cfg.languages.iter().enumerate() {
        s.push_str(&format!("lang.{i}.id={}\n", l.lang_id));
        s.push_str(&format!("lang.{i}.noise_rate={:?}\n", l.noise_rate));
        s.push_str(&format!("lang.{i}.offset_scale={:?}\n", l.offset_scale));
        s.push_str(&format!("lang.{i}.swap_rate={:?}\n", l.swap_rate));
    }
    s
}

pub(crate) fn corpus_config_from_kv(text: &str) -> Result<CorpusConfig> {
    let mut map: BTreeMap<&str, &str> = BTreeMap::new();
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| TgError::Format(format!("corpus config: bad line {line:?}")))?;
        map.insert(k, v);
    }
    let get = |k: &str| -> Result<&str> {
        map.get(k)
            .copied()
            .ok_or_else(|| TgError::Format(format!("corpus config: missing key {k}")))
    };
    fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| TgError::Format(format!("corpus config: bad value for {k}: {v:?}")))
    }

    let mut cfg = CorpusConfig {
        audio_noise: num("audio_noise", get("audio_noise")?)?,
        embed_dim: num("embed_dim", get("embed_dim")?)?,
        feature_bins: num("feature_bins", get("feature_bins")?)?,
        frames_per_token: num("frames_per_token", get("frames_per_token")?)?,
        max_len: num("max_len", get("max_len")?)?,
        min_len: num("min_len", get("min_len")?)?,
        n_symbols: num("n_symbols", get("n_symbols")?)?,
        n_test: num("n_test", get("n_test")?)?,
        n_train: num("n_train", get("n_train")?)?,
        seed: num("seed", get("seed")?)?,
        languages: Vec::new(),
    };
    let mut i = 0;
    while let Some(id) = map.get(format!("lang.{i}.id").as_str()) {
        cfg.languages.push(LanguageConfig {
            lang_id: id.to_string(),
            noise_rate: num("noise_rate", get(&format!("lang.{i}.noise_rate"))?)?,
            offset_scale: num("offset_scale", get(&format!("lang.{i}.offset_scale"))?)?,
            swap_rate: num("swap_rate", get(&format!("lang.{i}.swap_rate"))?)?,
        });
        i += 1;
    }
    Ok(cfg)
}

fn write_utterance(w: &mut ByteWriter, u: &Utterance) {
    w.u64(u.id);
    w.u32_slice(&u.target);
    let shape = u.audio.shape();
    w.u64(shape[0] as u64);
    w.u64(shape[1] as u64);
    for &v in u.audio.data() {
        w.f64(v);
    }
    w.u64(u.aux.len() as u64);
    for (lang, seq) in &u.aux {
        w.str(lang);
        w.u32_slice(seq);
    }
}

fn read_utterance(r: &mut ByteReader) -> Result<Utterance> {
    let id = r.u64()?;
    let target = r.u32_vec()?;
    let rows = r.u64()? as usize;
    let cols = r.u64()? as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(r.f64()?);
    }
    let audio = Tensor::new(vec![rows, cols], data)?;
    let n_langs = r.u64()? as usize;
    let mut aux = BTreeMap::new();
    for _ in 0..n_langs {
        let lang = r.str()?;
        let seq = r.u32_vec()?;
        aux.insert(lang, seq);
    }
    Ok(Utterance {
        id,
        audio,
        target,
        aux,
    })
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = ByteWriter::new();
    w.u32(MAGIC);
    w.u32(VERSION);
    let cfg_kv = corpus_config_to_kv(&ds.config);
    w.u64(fnv1a64(cfg_kv.as_bytes()));
    w.str(&cfg_kv);
    w.u64(ds.train.len() as u64);
    for u in &ds.train {
        write_utterance(&mut w, u);
    }
    w.u64(ds.test.len() as u64);
    for u in &ds.test {
        write_utterance(&mut w, u);
    }
    std::fs::write(path, w.finish_with_crc())?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    let what = format!("dataset {}", path.display());
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
    let digest = r.u64()?;
    let cfg_kv = r.str()?;
    if digest != fnv1a64(cfg_kv.as_bytes()) {
        return Err(TgError::Checksum(format!("{what}: config digest mismatch")));
    }
    let config = corpus_config_from_kv(&cfg_kv)?;
    let n_train = r.u64()? as usize;
    let mut train = Vec::with_capacity(n_train);
    for _ in 0..n_train {
        train.push(read_utterance(&mut r)?);
    }
    let n_test = r.u64()? as usize;
    let mut test = Vec::with_capacity(n_test);
    for _ in 0..n_test {
        test.push(read_utterance(&mut r)?);
    }
    if r.remaining() != 0 {
        return Err(TgError::Format(format!(
            "{what}: {} trailing bytes",
            r.remaining()
        )));
    }
    Ok(Dataset {
        config,
        train,
        test,
    })
}
