//! Frozen auxiliary-text embedder.
//!
//! Stands in for a pretrained multilingual text encoder: each language has a
//! fixed token embedding space derived deterministically from the corpus
//! seed, a sentence summary vector (mean of token embeddings), and a
//! corpus-level proximity metric (mean pairwise cosine of summary vectors).
//! No gradients ever flow into the embedder; its outputs enter graphs as
//! constants.

use crate::error::{Result, TgError};
use crate::rng::SeedRng;
use crate::tensor::Tensor;

pub type TokenSeq = Vec<u32>;

/// Scale applied to the fixed sinusoidal positional term. Token content has
/// unit-scale energy; positions get somewhat more so cross-attention can
/// key on them cleanly at desk-scale dimensions.
pub const POS_SCALE: f64 = 1.0;

/// One auxiliary language: a bijective token cipher over the target symbol
/// vocabulary, a substitution noise rate emulating translation quality, and
/// a fixed linear transform placing the language's embedding space at a
/// controlled distance from the target's.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxLanguageSpec {
    pub lang_id: String,
    pub vocab: usize,
    /// π_l: target symbol id -> this language's token id (bijection).
    pub token_map: Vec<u32>,
    /// p_l: per-position probability of substituting a wrong token.
    pub noise_rate: f64,
    /// Optional local-swap corruption rate; 0 disables (the default).
    pub swap_rate: f64,
    /// How far the embedding transform sits from the identity.
    pub offset_scale: f64,
    /// Fixed d×d transform applied to base embeddings.
    pub embed_transform: Tensor,
    /// Shared base lexical table, vocab×d. Identical across languages built
    /// from the same root stream.
    pub base_embed: Tensor,
}

impl AuxLanguageSpec {
    /// Construct a synthetic language. `root` must be the same stream for
    /// every language of one corpus so they share the base lexical space.
    /// The transform is I + offset_scale·R with R ~ N(0, 1/d) entries, so
    /// offset_scale directly measures relative distance from the target
    /// space. The token cipher is a seeded random permutation.
    pub fn synth(
        lang_id: &str,
        vocab: usize,
        dim: usize,
        noise_rate: f64,
        offset_scale: f64,
        swap_rate: f64,
        root: &SeedRng,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&noise_rate) || !(0.0..=1.0).contains(&swap_rate) {
            return Err(TgError::Invalid(format!(
                "language {lang_id}: rates must lie in [0,1]"
            )));
        }
        let base_embed = base_table(vocab, dim, root);
        let mut trng = root.split(&format!("aux.{lang_id}.transform"));
        let scale = offset_scale / (dim as f64).sqrt();
        let mut m = vec![0.0; dim * dim];
        for (i, v) in m.iter_mut().enumerate() {
            *v = scale * trng.normal();
            if i % (dim + 1) == 0 {
                *v += 1.0; // diagonal
            }
        }
        let mut crng = root.split(&format!("aux.{lang_id}.cipher"));
        let token_map: Vec<u32> = crng.permutation(vocab).iter().map(|&i| i as u32).collect();
        Self::new(
            lang_id,
            vocab,
            token_map,
            noise_rate,
            swap_rate,
            offset_scale,
            Tensor::new(vec![dim, dim], m)?,
            base_embed,
        )
    }

    /// The target language itself: identity cipher, no noise, identity
    /// transform. Used as the reference side of proximity measurements.
    pub fn target(vocab: usize, dim: usize, root: &SeedRng) -> Result<Self> {
        let mut eye = vec![0.0; dim * dim];
        for i in 0..dim {
            eye[i * dim + i] = 1.0;
        }
        Self::new(
            "target",
            vocab,
            (0..vocab as u32).collect(),
            0.0,
            0.0,
            0.0,
            Tensor::new(vec![dim, dim], eye)?,
            base_table(vocab, dim, root),
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        lang_id: &str,
        vocab: usize,
        token_map: Vec<u32>,
        noise_rate: f64,
        swap_rate: f64,
        offset_scale: f64,
        embed_transform: Tensor,
        base_embed: Tensor,
    ) -> Result<Self> {
        if token_map.len() != vocab {
            return Err(TgError::Invalid(format!(
                "language {lang_id}: token map covers {} of {vocab} symbols",
                token_map.len()
            )));
        }
        let mut seen = vec![false; vocab];
        for &t in &token_map {
            if t as usize >= vocab || seen[t as usize] {
                return Err(TgError::Invalid(format!(
                    "language {lang_id}: token map is not a bijection"
                )));
            }
            seen[t as usize] = true;
        }
        let dim = embed_transform.shape()[0];
        if embed_transform.shape() != [dim, dim] || base_embed.shape() != [vocab, dim] {
            return Err(TgError::Dim(format!(
                "language {lang_id}: transform {:?} / base {:?} inconsistent",
                embed_transform.shape(),
                base_embed.shape()
            )));
        }
        Ok(Self {
            lang_id: lang_id.to_string(),
            vocab,
            token_map,
            noise_rate,
            swap_rate,
            offset_scale,
            embed_transform,
            base_embed,
        })
    }

    pub fn dim(&self) -> usize {
        self.embed_transform.shape()[0]
    }

    /// Apply the cipher to a clean target sequence.
    pub fn cipher(&self, target: &[u32]) -> Result<TokenSeq> {
        target
            .iter()
            .map(|&t| {
                self.token_map.get(t as usize).copied().ok_or_else(|| {
                    TgError::Invalid(format!(
                        "language {}: target symbol {t} outside vocab {}",
                        self.lang_id, self.vocab
                    ))
                })
            })
            .collect()
    }

    /// Invert the cipher (π⁻¹).
    pub fn decipher(&self, tokens: &[u32]) -> Result<TokenSeq> {
        let mut inv = vec![0u32; self.vocab];
        for (sym, &tok) in self.token_map.iter().enumerate() {
            inv[tok as usize] = sym as u32;
        }
        tokens
            .iter()
            .map(|&t| {
                inv.get(t as usize).copied().ok_or_else(|| {
                    TgError::Invalid(format!(
                        "language {}: token {t} outside vocab {}",
                        self.lang_id, self.vocab
                    ))
                })
            })
            .collect()
    }
}

fn base_table(vocab: usize, dim: usize, root: &SeedRng) -> Tensor {
    let mut rng = root.split("aux.base");
    let scale = 1.0 / (dim as f64).sqrt();
    let data = (0..vocab * dim).map(|_| scale * rng.normal()).collect();
    Tensor::new(vec![vocab, dim], data).expect("finite base table")
}

/// Token embeddings E (T×d) plus the sentence summary vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxEmbedding {
    pub e: Tensor,
    pub cls: Tensor,
}

fn positional(t: usize, dim: usize) -> Vec<f64> {
    let mut p = vec![0.0; dim];
    for i in 0..dim / 2 {
        let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / dim as f64);
        p[2 * i] = POS_SCALE * (t as f64 * freq).sin();
        p[2 * i + 1] = POS_SCALE * (t as f64 * freq).cos();
    }
    if dim % 2 == 1 {
        let freq = 1.0 / 10000f64.powf((dim - 1) as f64 / dim as f64);
        p[dim - 1] = POS_SCALE * (t as f64 * freq).sin();
    }
    p
}

/// Embed a token sequence: row t = transform · base[tokens[t]] + pos(t);
/// cls = mean over rows. Deterministic and frozen.
pub fn embed_aux(tokens: &[u32], spec: &AuxLanguageSpec) -> Result<AuxEmbedding> {
    if tokens.is_empty() {
        return Err(TgError::Invalid(format!(
            "language {}: cannot embed an empty sequence",
            spec.lang_id
        )));
    }
    let d = spec.dim();
    let base = spec.base_embed.data();
    let m = spec.embed_transform.data();
    let mut e = vec![0.0; tokens.len() * d];
    let mut cls = vec![0.0; d];
    for (t, &tok) in tokens.iter().enumerate() {
        if tok as usize >= spec.vocab {
            return Err(TgError::Invalid(format!(
                "language {}: token {tok} outside vocab {}",
                spec.lang_id, spec.vocab
            )));
        }
        let b = &base[tok as usize * d..(tok as usize + 1) * d];
        let pos = positional(t, d);
        let row = &mut e[t * d..(t + 1) * d];
        for (j, item) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, &bv) in b.iter().enumerate() {
                acc += m[j * d + i] * bv;
            }
            *item = acc + pos[j];
        }
        for (j, c) in cls.iter_mut().enumerate() {
            *c += row[j];
        }
    }
    for c in &mut cls {
        *c /= tokens.len() as f64;
    }
    Ok(AuxEmbedding {
        e: Tensor::new(vec![tokens.len(), d], e)?,
        cls: Tensor::new(vec![d], cls)?,
    })
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let dot_ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let dot_aa: f64 = a.iter().map(|x| x * x).sum();
    let dot_bb: f64 = b.iter().map(|x| x * x).sum();
    if dot_aa == 0.0 || dot_bb == 0.0 {
        return Err(TgError::Invalid(
            "cosine of a zero-norm summary vector".into(),
        ));
    }
    // sqrt(x·x) == x exactly in IEEE round-to-nearest, so the self-proximity
    // of a corpus is exactly 1.
    Ok(dot_ab / (dot_aa * dot_bb).sqrt())
}

/// Mean pairwise cosine between two aligned lists of summary vectors.
pub fn mean_pairwise_cosine(a: &[Tensor], b: &[Tensor]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(TgError::Invalid(format!(
            "proximity: corpora must be sentence-aligned and non-empty ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let mut total = 0.0;
    for (u, v) in a.iter().zip(b) {
        if u.shape() != v.shape() {
            return Err(TgError::Dim(format!(
                "proximity: summary dims {:?} vs {:?}",
                u.shape(),
                v.shape()
            )));
        }
        total += cosine(u.data(), v.data())?;
    }
    Ok(total / a.len() as f64)
}

/// Corpus-level language proximity: embed each paired sentence with its
/// language's frozen embedder and average the cosine of summary vectors.
/// Symmetric in its arguments.
pub fn cls_proximity(
    corpus_a: &[TokenSeq],
    spec_a: &AuxLanguageSpec,
    corpus_b: &[TokenSeq],
    spec_b: &AuxLanguageSpec,
) -> Result<f64> {
    if corpus_a.len() != corpus_b.len() || corpus_a.is_empty() {
        return Err(TgError::Invalid(format!(
            "proximity: corpora must be sentence-aligned and non-empty ({} vs {})",
            corpus_a.len(),
            corpus_b.len()
        )));
    }
    let cls_a: Vec<Tensor> = corpus_a
        .iter()
        .map(|s| embed_aux(s, spec_a).map(|e| e.cls))
        .collect::<Result<_>>()?;
    let cls_b: Vec<Tensor> = corpus_b
        .iter()
        .map(|s| embed_aux(s, spec_b).map(|e| e.cls))
        .collect::<Result<_>>()?;
    mean_pairwise_cosine(&cls_a, &cls_b)
}
