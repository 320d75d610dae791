//! Frozen, training-free encoders: hashed bag-of-words for text and a fixed
//! layout of scene quantities for vision.

use std::fmt::Write as _;
use std::sync::OnceLock;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{ObjectClass, SceneState, NUM_CLASSES, NUM_TEXTURES};
use crate::error::{Error, Result};
use crate::prompts::{tokens, Lexicons, NounLexicon, NOUN_SLOT, STYLE1_TEMPLATE};
use crate::seed;

pub const LANG_DIM: usize = 64;
pub const VIS_DIM: usize = 4 + 5 * NUM_CLASSES + TEXTURE_DIM;
pub const TEXTURE_DIM: usize = 8;
pub const TEXTURE_STD: f64 = 0.5;
/// Offset of the first class slot; slot `c` spans `[CLASS_BASE + 5c, CLASS_BASE + 5c + 5)`.
pub const CLASS_BASE: usize = 4;
pub const TEXTURE_BASE: usize = CLASS_BASE + 5 * NUM_CLASSES;
/// Pinned hash salt: the maximiser of [`separation_score`] on the bundled
/// lexicons at the default confidence threshold.
///
/// Only the low six bits of the FNV state reach the bucket index, so at most
/// 64 salts are distinct.
pub const DEFAULT_SALT: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LangEmbedding(#[serde(with = "serde_arrays")] pub [f64; LANG_DIM]);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisFeature(#[serde(with = "serde_arrays")] pub [f64; VIS_DIM]);

mod serde_arrays {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, const N: usize>(a: &[f64; N], s: S) -> Result<S::Ok, S::Error> {
        a.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(d: D) -> Result<[f64; N], D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        let n = v.len();
        v.try_into()
            .map_err(|_| serde::de::Error::custom(format!("expected {N} values, got {n}")))
    }
}

impl LangEmbedding {
    pub fn zero() -> Self {
        LangEmbedding([0.0; LANG_DIM])
    }

    pub fn dot(&self, other: &LangEmbedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn sub(&self, other: &LangEmbedding) -> LangEmbedding {
        LangEmbedding(std::array::from_fn(|i| self.0[i] - other.0[i]))
    }
}

impl VisFeature {
    pub fn ee(&self) -> [f64; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    /// `(present, rel_xyz, grasped)` of one class.
    pub fn slot(&self, class: ObjectClass) -> (bool, [f64; 3], bool) {
        let b = CLASS_BASE + 5 * class.index();
        (self.0[b] > 0.5, [self.0[b + 1], self.0[b + 2], self.0[b + 3]], self.0[b + 4] > 0.5)
    }

    pub fn sub(&self, other: &VisFeature) -> VisFeature {
        VisFeature(std::array::from_fn(|i| self.0[i] - other.0[i]))
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(salt: u64, token: &str) -> u64 {
    salt.to_le_bytes()
        .iter()
        .chain(token.as_bytes())
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Hashed bag-of-words, L2-normalized. Empty or token-free text maps to zero.
pub fn embed_language_salted(text: &str, salt: u64) -> LangEmbedding {
    let mut v = [0.0; LANG_DIM];
    for t in tokens(text) {
        v[(fnv1a(salt, &t) % LANG_DIM as u64) as usize] += 1.0;
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    LangEmbedding(v)
}

pub fn embed_language(text: &str) -> LangEmbedding {
    embed_language_salted(text, DEFAULT_SALT)
}

fn texture_table() -> &'static [[f64; TEXTURE_DIM]] {
    static TABLE: OnceLock<Vec<[f64; TEXTURE_DIM]>> = OnceLock::new();
    TABLE.get_or_init(|| (0..=NUM_TEXTURES).map(texture_noise_uncached).collect())
}

fn texture_noise_uncached(texture_id: u32) -> [f64; TEXTURE_DIM] {
    if texture_id == 0 {
        return [0.0; TEXTURE_DIM];
    }
    let normal = Normal::new(0.0, TEXTURE_STD).expect("positive std");
    let mut rng = seed::rng(texture_id as u64, &[seed::stream::TEXTURE]);
    std::array::from_fn(|_| normal.sample(&mut rng))
}

/// Perceptual offset of a texture; zero for the default texture.
pub fn texture_noise(texture_id: u32) -> [f64; TEXTURE_DIM] {
    texture_table()
        .get(texture_id as usize)
        .copied()
        .unwrap_or_else(|| texture_noise_uncached(texture_id))
}

pub fn encode_scene(state: &SceneState) -> VisFeature {
    let mut f = [0.0; VIS_DIM];
    f[..3].copy_from_slice(&state.ee_pos);
    f[3] = if state.gripper_closed { 1.0 } else { 0.0 };
    for o in &state.objects {
        let b = CLASS_BASE + 5 * o.class.index();
        f[b] = 1.0;
        for i in 0..3 {
            f[b + 1 + i] = o.position[i] - state.ee_pos[i];
        }
        f[b + 4] = if o.grasped { 1.0 } else { 0.0 };
    }
    f[TEXTURE_BASE..].copy_from_slice(&texture_noise(state.texture_id));
    VisFeature(f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototypes {
    protos: [LangEmbedding; NUM_CLASSES],
}

/// Result of matching a text embedding against the prototypes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMatch {
    pub class: ObjectClass,
    pub cosine: f64,
    /// Best minus second-best cosine.
    pub margin: f64,
}

impl ClassPrototypes {
    pub fn new(lex: &NounLexicon, salt: u64) -> Result<Self> {
        let mut protos = [LangEmbedding::zero(); NUM_CLASSES];
        for e in lex.entries() {
            if e.synonyms.is_empty() {
                return Err(Error::Config(format!("class {} has no synonyms", e.class)));
            }
            let mut sum = [0.0; LANG_DIM];
            for s in &e.synonyms {
                let v = embed_language_salted(s, salt);
                sum.iter_mut().zip(&v.0).for_each(|(a, b)| *a += b);
            }
            let n = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n < 1e-12 {
                return Err(Error::Config(format!("prototype of {} is degenerate", e.class)));
            }
            protos[e.class.index()] = LangEmbedding(sum.map(|x| x / n));
        }
        Ok(ClassPrototypes { protos })
    }

    pub fn get(&self, class: ObjectClass) -> &LangEmbedding {
        &self.protos[class.index()]
    }

    /// Argmax cosine; ties go to the lowest class index. `lang` must be unit or zero.
    pub fn classify(&self, lang: &LangEmbedding) -> ClassMatch {
        let cos: Vec<f64> = self.protos.iter().map(|p| p.dot(lang)).collect();
        let mut best = 0;
        for (i, &c) in cos.iter().enumerate() {
            if c > cos[best] {
                best = i;
            }
        }
        let second = cos
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != best)
            .map(|(_, &c)| c)
            .fold(f64::NEG_INFINITY, f64::max);
        ClassMatch {
            class: ObjectClass::ALL[best],
            cosine: cos[best],
            margin: cos[best] - second,
        }
    }

    /// One row per class: name then the 64 prototype coordinates.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("class");
        for i in 0..LANG_DIM {
            let _ = write!(out, "\td{i}");
        }
        out.push('\n');
        for c in ObjectClass::ALL {
            out.push_str(c.name());
            for v in &self.get(c).0 {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// How well a salt separates prompts at confidence threshold `tau`.
///
/// `None` when some canonical style-1 prompt is misgrounded or within 0.05 of
/// `tau`, when "handbag" is closer to the mug prototype than to the bag
/// prototype, or when the first distractor snippet clears `tau`. Otherwise the
/// fraction of relevant-verb synonym prompts grounded to their class minus the
/// fraction of distractor snippets clearing `tau`.
pub fn separation_score(lex: &Lexicons, salt: u64, tau: f64) -> Option<f64> {
    let protos = ClassPrototypes::new(&lex.nouns, salt).ok()?;
    let embed = |s: &str| embed_language_salted(s, salt);
    for e in lex.nouns.entries() {
        let m = protos.classify(&embed(&STYLE1_TEMPLATE.replace(NOUN_SLOT, e.canonical())));
        if m.class != e.class || m.cosine < tau + 0.05 {
            return None;
        }
    }
    let h = embed("handbag");
    if protos.get(ObjectClass::Bag).dot(&h) <= protos.get(ObjectClass::Mug).dot(&h) {
        return None;
    }
    if protos.classify(&embed(lex.shakespeare.first()?)).cosine >= tau {
        return None;
    }
    let (mut grounded, mut total) = (0usize, 0usize);
    for t in &lex.verbs.relevant {
        for e in lex.nouns.entries() {
            for w in &e.synonyms {
                total += 1;
                let m = protos.classify(&embed(&t.replacen(NOUN_SLOT, w, 1)));
                grounded += usize::from(m.class == e.class && m.cosine >= tau);
            }
        }
    }
    let confident = lex
        .shakespeare
        .iter()
        .filter(|l| protos.classify(&embed(l)).cosine >= tau)
        .count();
    Some(grounded as f64 / total as f64 - confident as f64 / lex.shakespeare.len() as f64)
}
