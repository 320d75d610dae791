//! Frozen alignment scorers standing in for vision-language reward models,
//! episode labeling, and the exploration/alignment reward mixer.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::{embed_language_salted, ClassMatch, ClassPrototypes, LangEmbedding, VisFeature, DEFAULT_SALT, LANG_DIM, VIS_DIM};
use crate::env::ObjectClass;
use crate::error::{Error, Result};
use crate::prompts::{inverse_prompt, Lexicons, Prompt};
use crate::seed;

/// Height at which the progress proxy counts an object as fully lifted.
pub const LIFT_REFERENCE: f64 = 0.3;
/// Frames sampled from the history by the video scorer.
pub const VIDEO_FRAMES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScorerKind {
    #[serde(rename = "r3m")]
    R3MStyle,
    #[serde(rename = "zest")]
    ZeSTStyle,
    #[serde(rename = "video")]
    VideoStyle,
}

impl ScorerKind {
    pub const ALL: [ScorerKind; 3] = [ScorerKind::R3MStyle, ScorerKind::ZeSTStyle, ScorerKind::VideoStyle];

    pub fn name(self) -> &'static str {
        match self {
            ScorerKind::R3MStyle => "r3m",
            ScorerKind::ZeSTStyle => "zest",
            ScorerKind::VideoStyle => "video",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    fn stream(self) -> u64 {
        self as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScorerConfig {
    pub kind: ScorerKind,
    pub noise_std: f64,
    /// Prompts whose best prototype cosine falls below this are treated as
    /// carrying no task information.
    pub confidence: f64,
    pub hash_salt: u64,
    pub projection_seed: u64,
    /// Distance at which the approach term of the progress proxy reaches zero.
    pub reach_scale: f64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            kind: ScorerKind::R3MStyle,
            noise_std: 0.05,
            confidence: 0.3,
            hash_salt: DEFAULT_SALT,
            projection_seed: 0x5eed,
            reach_scale: 1.0,
        }
    }
}

impl ScorerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std must be finite and >= 0, got {}", self.noise_std)));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Config(format!("confidence must lie in (0, 1), got {}", self.confidence)));
        }
        if !(self.reach_scale > 0.0) {
            return Err(Error::Config("reach_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Text-side quantities a scorer needs, computed once per prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptContext {
    pub prompt_id: u32,
    pub lang: LangEmbedding,
    pub lang_inv: LangEmbedding,
    pub inverse_fallback: bool,
    pub grounding: ClassMatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTrace {
    pub prompt_id: u32,
    pub episode_seed: u64,
    pub r_lamp: Vec<f64>,
    pub r_explore: Vec<f64>,
    pub r_mixed: Vec<f64>,
    pub r_task: Vec<f64>,
}

impl RewardTrace {
    pub fn len(&self) -> usize {
        self.r_lamp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r_lamp.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.r_lamp.len();
        if [self.r_explore.len(), self.r_mixed.len(), self.r_task.len()].iter().any(|&l| l != n) {
            return Err(Error::Dimension {
                context: "reward trace channels",
                expected: n,
                got: [self.r_explore.len(), self.r_mixed.len(), self.r_task.len()]
                    .into_iter()
                    .find(|&l| l != n)
                    .unwrap_or(n),
            });
        }
        Ok(())
    }
}

/// A frozen scorer: prototypes, projection and noise settings.
#[derive(Debug, Clone)]
pub struct Scorer {
    config: ScorerConfig,
    prototypes: ClassPrototypes,
    /// Row-major `[VIS_DIM, LANG_DIM]`.
    projection: Vec<f64>,
}

/// 0-based frame indices sampled from a history of `len` frames.
pub fn video_frame_indices(len: usize) -> Result<[usize; VIDEO_FRAMES]> {
    if len == 0 {
        return Err(Error::Usage("video scorer needs at least one frame".into()));
    }
    Ok(std::array::from_fn(|j| {
        let k = j + 1;
        (k * len / VIDEO_FRAMES).max(1) - 1
    }))
}

/// Shaped progress toward `class` read off a visual feature. Zero when the
/// class is absent.
pub fn feature_progress(f: &VisFeature, class: ObjectClass, reach_scale: f64) -> f64 {
    let (present, rel, grasped) = f.slot(class);
    if !present {
        return 0.0;
    }
    let d = rel.iter().map(|v| v * v).sum::<f64>().sqrt();
    let z = f.ee()[2] + rel[2];
    0.5 * (1.0 - (d / reach_scale).clamp(0.0, 1.0))
        + if grasped { 0.25 } else { 0.0 }
        + 0.25 * (z / LIFT_REFERENCE).clamp(0.0, 1.0)
}

/// Maps a progress delta in `[-1, 1]` onto `[0, 1]`.
#[inline]
pub fn sigmoid_lin(u: f64) -> f64 {
    (0.5 + 0.5 * u).clamp(0.0, 1.0)
}

impl Scorer {
    pub fn new(config: ScorerConfig, lex: &Lexicons) -> Result<Self> {
        config.validate()?;
        let prototypes = ClassPrototypes::new(&lex.nouns, config.hash_salt)?;
        let mut rng = seed::rng(config.projection_seed, &[]);
        let scale = 1.0 / (LANG_DIM as f64).sqrt();
        let projection = (0..VIS_DIM * LANG_DIM)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(Scorer {
            config,
            prototypes,
            projection,
        })
    }

    pub fn config(&self) -> &ScorerConfig {
        &self.config
    }

    pub fn kind(&self) -> ScorerKind {
        self.config.kind
    }

    pub fn prototypes(&self) -> &ClassPrototypes {
        &self.prototypes
    }

    pub fn embed(&self, text: &str) -> LangEmbedding {
        embed_language_salted(text, self.config.hash_salt)
    }

    pub fn context(&self, prompt: &Prompt) -> PromptContext {
        let lang = self.embed(&prompt.text);
        let inv = inverse_prompt(prompt);
        PromptContext {
            prompt_id: prompt.prompt_id,
            lang,
            lang_inv: self.embed(&inv.text),
            inverse_fallback: inv.inverse_fallback,
            grounding: self.prototypes.classify(&lang),
        }
    }

    /// `P · lang`, a `VIS_DIM` vector.
    pub fn project(&self, lang: &LangEmbedding) -> [f64; VIS_DIM] {
        std::array::from_fn(|r| {
            self.projection[r * LANG_DIM..(r + 1) * LANG_DIM]
                .iter()
                .zip(&lang.0)
                .map(|(p, l)| p * l)
                .sum()
        })
    }

    /// Noise for step `step` of episode `episode_seed`; independent of call order.
    pub fn noise(&self, episode_seed: u64, step: u64) -> f64 {
        if self.config.noise_std == 0.0 {
            return 0.0;
        }
        let mut rng = seed::rng(episode_seed, &[seed::stream::SCORER_NOISE, self.config.kind.stream(), step]);
        Normal::new(0.0, self.config.noise_std).expect("validated std").sample(&mut rng)
    }

    /// Progress of frame `fi` over the anchor `f1` toward the grounded class, in `[0, 1]`.
    pub fn r3m_score(&self, f1: &VisFeature, fi: &VisFeature, lang: &LangEmbedding, noise: f64) -> f64 {
        let m = self.prototypes.classify(lang);
        self.r3m_score_grounded(f1, fi, &m, noise)
    }

    fn r3m_score_grounded(&self, f1: &VisFeature, fi: &VisFeature, m: &ClassMatch, noise: f64) -> f64 {
        if m.cosine < self.config.confidence {
            return (0.5 + noise).clamp(0.0, 1.0);
        }
        let s = self.config.reach_scale;
        let u = feature_progress(fi, m.class, s) - feature_progress(f1, m.class, s);
        (sigmoid_lin(u) + noise).clamp(0.0, 1.0)
    }

    /// `(fi - f0) · P(lang - lang_inv) + noise`.
    pub fn zest_score(
        &self,
        f0: &VisFeature,
        fi: &VisFeature,
        lang: &LangEmbedding,
        lang_inv: &LangEmbedding,
        noise: f64,
    ) -> f64 {
        let p = self.project(&lang.sub(lang_inv));
        zest_with_projection(f0, fi, &p) + noise
    }

    /// Mean of eight evenly spaced frames, dotted with `P(lang)`.
    pub fn video_score(&self, frames: &[VisFeature], lang: &LangEmbedding, noise: f64) -> Result<f64> {
        let p = self.project(lang);
        Ok(video_with_projection(frames, &p)? + noise)
    }

    /// Alignment reward for every transition of an episode.
    ///
    /// `frames` holds the features of the `T + 1` observations; entry `t` of
    /// the result scores the observation reached by transition `t`.
    pub fn label_episode(&self, frames: &[VisFeature], ctx: &PromptContext, episode_seed: u64) -> Result<Vec<f64>> {
        self.label(frames, ctx, episode_seed, true)
    }

    pub fn label_episode_sequential(&self, frames: &[VisFeature], ctx: &PromptContext, episode_seed: u64) -> Result<Vec<f64>> {
        self.label(frames, ctx, episode_seed, false)
    }

    fn label(&self, frames: &[VisFeature], ctx: &PromptContext, episode_seed: u64, parallel: bool) -> Result<Vec<f64>> {
        if frames.len() < 2 {
            return Err(Error::Usage("an episode needs at least one transition to label".into()));
        }
        let proj = match self.config.kind {
            ScorerKind::R3MStyle => None,
            ScorerKind::ZeSTStyle => Some(self.project(&ctx.lang.sub(&ctx.lang_inv))),
            ScorerKind::VideoStyle => Some(self.project(&ctx.lang)),
        };
        let one = |t: usize| -> f64 {
            let noise = self.noise(episode_seed, t as u64);
            match (self.config.kind, &proj) {
                (ScorerKind::R3MStyle, _) => self.r3m_score_grounded(&frames[0], &frames[t + 1], &ctx.grounding, noise),
                (ScorerKind::ZeSTStyle, Some(p)) => zest_with_projection(&frames[0], &frames[t + 1], p) + noise,
                (ScorerKind::VideoStyle, Some(p)) => {
                    video_with_projection(&frames[..t + 2], p).expect("non-empty history") + noise
                }
                _ => unreachable!("projection prepared for projecting scorers"),
            }
        };
        let steps = frames.len() - 1;
        Ok(if parallel {
            (0..steps).into_par_iter().map(one).collect()
        } else {
            (0..steps).map(one).collect()
        })
    }
}

fn zest_with_projection(f0: &VisFeature, fi: &VisFeature, p: &[f64; VIS_DIM]) -> f64 {
    (0..VIS_DIM).map(|j| (fi.0[j] - f0.0[j]) * p[j]).sum()
}

fn video_with_projection(frames: &[VisFeature], p: &[f64; VIS_DIM]) -> Result<f64> {
    let idx = video_frame_indices(frames.len())?;
    let mut pooled = [0.0; VIS_DIM];
    for &i in &idx {
        for (a, b) in pooled.iter_mut().zip(&frames[i].0) {
            *a += b;
        }
    }
    Ok(pooled.iter().zip(p).map(|(a, b)| a / VIDEO_FRAMES as f64 * b).sum())
}

/// Running magnitude normalizer: divides by an exponential moving average of
/// the mean absolute value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamNorm {
    pub enabled: bool,
    pub momentum: f64,
    pub eps: f64,
    pub magnitude: f64,
}

impl Default for StreamNorm {
    fn default() -> Self {
        StreamNorm {
            enabled: true,
            momentum: 0.99,
            eps: 1e-8,
            magnitude: 1.0,
        }
    }
}

impl StreamNorm {
    pub fn disabled() -> Self {
        StreamNorm {
            enabled: false,
            ..Self::default()
        }
    }

    /// Fold a batch into the running magnitude, then normalize it.
    pub fn update_and_normalize(&mut self, xs: &[f64]) -> Vec<f64> {
        if !self.enabled {
            return xs.to_vec();
        }
        if !xs.is_empty() {
            let mean_abs = xs.iter().map(|x| x.abs()).sum::<f64>() / xs.len() as f64;
            self.magnitude = self.momentum * self.magnitude + (1.0 - self.momentum) * mean_abs;
        }
        self.normalize(xs)
    }

    pub fn normalize(&self, xs: &[f64]) -> Vec<f64> {
        if !self.enabled {
            return xs.to_vec();
        }
        xs.iter().map(|x| x / (self.magnitude + self.eps)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixConfig {
    /// Weight of the exploration channel.
    pub alpha: f64,
    pub explore_norm: StreamNorm,
    pub lamp_norm: StreamNorm,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig {
            alpha: 0.9,
            // Momentum 1 pins the magnitude at its initial value.
            explore_norm: StreamNorm {
                momentum: 1.0,
                ..StreamNorm::default()
            },
            lamp_norm: StreamNorm::default(),
        }
    }
}

impl MixConfig {
    pub fn unnormalized(alpha: f64) -> Self {
        MixConfig {
            alpha,
            explore_norm: StreamNorm::disabled(),
            lamp_norm: StreamNorm::disabled(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        for n in [self.explore_norm, self.lamp_norm] {
            if !(0.0..=1.0).contains(&n.momentum) || n.eps < 0.0 {
                return Err(Error::Config("normalizer momentum must lie in [0, 1] and eps >= 0".into()));
            }
        }
        Ok(())
    }
}

/// `alpha * explore + (1 - alpha) * lamp` after per-channel normalization,
/// which also advances the running magnitudes.
pub fn mix_rewards(r_explore: &[f64], r_lamp: &[f64], mix: &mut MixConfig) -> Result<Vec<f64>> {
    mix.validate()?;
    if r_explore.len() != r_lamp.len() {
        return Err(Error::Dimension {
            context: "mix_rewards channels",
            expected: r_explore.len(),
            got: r_lamp.len(),
        });
    }
    let e = mix.explore_norm.update_and_normalize(r_explore);
    let l = mix.lamp_norm.update_and_normalize(r_lamp);
    let a = mix.alpha;
    Ok(e.iter().zip(&l).map(|(e, l)| a * e + (1.0 - a) * l).collect())
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// input is constant or the lengths differ or are below two.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    pearson(&rx, &ry)
}

fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
