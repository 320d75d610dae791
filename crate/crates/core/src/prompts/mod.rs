//! Prompt grammar: six styles built from verb templates, noun lexicons and a
//! distractor corpus, plus episode-time noun substitution and verb inversion.

mod inverse;
mod lexicon;

pub use inverse::invert_text;
pub use lexicon::{tokens, Lexicons, NounEntry, NounLexicon, VerbLexicon, NOUN_SLOT};

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ObjectClass, SceneState};
use crate::error::{Error, Result};
use crate::seed;

/// The fixed style-1 template.
pub const STYLE1_TEMPLATE: &str = "Pick up the [NOUN].";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum PromptStyle {
    /// "Pick up the [NOUN]." with the canonical noun.
    Canonical = 1,
    /// Relevant verb, synonym noun.
    RelevantSynonym = 2,
    /// Relevant verb, random noun.
    RelevantRandom = 3,
    /// Irrelevant verb, synonym noun.
    IrrelevantSynonym = 4,
    /// Irrelevant verb, random noun.
    IrrelevantRandom = 5,
    /// Distractor snippet with no noun slot.
    Distractor = 6,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NounKind {
    Canonical,
    Synonym,
    Random,
}

impl PromptStyle {
    pub const ALL: [PromptStyle; 6] = [
        PromptStyle::Canonical,
        PromptStyle::RelevantSynonym,
        PromptStyle::RelevantRandom,
        PromptStyle::IrrelevantSynonym,
        PromptStyle::IrrelevantRandom,
        PromptStyle::Distractor,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn from_number(n: u8) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.number() == n)
            .ok_or_else(|| Error::Config(format!("prompt style must be 1..=6, got {n}")))
    }

    pub fn has_slot(self) -> bool {
        self != PromptStyle::Distractor
    }

    fn noun_kind(self) -> Option<NounKind> {
        match self {
            PromptStyle::Canonical => Some(NounKind::Canonical),
            PromptStyle::RelevantSynonym | PromptStyle::IrrelevantSynonym => Some(NounKind::Synonym),
            PromptStyle::RelevantRandom | PromptStyle::IrrelevantRandom => Some(NounKind::Random),
            PromptStyle::Distractor => None,
        }
    }
}

impl TryFrom<u8> for PromptStyle {
    type Error = Error;
    fn try_from(n: u8) -> Result<Self> {
        Self::from_number(n)
    }
}

impl From<PromptStyle> for u8 {
    fn from(s: PromptStyle) -> u8 {
        s.number()
    }
}

impl std::fmt::Display for PromptStyle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// A prompt or, while its text still holds [`NOUN_SLOT`], a prompt template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub prompt_id: u32,
    pub style: PromptStyle,
    pub text: String,
    pub referenced_class: Option<ObjectClass>,
    /// Set when [`inverse_prompt`] had no antonym and negated the text instead.
    #[serde(default)]
    pub inverse_fallback: bool,
}

impl Prompt {
    pub fn is_template(&self) -> bool {
        self.text.contains(NOUN_SLOT)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptDataset {
    pub style: PromptStyle,
    pub seed: u64,
    pub prompts: Vec<Prompt>,
}

/// `n` seeded templates of one style. Noun slots stay symbolic.
pub fn generate_dataset(style: PromptStyle, lex: &Lexicons, seed: u64, n: usize) -> Result<PromptDataset> {
    if n == 0 {
        return Err(Error::Config("prompt count must be at least 1".into()));
    }
    lex.validate()?;
    let mut rng = seed::rng(seed, &[seed::stream::PROMPT, style.number() as u64]);
    let pool: Option<&[String]> = match style {
        PromptStyle::Canonical => None,
        PromptStyle::RelevantSynonym | PromptStyle::RelevantRandom => Some(&lex.verbs.relevant),
        PromptStyle::IrrelevantSynonym | PromptStyle::IrrelevantRandom => Some(&lex.verbs.irrelevant),
        PromptStyle::Distractor => Some(&lex.shakespeare),
    };
    let prompts = (0..n)
        .map(|i| {
            let text = match pool {
                None => STYLE1_TEMPLATE.to_string(),
                Some(p) => p.choose(&mut rng).expect("validated non-empty").clone(),
            };
            Prompt {
                prompt_id: i as u32,
                style,
                text,
                referenced_class: None,
                inverse_fallback: false,
            }
        })
        .collect();
    Ok(PromptDataset { style, seed, prompts })
}

/// Fill the noun slot for a uniformly chosen object of the scene.
pub fn substitute_noun<R: Rng + ?Sized>(
    template: &Prompt,
    scene: &SceneState,
    lex: &Lexicons,
    rng: &mut R,
) -> Result<Prompt> {
    if !template.style.has_slot() {
        return Err(Error::Usage("style-6 prompts have no noun slot".into()));
    }
    let obj = scene
        .objects
        .choose(rng)
        .ok_or_else(|| Error::Usage("cannot substitute a noun into an empty scene".into()))?;
    resolve_for_class(template, obj.class, lex, rng)
}

/// Fill the noun slot for a given class.
pub fn resolve_for_class<R: Rng + ?Sized>(
    template: &Prompt,
    class: ObjectClass,
    lex: &Lexicons,
    rng: &mut R,
) -> Result<Prompt> {
    let kind = template
        .style
        .noun_kind()
        .ok_or_else(|| Error::Usage("style-6 prompts have no noun slot".into()))?;
    if !template.is_template() {
        return Err(Error::Usage(format!("prompt {:?} has no {NOUN_SLOT} slot", template.text)));
    }
    let entry = lex.nouns.entry(class);
    let noun = match kind {
        NounKind::Canonical => entry.canonical(),
        NounKind::Synonym => entry.synonyms.choose(rng).expect("validated non-empty"),
        NounKind::Random => entry.random.choose(rng).expect("validated non-empty"),
    };
    Ok(Prompt {
        text: template.text.replacen(NOUN_SLOT, noun, 1),
        referenced_class: Some(class),
        ..template.clone()
    })
}

/// Swap the verb phrase for its antonym, or prefix "do not " and flag it.
pub fn inverse_prompt(prompt: &Prompt) -> Prompt {
    match invert_text(&prompt.text) {
        Some(text) => Prompt {
            text,
            inverse_fallback: false,
            ..prompt.clone()
        },
        None => Prompt {
            text: format!("do not {}", prompt.text),
            inverse_fallback: true,
            ..prompt.clone()
        },
    }
}

const TSV_HEADER: &str = "prompt_id\tstyle\treferenced_class\ttext";

impl PromptDataset {
    /// UTF-8 TSV with a `#` comment line carrying style and seed.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# style={} seed={} count={}\n{TSV_HEADER}\n", self.style, self.seed, self.prompts.len());
        for p in &self.prompts {
            let class = p.referenced_class.map_or("-", |c| c.name());
            let _ = writeln!(out, "{}\t{}\t{}\t{}", p.prompt_id, p.style, class, p.text);
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let bad = |ln: usize, msg: &str| Error::Config(format!("prompt file line {}: {msg}", ln + 1));
        let mut seed = 0;
        let mut declared_style = None;
        let mut prompts = Vec::new();
        let mut saw_header = false;
        for (ln, line) in text.lines().enumerate() {
            if let Some(meta) = line.strip_prefix('#') {
                for kv in meta.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("seed", v)) => seed = v.parse().map_err(|_| bad(ln, "bad seed"))?,
                        Some(("style", v)) => {
                            let n = v.parse().map_err(|_| bad(ln, "bad style"))?;
                            declared_style = Some(PromptStyle::from_number(n)?);
                        }
                        _ => {}
                    }
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            if !saw_header {
                if line != TSV_HEADER {
                    return Err(bad(ln, "missing header"));
                }
                saw_header = true;
                continue;
            }
            let cols: Vec<&str> = line.splitn(4, '\t').collect();
            let [id, style, class, text] = cols[..] else {
                return Err(bad(ln, "expected 4 columns"));
            };
            let style = PromptStyle::from_number(style.parse().map_err(|_| bad(ln, "bad style"))?)?;
            let referenced_class = match class {
                "-" => None,
                c => Some(ObjectClass::parse(c).ok_or_else(|| bad(ln, "unknown class"))?),
            };
            prompts.push(Prompt {
                prompt_id: id.parse().map_err(|_| bad(ln, "bad prompt_id"))?,
                style,
                text: text.to_string(),
                referenced_class,
                inverse_fallback: false,
            });
        }
        let style = declared_style
            .or_else(|| prompts.first().map(|p| p.style))
            .ok_or_else(|| Error::Config("prompt file is empty".into()))?;
        let ds = PromptDataset { style, seed, prompts };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompts.is_empty() {
            return Err(Error::Config("prompt dataset is empty".into()));
        }
        for (i, p) in self.prompts.iter().enumerate() {
            if p.prompt_id as usize != i {
                return Err(Error::Config(format!("prompt ids must be dense from 0, found {} at {i}", p.prompt_id)));
            }
            if p.style != self.style {
                return Err(Error::Config(format!("prompt {i} has style {} in a style-{} dataset", p.style, self.style)));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{reset, EnvConfig, ObjectInstance};
    use proptest::prelude::*;

    fn only(class: ObjectClass) -> SceneState {
        let mut s = reset(&EnvConfig::default(), 0).unwrap();
        s.objects = vec![ObjectInstance {
            class,
            position: [0.5, 0.5, 0.0],
            grasped: false,
        }];
        s
    }

    /// `text` equals `template` with its slot filled by one of `nouns`.
    fn fills(template: &str, nouns: &[String], text: &str) -> bool {
        let (pre, post) = template.split_once(NOUN_SLOT).unwrap();
        text.strip_prefix(pre)
            .and_then(|t| t.strip_suffix(post))
            .is_some_and(|n| nouns.iter().any(|x| x == n))
    }

    #[test]
    fn style_one_is_canonical() {
        let lex = Lexicons::shipped();
        let ds = generate_dataset(PromptStyle::Canonical, &lex, 3, 4).unwrap();
        assert!(ds.prompts.iter().all(|p| p.text == STYLE1_TEMPLATE));
        let mut rng = seed::rng(0, &[]);
        let p = substitute_noun(&ds.prompts[0], &only(ObjectClass::Mug), &lex, &mut rng).unwrap();
        assert_eq!(p.text, "Pick up the mug.");
        let p = substitute_noun(&ds.prompts[0], &only(ObjectClass::Bag), &lex, &mut rng).unwrap();
        assert_eq!(p.text, "Pick up the bag.");
        assert_eq!(p.referenced_class, Some(ObjectClass::Bag));
    }

    #[test]
    fn style_two_can_yield_table_example() {
        let lex = Lexicons::shipped();
        let ds = generate_dataset(PromptStyle::RelevantSynonym, &lex, 0, 400).unwrap();
        let t = ds.prompts.iter().find(|p| p.text == "Lift the [NOUN] with your hands").expect("template drawn");
        let mut rng = seed::rng(1, &[]);
        let hit = (0..200).any(|_| {
            resolve_for_class(t, ObjectClass::Mug, &lex, &mut rng).unwrap().text == "Lift the mug with your hands"
        });
        assert!(hit);
        let bag = (0..500).any(|_| resolve_for_class(t, ObjectClass::Bag, &lex, &mut rng).unwrap().text.contains("handbag"));
        assert!(bag);
    }

    #[test]
    fn style_three_can_yield_vase_for_bag() {
        let lex = Lexicons::shipped();
        let ds = generate_dataset(PromptStyle::RelevantRandom, &lex, 0, 1).unwrap();
        let mut rng = seed::rng(2, &[]);
        assert!((0..500).any(|_| resolve_for_class(&ds.prompts[0], ObjectClass::Bag, &lex, &mut rng)
            .unwrap()
            .text
            .contains("vase")));
    }

    #[test]
    fn style_six_draws_snippets_and_refuses_substitution() {
        let lex = Lexicons::shipped();
        let ds = generate_dataset(PromptStyle::Distractor, &lex, 0, 300).unwrap();
        assert!(ds.prompts.iter().any(|p| p.text == "Holla, Barnardo."));
        assert!(ds.prompts.iter().all(|p| p.referenced_class.is_none()));
        let mut rng = seed::rng(0, &[]);
        let r = substitute_noun(&ds.prompts[0], &only(ObjectClass::Cup), &lex, &mut rng);
        assert!(matches!(r, Err(Error::Usage(_))));
    }

    #[test]
    fn zero_count_is_rejected() {
        assert!(generate_dataset(PromptStyle::Canonical, &Lexicons::shipped(), 0, 0).is_err());
    }

    #[test]
    fn inverse_examples() {
        let p = Prompt {
            prompt_id: 0,
            style: PromptStyle::Canonical,
            text: "Pick up the mug.".into(),
            referenced_class: Some(ObjectClass::Mug),
            inverse_fallback: false,
        };
        let inv = inverse_prompt(&p);
        assert_eq!(inv.text, "Put down the mug.");
        assert!(!inv.inverse_fallback);
        assert_eq!(inverse_prompt(&inv), p);

        let q = Prompt {
            text: "The mug is rotated".into(),
            style: PromptStyle::IrrelevantSynonym,
            ..p
        };
        let inv = inverse_prompt(&q);
        assert_eq!(inv.text, "do not The mug is rotated");
        assert!(inv.inverse_fallback);
    }

    #[test]
    fn inverse_is_an_involution_on_every_template_and_noun() {
        let lex = Lexicons::shipped();
        let templates = lex.verbs.relevant.iter().chain(&lex.verbs.irrelevant).map(String::as_str);
        let mut inverted = 0;
        for t in templates.chain([STYLE1_TEMPLATE]) {
            for e in lex.nouns.entries() {
                for noun in e.synonyms.iter().chain(&e.random) {
                    let text = t.replacen(NOUN_SLOT, noun, 1);
                    if let Some(inv) = invert_text(&text) {
                        inverted += 1;
                        assert_ne!(inv, text);
                        assert_eq!(invert_text(&inv).as_deref(), Some(text.as_str()), "{text}");
                    }
                }
            }
        }
        assert!(inverted > 0);
    }

    #[test]
    fn every_pair_inverts_both_ways_in_isolation() {
        for &(a, b) in inverse::pairs() {
            assert_eq!(invert_text(a).as_deref(), Some(b));
            assert_eq!(invert_text(b).as_deref(), Some(a));
        }
    }

    #[test]
    fn tsv_round_trips_and_rejects_gaps() {
        let lex = Lexicons::shipped();
        for style in PromptStyle::ALL {
            let ds = generate_dataset(style, &lex, 11, 25).unwrap();
            assert_eq!(PromptDataset::from_tsv(&ds.to_tsv()).unwrap(), ds);
        }
        let ds = generate_dataset(PromptStyle::RelevantSynonym, &lex, 11, 3).unwrap();
        let broken = ds.to_tsv().replace("\n1\t", "\n7\t");
        assert!(PromptDataset::from_tsv(&broken).is_err());
    }

    proptest! {
        #[test]
        fn generation_is_pure(style in 1u8..=6, seed in any::<u64>(), n in 1usize..50) {
            let lex = Lexicons::shipped();
            let style = PromptStyle::from_number(style).unwrap();
            let a = generate_dataset(style, &lex, seed, n).unwrap();
            let b = generate_dataset(style, &lex, seed, n).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.prompts.iter().enumerate().all(|(i, p)| p.prompt_id as usize == i));
        }

        #[test]
        fn substituted_prompts_follow_their_grammar(style in 1u8..=5, seed in any::<u64>(), ep in 0u64..1000) {
            let lex = Lexicons::shipped();
            let style = PromptStyle::from_number(style).unwrap();
            let ds = generate_dataset(style, &lex, seed, 5).unwrap();
            let scene = reset(&EnvConfig::default(), ep).unwrap();
            let mut rng = seed::rng(seed, &[ep]);
            for t in &ds.prompts {
                let p = substitute_noun(t, &scene, &lex, &mut rng).unwrap();
                let class = p.referenced_class.unwrap();
                prop_assert!(scene.find(class).is_some());
                prop_assert!(!p.is_template());
                let e = lex.nouns.entry(class);
                let nouns = match style {
                    PromptStyle::Canonical => vec![e.canonical().to_string()],
                    PromptStyle::RelevantSynonym | PromptStyle::IrrelevantSynonym => e.synonyms.clone(),
                    _ => e.random.clone(),
                };
                prop_assert!(fills(&t.text, &nouns, &p.text), "{}", p.text);
                let verbs = match style {
                    PromptStyle::RelevantSynonym | PromptStyle::RelevantRandom => &lex.verbs.relevant,
                    PromptStyle::IrrelevantSynonym | PromptStyle::IrrelevantRandom => &lex.verbs.irrelevant,
                    _ => continue,
                };
                prop_assert!(verbs.contains(&t.text));
            }
        }
    }
}
