use crate::env::{ObjectClass, NUM_CLASSES};
use crate::error::{Error, Result};

/// Placeholder replaced by a noun at episode time.
pub const NOUN_SLOT: &str = "[NOUN]";

const RELEVANT: &str = include_str!("../../data/relevant_verbs.txt");
const IRRELEVANT: &str = include_str!("../../data/irrelevant_verbs.txt");
const SHAKESPEARE: &str = include_str!("../../data/shakespeare.txt");
const NOUNS: &str = include_str!("../../data/nouns.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct NounEntry {
    pub class: ObjectClass,
    /// The first synonym is the canonical noun.
    pub synonyms: Vec<String>,
    pub random: Vec<String>,
}

impl NounEntry {
    pub fn canonical(&self) -> &str {
        &self.synonyms[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NounLexicon {
    entries: Vec<NounEntry>,
}

impl NounLexicon {
    /// Entries must cover every class exactly once; they are stored in class order.
    pub fn new(mut entries: Vec<NounEntry>) -> Result<Self> {
        entries.sort_by_key(|e| e.class.index());
        let classes: Vec<_> = entries.iter().map(|e| e.class).collect();
        if classes != ObjectClass::ALL {
            return Err(Error::Config(format!(
                "noun lexicon must list each of the {NUM_CLASSES} classes once, got {classes:?}"
            )));
        }
        Ok(NounLexicon { entries })
    }

    /// Parse `class|syn,syn,...|rand,rand,...` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('|').collect();
            let [class, syn, rand] = fields[..] else {
                return Err(Error::Config(format!("nouns line {}: expected 3 fields", ln + 1)));
            };
            let class = ObjectClass::parse(class.trim())
                .ok_or_else(|| Error::Config(format!("nouns line {}: unknown class {class:?}", ln + 1)))?;
            let list = |s: &str| -> Vec<String> {
                s.split(',').map(str::trim).filter(|w| !w.is_empty()).map(String::from).collect()
            };
            entries.push(NounEntry {
                class,
                synonyms: list(syn),
                random: list(rand),
            });
        }
        Self::new(entries)
    }

    pub fn entry(&self, class: ObjectClass) -> &NounEntry {
        &self.entries[class.index()]
    }

    pub fn entries(&self) -> &[NounEntry] {
        &self.entries
    }

    /// Lowercased tokens of every synonym of every class.
    pub fn class_vocabulary(&self) -> std::collections::BTreeSet<String> {
        self.entries
            .iter()
            .flat_map(|e| e.synonyms.iter())
            .flat_map(|s| tokens(s))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerbLexicon {
    pub relevant: Vec<String>,
    pub irrelevant: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lexicons {
    pub nouns: NounLexicon,
    pub verbs: VerbLexicon,
    pub shakespeare: Vec<String>,
}

fn lines(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect()
}

/// Lowercase alphanumeric runs.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

impl Lexicons {
    /// The lexicons bundled with the crate.
    pub fn shipped() -> Self {
        let lex = Lexicons {
            nouns: NounLexicon::parse(NOUNS).expect("bundled noun lexicon parses"),
            verbs: VerbLexicon {
                relevant: lines(RELEVANT),
                irrelevant: lines(IRRELEVANT),
            },
            shakespeare: lines(SHAKESPEARE),
        };
        debug_assert!(lex.validate().is_ok());
        lex
    }

    pub fn validate(&self) -> Result<()> {
        for (name, list) in [("relevant", &self.verbs.relevant), ("irrelevant", &self.verbs.irrelevant)] {
            if list.is_empty() {
                return Err(Error::Config(format!("{name} verb lexicon is empty")));
            }
            for t in list {
                if t.matches(NOUN_SLOT).count() != 1 {
                    return Err(Error::Config(format!("{name} template {t:?} must contain {NOUN_SLOT} once")));
                }
            }
        }
        if self.shakespeare.is_empty() {
            return Err(Error::Config("distractor corpus is empty".into()));
        }
        for e in self.nouns.entries() {
            if e.synonyms.is_empty() || e.random.is_empty() {
                return Err(Error::Config(format!("class {} has an empty noun list", e.class)));
            }
            if let Some(w) = e.random.iter().find(|w| e.synonyms.contains(w)) {
                return Err(Error::Config(format!("random noun {w:?} is a synonym of {}", e.class)));
            }
        }
        let all = self
            .verbs
            .relevant
            .iter()
            .chain(&self.verbs.irrelevant)
            .chain(&self.shakespeare)
            .chain(self.nouns.entries().iter().flat_map(|e| e.synonyms.iter().chain(&e.random)));
        for s in all {
            if s.contains(['\t', '\n', '\r']) {
                return Err(Error::Config(format!("lexicon entry {s:?} contains a tab or newline")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_lexicons_have_table_sizes() {
        let lex = Lexicons::shipped();
        lex.validate().unwrap();
        assert_eq!(lex.verbs.relevant.len(), 40);
        assert_eq!(lex.verbs.irrelevant.len(), 40);
        assert_eq!(lex.verbs.relevant[0], "Pick up the [NOUN]");
        assert_eq!(lex.verbs.irrelevant[7], "The [NOUN] is rotated");
        assert_eq!(lex.shakespeare[0], "Holla, Barnardo.");
        let bag = lex.nouns.entry(ObjectClass::Bag);
        assert_eq!(bag.canonical(), "bag");
        assert!(bag.synonyms.iter().any(|s| s == "handbag"));
        assert!(bag.random.iter().any(|s| s == "vase"));
    }

    #[test]
    fn canonical_noun_is_class_name_and_lists_are_long() {
        let lex = Lexicons::shipped();
        for e in lex.nouns.entries() {
            assert_eq!(e.canonical(), e.class.name());
            assert!(e.synonyms.len() >= 10, "{}", e.class);
        }
    }

    #[test]
    fn distractors_share_no_class_vocabulary() {
        let lex = Lexicons::shipped();
        let vocab = lex.nouns.class_vocabulary();
        for line in &lex.shakespeare {
            for t in tokens(line) {
                assert!(!vocab.contains(&t), "{line:?} contains {t:?}");
            }
        }
    }

    #[test]
    fn double_slot_is_rejected() {
        let mut lex = Lexicons::shipped();
        lex.verbs.relevant.push("Move the [NOUN] onto the [NOUN]".into());
        assert!(lex.validate().is_err());
    }

    #[test]
    fn missing_class_is_rejected() {
        assert!(NounLexicon::parse("bag|bag|cap").is_err());
    }
}
