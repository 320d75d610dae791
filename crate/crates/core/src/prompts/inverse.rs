/// Case-sensitive verb phrase pairs. Each phrase appears once on either side,
/// so inversion is an involution wherever a phrase matches.
const PAIRS: &[(&str, &str)] = &[
    ("Pick up", "Put down"),
    ("picks up", "puts down"),
    ("picked up", "set down"),
    ("Lift", "Lower"),
    ("lift", "lower"),
    ("lifts", "lowers"),
    ("lifted", "lowered"),
    ("Raise", "Drop"),
    ("raise", "drop"),
    ("raised", "dropped"),
    ("Hold", "Release"),
    ("held", "released"),
    ("Take hold of", "Let go of"),
    ("taken up", "put away"),
    ("Grasp", "Loosen"),
    ("grasped", "loosened"),
    ("Seize", "Free"),
    ("seized", "freed"),
    ("Retrieve", "Return"),
    ("retrieved", "returned"),
    ("Reach for", "Move away from"),
    ("Open", "Close"),
    ("open", "close"),
    ("opened", "closed"),
    ("Fold", "Unfold"),
    ("folded", "unfolded"),
    ("filled", "emptied"),
    ("heated", "cooled"),
    ("Twist", "Untwist"),
];

fn is_word_char(c: Option<char>) -> bool {
    c.is_some_and(|c| c.is_alphanumeric())
}

fn matches_at(text: &str, at: usize, phrase: &str) -> bool {
    text[at..].starts_with(phrase)
        && !is_word_char(text[..at].chars().next_back())
        && !is_word_char(text[at + phrase.len()..].chars().next())
}

/// Swap the leftmost registered phrase (longest on ties) for its antonym.
pub fn invert_text(text: &str) -> Option<String> {
    let mut best: Option<(usize, &str, &str)> = None;
    for &(a, b) in PAIRS {
        for (from, to) in [(a, b), (b, a)] {
            let hit = text
                .match_indices(from)
                .map(|(i, _)| i)
                .find(|&i| matches_at(text, i, from));
            if let Some(i) = hit {
                let better = match best {
                    None => true,
                    Some((bi, bf, _)) => i < bi || (i == bi && from.len() > bf.len()),
                };
                if better {
                    best = Some((i, from, to));
                }
            }
        }
    }
    best.map(|(i, from, to)| format!("{}{}{}", &text[..i], to, &text[i + from.len()..]))
}

#[cfg(test)]
pub(crate) fn pairs() -> &'static [(&'static str, &'static str)] {
    PAIRS
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_a_matching() {
        let mut seen = std::collections::BTreeSet::new();
        for &(a, b) in PAIRS {
            assert!(seen.insert(a), "{a}");
            assert!(seen.insert(b), "{b}");
        }
    }

    #[test]
    fn swaps_leftmost_phrase_only() {
        assert_eq!(invert_text("Pick up the mug.").unwrap(), "Put down the mug.");
        assert_eq!(
            invert_text("Take hold of the cup and raise it").unwrap(),
            "Let go of the cup and raise it"
        );
        assert_eq!(invert_text("open the microwave").unwrap(), "close the microwave");
    }

    #[test]
    fn respects_word_boundaries() {
        assert_eq!(invert_text("Holding the bag").as_deref(), None);
        assert_eq!(invert_text("The bag is uplifted and lifted").unwrap(), "The bag is uplifted and lowered");
        assert_eq!(invert_text("The mug is rotated"), None);
        assert_eq!(invert_text("Liftoff"), None);
    }
}
