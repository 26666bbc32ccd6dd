//! Word-level tokenizer and the four instruction template banks.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const SEP: &str = "[SEP]";
pub const YES: &str = "Yes";
pub const NO: &str = "No";

pub const SPECIALS: [&str; 6] = [PAD, BOS, EOS, SEP, YES, NO];

const DROPPED_PUNCTUATION: &[char] = &['.', ',', '?', '!', ';', ':', '"', '(', ')'];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TextError {
    #[error("word `{0}` is not in the vocabulary")]
    UnknownWord(String),
    #[error("token id {0} is out of range")]
    BadId(usize),
    #[error("template `{0}` does not end with its {{relation}} slot")]
    RelationNotFinal(String),
    #[error("template bank `{0}` must hold exactly 10 templates, found {1}")]
    BankSize(&'static str, usize),
    #[error("empty fill name for slot {{{0}}}")]
    EmptyFill(&'static str),
}

/// Splits text into normalized word pieces. `[SEP]` and the other special
/// markers stay atomic; `-` becomes its own piece; sentence punctuation is
/// dropped; everything else is lowercased.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut rest = chunk;
        while !rest.is_empty() {
            if let Some(special) = SPECIALS.iter().find(|s| rest.starts_with(*s) && s.starts_with(['<', '['])) {
                out.push(special.to_string());
                rest = &rest[special.len()..];
                continue;
            }
            let end = rest
                .find(|c: char| c == '-' || c == '[' || c == '<' || DROPPED_PUNCTUATION.contains(&c))
                .unwrap_or(rest.len());
            if end == 0 {
                let c = rest.chars().next().expect("non-empty");
                if c == '-' || c == '[' || c == '<' {
                    out.push(c.to_string());
                }
                rest = &rest[c.len_utf8()..];
                continue;
            }
            let word = rest[..end].to_lowercase();
            out.push(match word.as_str() {
                "yes" => YES.to_string(),
                "no" => NO.to_string(),
                _ => word,
            });
            rest = &rest[end..];
        }
    }
    out
}

/// Canonical text form: the normalized pieces joined by single spaces.
pub fn normalize_text(text: &str) -> String {
    split_words(text).join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextVocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl TextVocabulary {
    /// Specials first, then every word from the template banks and `texts`
    /// in sorted order.
    pub fn build<'a>(banks: &InstructionBanks, texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words = BTreeSet::new();
        for t in banks.all_templates() {
            let stripped = t
                .replace("{subject}", " ")
                .replace("{object}", " ")
                .replace("{relation}", " ");
            words.extend(split_words(&stripped));
        }
        for t in texts {
            words.extend(split_words(t));
        }
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(words.into_iter().filter(|w| !SPECIALS.contains(&w.as_str())));
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let v = Self { tokens, index };
        for s in SPECIALS {
            assert!(v.index.contains_key(s), "vocabulary lacks special {s}");
        }
        v
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    fn special(&self, token: &str) -> usize {
        self.index[token]
    }

    pub fn pad(&self) -> usize {
        self.special(PAD)
    }
    pub fn bos(&self) -> usize {
        self.special(BOS)
    }
    pub fn eos(&self) -> usize {
        self.special(EOS)
    }
    pub fn sep(&self) -> usize {
        self.special(SEP)
    }
    pub fn yes(&self) -> usize {
        self.special(YES)
    }
    pub fn no(&self) -> usize {
        self.special(NO)
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>, TextError> {
        split_words(text)
            .into_iter()
            .map(|w| self.id(&w).ok_or(TextError::UnknownWord(w)))
            .collect()
    }

    pub fn detokenize(&self, ids: &[usize]) -> Result<String, TextError> {
        let words = ids
            .iter()
            .map(|&i| self.tokens.get(i).map(String::as_str).ok_or(TextError::BadId(i)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(words.join(" "))
    }

    /// Rebuilds the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionKind {
    PairFeat,
    RelExist,
    Generation,
    Judgement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

/// Ten phrasings per instruction kind. Training draws one uniformly; inference
/// always uses the first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionBanks {
    pub pair_feat: Vec<String>,
    pub rel_exist: Vec<String>,
    pub generation: Vec<String>,
    pub judgement: Vec<String>,
}

const PAIR_FEAT_TEMPLATES: [&str; 10] = [
    "Please extract features for the {subject}-{object} pair based on the whole visual features of the image and the masks of the {subject} and {object}.",
    "Based on the image's holistic visual features and the masks of both {subject} and {object}, please derive the features of the {subject}-{object} pair.",
    "Utilizing the total visual features of the image, along with the {subject} and {object} masks, please identify the features of the {subject}-{object} pair.",
    "By considering the comprehensive visual features of the image and the respective masks of the {subject} and {object}, please isolate the features specific to the {subject}-{object} pair.",
    "Taking into account the global visual features of the image and the masks designated for the {subject} and {object}, please extract the particular features of the {subject}-{object} pair.",
    "Leveraging the entire visual features of the image as well as the masks for the {subject} and {object}, please delineate the features corresponding to the {subject}-{object} pair.",
    "Drawing on the overall visual features of the image and the masks of the {subject} and {object}, please ascertain the features for the {subject}-{object} pair.",
    "By harnessing the full visual features of the image along with the masks of the {subject} and {object}, please identify the distinctive features of the {subject}-{object} pair.",
    "With reference to the comprehensive visual features of the image and the masks for the {subject} and {object}, please extract the respective features of the {subject}-{object} pair.",
    "Considering the total visual features of the image and the defined masks for the {subject} and {object}, please determine the specific features of the {subject}-{object} pair.",
];

const REL_EXIST_TEMPLATES: [&str; 10] = [
    "Based on the visual features of the entire image and the masks for the {subject} and {object}, estimate whether there is a relation between the {subject} and {object}.",
    "Considering the holistic visual features of the image and the masks of the {subject} and {object}, determine whether a relation exists between the two entities.",
    "Utilizing the complete visual features of the image along with the {subject} and {object} masks, assess whether there is a relation between the {subject} and {object}.",
    "Given the overall visual features of the image and the masks for the {subject} and {object}, evaluate whether a relation exists between the {subject} and {object}.",
    "By analyzing the entire visual features of the image and the masks of the {subject} and {object}, ascertain whether there is a relation between the {subject} and {object}.",
    "With the comprehensive visual features of the image and the masks for both {subject} and {object}, deduce whether there is a relation between the {subject} and {object}.",
    "Reflecting on the total visual features of the image and the masks applied to the {subject} and {object}, gauge whether there is a relation between the {subject} and {object}.",
    "Considering the full visual features of the image and the masks of the {subject} and {object}, infer whether a relation exists between the {subject} and {object}.",
    "Leveraging the overall visual features of the image and the masks designated for the {subject} and {object}, identify whether there is a relation between the {subject} and {object}.",
    "By examining the entire visual features of the image and the masks for the {subject} and {object}, predict whether there is a relation between the {subject} and {object}.",
];

const GENERATION_TEMPLATES: [&str; 10] = [
    "Please determine what the relation is between {subject} and {object}.",
    "Please ascertain the relation between the {subject} and {object}.",
    "Please identify what relations exists between the {subject} and {object}.",
    "Please decide what kind of relation is present between the {subject} and the {object}.",
    "Please deduce the relation between the {subject} and the {object}.",
    "Please establish what the relation is between the {subject} and {object}.",
    "Please clarify the relation between the {subject} and {object}.",
    "Please determine the type of relation existing between the {subject} and the {object}.",
    "Please pinpoint the kind of relation between the {subject} and {object}.",
    "Please evaluate what the relation is between the {subject} and the {object}.",
];

const JUDGEMENT_TEMPLATES: [&str; 10] = [
    "Please judge between {subject} and {object} whether there is a relation {relation}.",
    "Please determine if there exists a relation between the {subject} and {object}, termed {relation}.",
    "Please ascertain whether there is a relation between the {subject} and {object}, identified as {relation}.",
    "Please evaluate if a relation between the {subject} and {object} can be classified as {relation}.",
    "Please judge whether there is a relation between the {subject} and {object} referred to as {relation}.",
    "Please decide if there is a relation between the {subject} and {object} denoted as {relation}.",
    "Please establish whether there is a relation between the {subject} and {object}, described as {relation}.",
    "Please conclude whether a relation exists between the {subject} and {object}, designated as {relation}.",
    "Please investigate whether there is a relation between the {subject} and {object}, recognized as {relation}.",
    "Please analyze if there exists a relation between the {subject} and {object}, characterized as {relation}.",
];

impl Default for InstructionBanks {
    fn default() -> Self {
        let own = |t: &[&str; 10]| t.iter().map(|s| s.to_string()).collect();
        Self {
            pair_feat: own(&PAIR_FEAT_TEMPLATES),
            rel_exist: own(&REL_EXIST_TEMPLATES),
            generation: own(&GENERATION_TEMPLATES),
            judgement: own(&JUDGEMENT_TEMPLATES),
        }
    }
}

impl InstructionBanks {
    pub fn validate(&self) -> Result<(), TextError> {
        for (name, bank) in [
            ("pair_feat", &self.pair_feat),
            ("rel_exist", &self.rel_exist),
            ("generation", &self.generation),
            ("judgement", &self.judgement),
        ] {
            if bank.len() != 10 {
                return Err(TextError::BankSize(name, bank.len()));
            }
        }
        for t in &self.judgement {
            judgement_prefix(t)?;
        }
        Ok(())
    }

    pub fn bank(&self, kind: InstructionKind) -> &[String] {
        match kind {
            InstructionKind::PairFeat => &self.pair_feat,
            InstructionKind::RelExist => &self.rel_exist,
            InstructionKind::Generation => &self.generation,
            InstructionKind::Judgement => &self.judgement,
        }
    }

    pub fn all_templates(&self) -> impl Iterator<Item = &String> {
        self.pair_feat
            .iter()
            .chain(&self.rel_exist)
            .chain(&self.generation)
            .chain(&self.judgement)
    }

    /// Template index: uniform draw while training, the first otherwise.
    pub fn choose(&self, kind: InstructionKind, mode: Mode, rng: &mut impl Rng) -> usize {
        match mode {
            Mode::Infer => 0,
            Mode::Train => rng.gen_range(0..self.bank(kind).len()),
        }
    }

    /// Slot-filled template text. For judgement templates with no relation
    /// given, the text stops right before the `{relation}` slot.
    pub fn fill(
        &self,
        kind: InstructionKind,
        index: usize,
        subject: &str,
        object: &str,
        relation: Option<&str>,
    ) -> Result<String, TextError> {
        if subject.trim().is_empty() {
            return Err(TextError::EmptyFill("subject"));
        }
        if object.trim().is_empty() {
            return Err(TextError::EmptyFill("object"));
        }
        let template = &self.bank(kind)[index];
        let template = match (kind, relation) {
            (InstructionKind::Judgement, None) => judgement_prefix(template)?,
            _ => template.as_str(),
        };
        let mut text = template.replace("{subject}", subject).replace("{object}", object);
        if let Some(r) = relation {
            if r.trim().is_empty() {
                return Err(TextError::EmptyFill("relation"));
            }
            text = text.replace("{relation}", r);
        }
        Ok(text)
    }
}

/// The part of a judgement template preceding `{relation}`. Anything after
/// the slot other than punctuation makes the template unusable with a
/// prefix cache.
pub fn judgement_prefix(template: &str) -> Result<&str, TextError> {
    let at = template
        .find("{relation}")
        .ok_or_else(|| TextError::RelationNotFinal(template.to_string()))?;
    let tail = &template[at + "{relation}".len()..];
    if !split_words(tail).is_empty() {
        return Err(TextError::RelationNotFinal(template.to_string()));
    }
    Ok(&template[..at])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> TextVocabulary {
        TextVocabulary::build(&InstructionBanks::default(), ["walking on", "red circle", "blue square"])
    }

    #[test]
    fn sep_is_a_single_token() {
        let v = vocab();
        assert_eq!(v.tokenize("[SEP]").unwrap(), vec![v.sep()]);
        let on = v.id("on").unwrap();
        assert_eq!(v.tokenize("on[SEP]on").unwrap(), vec![on, v.sep(), on]);
    }

    #[test]
    fn empty_text_is_empty_sequence() {
        assert!(vocab().tokenize("").unwrap().is_empty());
    }

    #[test]
    fn walking_on_round_trips() {
        let v = vocab();
        let ids = v.tokenize("walking on").unwrap();
        assert_eq!(ids.len(), 2);
        assert_eq!(v.detokenize(&ids).unwrap(), "walking on");
    }

    #[test]
    fn unknown_word_is_named() {
        assert_eq!(
            vocab().tokenize("skateboarding").unwrap_err(),
            TextError::UnknownWord("skateboarding".into())
        );
    }

    #[test]
    fn hyphen_and_punctuation() {
        assert_eq!(split_words("the red circle-blue square pair."), ["the", "red", "circle", "-", "blue", "square", "pair"]);
        assert_eq!(split_words("a [SEP] b<eos>"), ["a", "[SEP]", "b", "<eos>"]);
        assert_eq!(split_words("yes No"), ["Yes", "No"]);
    }

    #[test]
    fn banks_hold_ten_templates_with_final_relation_slot() {
        let banks = InstructionBanks::default();
        banks.validate().unwrap();
        let mut bad = banks.clone();
        bad.judgement[3] = "Is {relation} between {subject} and {object}?".into();
        assert!(matches!(bad.validate(), Err(TextError::RelationNotFinal(_))));
        bad.judgement.pop();
        assert!(matches!(bad.validate(), Err(TextError::BankSize("judgement", 9))));
    }

    #[test]
    fn inference_uses_first_template() {
        let banks = InstructionBanks::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [InstructionKind::PairFeat, InstructionKind::RelExist] {
            assert_eq!(banks.choose(kind, Mode::Infer, &mut rng), 0);
        }
        let text = banks.fill(InstructionKind::PairFeat, 0, "cat", "dog", None).unwrap();
        assert!(text.starts_with("Please extract features for the cat-dog pair"));
        let text = banks.fill(InstructionKind::RelExist, 0, "cat", "dog", None).unwrap();
        assert!(text.contains("estimate whether there is a relation"));
    }

    #[test]
    fn training_draws_replay_with_the_seed() {
        let banks = InstructionBanks::default();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .map(|_| banks.choose(InstructionKind::PairFeat, Mode::Train, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert!(draw(9).iter().any(|&i| i != 0));
    }

    #[test]
    fn judgement_prefix_stops_before_relation() {
        let banks = InstructionBanks::default();
        let prefix = banks.fill(InstructionKind::Judgement, 0, "cat", "dog", None).unwrap();
        assert_eq!(prefix, "Please judge between cat and dog whether there is a relation ");
        let full = banks.fill(InstructionKind::Judgement, 0, "cat", "dog", Some("on")).unwrap();
        assert_eq!(normalize_text(&full), format!("{} on", normalize_text(&prefix)));
    }
}
