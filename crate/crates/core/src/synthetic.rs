//! Toy treebanks drawn from a small generative grammar, and a letter cipher
//! that turns one toy language into a look-alike written in Cyrillic.
//!
//! Clauses are `subject-NP [PP] VERB [object-NP] [PP] .` where noun phrases
//! carry an optional determiner and adjectives, and case is marked by
//! suffixes on determiners, adjectives and nouns. Every head is decidable
//! from word classes and order, so a parser can learn the grammar exactly.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::seed;
use crate::treebank::{Sentence, Token};

const ONSETS: &[&str] = &["b", "d", "g", "k", "l", "m", "n", "p", "r", "s", "t", "w", "z", "st", "pr", "gl"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "y"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Case {
    Nom,
    Acc,
    Loc,
}

impl Case {
    fn name(self) -> &'static str {
        match self {
            Case::Nom => "Nom",
            Case::Acc => "Acc",
            Case::Loc => "Loc",
        }
    }

    fn noun_suffix(self) -> &'static str {
        match self {
            Case::Nom => "os",
            Case::Acc => "om",
            Case::Loc => "ie",
        }
    }

    fn adj_suffix(self) -> &'static str {
        match self {
            Case::Nom => "ny",
            Case::Acc => "nego",
            Case::Loc => "nym",
        }
    }

    fn determiner(self) -> &'static str {
        match self {
            Case::Nom => "ten",
            Case::Acc => "tego",
            Case::Loc => "tym",
        }
    }
}

/// A lexicon of stems; sentences from the same grammar share it.
#[derive(Clone, Debug)]
pub struct Grammar {
    nouns: Vec<String>,
    adjectives: Vec<String>,
    verbs: Vec<String>,
    prepositions: Vec<&'static str>,
}

fn stem(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    (0..syllables)
        .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
        .collect()
}

struct Builder {
    tokens: Vec<Token>,
}

impl Builder {
    /// Appends a token with a placeholder head; returns its 1-based index.
    fn push(&mut self, form: String, upos: &str, deprel: &str, feats: &[(&str, &str)]) -> usize {
        self.tokens.push(Token::new(&form, upos, 0, deprel).with_feats(feats));
        self.tokens.len()
    }

    fn attach(&mut self, dep: usize, head: usize) {
        self.tokens[dep - 1].head = head;
    }
}

impl Grammar {
    pub fn new(seed: u64) -> Self {
        let mut rng = seed::rng(seed, "grammar");
        let unique = |n: usize, syl: usize, rng: &mut ChaCha8Rng| {
            let mut out: Vec<String> = Vec::new();
            while out.len() < n {
                let s = stem(rng, syl);
                if !out.contains(&s) {
                    out.push(s);
                }
            }
            out
        };
        Grammar {
            nouns: unique(24, 2, &mut rng),
            adjectives: unique(10, 2, &mut rng),
            verbs: unique(12, 1, &mut rng),
            prepositions: vec!["na", "w", "przy", "pod"],
        }
    }

    /// `count` sentences from the stream named `tag`.
    pub fn sentences(&self, language: &str, count: usize, seed: u64, tag: &str) -> Vec<Sentence> {
        let mut rng = seed::rng(seed, &format!("sentences/{tag}"));
        (0..count)
            .map(|i| {
                let mut s = self.sentence(language, &mut rng);
                s.comments.push(format!(" sent_id = {tag}-{}", i + 1));
                s
            })
            .collect()
    }

    fn noun_phrase(&self, b: &mut Builder, case: Case, rng: &mut ChaCha8Rng) -> usize {
        let mut deps = Vec::new();
        let c = [("Case", case.name())];
        if rng.random_bool(0.6) {
            deps.push(b.push(case.determiner().into(), "DET", "det", &c));
        }
        for _ in 0..rng.random_range(0..=2) {
            let form = format!("{}{}", self.adjectives.choose(rng).unwrap(), case.adj_suffix());
            deps.push(b.push(form, "ADJ", "amod", &c));
        }
        let role = match case {
            Case::Nom => "nsubj",
            Case::Acc => "obj",
            Case::Loc => "obl",
        };
        let form = format!("{}{}", self.nouns.choose(rng).unwrap(), case.noun_suffix());
        let noun = b.push(form, "NOUN", role, &c);
        for d in deps {
            b.attach(d, noun);
        }
        noun
    }

    fn prepositional(&self, b: &mut Builder, head: usize, deprel: &str, rng: &mut ChaCha8Rng) {
        let adp = b.push(self.prepositions.choose(rng).unwrap().to_string(), "ADP", "case", &[]);
        let noun = self.noun_phrase(b, Case::Loc, rng);
        b.attach(adp, noun);
        b.attach(noun, head);
        b.tokens[noun - 1].deprel = deprel.into();
    }

    fn sentence(&self, language: &str, rng: &mut ChaCha8Rng) -> Sentence {
        let mut b = Builder { tokens: Vec::new() };
        let subject = self.noun_phrase(&mut b, Case::Nom, rng);
        if rng.random_bool(0.3) {
            self.prepositional(&mut b, subject, "nmod", rng);
        }
        let past = rng.random_bool(0.5);
        let form = format!("{}{}", self.verbs.choose(rng).unwrap(), if past { "ał" } else { "uje" });
        let tense = if past { "Past" } else { "Pres" };
        let verb = b.push(form, "VERB", "root", &[("Tense", tense)]);
        b.attach(subject, verb);
        if rng.random_bool(0.7) {
            let object = self.noun_phrase(&mut b, Case::Acc, rng);
            b.attach(object, verb);
        }
        if rng.random_bool(0.4) {
            self.prepositional(&mut b, verb, "obl", rng);
        }
        let dot = b.push(".".into(), "PUNCT", "punct", &[]);
        b.attach(dot, verb);
        b.attach(verb, 0);
        Sentence::new(language, b.tokens)
    }
}

/// Latin letters used by the grammar and their Cyrillic counterparts.
const CIPHER: &[(char, char)] = &[
    ('a', 'а'),
    ('b', 'б'),
    ('d', 'д'),
    ('e', 'е'),
    ('g', 'г'),
    ('i', 'и'),
    ('k', 'к'),
    ('l', 'л'),
    ('ł', 'ў'),
    ('m', 'м'),
    ('n', 'н'),
    ('o', 'о'),
    ('p', 'п'),
    ('r', 'р'),
    ('s', 'с'),
    ('t', 'т'),
    ('u', 'у'),
    ('w', 'в'),
    ('y', 'ы'),
    ('z', 'з'),
    ('j', 'й'),
];

pub fn cipher_char(c: char) -> char {
    CIPHER.iter().find(|p| p.0 == c).map_or(c, |p| p.1)
}

pub fn cipher_word(word: &str) -> String {
    word.chars().map(cipher_char).collect()
}

/// The same sentence in the ciphered language: forms are rewritten letter
/// by letter, everything else is kept.
pub fn cipher_sentence(sentence: &Sentence, language: &str) -> Sentence {
    let mut out = sentence.clone();
    out.language = language.to_string();
    for t in &mut out.tokens {
        t.form = cipher_word(&t.form);
        t.lemma = cipher_word(&t.lemma);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::is_arborescence;
    use crate::treebank::{parse_conllu, to_conllu};

    #[test]
    fn sentences_are_valid_trees_and_reload() {
        let g = Grammar::new(1);
        let ss = g.sentences("xx", 200, 5, "train");
        for s in &ss {
            assert!(is_arborescence(&s.heads()));
            assert_eq!(s.heads().iter().filter(|&&h| h == 0).count(), 1);
            assert_eq!(s.tokens.last().unwrap().upos, "PUNCT");
        }
        let back = parse_conllu(&to_conllu(&ss), "xx");
        assert!(back.rejected.is_empty());
        assert_eq!(back.sentences, ss);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = Grammar::new(3).sentences("xx", 10, 9, "t");
        let b = Grammar::new(3).sentences("xx", 10, 9, "t");
        let c = Grammar::new(3).sentences("xx", 10, 9, "u");
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn cipher_is_injective_and_keeps_structure() {
        let mut targets: Vec<char> = CIPHER.iter().map(|p| p.1).collect();
        targets.sort_unstable();
        targets.dedup();
        assert_eq!(targets.len(), CIPHER.len());
        let s = &Grammar::new(2).sentences("a", 1, 1, "t")[0];
        let c = cipher_sentence(s, "b");
        assert_eq!(c.heads(), s.heads());
        assert_eq!(c.language, "b");
        for (x, y) in s.tokens.iter().zip(&c.tokens) {
            assert_eq!(x.deprel, y.deprel);
            assert_eq!(x.form.chars().count(), y.form.chars().count());
            assert!(y.form.chars().all(|ch| !ch.is_ascii_alphabetic()));
        }
    }
}
