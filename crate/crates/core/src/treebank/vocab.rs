//! Symbol inventories.
//!
//! Characters live in one table shared by all languages so that identical
//! code points in related languages share an id, while every language gets
//! its own start-of-word and end-of-word ids. POS categories (UPOS and one
//! inventory per feature attribute) and dependency labels are unioned across
//! languages; every inventory reserves id 0 for UNK.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use super::{Result, Sentence, Token, TreebankError};

pub const UNK: usize = 0;
pub const UNK_SYMBOL: &str = "<unk>";

/// Injective symbol ↔ id map with UNK at id 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Inventory {
    symbols: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for Inventory {
    fn default() -> Self {
        let mut ids = HashMap::new();
        ids.insert(UNK_SYMBOL.to_string(), UNK);
        Inventory {
            symbols: vec![UNK_SYMBOL.to_string()],
            ids,
        }
    }
}

impl Inventory {
    /// Inventory holding UNK plus `symbols` in sorted order.
    pub fn from_symbols<'a>(symbols: impl IntoIterator<Item = &'a str>) -> Self {
        let sorted: BTreeSet<&str> = symbols.into_iter().collect();
        let mut inv = Inventory::default();
        for s in sorted {
            inv.insert(s);
        }
        inv
    }

    fn insert(&mut self, symbol: &str) -> usize {
        if let Some(&id) = self.ids.get(symbol) {
            return id;
        }
        let id = self.symbols.len();
        self.symbols.push(symbol.to_string());
        self.ids.insert(symbol.to_string(), id);
        id
    }

    /// Id of `symbol`, or UNK.
    pub fn id(&self, symbol: &str) -> usize {
        self.ids.get(symbol).copied().unwrap_or(UNK)
    }

    pub fn get(&self, symbol: &str) -> Option<usize> {
        self.ids.get(symbol).copied()
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn symbols(&self) -> impl Iterator<Item = &str> {
        self.symbols.iter().map(String::as_str)
    }
}

/// One language's view of the shared character table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LanguageChars {
    pub start_of_word: usize,
    pub end_of_word: usize,
    pub chars: BTreeMap<char, usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VocabularySet {
    languages: Vec<String>,
    char_table_size: usize,
    per_language: Vec<LanguageChars>,
    upos: Inventory,
    feats: BTreeMap<String, Inventory>,
    deprel: Inventory,
}

/// A POS-predictor target category: UPOS or one feature attribute.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Category {
    Upos,
    Feature(String),
}

impl Category {
    pub fn name(&self) -> String {
        match self {
            Category::Upos => "upos".into(),
            Category::Feature(attr) => format!("feat:{attr}"),
        }
    }
}

impl VocabularySet {
    /// Builds inventories from training corpora, given in language order.
    pub fn build(corpora: &[(String, Vec<Sentence>)]) -> Result<Self> {
        if corpora.is_empty() || corpora.iter().all(|(_, s)| s.is_empty()) {
            return Err(TreebankError::EmptyCorpus);
        }
        let mut seen = BTreeSet::new();
        for (lang, _) in corpora {
            if !seen.insert(lang.as_str()) {
                return Err(TreebankError::DuplicateLanguage(lang.clone()));
            }
        }

        let all_tokens = || corpora.iter().flat_map(|(_, ss)| ss.iter().flat_map(|s| &s.tokens));
        let all_chars: BTreeSet<char> = all_tokens().flat_map(|t| t.form.chars()).collect();

        let fence_base = 1;
        let char_base = fence_base + 2 * corpora.len();
        let char_ids: BTreeMap<char, usize> = all_chars
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, char_base + i))
            .collect();

        let per_language = corpora
            .iter()
            .enumerate()
            .map(|(i, (_, sentences))| {
                let chars = sentences
                    .iter()
                    .flat_map(|s| &s.tokens)
                    .flat_map(|t| t.form.chars())
                    .map(|c| (c, char_ids[&c]))
                    .collect();
                LanguageChars {
                    start_of_word: fence_base + 2 * i,
                    end_of_word: fence_base + 2 * i + 1,
                    chars,
                }
            })
            .collect();

        let upos = Inventory::from_symbols(all_tokens().map(|t| t.upos.as_str()));
        let deprel = Inventory::from_symbols(all_tokens().map(|t| t.deprel.as_str()));
        let mut feat_values: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for t in all_tokens() {
            for (k, v) in &t.feats {
                feat_values.entry(k).or_default().insert(v);
            }
        }
        let feats = feat_values
            .into_iter()
            .map(|(k, vs)| (k.to_string(), Inventory::from_symbols(vs)))
            .collect();

        Ok(VocabularySet {
            languages: corpora.iter().map(|(l, _)| l.clone()).collect(),
            char_table_size: char_base + all_chars.len(),
            per_language,
            upos,
            feats,
            deprel,
        })
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn language_index(&self, language: &str) -> Result<usize> {
        self.languages
            .iter()
            .position(|l| l == language)
            .ok_or_else(|| TreebankError::UnknownLanguage {
                language: language.to_string(),
                known: self.languages.clone(),
            })
    }

    pub fn language_chars(&self, language: &str) -> Result<&LanguageChars> {
        Ok(&self.per_language[self.language_index(language)?])
    }

    /// Rows needed in a character embedding table.
    pub fn char_table_size(&self) -> usize {
        self.char_table_size
    }

    /// Id of `c` in `language`'s inventory, if the language has seen it.
    pub fn char_id(&self, language: &str, c: char) -> Result<Option<usize>> {
        Ok(self.language_chars(language)?.chars.get(&c).copied())
    }

    /// `[start-of-word, chars..., end-of-word]`; unseen characters map to UNK.
    pub fn encode_word(&self, form: &str, language: &str) -> Result<Vec<usize>> {
        let lc = self.language_chars(language)?;
        let mut ids = Vec::with_capacity(form.chars().count() + 2);
        ids.push(lc.start_of_word);
        ids.extend(form.chars().map(|c| lc.chars.get(&c).copied().unwrap_or(UNK)));
        ids.push(lc.end_of_word);
        Ok(ids)
    }

    /// Rows of a character table that leaves out the fences: UNK is row 0
    /// and every character follows in id order.
    pub fn char_rows(&self) -> usize {
        self.char_table_size - 2 * self.languages.len()
    }

    /// Inner characters of `form` as rows of the fence-free table.
    pub fn encode_chars(&self, form: &str, language: &str) -> Result<Vec<usize>> {
        let lc = self.language_chars(language)?;
        let offset = 2 * self.languages.len();
        Ok(form
            .chars()
            .map(|c| lc.chars.get(&c).map_or(UNK, |id| id - offset))
            .collect())
    }

    pub fn upos(&self) -> &Inventory {
        &self.upos
    }

    pub fn deprel(&self) -> &Inventory {
        &self.deprel
    }

    pub fn feats(&self) -> &BTreeMap<String, Inventory> {
        &self.feats
    }

    /// POS-predictor categories in a fixed order: UPOS, then feature
    /// attributes sorted by name.
    pub fn categories(&self) -> Vec<(Category, &Inventory)> {
        let mut out = vec![(Category::Upos, &self.upos)];
        out.extend(
            self.feats
                .iter()
                .map(|(k, inv)| (Category::Feature(k.clone()), inv)),
        );
        out
    }

    /// Target id per category for one token. An attribute the token does
    /// not carry, or a value never seen in training, maps to UNK.
    pub fn category_targets(&self, token: &Token) -> Vec<usize> {
        let mut out = vec![self.upos.id(&token.upos)];
        for (attr, inv) in &self.feats {
            out.push(token.feats.get(attr).map_or(UNK, |v| inv.id(v)));
        }
        out
    }

    /// Deterministic text export, one `kind<TAB>language<TAB>symbol<TAB>id`
    /// line per entry. The character table comes first (sorted by id), then
    /// UPOS, feature attributes and labels, each sorted by id. Symbols escape
    /// backslash, tab, newline and carriage return.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let mut line = |kind: &str, lang: &str, sym: &str, id: usize| {
            let _ = writeln!(out, "{kind}\t{lang}\t{}\t{id}", escape(sym));
        };
        line("char", "*", UNK_SYMBOL, UNK);
        for (lang, lc) in self.languages.iter().zip(&self.per_language) {
            line("sow", lang, "<sow>", lc.start_of_word);
            line("eow", lang, "<eow>", lc.end_of_word);
        }
        let mut chars: Vec<(usize, &str, char)> = Vec::new();
        for (lang, lc) in self.languages.iter().zip(&self.per_language) {
            for (&c, &id) in &lc.chars {
                chars.push((id, lang, c));
            }
        }
        chars.sort_by(|a, b| (a.0, self.lang_pos(a.1)).cmp(&(b.0, self.lang_pos(b.1))));
        for (id, lang, c) in chars {
            line("char", lang, &c.to_string(), id);
        }
        for (id, sym) in self.upos.symbols().enumerate() {
            line("upos", "*", sym, id);
        }
        for (attr, inv) in &self.feats {
            for (id, sym) in inv.symbols().enumerate() {
                line(&format!("feat:{attr}"), "*", sym, id);
            }
        }
        for (id, sym) in self.deprel.symbols().enumerate() {
            line("deprel", "*", sym, id);
        }
        out
    }

    fn lang_pos(&self, lang: &str) -> usize {
        self.languages.iter().position(|l| l == lang).unwrap_or(usize::MAX)
    }

    /// Parses the output of [`VocabularySet::to_tsv`].
    pub fn from_tsv(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| TreebankError::VocabFormat {
            line,
            message: msg.to_string(),
        };
        let mut languages: Vec<String> = Vec::new();
        let mut fences: Vec<(Option<usize>, Option<usize>)> = Vec::new();
        let mut chars: Vec<BTreeMap<char, usize>> = Vec::new();
        let mut max_char_id = 0;
        let mut upos: Vec<(usize, String)> = Vec::new();
        let mut deprel: Vec<(usize, String)> = Vec::new();
        let mut feats: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
        let mut seen_char_ids: HashMap<usize, char> = HashMap::new();

        let lang_slot = |languages: &mut Vec<String>,
                         fences: &mut Vec<(Option<usize>, Option<usize>)>,
                         chars: &mut Vec<BTreeMap<char, usize>>,
                         lang: &str|
         -> usize {
            match languages.iter().position(|l| l == lang) {
                Some(i) => i,
                None => {
                    languages.push(lang.to_string());
                    fences.push((None, None));
                    chars.push(BTreeMap::new());
                    languages.len() - 1
                }
            }
        };

        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            if raw.is_empty() {
                continue;
            }
            let cols: Vec<&str> = raw.split('\t').collect();
            if cols.len() != 4 {
                return Err(bad(lineno, "expected 4 tab-separated columns"));
            }
            let (kind, lang) = (cols[0], cols[1]);
            let sym = unescape(cols[2]).ok_or_else(|| bad(lineno, "bad escape"))?;
            let id: usize = cols[3].parse().map_err(|_| bad(lineno, "id is not an integer"))?;
            match kind {
                "sow" | "eow" => {
                    if lang == "*" {
                        return Err(bad(lineno, "fence without language"));
                    }
                    let i = lang_slot(&mut languages, &mut fences, &mut chars, lang);
                    let slot = if kind == "sow" { &mut fences[i].0 } else { &mut fences[i].1 };
                    if slot.replace(id).is_some() {
                        return Err(bad(lineno, "duplicate fence"));
                    }
                    max_char_id = max_char_id.max(id);
                }
                "char" if lang == "*" => {
                    if id != UNK || sym != UNK_SYMBOL {
                        return Err(bad(lineno, "only UNK may be language-independent"));
                    }
                }
                "char" => {
                    let mut it = sym.chars();
                    let (Some(c), None) = (it.next(), it.next()) else {
                        return Err(bad(lineno, "char entry must be one character"));
                    };
                    if id == UNK {
                        return Err(bad(lineno, "char entry uses the UNK id"));
                    }
                    if let Some(prev) = seen_char_ids.insert(id, c) {
                        if prev != c {
                            return Err(bad(lineno, "char id reused for another character"));
                        }
                    }
                    let i = lang_slot(&mut languages, &mut fences, &mut chars, lang);
                    chars[i].insert(c, id);
                    max_char_id = max_char_id.max(id);
                }
                "upos" => upos.push((id, sym)),
                "deprel" => deprel.push((id, sym)),
                k if k.starts_with("feat:") => {
                    feats.entry(k["feat:".len()..].to_string()).or_default().push((id, sym));
                }
                _ => return Err(bad(lineno, "unknown entry kind")),
            }
        }

        let inventory = |entries: Vec<(usize, String)>, what: &str| -> Result<Inventory> {
            let mut inv = Inventory::default();
            for (expect, (id, sym)) in entries.into_iter().enumerate() {
                if id != expect || (id == UNK) != (sym == UNK_SYMBOL) {
                    return Err(TreebankError::VocabFormat {
                        line: 0,
                        message: format!("{what} ids must run 0.. with UNK first"),
                    });
                }
                if id != UNK && inv.get(&sym).is_some() {
                    return Err(TreebankError::VocabFormat {
                        line: 0,
                        message: format!("{what} symbol {sym:?} listed twice"),
                    });
                }
                inv.insert(&sym);
            }
            Ok(inv)
        };

        let mut per_language = Vec::new();
        let mut fence_ids = BTreeSet::new();
        for (i, (sow, eow)) in fences.into_iter().enumerate() {
            let (Some(sow), Some(eow)) = (sow, eow) else {
                return Err(bad(0, "language without both fences"));
            };
            if sow != 1 + 2 * i || eow != 2 + 2 * i {
                return Err(bad(0, "fence ids must follow UNK in language order"));
            }
            fence_ids.insert(sow);
            fence_ids.insert(eow);
            if chars[i].values().any(|id| fence_ids.contains(id)) {
                return Err(bad(0, "char id collides with a fence"));
            }
            per_language.push(LanguageChars {
                start_of_word: sow,
                end_of_word: eow,
                chars: std::mem::take(&mut chars[i]),
            });
        }
        if per_language.is_empty() {
            return Err(TreebankError::EmptyCorpus);
        }
        if seen_char_ids.keys().any(|&id| id <= fence_ids.len()) {
            return Err(bad(0, "char id collides with a fence"));
        }

        let feats = feats
            .into_iter()
            .map(|(k, v)| Ok((k.clone(), inventory(v, &format!("feat:{k}"))?)))
            .collect::<Result<_>>()?;
        Ok(VocabularySet {
            languages,
            char_table_size: max_char_id + 1,
            per_language,
            upos: inventory(upos, "upos")?,
            feats,
            deprel: inventory(deprel, "deprel")?,
        })
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut it = s.chars();
    while let Some(c) = it.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        out.push(match it.next()? {
            '\\' => '\\',
            't' => '\t',
            'n' => '\n',
            'r' => '\r',
            _ => return None,
        });
    }
    Some(out)
}
