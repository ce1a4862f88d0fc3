//! The parser network: a character-level reader, a bidirectional GRU
//! tagger, an auxiliary POS predictor and the head scorer and labeler.
//! One network exists per language; subnetworks named in the
//! [`SharingSpec`] are aliased across languages.

mod config;

pub use config::{DropoutRates, LossReduction, LossWeights, ModelConfig, SharingSpec, Subnet};

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::{Rng, RngCore, SeedableRng};
use serde::Serialize;
use thiserror::Error;

use crate::decoder::{assign_labels, DecodeError, DecodeOptions, ParseTree, ScoreMatrix};
use crate::numcore::gradcheck::{check_coordinates, CoordinateCheck};
use crate::numcore::{Gradients, NumError, ParamId, ParamStore, Reduction, Tape, Tensor, Var};
use crate::seed;
use crate::treebank::{Category, Sentence, TreebankError, VocabularySet};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Treebank(#[from] TreebankError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("model config: {0}")]
    Config(String),
    #[error("cannot process an empty sentence")]
    EmptySentence,
    #[error("word {0} has no characters")]
    EmptyWord(usize),
    #[error("non-finite loss on {language} sentence {sentence}")]
    NonFiniteLoss { language: String, sentence: String },
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Optional dropout randomness; `None` means inference mode.
pub type DropoutRng<'a> = Option<&'a mut dyn RngCore>;

#[derive(Clone, Debug)]
struct Affine {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct Gru {
    wx: ParamId,
    u_zr: ParamId,
    u_n: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct Reader {
    chars: ParamId,
    fences: ParamId,
    filters: Vec<(usize, ParamId)>,
    proj: Affine,
    mlp: Vec<Affine>,
}

#[derive(Clone, Debug)]
struct Tagger {
    root: ParamId,
    layers: Vec<(Gru, Gru)>,
}

#[derive(Clone, Debug)]
struct Parser {
    w_dep: ParamId,
    head: Affine,
    v: ParamId,
    label_hidden: Affine,
    label_out: Affine,
}

#[derive(Clone, Debug)]
struct Net {
    reader: Reader,
    tagger: Tagger,
    pos: Vec<Affine>,
    parser: Parser,
}

/// Loss components of one sentence, before weighting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossParts {
    pub total: f64,
    pub head: f64,
    pub label: f64,
    pub pos: f64,
}

impl LossParts {
    pub fn plus(&self, o: &LossParts) -> LossParts {
        LossParts {
            total: self.total + o.total,
            head: self.head + o.head,
            label: self.label + o.label,
            pos: self.pos + o.pos,
        }
    }

    pub fn scaled(&self, f: f64) -> LossParts {
        LossParts {
            total: self.total * f,
            head: self.head * f,
            label: self.label * f,
            pos: self.pos * f,
        }
    }
}

/// Word embeddings `e: [n, Edim]` and tagger states `h: [n + 1, Hdim]`
/// (row 0 is ROOT).
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceStates {
    pub e: Tensor,
    pub h: Tensor,
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub scores: ScoreMatrix,
    pub tree: ParseTree,
    /// Argmax id per POS category (UPOS first), one entry per word.
    pub pos: Vec<Vec<usize>>,
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    seed: u64,
}

impl Builder<'_> {
    fn uniform(&mut self, name: &str, shape: [usize; 2], limit: f64, decays: bool) -> Result<ParamId> {
        if let Some(id) = self.store.id(name) {
            return Ok(id);
        }
        let mut rng = seed::rng(self.seed, name);
        let data = (0..shape[0] * shape[1])
            .map(|_| if limit == 0.0 { 0.0 } else { rng.random_range(-limit..limit) })
            .collect();
        let value = Tensor::new(&shape, data)?;
        Ok(if decays {
            self.store.add_weight(name, value)?
        } else {
            self.store.add_bias(name, value)?
        })
    }

    fn weight(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.uniform(name, [rows, cols], 1.0 / (rows as f64).sqrt(), true)
    }

    fn embedding(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.uniform(name, [rows, cols], 0.1, true)
    }

    fn bias(&mut self, name: &str, cols: usize) -> Result<ParamId> {
        self.uniform(name, [1, cols], 0.0, false)
    }

    fn affine(&mut self, name: &str, rows: usize, cols: usize) -> Result<Affine> {
        Ok(Affine {
            w: self.weight(&format!("{name}.w"), rows, cols)?,
            b: self.bias(&format!("{name}.b"), cols)?,
        })
    }

    fn gru(&mut self, name: &str, input: usize, hidden: usize) -> Result<Gru> {
        let b_name = format!("{name}.b");
        let b = match self.store.id(&b_name) {
            Some(id) => id,
            None => {
                let mut data = vec![0.0; 3 * hidden];
                data[..hidden].fill(1.0);
                self.store.add_bias(b_name, Tensor::row(data))?
            }
        };
        Ok(Gru {
            wx: self.weight(&format!("{name}.wx"), input, 3 * hidden)?,
            u_zr: self.weight(&format!("{name}.u_zr"), hidden, 2 * hidden)?,
            u_n: self.weight(&format!("{name}.u_n"), hidden, hidden)?,
            b,
        })
    }
}

/// Per-language networks over one parameter store.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    config: ModelConfig,
    sharing: SharingSpec,
    vocab: VocabularySet,
    store: ParamStore,
    nets: Vec<Net>,
}

impl ModelBundle {
    /// Creates the networks for every vocabulary language. Shared
    /// subnetworks get unprefixed parameter names and exist once; private
    /// ones are prefixed with `<language>.`. Each parameter's initial value
    /// depends only on `seed` and its name.
    pub fn new(config: ModelConfig, sharing: SharingSpec, vocab: VocabularySet, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut nets = Vec::new();
        let categories: Vec<(String, usize)> = vocab
            .categories()
            .iter()
            .map(|(c, inv)| (c.name(), inv.len()))
            .collect();
        for lang in vocab.languages() {
            let mut b = Builder {
                store: &mut store,
                seed,
            };
            let prefix = |s: Subnet| {
                if sharing.is_shared(s) {
                    s.name().to_string()
                } else {
                    format!("{lang}.{}", s.name())
                }
            };
            let c = &config;
            let p = prefix(Subnet::Reader);
            let reader = Reader {
                chars: b.embedding(&format!("{p}.chars"), vocab.char_rows(), c.char_embed_dim)?,
                fences: b.embedding(&format!("{lang}.reader.fences"), 2, c.char_embed_dim)?,
                filters: c
                    .filters
                    .iter()
                    .map(|&(w, n)| Ok((w, b.weight(&format!("{p}.filters.k{w}"), w * c.char_embed_dim, n)?)))
                    .collect::<Result<_>>()?,
                proj: b.affine(&format!("{p}.proj"), c.total_filters(), c.reader_proj_dim)?,
                mlp: (0..c.reader_mlp_layers)
                    .map(|i| b.affine(&format!("{p}.mlp{i}"), c.reader_proj_dim, c.reader_proj_dim))
                    .collect::<Result<_>>()?,
            };
            let p = prefix(Subnet::Tagger);
            let tagger = Tagger {
                root: b.embedding(&format!("{p}.root"), 1, c.embed_dim())?,
                layers: (0..c.tagger_layers)
                    .map(|i| {
                        let input = if i == 0 { c.embed_dim() } else { c.tagger_hidden };
                        Ok((
                            b.gru(&format!("{p}.l{i}.fwd"), input, c.tagger_hidden)?,
                            b.gru(&format!("{p}.l{i}.bwd"), input, c.tagger_hidden)?,
                        ))
                    })
                    .collect::<Result<_>>()?,
            };
            let p = prefix(Subnet::Pos);
            let pos = categories
                .iter()
                .map(|(name, size)| b.affine(&format!("{p}.{name}"), c.tagger_hidden, *size))
                .collect::<Result<_>>()?;
            let p = prefix(Subnet::Parser);
            let labels = vocab.deprel().len();
            let parser = Parser {
                w_dep: b.weight(&format!("{p}.scorer.w_dep"), c.tagger_hidden, c.scorer_hidden)?,
                head: b.affine(&format!("{p}.scorer.head"), c.tagger_hidden, c.scorer_hidden)?,
                v: b.weight(&format!("{p}.scorer.v"), c.scorer_hidden, 1)?,
                label_hidden: b.affine(
                    &format!("{p}.labeler.hidden"),
                    2 * c.tagger_hidden,
                    c.labeler_units * c.labeler_pieces,
                )?,
                label_out: b.affine(&format!("{p}.labeler.out"), c.labeler_units, labels)?,
            };
            nets.push(Net {
                reader,
                tagger,
                pos,
                parser,
            });
        }
        Ok(ModelBundle {
            config,
            sharing,
            vocab,
            store,
            nets,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn sharing(&self) -> SharingSpec {
        self.sharing
    }

    pub fn vocab(&self) -> &VocabularySet {
        &self.vocab
    }

    pub fn languages(&self) -> &[String] {
        self.vocab.languages()
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn language_index(&self, language: &str) -> Result<usize> {
        Ok(self.vocab.language_index(language)?)
    }

    /// Every parameter used by `language`'s network, in registration order.
    pub fn language_params(&self, language: usize) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = Subnet::ALL
            .iter()
            .flat_map(|&s| self.subnet_params(language, s))
            .collect();
        ids.sort_by_key(|id| id.index());
        ids
    }

    /// Parameters of one subnetwork of `language`.
    pub fn subnet_params(&self, language: usize, subnet: Subnet) -> Vec<ParamId> {
        let net = &self.nets[language];
        match subnet {
            Subnet::Reader => {
                let mut ids = vec![net.reader.chars, net.reader.fences];
                ids.extend(net.reader.filters.iter().map(|f| f.1));
                for a in std::iter::once(&net.reader.proj).chain(&net.reader.mlp) {
                    ids.extend([a.w, a.b]);
                }
                ids
            }
            Subnet::Tagger => {
                let mut ids = vec![net.tagger.root];
                for (f, b) in &net.tagger.layers {
                    for g in [f, b] {
                        ids.extend([g.wx, g.u_zr, g.u_n, g.b]);
                    }
                }
                ids
            }
            Subnet::Pos => net.pos.iter().flat_map(|a| [a.w, a.b]).collect(),
            Subnet::Parser => {
                let p = &net.parser;
                vec![
                    p.w_dep,
                    p.head.w,
                    p.head.b,
                    p.v,
                    p.label_hidden.w,
                    p.label_hidden.b,
                    p.label_out.w,
                    p.label_out.b,
                ]
            }
        }
    }

    /// Languages grouped so that two languages share a group whenever their
    /// networks share any parameter.
    pub fn language_groups(&self) -> Vec<Vec<usize>> {
        let n = self.nets.len();
        let sets: Vec<BTreeSet<usize>> = (0..n)
            .map(|l| self.language_params(l).iter().map(|id| id.index()).collect())
            .collect();
        let mut group: Vec<usize> = (0..n).collect();
        for a in 0..n {
            for b in a + 1..n {
                if !sets[a].is_disjoint(&sets[b]) {
                    let (ga, gb) = (group[a], group[b]);
                    for g in group.iter_mut() {
                        if *g == gb {
                            *g = ga;
                        }
                    }
                }
            }
        }
        let mut out: Vec<Vec<usize>> = Vec::new();
        for l in 0..n {
            match out.iter_mut().find(|g| group[g[0]] == group[l]) {
                Some(g) => g.push(l),
                None => out.push(vec![l]),
            }
        }
        out
    }

    /// Word embeddings `[n, Edim]` for `forms`.
    fn read_words(&self, tape: &mut Tape, lang: usize, forms: &[&str], rng: &mut DropoutRng) -> Result<Var> {
        let net = &self.nets[lang];
        let language = &self.vocab.languages()[lang];
        let table = tape.param(net.reader.chars);
        let fences = tape.param(net.reader.fences);
        let sow = tape.slice_rows(fences, 0, 1)?;
        let eow = tape.slice_rows(fences, 1, 1)?;
        let filters: Vec<(usize, Var, usize)> = net
            .reader
            .filters
            .iter()
            .map(|&(w, id)| (w, tape.param(id), self.store.value(id).cols()))
            .collect();
        let mut rows = Vec::with_capacity(forms.len());
        for (i, form) in forms.iter().enumerate() {
            let ids = self.vocab.encode_chars(form, language)?;
            if ids.is_empty() {
                return Err(ModelError::EmptyWord(i + 1));
            }
            let inner = tape.gather_rows(table, &ids)?;
            let c = tape.concat_rows(&[sow, inner, eow])?;
            let len = ids.len() + 2;
            let mut pooled = Vec::with_capacity(filters.len());
            for &(w, f, count) in &filters {
                pooled.push(if w <= len {
                    let conv = tape.conv1d(c, f, w)?;
                    tape.max_pool_rows(conv)?
                } else {
                    tape.constant(Tensor::zeros(&[1, count]))
                });
            }
            rows.push(tape.concat_cols(&pooled)?);
        }
        let r = tape.concat_rows(&rows)?;
        let mut x = self.affine(tape, &net.reader.proj, r)?;
        for layer in &net.reader.mlp {
            let a = self.affine(tape, layer, x)?;
            x = tape.relu(a);
        }
        dropout(tape, x, self.config.dropout.reader, rng)
    }

    fn affine(&self, tape: &mut Tape, a: &Affine, x: Var) -> Result<Var> {
        let w = tape.param(a.w);
        let b = tape.param(a.b);
        Ok(tape.affine(x, w, b)?)
    }

    /// Tagger states `[n + 1, Hdim]` for embeddings `e: [n, Edim]`.
    fn tag(&self, tape: &mut Tape, lang: usize, e: Var, rng: &mut DropoutRng) -> Result<Var> {
        let tagger = &self.nets[lang].tagger;
        let root = tape.param(tagger.root);
        let mut x = tape.concat_rows(&[root, e])?;
        for (i, (fwd, bwd)) in tagger.layers.iter().enumerate() {
            if i > 0 {
                x = dropout(tape, x, self.config.dropout.tagger, rng)?;
            }
            let f = self.run_gru(tape, fwd, x, false)?;
            let b = self.run_gru(tape, bwd, x, true)?;
            x = tape.add(f, b)?;
        }
        Ok(x)
    }

    fn run_gru(&self, tape: &mut Tape, g: &Gru, x: Var, reverse: bool) -> Result<Var> {
        let hidden = self.config.tagger_hidden;
        let steps = tape.value(x).rows();
        let wx = tape.param(g.wx);
        let b = tape.param(g.b);
        let u_zr = tape.param(g.u_zr);
        let u_n = tape.param(g.u_n);
        let xw = tape.matmul(x, wx)?;
        let xw = tape.add_row(xw, b)?;
        let mut h = tape.constant(Tensor::zeros(&[1, hidden]));
        let mut out = vec![h; steps];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let xt = tape.slice_rows(xw, t, 1)?;
            let x_zr = tape.slice_cols(xt, 0, 2 * hidden)?;
            let x_n = tape.slice_cols(xt, 2 * hidden, hidden)?;
            let h_zr = tape.matmul(h, u_zr)?;
            let pre = tape.add(x_zr, h_zr)?;
            let zr = tape.sigmoid(pre);
            let z = tape.slice_cols(zr, 0, hidden)?;
            let r = tape.slice_cols(zr, hidden, hidden)?;
            let rh = tape.mul(r, h)?;
            let h_n = tape.matmul(rh, u_n)?;
            let pre_n = tape.add(x_n, h_n)?;
            let cand = tape.tanh(pre_n);
            let keep = tape.mul(z, h)?;
            let one_minus_z = tape.one_minus(z);
            let fresh = tape.mul(one_minus_z, cand)?;
            h = tape.add(keep, fresh)?;
            out[t] = h;
        }
        Ok(tape.concat_rows(&out)?)
    }

    /// Raw head scores `[n, n + 1]`: `v · tanh(W_d H_w + W_h H_h + b)`.
    fn head_logits(&self, tape: &mut Tape, lang: usize, h: Var) -> Result<Var> {
        let p = &self.nets[lang].parser;
        let n = tape.value(h).rows() - 1;
        let deps = tape.slice_rows(h, 1, n)?;
        let w_dep = tape.param(p.w_dep);
        let a = tape.matmul(deps, w_dep)?;
        let b = self.affine(tape, &p.head, h)?;
        let pairs = tape.pair_add(a, b)?;
        let act = tape.tanh(pairs);
        let v = tape.param(p.v);
        let s = tape.matmul(act, v)?;
        Ok(tape.reshape(s, &[n, n + 1])?)
    }

    /// Label logits for edges given dependent rows `deps` and head rows
    /// `heads`, both `[k, Hdim]`.
    fn label_logits(&self, tape: &mut Tape, lang: usize, deps: Var, heads: Var, rng: &mut DropoutRng) -> Result<Var> {
        let p = &self.nets[lang].parser;
        let x = tape.concat_cols(&[deps, heads])?;
        let hid = self.affine(tape, &p.label_hidden, x)?;
        let m = tape.maxout(hid, self.config.labeler_pieces)?;
        let m = dropout(tape, m, self.config.dropout.labeler, rng)?;
        self.affine(tape, &p.label_out, m)
    }

    fn pos_logits(&self, tape: &mut Tape, lang: usize, h: Var) -> Result<Vec<Var>> {
        let n = tape.value(h).rows() - 1;
        let deps = tape.slice_rows(h, 1, n)?;
        self.nets[lang]
            .pos
            .iter()
            .map(|a| self.affine(tape, a, deps))
            .collect()
    }

    fn check_language(&self, lang: usize) -> Result<()> {
        if lang >= self.nets.len() {
            return Err(TreebankError::UnknownLanguage {
                language: format!("#{lang}"),
                known: self.vocab.languages().to_vec(),
            }
            .into());
        }
        Ok(())
    }

    fn loss_on_tape(&self, tape: &mut Tape, lang: usize, sentence: &Sentence, rng: &mut DropoutRng) -> Result<(Var, LossParts)> {
        self.check_language(lang)?;
        if sentence.is_empty() {
            return Err(ModelError::EmptySentence);
        }
        let n = sentence.len();
        let forms: Vec<&str> = sentence.forms().collect();
        let e = self.read_words(tape, lang, &forms, rng)?;
        let h = self.tag(tape, lang, e, rng)?;
        let red = match self.config.reduction {
            LossReduction::Mean => Reduction::Mean,
            LossReduction::Sum => Reduction::Sum,
        };

        let heads = sentence.heads();
        let head_logits = self.head_logits(tape, lang, h)?;
        let lh = tape.softmax_cross_entropy(head_logits, &heads, red)?;

        let labels: Vec<usize> = sentence.tokens.iter().map(|t| self.vocab.deprel().id(&t.deprel)).collect();
        let deps = tape.slice_rows(h, 1, n)?;
        let gold_heads = tape.gather_rows(h, &heads)?;
        let label_logits = self.label_logits(tape, lang, deps, gold_heads, rng)?;
        let ll = tape.softmax_cross_entropy(label_logits, &labels, red)?;

        let targets: Vec<Vec<usize>> = sentence.tokens.iter().map(|t| self.vocab.category_targets(t)).collect();
        let logits = self.pos_logits(tape, lang, h)?;
        let mut parts = Vec::with_capacity(logits.len());
        for (c, &l) in logits.iter().enumerate() {
            let t: Vec<usize> = targets.iter().map(|row| row[c]).collect();
            parts.push(tape.softmax_cross_entropy(l, &t, Reduction::Sum)?);
        }
        let pos_sum = tape.concat_cols(&parts)?;
        let pos_sum = tape.sum(pos_sum);
        let norm = match red {
            Reduction::Mean => (n * parts.len()) as f64,
            Reduction::Sum => parts.len() as f64,
        };
        let lt = tape.scale(pos_sum, 1.0 / norm);

        let w = self.config.loss_weights;
        let a = tape.scale(lh, w.head);
        let b = tape.scale(ll, w.label);
        let c = tape.scale(lt, w.pos);
        let ab = tape.add(a, b)?;
        let total = tape.add(ab, c)?;
        let parts = LossParts {
            total: tape.value(total).item()?,
            head: tape.value(lh).item()?,
            label: tape.value(ll).item()?,
            pos: tape.value(lt).item()?,
        };
        if !parts.total.is_finite() {
            return Err(self.non_finite(lang, sentence));
        }
        Ok((total, parts))
    }

    fn non_finite(&self, lang: usize, sentence: &Sentence) -> ModelError {
        let id = sentence.sent_id().map(str::to_string).unwrap_or_else(|| {
            let words: Vec<&str> = sentence.forms().take(5).collect();
            format!("starting {:?}", words.join(" "))
        });
        ModelError::NonFiniteLoss {
            language: self.vocab.languages()[lang].clone(),
            sentence: id,
        }
    }

    /// Loss of one gold sentence. Passing an RNG enables dropout.
    pub fn sentence_loss(&self, lang: usize, sentence: &Sentence, mut rng: DropoutRng) -> Result<LossParts> {
        let mut tape = Tape::new(&self.store);
        Ok(self.loss_on_tape(&mut tape, lang, sentence, &mut rng)?.1)
    }

    /// Loss and its gradient with respect to every parameter it touches.
    pub fn loss_and_gradients(&self, lang: usize, sentence: &Sentence, mut rng: DropoutRng) -> Result<(LossParts, Gradients)> {
        let mut tape = Tape::new(&self.store);
        let (loss, parts) = self.loss_on_tape(&mut tape, lang, sentence, &mut rng)?;
        let grads = tape.backward(loss).map_err(|e| match e {
            NumError::NonFinite(_) => self.non_finite(lang, sentence),
            e => e.into(),
        })?;
        Ok((parts, grads))
    }

    /// Compares [`Self::loss_and_gradients`] with central differences of the
    /// total loss at the given coordinates. Dropout masks
    /// are drawn from a fresh `dropout_seed` RNG for every evaluation.
    pub fn gradient_check(
        &mut self,
        lang: usize,
        sentence: &Sentence,
        dropout_seed: Option<u64>,
        coords: &[(ParamId, usize)],
    ) -> Result<CoordinateCheck> {
        let fresh = || dropout_seed.map(rand_chacha::ChaCha8Rng::seed_from_u64);
        let mut r = fresh();
        let (_, grads) = self.loss_and_gradients(lang, sentence, r.as_mut().map(|r| r as &mut dyn RngCore))?;
        let loss = |b: &ModelBundle| {
            let mut r = fresh();
            b.sentence_loss(lang, sentence, r.as_mut().map(|r| r as &mut dyn RngCore))
                .map_or(f64::NAN, |l| l.total)
        };
        Ok(check_coordinates(
            self,
            ModelBundle::store_mut,
            coords,
            &grads,
            loss,
        ))
    }

    /// Embeddings and tagger states without dropout.
    pub fn states(&self, lang: usize, forms: &[&str]) -> Result<SentenceStates> {
        self.check_language(lang)?;
        if forms.is_empty() {
            return Err(ModelError::EmptySentence);
        }
        let mut tape = Tape::new(&self.store);
        let e = self.read_words(&mut tape, lang, forms, &mut None)?;
        let h = self.tag(&mut tape, lang, e, &mut None)?;
        Ok(SentenceStates {
            e: tape.value(e).clone(),
            h: tape.value(h).clone(),
        })
    }

    /// Embedding of one word (inference mode).
    pub fn read_word(&self, lang: usize, form: &str) -> Result<Vec<f64>> {
        self.check_language(lang)?;
        let mut tape = Tape::new(&self.store);
        let e = self.read_words(&mut tape, lang, &[form], &mut None)?;
        Ok(tape.value(e).data().to_vec())
    }

    /// Embeddings of many words, one row each.
    pub fn read_words_batch(&self, lang: usize, forms: &[&str]) -> Result<Tensor> {
        self.check_language(lang)?;
        let mut tape = Tape::new(&self.store);
        let e = self.read_words(&mut tape, lang, forms, &mut None)?;
        Ok(tape.value(e).clone())
    }

    /// Tagger states for precomputed embeddings `e: [n, Edim]`.
    pub fn tag_embeddings(&self, lang: usize, e: &Tensor, mut rng: DropoutRng) -> Result<Tensor> {
        self.check_language(lang)?;
        let mut tape = Tape::new(&self.store);
        let ev = tape.constant(e.clone());
        let h = self.tag(&mut tape, lang, ev, &mut rng)?;
        Ok(tape.value(h).clone())
    }

    /// Per-word log-distributions over heads.
    pub fn score_heads(&self, lang: usize, h: &Tensor) -> Result<ScoreMatrix> {
        self.check_language(lang)?;
        let mut tape = Tape::new(&self.store);
        let hv = tape.constant(h.clone());
        let logits = self.head_logits(&mut tape, lang, hv)?;
        let t = tape.value(logits);
        let rows = (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect();
        Ok(ScoreMatrix::from_raw(rows)?)
    }

    /// Label distribution for the edge `head -> dep` given tagger states.
    pub fn label_edge(&self, lang: usize, h: &Tensor, dep: usize, head: usize) -> Result<Vec<f64>> {
        Ok(self.label_distributions(lang, h, &[(dep, head)])?.remove(0))
    }

    /// Label distributions for several `(dep, head)` edges at once.
    pub fn label_distributions(&self, lang: usize, h: &Tensor, edges: &[(usize, usize)]) -> Result<Vec<Vec<f64>>> {
        self.check_language(lang)?;
        let mut tape = Tape::new(&self.store);
        let hv = tape.constant(h.clone());
        let deps: Vec<usize> = edges.iter().map(|e| e.0).collect();
        let heads: Vec<usize> = edges.iter().map(|e| e.1).collect();
        let dep_rows = tape.gather_rows(hv, &deps)?;
        let head_rows = tape.gather_rows(hv, &heads)?;
        let logits = self.label_logits(&mut tape, lang, dep_rows, head_rows, &mut None)?;
        Ok(softmax_rows(tape.value(logits)))
    }

    /// Per-category POS distributions for every word.
    pub fn predict_pos(&self, lang: usize, h: &Tensor) -> Result<Vec<Tensor>> {
        self.check_language(lang)?;
        let mut tape = Tape::new(&self.store);
        let hv = tape.constant(h.clone());
        let logits = self.pos_logits(&mut tape, lang, hv)?;
        Ok(logits
            .into_iter()
            .map(|l| {
                let t = tape.value(l);
                let rows = softmax_rows(t);
                Tensor::from_rows(&rows).expect("rectangular")
            })
            .collect())
    }

    /// Parses a sentence given by its word forms.
    pub fn predict(&self, lang: usize, forms: &[&str], opts: DecodeOptions) -> Result<Prediction> {
        let states = self.states(lang, forms)?;
        let scores = self.score_heads(lang, &states.h)?;
        let mut tree = opts.decode(&scores);
        let edges: Vec<(usize, usize)> = tree.heads.iter().enumerate().map(|(i, &h)| (i + 1, h)).collect();
        let dists = self.label_distributions(lang, &states.h, &edges)?;
        assign_labels(&mut tree, |w, _| dists[w - 1].clone());
        let pos = self
            .predict_pos(lang, &states.h)?
            .iter()
            .map(|t| (0..t.rows()).map(|r| argmax(t.row_slice(r))).collect())
            .collect();
        Ok(Prediction { scores, tree, pos })
    }

    /// Rows of `language`'s character table for every character it has
    /// seen, in code-point order.
    pub fn char_embeddings(&self, lang: usize) -> Result<Vec<(char, Vec<f64>)>> {
        self.check_language(lang)?;
        let language = &self.vocab.languages()[lang];
        let table = self.store.value(self.nets[lang].reader.chars);
        let lc = self.vocab.language_chars(language)?;
        lc.chars
            .keys()
            .map(|&c| {
                let row = self.vocab.encode_chars(&c.to_string(), language)?[0];
                Ok((c, table.row_slice(row).to_vec()))
            })
            .collect()
    }

    pub fn num_values(&self) -> usize {
        self.store.num_values()
    }

    /// Human-readable summary written next to checkpoints.
    pub fn model_card(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(s, "languages: {}", self.languages().join(", "));
        let _ = writeln!(s, "shared subnetworks: {}", self.sharing);
        let _ = writeln!(s, "parameters: {} tensors, {} values", self.store.len(), self.num_values());
        let _ = writeln!(s, "\nreader");
        let _ = writeln!(s, "  char embedding: {}", c.char_embed_dim);
        let filters: Vec<String> = c.filters.iter().map(|(w, n)| format!("{n}x{w}")).collect();
        let _ = writeln!(s, "  filters: {} ({})", c.total_filters(), filters.join(" "));
        let _ = writeln!(s, "  projection: {}, relu layers: {}", c.reader_proj_dim, c.reader_mlp_layers);
        let _ = writeln!(s, "tagger: {} bidirectional GRU layers, {} units", c.tagger_layers, c.tagger_hidden);
        let _ = writeln!(s, "scorer: {} tanh units", c.scorer_hidden);
        let _ = writeln!(s, "labeler: {} maxout units x {} pieces", c.labeler_units, c.labeler_pieces);
        let w = c.loss_weights;
        let _ = writeln!(s, "loss weights: head {} label {} pos {}", w.head, w.label, w.pos);
        let d = c.dropout;
        let _ = writeln!(s, "dropout: reader {} tagger {} labeler {}", d.reader, d.tagger, d.labeler);
        let _ = writeln!(s, "\nvocabulary");
        let _ = writeln!(s, "  characters: {} (+{} fences)", self.vocab.char_rows() - 1, 2 * self.languages().len());
        for (cat, inv) in self.vocab.categories() {
            let name = match cat {
                Category::Upos => "upos".to_string(),
                Category::Feature(f) => format!("feature {f}"),
            };
            let _ = writeln!(s, "  {name}: {}", inv.len() - 1);
        }
        let _ = writeln!(s, "  labels: {}", self.vocab.deprel().len() - 1);
        s
    }
}

fn dropout(tape: &mut Tape, x: Var, rate: f64, rng: &mut DropoutRng) -> Result<Var> {
    match rng {
        Some(r) => Ok(tape.dropout(x, rate, true, &mut **r)?),
        None => Ok(x),
    }
}

fn softmax_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows())
        .map(|r| {
            let mut row = t.row_slice(r).to_vec();
            crate::numcore::log_softmax_in_place(&mut row);
            row.iter().map(|v| v.exp()).collect()
        })
        .collect()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..row.len() {
        if row[i] > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests;
