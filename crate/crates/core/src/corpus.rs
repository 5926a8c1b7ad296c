//! Documents and mentions, surface-match coreference chains, context
//! extraction, and assembly of the per-document [`LinkingInstance`].

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feat::{is_acronym, lexical_features, LexicalFeatures};
use crate::kb::{CandidateSet, EntityId, KnowledgeBase};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mention {
    /// Half-open token range `[start, end)`.
    pub span: (usize, usize),
    pub surface: String,
    #[serde(default)]
    pub gold: Option<EntityId>,
    #[serde(default)]
    pub chain: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
    /// Half-open token ranges.
    pub sentences: Vec<(usize, usize)>,
    pub mentions: Vec<Mention>,
}

impl Document {
    pub fn mention_tokens(&self, i: usize) -> &[String] {
        let (s, e) = self.mentions[i].span;
        &self.tokens[s..e]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        for &(s, e) in &self.sentences {
            if s >= e || e > n {
                return Err(Error::data(format!(
                    "document {}: bad sentence range [{s}, {e})",
                    self.id
                )));
            }
        }
        let mut last_start = 0;
        for (i, m) in self.mentions.iter().enumerate() {
            let (s, e) = m.span;
            if s >= e || e > n {
                return Err(Error::data(format!(
                    "document {}: mention {i} span [{s}, {e}) outside {n} tokens",
                    self.id
                )));
            }
            if s < last_start {
                return Err(Error::data(format!(
                    "document {}: mentions not ordered by start",
                    self.id
                )));
            }
            last_start = s;
            let surface = self.tokens[s..e].join(" ");
            if surface != m.surface {
                return Err(Error::data(format!(
                    "document {}: mention {i} surface {:?} does not match its tokens {surface:?}",
                    self.id, m.surface
                )));
            }
        }
        Ok(())
    }

    fn sentence_of(&self, token: usize) -> Option<usize> {
        self.sentences
            .iter()
            .position(|&(s, e)| s <= token && token < e)
    }
}

/// Token → embedding table for context words.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Lexicon {
    dim: usize,
    words: BTreeMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct LexiconRow {
    token: String,
    embedding: Vec<f64>,
}

impl Lexicon {
    pub fn new(dim: usize) -> Self {
        Lexicon {
            dim,
            words: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn insert(&mut self, token: impl Into<String>, embedding: Vec<f64>) -> Result<()> {
        let token = token.into();
        if embedding.len() != self.dim {
            return Err(Error::data(format!(
                "lexicon token {token:?}: embedding length {} but d={}",
                embedding.len(),
                self.dim
            )));
        }
        self.words.insert(token, embedding);
        Ok(())
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.words.get(token).map(Vec::as_slice)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lex: Option<Lexicon> = None;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: LexiconRow = serde_json::from_str(&line)
                .map_err(|e| Error::data(format!("{}:{}: {e}", path.display(), i + 1)))?;
            let lx = lex.get_or_insert_with(|| Lexicon::new(row.embedding.len()));
            lx.insert(row.token, row.embedding)
                .map_err(|e| Error::data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        }
        lex.ok_or_else(|| Error::data(format!("{}: lexicon is empty", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
        for (token, emb) in &self.words {
            let row = serde_json::to_string(&LexiconRow {
                token: token.clone(),
                embedding: emb.clone(),
            })
            .expect("lexicon row serializes");
            writeln!(w, "{row}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Deterministic unit-norm pseudo-embedding for tokens missing from the
/// lexicon, seeded by the FNV-1a hash of the token.
pub fn hashed_embedding(token: &str, dim: usize) -> Vec<f64> {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in token.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = crate::nn::norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// The context word embeddings of one mention, in document order.
#[derive(Clone, Debug, PartialEq)]
pub struct MentionContext {
    pub words: Vec<Vec<f64>>,
}

impl MentionContext {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut c = x;
        while self.0[c] != r {
            let next = self.0[c];
            self.0[c] = r;
            c = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.0[hi] = lo;
        }
    }
}

fn is_prefix_or_suffix(short: &[String], long: &[String]) -> bool {
    short.len() <= long.len() && (long.starts_with(short) || long.ends_with(short))
}

/// Chain id per mention. Two mentions corefer when their case-folded
/// token sequences are equal or one is a token prefix/suffix of the
/// other; chains are the transitive closure, numbered by first mention.
/// Chains supplied on every mention of the document are used as given.
pub fn build_coref_chains(document: &Document) -> Vec<usize> {
    let n = document.mentions.len();
    if n > 0 && document.mentions.iter().all(|m| m.chain.is_some()) {
        let mut relabel: BTreeMap<u32, usize> = BTreeMap::new();
        return document
            .mentions
            .iter()
            .map(|m| {
                let next = relabel.len();
                *relabel.entry(m.chain.expect("checked")).or_insert(next)
            })
            .collect();
    }
    let folded: Vec<Vec<String>> = (0..n)
        .map(|i| {
            document
                .mention_tokens(i)
                .iter()
                .map(|t| t.to_lowercase())
                .collect()
        })
        .collect();
    let mut uf = UnionFind((0..n).collect());
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&folded[i], &folded[j]);
            if is_prefix_or_suffix(a, b) || is_prefix_or_suffix(b, a) {
                uf.union(i, j);
            }
        }
    }
    let mut relabel: BTreeMap<usize, usize> = BTreeMap::new();
    (0..n)
        .map(|i| {
            let root = uf.find(i);
            let next = relabel.len();
            *relabel.entry(root).or_insert(next)
        })
        .collect()
}

/// Embeddings of every in-lexicon token of every sentence holding a
/// chain-mate of `mention`. Falls back to the mention's own sentence and
/// then to the mention tokens (hash-embedded when out of lexicon).
pub fn extract_context(
    document: &Document,
    mention: usize,
    chains: &[usize],
    lexicon: &Lexicon,
) -> MentionContext {
    let chain = chains[mention];
    let mut sentences: Vec<usize> = document
        .mentions
        .iter()
        .zip(chains)
        .filter(|(_, &c)| c == chain)
        .filter_map(|(m, _)| document.sentence_of(m.span.0))
        .collect();
    sentences.sort_unstable();
    sentences.dedup();

    let gather = |sents: &[usize]| -> Vec<Vec<f64>> {
        sents
            .iter()
            .flat_map(|&s| {
                let (a, b) = document.sentences[s];
                document.tokens[a..b].iter()
            })
            .filter_map(|t| lexicon.get(t).map(<[f64]>::to_vec))
            .collect()
    };

    let mut words = gather(&sentences);
    if words.is_empty() {
        if let Some(own) = document.sentence_of(document.mentions[mention].span.0) {
            words = gather(&[own]);
        }
    }
    if words.is_empty() {
        words = document
            .mention_tokens(mention)
            .iter()
            .map(|t| {
                lexicon
                    .get(t)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| hashed_embedding(t, lexicon.dim()))
            })
            .collect();
    }
    MentionContext { words }
}

/// A mention retained for linking: nonempty candidates and its cached
/// per-candidate evidence.
#[derive(Clone, Debug, PartialEq)]
pub struct ActiveMention {
    /// Index into `document.mentions`.
    pub mention: usize,
    pub candidates: CandidateSet,
    pub context: MentionContext,
    pub lexical: Vec<LexicalFeatures>,
}

impl ActiveMention {
    pub fn entity(&self, candidate: usize) -> EntityId {
        self.candidates[candidate].entity
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkingInstance {
    pub document: Document,
    pub chains: Vec<usize>,
    /// In document order.
    pub active: Vec<ActiveMention>,
    /// Mentions whose surface has no candidates.
    pub unlinkable: Vec<usize>,
}

impl LinkingInstance {
    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    pub fn gold(&self, pos: usize) -> Option<EntityId> {
        self.document.mentions[self.active[pos].mention].gold
    }

    /// Candidate index of the gold entity, if it is among the candidates.
    pub fn gold_candidate(&self, pos: usize) -> Option<usize> {
        let g = self.gold(pos)?;
        self.active[pos]
            .candidates
            .iter()
            .position(|c| c.entity == g)
    }

    pub fn mention_tokens(&self, pos: usize) -> &[String] {
        self.document.mention_tokens(self.active[pos].mention)
    }

    pub fn surface(&self, pos: usize) -> &str {
        &self.document.mentions[self.active[pos].mention].surface
    }

    pub fn is_acronym(&self, pos: usize) -> bool {
        is_acronym(self.surface(pos))
    }

    /// Mentions with a gold label, linkable or not.
    pub fn gold_mentions(&self) -> usize {
        self.document
            .mentions
            .iter()
            .filter(|m| m.gold.is_some())
            .count()
    }
}

pub fn build_instance(
    document: &Document,
    kb: &KnowledgeBase,
    lexicon: &Lexicon,
    k: usize,
) -> Result<LinkingInstance> {
    document.validate()?;
    if k == 0 {
        return Err(Error::Config("candidate count k must be positive".into()));
    }
    if lexicon.dim() != kb.dim() {
        return Err(Error::data(format!(
            "lexicon dimension {} differs from KB dimension {}",
            lexicon.dim(),
            kb.dim()
        )));
    }
    let chains = build_coref_chains(document);
    let mut active = Vec::new();
    let mut unlinkable = Vec::new();
    for (i, m) in document.mentions.iter().enumerate() {
        let candidates = kb.alias_lookup(&m.surface, k);
        if candidates.is_empty() {
            unlinkable.push(i);
            continue;
        }
        let mention_tokens = document.mention_tokens(i);
        let lexical = candidates
            .iter()
            .map(|c| {
                Ok(lexical_features(
                    mention_tokens,
                    &kb.entity(c.entity)?.title,
                    &document.tokens,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        active.push(ActiveMention {
            mention: i,
            candidates,
            context: extract_context(document, i, &chains, lexicon),
            lexical,
        });
    }
    Ok(LinkingInstance {
        document: document.clone(),
        chains,
        active,
        unlinkable,
    })
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line)
            .map_err(|e| Error::data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        doc.validate()
            .map_err(|e| Error::data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn save_corpus(docs: &[Document], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for d in docs {
        let line = serde_json::to_string(d).expect("document serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
