//! Seeded synthetic knowledge bases and corpora.
//!
//! Entities belong to topics (`topic = id mod topics`) and to families of
//! `candidates` members drawn from different topics. A family shares one
//! ambiguous surface word, so topic evidence from the context and from the
//! other mentions of a document is what separates the members. Titles are
//! spelled so that groups of `candidates` entities across topics share
//! their initials, which makes acronyms ambiguous too.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Lexicon, Mention};
use crate::error::{Error, Result};
use crate::feat::is_acronym;
use crate::kb::{AliasTable, Entity, EntityId, KnowledgeBase, PairStats};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub dim: usize,
    pub entities: usize,
    pub topics: usize,
    pub documents: usize,
    pub mentions_per_doc: usize,
    pub candidates: usize,
    /// Coherence strength: within-topic gold draws and link density.
    pub gamma: f64,
    /// Decay of alias priors over candidate rank.
    pub prior_sharpness: f64,
    /// Probability that a context topic word comes from a random topic
    /// instead of the gold entity's.
    pub noise: f64,
    pub topic_words_per_mention: usize,
    /// Topic words around acronym mentions, which read like headlines.
    pub acronym_topic_words: usize,
    pub noise_words_per_mention: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dim: 16,
            entities: 200,
            topics: 8,
            documents: 120,
            mentions_per_doc: 12,
            candidates: 4,
            gamma: 0.8,
            prior_sharpness: 1.0,
            noise: 0.3,
            topic_words_per_mention: 5,
            acronym_topic_words: 0,
            noise_words_per_mention: 4,
            seed: 0,
        }
    }
}

const ENTITY_SPREAD: f64 = 0.6;
const WORD_SPREAD: f64 = 0.5;
const WORDS_PER_TOPIC: usize = 12;
const NOISE_VOCAB: usize = 120;
const BASE_DENSITY: f64 = 0.02;
const LINK_DENSITY: f64 = 0.25;
const COOCCUR_DENSITY: f64 = 0.4;
const TITLE_PRIOR: f64 = 0.85;
/// Relative odds of naming an entity by family word, full title, acronym,
/// scaled by the alias prior raised to the kind's exponent. Acronym usage
/// ignores the prior, so its ranking misleads.
const KIND_WEIGHTS: [f64; 3] = [0.7, 0.1, 0.05];
const PRIOR_EXPONENT: [f64; 3] = [0.5, 0.5, 0.0];
const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

impl SynthConfig {
    /// A world small enough for exhaustive oracles: three mentions, three
    /// candidates each.
    pub fn tiny(seed: u64) -> Self {
        SynthConfig {
            dim: 4,
            entities: 24,
            topics: 4,
            documents: 1,
            mentions_per_doc: 3,
            candidates: 3,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("dim", self.dim),
            ("entities", self.entities),
            ("topics", self.topics),
            ("documents", self.documents),
            ("mentions_per_doc", self.mentions_per_doc),
            ("candidates", self.candidates),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("synth {name} must be at least 1")));
            }
        }
        if self.candidates > self.entities {
            return Err(Error::Config(
                "more candidates per surface than entities".into(),
            ));
        }
        for (name, v) in [("gamma", self.gamma), ("noise", self.noise)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("synth {name} must lie in [0, 1]")));
            }
        }
        if !(self.prior_sharpness >= 0.0 && self.prior_sharpness.is_finite()) {
            return Err(Error::Config(
                "prior sharpness must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    fn topic(&self, e: usize) -> usize {
        e % self.topics
    }

    fn families(&self) -> usize {
        (self.entities / self.candidates).max(1)
    }

    fn family(&self, e: usize) -> usize {
        e % self.families()
    }

    /// Index of the leading consonant of each entity's qualifier word.
    /// Families sharing a leading consonant are pooled and their entities
    /// cut into runs of `candidates`; each run gets its own qualifier
    /// consonant, so the run shares one acronym.
    fn qualifier_leads(&self) -> Vec<usize> {
        let mut leads = vec![0; self.entities];
        for letter in 0..CONSONANTS.len() {
            let pool: Vec<usize> = (0..self.entities)
                .filter(|&e| self.family(e) % CONSONANTS.len() == letter)
                .collect();
            for (run, chunk) in pool.chunks(self.candidates).enumerate() {
                for &e in chunk {
                    leads[e] = run % CONSONANTS.len();
                }
            }
        }
        leads
    }
}

fn kb_rng(cfg: &SynthConfig) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cfg.seed)
}

fn corpus_rng(cfg: &SynthConfig) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = crate::nn::norm(&v).max(1e-12);
    v.into_iter().map(|x| x / n).collect()
}

fn near(center: &[f64], spread: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let scale = spread / (center.len() as f64).sqrt();
    let z = gaussian(rng, center.len());
    unit(center.iter().zip(z).map(|(c, z)| c + scale * z).collect())
}

/// Pseudo-words with no shared prefixes between families, topic words and
/// noise words.
struct Vocabulary {
    family: Vec<String>,
    qualifier: Vec<String>,
    topic_words: Vec<Vec<String>>,
    noise_words: Vec<String>,
}

impl Vocabulary {
    fn new(cfg: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(2);
        let mut used = BTreeSet::new();
        let mut fresh = |rng: &mut ChaCha8Rng, syllables: usize, lead: Option<usize>| loop {
            let w: String = (0..syllables)
                .flat_map(|i| {
                    let c = match lead {
                        Some(l) if i == 0 => l,
                        _ => rng.gen_range(0..CONSONANTS.len()),
                    };
                    [
                        CONSONANTS[c] as char,
                        VOWELS[rng.gen_range(0..VOWELS.len())] as char,
                    ]
                })
                .collect();
            if used.insert(w.clone()) {
                return w;
            }
        };
        let family = (0..cfg.families())
            .map(|f| fresh(&mut rng, 3, Some(f % CONSONANTS.len())))
            .collect();
        let qualifier = cfg
            .qualifier_leads()
            .into_iter()
            .map(|l| fresh(&mut rng, 3, Some(l)))
            .collect();
        let topic_words = (0..cfg.topics)
            .map(|_| {
                (0..WORDS_PER_TOPIC)
                    .map(|_| fresh(&mut rng, 4, None))
                    .collect()
            })
            .collect();
        let noise_words = (0..NOISE_VOCAB).map(|_| fresh(&mut rng, 4, None)).collect();
        Vocabulary {
            family,
            qualifier,
            topic_words,
            noise_words,
        }
    }
}

/// Normalized priors decaying by `exp(-sharpness · rank)` over a random
/// rank order.
fn ranked_priors(n: usize, sharpness: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(rng);
    let raw: Vec<f64> = ranks
        .iter()
        .map(|&r| (-sharpness * r as f64).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / total).collect()
}

fn pad_candidates(members: &mut Vec<EntityId>, want: usize, entities: usize, rng: &mut ChaCha8Rng) {
    while members.len() < want {
        let e = rng.gen_range(0..entities) as EntityId;
        if !members.contains(&e) {
            members.push(e);
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthWorld {
    pub kb: KnowledgeBase,
    pub lexicon: Lexicon,
}

pub fn gen_kb(cfg: &SynthConfig) -> Result<SynthWorld> {
    cfg.validate()?;
    let mut rng = kb_rng(cfg);
    let vocab = Vocabulary::new(cfg);
    let centroids: Vec<Vec<f64>> = (0..cfg.topics)
        .map(|_| unit(gaussian(&mut rng, cfg.dim)))
        .collect();

    let mut entities: Vec<Entity> = (0..cfg.entities)
        .map(|e| Entity {
            id: e as EntityId,
            title: vec![
                vocab.family[cfg.family(e)].clone(),
                vocab.qualifier[e].clone(),
            ],
            embedding: near(&centroids[cfg.topic(e)], ENTITY_SPREAD, &mut rng),
            in_links: Vec::new(),
            out_links: Vec::new(),
        })
        .collect();

    let same = |a: usize, b: usize| cfg.topic(a) == cfg.topic(b);
    let density = |hi: f64, same_topic: bool| {
        if same_topic {
            BASE_DENSITY + cfg.gamma * (hi - BASE_DENSITY)
        } else {
            BASE_DENSITY * (1.0 - cfg.gamma)
        }
    };
    for a in 0..cfg.entities {
        for b in 0..cfg.entities {
            if a != b && rng.gen_bool(density(LINK_DENSITY, same(a, b))) {
                entities[a].out_links.push(b as EntityId);
                entities[b].in_links.push(a as EntityId);
            }
        }
    }
    let mut pairs = PairStats::default();
    for a in 0..cfg.entities {
        for b in a + 1..cfg.entities {
            if rng.gen_bool(density(COOCCUR_DENSITY, same(a, b))) {
                pairs.set(a as EntityId, b as EntityId, rng.gen_range(1..=12));
            }
        }
    }

    let mut aliases = AliasTable::new();
    let mut members_of: BTreeMap<usize, Vec<EntityId>> = BTreeMap::new();
    for e in 0..cfg.entities {
        members_of
            .entry(cfg.family(e))
            .or_default()
            .push(e as EntityId);
    }
    for (f, mut members) in members_of {
        members.truncate(cfg.candidates);
        pad_candidates(&mut members, cfg.candidates, cfg.entities, &mut rng);
        let priors = ranked_priors(members.len(), cfg.prior_sharpness, &mut rng);
        for (&e, p) in members.iter().zip(priors) {
            aliases.insert(&vocab.family[f], e, p)?;
        }
    }
    for (e, ent) in entities.iter().enumerate() {
        let mut members = vec![e as EntityId];
        pad_candidates(&mut members, cfg.candidates, cfg.entities, &mut rng);
        let rest = if members.len() > 1 {
            (1.0 - TITLE_PRIOR) / (members.len() - 1) as f64
        } else {
            0.0
        };
        let surface = ent.title.join(" ");
        for (i, &m) in members.iter().enumerate() {
            aliases.insert(
                &surface,
                m,
                if i == 0 { TITLE_PRIOR.min(1.0) } else { rest },
            )?;
        }
    }
    let mut by_acronym: BTreeMap<String, Vec<EntityId>> = BTreeMap::new();
    for ent in &entities {
        by_acronym
            .entry(acronym_of(&ent.title))
            .or_default()
            .push(ent.id);
    }
    for (acr, mut members) in by_acronym {
        members.truncate(cfg.candidates);
        pad_candidates(&mut members, cfg.candidates, cfg.entities, &mut rng);
        let priors = ranked_priors(members.len(), cfg.prior_sharpness, &mut rng);
        for (&e, p) in members.iter().zip(priors) {
            aliases.insert(&acr, e, p)?;
        }
    }

    let mut lexicon = Lexicon::new(cfg.dim);
    for (t, words) in vocab.topic_words.iter().enumerate() {
        for w in words {
            lexicon.insert(w.clone(), near(&centroids[t], WORD_SPREAD, &mut rng))?;
        }
    }
    for w in &vocab.noise_words {
        lexicon.insert(w.clone(), unit(gaussian(&mut rng, cfg.dim)))?;
    }

    for ent in &mut entities {
        ent.in_links.sort_unstable();
        ent.out_links.sort_unstable();
    }
    let kb = KnowledgeBase::new(cfg.dim, entities, aliases, pairs)?;
    Ok(SynthWorld { kb, lexicon })
}

fn acronym_of(title: &[String]) -> String {
    title
        .iter()
        .filter_map(|t| t.chars().next())
        .flat_map(char::to_uppercase)
        .collect()
}

/// Surfaces naming each entity, with their kind index and prior.
fn surfaces_by_entity(kb: &KnowledgeBase) -> BTreeMap<EntityId, Vec<(String, usize, f64)>> {
    let mut out: BTreeMap<EntityId, Vec<(String, usize, f64)>> = BTreeMap::new();
    for (surface, cands) in kb.aliases().iter() {
        for c in cands {
            let Ok(ent) = kb.entity(c.entity) else {
                continue;
            };
            let title = ent.title.join(" ");
            let kind = if surface == title {
                1
            } else if is_acronym(surface) && surface == acronym_of(&ent.title) {
                2
            } else if !surface.contains(' ') && title.starts_with(surface) {
                0
            } else {
                continue;
            };
            out.entry(c.entity)
                .or_default()
                .push((surface.to_string(), kind, c.prior));
        }
    }
    out
}

pub fn gen_corpus(cfg: &SynthConfig, kb: &KnowledgeBase) -> Result<Vec<Document>> {
    cfg.validate()?;
    if kb.len() != cfg.entities {
        return Err(Error::data(
            "knowledge base does not match the synth configuration",
        ));
    }
    let mut rng = corpus_rng(cfg);
    let vocab = Vocabulary::new(cfg);
    let surfaces = surfaces_by_entity(kb);
    let by_topic: Vec<Vec<usize>> = (0..cfg.topics)
        .map(|t| (0..cfg.entities).filter(|&e| cfg.topic(e) == t).collect())
        .collect();
    let mut docs = Vec::with_capacity(cfg.documents);
    for d in 0..cfg.documents {
        let topic = rng.gen_range(0..cfg.topics);
        let mut tokens: Vec<String> = Vec::new();
        let mut sentences = Vec::new();
        let mut mentions = Vec::new();
        for _ in 0..cfg.mentions_per_doc {
            let gold = if by_topic[topic].is_empty() || !rng.gen_bool(cfg.gamma) {
                rng.gen_range(0..cfg.entities)
            } else {
                *by_topic[topic].choose(&mut rng).expect("non-empty topic")
            };
            let options = surfaces
                .get(&(gold as EntityId))
                .ok_or_else(|| Error::data(format!("entity {gold} has no surface")))?;
            let weights: Vec<f64> = options
                .iter()
                .map(|(_, kind, p)| KIND_WEIGHTS[*kind] * p.max(1e-6).powf(PRIOR_EXPONENT[*kind]))
                .collect();
            let pick = WeightedIndex::new(&weights).map_err(|e| Error::data(e.to_string()))?;
            let (surface, kind, _) = options[pick.sample(&mut rng)].clone();
            let surface_tokens: Vec<String> = surface.split(' ').map(str::to_string).collect();

            let gold_topic = cfg.topic(gold);
            let mut filler: Vec<String> = Vec::new();
            let topic_words = if kind == 2 {
                cfg.acronym_topic_words
            } else {
                cfg.topic_words_per_mention
            };
            for _ in 0..topic_words {
                let t = if rng.gen_bool(cfg.noise) {
                    rng.gen_range(0..cfg.topics)
                } else {
                    gold_topic
                };
                filler.push(
                    vocab.topic_words[t]
                        .choose(&mut rng)
                        .expect("topic words")
                        .clone(),
                );
            }
            for _ in 0..cfg.noise_words_per_mention {
                filler.push(
                    vocab
                        .noise_words
                        .choose(&mut rng)
                        .expect("noise words")
                        .clone(),
                );
            }
            filler.shuffle(&mut rng);
            let at = rng.gen_range(0..=filler.len());
            let start = tokens.len();
            tokens.extend(filler[..at].iter().cloned());
            let span = (tokens.len(), tokens.len() + surface_tokens.len());
            tokens.extend(surface_tokens);
            tokens.extend(filler[at..].iter().cloned());
            sentences.push((start, tokens.len()));
            mentions.push(Mention {
                span,
                surface,
                gold: Some(gold as EntityId),
                chain: None,
            });
        }
        let doc = Document {
            id: format!("doc{d:05}"),
            tokens,
            sentences,
            mentions,
        };
        doc.validate()?;
        docs.push(doc);
    }
    Ok(docs)
}

/// Train / dev / test split in document order: two thirds, one sixth,
/// the rest.
pub fn split<T: Clone>(docs: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = docs.len();
    let train = n * 2 / 3;
    let dev = train + (n - train) / 2;
    (
        docs[..train].to_vec(),
        docs[train..dev].to_vec(),
        docs[dev..].to_vec(),
    )
}
