//! Knowledge base: entities with embeddings and link sets, co-occurrence
//! counts, and the alias table that supplies p(e|m).
//!
//! On disk a KB is a directory:
//!
//! * `meta.json` : `{"format_version": 1, "d": <dim>}`
//! * `entities.jsonl` : `{"id", "title", "embedding", "in_links", "out_links"}` per line
//! * `aliases.tsv` : `surface<TAB>entity_id<TAB>prior`
//! * `cooccur.tsv` : `id<TAB>id<TAB>count`

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type EntityId = u32;

pub const KB_FORMAT_VERSION: u32 = 1;
const PRIOR_SUM_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub title: Vec<String>,
    pub embedding: Vec<f64>,
    /// Sorted, deduplicated.
    pub in_links: Vec<EntityId>,
    /// Sorted, deduplicated.
    pub out_links: Vec<EntityId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub entity: EntityId,
    pub prior: f64,
}

pub type CandidateSet = Vec<Candidate>;

/// surface → candidates sorted by descending prior, ties by ascending id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AliasTable {
    map: BTreeMap<String, Vec<Candidate>>,
}

impl AliasTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, surface: &str, entity: EntityId, prior: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&prior) {
            return Err(Error::data(format!(
                "alias {surface:?} -> {entity}: prior {prior} outside [0, 1]"
            )));
        }
        if surface.contains('\t') || surface.contains('\n') {
            return Err(Error::data(format!(
                "alias surface {surface:?} contains a tab or newline"
            )));
        }
        let list = self.map.entry(surface.to_string()).or_default();
        if list.iter().any(|c| c.entity == entity) {
            return Err(Error::data(format!(
                "alias {surface:?} lists entity {entity} twice"
            )));
        }
        list.push(Candidate { entity, prior });
        let sum: f64 = list.iter().map(|c| c.prior).sum();
        if sum > 1.0 + PRIOR_SUM_SLACK {
            return Err(Error::data(format!(
                "priors for alias {surface:?} sum to {sum} > 1"
            )));
        }
        list.sort_by(|a, b| b.prior.total_cmp(&a.prior).then(a.entity.cmp(&b.entity)));
        Ok(())
    }

    pub fn get(&self, surface: &str) -> Option<&[Candidate]> {
        self.map.get(surface).map(Vec::as_slice)
    }

    pub fn prior(&self, surface: &str, entity: EntityId) -> f64 {
        self.get(surface)
            .and_then(|l| l.iter().find(|c| c.entity == entity))
            .map_or(0.0, |c| c.prior)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Candidate])> {
        self.map.iter().map(|(s, l)| (s.as_str(), l.as_slice()))
    }
}

/// Top-`k` candidates for an exact surface match. Absent surfaces give an
/// empty set.
pub fn alias_lookup(surface: &str, k: usize, table: &AliasTable) -> CandidateSet {
    assert!(k >= 1, "alias_lookup: k must be positive");
    table
        .get(surface)
        .map(|l| l.iter().take(k).copied().collect())
        .unwrap_or_default()
}

/// Symmetric sparse co-occurrence counts; absent pairs count 0.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairStats {
    counts: BTreeMap<(EntityId, EntityId), u64>,
}

impl PairStats {
    fn key(a: EntityId, b: EntityId) -> (EntityId, EntityId) {
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    /// Sets count(a, b) = count(b, a) = `count`.
    pub fn set(&mut self, a: EntityId, b: EntityId, count: u64) {
        if count == 0 {
            self.counts.remove(&Self::key(a, b));
        } else {
            self.counts.insert(Self::key(a, b), count);
        }
    }

    pub fn count(&self, a: EntityId, b: EntityId) -> u64 {
        self.counts.get(&Self::key(a, b)).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (EntityId, EntityId, u64)> + '_ {
        self.counts.iter().map(|(&(a, b), &c)| (a, b, c))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeBase {
    dim: usize,
    entities: Vec<Entity>,
    index: HashMap<EntityId, usize>,
    aliases: AliasTable,
    pairs: PairStats,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    d: usize,
}

fn sorted_unique(mut v: Vec<EntityId>) -> Vec<EntityId> {
    v.sort_unstable();
    v.dedup();
    v
}

fn shared(a: &[EntityId], b: &[EntityId]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

impl KnowledgeBase {
    /// Builds and validates a KB. Link lists are normalized to sorted sets.
    pub fn new(
        dim: usize,
        entities: Vec<Entity>,
        aliases: AliasTable,
        pairs: PairStats,
    ) -> Result<Self> {
        if entities.is_empty() {
            return Err(Error::data("KB contains no entities"));
        }
        if dim == 0 {
            return Err(Error::data("KB embedding dimension must be positive"));
        }
        let mut index = HashMap::with_capacity(entities.len());
        let mut entities = entities;
        for (pos, e) in entities.iter_mut().enumerate() {
            if e.embedding.len() != dim {
                return Err(Error::data(format!(
                    "entity {}: embedding length {} does not match d={dim}",
                    e.id,
                    e.embedding.len()
                )));
            }
            if e.embedding.iter().any(|v| !v.is_finite()) {
                return Err(Error::data(format!(
                    "entity {}: non-finite embedding value",
                    e.id
                )));
            }
            if e.title.is_empty() {
                return Err(Error::data(format!("entity {}: empty title", e.id)));
            }
            if index.insert(e.id, pos).is_some() {
                return Err(Error::data(format!("entity id {} appears twice", e.id)));
            }
            e.in_links = sorted_unique(std::mem::take(&mut e.in_links));
            e.out_links = sorted_unique(std::mem::take(&mut e.out_links));
        }
        for e in &entities {
            for l in e.in_links.iter().chain(&e.out_links) {
                if !index.contains_key(l) {
                    return Err(Error::data(format!(
                        "entity {}: link to unknown entity id {l}",
                        e.id
                    )));
                }
            }
        }
        for (surface, list) in aliases.iter() {
            for c in list {
                if !index.contains_key(&c.entity) {
                    return Err(Error::data(format!(
                        "alias {surface:?} references unknown entity id {}",
                        c.entity
                    )));
                }
            }
        }
        for (a, b, _) in pairs.iter() {
            for id in [a, b] {
                if !index.contains_key(&id) {
                    return Err(Error::data(format!(
                        "co-occurrence row references unknown entity id {id}"
                    )));
                }
            }
        }
        Ok(KnowledgeBase {
            dim,
            entities,
            index,
            aliases,
            pairs,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn aliases(&self) -> &AliasTable {
        &self.aliases
    }

    pub fn pairs(&self) -> &PairStats {
        &self.pairs
    }

    pub fn contains(&self, id: EntityId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn entity(&self, id: EntityId) -> Result<&Entity> {
        self.index
            .get(&id)
            .map(|&i| &self.entities[i])
            .ok_or_else(|| Error::data(format!("unknown entity id {id}")))
    }

    pub fn embedding(&self, id: EntityId) -> Result<&[f64]> {
        self.entity(id).map(|e| e.embedding.as_slice())
    }

    /// `[ln(1+co-occurrences), ln(1+shared in-links), ln(1+shared out-links)]`.
    pub fn pair_features(&self, a: EntityId, b: EntityId) -> Result<[f64; 3]> {
        let ea = self.entity(a)?;
        let eb = self.entity(b)?;
        Ok([
            (self.pairs.count(a, b) as f64).ln_1p(),
            (shared(&ea.in_links, &eb.in_links) as f64).ln_1p(),
            (shared(&ea.out_links, &eb.out_links) as f64).ln_1p(),
        ])
    }

    pub fn alias_lookup(&self, surface: &str, k: usize) -> CandidateSet {
        alias_lookup(surface, k, &self.aliases)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        load_kb(dir)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        save_kb(self, dir)
    }
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, Result<String>)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let owned = path.to_path_buf();
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .map(move |(i, l)| (i + 1, l.map_err(|e| Error::io(&owned, e)))))
}

fn field<'a>(parts: &[&'a str], i: usize, path: &Path, line: usize) -> Result<&'a str> {
    parts.get(i).copied().ok_or_else(|| {
        Error::data(format!(
            "{}:{line}: expected 3 tab-separated fields",
            path.display()
        ))
    })
}

pub fn load_kb(dir: impl AsRef<Path>) -> Result<KnowledgeBase> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: Meta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::data(format!("{}: {e}", meta_path.display())))?;
    if meta.format_version != KB_FORMAT_VERSION {
        return Err(Error::data(format!(
            "{}: unsupported format version {}",
            meta_path.display(),
            meta.format_version
        )));
    }

    let ent_path = dir.join("entities.jsonl");
    let mut entities = Vec::new();
    for (line, text) in open_lines(&ent_path)? {
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let e: Entity = serde_json::from_str(&text)
            .map_err(|err| Error::data(format!("{}:{line}: {err}", ent_path.display())))?;
        if e.embedding.len() != meta.d {
            return Err(Error::data(format!(
                "{}:{line}: entity {} has embedding length {}, header declares d={}",
                ent_path.display(),
                e.id,
                e.embedding.len(),
                meta.d
            )));
        }
        entities.push(e);
    }
    if entities.is_empty() {
        return Err(Error::data("KB contains no entities"));
    }
    let known: std::collections::HashSet<EntityId> = entities.iter().map(|e| e.id).collect();

    let alias_path = dir.join("aliases.tsv");
    let mut aliases = AliasTable::new();
    for (line, text) in open_lines(&alias_path)? {
        let text = text?;
        if text.is_empty() {
            continue;
        }
        let parts: Vec<&str> = text.split('\t').collect();
        if parts.len() != 3 {
            return Err(Error::data(format!(
                "{}:{line}: expected 3 tab-separated fields",
                alias_path.display()
            )));
        }
        let surface = field(&parts, 0, &alias_path, line)?;
        let id: EntityId = parts[1].parse().map_err(|_| {
            Error::data(format!(
                "{}:{line}: bad entity id {:?}",
                alias_path.display(),
                parts[1]
            ))
        })?;
        let prior: f64 = parts[2].parse().map_err(|_| {
            Error::data(format!(
                "{}:{line}: bad prior {:?}",
                alias_path.display(),
                parts[2]
            ))
        })?;
        if !known.contains(&id) {
            return Err(Error::data(format!(
                "{}:{line}: alias {surface:?} references unknown entity id {id}",
                alias_path.display()
            )));
        }
        aliases
            .insert(surface, id, prior)
            .map_err(|e| Error::data(format!("{}:{line}: {e}", alias_path.display())))?;
    }

    let co_path = dir.join("cooccur.tsv");
    let mut pairs = PairStats::default();
    let mut seen: HashMap<(EntityId, EntityId), u64> = HashMap::new();
    for (line, text) in open_lines(&co_path)? {
        let text = text?;
        if text.is_empty() {
            continue;
        }
        let parts: Vec<&str> = text.split('\t').collect();
        if parts.len() != 3 {
            return Err(Error::data(format!(
                "{}:{line}: expected 3 tab-separated fields",
                co_path.display()
            )));
        }
        let parse_id = |s: &str| -> Result<EntityId> {
            s.parse().map_err(|_| {
                Error::data(format!("{}:{line}: bad entity id {s:?}", co_path.display()))
            })
        };
        let a = parse_id(parts[0])?;
        let b = parse_id(parts[1])?;
        let count: u64 = parts[2].parse().map_err(|_| {
            Error::data(format!(
                "{}:{line}: bad count {:?}",
                co_path.display(),
                parts[2]
            ))
        })?;
        for id in [a, b] {
            if !known.contains(&id) {
                return Err(Error::data(format!(
                    "{}:{line}: co-occurrence row references unknown entity id {id}",
                    co_path.display()
                )));
            }
        }
        let key = PairStats::key(a, b);
        if let Some(&prev) = seen.get(&key) {
            if prev != count {
                return Err(Error::data(format!(
                    "{}:{line}: asymmetric counts for ({a}, {b}): {prev} vs {count}",
                    co_path.display()
                )));
            }
        }
        seen.insert(key, count);
        pairs.set(a, b, count);
    }

    KnowledgeBase::new(meta.d, entities, aliases, pairs)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn save_kb(kb: &KnowledgeBase, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e| Error::io(&p, e)
    };

    let meta_path = dir.join("meta.json");
    let meta = serde_json::to_string(&Meta {
        format_version: KB_FORMAT_VERSION,
        d: kb.dim,
    })
    .expect("meta serializes");
    fs::write(&meta_path, meta + "\n").map_err(io(&meta_path))?;

    let ent_path = dir.join("entities.jsonl");
    let mut w = create(&ent_path)?;
    for e in &kb.entities {
        let line = serde_json::to_string(e).expect("entity serializes");
        writeln!(w, "{line}").map_err(io(&ent_path))?;
    }
    w.flush().map_err(io(&ent_path))?;

    let alias_path = dir.join("aliases.tsv");
    let mut w = create(&alias_path)?;
    for (surface, list) in kb.aliases.iter() {
        for c in list {
            writeln!(w, "{surface}\t{}\t{}", c.entity, c.prior).map_err(io(&alias_path))?;
        }
    }
    w.flush().map_err(io(&alias_path))?;

    let co_path = dir.join("cooccur.tsv");
    let mut w = create(&co_path)?;
    for (a, b, c) in kb.pairs.iter() {
        writeln!(w, "{a}\t{b}\t{c}").map_err(io(&co_path))?;
    }
    w.flush().map_err(io(&co_path))?;
    Ok(())
}
