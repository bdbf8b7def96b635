//! Common-space embedding, the on-disk embedding store, and exact cosine
//! retrieval for the bi-modality and multi-modality tasks.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::encoding::{EncodedInput, EncodedItem, MediaEncoder};
use crate::error::{Error, Result};
use crate::media::{Media, MediaInstance};
use crate::model::checkpoint::{read_array, read_bytes, read_f32s, read_u32, read_u64, write_f32s, write_u32, write_u64};
use crate::model::{Input, Model};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub media: Media,
    pub label: usize,
    pub vector: Vec<f32>,
}

/// Feature and logits for one encoded item. Videos average their
/// per-frame outputs.
pub fn embed_item(model: &Model<f32>, item: &EncodedItem) -> Result<(EmbeddingRecord, Vec<f32>)> {
    let run = |input: Input<'_, f32>| -> Result<(Vec<f32>, Vec<f32>)> {
        let t = model.forward(input)?;
        Ok((t.feature().to_vec(), t.logits().to_vec()))
    };
    let (vector, logits) = match &item.input {
        EncodedInput::Grid(g) => run(Input::Grid(&g.data))?,
        EncodedInput::Text(t) => run(Input::Text(t))?,
        EncodedInput::Frames(frames) => {
            if frames.is_empty() {
                return Err(Error::InvalidInstance {
                    id: item.id.clone(),
                    reason: "video has no frames".into(),
                });
            }
            let mut feat = vec![0.0f64; model.config().feature_dim];
            let mut logit = vec![0.0f64; model.config().classes];
            for f in frames {
                let (a, b) = run(Input::Grid(&f.data))?;
                feat.iter_mut().zip(&a).for_each(|(s, v)| *s += *v as f64);
                logit.iter_mut().zip(&b).for_each(|(s, v)| *s += *v as f64);
            }
            let n = frames.len() as f64;
            (
                feat.iter().map(|v| (v / n) as f32).collect(),
                logit.iter().map(|v| (v / n) as f32).collect(),
            )
        }
    };
    if vector.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite embedding for `{}`", item.id)));
    }
    let record = EmbeddingRecord {
        id: item.id.clone(),
        media: item.media,
        label: item.label,
        vector,
    };
    Ok((record, logits))
}

/// Embeddings that succeeded plus per-instance failures.
#[derive(Debug, Default)]
pub struct EmbedOutcome {
    pub store: EmbeddingStore,
    pub failures: Vec<(String, Error)>,
}

/// Embeds encoded items in parallel, keeping input order.
pub fn embed_items(model: &Model<f32>, items: &[EncodedItem]) -> EmbedOutcome {
    let results: Vec<_> = items.par_iter().map(|it| embed_item(model, it)).collect();
    let mut out = EmbedOutcome {
        store: EmbeddingStore::new(model.config().feature_dim),
        failures: Vec::new(),
    };
    for (it, r) in items.iter().zip(results) {
        match r {
            Ok((rec, _)) => out.store.records.push(rec),
            Err(e) => out.failures.push((it.id.clone(), e)),
        }
    }
    out
}

/// Encodes and embeds raw instances; encoding failures are collected.
pub fn embed(model: &Model<f32>, encoder: &MediaEncoder, instances: &[MediaInstance]) -> EmbedOutcome {
    let encoded = encoder.encode_all(instances);
    let mut items = Vec::with_capacity(encoded.len());
    let mut failures = Vec::new();
    for (inst, r) in instances.iter().zip(encoded) {
        match r {
            Ok(it) => items.push(it),
            Err(e) => failures.push((inst.id.clone(), e)),
        }
    }
    let mut out = embed_items(model, &items);
    failures.append(&mut out.failures);
    out.failures = failures;
    out
}

pub const STORE_MAGIC: &[u8; 4] = b"XMES";
pub const STORE_VERSION: u32 = 1;

/// A set of same-dimension embedding records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingStore {
    pub dim: usize,
    pub records: Vec<EmbeddingRecord>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore {
            dim,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, media: Media) -> usize {
        self.records.iter().filter(|r| r.media == media).count()
    }

    /// Dimensions agree, values are finite and ids are unique.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if r.vector.len() != self.dim {
                return Err(Error::Shape(format!(
                    "record `{}` has dimension {}, store has {}",
                    r.id,
                    r.vector.len(),
                    self.dim
                )));
            }
            if r.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("record `{}` is not finite", r.id)));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::InvalidInstance {
                    id: r.id.clone(),
                    reason: "duplicate id in store".into(),
                });
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        self.validate()?;
        w.write_all(STORE_MAGIC)?;
        write_u32(w, STORE_VERSION)?;
        write_u32(w, self.dim as u32)?;
        write_u64(w, self.records.len() as u64)?;
        for r in &self.records {
            write_u32(w, r.id.len() as u32)?;
            w.write_all(r.id.as_bytes())?;
            w.write_all(&[r.media.index() as u8])?;
            write_u32(w, r.label as u32)?;
            write_f32s(w, &r.vector)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        if &read_array::<_, 4>(r)? != STORE_MAGIC {
            return Err(Error::Format("not an embedding store (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != STORE_VERSION {
            return Err(Error::Format(format!("unsupported store version {version}")));
        }
        let dim = read_u32(r)? as usize;
        let count = read_u64(r)? as usize;
        let mut store = EmbeddingStore::new(dim);
        for _ in 0..count {
            let len = read_u32(r)? as usize;
            let id = String::from_utf8(read_bytes(r, len)?)
                .map_err(|_| Error::Format("record id is not UTF-8".into()))?;
            let [m] = read_array::<_, 1>(r)?;
            let media = Media::from_index(m as usize)
                .ok_or_else(|| Error::Format(format!("unknown media byte {m}")))?;
            let label = read_u32(r)? as usize;
            let vector = read_f32s(r, dim)?;
            store.records.push(EmbeddingRecord {
                id,
                media,
                label,
                vector,
            });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after embedding store".into()));
        }
        store.validate()?;
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(&mut BufReader::new(f))
    }
}

/// Candidate set of a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scope {
    Media(Media),
    All,
}

impl Scope {
    pub fn contains(&self, media: Media) -> bool {
        match self {
            Scope::Media(m) => *m == media,
            Scope::All => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RetrievalTask {
    pub query: Media,
    pub scope: Scope,
}

impl RetrievalTask {
    /// The twelve ordered cross-media pairs, in report column order
    /// (I→T, I→A, I→V, T→I, T→A, T→V, A→I, A→T, A→V, V→I, V→T, V→A).
    pub fn bi_modality() -> Vec<RetrievalTask> {
        use Media::*;
        [
            (Image, Text),
            (Image, Audio),
            (Image, Video),
            (Text, Image),
            (Text, Audio),
            (Text, Video),
            (Audio, Image),
            (Audio, Text),
            (Audio, Video),
            (Video, Image),
            (Video, Text),
            (Video, Audio),
        ]
        .into_iter()
        .map(|(query, target)| RetrievalTask {
            query,
            scope: Scope::Media(target),
        })
        .collect()
    }

    /// One query media against everything, in report column order.
    pub fn multi_modality() -> Vec<RetrievalTask> {
        [Media::Image, Media::Text, Media::Video, Media::Audio]
            .into_iter()
            .map(|q| RetrievalTask {
                query: q,
                scope: Scope::All,
            })
            .collect()
    }

    /// All sixteen tasks, bi-modality first.
    pub fn all() -> Vec<RetrievalTask> {
        let mut v = Self::bi_modality();
        v.extend(Self::multi_modality());
        v
    }

    pub fn is_multi(&self) -> bool {
        self.scope == Scope::All
    }

    /// Short form such as `I2T` or `V2All`.
    pub fn code(&self) -> String {
        match self.scope {
            Scope::Media(m) => format!("{}2{}", self.query.code(), m.code()),
            Scope::All => format!("{}2All", self.query.code()),
        }
    }
}

impl fmt::Display for RetrievalTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.scope {
            Scope::Media(m) => write!(f, "{}→{}", self.query.code(), m.code()),
            Scope::All => write!(f, "{}→All", self.query.code()),
        }
    }
}

impl FromStr for RetrievalTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown retrieval task `{s}` (expected e.g. I2T or I2All)"));
        let (q, t) = s.split_once('2').or_else(|| s.split_once("→")).ok_or_else(bad)?;
        let mut qc = q.chars();
        let query = match (qc.next(), qc.next()) {
            (Some(c), None) => Media::from_code(c).ok_or_else(bad)?,
            _ => return Err(bad()),
        };
        let scope = if t.eq_ignore_ascii_case("all") {
            Scope::All
        } else {
            let mut tc = t.chars();
            match (tc.next(), tc.next()) {
                (Some(c), None) => Scope::Media(Media::from_code(c).ok_or_else(bad)?),
                _ => return Err(bad()),
            }
        };
        if scope == Scope::Media(query) {
            return Err(bad());
        }
        Ok(RetrievalTask { query, scope })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub id: String,
    pub label: usize,
    pub similarity: f64,
}

/// Candidates ordered by non-increasing similarity, ties by id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedResult {
    pub hits: Vec<Hit>,
}

/// Immutable brute-force cosine index over a store.
#[derive(Debug, Clone)]
pub struct Index {
    records: Vec<EmbeddingRecord>,
    /// Unit-normalized f64 vectors; `None` for zero vectors.
    unit: Vec<Option<Vec<f64>>>,
}

fn normalize(v: &[f32]) -> Option<Vec<f64>> {
    let v: Vec<f64> = v.iter().map(|&x| x as f64).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 0.0).then(|| v.iter().map(|x| x / n).collect())
}

/// Cosine similarity in f64; `-inf` when either side is zero.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    match (normalize(a), normalize(b)) {
        (Some(a), Some(b)) => a.iter().zip(&b).map(|(x, y)| x * y).sum(),
        _ => f64::NEG_INFINITY,
    }
}

impl Index {
    pub fn build(store: &EmbeddingStore) -> Result<Self> {
        store.validate()?;
        Ok(Index {
            records: store.records.clone(),
            unit: store.records.iter().map(|r| normalize(&r.vector)).collect(),
        })
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.id == id)
    }

    /// Record positions ordered for `query`, restricted to `scope` and
    /// skipping any record whose id equals `exclude_id`.
    pub fn rank(&self, query: &[f32], scope: Scope, exclude_id: Option<&str>) -> Result<Vec<(usize, f64)>> {
        let dim = self.records.first().map_or(query.len(), |r| r.vector.len());
        if query.len() != dim {
            return Err(Error::Shape(format!("query has dimension {}, index has {dim}", query.len())));
        }
        let q = normalize(query);
        let mut out: Vec<(usize, f64)> = self
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| scope.contains(r.media) && exclude_id != Some(r.id.as_str()))
            .map(|(i, _)| {
                let s = match (&q, &self.unit[i]) {
                    (Some(q), Some(c)) => q.iter().zip(c).map(|(x, y)| x * y).sum(),
                    _ => f64::NEG_INFINITY,
                };
                (i, s)
            })
            .collect();
        out.sort_by(|a, b| match b.1.total_cmp(&a.1) {
            Ordering::Equal => self.records[a.0].id.cmp(&self.records[b.0].id),
            o => o,
        });
        Ok(out)
    }

    /// Ranked candidates for `record` under `task`; the record itself is
    /// never returned.
    pub fn query(&self, record: &EmbeddingRecord, task: RetrievalTask) -> Result<RankedResult> {
        let ranked = self.rank(&record.vector, task.scope, Some(&record.id))?;
        Ok(RankedResult {
            hits: ranked
                .into_iter()
                .map(|(i, s)| Hit {
                    id: self.records[i].id.clone(),
                    label: self.records[i].label,
                    similarity: s,
                })
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(id: &str, media: Media, label: usize, v: &[f32]) -> EmbeddingRecord {
        EmbeddingRecord {
            id: id.into(),
            media,
            label,
            vector: v.to_vec(),
        }
    }

    fn random_store(n: usize, dim: usize, seed: u64) -> EmbeddingStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = EmbeddingStore::new(dim);
        for i in 0..n {
            let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            s.records.push(rec(&format!("r{i:03}"), Media::ALL[i % 4], i % 3, &v));
        }
        s
    }

    #[test]
    fn task_tables() {
        let codes: Vec<String> = RetrievalTask::bi_modality().iter().map(|t| t.code()).collect();
        assert_eq!(
            codes,
            ["I2T", "I2A", "I2V", "T2I", "T2A", "T2V", "A2I", "A2T", "A2V", "V2I", "V2T", "V2A"]
        );
        let multi: Vec<String> = RetrievalTask::multi_modality().iter().map(|t| t.code()).collect();
        assert_eq!(multi, ["I2All", "T2All", "V2All", "A2All"]);
        for t in RetrievalTask::all() {
            assert_eq!(t.code().parse::<RetrievalTask>().unwrap(), t);
        }
        assert!("I2I".parse::<RetrievalTask>().is_err());
        assert!("X2T".parse::<RetrievalTask>().is_err());
        assert!("IT".parse::<RetrievalTask>().is_err());
        assert_eq!("a2all".parse::<RetrievalTask>().unwrap().code(), "A2All");
    }

    #[test]
    fn orthogonal_candidates() {
        let mut s = EmbeddingStore::new(2);
        s.records.push(rec("q", Media::Image, 0, &[1.0, 0.0]));
        s.records.push(rec("b", Media::Text, 1, &[0.0, 1.0]));
        s.records.push(rec("a", Media::Text, 0, &[1.0, 0.0]));
        let idx = Index::build(&s).unwrap();
        let r = idx.query(&s.records[0], "I2T".parse().unwrap()).unwrap();
        let got: Vec<(&str, f64)> = r.hits.iter().map(|h| (h.id.as_str(), h.similarity)).collect();
        assert_eq!(got, [("a", 1.0), ("b", 0.0)]);
    }

    #[test]
    fn zero_vectors_rank_last_and_ties_break_by_id() {
        let mut s = EmbeddingStore::new(2);
        s.records.push(rec("q", Media::Image, 0, &[1.0, 1.0]));
        s.records.push(rec("z", Media::Text, 0, &[0.0, 0.0]));
        s.records.push(rec("c", Media::Text, 0, &[2.0, 2.0]));
        s.records.push(rec("b", Media::Text, 0, &[1.0, 1.0]));
        let idx = Index::build(&s).unwrap();
        let r = idx.query(&s.records[0], "I2T".parse().unwrap()).unwrap();
        let ids: Vec<&str> = r.hits.iter().map(|h| h.id.as_str()).collect();
        assert_eq!(ids, ["b", "c", "z"]);
        assert_eq!(r.hits[2].similarity, f64::NEG_INFINITY);
    }

    #[test]
    fn empty_scope_gives_empty_result() {
        let mut s = EmbeddingStore::new(1);
        s.records.push(rec("q", Media::Image, 0, &[1.0]));
        let idx = Index::build(&s).unwrap();
        assert!(idx.query(&s.records[0], "I2A".parse().unwrap()).unwrap().hits.is_empty());
    }

    #[test]
    fn matches_brute_force_sort() {
        let s = random_store(50, 6, 9);
        let idx = Index::build(&s).unwrap();
        for q in &s.records {
            for task in RetrievalTask::all() {
                if task.query != q.media {
                    continue;
                }
                let got: Vec<String> = idx.query(q, task).unwrap().hits.into_iter().map(|h| h.id).collect();
                let mut expect: Vec<(f64, String)> = s
                    .records
                    .iter()
                    .filter(|c| c.id != q.id && task.scope.contains(c.media))
                    .map(|c| {
                        let dot: f64 = q.vector.iter().zip(&c.vector).map(|(a, b)| *a as f64 * *b as f64).sum();
                        let na: f64 = q.vector.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
                        let nb: f64 = c.vector.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
                        (dot / (na * nb), c.id.clone())
                    })
                    .collect();
                expect.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
                let expect: Vec<String> = expect.into_iter().map(|e| e.1).collect();
                assert_eq!(got, expect);
            }
        }
    }

    #[test]
    fn multi_is_union_of_single_media_results() {
        let s = random_store(40, 4, 2);
        let idx = Index::build(&s).unwrap();
        let q = &s.records[5];
        let multi = idx.query(q, RetrievalTask { query: q.media, scope: Scope::All }).unwrap();
        let mut union: Vec<String> = Media::ALL
            .iter()
            .flat_map(|m| idx.rank(&q.vector, Scope::Media(*m), Some(&q.id)).unwrap())
            .map(|(i, _)| s.records[i].id.clone())
            .collect();
        let mut got: Vec<String> = multi.hits.into_iter().map(|h| h.id).collect();
        union.sort();
        got.sort();
        assert_eq!(got, union);
        assert_eq!(got.len(), 39);
    }

    #[test]
    fn store_round_trip_bit_exact() {
        let mut s = random_store(20, 5, 4);
        s.records[3].vector[1] = f32::MIN_POSITIVE / 4.0;
        s.records[4].vector[0] = -0.0;
        s.records[5].id = "vidéo/ü".into();
        let mut buf = Vec::new();
        s.write(&mut buf).unwrap();
        let back = EmbeddingStore::read(&mut buf.as_slice()).unwrap();
        assert_eq!(back.records.len(), s.records.len());
        for (a, b) in s.records.iter().zip(&back.records) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.media, b.media);
            assert_eq!(a.label, b.label);
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.vector), bits(&b.vector));
        }
        assert!(EmbeddingStore::read(&mut &buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(EmbeddingStore::read(&mut extra.as_slice()).is_err());
    }

    #[test]
    fn invalid_stores_rejected() {
        let mut s = EmbeddingStore::new(2);
        s.records.push(rec("a", Media::Image, 0, &[1.0, f32::NAN]));
        assert!(s.validate().is_err());
        s.records[0].vector = vec![1.0];
        assert!(s.validate().is_err());
        s.records[0].vector = vec![1.0, 0.0];
        s.records.push(rec("a", Media::Text, 0, &[1.0, 0.0]));
        assert!(s.validate().is_err());
    }

    proptest! {
        #[test]
        fn positive_scaling_preserves_ranking(seed in 0u64..500, k in 0usize..30, scale in 1e-3f32..1e3) {
            let s = random_store(30, 5, seed);
            let idx = Index::build(&s).unwrap();
            let q = &s.records[k];
            let mut scaled = q.clone();
            scaled.vector.iter_mut().for_each(|v| *v *= scale);
            let task = RetrievalTask { query: q.media, scope: Scope::All };
            let a: Vec<String> = idx.query(q, task).unwrap().hits.into_iter().map(|h| h.id).collect();
            let b: Vec<String> = idx.query(&scaled, task).unwrap().hits.into_iter().map(|h| h.id).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn similarities_sorted_and_unique(seed in 0u64..500) {
            let s = random_store(25, 3, seed);
            let idx = Index::build(&s).unwrap();
            let r = idx.query(&s.records[0], RetrievalTask { query: s.records[0].media, scope: Scope::All }).unwrap();
            prop_assert!(r.hits.windows(2).all(|w| w[0].similarity >= w[1].similarity));
            let ids: HashSet<&String> = r.hits.iter().map(|h| &h.id).collect();
            prop_assert_eq!(ids.len(), r.hits.len());
        }
    }
}
