//! Flat cosine-similarity index over unit-norm document embeddings.
//!
//! Documents are scored against a set of keyframe embeddings by their best
//! (max) similarity over the keyframes; the global top-K is returned with
//! ties broken by ascending `doc_id`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOP_K: usize = 3;

const INDEX_MAGIC: &[u8; 4] = b"VSRI";
const INDEX_VERSION: u16 = 1;

/// A unit-norm embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// L2-normalizes `raw`. Zero, empty or non-finite vectors are rejected.
    pub fn normalized(raw: &[f32]) -> Option<Self> {
        let norm = raw.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
        if raw.is_empty() || !norm.is_finite() || norm == 0.0 {
            return None;
        }
        Some(Self(raw.iter().map(|&v| (f64::from(v) / norm) as f32).collect()))
    }

    /// Wraps values that are already unit-norm (e.g. read back from an index).
    pub fn from_unit(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }
}

/// Cosine similarity of two unit vectors, i.e. their dot product.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(dot(a.values(), b.values()))
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub embedding: EmbeddingVector,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

/// Input row for [`Index::build`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub doc_id: String,
    pub text: String,
    pub embedding: Vec<f32>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalResult<'a> {
    pub doc: &'a Document,
    pub score: f64,
    pub best_keyframe_index: usize,
}

/// How keyframe-level hits are pooled into the final document list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RetrievalMode {
    /// Score each document by its max similarity over keyframes, take top-K.
    #[default]
    GlobalMax,
    /// Take the top `per_frame_k` per keyframe, union, then top-K by score.
    PerFrameUnion { per_frame_k: usize },
}

/// Immutable flat index.
#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    dim: usize,
    docs: Vec<Document>,
    /// Keyframe histogram resolution the index was built alongside; 0 if unset.
    pub bins_per_channel: u32,
}

impl Index {
    pub fn build(raw: impl IntoIterator<Item = RawDocument>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut docs = Vec::new();
        let mut dim = None;
        for r in raw {
            if r.text.is_empty() {
                return Err(Error::InvalidInput(format!("document {} has empty text", r.doc_id)));
            }
            if !seen.insert(r.doc_id.clone()) {
                return Err(Error::DuplicateDocId(r.doc_id));
            }
            let expected = *dim.get_or_insert(r.embedding.len());
            if r.embedding.len() != expected {
                return Err(Error::DimensionMismatch {
                    expected,
                    actual: r.embedding.len(),
                });
            }
            let embedding = EmbeddingVector::normalized(&r.embedding).ok_or(Error::ZeroNorm(r.doc_id.clone()))?;
            docs.push(Document {
                doc_id: r.doc_id,
                text: r.text,
                embedding,
                metadata: r.metadata,
            });
        }
        let dim = dim.ok_or_else(|| Error::InvalidInput("index needs at least one document".into()))?;
        Ok(Self {
            dim,
            docs,
            bins_per_channel: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.docs.iter().find(|d| d.doc_id == doc_id)
    }

    /// Global top-K by max similarity over keyframes.
    pub fn retrieve_top_k(&self, keyframes: &[EmbeddingVector], k: usize) -> Result<Vec<RetrievalResult<'_>>> {
        self.retrieve(keyframes, k, RetrievalMode::GlobalMax)
    }

    pub fn retrieve(
        &self,
        keyframes: &[EmbeddingVector],
        k: usize,
        mode: RetrievalMode,
    ) -> Result<Vec<RetrievalResult<'_>>> {
        if keyframes.is_empty() {
            return Err(Error::InvalidInput(
                "retrieval needs at least one keyframe embedding".into(),
            ));
        }
        if k == 0 {
            return Err(Error::InvalidInput("K must be at least 1".into()));
        }
        if let Some(bad) = keyframes.iter().find(|q| q.dim() != self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: bad.dim(),
            });
        }

        // (doc position, score, best keyframe) for every document.
        let scored: Vec<(usize, f64, usize)> = self
            .docs
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let (best, score) = keyframes
                    .iter()
                    .map(|q| dot(q.values(), d.embedding.values()))
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |acc, (j, s)| {
                            if s > acc.1 {
                                (j, s)
                            } else {
                                acc
                            }
                        },
                    );
                (i, score, best)
            })
            .collect();

        let mut pool: Vec<(usize, f64, usize)> = match mode {
            RetrievalMode::GlobalMax => scored,
            RetrievalMode::PerFrameUnion { per_frame_k } => {
                let mut members = vec![false; self.docs.len()];
                for q in keyframes {
                    let mut per: Vec<(usize, f64)> = self
                        .docs
                        .iter()
                        .enumerate()
                        .map(|(i, d)| (i, dot(q.values(), d.embedding.values())))
                        .collect();
                    per.sort_by(|a, b| self.rank(a.0, a.1, b.0, b.1));
                    for (i, _) in per.into_iter().take(per_frame_k.max(1)) {
                        members[i] = true;
                    }
                }
                scored.into_iter().filter(|(i, _, _)| members[*i]).collect()
            }
        };

        pool.sort_by(|a, b| self.rank(a.0, a.1, b.0, b.1));
        Ok(pool
            .into_iter()
            .take(k)
            .map(|(i, score, best)| RetrievalResult {
                doc: &self.docs[i],
                score,
                best_keyframe_index: best,
            })
            .collect())
    }

    /// Descending score, then ascending doc_id.
    fn rank(&self, ia: usize, sa: f64, ib: usize, sb: f64) -> Ordering {
        sb.partial_cmp(&sa)
            .unwrap_or(Ordering::Equal)
            .then_with(|| self.docs[ia].doc_id.cmp(&self.docs[ib].doc_id))
    }

    /// Binary layout: `VSRI`, u16 version, u16 reserved, u32 dim, u32 count,
    /// u32 bins; then per record u32-length-prefixed doc_id, text and metadata
    /// JSON, followed by `dim` little-endian f32 values. All integers LE.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(INDEX_MAGIC)?;
        w.write_all(&INDEX_VERSION.to_le_bytes())?;
        w.write_all(&0u16.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.docs.len() as u32).to_le_bytes())?;
        w.write_all(&self.bins_per_channel.to_le_bytes())?;
        for d in &self.docs {
            write_str(&mut w, &d.doc_id)?;
            write_str(&mut w, &d.text)?;
            write_str(&mut w, &serde_json::to_string(&d.metadata)?)?;
            for v in d.embedding.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != INDEX_MAGIC {
            return Err(Error::IndexFormat("bad magic".into()));
        }
        let version = read_u16(&mut r)?;
        if version != INDEX_VERSION {
            return Err(Error::IndexFormat(format!("unsupported version {version}")));
        }
        let _reserved = read_u16(&mut r)?;
        let dim = read_u32(&mut r)? as usize;
        let count = read_u32(&mut r)? as usize;
        let bins_per_channel = read_u32(&mut r)?;
        if dim == 0 {
            return Err(Error::IndexFormat("zero dimension".into()));
        }
        let mut docs = Vec::with_capacity(count.min(1 << 16));
        let mut seen = HashSet::new();
        for _ in 0..count {
            let doc_id = read_str(&mut r)?;
            let text = read_str(&mut r)?;
            let metadata = serde_json::from_str(&read_str(&mut r)?)?;
            let mut values = Vec::with_capacity(dim);
            let mut buf = [0u8; 4];
            for _ in 0..dim {
                r.read_exact(&mut buf)?;
                values.push(f32::from_le_bytes(buf));
            }
            if !seen.insert(doc_id.clone()) {
                return Err(Error::DuplicateDocId(doc_id));
            }
            docs.push(Document {
                doc_id,
                text,
                embedding: EmbeddingVector::from_unit(values),
                metadata,
            });
        }
        if docs.is_empty() {
            return Err(Error::IndexFormat("index holds no documents".into()));
        }
        Ok(Self {
            dim,
            docs,
            bins_per_channel,
        })
    }

    /// One JSON object per line: `{doc_id, text, embedding, metadata}`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for d in &self.docs {
            serde_json::to_writer(&mut w, d)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads JSONL rows and re-normalizes them through [`Index::build`].
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let rows = r
            .lines()
            .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
            .map(|l| Ok(serde_json::from_str::<RawDocument>(&l?)?))
            .collect::<Result<Vec<_>>>()?;
        Self::build(rows)
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::IndexFormat(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(id: &str, e: &[f32]) -> RawDocument {
        RawDocument {
            doc_id: id.into(),
            text: format!("text of {id}"),
            embedding: e.to_vec(),
            metadata: BTreeMap::new(),
        }
    }

    fn unit(e: &[f32]) -> EmbeddingVector {
        EmbeddingVector::normalized(e).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let v = unit(&[0.3, -0.2, 0.9]);
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(cosine_similarity(&unit(&[1.0, 0.0]), &unit(&[0.0, 1.0])).unwrap(), 0.0);
        let s = cosine_similarity(&unit(&[0.6, 0.8]), &unit(&[1.0, 0.0])).unwrap();
        assert!((s - 0.6).abs() < 1e-6);
    }

    #[test]
    fn cosine_rejects_dim_mismatch() {
        assert!(matches!(
            cosine_similarity(&unit(&[1.0]), &unit(&[1.0, 0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn build_normalizes() {
        let idx = Index::build(vec![raw("a", &[3.0, 4.0])]).unwrap();
        let v = idx.documents()[0].embedding.values();
        assert!((v[0] - 0.6).abs() < 1e-7 && (v[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn build_contract_errors() {
        let idx = Index::build(vec![raw("a", &[1.0]), raw("b", &[2.0]), raw("c", &[3.0])]);
        assert_eq!(idx.unwrap().len(), 3);
        assert!(matches!(
            Index::build(vec![raw("a", &[1.0, 0.0]), raw("a", &[0.0, 1.0])]),
            Err(Error::DuplicateDocId(id)) if id == "a"
        ));
        assert!(matches!(
            Index::build(vec![raw("z", &[0.0, 0.0])]),
            Err(Error::ZeroNorm(_))
        ));
        assert!(matches!(
            Index::build(vec![raw("a", &[1.0, 0.0]), raw("b", &[1.0])]),
            Err(Error::DimensionMismatch { expected: 2, actual: 1 })
        ));
        assert!(Index::build(Vec::new()).is_err());
    }

    #[test]
    fn single_doc_any_k() {
        let idx = Index::build(vec![raw("only", &[1.0, 1.0])]).unwrap();
        for k in [1, 3, 50] {
            let hits = idx.retrieve_top_k(&[unit(&[1.0, 0.0])], k).unwrap();
            assert_eq!(hits.len(), 1);
            assert_eq!(hits[0].doc.doc_id, "only");
        }
    }

    #[test]
    fn document_score_is_max_over_keyframes() {
        // doc vs kf0 = 0.2, doc vs kf1 = 0.9
        let idx = Index::build(vec![raw("d", &[1.0, 0.0, 0.0])]).unwrap();
        let kf0 = unit(&[0.2, (1.0f32 - 0.04).sqrt(), 0.0]);
        let kf1 = unit(&[0.9, 0.0, (1.0f32 - 0.81).sqrt()]);
        let hits = idx.retrieve_top_k(&[kf0, kf1], 3).unwrap();
        assert!((hits[0].score - 0.9).abs() < 1e-6);
        assert_eq!(hits[0].best_keyframe_index, 1);
    }

    #[test]
    fn ties_break_by_doc_id() {
        let idx = Index::build(vec![
            raw("c", &[1.0, 0.0]),
            raw("a", &[1.0, 0.0]),
            raw("b", &[1.0, 0.0]),
        ])
        .unwrap();
        let ids: Vec<_> = idx
            .retrieve_top_k(&[unit(&[1.0, 0.0])], 2)
            .unwrap()
            .iter()
            .map(|r| r.doc.doc_id.as_str())
            .collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn retrieval_errors() {
        let idx = Index::build(vec![raw("a", &[1.0, 0.0])]).unwrap();
        assert!(idx.retrieve_top_k(&[], 1).is_err());
        assert!(idx.retrieve_top_k(&[unit(&[1.0, 0.0])], 0).is_err());
        assert!(idx.retrieve_top_k(&[unit(&[1.0])], 1).is_err());
    }

    #[test]
    fn per_frame_union_with_full_k_matches_global() {
        let idx = Index::build(vec![
            raw("a", &[1.0, 0.1, 0.0]),
            raw("b", &[0.0, 1.0, 0.2]),
            raw("c", &[0.3, 0.3, 1.0]),
            raw("d", &[0.5, 0.5, 0.5]),
        ])
        .unwrap();
        let q = [unit(&[1.0, 0.0, 0.0]), unit(&[0.0, 0.0, 1.0])];
        let global = idx.retrieve_top_k(&q, 2).unwrap();
        let union = idx
            .retrieve(&q, 2, RetrievalMode::PerFrameUnion { per_frame_k: 2 })
            .unwrap();
        assert_eq!(global, union);
        // per_frame_k = 1 restricts the pool to each keyframe's single best.
        let narrow = idx
            .retrieve(&q, 4, RetrievalMode::PerFrameUnion { per_frame_k: 1 })
            .unwrap();
        let ids: Vec<_> = narrow.iter().map(|r| r.doc.doc_id.as_str()).collect();
        assert_eq!(ids, ["a", "c"]);
    }

    #[test]
    fn binary_and_jsonl_round_trip() {
        let mut r = raw("doc-ü", &[0.1, -2.0, 3.5]);
        r.metadata.insert("source".into(), "wiki".into());
        let mut idx = Index::build(vec![r, raw("b", &[1.0, 1.0, 1.0])]).unwrap();
        idx.bins_per_channel = 64;

        let mut bin = Vec::new();
        idx.write_binary(&mut bin).unwrap();
        assert_eq!(&bin[..4], b"VSRI");
        assert_eq!(Index::read_binary(bin.as_slice()).unwrap(), idx);

        let mut lines = Vec::new();
        idx.write_jsonl(&mut lines).unwrap();
        let back = Index::read_jsonl(lines.as_slice()).unwrap();
        assert_eq!(back.documents(), idx.documents());
    }

    #[test]
    fn binary_rejects_garbage() {
        assert!(Index::read_binary(&b"NOPE\x01\x00"[..]).is_err());
    }
}
