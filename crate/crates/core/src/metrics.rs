//! Scoring primitives: cosine similarity, exact gallery ranking, average
//! precision and its aggregates, and the pairwise-similarity baselines.
//!
//! All arithmetic runs in `f64` over the stored `f32` components. Ranking is a
//! total order: similarity descending, then gallery id ascending. Aggregates
//! sum in id order so results do not depend on evaluation schedule.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embstore::EmbeddingRecord;
use crate::error::{Error, Result};

fn dot_and_norms(u: &[f32], v: &[f32]) -> (f64, f64, f64) {
    let mut dot = 0.0f64;
    let mut nu = 0.0f64;
    let mut nv = 0.0f64;
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (f64::from(a), f64::from(b));
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    (dot, nu.sqrt(), nv.sqrt())
}

fn norm(u: &[f32]) -> f64 {
    u.iter().map(|&a| f64::from(a) * f64::from(a)).sum::<f64>().sqrt()
}

fn dot(u: &[f32], v: &[f32]) -> f64 {
    u.iter().zip(v).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum()
}

fn cosine_from_parts(dot: f64, nu: f64, nv: f64) -> f64 {
    // `+ 0.0` turns a negative zero into zero; float sums start from -0.0 and
    // the ranking sort would otherwise split the two
    (dot / (nu * nv)).clamp(-1.0, 1.0) + 0.0
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Dimension(u.len(), v.len()));
    }
    let (d, nu, nv) = dot_and_norms(u, v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(cosine_from_parts(d, nu, nv))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub id: String,
    pub subject: String,
    pub similarity: f64,
    pub relevant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub query_subject: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn relevance(&self) -> Vec<bool> {
        self.entries.iter().map(|e| e.relevant).collect()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.id.as_str()).collect()
    }
}

/// A gallery with norms computed once, for ranking many queries.
#[derive(Debug, Clone)]
pub struct GalleryIndex<'a> {
    items: Vec<(&'a EmbeddingRecord, f64)>,
    dimension: usize,
}

impl<'a> GalleryIndex<'a> {
    pub fn new(gallery: &[&'a EmbeddingRecord]) -> Result<Self> {
        let first = gallery.first().ok_or(Error::EmptyGallery)?;
        let dimension = first.vector.len();
        let mut items = Vec::with_capacity(gallery.len());
        for &g in gallery {
            if g.vector.len() != dimension {
                return Err(Error::Dimension(dimension, g.vector.len()));
            }
            let n = norm(&g.vector);
            if n == 0.0 {
                return Err(Error::ZeroNorm);
            }
            items.push((g, n));
        }
        items.sort_by(|a, b| a.0.id.cmp(&b.0.id));
        Ok(GalleryIndex { items, dimension })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn rank(&self, query: &EmbeddingRecord) -> Result<RankedList> {
        if query.vector.len() != self.dimension {
            return Err(Error::Dimension(query.vector.len(), self.dimension));
        }
        let nq = norm(&query.vector);
        if nq == 0.0 {
            return Err(Error::ZeroNorm);
        }
        let mut entries: Vec<RankedEntry> = self
            .items
            .iter()
            .map(|&(g, ng)| RankedEntry {
                id: g.id.clone(),
                subject: g.subject.clone(),
                similarity: cosine_from_parts(dot(&query.vector, &g.vector), nq, ng),
                relevant: g.subject == query.subject,
            })
            .collect();
        // items are id-sorted and the sort is stable, so ties keep id order
        entries.sort_by(|a, b| b.similarity.total_cmp(&a.similarity));
        Ok(RankedList {
            query_id: query.id.clone(),
            query_subject: query.subject.clone(),
            entries,
        })
    }
}

/// Ranks every gallery item against `query`.
pub fn rank_gallery(query: &EmbeddingRecord, gallery: &[&EmbeddingRecord]) -> Result<RankedList> {
    GalleryIndex::new(gallery)?.rank(query)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub query_id: String,
    pub subject: String,
    pub ap: f64,
    pub relevant_count: usize,
    pub first_relevant_rank: usize,
}

/// Non-interpolated AP over a relevance sequence in rank order. `None` when
/// nothing is relevant.
pub fn ap_from_relevance(relevance: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0f64;
    for (k, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

pub fn average_precision(ranked: &RankedList) -> Result<ApResult> {
    let relevance = ranked.relevance();
    let ap = ap_from_relevance(&relevance).ok_or_else(|| Error::NoRelevant {
        query: ranked.query_id.clone(),
        subject: ranked.query_subject.clone(),
    })?;
    Ok(ApResult {
        query_id: ranked.query_id.clone(),
        subject: ranked.query_subject.clone(),
        ap,
        relevant_count: relevance.iter().filter(|&&r| r).count(),
        first_relevant_rank: relevance.iter().position(|&r| r).map_or(0, |p| p + 1),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapAggregation {
    #[default]
    PerQuery,
    PerSubjectMacro,
}

impl FromStr for MapAggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-query" => Ok(MapAggregation::PerQuery),
            "per-subject-macro" => Ok(MapAggregation::PerSubjectMacro),
            _ => Err(Error::InvalidArgument(format!("unknown mAP aggregation {s:?}"))),
        }
    }
}

pub fn mean_average_precision(results: &[ApResult], aggregation: MapAggregation) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::EmptyCollection);
    }
    let mut ordered: Vec<&ApResult> = results.iter().collect();
    ordered.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    match aggregation {
        MapAggregation::PerQuery => {
            Ok(ordered.iter().map(|r| r.ap).sum::<f64>() / ordered.len() as f64)
        }
        MapAggregation::PerSubjectMacro => {
            let mut by_subject: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
            for r in ordered {
                let e = by_subject.entry(&r.subject).or_default();
                e.0 += r.ap;
                e.1 += 1;
            }
            let n = by_subject.len();
            Ok(by_subject.values().map(|(s, c)| s / *c as f64).sum::<f64>() / n as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairwiseMode {
    #[default]
    VsReference,
    VsGallery,
}

impl FromStr for PairwiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vs-reference" => Ok(PairwiseMode::VsReference),
            "vs-gallery" => Ok(PairwiseMode::VsGallery),
            _ => Err(Error::InvalidArgument(format!("unknown pairwise mode {s:?}"))),
        }
    }
}

/// How the dataset-level pairwise score is averaged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairwiseAverage {
    #[default]
    PerSubject,
    PerPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseScore {
    pub subject: String,
    pub mode: PairwiseMode,
    pub mean: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseReport {
    pub mode: PairwiseMode,
    pub per_subject: Vec<PairwiseScore>,
    /// Unweighted mean of the per-subject means.
    pub subject_mean: f64,
    /// Mean over every scored pair.
    pub pair_mean: f64,
}

impl PairwiseReport {
    pub fn dataset_score(&self, average: PairwiseAverage) -> f64 {
        match average {
            PairwiseAverage::PerSubject => self.subject_mean,
            PairwiseAverage::PerPair => self.pair_mean,
        }
    }
}

fn group_by_subject<'a>(records: &[&'a EmbeddingRecord]) -> BTreeMap<&'a str, Vec<&'a EmbeddingRecord>> {
    let mut groups: BTreeMap<&str, Vec<&EmbeddingRecord>> = BTreeMap::new();
    for &r in records {
        groups.entry(r.subject.as_str()).or_default().push(r);
    }
    for g in groups.values_mut() {
        g.sort_by(|a, b| a.id.cmp(&b.id));
    }
    groups
}

/// Mean cosine over every (real, generated) pair of each subject. Only the
/// two inputs are read; galleries do not enter this score.
pub fn pairwise_similarity_score(
    real_side: &[&EmbeddingRecord],
    generated: &[&EmbeddingRecord],
    mode: PairwiseMode,
) -> Result<PairwiseReport> {
    let real = group_by_subject(real_side);
    let gen = group_by_subject(generated);
    let unmatched: Vec<String> = real
        .keys()
        .filter(|s| !gen.contains_key(*s))
        .chain(gen.keys().filter(|s| !real.contains_key(*s)))
        .map(|s| s.to_string())
        .collect();
    if !unmatched.is_empty() {
        return Err(Error::UnmatchedSubjects(unmatched));
    }
    if real.is_empty() {
        return Err(Error::EmptyCollection);
    }

    let mut per_subject = Vec::with_capacity(real.len());
    let mut total = 0.0;
    let mut total_pairs = 0usize;
    for (subject, reals) in &real {
        let mut sum = 0.0;
        for r in reals {
            for g in &gen[subject] {
                sum += cosine(&r.vector, &g.vector)?;
            }
        }
        let pairs = reals.len() * gen[subject].len();
        total += sum;
        total_pairs += pairs;
        per_subject.push(PairwiseScore {
            subject: subject.to_string(),
            mode,
            mean: sum / pairs as f64,
            pairs,
        });
    }
    let subject_mean = per_subject.iter().map(|s| s.mean).sum::<f64>() / per_subject.len() as f64;
    Ok(PairwiseReport {
        mode,
        per_subject,
        subject_mean,
        pair_mean: total / total_pairs as f64,
    })
}

/// Mean cosine between each generated record and its paired prompt record.
/// `pairing` maps generated id to prompt id.
pub fn text_adherence_score(
    prompts: &[&EmbeddingRecord],
    generated: &[&EmbeddingRecord],
    pairing: &BTreeMap<String, String>,
) -> Result<f64> {
    if generated.is_empty() {
        return Err(Error::EmptyCollection);
    }
    let by_id: BTreeMap<&str, &EmbeddingRecord> = prompts.iter().map(|p| (p.id.as_str(), *p)).collect();
    let mut ordered: Vec<&EmbeddingRecord> = generated.to_vec();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    let mut sum = 0.0;
    for g in &ordered {
        let prompt = pairing
            .get(&g.id)
            .and_then(|pid| by_id.get(pid.as_str()))
            .ok_or_else(|| Error::Unpaired(g.id.clone()))?;
        sum += cosine(&prompt.vector, &g.vector)?;
    }
    Ok(sum / ordered.len() as f64)
}

/// Fraction of queries whose rank-1 gallery item shares their subject.
pub fn top1_identity_accuracy(queries: &[&EmbeddingRecord], gallery: &[&EmbeddingRecord]) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::EmptyCollection);
    }
    let index = GalleryIndex::new(gallery)?;
    let mut correct = 0usize;
    for q in queries {
        if index.rank(q)?.entries[0].relevant {
            correct += 1;
        }
    }
    Ok(correct as f64 / queries.len() as f64)
}
