//! Reference/gallery partitioning and the gallery sampling strategies.
//!
//! Every seeded draw canonicalizes its candidates by id first, and per-subject
//! randomness is keyed by `seed ^ fnv1a64(subject)`, so neither input order
//! nor evaluation schedule changes a split.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::embstore::{write_atomic, EmbeddingRecord, EmbeddingSet};
use crate::error::{Error, Result};
use crate::rng::{fnv1a64, stream_key, subject_seed, CounterRng};

const SUBJECT_ORDER_STREAM: u64 = 0x5355_424a; // "SUBJ"
const REFERENCE_STREAM: u64 = 0x5245_4600; // "REF"

#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub id: &'a str,
    pub vector: &'a [f32],
}

impl<'a> From<&'a EmbeddingRecord> for Candidate<'a> {
    fn from(r: &'a EmbeddingRecord) -> Self {
        Candidate {
            id: &r.id,
            vector: &r.vector,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Random,
    Kmeans,
    Curated,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Kmeans => "kmeans",
            Strategy::Curated => "curated",
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "kmeans" | "k-means" => Ok(Strategy::Kmeans),
            "curated" => Ok(Strategy::Curated),
            _ => Err(Error::InvalidArgument(format!("unknown sampling strategy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub reference_per_subject: usize,
    pub gallery_per_subject: usize,
    pub subject_limit: Option<usize>,
    pub strategy: Strategy,
    pub curated_list: Option<PathBuf>,
    pub seed: u64,
    /// Shrink to what a subject has instead of failing.
    pub cap_to_available: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            reference_per_subject: 5,
            gallery_per_subject: 10,
            subject_limit: None,
            strategy: Strategy::Random,
            curated_list: None,
            seed: 0,
            cap_to_available: false,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reference_per_subject == 0 || self.gallery_per_subject == 0 {
            return Err(Error::Config(
                "reference_per_subject and gallery_per_subject must be at least 1".into(),
            ));
        }
        if self.subject_limit == Some(0) {
            return Err(Error::Config("subject_limit must be at least 1".into()));
        }
        if self.strategy == Strategy::Curated && self.curated_list.is_none() {
            return Err(Error::Config("curated strategy requires curated_list".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectSplit {
    pub reference: Vec<String>,
    pub gallery: Vec<String>,
}

/// A realized reference/gallery partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GallerySpec {
    pub subjects: BTreeMap<String, SubjectSplit>,
    pub strategy: Strategy,
    pub seed: u64,
    #[serde(default)]
    pub note: String,
}

impl GallerySpec {
    /// Checks reference/gallery disjointness per subject and across subjects.
    pub fn validate(&self) -> Result<()> {
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        for (subject, split) in &self.subjects {
            if split.gallery.is_empty() {
                return Err(Error::Config(format!("subject {subject} has an empty gallery")));
            }
            for id in split.gallery.iter().chain(&split.reference) {
                if !seen.insert(id) {
                    return Err(Error::Overlap(id.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn gallery_ids(&self) -> impl Iterator<Item = &str> {
        self.subjects.values().flat_map(|s| s.gallery.iter().map(String::as_str))
    }

    pub fn reference_ids(&self) -> impl Iterator<Item = &str> {
        self.subjects.values().flat_map(|s| s.reference.iter().map(String::as_str))
    }

    pub fn gallery_len(&self) -> usize {
        self.subjects.values().map(|s| s.gallery.len()).sum()
    }

    pub fn fingerprint(&self) -> u64 {
        fnv1a64(&serde_json::to_vec(self).expect("gallery spec serializes"))
    }

    pub fn load(path: &Path) -> Result<GallerySpec> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: GallerySpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

fn canonical<'a>(candidates: &[Candidate<'a>]) -> Result<Vec<Candidate<'a>>> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| a.id.cmp(b.id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::InvalidArgument(format!("duplicate candidate id {}", w[0].id)));
    }
    Ok(sorted)
}

/// Seeded permutation of the candidate ids (taken in id order). Prefixes of
/// this order are nested samples.
pub fn seeded_order(candidates: &[Candidate<'_>], seed: u64) -> Result<Vec<String>> {
    let mut ids: Vec<String> = canonical(candidates)?.iter().map(|c| c.id.to_string()).collect();
    CounterRng::new(seed).shuffle(&mut ids);
    Ok(ids)
}

/// Uniform sample of `n` ids without replacement, returned in id order.
pub fn sample_random(candidates: &[Candidate<'_>], n: usize, seed: u64) -> Result<Vec<String>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample size must be at least 1".into()));
    }
    if n > candidates.len() {
        return Err(Error::InvalidArgument(format!(
            "sample size {n} exceeds {} candidates",
            candidates.len()
        )));
    }
    let mut picked = seeded_order(candidates, seed)?;
    picked.truncate(n);
    picked.sort();
    Ok(picked)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
    pub max_iter: usize,
    /// Independent k-means++ starts; the lowest final inertia wins.
    pub n_init: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            tol: 1e-6,
            max_iter: 100,
            n_init: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Inertia after every assignment step, starting with the initial one.
    pub inertia_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut CounterRng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.below(n as u64) as usize];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.next_f64() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                acc += d;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total has a positive weight")
        } else {
            // only duplicates left: take any point not yet used as a seed
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.below(free.len() as u64) as usize]
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// Nearest-centroid assignment (lowest centroid index on ties), then repair of
/// empty clusters by moving the point farthest from its centroid. Returns the
/// per-point squared distances.
fn assign(points: &[Vec<f64>], centroids: &mut [Vec<f64>], assignments: &mut [usize]) -> Vec<f64> {
    let k = centroids.len();
    let mut dist: Vec<f64> = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let mut best = (0, f64::INFINITY);
        for (c, centroid) in centroids.iter().enumerate() {
            let d = sq_dist(p, centroid);
            if d < best.1 {
                best = (c, d);
            }
        }
        assignments[i] = best.0;
        dist.push(best.1);
    }
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            break;
        };
        let far = (0..points.len())
            .filter(|&i| sizes[assignments[i]] > 1)
            .fold(None::<usize>, |best, i| match best {
                Some(b) if dist[b] >= dist[i] => Some(b),
                _ => Some(i),
            })
            .expect("k <= n leaves a cluster with two or more points");
        centroids[empty] = points[far].clone();
        assignments[far] = empty;
        dist[far] = 0.0;
    }
    dist
}

/// Lloyd's algorithm from `n_init` seeded k-means++ starts, in Euclidean space.
/// The result (history included) is that of the start with the lowest inertia.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, options: KMeansOptions) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds {} points",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::InvalidArgument("points differ in dimension".into()));
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("non-finite point coordinate".into()));
    }

    if options.n_init == 0 {
        return Err(Error::InvalidArgument("n_init must be at least 1".into()));
    }
    let mut best: Option<KMeansResult> = None;
    for start in 0..options.n_init as u64 {
        let run = lloyd(points, k, stream_key(seed, &[start]), options);
        // strict < keeps the earliest start on ties
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("n_init >= 1"))
}

fn lloyd(points: &[Vec<f64>], k: usize, key: u64, options: KMeansOptions) -> KMeansResult {
    let dim = points[0].len();
    let mut rng = CounterRng::new(key);
    let mut centroids = kmeans_plus_plus(points, k, &mut rng);
    let mut assignments = vec![0usize; points.len()];
    let dist = assign(points, &mut centroids, &mut assignments);
    let mut history = vec![dist.iter().sum::<f64>()];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < options.max_iter {
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut displacement = 0.0f64;
        for ((centroid, sum), &count) in centroids.iter_mut().zip(sums).zip(&counts) {
            let mean: Vec<f64> = sum.into_iter().map(|s| s / count as f64).collect();
            displacement = displacement.max(sq_dist(centroid, &mean).sqrt());
            *centroid = mean;
        }
        let dist = assign(points, &mut centroids, &mut assignments);
        history.push(dist.iter().sum());
        iterations += 1;
        if displacement < options.tol {
            converged = true;
            break;
        }
    }

    KMeansResult {
        inertia: *history.last().unwrap(),
        centroids,
        assignments,
        iterations,
        converged,
        inertia_history: history,
    }
}

/// k-means with `k = n`, then per cluster the member closest to its centroid
/// (lowest id on ties). Returned in id order.
pub fn sample_kmeans(candidates: &[Candidate<'_>], n: usize, seed: u64) -> Result<Vec<String>> {
    let sorted = canonical(candidates)?;
    let points: Vec<Vec<f64>> = sorted
        .iter()
        .map(|c| c.vector.iter().map(|&x| f64::from(x)).collect())
        .collect();
    let result = kmeans(&points, n, seed, KMeansOptions::default())?;
    let mut best: Vec<Option<(f64, usize)>> = vec![None; n];
    for (i, &cluster) in result.assignments.iter().enumerate() {
        let d = sq_dist(&points[i], &result.centroids[cluster]);
        // candidates are id-sorted, so strict < keeps the lowest id on ties
        if best[cluster].is_none_or(|(bd, _)| d < bd) {
            best[cluster] = Some((d, i));
        }
    }
    let mut ids: Vec<String> = best
        .into_iter()
        .map(|b| sorted[b.expect("clusters are non-empty").1].id.to_string())
        .collect();
    ids.sort();
    Ok(ids)
}

/// Parsed curated-list file: gallery ids, then optionally `---` and reference ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CuratedList {
    pub gallery: Vec<String>,
    pub reference: Option<Vec<String>>,
}

impl CuratedList {
    pub fn parse(text: &str) -> CuratedList {
        let mut list = CuratedList::default();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line == "---" {
                list.reference.get_or_insert_with(Vec::new);
                continue;
            }
            match list.reference.as_mut() {
                Some(reference) => reference.push(line.to_string()),
                None => list.gallery.push(line.to_string()),
            }
        }
        list
    }

    pub fn load(path: &Path) -> Result<CuratedList> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(CuratedList::parse(&text))
    }
}

fn real_candidates(pool: &EmbeddingSet) -> BTreeMap<&str, Vec<&EmbeddingRecord>> {
    let mut by_subject: BTreeMap<&str, Vec<&EmbeddingRecord>> = BTreeMap::new();
    for r in pool.records().iter().filter(|r| r.role.is_real()) {
        by_subject.entry(r.subject.as_str()).or_default().push(r);
    }
    for v in by_subject.values_mut() {
        v.sort_by(|a, b| a.id.cmp(&b.id));
    }
    by_subject
}

/// Builds a spec from a curated list. Without an explicit reference section,
/// up to `reference_per_subject` ids are drawn from each subject's remainder.
pub fn curate_from_list(
    pool: &EmbeddingSet,
    list: &CuratedList,
    reference_per_subject: usize,
    seed: u64,
) -> Result<GallerySpec> {
    let mut subjects: BTreeMap<String, SubjectSplit> = BTreeMap::new();
    let mut listed: BTreeSet<&str> = BTreeSet::new();
    for id in &list.gallery {
        let record = pool
            .get(id)
            .filter(|r| r.role.is_real())
            .ok_or_else(|| Error::UnknownId(id.clone()))?;
        if !listed.insert(id) {
            return Err(Error::InvalidArgument(format!("id {id} listed twice")));
        }
        subjects.entry(record.subject.clone()).or_default().gallery.push(id.clone());
    }
    match &list.reference {
        Some(reference) => {
            for id in reference {
                let record = pool
                    .get(id)
                    .filter(|r| r.role.is_real())
                    .ok_or_else(|| Error::UnknownId(id.clone()))?;
                if !listed.insert(id) {
                    return Err(Error::Overlap(id.clone()));
                }
                subjects.entry(record.subject.clone()).or_default().reference.push(id.clone());
            }
        }
        None => {
            let candidates = real_candidates(pool);
            for (subject, split) in subjects.iter_mut() {
                let remainder: Vec<Candidate> = candidates[subject.as_str()]
                    .iter()
                    .filter(|r| !listed.contains(r.id.as_str()))
                    .map(|&r| r.into())
                    .collect();
                let n = reference_per_subject.min(remainder.len());
                if n > 0 {
                    let key = stream_key(subject_seed(seed, subject), &[REFERENCE_STREAM]);
                    split.reference = sample_random(&remainder, n, key)?;
                }
            }
        }
    }
    for split in subjects.values_mut() {
        split.gallery.sort();
        split.reference.sort();
    }
    let spec = GallerySpec {
        subjects,
        strategy: Strategy::Curated,
        seed,
        note: "gallery ids from curated list".into(),
    };
    spec.validate()?;
    Ok(spec)
}

/// Partitions each subject's real images into disjoint reference and gallery lists.
pub fn split_reference_gallery(pool: &EmbeddingSet, config: &SplitConfig) -> Result<GallerySpec> {
    config.validate()?;
    if config.strategy == Strategy::Curated {
        let path = config.curated_list.as_ref().expect("validated");
        let list = CuratedList::load(path)?;
        return curate_from_list(pool, &list, config.reference_per_subject, config.seed);
    }

    let candidates = real_candidates(pool);
    let mut subject_order: Vec<&str> = candidates.keys().copied().collect();
    if let Some(limit) = config.subject_limit {
        if limit < subject_order.len() {
            CounterRng::from_parts(config.seed, &[SUBJECT_ORDER_STREAM]).shuffle(&mut subject_order);
            subject_order.truncate(limit);
        }
    }

    let mut subjects = BTreeMap::new();
    for subject in subject_order {
        let pool_items = &candidates[subject];
        let available = pool_items.len();
        let needed = config.reference_per_subject + config.gallery_per_subject;
        let (n_ref, n_gal) = if available >= needed {
            (config.reference_per_subject, config.gallery_per_subject)
        } else if config.cap_to_available {
            let n_gal = config.gallery_per_subject.min(available.saturating_sub(1)).max(1);
            let n_ref = config.reference_per_subject.min(available - n_gal);
            warn!("subject {subject}: capping split to {n_ref} reference / {n_gal} gallery ({available} available)");
            (n_ref, n_gal)
        } else {
            return Err(Error::InsufficientCandidates {
                subject: subject.to_string(),
                needed,
                available,
            });
        };

        let cands: Vec<Candidate> = pool_items.iter().map(|&r| r.into()).collect();
        let seed = subject_seed(config.seed, subject);
        let split = match config.strategy {
            Strategy::Random => {
                let order = seeded_order(&cands, seed)?;
                let mut reference = order[..n_ref].to_vec();
                let mut gallery = order[n_ref..n_ref + n_gal].to_vec();
                reference.sort();
                gallery.sort();
                SubjectSplit { reference, gallery }
            }
            Strategy::Kmeans => {
                let gallery = sample_kmeans(&cands, n_gal, seed)?;
                let rest: Vec<Candidate> = cands
                    .iter()
                    .filter(|c| gallery.binary_search_by(|g| g.as_str().cmp(c.id)).is_err())
                    .copied()
                    .collect();
                let reference = if n_ref > 0 {
                    sample_random(&rest, n_ref, stream_key(seed, &[REFERENCE_STREAM]))?
                } else {
                    Vec::new()
                };
                SubjectSplit { reference, gallery }
            }
            Strategy::Curated => unreachable!(),
        };
        subjects.insert(subject.to_string(), split);
    }

    let spec = GallerySpec {
        subjects,
        strategy: config.strategy,
        seed: config.seed,
        note: format!(
            "{} split: {} reference / {} gallery per subject",
            config.strategy.as_str(),
            config.reference_per_subject,
            config.gallery_per_subject
        ),
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embstore::Role;
    use approx::assert_abs_diff_eq;

    fn pool(subjects: usize, per_subject: usize) -> EmbeddingSet {
        let mut records = Vec::new();
        for s in 0..subjects {
            for i in 0..per_subject {
                records.push(EmbeddingRecord {
                    id: format!("s{s:02}-{i:02}"),
                    subject: format!("s{s:02}"),
                    role: Role::Gallery,
                    encoder: "e".into(),
                    variant: "default".into(),
                    method: String::new(),
                    vector: vec![1.0 + s as f32, i as f32 * 0.1, (i * i) as f32 * 0.01],
                });
            }
        }
        EmbeddingSet::new("pool", records).unwrap()
    }

    fn line_candidates(values: &[f32]) -> (Vec<String>, Vec<Vec<f32>>) {
        let ids = (0..values.len()).map(|i| format!("c{i}")).collect();
        let vecs = values.iter().map(|&v| vec![v]).collect();
        (ids, vecs)
    }

    fn as_candidates<'a>(ids: &'a [String], vecs: &'a [Vec<f32>]) -> Vec<Candidate<'a>> {
        ids.iter().zip(vecs).map(|(id, v)| Candidate { id, vector: v }).collect()
    }

    #[test]
    fn exact_partition_of_twenty() {
        let pool = pool(3, 20);
        let config = SplitConfig {
            reference_per_subject: 10,
            gallery_per_subject: 10,
            ..Default::default()
        };
        let spec = split_reference_gallery(&pool, &config).unwrap();
        for split in spec.subjects.values() {
            assert_eq!(split.reference.len(), 10);
            assert_eq!(split.gallery.len(), 10);
            assert!(split.reference.iter().all(|r| !split.gallery.contains(r)));
        }
    }

    #[test]
    fn split_ignores_input_order() {
        let forward = pool(4, 20);
        let mut records = forward.records().to_vec();
        records.reverse();
        let reversed = EmbeddingSet::new("pool", records).unwrap();
        for strategy in [Strategy::Random, Strategy::Kmeans] {
            let config = SplitConfig {
                reference_per_subject: 5,
                gallery_per_subject: 10,
                strategy,
                seed: 99,
                ..Default::default()
            };
            assert_eq!(
                split_reference_gallery(&forward, &config).unwrap(),
                split_reference_gallery(&reversed, &config).unwrap()
            );
        }
    }

    #[test]
    fn insufficient_candidates() {
        let pool = pool(2, 12);
        let config = SplitConfig {
            reference_per_subject: 10,
            gallery_per_subject: 10,
            ..Default::default()
        };
        let err = split_reference_gallery(&pool, &config).unwrap_err();
        assert!(matches!(err, Error::InsufficientCandidates { needed: 20, available: 12, .. }));
        assert!(err.to_string().contains("insufficient candidates"));

        let capped = SplitConfig {
            cap_to_available: true,
            ..config
        };
        let spec = split_reference_gallery(&pool, &capped).unwrap();
        let s = &spec.subjects["s00"];
        assert_eq!((s.reference.len(), s.gallery.len()), (2, 10));
    }

    #[test]
    fn subject_limit_picks_a_seeded_subset() {
        let pool = pool(6, 4);
        let config = SplitConfig {
            reference_per_subject: 1,
            gallery_per_subject: 2,
            subject_limit: Some(3),
            seed: 5,
            ..Default::default()
        };
        let spec = split_reference_gallery(&pool, &config).unwrap();
        assert_eq!(spec.subjects.len(), 3);
    }

    #[test]
    fn sample_random_contract() {
        let (ids, vecs) = line_candidates(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        let c = as_candidates(&ids, &vecs);
        assert_eq!(sample_random(&c, 5, 1).unwrap(), ids);
        assert!(sample_random(&c, 0, 1).is_err());
        assert!(sample_random(&c, 6, 1).is_err());
        let a = sample_random(&c, 3, 17).unwrap();
        assert_eq!(a, sample_random(&c, 3, 17).unwrap());
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        let mut rev = c.clone();
        rev.reverse();
        assert_eq!(a, sample_random(&rev, 3, 17).unwrap());
    }

    #[test]
    fn sample_random_is_nested_under_a_seed() {
        let (ids, vecs) = line_candidates(&[0.0; 12]);
        let c = as_candidates(&ids, &vecs);
        let small = sample_random(&c, 4, 3).unwrap();
        let large = sample_random(&c, 9, 3).unwrap();
        assert!(small.iter().all(|id| large.contains(id)));
    }

    #[test]
    fn kmeans_two_clusters_on_a_line() {
        let points: Vec<Vec<f64>> = [0.0, 0.1, 10.0, 10.1].iter().map(|&x| vec![x]).collect();
        let r = kmeans(&points, 2, 3, KMeansOptions::default()).unwrap();
        assert_eq!(r.assignments[0], r.assignments[1]);
        assert_eq!(r.assignments[2], r.assignments[3]);
        assert_ne!(r.assignments[0], r.assignments[2]);
        let mut c: Vec<f64> = r.centroids.iter().map(|c| c[0]).collect();
        c.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(c[0], 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(c[1], 10.05, epsilon = 1e-12);
        assert!(r.converged);
    }

    #[test]
    fn kmeans_degenerate_k() {
        let points: Vec<Vec<f64>> = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, -1.0]];
        let all = kmeans(&points, 3, 1, KMeansOptions::default()).unwrap();
        assert_eq!(all.inertia, 0.0);
        let mut a = all.assignments.clone();
        a.sort_unstable();
        assert_eq!(a, [0, 1, 2]);

        let one = kmeans(&points, 1, 1, KMeansOptions::default()).unwrap();
        assert_abs_diff_eq!(one.centroids[0][0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(one.centroids[0][1], 1.0, epsilon = 1e-12);

        assert!(kmeans(&points, 0, 1, KMeansOptions::default()).is_err());
        assert!(kmeans(&points, 4, 1, KMeansOptions::default()).is_err());
    }

    #[test]
    fn kmeans_with_duplicates_keeps_clusters_non_empty() {
        let points: Vec<Vec<f64>> = vec![vec![1.0]; 5];
        let r = kmeans(&points, 3, 0, KMeansOptions::default()).unwrap();
        for c in 0..3 {
            assert!(r.assignments.contains(&c));
        }
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn sample_kmeans_picks_cluster_medians() {
        let (ids, vecs) = line_candidates(&[0.0, 0.1, 0.2, 10.0, 10.1, 10.2]);
        let c = as_candidates(&ids, &vecs);
        assert_eq!(sample_kmeans(&c, 2, 0).unwrap(), ["c1", "c4"]);
        assert_eq!(sample_kmeans(&c, 6, 0).unwrap(), ids);
    }

    #[test]
    fn sample_kmeans_ten_of_thirty_seven() {
        let ids: Vec<String> = (0..37).map(|i| format!("img{i:02}")).collect();
        let mut rng = CounterRng::new(4);
        let vecs: Vec<Vec<f32>> = (0..37)
            .map(|_| (0..8).map(|_| rng.next_gaussian() as f32).collect())
            .collect();
        let c = as_candidates(&ids, &vecs);
        let picked = sample_kmeans(&c, 10, 8).unwrap();
        assert_eq!(picked.len(), 10);
        assert_eq!(picked.iter().collect::<BTreeSet<_>>().len(), 10);
    }

    #[test]
    fn curated_lists() {
        let pool = pool(1, 20);
        let ids: Vec<String> = (0..20).map(|i| format!("s00-{i:02}")).collect();
        let text = format!("# gallery\n{}\n---\n{}\n", ids[..10].join("\n"), ids[10..].join("\n"));
        let spec = curate_from_list(&pool, &CuratedList::parse(&text), 5, 0).unwrap();
        assert_eq!(spec.subjects["s00"].gallery, ids[..10]);
        assert_eq!(spec.subjects["s00"].reference, ids[10..]);

        let overlap = format!("{}\n---\n{}\n", ids[0], ids[0]);
        assert!(matches!(
            curate_from_list(&pool, &CuratedList::parse(&overlap), 5, 0),
            Err(Error::Overlap(id)) if id == ids[0]
        ));

        let unknown = "nope\n";
        assert!(matches!(
            curate_from_list(&pool, &CuratedList::parse(unknown), 5, 0),
            Err(Error::UnknownId(id)) if id == "nope"
        ));

        let gallery_only = ids[..10].join("\n");
        let spec = curate_from_list(&pool, &CuratedList::parse(&gallery_only), 5, 0).unwrap();
        let s = &spec.subjects["s00"];
        assert_eq!(s.reference.len(), 5);
        assert!(s.reference.iter().all(|r| ids[10..].contains(r)));
    }

    #[test]
    fn spec_validation_catches_cross_subject_overlap() {
        let mut subjects = BTreeMap::new();
        subjects.insert(
            "a".to_string(),
            SubjectSplit {
                reference: vec!["x".into()],
                gallery: vec!["y".into()],
            },
        );
        subjects.insert(
            "b".to_string(),
            SubjectSplit {
                reference: vec![],
                gallery: vec!["x".into()],
            },
        );
        let spec = GallerySpec {
            subjects,
            strategy: Strategy::Random,
            seed: 0,
            note: String::new(),
        };
        assert!(matches!(spec.validate(), Err(Error::Overlap(_))));
    }
}
