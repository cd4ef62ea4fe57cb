//! Evaluation runs: oracle mode, generated-method mode, gallery ablations and
//! variant comparisons.
//!
//! Records are grouped by (encoder, variant). Inside a group every record is
//! addressed by its base id (the id without an `@<variant>` tag), so one
//! gallery spec applies to all variants of the same images. Each group builds
//! its gallery spec once and every method in the run is scored against it.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embstore::{load_set_auto, EmbeddingRecord, EmbeddingSet, Role};
use crate::error::{Error, Result};
use crate::gallery::{
    sample_kmeans, sample_random, seeded_order, split_reference_gallery, Candidate, GallerySpec,
    SplitConfig, Strategy, SubjectSplit,
};
use crate::metrics::{
    average_precision, mean_average_precision, pairwise_similarity_score, text_adherence_score,
    ApResult, GalleryIndex, MapAggregation, PairwiseAverage, PairwiseMode, PairwiseReport,
};
use crate::report::Scale;
use crate::rng::{fnv1a64, stream_key, subject_seed, CounterRng};

pub const ORACLE_METHOD: &str = "oracle";
const SUBJECT_ORDER_STREAM: u64 = 0x4142_4c53; // "ABLS"

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Oracle,
    #[default]
    Generated,
}

/// Where the reference/gallery partition comes from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum GallerySource {
    /// Stored roles: gallery-role records form the gallery, reference-role
    /// records the reference set.
    #[default]
    Roles,
    /// A spec written by `build-gallery`.
    File { path: PathBuf },
    /// Split the real images of each group with these settings.
    Split(SplitConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricOptions {
    pub map_aggregation: MapAggregation,
    pub pairwise_mode: PairwiseMode,
    pub pairwise_average: PairwiseAverage,
    pub scale: Scale,
    pub decimals: Option<usize>,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            map_aggregation: MapAggregation::PerQuery,
            pairwise_mode: PairwiseMode::VsReference,
            pairwise_average: PairwiseAverage::PerSubject,
            scale: Scale::Fraction,
            decimals: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Dataset label for outputs; defaults to the first set's file stem.
    pub dataset: Option<String>,
    pub sets: Vec<PathBuf>,
    /// Empty means every encoder/method/variant present.
    pub encoders: Vec<String>,
    pub methods: Vec<String>,
    pub variants: Vec<String>,
    pub mode: EvalMode,
    pub gallery: GallerySource,
    pub metrics: MetricOptions,
    /// JSON object mapping generated ids to prompt ids.
    pub prompt_pairs: Option<PathBuf>,
    pub seed: u64,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            dataset: None,
            sets: Vec::new(),
            encoders: Vec::new(),
            methods: Vec::new(),
            variants: Vec::new(),
            mode: EvalMode::Generated,
            gallery: GallerySource::Roles,
            metrics: MetricOptions::default(),
            prompt_pairs: None,
            seed: 0,
            base_dir: PathBuf::new(),
        }
    }
}

impl EvalConfig {
    /// Reads a config; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<EvalConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: EvalConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// FNV-1a over the canonical JSON form (paths as written).
    pub fn fingerprint(&self) -> u64 {
        fnv1a64(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn fingerprint_hex(&self) -> String {
        format!("{:016x}", self.fingerprint())
    }

    fn dataset_name(&self) -> String {
        self.dataset.clone().unwrap_or_else(|| {
            self.sets
                .first()
                .and_then(|p| p.file_stem())
                .and_then(|s| s.to_str())
                .unwrap_or("dataset")
                .to_string()
        })
    }

    pub fn load_sets(&self) -> Result<Vec<EmbeddingSet>> {
        if self.sets.is_empty() {
            return Err(Error::Config("no embedding sets listed".into()));
        }
        self.sets.iter().map(|p| load_set_auto(&self.resolve(p))).collect()
    }

    fn load_prompt_pairs(&self) -> Result<Option<BTreeMap<String, String>>> {
        let Some(path) = &self.prompt_pairs else {
            return Ok(None);
        };
        let path = self.resolve(path);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let pairs = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Ok(Some(pairs))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectBreakdown {
    pub subject: String,
    pub queries: usize,
    pub map: f64,
    pub top1_accuracy: f64,
    pub pairwise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GallerySummary {
    pub strategy: Strategy,
    pub subjects: usize,
    pub items: usize,
    pub min_per_subject: usize,
    pub max_per_subject: usize,
    pub fingerprint: String,
}

impl GallerySummary {
    fn of(spec: &GallerySpec) -> Self {
        let sizes = spec.subjects.values().map(|s| s.gallery.len());
        GallerySummary {
            strategy: spec.strategy,
            subjects: spec.subjects.len(),
            items: spec.gallery_len(),
            min_per_subject: sizes.clone().min().unwrap_or(0),
            max_per_subject: sizes.max().unwrap_or(0),
            fingerprint: format!("{:016x}", spec.fingerprint()),
        }
    }
}

/// Scores for one (dataset, encoder, method, variant) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub dataset: String,
    pub encoder: String,
    pub method: String,
    pub variant: String,
    pub map_per_query: f64,
    pub map_per_subject: f64,
    pub pairwise: PairwiseReport,
    pub pairwise_average: PairwiseAverage,
    pub text_adherence: Option<f64>,
    pub top1_accuracy: f64,
    pub per_subject: Vec<SubjectBreakdown>,
    pub query_count: usize,
    pub gallery: GallerySummary,
    pub config_fingerprint: String,
    pub queries: Vec<ApResult>,
}

impl RunResult {
    pub fn map(&self, aggregation: MapAggregation) -> f64 {
        match aggregation {
            MapAggregation::PerQuery => self.map_per_query,
            MapAggregation::PerSubjectMacro => self.map_per_subject,
        }
    }

    pub fn similarity(&self) -> f64 {
        self.pairwise.dataset_score(self.pairwise_average)
    }
}

/// Records of one (encoder, variant), re-keyed by base id.
#[derive(Debug, Clone)]
struct Group {
    encoder: String,
    variant: String,
    set: EmbeddingSet,
}

impl Group {
    fn lookup<'a>(&'a self, ids: &[String]) -> Result<Vec<&'a EmbeddingRecord>> {
        ids.iter()
            .map(|id| self.set.get(id).ok_or_else(|| Error::UnknownId(id.clone())))
            .collect()
    }

    fn spec_from_roles(&self) -> Result<GallerySpec> {
        let mut subjects: BTreeMap<String, SubjectSplit> = BTreeMap::new();
        for r in self.set.records() {
            let slot = match r.role {
                Role::Gallery => &mut subjects.entry(r.subject.clone()).or_default().gallery,
                Role::Reference => &mut subjects.entry(r.subject.clone()).or_default().reference,
                _ => continue,
            };
            slot.push(r.id.clone());
        }
        subjects.retain(|_, s| !s.gallery.is_empty());
        for s in subjects.values_mut() {
            s.gallery.sort();
            s.reference.sort();
        }
        if subjects.is_empty() {
            return Err(Error::Config(format!(
                "no gallery-role records for encoder {} variant {}",
                self.encoder, self.variant
            )));
        }
        Ok(GallerySpec {
            subjects,
            strategy: Strategy::Curated,
            seed: 0,
            note: "stored roles".into(),
        })
    }
}

/// One comparison of B against A, per metric: `B - A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub encoder: String,
    pub method: String,
    pub map_per_query: f64,
    pub map_per_subject: f64,
    pub similarity: f64,
    pub top1_accuracy: f64,
    pub text_adherence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantComparison {
    pub variant_a: String,
    pub variant_b: String,
    pub a: Vec<RunResult>,
    pub b: Vec<RunResult>,
    pub deltas: Vec<MetricDeltas>,
    /// Base ids present in only one variant, per encoder.
    pub missing_in_a: BTreeMap<String, Vec<String>>,
    pub missing_in_b: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationAxis {
    ImagesPerSubject,
    SubjectCount,
    SamplingStrategy,
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "images-per-subject" => Ok(AblationAxis::ImagesPerSubject),
            "subject-count" => Ok(AblationAxis::SubjectCount),
            "sampling-strategy" => Ok(AblationAxis::SamplingStrategy),
            _ => Err(Error::InvalidArgument(format!("unknown ablation axis {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValue {
    Count(usize),
    Strategy(Strategy),
}

impl std::fmt::Display for AxisValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AxisValue::Count(n) => write!(f, "{n}"),
            AxisValue::Strategy(s) => f.write_str(s.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub axis: AblationAxis,
    pub values: Vec<AxisValue>,
    pub seeds: Vec<u64>,
    /// Draw every cell afresh instead of nesting smaller galleries in larger ones.
    #[serde(default)]
    pub resample: bool,
    /// Gallery images per subject on the sampling-strategy axis.
    #[serde(default = "default_per_subject")]
    pub per_subject: usize,
}

fn default_per_subject() -> usize {
    10
}

impl AblationSpec {
    pub fn new(axis: AblationAxis, values: Vec<AxisValue>, seeds: Vec<u64>) -> Self {
        AblationSpec {
            axis,
            values,
            seeds,
            resample: false,
            per_subject: default_per_subject(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("ablation needs at least one value and one seed".into()));
        }
        match self.axis {
            AblationAxis::ImagesPerSubject | AblationAxis::SubjectCount => {
                let counts: Vec<usize> = self
                    .values
                    .iter()
                    .map(|v| match v {
                        AxisValue::Count(n) if *n > 0 => Ok(*n),
                        _ => Err(Error::Config(format!("axis value {v} must be a positive count"))),
                    })
                    .collect::<Result<_>>()?;
                if counts.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Config("numeric axis values must be strictly increasing".into()));
                }
            }
            AblationAxis::SamplingStrategy => {
                for v in &self.values {
                    if !matches!(v, AxisValue::Strategy(Strategy::Random | Strategy::Kmeans)) {
                        return Err(Error::Config(format!(
                            "sampling-strategy values must be random or kmeans, got {v}"
                        )));
                    }
                }
                if self.per_subject == 0 {
                    return Err(Error::Config("per_subject must be at least 1".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub value: AxisValue,
    pub seed: u64,
    /// One per method (a single oracle result in oracle mode).
    pub results: Vec<RunResult>,
}

impl AblationCell {
    /// Metric averaged over the cell's methods.
    pub fn mean_map(&self, aggregation: MapAggregation) -> f64 {
        self.results.iter().map(|r| r.map(aggregation)).sum::<f64>() / self.results.len() as f64
    }

    pub fn mean_similarity(&self) -> f64 {
        self.results.iter().map(RunResult::similarity).sum::<f64>() / self.results.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub axis: AblationAxis,
    pub values: Vec<AxisValue>,
    pub seeds: Vec<u64>,
    pub resample: bool,
    pub map_aggregation: MapAggregation,
    pub cells: Vec<AblationCell>,
}

/// Binds a config to loaded embedding sets.
pub struct Evaluator {
    config: EvalConfig,
    dataset: String,
    fingerprint: String,
    groups: Vec<Group>,
    prompt_pairs: Option<BTreeMap<String, String>>,
}

impl Evaluator {
    /// Loads everything the config references.
    pub fn from_config(config: EvalConfig) -> Result<Evaluator> {
        let sets = config.load_sets()?;
        let pairs = config.load_prompt_pairs()?;
        let mut ev = Evaluator::new(config, sets)?;
        ev.prompt_pairs = pairs;
        Ok(ev)
    }

    /// Uses in-memory sets; `config.sets` is ignored.
    pub fn new(config: EvalConfig, sets: Vec<EmbeddingSet>) -> Result<Evaluator> {
        let mut buckets: BTreeMap<(String, String), Vec<EmbeddingRecord>> = BTreeMap::new();
        for set in &sets {
            for r in set.records() {
                if !config.encoders.is_empty() && !config.encoders.contains(&r.encoder) {
                    continue;
                }
                if !config.variants.is_empty() && !config.variants.contains(&r.variant) {
                    continue;
                }
                let mut keyed = r.clone();
                keyed.id = r.base_id().to_string();
                buckets
                    .entry((r.encoder.clone(), r.variant.clone()))
                    .or_default()
                    .push(keyed);
            }
        }
        if buckets.is_empty() {
            return Err(Error::Config("no records match the configured encoders/variants".into()));
        }
        let dataset = config.dataset_name();
        let groups = buckets
            .into_iter()
            .map(|((encoder, variant), records)| {
                Ok(Group {
                    set: EmbeddingSet::new(&dataset, records)?,
                    encoder,
                    variant,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Evaluator {
            fingerprint: config.fingerprint_hex(),
            dataset,
            groups,
            prompt_pairs: None,
            config,
        })
    }

    pub fn with_prompt_pairs(mut self, pairs: BTreeMap<String, String>) -> Self {
        self.prompt_pairs = Some(pairs);
        self
    }

    pub fn config(&self) -> &EvalConfig {
        &self.config
    }

    pub fn run(&self) -> Result<Vec<RunResult>> {
        match self.config.mode {
            EvalMode::Oracle => self.oracle(),
            EvalMode::Generated => self.generated(),
        }
    }

    /// The gallery spec each (encoder, variant) group is scored against.
    pub fn gallery_specs(&self) -> Result<Vec<(String, String, GallerySpec)>> {
        self.groups
            .iter()
            .map(|g| Ok((g.encoder.clone(), g.variant.clone(), self.spec_for(g)?)))
            .collect()
    }

    fn spec_for(&self, group: &Group) -> Result<GallerySpec> {
        match &self.config.gallery {
            GallerySource::Roles => group.spec_from_roles(),
            GallerySource::File { path } => GallerySpec::load(&self.config.resolve(path)),
            GallerySource::Split(split) => {
                let mut split = split.clone();
                if let Some(list) = &split.curated_list {
                    split.curated_list = Some(self.config.resolve(list));
                }
                let real = group.set.filter(|r| r.role.is_real())?;
                split_reference_gallery(&real, &split)
            }
        }
    }

    /// Real reference images as queries.
    pub fn oracle(&self) -> Result<Vec<RunResult>> {
        self.groups
            .iter()
            .map(|group| {
                let spec = self.spec_for(group)?;
                let queries = group.lookup(&spec.reference_ids().map(String::from).collect::<Vec<_>>())?;
                self.score(group, &spec, ORACLE_METHOD, queries, PairwiseMode::VsGallery)
            })
            .collect()
    }

    fn methods_for(&self, group: &Group) -> Result<Vec<String>> {
        let present = group.set.methods();
        if self.config.methods.is_empty() {
            if present.is_empty() {
                return Err(Error::Config(format!(
                    "no generated records for encoder {} variant {}",
                    group.encoder, group.variant
                )));
            }
            return Ok(present);
        }
        for m in &self.config.methods {
            if !present.contains(m) {
                return Err(Error::Config(format!(
                    "method {m} has no generated records (encoder {}, variant {})",
                    group.encoder, group.variant
                )));
            }
        }
        Ok(self.config.methods.clone())
    }

    /// Generated records of each method as queries; one result per (group, method).
    pub fn generated(&self) -> Result<Vec<RunResult>> {
        let mut results = Vec::new();
        for group in &self.groups {
            let spec = self.spec_for(group)?;
            for method in self.methods_for(group)? {
                let queries = generated_queries(group, &method);
                results.push(self.score(group, &spec, &method, queries, self.config.metrics.pairwise_mode)?);
            }
        }
        Ok(results)
    }

    fn score(
        &self,
        group: &Group,
        spec: &GallerySpec,
        method: &str,
        mut queries: Vec<&EmbeddingRecord>,
        pairwise_mode: PairwiseMode,
    ) -> Result<RunResult> {
        if queries.is_empty() {
            return Err(Error::Config(format!("method {method}: no queries to evaluate")));
        }
        queries.sort_by(|a, b| a.id.cmp(&b.id));
        let query_subjects: BTreeSet<&str> = queries.iter().map(|q| q.subject.as_str()).collect();
        for s in &query_subjects {
            if spec.subjects.get(*s).is_none_or(|split| split.gallery.is_empty()) {
                return Err(Error::Config(format!("query subject {s} has no gallery records")));
            }
        }

        let gallery_ids: Vec<String> = spec.gallery_ids().map(String::from).collect();
        let gallery = group.lookup(&gallery_ids)?;
        let index = GalleryIndex::new(&gallery)?;

        let scored: Vec<(ApResult, bool)> = queries
            .par_iter()
            .map(|q| {
                let ranked = index.rank(q)?;
                let top1 = ranked.entries[0].relevant;
                Ok((average_precision(&ranked)?, top1))
            })
            .collect::<Result<_>>()?;
        let aps: Vec<ApResult> = scored.iter().map(|(ap, _)| ap.clone()).collect();

        let real_side_ids: Vec<String> = query_subjects
            .iter()
            .flat_map(|s| {
                let split = &spec.subjects[*s];
                match pairwise_mode {
                    PairwiseMode::VsReference => split.reference.clone(),
                    PairwiseMode::VsGallery => split.gallery.clone(),
                }
            })
            .collect();
        let real_side = group.lookup(&real_side_ids)?;
        let pairwise = pairwise_similarity_score(&real_side, &queries, pairwise_mode)?;

        let text_adherence = match (&self.prompt_pairs, method) {
            (Some(pairs), m) if m != ORACLE_METHOD => {
                let prompts = group.set.by_role(Role::Prompt);
                Some(text_adherence_score(&prompts, &queries, pairs)?)
            }
            _ => None,
        };

        let mut per_subject = Vec::with_capacity(query_subjects.len());
        for (subject, pair) in query_subjects.iter().zip(&pairwise.per_subject) {
            debug_assert_eq!(*subject, pair.subject);
            let rows: Vec<&(ApResult, bool)> = scored.iter().filter(|(ap, _)| ap.subject == *subject).collect();
            per_subject.push(SubjectBreakdown {
                subject: subject.to_string(),
                queries: rows.len(),
                map: rows.iter().map(|(ap, _)| ap.ap).sum::<f64>() / rows.len() as f64,
                top1_accuracy: rows.iter().filter(|(_, t)| *t).count() as f64 / rows.len() as f64,
                pairwise: pair.mean,
            });
        }

        Ok(RunResult {
            dataset: self.dataset.clone(),
            encoder: group.encoder.clone(),
            method: method.to_string(),
            variant: group.variant.clone(),
            map_per_query: mean_average_precision(&aps, MapAggregation::PerQuery)?,
            map_per_subject: mean_average_precision(&aps, MapAggregation::PerSubjectMacro)?,
            pairwise,
            pairwise_average: self.config.metrics.pairwise_average,
            text_adherence,
            top1_accuracy: scored.iter().filter(|(_, t)| *t).count() as f64 / scored.len() as f64,
            per_subject,
            query_count: aps.len(),
            gallery: GallerySummary::of(spec),
            config_fingerprint: self.fingerprint.clone(),
            queries: aps,
        })
    }

    fn single_group(&self) -> Result<&Group> {
        match self.groups.as_slice() {
            [g] => Ok(g),
            _ => Err(Error::Config(format!(
                "ablations need exactly one encoder/variant, found {}; restrict with encoders/variants",
                self.groups.len()
            ))),
        }
    }

    fn queries_for<'g>(&self, group: &'g Group, base: &GallerySpec) -> Result<Vec<(String, Vec<&'g EmbeddingRecord>)>> {
        match self.config.mode {
            EvalMode::Oracle => {
                let ids: Vec<String> = base.reference_ids().map(String::from).collect();
                Ok(vec![(ORACLE_METHOD.to_string(), group.lookup(&ids)?)])
            }
            EvalMode::Generated => Ok(self
                .methods_for(group)?
                .into_iter()
                .map(|m| {
                    let q = generated_queries(group, &m);
                    (m, q)
                })
                .collect()),
        }
    }

    /// Rebuilds the gallery per axis value and seed, scoring every cell.
    pub fn ablation(&self, spec: &AblationSpec) -> Result<AblationGrid> {
        spec.validate()?;
        let group = self.single_group()?;
        let base = self.spec_for(group)?;
        let all_queries = self.queries_for(group, &base)?;
        let pairwise_mode = match self.config.mode {
            EvalMode::Oracle => PairwiseMode::VsGallery,
            EvalMode::Generated => self.config.metrics.pairwise_mode,
        };

        let mut cells = Vec::with_capacity(spec.values.len() * spec.seeds.len());
        for &seed in &spec.seeds {
            let plans = self.cell_galleries(group, &base, spec, seed)?;
            for (value, cell_spec, query_subjects) in plans {
                let mut results = Vec::with_capacity(all_queries.len());
                for (method, queries) in &all_queries {
                    let queries: Vec<&EmbeddingRecord> = queries
                        .iter()
                        .copied()
                        .filter(|q| query_subjects.contains(&q.subject))
                        .collect();
                    results.push(self.score(group, &cell_spec, method, queries, pairwise_mode)?);
                }
                cells.push(AblationCell { value, seed, results });
            }
        }
        Ok(AblationGrid {
            axis: spec.axis,
            values: spec.values.clone(),
            seeds: spec.seeds.clone(),
            resample: spec.resample,
            map_aggregation: self.config.metrics.map_aggregation,
            cells,
        })
    }

    fn cell_galleries(
        &self,
        group: &Group,
        base: &GallerySpec,
        spec: &AblationSpec,
        seed: u64,
    ) -> Result<Vec<(AxisValue, GallerySpec, BTreeSet<String>)>> {
        let candidates = |subject: &str| -> Result<Vec<&EmbeddingRecord>> { group.lookup(&base.subjects[subject].gallery) };
        let all_subjects: BTreeSet<String> = base.subjects.keys().cloned().collect();
        let cell_spec = |subjects: BTreeMap<String, SubjectSplit>, strategy, note: String| GallerySpec {
            subjects,
            strategy,
            seed,
            note,
        };
        let mut out = Vec::new();
        match spec.axis {
            AblationAxis::ImagesPerSubject => {
                for value in &spec.values {
                    let AxisValue::Count(n) = *value else { unreachable!() };
                    let mut subjects = BTreeMap::new();
                    for (subject, split) in &base.subjects {
                        let cands: Vec<Candidate> = candidates(subject)?.into_iter().map(Candidate::from).collect();
                        if n > cands.len() {
                            return Err(Error::Config(format!(
                                "grid exceeds pool: {n} images requested, subject {subject} has {}",
                                cands.len()
                            )));
                        }
                        let mut key = subject_seed(seed, subject);
                        if spec.resample {
                            key = stream_key(key, &[n as u64]);
                        }
                        let mut gallery = seeded_order(&cands, key)?;
                        gallery.truncate(n);
                        gallery.sort();
                        subjects.insert(
                            subject.clone(),
                            SubjectSplit {
                                reference: split.reference.clone(),
                                gallery,
                            },
                        );
                    }
                    let note = format!("{n} images per subject");
                    out.push((*value, cell_spec(subjects, Strategy::Random, note), all_subjects.clone()));
                }
            }
            AblationAxis::SubjectCount => {
                let mut order: Vec<String> = all_subjects.iter().cloned().collect();
                CounterRng::from_parts(seed, &[SUBJECT_ORDER_STREAM]).shuffle(&mut order);
                let AxisValue::Count(smallest) = spec.values[0] else { unreachable!() };
                let largest = match spec.values.last() {
                    Some(AxisValue::Count(n)) => *n,
                    _ => unreachable!(),
                };
                if largest > order.len() {
                    return Err(Error::Config(format!(
                        "grid exceeds pool: {largest} subjects requested, {} available",
                        order.len()
                    )));
                }
                let fixed: BTreeSet<String> = order[..smallest].iter().cloned().collect();
                for value in &spec.values {
                    let AxisValue::Count(m) = *value else { unreachable!() };
                    let mut rest = order[smallest..].to_vec();
                    if spec.resample {
                        CounterRng::from_parts(seed, &[SUBJECT_ORDER_STREAM, m as u64]).shuffle(&mut rest);
                    }
                    let chosen = fixed.iter().chain(rest.iter().take(m - smallest));
                    let subjects = chosen.map(|s| (s.clone(), base.subjects[s].clone())).collect();
                    let note = format!("{m} subjects");
                    out.push((*value, cell_spec(subjects, base.strategy, note), fixed.clone()));
                }
            }
            AblationAxis::SamplingStrategy => {
                for value in &spec.values {
                    let AxisValue::Strategy(strategy) = *value else { unreachable!() };
                    let mut subjects = BTreeMap::new();
                    for (subject, split) in &base.subjects {
                        let cands: Vec<Candidate> = candidates(subject)?.into_iter().map(Candidate::from).collect();
                        if spec.per_subject > cands.len() {
                            return Err(Error::Config(format!(
                                "grid exceeds pool: {} images requested, subject {subject} has {}",
                                spec.per_subject,
                                cands.len()
                            )));
                        }
                        let key = subject_seed(seed, subject);
                        let gallery = match strategy {
                            Strategy::Kmeans => sample_kmeans(&cands, spec.per_subject, key)?,
                            _ => sample_random(&cands, spec.per_subject, key)?,
                        };
                        subjects.insert(
                            subject.clone(),
                            SubjectSplit {
                                reference: split.reference.clone(),
                                gallery,
                            },
                        );
                    }
                    let note = format!("{} sampling, {} per subject", strategy.as_str(), spec.per_subject);
                    out.push((*value, cell_spec(subjects, strategy, note), all_subjects.clone()));
                }
            }
        }
        Ok(out)
    }

    /// Scores variant B against variant A on the images both contain.
    pub fn compare_variants(&self, variant_a: &str, variant_b: &str) -> Result<VariantComparison> {
        let encoders: BTreeSet<&str> = self.groups.iter().map(|g| g.encoder.as_str()).collect();
        let mut out = VariantComparison {
            variant_a: variant_a.to_string(),
            variant_b: variant_b.to_string(),
            a: Vec::new(),
            b: Vec::new(),
            deltas: Vec::new(),
            missing_in_a: BTreeMap::new(),
            missing_in_b: BTreeMap::new(),
        };
        for encoder in encoders {
            let find = |v: &str| {
                self.groups
                    .iter()
                    .find(|g| g.encoder == encoder && g.variant == v)
                    .ok_or_else(|| Error::Config(format!("encoder {encoder} has no variant {v}")))
            };
            let (ga, gb) = (find(variant_a)?, find(variant_b)?);
            let ids_a: BTreeSet<&str> = ga.set.records().iter().map(|r| r.id.as_str()).collect();
            let ids_b: BTreeSet<&str> = gb.set.records().iter().map(|r| r.id.as_str()).collect();
            let common: BTreeSet<String> = ids_a.intersection(&ids_b).map(|s| s.to_string()).collect();
            if common.is_empty() {
                return Err(Error::Config(format!(
                    "variants {variant_a} and {variant_b} share no ids for encoder {encoder}"
                )));
            }
            out.missing_in_b
                .insert(encoder.to_string(), ids_a.difference(&ids_b).map(|s| s.to_string()).collect());
            out.missing_in_a
                .insert(encoder.to_string(), ids_b.difference(&ids_a).map(|s| s.to_string()).collect());

            let restrict = |g: &Group| -> Result<Group> {
                Ok(Group {
                    encoder: g.encoder.clone(),
                    variant: g.variant.clone(),
                    set: g.set.filter(|r| common.contains(&r.id))?,
                })
            };
            let (ra, rb) = (restrict(ga)?, restrict(gb)?);
            let mut spec = self.spec_for(&ra)?;
            for split in spec.subjects.values_mut() {
                split.gallery.retain(|id| common.contains(id));
                split.reference.retain(|id| common.contains(id));
            }
            spec.subjects.retain(|_, s| !s.gallery.is_empty());

            let run = |g: &Group| -> Result<Vec<RunResult>> {
                match self.config.mode {
                    EvalMode::Oracle => {
                        let ids: Vec<String> = spec.reference_ids().map(String::from).collect();
                        Ok(vec![self.score(g, &spec, ORACLE_METHOD, g.lookup(&ids)?, PairwiseMode::VsGallery)?])
                    }
                    EvalMode::Generated => self
                        .methods_for(g)?
                        .iter()
                        .map(|m| self.score(g, &spec, m, generated_queries(g, m), self.config.metrics.pairwise_mode))
                        .collect(),
                }
            };
            let (res_a, res_b) = (run(&ra)?, run(&rb)?);
            for a in &res_a {
                let Some(b) = res_b.iter().find(|b| b.method == a.method) else {
                    continue;
                };
                out.deltas.push(MetricDeltas {
                    encoder: encoder.to_string(),
                    method: a.method.clone(),
                    map_per_query: b.map_per_query - a.map_per_query,
                    map_per_subject: b.map_per_subject - a.map_per_subject,
                    similarity: b.similarity() - a.similarity(),
                    top1_accuracy: b.top1_accuracy - a.top1_accuracy,
                    text_adherence: a.text_adherence.zip(b.text_adherence).map(|(x, y)| y - x),
                });
            }
            out.a.extend(res_a);
            out.b.extend(res_b);
        }
        Ok(out)
    }
}

fn generated_queries<'a>(group: &'a Group, method: &str) -> Vec<&'a EmbeddingRecord> {
    group
        .set
        .by_role(Role::Generated)
        .into_iter()
        .filter(|r| r.method == method)
        .collect()
}

pub fn run_oracle_eval(config: &EvalConfig) -> Result<Vec<RunResult>> {
    Evaluator::from_config(config.clone())?.oracle()
}

pub fn run_generated_eval(config: &EvalConfig) -> Result<Vec<RunResult>> {
    Evaluator::from_config(config.clone())?.generated()
}

pub fn run_ablation_sweep(config: &EvalConfig, grid: &AblationSpec) -> Result<AblationGrid> {
    Evaluator::from_config(config.clone())?.ablation(grid)
}

pub fn compare_variants(config: &EvalConfig, variant_a: &str, variant_b: &str) -> Result<VariantComparison> {
    Evaluator::from_config(config.clone())?.compare_variants(variant_a, variant_b)
}
