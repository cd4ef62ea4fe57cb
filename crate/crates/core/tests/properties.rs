mod common;

use std::path::Path;

use approx::assert_abs_diff_eq;
use galleryrank::embstore::{load_set, write_set, EmbeddingRecord, EmbeddingSet, Format, Role};
use galleryrank::gallery::{kmeans, sample_kmeans, sample_random, Candidate, KMeansOptions};
use galleryrank::metrics::{
    ap_from_relevance, average_precision, cosine, mean_average_precision, pairwise_similarity_score, rank_gallery,
    ApResult, MapAggregation, PairwiseMode,
};
use galleryrank::rng::CounterRng;
use galleryrank::synth::{brute_force_ap, ScoredItem};
use proptest::prelude::*;

use common::{random_instance, record, refs};

fn scored(query: &EmbeddingRecord, gallery: &[EmbeddingRecord]) -> Vec<ScoredItem> {
    gallery
        .iter()
        .map(|g| ScoredItem {
            id: g.id.clone(),
            similarity: cosine(&query.vector, &g.vector).unwrap(),
            relevant: g.subject == query.subject,
        })
        .collect()
}

fn engine_ap(query: &EmbeddingRecord, gallery: &[EmbeddingRecord]) -> f64 {
    average_precision(&rank_gallery(query, &refs(gallery)).unwrap()).unwrap().ap
}

fn relevance_strategy() -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(any::<bool>(), 1..40).prop_filter("needs a relevant item", |r| r.contains(&true))
}

fn label() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9_\\-\u{e9}\u{4e2d}]{1,12}"
}

prop_compose! {
    fn arb_record(dim: usize)(
        id in label(),
        subject in label(),
        role in prop::sample::select(vec![Role::Reference, Role::Gallery, Role::Generated, Role::Prompt]),
        variant in label(),
        method in label(),
        vector in prop::collection::vec(-1.0e3f32..1.0e3, dim),
    ) -> EmbeddingRecord {
        let mut v = vector;
        if v.iter().all(|&x| x == 0.0) {
            v[0] = 1.0;
        }
        EmbeddingRecord {
            id,
            subject,
            role,
            encoder: "enc".into(),
            variant,
            method: if role.is_real() { String::new() } else { method },
            vector: v,
        }
    }
}

fn arb_set() -> impl Strategy<Value = Vec<EmbeddingRecord>> {
    (1usize..6).prop_flat_map(|dim| prop::collection::vec(arb_record(dim), 1..25)).prop_map(|mut records| {
        records.sort_by(|a, b| a.id.cmp(&b.id));
        records.dedup_by(|a, b| a.id == b.id);
        // a set with generated records needs a gallery record of the same subject
        let subjects: Vec<String> = records
            .iter()
            .filter(|r| r.role == Role::Generated)
            .map(|r| r.subject.clone())
            .collect();
        for (i, s) in subjects.into_iter().enumerate() {
            let mut g = records[0].clone();
            g.id = format!("~gallery{i}");
            g.subject = s;
            g.role = Role::Gallery;
            g.method.clear();
            records.push(g);
        }
        records.sort_by(|a, b| a.id.cmp(&b.id));
        records.dedup_by(|a, b| a.id == b.id);
        records
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ap_matches_counting_oracle(seed in any::<u64>()) {
        let mut rng = CounterRng::new(seed);
        let (query, gallery) = random_instance(&mut rng, 20, 8);
        let oracle = brute_force_ap(&scored(&query, &gallery)).unwrap();
        prop_assert!((engine_ap(&query, &gallery) - oracle).abs() <= 1e-12);
    }

    #[test]
    fn ap_is_a_probability(relevance in relevance_strategy()) {
        let ap = ap_from_relevance(&relevance).unwrap();
        prop_assert!(ap > 0.0 && ap <= 1.0);
    }

    #[test]
    fn ap_is_one_exactly_when_relevant_items_lead(relevance in relevance_strategy()) {
        let hits = relevance.iter().filter(|&&r| r).count();
        let leading = relevance.iter().take(hits).all(|&r| r);
        let ap = ap_from_relevance(&relevance).unwrap();
        prop_assert_eq!(ap == 1.0, leading);
    }

    #[test]
    fn demoting_a_relevant_item_never_helps(relevance in relevance_strategy(), pick in any::<prop::sample::Index>()) {
        let positions: Vec<usize> = relevance.iter().enumerate().filter(|(_, &r)| r).map(|(i, _)| i).collect();
        let i = positions[pick.index(positions.len())];
        if i + 1 < relevance.len() && !relevance[i + 1] {
            let mut swapped = relevance.clone();
            swapped.swap(i, i + 1);
            prop_assert!(ap_from_relevance(&swapped).unwrap() <= ap_from_relevance(&relevance).unwrap());
        }
    }

    #[test]
    fn irrelevant_item_never_raises_ap(seed in any::<u64>()) {
        let mut rng = CounterRng::new(seed);
        let (query, mut gallery) = random_instance(&mut rng, 20, 8);
        let before = engine_ap(&query, &gallery);
        let dim = query.vector.len();
        gallery.push(record("zz-new", "intruder", Role::Gallery, common::gaussian_vector(&mut rng, dim)));
        prop_assert!(engine_ap(&query, &gallery) <= before);
    }

    #[test]
    fn ranking_ignores_gallery_input_order(seed in any::<u64>()) {
        let mut rng = CounterRng::new(seed);
        let (query, gallery) = random_instance(&mut rng, 20, 8);
        let mut shuffled = gallery.clone();
        rng.shuffle(&mut shuffled);
        let a = rank_gallery(&query, &refs(&gallery)).unwrap();
        let b = rank_gallery(&query, &refs(&shuffled)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn ranking_is_sorted_by_similarity_then_id(seed in any::<u64>()) {
        let mut rng = CounterRng::new(seed);
        let (query, gallery) = random_instance(&mut rng, 20, 8);
        let ranked = rank_gallery(&query, &refs(&gallery)).unwrap();
        for w in ranked.entries.windows(2) {
            prop_assert!(w[0].similarity > w[1].similarity || (w[0].similarity == w[1].similarity && w[0].id < w[1].id));
        }
    }

    #[test]
    fn map_ignores_result_order(aps in prop::collection::vec((0usize..4, 0.0f64..=1.0), 1..30), seed in any::<u64>()) {
        let results: Vec<ApResult> = aps
            .iter()
            .enumerate()
            .map(|(i, &(s, ap))| ApResult {
                query_id: format!("q{i:03}"),
                subject: format!("s{s}"),
                ap,
                relevant_count: 1,
                first_relevant_rank: 1,
            })
            .collect();
        let mut shuffled = results.clone();
        CounterRng::new(seed).shuffle(&mut shuffled);
        for agg in [MapAggregation::PerQuery, MapAggregation::PerSubjectMacro] {
            let a = mean_average_precision(&results, agg).unwrap();
            let b = mean_average_precision(&shuffled, agg).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn binary_and_jsonl_round_trip(records in arb_set()) {
        let set = EmbeddingSet::new("rt", records).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for (name, format) in [("rt.bin", Format::Binary), ("rt.jsonl", Format::Jsonl)] {
            let path = dir.path().join(name);
            write_set(&set, &path, format).unwrap();
            let back = load_set(&path, format).unwrap();
            prop_assert_eq!(back.records(), set.records());
        }
    }

    #[test]
    fn random_sample_ignores_candidate_order(n in 1usize..12, seed in any::<u64>()) {
        let ids: Vec<String> = (0..12).map(|i| format!("c{i:02}")).collect();
        let vectors: Vec<Vec<f32>> = (0..12).map(|i| vec![i as f32, 1.0]).collect();
        let mut cands: Vec<Candidate> = ids.iter().zip(&vectors).map(|(id, v)| Candidate { id, vector: v }).collect();
        let a = sample_random(&cands, n, seed).unwrap();
        CounterRng::new(seed ^ 1).shuffle(&mut cands);
        prop_assert_eq!(&a, &sample_random(&cands, n, seed).unwrap());
        // smaller draws with the same seed are subsets
        if n > 1 {
            let smaller = sample_random(&cands, n - 1, seed).unwrap();
            prop_assert!(smaller.iter().all(|id| a.contains(id)));
        }
    }

    #[test]
    fn kmeans_sample_ignores_candidate_order(n in 1usize..8, seed in any::<u64>()) {
        let mut rng = CounterRng::new(seed);
        let ids: Vec<String> = (0..10).map(|i| format!("c{i:02}")).collect();
        let vectors: Vec<Vec<f32>> = (0..10).map(|_| common::gaussian_vector(&mut rng, 3)).collect();
        let mut cands: Vec<Candidate> = ids.iter().zip(&vectors).map(|(id, v)| Candidate { id, vector: v }).collect();
        let a = sample_kmeans(&cands, n, seed).unwrap();
        rng.shuffle(&mut cands);
        prop_assert_eq!(a.len(), n);
        prop_assert_eq!(a, sample_kmeans(&cands, n, seed).unwrap());
    }

    #[test]
    fn kmeans_inertia_never_increases(seed in any::<u64>(), k in 1usize..5) {
        let mut rng = CounterRng::new(seed);
        let points: Vec<Vec<f64>> = (0..20).map(|_| (0..3).map(|_| rng.next_gaussian()).collect()).collect();
        let res = kmeans(&points, k, seed, KMeansOptions::default()).unwrap();
        for w in res.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
        }
        prop_assert_eq!(res.assignments.len(), points.len());
        prop_assert_eq!(&res, &kmeans(&points, k, seed, KMeansOptions::default()).unwrap());
    }

    #[test]
    fn subject_scores_do_not_interact(seed in any::<u64>()) {
        let mut rng = CounterRng::new(seed);
        let mut real = Vec::new();
        let mut generated = Vec::new();
        for s in 0..5 {
            for i in 0..3 {
                real.push(record(&format!("r{s}{i}"), &format!("s{s}"), Role::Reference, common::gaussian_vector(&mut rng, 4)));
            }
            generated.push(record(&format!("q{s}"), &format!("s{s}"), Role::Generated, common::gaussian_vector(&mut rng, 4)));
        }
        let joint = pairwise_similarity_score(&refs(&real), &refs(&generated), PairwiseMode::VsReference).unwrap();
        for score in &joint.per_subject {
            let real_s: Vec<&EmbeddingRecord> = real.iter().filter(|r| r.subject == score.subject).collect();
            let gen_s: Vec<&EmbeddingRecord> = generated.iter().filter(|r| r.subject == score.subject).collect();
            let alone = pairwise_similarity_score(&real_s, &gen_s, PairwiseMode::VsReference).unwrap();
            prop_assert_eq!(&alone.per_subject[0], score);
        }
    }
}

#[test]
fn cosine_is_scale_invariant_and_bounded() {
    let mut rng = CounterRng::new(7);
    for _ in 0..200 {
        let u = common::gaussian_vector(&mut rng, 6);
        let v = common::gaussian_vector(&mut rng, 6);
        let c = cosine(&u, &v).unwrap();
        assert!((-1.0..=1.0).contains(&c));
        let scaled: Vec<f32> = u.iter().map(|x| x * 4.0).collect();
        assert_abs_diff_eq!(cosine(&scaled, &v).unwrap(), c, epsilon = 1e-12);
        assert_abs_diff_eq!(cosine(&u, &u).unwrap(), 1.0, epsilon = 1e-12);
    }
}

#[test]
fn load_rejects_truncated_binary() {
    let dir = tempfile::tempdir().unwrap();
    let set = EmbeddingSet::new("t", vec![record("a", "x", Role::Gallery, vec![1.0, 2.0])]).unwrap();
    let path = dir.path().join("t.bin");
    write_set(&set, &path, Format::Binary).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
    assert!(load_set(Path::new(&path), Format::Binary).is_err());
}
