#![allow(dead_code)]

use galleryrank::embstore::{EmbeddingRecord, Role};
use galleryrank::rng::CounterRng;

pub fn record(id: &str, subject: &str, role: Role, vector: Vec<f32>) -> EmbeddingRecord {
    EmbeddingRecord {
        id: id.to_string(),
        subject: subject.to_string(),
        role,
        encoder: "enc".to_string(),
        variant: "orig".to_string(),
        method: if role == Role::Generated { "m".to_string() } else { String::new() },
        vector,
    }
}

/// Small integer components, so exact similarity ties show up often.
pub fn coarse_vector(rng: &mut CounterRng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.below(5) as f32 - 2.0).collect();
        if v.iter().any(|&x| x != 0.0) {
            return v;
        }
    }
}

pub fn gaussian_vector(rng: &mut CounterRng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.next_gaussian() as f32).collect()
}

/// A query and a gallery (at most `max_gallery` items over up to four
/// subjects) holding at least one item of the query's subject.
pub fn random_instance(rng: &mut CounterRng, max_gallery: usize, max_dim: usize) -> (EmbeddingRecord, Vec<EmbeddingRecord>) {
    let dim = 1 + rng.below(max_dim as u64) as usize;
    let size = 1 + rng.below(max_gallery as u64) as usize;
    let coarse = rng.below(2) == 0;
    let draw = |rng: &mut CounterRng| if coarse { coarse_vector(rng, dim) } else { gaussian_vector(rng, dim) };
    let query = record("q", "s0", Role::Generated, draw(rng));
    let mut gallery: Vec<EmbeddingRecord> = (0..size)
        .map(|i| {
            let subject = format!("s{}", rng.below(4));
            record(&format!("g{i:02}"), &subject, Role::Gallery, draw(rng))
        })
        .collect();
    if !gallery.iter().any(|g| g.subject == "s0") {
        let k = rng.below(size as u64) as usize;
        gallery[k].subject = "s0".to_string();
    }
    // an occasional exact duplicate forces a tie broken by id
    if size > 1 && rng.below(3) == 0 {
        let (a, b) = (rng.below(size as u64) as usize, rng.below(size as u64) as usize);
        gallery[b].vector = gallery[a].vector.clone();
    }
    (query, gallery)
}

/// A random orthogonal matrix by Gram-Schmidt on gaussian columns.
pub fn random_orthogonal(rng: &mut CounterRng, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.next_gaussian()).collect();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

pub fn rotate(matrix: &[Vec<f64>], v: &[f32]) -> Vec<f32> {
    matrix
        .iter()
        .map(|row| row.iter().zip(v).map(|(m, &x)| m * f64::from(x)).sum::<f64>() as f32)
        .collect()
}

pub fn refs(records: &[EmbeddingRecord]) -> Vec<&EmbeddingRecord> {
    records.iter().collect()
}
