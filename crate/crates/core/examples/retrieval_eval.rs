//! Rank, evaluate over several runs and compare two methods.

use ganlink::data::GroundTruth;
use ganlink::retrieval::{evaluate, format_table, one_sided_t_test, rank_targets, EmbeddingMatrix, EmbeddingSource};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two clusters of four segments; `noise` blurs them together.
fn run(seed: u64, noise: f64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut ids = Vec::new();
    for i in 0..8 {
        let centre = if i < 4 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        rows.extend(centre.iter().map(|c| c + noise * rng.random_range(-1.0..1.0)));
        ids.push(format!("seg{i}"));
    }
    EmbeddingMatrix::new(ids, 3, rows, EmbeddingSource::TextOnly).unwrap()
}

fn main() {
    let mut gt = GroundTruth::default();
    for a in 0..8 {
        for b in 0..8 {
            if a != b && (a < 4) == (b < 4) {
                gt.add(&format!("seg{a}"), &format!("seg{b}"));
            }
        }
    }
    let sharp: Vec<_> = (0..5).map(|s| run(s, 0.3)).collect();
    let blurry: Vec<_> = (0..5).map(|s| run(100 + s, 1.5)).collect();
    for (id, d) in rank_targets("seg0", &sharp[0], 3).unwrap() {
        println!("{id}\t{d:.4}");
    }
    let a = evaluate(&sharp, &gt, 3).unwrap();
    let b = evaluate(&blurry, &gt, 3).unwrap();
    print!("{}", format_table(&[("sharp", &a), ("blurry", &b)]));
    let t = one_sided_t_test(&a.run_means, &b.run_means).unwrap();
    println!("sharp > blurry: t = {:.3}, p = {:.4}", t.t, t.p);
}
