#![allow(dead_code)]

use dyntmf::matrices::{Manifests, MatrixBundle, SparseMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:03}")).collect()
}

/// Random bundle: adjacency rows L1-normalised, content values in (0, 3),
/// roughly `density` of cells filled, and about one row in five inactive.
pub fn random_bundle(t: usize, m: usize, n: usize, d: usize, density: f64, seed: u64) -> MatrixBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adjacency = Vec::new();
    let mut content = Vec::new();
    for _ in 0..t {
        let mut a_entries = Vec::new();
        let mut c_entries = Vec::new();
        let mut c_active = vec![false; m];
        for i in 0..m {
            if rng.random_bool(0.2) {
                continue;
            }
            let mut row: Vec<(u32, f64)> = Vec::new();
            for j in 0..n {
                if rng.random_bool(density) {
                    row.push((j as u32, rng.random_range(0.1..1.0)));
                }
            }
            if row.is_empty() {
                row.push((rng.random_range(0..n) as u32, 1.0));
            }
            let s: f64 = row.iter().map(|x| x.1).sum();
            a_entries.extend(row.into_iter().map(|(j, v)| (i as u32, j, v / s)));
            c_active[i] = true;
            for z in 0..d {
                if rng.random_bool(density) {
                    c_entries.push((i as u32, z as u32, rng.random_range(0.05..3.0)));
                }
            }
        }
        adjacency.push(SparseMatrix::from_triplets(m, n, a_entries).unwrap());
        content.push(SparseMatrix::with_activity(m, d, c_entries, c_active).unwrap());
    }
    MatrixBundle::new(
        adjacency,
        content,
        Manifests {
            roster: names("u", m),
            context_roster: names("c", n),
            vocab: names("w", d),
        },
    )
    .unwrap()
}
