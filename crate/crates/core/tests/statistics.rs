//! Distributional checks with fixed seeds, at a 0.1% significance level.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use pvfed_core::assignment::{assign, Shuffle};
use pvfed_core::ids::{clients, AggregatorId};
use pvfed_core::{Field, PublicMatrix};

fn chi_square_p(observed: &[u64], expected: f64) -> f64 {
    let stat: f64 = observed.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    1.0 - ChiSquared::new((observed.len() - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn random_field_elements_are_uniform() {
    let f = Field::default();
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let buckets = 64u64;
    let mut counts = vec![0u64; buckets as usize];
    let n = 64_000;
    for x in f.random_vec(n, &mut rng).0 {
        assert!(x < f.modulus());
        counts[((x as u128 * buckets as u128) / f.modulus() as u128) as usize] += 1;
    }
    let p = chi_square_p(&counts, n as f64 / buckets as f64);
    assert!(p > 1e-3, "p = {p}");
}

#[test]
fn public_matrix_entries_are_uniform() {
    let f = Field::default();
    let a = PublicMatrix::expand([5; 32], 200, 100, f).unwrap();
    let mut counts = vec![0u64; 32];
    for r in 0..200 {
        for c in 0..100 {
            counts[((a.entry(r, c) as u128 * 32) / f.modulus() as u128) as usize] += 1;
        }
    }
    assert!(chi_square_p(&counts, 20_000.0 / 32.0) > 1e-3);
}

#[test]
fn shuffle_is_a_permutation_with_inverse() {
    for n in [1u64, 2, 7, 256, 257, 1000] {
        let s = Shuffle::new([n as u8; 32], n);
        let mut seen = vec![false; n as usize];
        for i in 0..n {
            let j = s.forward(i);
            assert!(!seen[j as usize]);
            seen[j as usize] = true;
            assert_eq!(s.inverse(j), i);
        }
    }
}

#[test]
fn assignment_frequencies_are_uniform() {
    let (n_c, n_a, rounds) = (60u32, 4u32, 2000u64);
    let seed = [3u8; 32];
    let mut counts = vec![vec![0u64; n_a as usize]; n_c as usize];
    for r in 0..rounds {
        let a = assign(r, n_c, n_a, &seed).unwrap();
        for c in clients(n_c) {
            counts[c.index()][a.coordinator_of(c).unwrap().index()] += 1;
        }
    }
    let flat: Vec<u64> = counts.iter().flatten().copied().collect();
    let p = chi_square_p(&flat, rounds as f64 / n_a as f64);
    assert!(p > 1e-3, "p = {p}");
    // one client's position across rounds is uniform over the n_c slots
    let mut slot = vec![0u64; n_c as usize];
    for r in 0..6000 {
        let s = Shuffle::new(pvfed_core::assignment::round_key(&seed, r), n_c as u64);
        slot[s.forward(0) as usize] += 1;
    }
    assert!(chi_square_p(&slot, 100.0) > 1e-3);
    let a = assign(0, n_c, n_a, &seed).unwrap();
    assert_eq!(a.cluster(AggregatorId(1)).len(), 15);
}
