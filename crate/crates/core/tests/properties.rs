use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use pvfed_core::assignment::assign;
use pvfed_core::crypto::{
    ss_add, ss_recover, ss_share, threshold_combine, unseal, verify_combined, CommitmentBases, DecryptionKey,
    Sealer, SigningKey,
};
use pvfed_core::dp::{calibrate_sigma2, clip};
use pvfed_core::ids::{clients, ClientId};
use pvfed_core::inclusion::{blaming, include, BlameParams, InclusionLedger};
use pvfed_core::{AggregatorId, Field, FieldVec, FixedPointCodec};

fn codec() -> FixedPointCodec {
    FixedPointCodec::new(Field::default(), 24, 65536.0, 1024).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn codec_round_trip(x in prop::collection::vec(-65536.0f64..65536.0, 1..40)) {
        let c = codec();
        let back = c.decode(&c.encode(&x).unwrap());
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b).abs() <= c.resolution() / 2.0 + 1e-12);
        }
    }

    #[test]
    fn encoding_is_additive(xs in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 8), 1..20)) {
        let c = codec();
        let f = c.field();
        let mut acc = FieldVec::zeros(8);
        let mut plain = vec![0.0; 8];
        for x in &xs {
            f.vec_add_assign(&mut acc, &c.encode(x).unwrap()).unwrap();
            for (p, q) in plain.iter_mut().zip(c.quantize(x).unwrap()) {
                *p += q;
            }
        }
        let sum = c.decode_sum(&acc, xs.len() as u64).unwrap();
        for (a, b) in sum.iter().zip(&plain) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn out_of_range_values_are_refused(x in 65536.5f64..1e9) {
        prop_assert!(codec().encode(&[x]).is_err());
        prop_assert!(codec().encode(&[-x]).is_err());
    }

    #[test]
    fn any_threshold_subset_recovers_the_sum(seed in any::<u64>(), n in 1u32..8, extra in 0u32..8, dealers in 1usize..5) {
        let t = 1 + extra % n;
        let f = Field::default();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let bases = CommitmentBases::new("prop", 4);
        let mut total = FieldVec::zeros(4);
        let mut summed: Option<Vec<_>> = None;
        for d in 0..dealers {
            let s = f.random_vec(4, &mut rng);
            f.vec_add_assign(&mut total, &s).unwrap();
            let dealing = ss_share(f, &s, d as u32 + 1, 0, n, t, &mut rng).unwrap();
            let proof = dealing.partial_proof(&bases);
            for sh in &dealing.shares {
                prop_assert!(proof.verify_share(sh, &bases));
                let mut bad = sh.clone();
                bad.values[0] += curve25519_dalek::Scalar::ONE;
                prop_assert!(!proof.verify_share(&bad, &bases));
            }
            summed = Some(match summed {
                None => dealing.shares.clone(),
                Some(acc) => acc.iter().zip(&dealing.shares).map(|(a, b)| ss_add(a, b).unwrap()).collect(),
            });
        }
        let mut shares = summed.unwrap();
        // take a rotating subset of size t
        shares.rotate_left((seed % n as u64) as usize);
        prop_assert_eq!(ss_recover(f, &shares[..t as usize], t as usize).unwrap(), total);
        prop_assert!(ss_recover(f, &shares[..t as usize - 1], t as usize).is_err());
    }

    #[test]
    fn sealed_shares_open_only_for_their_recipient(seed in any::<[u8; 32]>(), payload in prop::collection::vec(any::<u8>(), 0..300)) {
        let mut rng = ChaCha20Rng::from_seed(seed);
        let me = DecryptionKey::from_seed([1; 32]);
        let other = DecryptionKey::from_seed([2; 32]);
        let env = Sealer::new(&mut rng).seal(&payload, 4, &me.public());
        prop_assert_eq!(unseal(&env, 4, &me).unwrap(), payload);
        prop_assert!(unseal(&env, 4, &other).is_err());
        prop_assert!(unseal(&env, 5, &me).is_err());
    }

    #[test]
    fn certificates_need_the_threshold(n in 1usize..8, t_raw in 0usize..8, signers in 0usize..8, digest in any::<[u8; 32]>()) {
        let t = 1 + t_raw % n;
        let keys: Vec<SigningKey> = (0..n).map(|i| SigningKey::from_seed([i as u8 + 1; 32])).collect();
        let pks: Vec<_> = keys.iter().map(|k| k.public()).collect();
        let m = signers % (n + 1);
        let sigs: Vec<_> = keys.iter().take(m).enumerate().map(|(i, k)| (i as u32 + 1, k.sign(&digest))).collect();
        match threshold_combine(digest, &sigs, &pks, t) {
            Ok(cert) => {
                prop_assert!(m >= t);
                prop_assert!(verify_combined(&cert, &pks, t));
                let mut forged = cert.clone();
                forged.digest[0] ^= 1;
                prop_assert!(!verify_combined(&forged, &pks, t));
            }
            Err(_) => prop_assert!(m < t),
        }
    }

    #[test]
    fn assignment_is_an_equal_partition(n_a in 1u32..9, k in 1u32..30, round in any::<u64>(), seed in any::<[u8; 32]>()) {
        let n_c = n_a * k;
        let a = assign(round, n_c, n_a, &seed).unwrap();
        prop_assert_eq!(a.clusters.len(), n_a as usize);
        let mut seen = BTreeSet::new();
        for cl in &a.clusters {
            prop_assert_eq!(cl.len(), k as usize);
            for c in cl {
                prop_assert!(seen.insert(*c));
            }
        }
        prop_assert_eq!(seen.len(), n_c as usize);
        if n_a > 1 {
            prop_assert!(assign(round, n_c + 1, n_a, &seed).is_err());
        }
    }

    #[test]
    fn inclusion_picks_least_included(counts in prop::collection::vec(0u64..6, 4..40), rho_raw in 1usize..40, round in any::<u64>()) {
        let n = counts.len();
        let rho = 1 + rho_raw % n;
        let cands: Vec<ClientId> = clients(n as u32).collect();
        let chosen = include(&|c: ClientId| counts[c.index()], &cands, rho, &[0; 32], round).unwrap();
        prop_assert_eq!(chosen.len(), rho);
        prop_assert!(chosen.windows(2).all(|w| w[0] < w[1]));
        let worst_in = chosen.iter().map(|c| counts[c.index()]).max().unwrap();
        for c in &cands {
            if !chosen.contains(c) {
                prop_assert!(counts[c.index()] >= worst_in);
            }
        }
        prop_assert!(include(&|c: ClientId| counts[c.index()], &cands, n + 1, &[0; 32], round).is_err());
    }

    #[test]
    fn full_participation_stays_balanced(n in 2u32..40, rho_raw in 1usize..40, rounds in 1u64..60) {
        let rho = 1 + rho_raw % n as usize;
        let a = AggregatorId(1);
        let mut ledger = InclusionLedger::new(1, n);
        let cands: Vec<ClientId> = clients(n).collect();
        for r in 0..rounds {
            let chosen = include(&|c| ledger.count(a, c), &cands, rho, &[9; 32], r).unwrap();
            ledger.record(a, &chosen);
        }
        let counts = ledger.of(a);
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
        let tight = BlameParams { expected_var: 0.25, sec_param: 0.0, delta_max: 1 };
        prop_assert!(!blaming(counts, n as usize, &tight));
    }

    #[test]
    fn clipping_bounds_the_norm(g in prop::collection::vec(-1e3f64..1e3, 1..50), c in 0.01f64..100.0) {
        let out = clip(&g, c);
        let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(norm <= c * (1.0 + 1e-12));
        let before = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if before <= c {
            prop_assert_eq!(out, g);
        }
    }

    #[test]
    fn more_budget_means_less_noise(t in 1u64..1000, c in 0.1f64..10.0, alpha in 1.5f64..64.0, eps in 0.1f64..10.0) {
        let a = calibrate_sigma2(t, c, alpha, eps).unwrap();
        let b = calibrate_sigma2(t, c, alpha, eps * 2.0).unwrap();
        prop_assert!(b < a);
        prop_assert!(calibrate_sigma2(t + 1, c, alpha, eps).unwrap() > a);
    }
}
