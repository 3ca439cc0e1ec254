use super::oracle::enumerate;
use super::*;
use crate::rng::seeded;
use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

fn random_chain(n: usize, eos: f64, rng: &mut Rng) -> MarkovChain {
    let mut norm = |len: usize, scale: f64| -> Vec<f64> {
        let v: Vec<f64> = (0..len).map(|_| rng.random::<f64>() + 0.05).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| scale * x / s).collect()
    };
    let mut start = norm(n, 1.0);
    start.push(0.0);
    let rows = (0..n)
        .map(|_| {
            let mut r = norm(n, 1.0 - eos);
            r.push(eos);
            r
        })
        .collect();
    MarkovChain { start, rows }
}

/// Literal enumeration of every string, written independently of the
/// prefix-tree walk.
fn literal(chains: &[MarkovChain], max_len: usize) -> (f64, f64, f64) {
    let n = chains[0].n_symbols();
    let k = chains.len() as f64;
    let (mut hw, mut hwv, mut mi) = (0.0, 0.0, 0.0);
    for symbols in 1..max_len {
        let total = n.pow(symbols as u32);
        for code in 0..total {
            let mut word = Vec::with_capacity(symbols + 1);
            let mut rest = code;
            for _ in 0..symbols {
                word.push(rest % n);
                rest /= n;
            }
            word.push(n);
            let probs: Vec<f64> = chains
                .iter()
                .map(|c| {
                    let mut p = c.start[word[0]];
                    for w in word.windows(2) {
                        p *= c.rows[w[0]][w[1]];
                    }
                    p
                })
                .collect();
            let pm = probs.iter().sum::<f64>() / k;
            if pm == 0.0 {
                continue;
            }
            let l = word.len() as f64;
            hw += -pm * pm.log2() / l;
            for &pc in &probs {
                if pc > 0.0 {
                    hwv += -pc * pc.log2() / l / k;
                    mi += pc * (pc / pm).log2() / l / k;
                }
            }
        }
    }
    (hw, hwv, mi)
}

/// Start-tilt families only: MI = (1/K) Σ_c Σ_x start_c[x] log₂(start_c[x]/p̄[x]) E[1/L | x],
/// with the length distribution obtained by forward propagation.
fn start_tilt_closed_form(chains: &[MarkovChain], horizon: usize) -> f64 {
    let n = chains[0].n_symbols();
    let k = chains.len() as f64;
    let rows = &chains[0].rows;
    let inv_len: Vec<f64> = (0..n)
        .map(|x| {
            let mut v = vec![0.0; n];
            v[x] = 1.0;
            let mut acc = 0.0;
            for t in 2..=horizon {
                let stop: f64 = v.iter().zip(rows).map(|(vi, r)| vi * r[n]).sum();
                acc += stop / t as f64;
                let mut next = vec![0.0; n];
                for (i, vi) in v.iter().enumerate() {
                    for j in 0..n {
                        next[j] += vi * rows[i][j];
                    }
                }
                v = next;
            }
            acc
        })
        .collect();
    let mut mi = 0.0;
    for x in 0..n {
        let pbar = chains.iter().map(|c| c.start[x]).sum::<f64>() / k;
        for c in chains {
            if c.start[x] > 0.0 {
                mi += c.start[x] * (c.start[x] / pbar).log2() * inv_len[x] / k;
            }
        }
    }
    mi
}

#[test]
fn identical_chains_carry_no_information() {
    let spec = SyntheticSpec {
        strength: 0.0,
        ..Default::default()
    };
    let chains = spec.chains().unwrap();
    assert!(chains.windows(2).all(|w| w[0] == w[1]));
    let r = true_mi_bruteforce(&chains, 120).unwrap();
    assert_eq!(r.mi, 0.0);
    assert_eq!(r.mi_per_word, 0.0);
    assert!(r.mi_per_concept.iter().all(|&m| m == 0.0));
}

#[test]
fn disjoint_single_symbol_words_carry_one_bit() {
    let chain = |first: usize| MarkovChain {
        start: if first == 0 { vec![1.0, 0.0, 0.0] } else { vec![0.0, 1.0, 0.0] },
        rows: vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]],
    };
    let r = true_mi_bruteforce(&[chain(0), chain(1)], 4).unwrap();
    assert_eq!(r.mi_per_word, 1.0);
    assert_eq!(r.mi, 0.5);
    assert_eq!(r.h_w, 0.5);
    assert_eq!(r.h_w_given_v, 0.0);
    assert_eq!(r.expected_length, 2.0);
}

#[test]
fn prefix_walk_matches_literal_enumeration() {
    let mut rng = seeded(17);
    let distinct: Vec<MarkovChain> = (0..3).map(|_| random_chain(3, 0.35, &mut rng)).collect();
    let mut shared = distinct.clone();
    for c in &mut shared[1..] {
        c.rows[1] = distinct[0].rows[1].clone();
        c.rows[2] = distinct[0].rows[2].clone();
    }
    let mut start_only = distinct.clone();
    for c in &mut start_only[1..] {
        c.rows = distinct[0].rows.clone();
    }
    for chains in [&distinct, &shared, &start_only] {
        let walk = enumerate(chains, 9).unwrap();
        let (hw, hwv, mi) = literal(chains, 9);
        assert!((walk.h_w - hw).abs() < 1e-12, "{} vs {hw}", walk.h_w);
        assert!((walk.h_w_given_v - hwv).abs() < 1e-12);
        assert!((walk.mi - mi).abs() < 1e-12);
        assert!((walk.h_w - walk.h_w_given_v - walk.mi).abs() < 1e-12);
        assert!(walk.truncated_mass > 0.0);
    }
}

#[test]
fn full_alphabet_family_matches_forward_propagation() {
    for strength in [0.05, 0.5, 0.9] {
        let spec = SyntheticSpec {
            strength,
            ..Default::default()
        };
        let chains = spec.chains().unwrap();
        assert_eq!(chains[0].n_symbols() + 1, 42);
        let r = true_mi_bruteforce(&chains, 150).unwrap();
        let closed = start_tilt_closed_form(&chains, 400);
        assert!((r.mi - closed).abs() < 1e-9, "{} vs {closed}", r.mi);
        assert!((r.h_w - r.h_w_given_v - r.mi).abs() < 1e-9);
    }
}

#[test]
fn default_spec_plants_signal_in_the_documented_range() {
    let spec = SyntheticSpec::default();
    let r = true_mi_bruteforce(&spec.chains().unwrap(), 150).unwrap();
    assert!((0.05..=0.15).contains(&r.mi), "oracle MI {}", r.mi);
    for (c, &m) in r.mi_per_concept.iter().enumerate() {
        if c < spec.planted {
            assert!(m > 0.1);
        } else {
            assert!(m.abs() < 1e-12, "concept {c}: {m}");
        }
    }
}

#[test]
fn truncation_is_detected() {
    let chains = SyntheticSpec::default().chains().unwrap();
    assert!(matches!(true_mi_bruteforce(&chains, 10), Err(Error::Config(_))));
}

#[test]
fn non_terminating_chain_is_rejected() {
    let chain = MarkovChain {
        start: vec![1.0, 0.0],
        rows: vec![vec![1.0, 0.0]],
    };
    assert!(chain.validate().is_ok());
    assert!(chain.expected_length().is_err());
}

#[test]
fn generation_is_reproducible_and_laid_out() {
    let spec = SyntheticSpec::default();
    let a = generate(&spec, 3).unwrap();
    assert_eq!(a, generate(&spec, 3).unwrap());
    assert_ne!(a, generate(&spec, 4).unwrap());
    assert_eq!(a.doculects.len(), 400);
    assert_eq!(a.alphabet.vocab_size(), 42);
    let families: BTreeSet<_> = a.doculects.iter().map(|d| &d.family).collect();
    assert_eq!(families.len(), 40);
    for m in Macroarea::ALL {
        assert_eq!(a.doculects.iter().filter(|d| d.macroarea == m).count(), 100);
    }
    assert!(a.doculects.iter().all(|d| d.entries.len() == 20));
}

#[test]
fn zero_strength_concepts_share_one_distribution() {
    let spec = SyntheticSpec {
        strength: 0.0,
        ..Default::default()
    };
    let chains = spec.chains().unwrap();
    assert!(chains.iter().all(|c| *c == chains[0]));
}

#[test]
fn symbol_frequencies_match_the_chain() {
    let spec = SyntheticSpec {
        families: 50,
        languages_per_family: 100,
        ..Default::default()
    };
    let chains = spec.chains().unwrap();
    let lex = generate_from_chains(&spec, &chains, 11).unwrap();
    assert_eq!(lex.word_count(), 100_000);
    let n = spec.alphabet_size;
    let mut counts = vec![0.0; n + 1];
    for d in &lex.doculects {
        for e in &d.entries {
            for &p in &e.phones {
                counts[p as usize] += 1.0;
            }
        }
    }
    let mut expected = vec![0.0; n + 1];
    for c in &chains {
        for (e, v) in expected.iter_mut().zip(c.expected_visits().unwrap()) {
            *e += v / chains.len() as f64;
        }
        expected[n] += 1.0 / chains.len() as f64;
    }
    let total_e: f64 = expected.iter().sum();
    let total_c: f64 = counts.iter().sum();
    for (c, e) in counts.iter().zip(&expected) {
        assert!((c / total_c - e / total_e).abs() < 0.01);
    }
}

#[test]
fn targets_are_distinct() {
    let t = SyntheticSpec::default().targets().unwrap();
    assert_eq!(t.len(), 5);
    assert_eq!(t.iter().collect::<BTreeSet<_>>().len(), 5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn oracle_mi_is_nonnegative_and_zero_only_for_identical_chains(
        seed in 0u64..10_000, n in 2usize..4, k in 2usize..4
    ) {
        let mut rng = seeded(seed);
        let chains: Vec<MarkovChain> = (0..k).map(|_| random_chain(n, 0.5, &mut rng)).collect();
        let r = enumerate(&chains, 7).unwrap();
        prop_assert!(r.mi > 0.0);
        prop_assert!(r.mi_per_concept.iter().all(|&m| m >= -1e-15));
        let same = vec![chains[0].clone(); k];
        prop_assert_eq!(enumerate(&same, 7).unwrap().mi, 0.0);
    }
}
