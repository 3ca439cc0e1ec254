use super::*;
use crate::lexicon::{Alphabet, Lexicon, WordEntry};

fn doculect(id: &str, fam: &str, area: Macroarea, words: &[(usize, &[Phone])]) -> Doculect {
    Doculect {
        doculect_id: id.into(),
        iso_code: None,
        family: fam.into(),
        macroarea: area,
        latitude: 0.0,
        longitude: 0.0,
        status_flags: Default::default(),
        entries: words
            .iter()
            .map(|&(c, p)| WordEntry {
                concept_id: c,
                phones: p.to_vec(),
                loan: false,
            })
            .collect(),
    }
}

/// Three symbols plus eos (id 3); concept 0 words start with `a`, concept 1
/// words with `b`.
fn toy_lexicon() -> Lexicon {
    let mut ds = Vec::new();
    for i in 0..12 {
        let fam = format!("F{}", i % 3);
        let area = Macroarea::ALL[i % 4];
        let tail: Phone = (i % 3) as Phone;
        ds.push(doculect(
            &format!("d{i}"),
            &fam,
            area,
            &[(0, &[0, tail, 3]), (1, &[1, tail, 2, 3])],
        ));
    }
    Lexicon {
        alphabet: Alphabet::new(["a", "b", "c"]).unwrap(),
        concepts: vec!["x".into(), "y".into()],
        doculects: ds,
    }
}

fn toy_split(lex: &Lexicon) -> Split {
    let ids = |r: std::ops::Range<usize>| r.map(|i| format!("d{i}")).collect::<Vec<_>>();
    let fold = Fold {
        index: 0,
        train_groups: vec!["g".into()],
        validation_group: "v".into(),
        test_group: "t".into(),
        train: ids(0..8),
        validation: ids(8..10),
        test: ids(10..12),
    };
    Split::from_fold(lex, &fold).unwrap()
}

fn small_config(conditional: bool) -> ModelConfig {
    ModelConfig {
        embedding_dim: 4,
        hidden_dim: 32,
        layers: 1,
        dropout: 0.0,
        conditional,
        batch_size: 4,
        max_epochs: 15,
        patience: 3,
        learning_rate: 1e-2,
        weight_decay: 0.01,
        grad_clip: 5.0,
    }
}

#[test]
fn config_ranges_are_enforced() {
    assert!(ModelConfig::default().validate().is_ok());
    for bad in [
        ModelConfig { embedding_dim: 3, ..Default::default() },
        ModelConfig { hidden_dim: 1025, ..Default::default() },
        ModelConfig { layers: 5, ..Default::default() },
        ModelConfig { dropout: 0.6, ..Default::default() },
        ModelConfig { patience: 0, ..Default::default() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}

#[test]
fn uniform_model_scores_log2_vocab_per_phone() {
    let cfg = ModelConfig::default();
    let mut params = LstmParams::init(cfg.shape(42, 1), &mut derived(0, "t")).unwrap();
    params.zero_output_layer();
    let model = TrainedModel {
        params,
        config: cfg,
        fold_id: 0,
        seed: 0,
        validation_xent: 0.0,
        training_curve: vec![],
        alphabet_hash: String::new(),
    };
    let (lp, n) = model.word_logprob(&[3, 9, 17, 41], None).unwrap();
    assert_eq!(n, 4);
    assert!((lp + 4.0 * 42f64.log2()).abs() < 1e-12);
    assert!(model.word_logprob(&[3, 41], Some(0)).is_err());
}

#[test]
fn split_weights_are_inverse_family_sizes() {
    let lex = toy_lexicon();
    let split = toy_split(&lex);
    // d0..d7: families F0 {0,3,6}, F1 {1,4,7}, F2 {2,5}.
    let w = |d: &str| split.train.iter().find(|e| e.origin.doculect_id == d).unwrap().weight;
    assert_eq!(w("d0"), 1.0 / 3.0);
    assert_eq!(w("d2"), 0.5);
    assert_eq!(split.train.len(), 16);
}

#[test]
fn shuffle_keeps_histogram_and_is_reproducible() {
    let lex = toy_lexicon();
    let split = toy_split(&lex);
    let hist = |xs: &[Example]| {
        let mut h = [0usize; 2];
        xs.iter().for_each(|e| h[e.concept_id] += 1);
        h
    };
    let mut a = split.train.clone();
    let mut b = split.train.clone();
    shuffle_concept_ids(&mut a, 5);
    shuffle_concept_ids(&mut b, 5);
    assert_eq!(a, b);
    assert_eq!(hist(&a), hist(&split.train));
}

#[test]
fn replicating_a_family_leaves_the_loss_unchanged() {
    let lex = toy_lexicon();
    let cfg = small_config(true);
    let params = LstmParams::init(cfg.shape(4, 2), &mut derived(1, "t")).unwrap();
    let base = examples(lex.doculects.iter());
    let mut grown = lex.doculects.clone();
    for k in 0..3 {
        for d in lex.doculects.iter().filter(|d| d.family == "F1") {
            let mut c = d.clone();
            c.doculect_id = format!("{}-copy{k}", d.doculect_id);
            grown.push(c);
        }
    }
    let replicated = examples(grown.iter());
    let a = weighted_loss(&params, &base).unwrap();
    let b = weighted_loss(&params, &replicated).unwrap();
    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
}

#[test]
fn equal_weights_reduce_to_the_plain_mean() {
    let lex = toy_lexicon();
    let singletons: Vec<Doculect> = lex
        .doculects
        .iter()
        .enumerate()
        .map(|(i, d)| Doculect {
            family: format!("solo{i}"),
            ..d.clone()
        })
        .collect();
    let ex = examples(singletons.iter());
    assert!(ex.iter().all(|e| e.weight == 1.0));
    let cfg = small_config(false);
    let params = LstmParams::init(cfg.shape(4, 2), &mut derived(2, "t")).unwrap();
    let plain: f64 = ex
        .iter()
        .map(|e| -word_forward(&params, &e.phones, None, None).unwrap().total_log_prob() / LN2)
        .sum::<f64>()
        / ex.len() as f64;
    assert!((weighted_loss(&params, &ex).unwrap() - plain).abs() < 1e-12);
}

#[test]
fn training_returns_best_checkpoint_and_reloads() {
    let lex = toy_lexicon();
    let split = toy_split(&lex);
    let model = train(&split, &small_config(true), 3).unwrap();
    let best = model
        .training_curve
        .iter()
        .map(|e| e.validation_xent)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(model.validation_xent, best);
    assert!((model.evaluate(&split.validation).unwrap() - best).abs() < 1e-12);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    model.save(&path).unwrap();
    let back = TrainedModel::load(&path).unwrap();
    assert!((back.evaluate(&split.validation).unwrap() - model.validation_xent).abs() < 1e-9);
    assert_eq!(back.params, model.params);

    let again = train(&split, &small_config(true), 3).unwrap();
    assert_eq!(again.validation_xent, model.validation_xent);

    for ex in &split.test {
        let (lp, _) = model.word_logprob(&ex.phones, Some(ex.concept_id)).unwrap();
        assert!(lp.is_finite() && lp <= 0.0);
    }
}

#[test]
fn conditional_model_learns_the_first_phone() {
    let lex = toy_lexicon();
    let split = toy_split(&lex);
    let mut cfg = small_config(false);
    cfg.max_epochs = 40;
    cfg.patience = 40;
    let ens = train_seed_ensemble(&split, &cfg, &[0], ConceptLabels::True).unwrap();
    assert_eq!(ens.pairs.len(), 1);
    let p = &ens.pairs[0];
    assert!(!p.uncond.conditional() && p.cond.conditional());
    // The first phone carries one bit of the concept over 3-4 predictions.
    assert!(p.uncond.validation_xent - p.cond.validation_xent > 0.1);
}

#[test]
fn select_best_prefers_low_xent_then_low_seed() {
    let lex = toy_lexicon();
    let split = toy_split(&lex);
    let mut cfg = small_config(false);
    cfg.max_epochs = 1;
    let m = train(&split, &cfg, 0).unwrap();
    let mut a = m.clone();
    a.seed = 4;
    let mut b = m.clone();
    b.seed = 2;
    let mut c = m.clone();
    c.seed = 9;
    c.validation_xent += 1.0;
    assert_eq!(select_best(&[a, b, c]).unwrap().seed, 2);
    assert!(select_best(&[]).is_none());
}
