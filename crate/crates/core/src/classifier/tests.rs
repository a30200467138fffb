// SPDX-License-Identifier: Apache-2.0

use super::*;
use crate::textproc::{build_vocab, encode_sequence, PAD_ID};
use proptest::prelude::*;

fn vocab() -> Vocabulary {
    build_vocab(
        &["crash error panic feature add support question how why the a"],
        1,
        100,
    )
    .unwrap()
}

fn tiny_encoder(dim: usize, heads: usize, max_seq_len: usize) -> Architecture {
    Architecture::Transformer(EncoderConfig {
        layers: 1,
        hidden_dim: dim,
        heads,
        ff_dim: 2 * dim,
        dropout: 0.0,
        max_seq_len,
    })
}

fn tiny_linear() -> Architecture {
    Architecture::Linear(LinearConfig {
        dim: 8,
        buckets: 64,
        min_n: 2,
        max_n: 3,
    })
}

fn roster(k: usize) -> TaskConfig {
    TaskConfig::assignment((0..k).map(|i| format!("dev{i}")).collect())
}

#[test]
fn init_is_deterministic() {
    let a = init_model(TaskConfig::labelling(), tiny_encoder(8, 2, 16), vocab(), 9).unwrap();
    let b = init_model(TaskConfig::labelling(), tiny_encoder(8, 2, 16), vocab(), 9).unwrap();
    let c = init_model(TaskConfig::labelling(), tiny_encoder(8, 2, 16), vocab(), 10).unwrap();
    assert_eq!(a.params().data(), b.params().data());
    assert_ne!(a.params().data(), c.params().data());
}

#[test]
fn heads_must_divide_hidden_dim() {
    let arch = Architecture::Transformer(EncoderConfig {
        hidden_dim: 65,
        heads: 4,
        ..EncoderConfig::default()
    });
    assert!(matches!(
        init_model(TaskConfig::labelling(), arch, vocab(), 0),
        Err(ModelError::Config(_))
    ));
}

#[test]
fn task_config_validation() {
    assert!(TaskConfig::assignment(vec!["solo".into()]).validate().is_err());
    assert!(TaskConfig::assignment(vec!["a".into(), "a".into()]).validate().is_err());
    let mut t = TaskConfig::labelling();
    t.label_names.pop();
    assert!(t.validate().is_err());
}

fn set_tensor(model: &mut ModelBundle, name: &str, values: &[f64]) {
    let spec = model.params().specs().iter().find(|s| s.name == name).unwrap().clone();
    model.weights_mut()[spec.offset..spec.offset + spec.len()].copy_from_slice(values);
}

#[test]
fn empty_input_gives_head_bias() {
    let bias = [0.5, -1.0, 2.0];
    let mut t = init_model(TaskConfig::labelling(), tiny_encoder(8, 2, 8), vocab(), 1).unwrap();
    set_tensor(&mut t, "head_b", &bias);
    let all_pad = ModelInput::Tokens(encode_sequence("", t.vocabulary(), 8));
    let mut l = init_model(TaskConfig::labelling(), tiny_linear(), vocab(), 1).unwrap();
    set_tensor(&mut l, "head_b", &bias);
    let no_features = ModelInput::Features(vec![]);
    for (m, x) in [(&t, &all_pad), (&l, &no_features)] {
        let p = forward(m, x).unwrap();
        let want: Vec<f64> = bias.iter().map(|&z| ops::sigmoid(z)).collect();
        assert_eq!(p.probs, want);
    }

    let mut m = init_model(roster(4), tiny_linear(), vocab(), 1).unwrap();
    set_tensor(&mut m, "head_b", &[0.0, 1.0, 2.0, 3.0]);
    let p = forward(&m, &no_features).unwrap();
    assert_eq!(p.probs, ops::softmax(&[0.0, 1.0, 2.0, 3.0]));
}

#[test]
fn equal_logits_are_uniform() {
    // zero head weights and bias: every logit is 0
    let mut m = init_model(roster(5), tiny_encoder(8, 2, 8), vocab(), 3).unwrap();
    let n = m.params().tensor("head_w").unwrap().len();
    set_tensor(&mut m, "head_w", &vec![0.0; n]);
    let p = forward(&m, &m.encode_issue("app crash", "panic")).unwrap();
    assert!(p.probs.iter().all(|&x| (x - 0.2).abs() < 1e-15));

    let mut m = init_model(TaskConfig::labelling(), tiny_linear(), vocab(), 3).unwrap();
    let n = m.params().tensor("head_w").unwrap().len();
    set_tensor(&mut m, "head_w", &vec![0.0; n]);
    let p = forward(&m, &m.encode_issue("how", "why")).unwrap();
    assert_eq!(p.probs, vec![0.5, 0.5, 0.5]);
}

#[test]
fn loss_examples() {
    let ml = |p: Vec<f64>, y: Vec<bool>| {
        compute_loss(&Prediction { probs: p }, &Target::MultiHot(y), TaskKind::Multilabel).unwrap()
    };
    let mc = |p: Vec<f64>, c: usize| compute_loss(&Prediction { probs: p }, &Target::Class(c), TaskKind::Multiclass);
    assert!((ml(vec![0.5; 3], vec![true, false, false]) - std::f64::consts::LN_2).abs() < 1e-15);
    assert!(mc(vec![0.0, 1.0, 0.0], 1).unwrap().abs() < 1e-15);
    assert!((mc(vec![0.25; 4], 2).unwrap() - 4f64.ln()).abs() < 1e-15);
    // clamped log(0)
    assert!((mc(vec![1.0, 0.0], 1).unwrap() - (-(1e-12f64).ln())).abs() < 1e-9);
    assert!(matches!(
        mc(vec![0.5, 0.5], 2),
        Err(ModelError::ClassOutOfRange { index: 2, classes: 2 })
    ));
}

#[test]
fn input_kind_mismatch_is_rejected() {
    let t = init_model(TaskConfig::labelling(), tiny_encoder(8, 2, 8), vocab(), 0).unwrap();
    let l = init_model(TaskConfig::labelling(), tiny_linear(), vocab(), 0).unwrap();
    assert!(matches!(
        forward(&t, &ModelInput::Features(vec![1])),
        Err(ModelError::InputMismatch(_))
    ));
    assert!(matches!(
        forward(&l, &t.encode_text("a")),
        Err(ModelError::InputMismatch(_))
    ));
    // wrong length / out-of-vocabulary id
    let seq = encode_sequence("crash", t.vocabulary(), 4);
    assert!(forward(&t, &ModelInput::Tokens(seq)).is_err());
    let mut seq = encode_sequence("crash", t.vocabulary(), 8);
    seq.ids[0] = 10_000;
    assert!(forward(&t, &ModelInput::Tokens(seq)).is_err());
    assert!(forward(&l, &ModelInput::Features(vec![1_000_000])).is_err());
}

// Straight-line recomputation of a 1-layer encoder forward, written without
// the crate's kernels.
fn oracle_forward(m: &ModelBundle, ids: &[u32]) -> Vec<f64> {
    let (d, heads, f) = match m.architecture() {
        Architecture::Transformer(c) => (c.hidden_dim, c.heads, c.ff_dim),
        _ => unreachable!(),
    };
    let t = |n: &str| m.params().tensor(n).unwrap().to_vec();
    let emb = t("tok_emb");
    let n = ids.len();
    let dh = d / heads;
    let mut x = vec![vec![0.0; d]; n];
    for i in 0..n {
        for j in 0..d {
            let k = (j / 2) as f64;
            let ang = i as f64 / 10000f64.powf(2.0 * k / d as f64);
            let pe = if j % 2 == 0 { ang.sin() } else { ang.cos() };
            x[i][j] = emb[ids[i] as usize * d + j] + pe;
        }
    }
    let lin = |x: &Vec<Vec<f64>>, w: &[f64], b: &[f64], o: usize| -> Vec<Vec<f64>> {
        x.iter()
            .map(|row| {
                (0..o)
                    .map(|c| b[c] + (0..row.len()).map(|k| row[k] * w[k * o + c]).sum::<f64>())
                    .collect()
            })
            .collect()
    };
    let norm = |x: &Vec<Vec<f64>>, g: &[f64], b: &[f64]| -> Vec<Vec<f64>> {
        x.iter()
            .map(|row| {
                let mu = row.iter().sum::<f64>() / row.len() as f64;
                let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / row.len() as f64;
                row.iter()
                    .enumerate()
                    .map(|(i, v)| (v - mu) / (var + 1e-5).sqrt() * g[i] + b[i])
                    .collect()
            })
            .collect()
    };
    let q = lin(&x, &t("layer0.wq"), &t("layer0.bq"), d);
    let k = lin(&x, &t("layer0.wk"), &t("layer0.bk"), d);
    let v = lin(&x, &t("layer0.wv"), &t("layer0.bv"), d);
    let mut ctx = vec![vec![0.0; d]; n];
    for h in 0..heads {
        for i in 0..n {
            let s: Vec<f64> = (0..n)
                .map(|j| (0..dh).map(|c| q[i][h * dh + c] * k[j][h * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let mx = s.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = s.iter().map(|v| (v - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in 0..n {
                for c in 0..dh {
                    ctx[i][h * dh + c] += e[j] / z * v[j][h * dh + c];
                }
            }
        }
    }
    let a = lin(&ctx, &t("layer0.wo"), &t("layer0.bo"), d);
    let r1: Vec<Vec<f64>> = (0..n).map(|i| (0..d).map(|j| x[i][j] + a[i][j]).collect()).collect();
    let y1 = norm(&r1, &t("layer0.ln1_g"), &t("layer0.ln1_b"));
    let pre = lin(&y1, &t("layer0.w1"), &t("layer0.b1"), f);
    let g: Vec<Vec<f64>> = pre
        .iter()
        .map(|r| {
            r.iter()
                .map(|&z| 0.5 * z * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (z + 0.044715 * z.powi(3))).tanh()))
                .collect()
        })
        .collect();
    let ff = lin(&g, &t("layer0.w2"), &t("layer0.b2"), d);
    let r2: Vec<Vec<f64>> = (0..n).map(|i| (0..d).map(|j| y1[i][j] + ff[i][j]).collect()).collect();
    let out = norm(&r2, &t("layer0.ln2_g"), &t("layer0.ln2_b"));
    let pooled: Vec<f64> = (0..d)
        .map(|j| out.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let logits = lin(&vec![pooled], &t("head_w"), &t("head_b"), 3).remove(0);
    logits.iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect()
}

#[test]
fn tiny_transformer_matches_oracle() {
    let m = init_model(TaskConfig::labelling(), tiny_encoder(4, 2, 8), vocab(), 42).unwrap();
    let seq = encode_sequence("the app crash panic why", m.vocabulary(), 8);
    let got = forward(&m, &ModelInput::Tokens(seq.clone())).unwrap();
    let ids: Vec<u32> = seq.ids.iter().copied().filter(|&i| i != PAD_ID).collect();
    let want = oracle_forward(&m, &ids);
    for (g, w) in got.probs.iter().zip(&want) {
        assert!((g - w).abs() < 1e-12, "{g} vs {w}");
    }
}

#[test]
fn full_mask_path_matches_compact_path() {
    let m = init_model(TaskConfig::labelling(), tiny_encoder(8, 2, 12), vocab(), 5).unwrap();
    let seq = encode_sequence("crash error the a how", m.vocabulary(), 12);
    let full = m.pooled_full_mask(&seq).unwrap();
    let ModelInput::Tokens(s) = m.encode_text("crash error the a how") else {
        unreachable!()
    };
    assert_eq!(s, seq);
    let (ids, mask) = compact(&seq);
    let Layout::Transformer(l) = &m.layout else {
        unreachable!()
    };
    let compact = l.forward(m.params().data(), &ids, &mask, None).pooled;
    for (a, b) in full.iter().zip(&compact) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn attention_rows_are_distributions() {
    let m = init_model(TaskConfig::labelling(), tiny_encoder(8, 2, 10), vocab(), 6).unwrap();
    let seq = encode_sequence("crash error panic", m.vocabulary(), 10);
    for layer in m.attention_maps(&seq).unwrap() {
        for head in layer {
            for row in head {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for (j, w) in row.iter().enumerate() {
                    if !seq.attention_mask[j] {
                        assert_eq!(*w, 0.0);
                    }
                }
            }
        }
    }
}

fn examples_for(m: &ModelBundle) -> Vec<Example> {
    let texts = [
        "app crash panic",
        "add feature support",
        "how why question",
        "the error a crash",
        "support how",
    ];
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| Example {
            input: m.encode_text(t),
            target: match m.task().task {
                TaskKind::Multilabel => Target::MultiHot(vec![i % 3 == 0, i % 2 == 0, i == 2]),
                TaskKind::Multiclass => Target::Class(i % m.task().num_outputs()),
            },
        })
        .collect()
}

fn gradient_check(m: ModelBundle, samples: usize, seed: u64) {
    let ex = examples_for(&m);
    let r = super::gradcheck::check_gradients(&m, &ex, samples, 1e-4, seed).unwrap();
    assert_eq!(r.checked, samples);
    assert!(r.worst_relative_error <= 1e-4, "{r:?}");
}

#[test]
fn transformer_gradients_match_finite_differences() {
    gradient_check(
        init_model(TaskConfig::labelling(), tiny_encoder(8, 2, 8), vocab(), 11).unwrap(),
        150,
        1,
    );
    gradient_check(
        init_model(roster(3), tiny_encoder(8, 2, 8), vocab(), 12).unwrap(),
        150,
        2,
    );
}

#[test]
fn linear_gradients_match_finite_differences() {
    let m = init_model(TaskConfig::labelling(), tiny_linear(), vocab(), 13).unwrap();
    gradient_check(m, 150, 3);
    gradient_check(init_model(roster(4), tiny_linear(), vocab(), 14).unwrap(), 150, 4);
}

#[test]
fn linear_is_bag_of_features() {
    let m = init_model(TaskConfig::labelling(), LinearConfig::default().into(), vocab(), 2).unwrap();
    let a = forward(&m, &m.encode_text("the app crash error why panic")).unwrap();
    let b = forward(&m, &m.encode_text("panic why error crash app the")).unwrap();
    assert_eq!(a, b);
}

impl From<LinearConfig> for Architecture {
    fn from(c: LinearConfig) -> Self {
        Architecture::Linear(c)
    }
}

#[test]
fn predict_probs_is_forward_map() {
    let m = init_model(roster(3), tiny_linear(), vocab(), 2).unwrap();
    let inputs: Vec<ModelInput> = ["crash", "feature add", "how"]
        .iter()
        .map(|t| m.encode_text(t))
        .collect();
    let batch = predict_probs(&m, &inputs).unwrap();
    for (x, p) in inputs.iter().zip(&batch) {
        assert_eq!(&forward(&m, x).unwrap(), p);
    }
    assert!(predict_probs(&m, &[]).unwrap().is_empty());
    let mut rev = inputs.clone();
    rev.reverse();
    let mut out = predict_probs(&m, &rev).unwrap();
    out.reverse();
    assert_eq!(out, batch);
}

fn toy_two_class(m: &ModelBundle) -> Vec<Example> {
    let mut v = Vec::new();
    for i in 0..40 {
        let (text, c) = if i % 2 == 0 {
            (format!("app crash on start {}", ["now", "again", "today"][i % 3]), 0)
        } else {
            (format!("please add feature {}", ["now", "again", "today"][i % 3]), 1)
        };
        v.push(Example {
            input: m.encode_text(&text),
            target: Target::Class(c),
        });
    }
    v
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let voc = build_vocab(&["app crash on start now again today please add feature"], 1, 100).unwrap();
    for (arch, lr) in [(tiny_linear(), 0.1), (tiny_encoder(8, 2, 16), 1e-2)] {
        let m = init_model(
            TaskConfig::assignment(vec!["crash".into(), "feature".into()]),
            arch,
            voc.clone(),
            7,
        )
        .unwrap();
        let data = toy_two_class(&m);
        let cfg = TrainConfig {
            learning_rate: lr,
            max_seq_len: 16,
            seed: 3,
            ..TrainConfig::defaults_for(Backend::Linear)
        };
        let a = train(m.clone(), &data, &cfg).unwrap();
        let b = train(m.clone(), &data, &cfg).unwrap();
        assert_eq!(a.epoch_losses.len(), 5);
        assert!(a.epoch_losses[4] < a.epoch_losses[0], "{:?}", a.epoch_losses);
        assert_eq!(a.epoch_losses, b.epoch_losses);
        assert_eq!(a.model.params().data(), b.model.params().data());
        assert_eq!(a.model.train_config(), Some(&cfg));
    }
}

#[test]
fn training_rejects_bad_input() {
    let m = init_model(roster(2), tiny_linear(), vocab(), 0).unwrap();
    let cfg = TrainConfig::defaults_for(Backend::Linear);
    assert!(matches!(train(m.clone(), &[], &cfg), Err(ModelError::EmptyDataset)));
    let bad = vec![Example {
        input: m.encode_text("x"),
        target: Target::Class(2),
    }];
    assert!(matches!(
        train(m.clone(), &bad, &cfg),
        Err(ModelError::ClassOutOfRange { .. })
    ));
    let bad = vec![Example {
        input: m.encode_text("x"),
        target: Target::MultiHot(vec![true; 3]),
    }];
    assert!(train(m.clone(), &bad, &cfg).is_err());
    let zero = TrainConfig { epochs: 0, ..cfg };
    assert!(matches!(train(m, &[], &zero), Err(ModelError::Config(_))));
}

#[test]
fn divergence_is_reported() {
    let m = init_model(roster(2), tiny_linear(), vocab(), 0).unwrap();
    let data = toy_two_class(&m);
    let cfg = TrainConfig {
        learning_rate: f64::MAX,
        ..TrainConfig::defaults_for(Backend::Linear)
    };
    match train(m, &data, &cfg) {
        Err(ModelError::Divergence { epoch, batch }) => assert!(epoch >= 1 && batch >= 1),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for arch in [tiny_encoder(8, 2, 8), tiny_linear()] {
        let m = init_model(TaskConfig::labelling(), arch, vocab(), 4).unwrap();
        let path = dir.path().join("m.momb");
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.fingerprint(), m.fingerprint());
        let x = m.encode_text("crash error how");
        let (a, b) = (forward(&m, &x).unwrap(), forward(&back, &x).unwrap());
        assert!(a.probs.iter().zip(&b.probs).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn corrupted_files_are_rejected() {
    let m = init_model(TaskConfig::labelling(), tiny_linear(), vocab(), 4).unwrap();
    let bytes = m.to_bytes();
    assert_eq!(&bytes[..4], MAGIC);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(
        ModelBundle::from_bytes(&bad),
        Err(FormatError::BadMagic { .. })
    ));

    let mut bad = bytes.clone();
    bad[4..8].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    assert_eq!(
        ModelBundle::from_bytes(&bad).unwrap_err(),
        FormatError::UnsupportedVersion {
            version: FORMAT_VERSION + 1
        }
    );

    for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(
                ModelBundle::from_bytes(&bytes[..cut]),
                Err(FormatError::Truncated { .. })
            ),
            "cut {cut}"
        );
    }

    let mut bad = bytes.clone();
    let n = bad.len();
    bad[n - 20] ^= 0x01;
    assert!(matches!(
        ModelBundle::from_bytes(&bad),
        Err(FormatError::ChecksumMismatch { .. })
    ));

    let mut bad = bytes.clone();
    bad.push(0);
    assert!(matches!(
        ModelBundle::from_bytes(&bad),
        Err(FormatError::TrailingBytes { .. })
    ));
}

proptest! {
    #[test]
    fn softmax_sums_to_one(logits in proptest::collection::vec(-50.0f64..50.0, 1..20)) {
        let p = ops::softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn linear_permutation_invariance(mut words in proptest::collection::vec("[a-z]{1,6}", 0..12), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let m = init_model(TaskConfig::labelling(), tiny_linear(), vocab(), 1).unwrap();
        let a = forward(&m, &m.encode_text(&words.join(" "))).unwrap();
        words.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let b = forward(&m, &m.encode_text(&words.join(" "))).unwrap();
        prop_assert_eq!(a, b);
    }
}
