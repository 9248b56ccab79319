//! Randomized examples checked against independent reference computations.

use std::collections::BTreeSet;

use lngprobe::align::{
    align_pair, build_cost_matrix, em_projection_align, min_edge_cover, PenaltyKind, WordPair,
};
use lngprobe::classify::{
    pearson, predict_lang, qe_cosine_score, train_langid, train_qe, LabeledVector, QeAux,
    QeInputMode, QeSample, QeVariant, TrainConfig,
};
use lngprobe::cluster::{project_2d, v_measure_labels};
use lngprobe::embstore::{
    pool_cls, pool_mean, pool_words, read_dump, write_dump, EmbeddingSet, Pooling, SentenceVector,
    TokenEmbeddingMatrix, FLAG_LEADING_SPECIAL,
};
use lngprobe::geometry::{
    centroid, cosine_distance, fit_projection, FitOptions, LanguageCentroid, LinearProjection,
};
use lngprobe::retrieval::{
    nearest_neighbors, run_retrieval_suite, LanguageSide, RetrievalMode, SuiteInputs,
};
use lngprobe::synth::{generate, SynthConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

fn random_f32(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    gaussian(rng, n).into_iter().map(|v| v as f32).collect()
}

fn matvec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn random_orthogonal(rng: &mut ChaCha8Rng, dim: usize) -> Vec<Vec<f64>> {
    let a = DMatrix::from_fn(dim, dim, |_, _| gaussian(rng, 1)[0]);
    let q = a.qr().q();
    (0..dim)
        .map(|i| (0..dim).map(|j| q[(i, j)]).collect())
        .collect()
}

// ---------------------------------------------------------------- embstore

fn random_token_set(rng: &mut ChaCha8Rng, records: usize, dim: usize) -> EmbeddingSet {
    let recs = (0..records)
        .map(|i| {
            let n = rng.random_range(1..6);
            let lang = ["en", "de", "cs"][i % 3];
            TokenEmbeddingMatrix::new(format!("s{i}"), lang, dim, random_f32(rng, n * dim))
        })
        .collect();
    EmbeddingSet::tokens("model", 4, dim, recs)
}

#[test]
fn hundred_random_records_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let set = random_token_set(&mut rng(1), 100, 32);
    let path = dir.path().join("d.memb");
    write_dump(&set, &path).unwrap();
    let back = read_dump(&path).unwrap();
    assert_eq!(back.len(), 100);
    assert_eq!(back.dim, 32);
    assert_eq!(back, set);
}

#[test]
fn thousand_random_records_round_trip_in_both_encodings() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(2);
    let tokens = random_token_set(&mut r, 1000, 8);
    let sentences = EmbeddingSet::sentences(
        "model",
        2,
        8,
        (0..1000)
            .map(|i| SentenceVector::new(format!("v{i}"), "fr", Pooling::Cls, gaussian(&mut r, 8)))
            .map(|mut v| {
                // the container stores 32-bit values
                v.vector.iter_mut().for_each(|x| *x = f64::from(*x as f32));
                v
            })
            .collect(),
    );
    for (name, set) in [("t", &tokens), ("s", &sentences)] {
        for ext in ["memb", "jsonl"] {
            let path = dir.path().join(format!("{name}.{ext}"));
            write_dump(set, &path).unwrap();
            assert_eq!(&read_dump(&path).unwrap(), set, "{name}.{ext}");
        }
    }
}

#[test]
fn empty_and_repeated_writes() {
    let dir = tempfile::tempdir().unwrap();
    let empty = EmbeddingSet::tokens("m", 0, 4, vec![]);
    let p = dir.path().join("e.memb");
    write_dump(&empty, &p).unwrap();
    let back = read_dump(&p).unwrap();
    assert!(back.is_empty());
    assert_eq!(back.dim, 4);

    let set = random_token_set(&mut rng(3), 20, 6);
    let (a, b) = (dir.path().join("a.memb"), dir.path().join("b.memb"));
    write_dump(&set, &a).unwrap();
    write_dump(&set, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn mean_pooling_matches_summation_oracle() {
    let mut r = rng(4);
    let values = random_f32(&mut r, 7 * 16);
    let m = TokenEmbeddingMatrix::new("x", "en", 16, values.clone());
    let got = pool_mean(&m, true).unwrap().vector;
    for k in 0..16 {
        let mut s = 0.0f64;
        for row in 0..7 {
            s += f64::from(values[row * 16 + k]);
        }
        assert!((got[k] - s / 7.0).abs() < 1e-6);
    }
}

#[test]
fn cls_pooling_returns_row_zero_exactly() {
    let mut r = rng(5);
    let values = random_f32(&mut r, 5 * 9);
    let m =
        TokenEmbeddingMatrix::new("x", "en", 9, values.clone()).with_flags(FLAG_LEADING_SPECIAL);
    let got = pool_cls(&m).unwrap().vector;
    let want: Vec<f64> = values[..9].iter().map(|&v| f64::from(v)).collect();
    assert_eq!(got, want);
}

#[test]
fn word_pooling_matches_per_span_oracle() {
    let mut r = rng(6);
    let dim = 5;
    let values = random_f32(&mut r, 10 * dim);
    let spans = vec![(0, 3), (3, 4), (4, 8), (8, 10)];
    let m =
        TokenEmbeddingMatrix::new("x", "en", dim, values.clone()).with_word_spans(spans.clone());
    let got = pool_words(&m).unwrap();
    assert_eq!(got.len(), 4);
    for (w, &(s, e)) in spans.iter().enumerate() {
        for k in 0..dim {
            let sum: f64 = (s..e)
                .map(|t| f64::from(values[t as usize * dim + k]))
                .sum();
            assert!((got[w][k] - sum / f64::from(e - s)).abs() < 1e-6);
        }
    }
}

// ---------------------------------------------------------------- geometry

#[test]
fn centroid_of_200_vectors_matches_summation_oracle() {
    let mut r = rng(7);
    let vs: Vec<SentenceVector> = (0..200)
        .map(|i| SentenceVector::new(format!("{i}"), "en", Pooling::Mean, gaussian(&mut r, 32)))
        .collect();
    let c = centroid(&vs).unwrap();
    for k in 0..32 {
        let mean = vs.iter().map(|v| v.vector[k]).sum::<f64>() / 200.0;
        assert!((c.vector[k] - mean).abs() < 1e-9);
    }
}

#[test]
fn projection_recovers_a_random_map_from_four_times_dim_samples() {
    let mut r = rng(8);
    let dim = 12;
    let a: Vec<Vec<f64>> = (0..dim).map(|_| gaussian(&mut r, dim)).collect();
    let src: Vec<Vec<f64>> = (0..4 * dim).map(|_| gaussian(&mut r, dim)).collect();
    let tgt: Vec<Vec<f64>> = src.iter().map(|x| matvec(&a, x)).collect();
    let p = fit_projection(&src, &tgt, FitOptions::default()).unwrap();
    for i in 0..dim {
        for j in 0..dim {
            assert!((p.matrix[(i, j)] - a[i][j]).abs() < 1e-6);
        }
    }
}

fn mse(p: &LinearProjection, src: &[Vec<f64>], tgt: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for (x, y) in src.iter().zip(tgt) {
        let got = p.apply(x).unwrap();
        s += got
            .iter()
            .zip(y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    s / (src.len() * src[0].len()) as f64
}

#[test]
fn noisy_fit_beats_identity_and_perturbations() {
    let mut r = rng(9);
    let dim = 6;
    let a: Vec<Vec<f64>> = (0..dim).map(|_| gaussian(&mut r, dim)).collect();
    let src: Vec<Vec<f64>> = (0..60).map(|_| gaussian(&mut r, dim)).collect();
    let tgt: Vec<Vec<f64>> = src
        .iter()
        .map(|x| {
            let noise = gaussian(&mut r, dim);
            matvec(&a, x)
                .iter()
                .zip(noise)
                .map(|(v, e)| v + 0.3 * e)
                .collect()
        })
        .collect();
    let p = fit_projection(&src, &tgt, FitOptions::default()).unwrap();
    let best = mse(&p, &src, &tgt);
    assert!((best - p.residual_mse).abs() < 1e-12);
    assert!(best <= mse(&LinearProjection::identity(dim, "a", "b"), &src, &tgt));
    for _ in 0..100 {
        let mut q = p.clone();
        let scale = r.random_range(1e-4..1e-1);
        for v in q.matrix.iter_mut() {
            *v += scale * gaussian(&mut r, 1)[0];
        }
        assert!(best <= mse(&q, &src, &tgt));
    }
}

// --------------------------------------------------------------- retrieval

#[test]
fn nearest_neighbors_match_double_loop_oracle() {
    let mut r = rng(10);
    let dim = 16;
    let cands: Vec<Vec<f64>> = (0..50).map(|_| gaussian(&mut r, dim)).collect();
    let queries: Vec<Vec<f64>> = cands
        .iter()
        .map(|c| {
            c.iter()
                .map(|v| v + 0.05 * gaussian(&mut r, 1)[0])
                .collect()
        })
        .collect();
    let qs: Vec<&[f64]> = queries.iter().map(Vec::as_slice).collect();
    let cs: Vec<&[f64]> = cands.iter().map(Vec::as_slice).collect();
    let ids: Vec<String> = (0..50).map(|i| i.to_string()).collect();
    let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
    let got = nearest_neighbors(&qs, &cs, &ids, &ids).unwrap();
    for (qi, q) in queries.iter().enumerate() {
        let mut best = (f64::INFINITY, 0);
        for (ci, c) in cands.iter().enumerate() {
            let d = cosine_distance(q, c).unwrap();
            if d < best.0 {
                best = (d, ci);
            }
        }
        assert_eq!(got[qi], best.1, "query {qi}");
    }
}

#[test]
fn projected_mode_is_perfect_on_linearly_related_spaces() {
    let mut r = rng(11);
    let dim = 10;
    let a: Vec<Vec<f64>> = (0..dim).map(|_| gaussian(&mut r, dim)).collect();
    let pivot: Vec<Vec<f64>> = (0..40).map(|_| gaussian(&mut r, dim)).collect();
    // other = A^-1 pivot, so projecting `other` by A lands on the pivot
    let am = DMatrix::from_fn(dim, dim, |i, j| a[i][j]);
    let inv = am.clone().try_inverse().unwrap();
    let inv_rows: Vec<Vec<f64>> = (0..dim)
        .map(|i| (0..dim).map(|j| inv[(i, j)]).collect())
        .collect();
    let other: Vec<Vec<f64>> = pivot.iter().map(|v| matvec(&inv_rows, v)).collect();
    let side = |lang: &str, vs: &[Vec<f64>]| LanguageSide {
        language: lang.into(),
        vectors: vs
            .iter()
            .enumerate()
            .map(|(i, v)| SentenceVector::new(format!("{i}"), lang, Pooling::Mean, v.clone()))
            .collect(),
    };
    let sides = [side("en", &pivot), side("xx", &other)];
    let mut p = fit_projection(&other, &pivot, FitOptions::default()).unwrap();
    p.source_language = "xx".into();
    p.target_language = "en".into();
    let projections = [("xx".to_string(), p)].into_iter().collect();
    let inputs = SuiteInputs {
        centroids: None,
        projections: Some(&projections),
    };
    let suite = run_retrieval_suite(&sides, &[RetrievalMode::Projected], &inputs).unwrap();
    assert_eq!(suite.average(RetrievalMode::Projected), Some(1.0));
}

// --------------------------------------------------------------- alignment

#[test]
fn align_pair_is_the_composition_of_its_parts() {
    let mut r = rng(12);
    for trial in 0..20 {
        let dim = 6;
        let src = TokenEmbeddingMatrix::new("s", "en", dim, random_f32(&mut r, 4 * dim));
        let tgt = TokenEmbeddingMatrix::new("t", "de", dim, random_f32(&mut r, 4 * dim));
        let weight = r.random_range(0.0..1.0);
        let direct = align_pair(&src, &tgt, weight, PenaltyKind::Inverse).unwrap();
        let (sw, tw) = (pool_words(&src).unwrap(), pool_words(&tgt).unwrap());
        let costs = build_cost_matrix(&sw, &tw, weight, PenaltyKind::Inverse).unwrap();
        assert_eq!(direct, min_edge_cover(&costs).unwrap(), "trial {trial}");
    }
}

fn mean_link_cost(
    pairs: &[WordPair],
    proj: &[Vec<f64>],
    links: &[BTreeSet<(usize, usize)>],
) -> f64 {
    let (mut s, mut n) = (0.0, 0);
    for (p, l) in pairs.iter().zip(links) {
        for &(i, j) in l {
            s += cosine_distance(&matvec(proj, &p.src[i]), &p.tgt[j]).unwrap();
            n += 1;
        }
    }
    s / n as f64
}

#[test]
fn em_on_a_rotated_space_does_not_raise_cost() {
    let mut r = rng(13);
    let dim = 8;
    let q = random_orthogonal(&mut r, dim);
    let pairs: Vec<WordPair> = (0..40)
        .map(|_| {
            let n = r.random_range(2..6);
            let tgt: Vec<Vec<f64>> = (0..n).map(|_| gaussian(&mut r, dim)).collect();
            // source words are the target words rotated by Q^T, plus noise
            let src = tgt
                .iter()
                .map(|t| {
                    let rotated: Vec<f64> = (0..dim)
                        .map(|i| (0..dim).map(|k| q[k][i] * t[k]).sum())
                        .collect();
                    rotated
                        .iter()
                        .map(|v| v + 0.01 * gaussian(&mut r, 1)[0])
                        .collect()
                })
                .collect();
            WordPair { src, tgt }
        })
        .collect();
    let em = em_projection_align(&pairs, 2, 0.0, PenaltyKind::None).unwrap();
    assert_eq!(em.round_costs.len(), 2, "{:?}", em.stopped_early);
    assert!(em.round_costs[1] <= em.round_costs[0]);
    let fitted: Vec<Vec<f64>> = (0..dim)
        .map(|i| (0..dim).map(|j| em.projection.matrix[(i, j)]).collect())
        .collect();
    let links: Vec<_> = em.alignments.iter().map(|a| a.links.clone()).collect();
    assert!((mean_link_cost(&pairs, &fitted, &links) - em.round_costs[1]).abs() < 1e-9);
}

#[test]
fn em_costs_never_increase_on_random_data() {
    for seed in 0..5 {
        let mut r = rng(100 + seed);
        let dim = 6;
        let pairs: Vec<WordPair> = (0..25)
            .map(|_| {
                let (n, m) = (r.random_range(1..6), r.random_range(1..6));
                WordPair {
                    src: (0..n).map(|_| gaussian(&mut r, dim)).collect(),
                    tgt: (0..m).map(|_| gaussian(&mut r, dim)).collect(),
                }
            })
            .collect();
        let em = em_projection_align(&pairs, 5, 0.0, PenaltyKind::None).unwrap();
        for w in em.round_costs.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "seed {seed}: {:?}", em.round_costs);
        }
    }
}

// --------------------------------------------------------------- classify

fn blobs(seed: u64, per_label: usize) -> Vec<LabeledVector> {
    let mut r = rng(seed);
    let centers = [[4.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 4.0]];
    let mut out = Vec::new();
    for (l, c) in centers.iter().enumerate() {
        for _ in 0..per_label {
            let v = c
                .iter()
                .zip(gaussian(&mut r, 3))
                .map(|(a, e)| a + 0.3 * e)
                .collect();
            out.push(LabeledVector {
                vector: v,
                label: format!("l{l}"),
            });
        }
    }
    out
}

#[test]
fn trained_model_labels_its_training_points() {
    let train = blobs(14, 40);
    let cfg = TrainConfig {
        learning_rate: 0.1,
        seed: 3,
        ..TrainConfig::default()
    };
    let (model, _) = train_langid(&train, &blobs(15, 10), &cfg).unwrap();
    for d in &train {
        assert_eq!(predict_lang(&model, &d.vector).unwrap(), d.label);
    }
    // shifting every bias by a constant leaves predictions alone
    let mut shifted = model.clone();
    shifted.biases.iter_mut().for_each(|b| *b += 17.5);
    for d in &train {
        assert_eq!(
            predict_lang(&shifted, &d.vector).unwrap(),
            predict_lang(&model, &d.vector).unwrap()
        );
    }
}

#[test]
fn pearson_hand_computed_example() {
    let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap();
    assert!((r - 0.6).abs() < 1e-12);
}

fn qe_samples(seed: u64, n: usize, dim: usize) -> Vec<QeSample> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| QeSample {
            source_vector: gaussian(&mut r, dim),
            target_vector: gaussian(&mut r, dim),
            hter: r.random_range(0.0..1.0),
        })
        .collect()
}

#[test]
fn regressor_can_memorize_twenty_samples() {
    let train = qe_samples(16, 20, 4);
    let cfg = TrainConfig {
        learning_rate: 0.01,
        batch_size: 20,
        patience: 20_000,
        max_epochs: 20_000,
        momentum: 0.9,
        seed: 1,
    };
    let (model, _) = train_qe(&train, &train, QeInputMode::Full, &cfg).unwrap();
    let pred: Vec<f64> = train.iter().map(|s| model.predict(s).unwrap()).collect();
    let hter: Vec<f64> = train.iter().map(|s| s.hter).collect();
    let r = pearson(&pred, &hter).unwrap();
    assert!(r >= 0.99, "train-set correlation {r}");
}

#[test]
fn independent_hter_is_uncorrelated_with_distance() {
    let samples = qe_samples(17, 1000, 8);
    let r = qe_cosine_score(&samples, QeVariant::Plain, &QeAux::default()).unwrap();
    assert!(r.abs() < 0.1, "r = {r}");
}

#[test]
fn projected_qe_recovers_the_true_distance() {
    let mut r = rng(18);
    let dim = 8;
    let a: Vec<Vec<f64>> = (0..dim).map(|_| gaussian(&mut r, dim)).collect();
    let src: Vec<Vec<f64>> = (0..200).map(|_| gaussian(&mut r, dim)).collect();
    let fit_tgt: Vec<Vec<f64>> = src.iter().map(|x| matvec(&a, x)).collect();
    let p = fit_projection(&src, &fit_tgt, FitOptions::default()).unwrap();
    // hypotheses are the mapped source plus noise of varying size
    let samples: Vec<QeSample> = src
        .iter()
        .map(|x| {
            let mapped = matvec(&a, x);
            let level = r.random_range(0.0..1.0);
            let hyp: Vec<f64> = mapped
                .iter()
                .map(|v| v + level * gaussian(&mut r, 1)[0])
                .collect();
            let hter = cosine_distance(&mapped, &hyp).unwrap();
            QeSample {
                source_vector: x.clone(),
                target_vector: hyp,
                hter,
            }
        })
        .collect();
    let aux = QeAux {
        projection: Some(&p),
        ..QeAux::default()
    };
    let r = qe_cosine_score(&samples, QeVariant::Projected, &aux).unwrap();
    assert!(r >= 0.99, "r = {r}");
}

// ---------------------------------------------------------------- cluster

#[test]
fn homogeneous_but_incomplete_clustering() {
    let s = v_measure_labels(&[1, 1, 2, 3], &["a", "a", "b", "b"]).unwrap();
    assert!((s.homogeneity - 1.0).abs() < 1e-12);
    // H(K|C) = 0.5 ln 2, H(K) = 1.5 ln 2 in nats
    let want_c = 1.0 - 0.5 / 1.5;
    assert!((s.completeness - want_c).abs() < 1e-12);
    assert!((s.v_measure - 2.0 * want_c / (1.0 + want_c)).abs() < 1e-12);
}

#[test]
fn first_principal_axis_carries_more_variance() {
    let mut r = rng(19);
    let cs: Vec<LanguageCentroid> = (0..15)
        .map(|i| {
            let v = gaussian(&mut r, 6)
                .iter()
                .enumerate()
                .map(|(k, x)| x * (6 - k) as f64)
                .collect();
            LanguageCentroid {
                language: format!("l{i}"),
                vector: v,
                sample_count: 1,
            }
        })
        .collect();
    let xy = project_2d(&cs).unwrap();
    let var = |f: fn(&(f64, f64)) -> f64| {
        let m = xy.iter().map(f).sum::<f64>() / xy.len() as f64;
        xy.iter().map(|p| (f(p) - m).powi(2)).sum::<f64>()
    };
    assert!(var(|p| p.0) >= var(|p| p.1));
}

// ------------------------------------------------------------------ synth

#[test]
fn synthetic_centroids_sit_near_the_true_offsets() {
    let cfg = SynthConfig {
        seed: 23,
        ..SynthConfig::default()
    };
    let corpus = generate(&cfg).unwrap();
    let n = cfg.sentences as f64;
    // meaning has unit variance and noise adds cfg.noise
    let sigma = (1.0 + cfg.noise * cfg.noise).sqrt();
    for (set, offset) in corpus.sets.iter().zip(&corpus.offsets) {
        let pooled = set.pooled(Pooling::Mean, true).unwrap();
        let c = centroid(pooled.sentence_records().unwrap()).unwrap();
        for (got, want) in c.vector.iter().zip(offset) {
            // 32-bit storage adds a rounding error far below the bound
            assert!(
                (got - want).abs() <= 3.0 * sigma / n.sqrt() + 1e-5,
                "{got} vs {want}"
            );
        }
    }
}
