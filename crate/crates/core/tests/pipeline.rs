use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ddlab::gauss_model::{leading_weights, Activation, OodInputConfig, TeacherModel};
use ddlab::ingest::{read_table, write_table};
use ddlab::least_squares::FeatureSubset;
use ddlab::metrics::auc;
use ddlab::ood_scores::{
    applicable_methods, fit_id_stats, score_method, ClassifierHead, Method, ModelOutputs, ScoreParams,
};
use ddlab::risk_mc::model_spectra;
use ddlab::risk_theory::theory_sweep;
use ddlab::Real;

fn clusters(
    rng: &mut ChaCha8Rng,
    n: usize,
    q: usize,
    c: usize,
    spread: f64,
    center: f64,
) -> (DMatrix<f64>, Vec<usize>) {
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    let f = DMatrix::from_fn(n, q, |i, j| {
        spread * f64::std_normal(rng) + if j == labels[i] { center } else { 0.0 }
    });
    (f, labels)
}

#[test]
fn stored_tables_score_and_separate() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (q, c) = (8, 3);
    let head = ClassifierHead::new(
        DMatrix::from_fn(c, q, |i, j| if i == j { 1.0 } else { 0.0 }),
        DVector::zeros(c),
    )
    .unwrap();

    let (f, labels) = clusters(&mut rng, 300, q, c, 0.5, 6.0);
    let train = ModelOutputs::new(f.clone(), Some(head.logits(&f).unwrap()), Some(labels)).unwrap();
    let path = dir.path().join("train.ddft");
    write_table(&train, Some(&head), &path).unwrap();
    let loaded = read_table(&path).unwrap();
    let head = loaded.head.unwrap();
    head.check_against(&loaded.outputs).unwrap();
    let stats = fit_id_stats(&loaded.outputs, Some(&head)).unwrap();

    let (id_f, _) = clusters(&mut rng, 90, q, c, 0.5, 6.0);
    let (ood_f, _) = clusters(&mut rng, 90, q, c, 1.0, 0.0);
    let id = ModelOutputs::new(id_f, None, None).unwrap();
    let ood = ModelOutputs::new(ood_f, None, None).unwrap();
    let params = ScoreParams::default();

    let methods = applicable_methods(false, true, true);
    assert_eq!(methods.len(), Method::ALL.len());
    for m in methods {
        let a = score_method(m, &id, Some(&head), Some(&stats), &params).unwrap();
        let b = score_method(m, &ood, Some(&head), Some(&stats), &params).unwrap();
        assert_eq!(a.scores.len(), 90);
        let r = auc(a.scores.as_slice(), b.scores.as_slice()).unwrap();
        if matches!(m, Method::Msp | Method::MaxLogit | Method::Energy | Method::Mahalanobis) {
            assert!(r.auc > 0.95, "{m}: {}", r.auc);
        }
    }
}

#[test]
fn theory_is_generic_over_the_scalar() {
    let sched: Vec<_> = (2..=60).map(|p| FeatureSubset::prefix(p, 60).unwrap()).collect();
    let run64 = {
        let t = TeacherModel::new(leading_weights(60, 60, 1.0), 0.5, 0.1, Activation::Identity).unwrap();
        let spectra = model_spectra(&t, &OodInputConfig::new(2.0).unwrap(), 0).unwrap();
        theory_sweep(&t, &sched, 30, spectra, 0.1).unwrap()
    };
    let run32 = {
        let t = TeacherModel::<f32>::new(leading_weights(60, 60, 1.0), 0.5, 0.1, Activation::Identity).unwrap();
        let spectra = model_spectra(&t, &OodInputConfig::new(2.0f32).unwrap(), 0).unwrap();
        theory_sweep(&t, &sched, 30, spectra, 0.1f32).unwrap()
    };
    for (a, b) in run64.iter().zip(&run32) {
        assert_eq!(a.p, b.p);
        let (x, y) = (a.c.to_f64(), b.c.to_f64());
        if x.is_infinite() {
            assert!((29..=31).contains(&a.p));
            assert!(y.is_infinite());
        } else {
            assert!((x - y).abs() <= 1e-5 * x.max(1.0), "p={}: {x} vs {y}", a.p);
        }
    }
}
