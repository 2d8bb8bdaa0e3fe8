use std::ffi::{CStr, CString};
use std::ptr;

use arhate::corpus::write_corpus;
use arhate::synthetic;
use arhate_ffi::*;

fn last_error() -> String {
    let p = arhate_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(arhate_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn normalizer_round_trip() {
    unsafe {
        let mut n = ptr::null_mut();
        assert_eq!(arhate_normalizer_new(ptr::null(), true, &mut n), ArhateStatus::Ok);
        let text = CString::new("مرحبـــــا يا صديقى").unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(arhate_normalize(n, text.as_ptr(), &mut out), ArhateStatus::Ok);
        assert_eq!(CStr::from_ptr(out).to_str().unwrap(), "مرحبا يا صديقي");
        arhate_string_free(out);
        assert_eq!(arhate_normalize(n, ptr::null(), &mut out), ArhateStatus::NullArgument);
        assert!(last_error().contains("text"));
        arhate_normalizer_free(n);

        let missing = CString::new("/nonexistent/stopwords.txt").unwrap();
        assert_eq!(arhate_normalizer_new(missing.as_ptr(), true, &mut n), ArhateStatus::Io);
    }
}

#[test]
fn metrics_from_counts() {
    // diagonal 10 per class plus one NH row predicted Se
    let mut counts = [0u64; 25];
    for c in 0..5 {
        counts[c * 5 + c] = 10;
    }
    counts[4] = 1;
    let mut per = [ArhateClassScores::default(); 5];
    let mut agg = ArhateAggregates::default();
    let status = unsafe { arhate_metrics(counts.as_ptr(), per.as_mut_ptr(), &mut agg) };
    assert_eq!(status, ArhateStatus::Ok);
    assert!((per[0].recall - 10.0 / 11.0).abs() < 1e-12);
    assert!((per[4].precision - 10.0 / 11.0).abs() < 1e-12);
    assert!((agg.micro_f1 - 50.0 / 51.0).abs() < 1e-12);
    assert_eq!(unsafe { arhate_metrics(ptr::null(), per.as_mut_ptr(), &mut agg) }, ArhateStatus::NullArgument);
}

#[test]
fn voting_over_flat_arrays() {
    // three models, two rows
    #[rustfmt::skip]
    let probs = [
        0.6, 0.1, 0.1, 0.1, 0.1,   0.1, 0.6, 0.1, 0.1, 0.1,
        0.6, 0.1, 0.1, 0.1, 0.1,   0.1, 0.1, 0.6, 0.1, 0.1,
        0.1, 0.1, 0.6, 0.1, 0.1,   0.1, 0.1, 0.6, 0.1, 0.1,
    ];
    let mut labels = [9u32; 2];
    unsafe {
        assert_eq!(
            arhate_vote(ArhateVoteMode::Majority, probs.as_ptr(), 3, 2, ptr::null(), labels.as_mut_ptr()),
            ArhateStatus::Ok
        );
        assert_eq!(labels, [0, 2]);
        let weights = [0.0, 0.0, 1.0];
        assert_eq!(
            arhate_vote(ArhateVoteMode::Average, probs.as_ptr(), 3, 2, weights.as_ptr(), labels.as_mut_ptr()),
            ArhateStatus::Ok
        );
        assert_eq!(labels, [2, 2]);
        let bad = [1.0, -1.0, 1.0];
        assert_eq!(
            arhate_vote(ArhateVoteMode::Average, probs.as_ptr(), 3, 2, bad.as_ptr(), labels.as_mut_ptr()),
            ArhateStatus::Config
        );
        assert!(last_error().contains("non-negative"));
    }
}

#[test]
fn fit_save_load_predict() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("train.jsonl");
    write_corpus(&corpus, &synthetic::corpus([15; 5], 2)).unwrap();
    let backend = CString::new("toy").unwrap();
    let path = CString::new(corpus.to_str().unwrap()).unwrap();
    let model_dir = CString::new(dir.path().join("model").to_str().unwrap()).unwrap();
    let texts: Vec<CString> = synthetic::corpus([2; 5], 2)
        .into_iter()
        .map(|r| CString::new(r.raw_text).unwrap())
        .collect();
    let ptrs: Vec<*const std::ffi::c_char> = texts.iter().map(|t| t.as_ptr()).collect();
    unsafe {
        let mut model = ptr::null_mut();
        let status = arhate_model_fit(backend.as_ptr(), path.as_ptr(), ptr::null(), 5, 8, 0.5, 1, &mut model);
        assert_eq!(status, ArhateStatus::Ok, "{}", last_error());
        assert_eq!(arhate_model_save(model, model_dir.as_ptr()), ArhateStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(arhate_model_load(model_dir.as_ptr(), &mut loaded), ArhateStatus::Ok);

        let mut a = vec![0.0; ptrs.len() * 5];
        let mut b = vec![0.0; ptrs.len() * 5];
        assert_eq!(arhate_model_predict_proba(model, ptrs.as_ptr(), ptrs.len(), a.as_mut_ptr()), ArhateStatus::Ok);
        assert_eq!(arhate_model_predict_proba(loaded, ptrs.as_ptr(), ptrs.len(), b.as_mut_ptr()), ArhateStatus::Ok);
        assert_eq!(a, b);
        for (i, row) in a.chunks(5).enumerate() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let best = (0..5).max_by(|&x, &y| row[x].total_cmp(&row[y])).unwrap();
            assert_eq!(best, i / 2, "row {i}");
        }
        arhate_model_free(model);
        arhate_model_free(loaded);

        let unknown = CString::new("gpt").unwrap();
        let status = arhate_model_fit(unknown.as_ptr(), path.as_ptr(), ptr::null(), 5, 8, 0.5, 1, &mut model);
        assert_eq!(status, ArhateStatus::Config);
        let big = CString::new("MARBERT").unwrap();
        let status = arhate_model_fit(big.as_ptr(), path.as_ptr(), ptr::null(), 3, 8, 1e-5, 1, &mut model);
        assert_eq!(status, ArhateStatus::BackendUnavailable, "{}", last_error());
    }
}
