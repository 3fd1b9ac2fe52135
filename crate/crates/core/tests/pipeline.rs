use std::fs;
use std::path::Path;

use space_core::backend::AnalyticBackend;
use space_core::config::{Method, RunConfig};
use space_core::method::MethodRegistry;
use space_core::pipeline;
use space_core::synth;
use space_core::Error;

fn small_config(method: Method) -> RunConfig {
    let mut cfg = RunConfig::new(1, 8);
    cfg.n_pca = 5;
    cfg.tcav_repetitions = 4;
    cfg.n_random_concepts = 4;
    cfg.n_slic = vec![15];
    cfg.method = method;
    cfg
}

fn dataset(dir: &Path) -> std::path::PathBuf {
    let root = dir.join("data");
    synth::write_recipe("blobs-small", &root, 4).unwrap();
    root
}

#[test]
fn concepts_are_sorted_with_untestable_last() {
    let dir = tempfile::tempdir().unwrap();
    let root = dataset(dir.path());
    let backend = AnalyticBackend::blob_detector(72).unwrap();
    for method in [Method::Space, Method::Ace] {
        let result = pipeline::run(&small_config(method), &root, &backend).unwrap();
        assert_eq!(result.method, method);
        assert_eq!(result.class_name, "1_blob");
        assert!(!result.concepts.is_empty(), "{method}");
        let scores: Vec<Option<f64>> = result.concepts.iter().map(|c| c.tcav.mean_score).collect();
        let first_none = scores.iter().position(Option::is_none).unwrap_or(scores.len());
        assert!(scores[first_none..].iter().all(Option::is_none));
        assert!(scores[..first_none].windows(2).all(|w| w[0] >= w[1]), "{scores:?}");
        for c in &result.concepts {
            assert!(!c.concept.examples.is_empty());
            assert_eq!(c.concept.examples.len(), c.concept.member_activations.len());
            assert_eq!(c.tcav.untestable, c.tcav.mean_score.is_none());
            if let Some(p) = c.tcav.p_value {
                assert!((0.0..=1.0).contains(&p));
                assert_eq!(c.tcav.significant, p < 0.05);
            }
            assert!(c.tcav.per_run_scores.iter().all(|s| (0.0..=1.0).contains(s)));
        }
        let stages: Vec<&str> = result.timing.iter().map(|t| t.stage.as_str()).collect();
        assert!(stages.contains(&"clustering") && stages.contains(&"tcav"), "{stages:?}");
    }
}

#[test]
fn same_seed_same_result() {
    let dir = tempfile::tempdir().unwrap();
    let root = dataset(dir.path());
    let backend = AnalyticBackend::blob_detector(72).unwrap();
    let cfg = small_config(Method::Space);
    let a = pipeline::run(&cfg, &root, &backend).unwrap();
    let b = pipeline::run(&cfg, &root, &backend).unwrap();
    assert_eq!(a.concepts, b.concepts);
}

#[test]
fn empty_target_class_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let root = dataset(dir.path());
    for f in fs::read_dir(root.join("1_blob")).unwrap() {
        fs::remove_file(f.unwrap().path()).unwrap();
    }
    let backend = AnalyticBackend::blob_detector(72).unwrap();
    let err = pipeline::run(&small_config(Method::Space), &root, &backend).unwrap_err();
    assert!(err.to_string().contains("empty class"), "{err}");
}

#[test]
fn bad_inputs_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let root = dataset(dir.path());
    let backend = AnalyticBackend::blob_detector(72).unwrap();

    let mut cfg = small_config(Method::Space);
    cfg.class_index = 5;
    assert!(pipeline::run(&cfg, &root, &backend).unwrap_err().is_validation());

    let mut cfg = small_config(Method::Space);
    cfg.n_p = 0.0;
    assert!(pipeline::run(&cfg, &root, &backend).unwrap_err().is_validation());

    let mut cfg = small_config(Method::Space);
    cfg.layer_gradcam = Some("pool".into());
    assert!(matches!(pipeline::run(&cfg, &root, &backend), Err(Error::NotSpatial(_))));

    let mut cfg = small_config(Method::Space);
    cfg.layer_activ = Some("fc9".into());
    assert!(pipeline::run(&cfg, &root, &backend).is_err());
}

#[test]
fn methods_come_from_the_registry() {
    let dir = tempfile::tempdir().unwrap();
    let root = dataset(dir.path());
    let backend = AnalyticBackend::blob_detector(72).unwrap();
    let names: Vec<_> = MethodRegistry::builtin().names().collect();
    assert!(names.contains(&"space") && names.contains(&"ace"), "{names:?}");
    let err = pipeline::run_with(&small_config(Method::Ace), &root, &backend, &MethodRegistry::empty()).unwrap_err();
    assert!(err.is_validation(), "{err}");
}
