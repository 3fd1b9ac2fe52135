use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;

use space_core::backend::spool::{publish_descriptor, serve, SpoolBackend};
use space_core::backend::{AnalyticBackend, BackendOptions, BackendRegistry, ModelBackend};
use space_core::config::RunConfig;
use space_core::image::Image;
use space_core::pipeline;
use space_core::synth;

struct Worker {
    stop: Arc<AtomicBool>,
    handle: Option<thread::JoinHandle<()>>,
}

impl Worker {
    fn start(dir: &Path) -> Self {
        let model = AnalyticBackend::blob_detector(72).unwrap();
        publish_descriptor(dir, model.descriptor()).unwrap();
        let stop = Arc::new(AtomicBool::new(false));
        let (dir, flag) = (dir.to_path_buf(), Arc::clone(&stop));
        let handle = thread::spawn(move || serve(&dir, &model, &flag).unwrap());
        Worker {
            stop,
            handle: Some(handle),
        }
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            h.join().unwrap();
        }
    }
}

fn probe_image() -> Image {
    Image::from_fn(72, 72, "probe", |r, c| {
        let v = if (30..39).contains(&r) && (20..29).contains(&c) { 0.95 } else { ((r * 7 + c * 3) % 50) as f32 / 100.0 };
        [v, v, v]
    })
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol * (1.0 + y.abs()), "{x} vs {y}");
    }
}

#[test]
fn spool_answers_match_the_in_process_model() {
    let dir = tempfile::tempdir().unwrap();
    let _worker = Worker::start(dir.path());
    let local = AnalyticBackend::blob_detector(72).unwrap();
    let remote = SpoolBackend::connect(dir.path()).unwrap();
    assert_eq!(remote.descriptor(), local.descriptor());

    let img = probe_image();
    for layer in ["conv", "pool"] {
        let (r, l) = (remote.activations(&img, layer).unwrap(), local.activations(&img, layer).unwrap());
        assert_eq!(r.layer_id, layer);
        assert_close(&r.values, &l.values, 1e-6);
    }

    let (r, l) = (
        remote.feature_maps_and_gradients(&img, 1, "conv").unwrap(),
        local.feature_maps_and_gradients(&img, 1, "conv").unwrap(),
    );
    assert_eq!((r.channels, r.height, r.width), (l.channels, l.height, l.width));
    assert_close(&r.maps, &l.maps, 1e-6);
    assert_close(&r.grads, &l.grads, 1e-6);

    let act = local.activations(&img, "pool").unwrap();
    let (r, l) = (remote.logit_from_activation(&act, 0).unwrap(), local.logit_from_activation(&act, 0).unwrap());
    assert!((r.logit - l.logit).abs() < 1e-4);
    assert_close(&r.gradient, &l.gradient, 1e-6);
}

#[test]
fn worker_errors_reach_the_client() {
    let dir = tempfile::tempdir().unwrap();
    let _worker = Worker::start(dir.path());
    let remote = SpoolBackend::connect(dir.path()).unwrap();
    let err = remote.activations(&probe_image(), "nope").unwrap_err();
    assert!(err.to_string().contains("nope"), "{err}");
}

#[test]
fn missing_descriptor_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(SpoolBackend::connect(dir.path()).is_err());
    let opts = BackendOptions::default();
    assert!(BackendRegistry::builtin().create("spool", &opts).is_err());
}

#[test]
fn pipeline_runs_through_the_spool() {
    let dir = tempfile::tempdir().unwrap();
    let spool = dir.path().join("spool");
    std::fs::create_dir_all(&spool).unwrap();
    let _worker = Worker::start(&spool);
    let data = dir.path().join("data");
    synth::write_recipe("blobs-small", &data, 2).unwrap();

    let backend = BackendRegistry::builtin()
        .create(
            "spool",
            &BackendOptions {
                spool_dir: Some(spool.clone()),
                ..Default::default()
            },
        )
        .unwrap();
    let mut cfg = RunConfig::new(1, 8);
    cfg.n_pca = 5;
    cfg.tcav_repetitions = 3;
    cfg.n_random_concepts = 3;
    let result = pipeline::run(&cfg, &data, backend.as_ref()).unwrap();
    assert!(!result.concepts.is_empty());
    assert!(result.concepts.iter().all(|c| !c.concept.is_empty()));
}
