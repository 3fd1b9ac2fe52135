//! Out-of-process backend reached through a spool directory.
//!
//! The model worker publishes `descriptor.json` (a [`BackendDescriptor`]) in
//! the spool root. For each call the client writes
//!
//! * `requests/<id>.spct`: the input tensor, `[3, H, W]` channel planes for
//!   images or `[n]` for activations;
//! * `requests/<id>.json`: `{"op", "layer", "class", "source"}` with `op` one
//!   of `activations`, `feature_maps`, `logit`.
//!
//! The worker answers with `responses/<id>.<n>.spct` output tensors followed
//! by `responses/<id>.json`: `{"ok": true, "outputs": [...]}` or
//! `{"ok": false, "error": "..."}`. Outputs are `[len]` for `activations`,
//! maps and gradients `[C, H, W]` for `feature_maps`, and `[1]` logit plus
//! `[n]` gradient for `logit`. Every file is written under a temporary name
//! and renamed into place; JSON files are written last.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::tensor::{write_atomic, Tensor};
use super::{
    ActivationVector, BackendDescriptor, FeatureMapBundle, LogitGradient, ModelBackend,
};
use crate::error::{Error, Result};
use crate::image::Image;

pub const DESCRIPTOR_FILE: &str = "descriptor.json";
const REQUESTS: &str = "requests";
const RESPONSES: &str = "responses";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Activations,
    FeatureMaps,
    Logit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Request {
    pub op: Op,
    pub layer: String,
    pub class: Option<usize>,
    pub source: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Response {
    pub ok: bool,
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default)]
    pub error: Option<String>,
}

pub struct SpoolBackend {
    dir: PathBuf,
    descriptor: BackendDescriptor,
    next_id: AtomicU64,
    timeout: Duration,
}

impl SpoolBackend {
    /// Reads the worker's descriptor from `dir`.
    pub fn connect(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let path = dir.join(DESCRIPTOR_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let descriptor: BackendDescriptor = serde_json::from_slice(&bytes)?;
        descriptor.validate()?;
        for sub in [REQUESTS, RESPONSES] {
            fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
        }
        Ok(SpoolBackend {
            dir,
            descriptor,
            next_id: AtomicU64::new(0),
            timeout: Duration::from_secs(60),
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn call(&self, request: &Request, input: &Tensor) -> Result<Vec<Tensor>> {
        let n = self.next_id.fetch_add(1, Ordering::Relaxed);
        let id = format!("{}-{n:010}", std::process::id());
        let req_dir = self.dir.join(REQUESTS);
        input.write_atomic(&req_dir.join(format!("{id}.spct")))?;
        write_atomic(&req_dir.join(format!("{id}.json")), &serde_json::to_vec(request)?)?;

        let resp_dir = self.dir.join(RESPONSES);
        let resp_path = resp_dir.join(format!("{id}.json"));
        let deadline = Instant::now() + self.timeout;
        let mut wait = Duration::from_micros(200);
        while !resp_path.exists() {
            if Instant::now() > deadline {
                return Err(Error::Backend(format!("no response for request {id}")));
            }
            thread::sleep(wait);
            wait = (wait * 2).min(Duration::from_millis(20));
        }
        let response: Response = serde_json::from_slice(
            &fs::read(&resp_path).map_err(|e| Error::io(&resp_path, e))?,
        )?;
        let outputs = response
            .outputs
            .iter()
            .map(|name| Tensor::read(&resp_dir.join(name)))
            .collect::<Result<Vec<_>>>();
        for name in &response.outputs {
            let _ = fs::remove_file(resp_dir.join(name));
        }
        let _ = fs::remove_file(&resp_path);
        if !response.ok {
            return Err(Error::Backend(
                response.error.unwrap_or_else(|| "worker reported failure".into()),
            ));
        }
        outputs
    }
}

fn image_tensor(image: &Image) -> Result<Tensor> {
    let planes = image.planes();
    let data: Vec<f64> = planes.concat();
    Tensor::from_f64(vec![3, image.height(), image.width()], &data)
}

fn tensor_image(t: &Tensor, source: &str) -> Result<Image> {
    match t.dims[..] {
        [3, h, w] => {
            let v = t.to_f64();
            let n = h * w;
            let planes = [v[..n].to_vec(), v[n..2 * n].to_vec(), v[2 * n..].to_vec()];
            Ok(Image::from_planes(h, w, &planes, source))
        }
        _ => Err(Error::Tensor(format!("image tensor must be [3, H, W], got {:?}", t.dims))),
    }
}

fn expect_outputs(out: &[Tensor], n: usize) -> Result<()> {
    if out.len() != n {
        return Err(Error::Backend(format!("expected {n} output tensors, got {}", out.len())));
    }
    Ok(())
}

impl ModelBackend for SpoolBackend {
    fn name(&self) -> &str {
        "spool"
    }

    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn activations(&self, image: &Image, layer_id: &str) -> Result<ActivationVector> {
        let layer = self.descriptor.layer(layer_id)?;
        self.descriptor.check_input(image)?;
        let request = Request {
            op: Op::Activations,
            layer: layer_id.into(),
            class: None,
            source: image.source_id().into(),
        };
        let out = self.call(&request, &image_tensor(image)?)?;
        expect_outputs(&out, 1)?;
        if out[0].data.len() != layer.len {
            return Err(Error::Shape(format!(
                "worker returned {} values for layer `{layer_id}` of length {}",
                out[0].data.len(),
                layer.len
            )));
        }
        Ok(ActivationVector {
            values: out[0].to_f64(),
            layer_id: layer_id.into(),
            source: image.source_id().into(),
        })
    }

    fn feature_maps_and_gradients(
        &self,
        image: &Image,
        k: usize,
        layer_id: &str,
    ) -> Result<FeatureMapBundle> {
        self.descriptor.check_class(k)?;
        let shape = self
            .descriptor
            .layer(layer_id)?
            .spatial
            .ok_or_else(|| Error::NotSpatial(layer_id.into()))?;
        self.descriptor.check_input(image)?;
        let request = Request {
            op: Op::FeatureMaps,
            layer: layer_id.into(),
            class: Some(k),
            source: image.source_id().into(),
        };
        let out = self.call(&request, &image_tensor(image)?)?;
        expect_outputs(&out, 2)?;
        FeatureMapBundle::new(shape, out[0].to_f64(), out[1].to_f64())
    }

    fn logit_from_activation(
        &self,
        activation: &ActivationVector,
        k: usize,
    ) -> Result<LogitGradient> {
        self.descriptor.check_class(k)?;
        let layer = self.descriptor.layer(&activation.layer_id)?;
        if activation.values.len() != layer.len {
            return Err(Error::Shape(format!(
                "activation has {} values, layer `{}` has {}",
                activation.values.len(),
                layer.id,
                layer.len
            )));
        }
        let request = Request {
            op: Op::Logit,
            layer: layer.id.clone(),
            class: Some(k),
            source: activation.source.clone(),
        };
        let input = Tensor::from_f64(vec![activation.values.len()], &activation.values)?;
        let out = self.call(&request, &input)?;
        expect_outputs(&out, 2)?;
        if out[0].data.len() != 1 || out[1].data.len() != layer.len {
            return Err(Error::Shape("malformed logit response".into()));
        }
        Ok(LogitGradient {
            logit: out[0].data[0] as f64,
            gradient: out[1].to_f64(),
        })
    }
}

/// Writes `descriptor.json` and the request/response folders.
pub fn publish_descriptor(dir: &Path, descriptor: &BackendDescriptor) -> Result<()> {
    for sub in [REQUESTS, RESPONSES] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    write_atomic(&dir.join(DESCRIPTOR_FILE), &serde_json::to_vec_pretty(descriptor)?)
}

/// Answers every request currently in the spool using `backend`; returns the
/// number served. Reference worker for adapters written in other languages.
pub fn serve_pending(dir: &Path, backend: &dyn ModelBackend) -> Result<usize> {
    let req_dir = dir.join(REQUESTS);
    let mut pending: Vec<PathBuf> = fs::read_dir(&req_dir)
        .map_err(|e| Error::io(&req_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    pending.sort();
    for req_path in &pending {
        let id = req_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let input_path = req_dir.join(format!("{id}.spct"));
        let result = fs::read(req_path)
            .map_err(|e| Error::io(req_path, e))
            .and_then(|b| Ok(serde_json::from_slice::<Request>(&b)?))
            .and_then(|req| Ok((req, Tensor::read(&input_path)?)))
            .and_then(|(req, input)| answer(backend, &req, &input));
        let resp_dir = dir.join(RESPONSES);
        let response = match result {
            Ok(outputs) => {
                let mut names = Vec::with_capacity(outputs.len());
                for (i, t) in outputs.iter().enumerate() {
                    let name = format!("{id}.{i}.spct");
                    t.write_atomic(&resp_dir.join(&name))?;
                    names.push(name);
                }
                Response { ok: true, outputs: names, error: None }
            }
            Err(e) => Response { ok: false, outputs: vec![], error: Some(e.to_string()) },
        };
        let _ = fs::remove_file(&input_path);
        let _ = fs::remove_file(req_path);
        write_atomic(&resp_dir.join(format!("{id}.json")), &serde_json::to_vec(&response)?)?;
    }
    Ok(pending.len())
}

/// Serves requests until `stop` is set.
pub fn serve(dir: &Path, backend: &dyn ModelBackend, stop: &AtomicBool) -> Result<()> {
    while !stop.load(Ordering::Relaxed) {
        if serve_pending(dir, backend)? == 0 {
            thread::sleep(Duration::from_millis(1));
        }
    }
    Ok(())
}

fn answer(backend: &dyn ModelBackend, req: &Request, input: &Tensor) -> Result<Vec<Tensor>> {
    let class = || req.class.ok_or_else(|| Error::Backend("request lacks a class".into()));
    match req.op {
        Op::Activations => {
            let act = backend.activations(&tensor_image(input, &req.source)?, &req.layer)?;
            Ok(vec![Tensor::from_f64(vec![act.values.len()], &act.values)?])
        }
        Op::FeatureMaps => {
            let b = backend.feature_maps_and_gradients(
                &tensor_image(input, &req.source)?,
                class()?,
                &req.layer,
            )?;
            let dims = vec![b.channels, b.height, b.width];
            Ok(vec![Tensor::from_f64(dims.clone(), &b.maps)?, Tensor::from_f64(dims, &b.grads)?])
        }
        Op::Logit => {
            let act = ActivationVector {
                values: input.to_f64(),
                layer_id: req.layer.clone(),
                source: req.source.clone(),
            };
            let g = backend.logit_from_activation(&act, class()?)?;
            Ok(vec![
                Tensor::from_f64(vec![1], &[g.logit])?,
                Tensor::from_f64(vec![g.gradient.len()], &g.gradient)?,
            ])
        }
    }
}
