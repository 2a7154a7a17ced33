//! The complete network: parameters, image preparation and checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use querytrack_autograd::optim::AdamW;
use querytrack_autograd::{ParamStore, Tensor, Var};
use querytrack_core::io::archive::Archive;
use querytrack_core::io::image::RgbImage;

use crate::config::ModelConfig;
use crate::encoder::EncoderMemory;
use crate::error::{ModelError, Result};
use crate::nn::{Ctx, Init};
use crate::{backbone, decoder, encoder, tan};

pub const CHECKPOINT_TAG: &str = "querytrack-model";

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
}

impl Model {
    /// Freshly initialized weights, reproducible from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(&mut store, seed);
        backbone::init(&mut init, &config);
        encoder::init(&mut init, &config);
        decoder::init(&mut init, &config);
        tan::init(&mut init, &config);
        Ok(Self { config, store })
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }
}

/// Backbone, neck and hybrid encoder over `images: [N, 3, H, W]`.
pub fn encode(ctx: &mut Ctx, cfg: &ModelConfig, images: Var) -> Result<Vec<EncoderMemory>> {
    let s = ctx.g.shape(images).to_vec();
    if s.len() != 4 || s[1] != 3 || s[2] != cfg.input_height || s[3] != cfg.input_width {
        return Err(ModelError::Input(format!(
            "expected images of shape [N, 3, {}, {}], got {s:?}",
            cfg.input_height, cfg.input_width
        )));
    }
    let pyramid = backbone::forward(ctx, cfg, images);
    encoder::forward(ctx, cfg, pyramid)
}

/// Resizes to the network input and packs as `[3, H, W]` bytes.
pub fn prepare_image(img: &RgbImage, cfg: &ModelConfig) -> Vec<u8> {
    let (w, h) = (cfg.input_width, cfg.input_height);
    let resized;
    let src = if img.width as usize == w && img.height as usize == h {
        img
    } else {
        resized = img.resized(w as u32, h as u32);
        &resized
    };
    let mut out = vec![0u8; 3 * w * h];
    for (p, px) in src.data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * w * h + p] = px[c];
        }
    }
    out
}

/// Stacks prepared images into `[N, 3, H, W]` scaled to `[0, 1]`.
pub fn batch_tensor(images: &[&[u8]], cfg: &ModelConfig) -> Tensor {
    let data = images
        .iter()
        .flat_map(|im| im.iter().map(|&b| b as f64 / 255.0))
        .collect();
    Tensor::from_vec(&[images.len(), 3, cfg.input_height, cfg.input_width], data)
}

/// Optimizer and schedule position stored next to the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingState {
    pub stage: u8,
    pub iteration: usize,
}

fn insert(archive: &mut Archive, name: String, t: &Tensor) -> Result<()> {
    Ok(archive.insert(name, t.shape().to_vec(), t.data().to_vec())?)
}

pub fn save_checkpoint(path: &Path, model: &Model, state: Option<(&TrainingState, &AdamW)>) -> Result<()> {
    let mut a = Archive::new(CHECKPOINT_TAG);
    let cfg = toml::to_string(&model.config).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    a.metadata.insert("model_config".into(), cfg);
    for (k, t) in model.store.params() {
        insert(&mut a, format!("param/{k}"), t)?;
    }
    for (k, t) in model.store.buffers() {
        insert(&mut a, format!("buffer/{k}"), t)?;
    }
    if let Some((s, opt)) = state {
        let (step, m, v) = opt.state();
        a.metadata.insert("stage".into(), s.stage.to_string());
        a.metadata.insert("iteration".into(), s.iteration.to_string());
        a.metadata.insert("adam_step".into(), step.to_string());
        for (k, t) in m {
            insert(&mut a, format!("adam_m/{k}"), t)?;
        }
        for (k, t) in v {
            insert(&mut a, format!("adam_v/{k}"), t)?;
        }
    }
    Ok(a.save(path)?)
}

/// A decoded checkpoint.
pub struct Checkpoint {
    pub model: Model,
    /// Present when the checkpoint was written during training.
    pub state: Option<(TrainingState, u64, BTreeMap<String, Tensor>, BTreeMap<String, Tensor>)>,
}

fn meta<'a>(a: &'a Archive, key: &str) -> Result<&'a str> {
    a.metadata
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| ModelError::Checkpoint(format!("missing metadata `{key}`")))
}

fn parse_meta<T: std::str::FromStr>(a: &Archive, key: &str) -> Result<T> {
    meta(a, key)?
        .parse()
        .map_err(|_| ModelError::Checkpoint(format!("metadata `{key}` is malformed")))
}

/// Loads a checkpoint; when `expected` is given its architecture must match.
pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    let a = Archive::load(path)?;
    Checkpoint::from_archive(&a, expected).map_err(|e| match e {
        ModelError::Checkpoint(m) => ModelError::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

impl Checkpoint {
    pub fn decode(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Self> {
        Self::from_archive(&Archive::decode(bytes)?, expected)
    }

    pub fn from_archive(a: &Archive, expected: Option<&ModelConfig>) -> Result<Self> {
        decode_archive(a, expected)
    }
}

fn decode_archive(a: &Archive, expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    if a.tag != CHECKPOINT_TAG {
        return Err(ModelError::Checkpoint("not a model checkpoint".into()));
    }
    let config: ModelConfig = toml::from_str(meta(a, "model_config")?)
        .map_err(|e| ModelError::Checkpoint(format!("model_config: {e}")))?;
    if let Some(exp) = expected {
        if exp != &config {
            return Err(ModelError::Checkpoint("architecture does not match the configuration".into()));
        }
    }
    config
        .validate()
        .map_err(|e| ModelError::Checkpoint(format!("model_config: {e}")))?;
    let mut model = Model::new(config, 0)?;
    let tensor = |name: &str| -> Result<Tensor> {
        let arr = a
            .arrays
            .get(name)
            .ok_or_else(|| ModelError::Checkpoint(format!("missing array `{name}`")))?;
        Ok(Tensor::from_vec(&arr.dims, arr.data.clone()))
    };
    let names: Vec<String> = model.store.params().map(|(k, _)| k.clone()).collect();
    for k in names {
        let t = tensor(&format!("param/{k}"))?;
        let slot = model.store.get_mut(&k).expect("listed");
        if slot.shape() != t.shape() {
            return Err(ModelError::Checkpoint(format!("parameter `{k}` has shape {:?}", t.shape())));
        }
        *slot = t;
    }
    let names: Vec<String> = model.store.buffers().map(|(k, _)| k.clone()).collect();
    for k in names {
        let t = tensor(&format!("buffer/{k}"))?;
        let slot = model.store.buffer_mut(&k).expect("listed");
        if slot.shape() != t.shape() {
            return Err(ModelError::Checkpoint(format!("buffer `{k}` has shape {:?}", t.shape())));
        }
        *slot = t;
    }
    let expected_arrays = model.store.num_params() + model.store.buffers().count();
    let state = if a.metadata.contains_key("adam_step") {
        let ts = TrainingState {
            stage: parse_meta(a, "stage")?,
            iteration: parse_meta(a, "iteration")?,
        };
        let step: u64 = parse_meta(a, "adam_step")?;
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (k, p) in model.store.params() {
            for (prefix, slot) in [("adam_m", &mut m), ("adam_v", &mut v)] {
                if let Some(arr) = a.arrays.get(&format!("{prefix}/{k}")) {
                    if arr.dims != p.shape() {
                        return Err(ModelError::Checkpoint(format!("{prefix} of `{k}` has shape {:?}", arr.dims)));
                    }
                    slot.insert(k.clone(), Tensor::from_vec(&arr.dims, arr.data.clone()));
                }
            }
        }
        if a.arrays.len() != expected_arrays + m.len() + v.len() {
            return Err(ModelError::Checkpoint("unexpected arrays in checkpoint".into()));
        }
        Some((ts, step, m, v))
    } else {
        if a.arrays.len() != expected_arrays {
            return Err(ModelError::Checkpoint("unexpected arrays in checkpoint".into()));
        }
        None
    };
    Ok(Checkpoint { model, state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use querytrack_autograd::Graph;

    #[test]
    fn same_seed_same_weights() {
        let a = Model::new(ModelConfig::tiny(), 3).unwrap();
        let b = Model::new(ModelConfig::tiny(), 3).unwrap();
        let c = Model::new(ModelConfig::tiny(), 4).unwrap();
        let eq = |x: &Model, y: &Model| x.store.params().zip(y.store.params()).all(|(p, q)| p == q);
        assert!(eq(&a, &b));
        assert!(!eq(&a, &c));
    }

    #[test]
    fn image_packing_is_planar() {
        let mut cfg = ModelConfig::tiny();
        cfg.input_width = 64;
        cfg.input_height = 64;
        let mut img = RgbImage::new(64, 64);
        img.put(1, 0, [10, 20, 30]);
        let p = prepare_image(&img, &cfg);
        assert_eq!((p[1], p[64 * 64 + 1], p[2 * 64 * 64 + 1]), (10, 20, 30));
        let t = batch_tensor(&[&p], &cfg);
        assert_eq!(t.shape(), &[1, 3, 64, 64]);
        assert!((t.data()[1] - 10.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_wrong_input_size() {
        let m = Model::new(ModelConfig::tiny(), 0).unwrap();
        let mut g = Graph::inference();
        let x = g.constant(Tensor::zeros(&[1, 3, 32, 64]));
        let mut ctx = Ctx::new(&mut g, &m.store, false);
        assert!(matches!(encode(&mut ctx, &m.config, x), Err(ModelError::Input(_))));
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.qtar");
        let m = Model::new(ModelConfig::tiny(), 5).unwrap();
        save_checkpoint(&path, &m, None).unwrap();
        let back = load_checkpoint(&path, Some(&m.config)).unwrap();
        assert!(back.state.is_none());
        assert!(m.store.params().zip(back.model.store.params()).all(|(p, q)| p == q));
        let mut other = m.config.clone();
        other.num_queries += 1;
        assert!(matches!(load_checkpoint(&path, Some(&other)), Err(ModelError::Checkpoint(_))));
    }

    #[test]
    fn malformed_optimizer_state_is_rejected() {
        let m = Model::new(ModelConfig::tiny(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.qtar");
        let opt = AdamW::new(1e-3, 0.0);
        save_checkpoint(&path, &m, Some((&TrainingState { stage: 1, iteration: 0 }, &opt))).unwrap();
        let mut a = Archive::load(&path).unwrap();
        let (k, p) = m.store.params().next().unwrap();
        a.insert(format!("adam_m/{k}"), vec![p.data().len() + 1], vec![0.0; p.data().len() + 1]).unwrap();
        a.metadata.insert("adam_step".into(), "1".into());
        assert!(matches!(Checkpoint::decode(&a.encode(), None), Err(ModelError::Checkpoint(_))));
        let mut b = Archive::load(&path).unwrap();
        b.tag = "other".into();
        assert!(matches!(Checkpoint::decode(&b.encode(), None), Err(ModelError::Checkpoint(_))));
        assert!(Checkpoint::decode(&Archive::load(&path).unwrap().encode(), Some(&m.config)).is_ok());
    }
}
