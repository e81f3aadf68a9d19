use std::num::NonZeroUsize;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fabric::CostModel;
use crate::optim::ExecMode;
use crate::sharding::{validate_params, Mesh, ParamSpec};
use crate::tensor::MuonHyper;

/// Name of the built-in Motif-2-12.7B parameter preset.
pub const MOTIF_PRESET: &str = "motif2-12.7b";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Distributed,
    #[default]
    Parallel,
}

/// A fully validated experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub precision: Precision,
    pub optimizer: OptimizerKind,
    pub pipeline: bool,
    pub sort_by_flops: bool,
    pub chunk_size: NonZeroUsize,
    pub warmup_depth: usize,
    pub steps: usize,
    /// Numerics and the oracle cross-check run only when the model has at
    /// most this many parameters; larger models are simulated by shape.
    pub verify_cap: usize,
    pub exec: ExecMode,
    pub model: Vec<ParamSpec>,
    pub mesh: Mesh,
    pub hyper: MuonHyper,
    pub cost_model: CostModel,
}

impl ExperimentConfig {
    /// Defaults for every knob around the given model.
    pub fn new(model: Vec<ParamSpec>, mesh: Mesh) -> Self {
        ExperimentConfig {
            seed: 0,
            precision: Precision::F64,
            optimizer: OptimizerKind::Parallel,
            pipeline: true,
            sort_by_flops: true,
            chunk_size: NonZeroUsize::new(32).expect("non-zero"),
            warmup_depth: 2,
            steps: 1,
            verify_cap: 64,
            exec: ExecMode::Serial,
            model,
            mesh,
            hyper: MuonHyper::default(),
            cost_model: CostModel::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.is_empty() {
            return Err(Error::Config("model: parameter list is empty".into()));
        }
        validate_params(&self.model)?;
        self.mesh.validate()?;
        self.hyper.validate()?;
        self.cost_model.validate()?;
        if self.steps == 0 {
            return Err(Error::Config("steps: must be at least 1".into()));
        }
        if self.warmup_depth == 0 {
            return Err(Error::Config("warmup_depth: must be at least 1".into()));
        }
        Ok(())
    }
}

/// Attention and feed-forward matrices of Motif-2-12.7B: hidden 4096,
/// feed-forward 16384, 40 layers, 40 query heads and 16 KV heads of width
/// 128. Embeddings and the LM head are not Muon parameters and are left out.
pub fn motif_2_12_7b() -> Vec<ParamSpec> {
    const HIDDEN: usize = 4096;
    const FF: usize = 16384;
    const LAYERS: usize = 40;
    const HEAD_DIM: usize = 128;
    const Q: usize = 40 * HEAD_DIM;
    const KV: usize = 16 * HEAD_DIM;

    let shapes = [
        ("attn.q", Q, HIDDEN),
        ("attn.k", KV, HIDDEN),
        ("attn.v", KV, HIDDEN),
        ("attn.o", HIDDEN, Q),
        ("mlp.gate", FF, HIDDEN),
        ("mlp.up", FF, HIDDEN),
        ("mlp.down", HIDDEN, FF),
    ];
    let mut params = Vec::with_capacity(LAYERS * shapes.len());
    for layer in 0..LAYERS {
        for (name, rows, cols) in shapes {
            let id = params.len();
            params.push(ParamSpec::new(id, format!("layers.{layer}.{name}"), rows, cols).with_elem_bytes(2));
        }
    }
    params
}

/// `count` parameters with seeded shapes between `min_dim` and `max_dim` on
/// each side, log-uniform so both small and large matrices appear.
pub fn synthetic_model(count: usize, min_dim: usize, max_dim: usize, seed: u64) -> Vec<ParamSpec> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = ((min_dim.max(1) as f64).ln(), (max_dim.max(min_dim).max(1) as f64).ln());
    let mut dim = move || (rng.random_range(lo..=hi)).exp().round() as usize;
    (0..count)
        .map(|id| ParamSpec::new(id, format!("w{id}"), dim(), dim()))
        .collect()
}

pub fn preset(name: &str) -> Result<Vec<ParamSpec>> {
    match name {
        MOTIF_PRESET => Ok(motif_2_12_7b()),
        other => Err(Error::Config(format!(
            "model.preset: unknown preset `{other}` (known: {MOTIF_PRESET})"
        ))),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    preset: Option<String>,
    params: Option<Vec<ParamSpec>>,
}

fn default_chunk() -> NonZeroUsize {
    NonZeroUsize::new(32).expect("non-zero")
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    precision: Precision,
    #[serde(default)]
    optimizer: OptimizerKind,
    #[serde(default = "yes")]
    pipeline: bool,
    #[serde(default = "yes")]
    sort_by_flops: bool,
    #[serde(default = "default_chunk")]
    chunk_size: NonZeroUsize,
    #[serde(default = "two")]
    warmup_depth: usize,
    #[serde(default = "one")]
    steps: usize,
    #[serde(default = "default_cap")]
    verify_cap: usize,
    #[serde(default)]
    exec: ExecMode,
    model: RawModel,
    #[serde(default)]
    mesh: Mesh,
    #[serde(default)]
    hyper: MuonHyper,
    #[serde(default)]
    cost_model: CostModel,
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

fn two() -> usize {
    2
}

fn default_cap() -> usize {
    64
}

/// 1-based line of the first `key = ...` or `[key]` in `src`.
fn key_line(src: &str, key: &str) -> Option<usize> {
    src.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
            || l.trim_start_matches('[').starts_with(key)
    })
    .map(|i| i + 1)
}

fn at_key(src: &str, key: &str, err: Error) -> Error {
    match key_line(src, key) {
        Some(line) => Error::Config(format!("line {line}: {err}")),
        None => err,
    }
}

/// Parse and validate a TOML experiment description.
pub fn parse_config(src: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
    let model = match (raw.model.preset, raw.model.params) {
        (Some(name), None) => preset(&name).map_err(|e| at_key(src, "preset", e))?,
        (None, Some(params)) => params,
        (Some(_), Some(_)) => {
            return Err(at_key(
                src,
                "model",
                Error::Config("model: give either `preset` or `params`, not both".into()),
            ))
        }
        (None, None) => {
            return Err(at_key(
                src,
                "model",
                Error::Config("model: parameter list is empty".into()),
            ))
        }
    };
    let config = ExperimentConfig {
        seed: raw.seed,
        precision: raw.precision,
        optimizer: raw.optimizer,
        pipeline: raw.pipeline,
        sort_by_flops: raw.sort_by_flops,
        chunk_size: raw.chunk_size,
        warmup_depth: raw.warmup_depth,
        steps: raw.steps,
        verify_cap: raw.verify_cap,
        exec: raw.exec,
        model,
        mesh: raw.mesh,
        hyper: raw.hyper,
        cost_model: raw.cost_model,
    };
    config.validate().map_err(|e| {
        let key = match &e {
            Error::Config(msg) => msg.split(':').next().unwrap_or("").to_string(),
            Error::InvalidMesh(_) => "mesh".into(),
            _ => "model".into(),
        };
        at_key(src, &key, e)
    })?;
    Ok(config)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let src = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&src).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_shapes() {
        let p = motif_2_12_7b();
        assert_eq!(p.len(), 280);
        assert_eq!((p[4].rows, p[4].cols), (16384, 4096));
        assert_eq!((p[6].rows, p[6].cols), (4096, 16384));
        assert!(p.iter().all(|s| s.elem_bytes == 2));
        assert_eq!(p[279].name, "layers.39.mlp.down");
    }

    #[test]
    fn minimal_preset_config() {
        let c = parse_config("[model]\npreset = \"motif2-12.7b\"\n[mesh]\ndp_shard = 8\n").unwrap();
        assert_eq!(c.model.len(), 280);
        assert_eq!(c.mesh.world_size(), 8);
        assert_eq!(c.chunk_size.get(), 32);
        assert!(c.pipeline && c.sort_by_flops);
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let err = parse_config("seed = 1\nbogus = 2\n[model]\npreset = \"motif2-12.7b\"\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus") && msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn zero_chunk_rejected() {
        let err = parse_config("chunk_size = 0\n[model]\npreset = \"motif2-12.7b\"\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 1") && msg.contains("chunk_size"), "{msg}");
    }

    #[test]
    fn empty_model_rejected() {
        let err = parse_config("[model]\nparams = []\n").unwrap_err();
        assert!(err.to_string().contains("empty"), "{err}");
        assert!(parse_config("[model]\n").is_err());
    }

    #[test]
    fn explicit_params() {
        let src = "precision = \"f32\"\n[model]\n[[model.params]]\nid = 3\nname = \"w\"\nrows = 8\ncols = 4\n";
        let c = parse_config(src).unwrap();
        assert_eq!(c.precision, Precision::F32);
        assert_eq!(c.model, vec![ParamSpec::new(3, "w", 8, 4)]);
    }
}
