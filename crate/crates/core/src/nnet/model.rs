use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arch::{Architecture, BufferIndex, ParamIndex, Shapes};
use super::scalar::Float;
use crate::error::{Error, Result};

/// Trainable weights and batch-norm running statistics of one detector.
///
/// Tensors live in two flat vectors whose layout is given by
/// [`Architecture::tensors`] and [`Architecture::buffers`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Float = f32> {
    arch: Architecture,
    shapes: Shapes,
    index: ParamIndex,
    buffer_index: BufferIndex,
    pub weights: Vec<T>,
    pub buffers: Vec<T>,
}

/// Single-precision model used for training and inference.
pub type Model = ModelParams<f32>;

/// Upper bound of the He-uniform initializer for a given fan-in.
pub fn he_uniform_limit(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

impl<T: Float> ModelParams<T> {
    /// He-uniform weights, zero biases, unit scales, zero shifts, running
    /// mean 0 and running variance 1.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fans = model.fan_ins();
        let idx = model.index.clone();
        for (range, fan_in) in [
            (idx.conv1_w, fans[0]),
            (idx.conv2_w, fans[1]),
            (idx.conv2d_w, fans[2]),
            (idx.dense_w, fans[3]),
        ] {
            let limit = he_uniform_limit(fan_in);
            for w in &mut model.weights[range] {
                *w = T::from_f64(rng.random_range(-limit..limit));
            }
        }
        Ok(model)
    }

    /// All weights zero except batch-norm scales (1) and running variances (1).
    pub fn zeros(arch: Architecture) -> Result<Self> {
        let shapes = arch.validate()?;
        let index = arch.param_index();
        let buffer_index = arch.buffer_index();
        let mut weights = vec![T::ZERO; index.len];
        for r in [&index.bn1_gamma, &index.bn2_gamma, &index.bn3_gamma] {
            weights[r.clone()].fill(T::ONE);
        }
        let mut buffers = vec![T::ZERO; buffer_index.len];
        for r in &buffer_index.bn_var {
            buffers[r.clone()].fill(T::ONE);
        }
        Ok(Self {
            arch,
            shapes,
            index,
            buffer_index,
            weights,
            buffers,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn shapes(&self) -> &Shapes {
        &self.shapes
    }

    pub fn index(&self) -> &ParamIndex {
        &self.index
    }

    pub fn buffer_index(&self) -> &BufferIndex {
        &self.buffer_index
    }

    /// Fan-in of conv1, conv2, conv2d and dense.
    pub fn fan_ins(&self) -> [usize; 4] {
        let a = &self.arch;
        [
            a.in_channels * a.conv1_kernel,
            a.conv1_filters * a.conv2_kernel,
            a.conv2d_kernel[0] * a.conv2d_kernel[1],
            a.conv2d_filters,
        ]
    }

    /// Named weight or buffer tensor.
    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        if let Some(t) = self.arch.tensors().into_iter().find(|t| t.name == name) {
            return Some(&self.weights[t.range]);
        }
        self.arch
            .buffers()
            .into_iter()
            .find(|t| t.name == name)
            .map(|t| &self.buffers[t.range])
    }

    /// Name of the tensor holding flat weight index `i`.
    pub fn weight_name(&self, i: usize) -> Option<&'static str> {
        self.arch.tensors().into_iter().find(|t| t.range.contains(&i)).map(|t| t.name)
    }

    pub fn cast<U: Float>(&self) -> ModelParams<U> {
        ModelParams {
            arch: self.arch.clone(),
            shapes: self.shapes,
            index: self.index.clone(),
            buffer_index: self.buffer_index.clone(),
            weights: self.weights.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            buffers: self.buffers.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Every tensor finite and every running variance non-negative.
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.weights.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("model weight {} [{i}]", self.weight_name(i).unwrap_or("?"))));
        }
        if self.buffers.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model batch-norm statistics".into()));
        }
        for r in &self.buffer_index.bn_var {
            if self.buffers[r.clone()].iter().any(|v| *v < T::ZERO) {
                return Err(Error::invalid("negative batch-norm running variance"));
            }
        }
        Ok(())
    }
}

pub const MODEL_FORMAT: &str = "headimpact-cnn";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// On-disk JSON container of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub architecture_hash: String,
    pub tensors: Vec<NamedTensor>,
    /// Path or identifier of the training manifest that produced the model.
    #[serde(default)]
    pub manifest: Option<String>,
}

impl Model {
    pub fn to_file(&self, manifest: Option<String>) -> ModelFile {
        let tensors = self
            .arch
            .tensors()
            .into_iter()
            .map(|t| (t, &self.weights))
            .chain(self.arch.buffers().into_iter().map(|t| (t, &self.buffers)))
            .map(|(t, src)| NamedTensor {
                name: t.name.to_string(),
                shape: t.shape,
                data: src[t.range].to_vec(),
            })
            .collect();
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_FORMAT_VERSION,
            architecture: self.arch.clone(),
            architecture_hash: self.arch.hash(),
            tensors,
            manifest,
        }
    }

    /// Rebuilds the model; the stored hash must match the stored
    /// architecture and, if given, the expected one.
    pub fn from_file(file: &ModelFile, expected: Option<&Architecture>) -> Result<Self> {
        if file.format != MODEL_FORMAT || file.version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format {} v{}",
                file.format, file.version
            )));
        }
        let actual = file.architecture.hash();
        if actual != file.architecture_hash {
            return Err(Error::ArchitectureMismatch {
                expected: actual,
                found: file.architecture_hash.clone(),
            });
        }
        if let Some(arch) = expected {
            let want = arch.hash();
            if want != file.architecture_hash {
                return Err(Error::ArchitectureMismatch {
                    expected: want,
                    found: file.architecture_hash.clone(),
                });
            }
        }
        let mut model = Self::zeros(file.architecture.clone())?;
        let specs = model.arch.tensors().into_iter().map(|t| (t, false));
        let specs = specs.chain(model.arch.buffers().into_iter().map(|t| (t, true)));
        for (spec, is_buffer) in specs.collect::<Vec<_>>() {
            let stored = file
                .tensors
                .iter()
                .find(|t| t.name == spec.name)
                .ok_or_else(|| Error::ShapeMismatch(format!("model file lacks tensor {}", spec.name)))?;
            if stored.shape != spec.shape || stored.data.len() != spec.range.len() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {}: expected shape {:?}, found {:?}",
                    spec.name, spec.shape, stored.shape
                )));
            }
            let dst = if is_buffer { &mut model.buffers } else { &mut model.weights };
            dst[spec.range].copy_from_slice(&stored.data);
        }
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>, manifest: Option<String>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(&self.to_file(manifest))?;
        fs::write(path, json).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>, expected: Option<&Architecture>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::file(path, e))?;
        Self::from_file(&file, expected)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = Model::init(Architecture::reduced(), 7).unwrap();
        let b = Model::init(Architecture::reduced(), 7).unwrap();
        let c = Model::init(Architecture::reduced(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.weights, c.weights);
    }

    #[test]
    fn init_respects_he_bounds_and_constant_tensors() {
        let m = Model::init(Architecture::default(), 1).unwrap();
        let fans = [6 * 5, 64 * 10, 3 * 15, 64];
        for (name, fan) in ["conv1.weight", "conv2.weight", "conv2d.weight", "dense.weight"].iter().zip(fans) {
            let limit = (6.0f64 / fan as f64).sqrt() as f32;
            let w = m.tensor(name).unwrap();
            assert!(w.iter().all(|v| v.abs() <= limit), "{name}");
            // Draws fill most of the interval.
            let max = w.iter().fold(0.0f32, |a, v| a.max(v.abs()));
            assert!(max > 0.5 * limit, "{name}");
        }
        for name in ["conv1.bias", "conv2.bias", "conv2d.bias", "dense.bias", "bn1.beta", "bn3.running_mean"] {
            assert!(m.tensor(name).unwrap().iter().all(|v| *v == 0.0), "{name}");
        }
        for name in ["bn2.gamma", "bn2.running_var"] {
            assert!(m.tensor(name).unwrap().iter().all(|v| *v == 1.0), "{name}");
        }
        m.validate().unwrap();
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut m = Model::init(Architecture::reduced(), 3).unwrap();
        m.buffers[2] = 0.25;
        m.save(&path, Some("manifest.json".into())).unwrap();
        let back = Model::load(&path, Some(&Architecture::reduced())).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn load_rejects_architecture_mismatch() {
        let m = Model::init(Architecture::reduced(), 3).unwrap();
        let file = m.to_file(None);
        let err = Model::from_file(&file, Some(&Architecture::default())).unwrap_err();
        assert!(matches!(err, Error::ArchitectureMismatch { .. }));

        let mut tampered = file.clone();
        tampered.architecture.conv1_filters = 5;
        let err = Model::from_file(&tampered, None).unwrap_err();
        assert!(matches!(err, Error::ArchitectureMismatch { .. }));
    }

    #[test]
    fn negative_running_variance_is_invalid() {
        let mut m = Model::init(Architecture::reduced(), 3).unwrap();
        let r = m.buffer_index().bn_var[1].start;
        m.buffers[r] = -1.0;
        assert!(m.validate().is_err());
    }
}
