use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::signals::{N_CHANNELS, STANDARD_GRAVITY, WINDOW_LEN};

/// Hyper-parameters that fix every tensor shape of the detector.
///
/// Block 1 and 2 are `conv1d (valid) -> ReLU -> max-pool -> batch norm ->
/// dropout`. Their outputs are stacked row-wise into a single-channel image
/// (block 2 right-padded with zeros to block 1's length), followed by
/// `conv2d -> ReLU -> global average pool -> batch norm -> dropout -> dense ->
/// softmax`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub in_channels: usize,
    pub input_len: usize,
    pub conv1_filters: usize,
    pub conv1_kernel: usize,
    pub conv2_filters: usize,
    pub conv2_kernel: usize,
    pub pool: usize,
    pub conv2d_filters: usize,
    /// (rows, columns).
    pub conv2d_kernel: [usize; 2],
    pub conv2d_stride: [usize; 2],
    pub n_classes: usize,
    pub dropout: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    /// Fixed per-channel multiplier applied to the input.
    pub input_scale: Vec<f64>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            in_channels: N_CHANNELS,
            input_len: WINDOW_LEN,
            conv1_filters: 64,
            conv1_kernel: 5,
            conv2_filters: 128,
            conv2_kernel: 10,
            pool: 2,
            conv2d_filters: 64,
            conv2d_kernel: [3, 15],
            conv2d_stride: [3, 1],
            n_classes: 2,
            dropout: 0.4,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
            input_scale: default_input_scale(),
        }
    }
}

/// Linear channels in units of 10 g, angular acceleration in krad/s^2.
pub fn default_input_scale() -> Vec<f64> {
    let lin = 1.0 / (10.0 * STANDARD_GRAVITY);
    vec![lin, lin, lin, 1e-3, 1e-3, 1e-3]
}

/// Derived lengths of every intermediate tensor (per sample).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shapes {
    /// Conv1 output length.
    pub l1: usize,
    /// Block 1 output length (after pooling); also the image width.
    pub p1: usize,
    pub l2: usize,
    pub p2: usize,
    pub img_h: usize,
    pub img_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Shapes {
    pub fn out_positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Location of each named tensor in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamIndex {
    pub conv1_w: Range<usize>,
    pub conv1_b: Range<usize>,
    pub bn1_gamma: Range<usize>,
    pub bn1_beta: Range<usize>,
    pub conv2_w: Range<usize>,
    pub conv2_b: Range<usize>,
    pub bn2_gamma: Range<usize>,
    pub bn2_beta: Range<usize>,
    pub conv2d_w: Range<usize>,
    pub conv2d_b: Range<usize>,
    pub bn3_gamma: Range<usize>,
    pub bn3_beta: Range<usize>,
    pub dense_w: Range<usize>,
    pub dense_b: Range<usize>,
    pub len: usize,
}

/// Location of the batch-norm running statistics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BufferIndex {
    pub bn_mean: [Range<usize>; 3],
    pub bn_var: [Range<usize>; 3],
    pub len: usize,
}

/// Name, shape and range of one tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub range: Range<usize>,
}

impl Architecture {
    /// Tiny variant used for gradient checks.
    pub fn reduced() -> Self {
        Self {
            input_len: 60,
            conv1_filters: 4,
            conv2_filters: 8,
            conv2d_filters: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<Shapes> {
        let sizes = [
            ("in_channels", self.in_channels),
            ("input_len", self.input_len),
            ("conv1_filters", self.conv1_filters),
            ("conv1_kernel", self.conv1_kernel),
            ("conv2_filters", self.conv2_filters),
            ("conv2_kernel", self.conv2_kernel),
            ("pool", self.pool),
            ("conv2d_filters", self.conv2d_filters),
            ("conv2d_kernel rows", self.conv2d_kernel[0]),
            ("conv2d_kernel columns", self.conv2d_kernel[1]),
            ("conv2d_stride rows", self.conv2d_stride[0]),
            ("conv2d_stride columns", self.conv2d_stride[1]),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("architecture: {name} must be positive")));
        }
        if self.n_classes != 2 {
            return Err(Error::invalid("architecture: the detector is binary (n_classes = 2)"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("architecture: dropout {} outside [0, 1)", self.dropout)));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || !(self.bn_eps > 0.0) {
            return Err(Error::invalid("architecture: invalid batch-norm momentum or epsilon"));
        }
        if self.input_scale.len() != self.in_channels || self.input_scale.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("architecture: input_scale needs one finite value per channel"));
        }
        let shape_err = |what: &str| Error::invalid(format!("architecture: {what} leaves no output"));
        let l1 = (self.input_len + 1).checked_sub(self.conv1_kernel).filter(|&v| v > 0).ok_or_else(|| shape_err("conv1"))?;
        let p1 = l1 / self.pool;
        let l2 = (p1 + 1).checked_sub(self.conv2_kernel).filter(|&v| v > 0).ok_or_else(|| shape_err("conv2"))?;
        let p2 = l2 / self.pool;
        if p1 == 0 || p2 == 0 {
            return Err(shape_err("pooling"));
        }
        let img_h = self.conv1_filters + self.conv2_filters;
        let img_w = p1;
        let [kh, kw] = self.conv2d_kernel;
        let [sh, sw] = self.conv2d_stride;
        if kh > img_h || kw > img_w {
            return Err(shape_err("conv2d"));
        }
        let out_h = (img_h - kh) / sh + 1;
        let out_w = (img_w - kw) / sw + 1;
        Ok(Shapes {
            l1,
            p1,
            l2,
            p2,
            img_h,
            img_w,
            out_h,
            out_w,
        })
    }

    pub fn tensors(&self) -> Vec<TensorSpec> {
        let (f1, f2, f3) = (self.conv1_filters, self.conv2_filters, self.conv2d_filters);
        let shapes: Vec<(&'static str, Vec<usize>)> = vec![
            ("conv1.weight", vec![f1, self.in_channels, self.conv1_kernel]),
            ("conv1.bias", vec![f1]),
            ("bn1.gamma", vec![f1]),
            ("bn1.beta", vec![f1]),
            ("conv2.weight", vec![f2, f1, self.conv2_kernel]),
            ("conv2.bias", vec![f2]),
            ("bn2.gamma", vec![f2]),
            ("bn2.beta", vec![f2]),
            ("conv2d.weight", vec![f3, self.conv2d_kernel[0], self.conv2d_kernel[1]]),
            ("conv2d.bias", vec![f3]),
            ("bn3.gamma", vec![f3]),
            ("bn3.beta", vec![f3]),
            ("dense.weight", vec![self.n_classes, f3]),
            ("dense.bias", vec![self.n_classes]),
        ];
        layout(shapes)
    }

    pub fn buffers(&self) -> Vec<TensorSpec> {
        let (f1, f2, f3) = (self.conv1_filters, self.conv2_filters, self.conv2d_filters);
        layout(vec![
            ("bn1.running_mean", vec![f1]),
            ("bn1.running_var", vec![f1]),
            ("bn2.running_mean", vec![f2]),
            ("bn2.running_var", vec![f2]),
            ("bn3.running_mean", vec![f3]),
            ("bn3.running_var", vec![f3]),
        ])
    }

    pub fn param_index(&self) -> ParamIndex {
        let t = self.tensors();
        let r = |i: usize| t[i].range.clone();
        ParamIndex {
            conv1_w: r(0),
            conv1_b: r(1),
            bn1_gamma: r(2),
            bn1_beta: r(3),
            conv2_w: r(4),
            conv2_b: r(5),
            bn2_gamma: r(6),
            bn2_beta: r(7),
            conv2d_w: r(8),
            conv2d_b: r(9),
            bn3_gamma: r(10),
            bn3_beta: r(11),
            dense_w: r(12),
            dense_b: r(13),
            len: t.last().map_or(0, |s| s.range.end),
        }
    }

    pub fn buffer_index(&self) -> BufferIndex {
        let b = self.buffers();
        BufferIndex {
            bn_mean: [b[0].range.clone(), b[2].range.clone(), b[4].range.clone()],
            bn_var: [b[1].range.clone(), b[3].range.clone(), b[5].range.clone()],
            len: b.last().map_or(0, |s| s.range.end),
        }
    }

    /// Number of trainable parameters.
    pub fn parameter_count(&self) -> usize {
        self.param_index().len
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("architecture serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn layout(shapes: Vec<(&'static str, Vec<usize>)>) -> Vec<TensorSpec> {
    let mut offset = 0;
    shapes
        .into_iter()
        .map(|(name, shape)| {
            let len: usize = shape.iter().product();
            let spec = TensorSpec {
                name,
                shape,
                range: offset..offset + len,
            };
            offset += len;
            spec
        })
        .collect()
}
