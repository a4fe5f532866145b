//! The WWS model: linear preprocessing projection, a stack of causal
//! depthwise-separable dilated conv blocks with residual skips, and one
//! binary sigmoid head per keyword. Forward and backward are explicit;
//! training math runs in f64, checkpoints store f32.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::FeatureMatrix;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WWS1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NnetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("feature dim {got} does not match model input dim {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("{path}: bad checkpoint magic")]
    BadMagic { path: String },
    #[error("{path}: checkpoint version {got}, expected {CHECKPOINT_VERSION}")]
    VersionMismatch { path: String, got: u32 },
    #[error("{path}: truncated or oversized checkpoint")]
    Truncated { path: String },
    #[error("{path}: bad config block: {reason}")]
    BadConfig { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_blocks: usize,
    pub kernel_size: usize,
    pub dilations: Vec<usize>,
    pub num_keywords: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 40,
            hidden_dim: 64,
            num_blocks: 4,
            kernel_size: 8,
            dilations: vec![1, 2, 4, 8],
            num_keywords: 10,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) {
        assert!(self.num_keywords >= 1);
        assert!(self.kernel_size >= 1);
        assert_eq!(self.dilations.len(), self.num_blocks);
    }

    /// Frames of left context an output frame can depend on.
    pub fn receptive_field(&self) -> usize {
        1 + self
            .dilations
            .iter()
            .map(|d| (self.kernel_size - 1) * d)
            .sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    /// hidden_dim x kernel_size; tap 0 is the current frame.
    pub depthwise: Array2<f64>,
    /// hidden_dim x hidden_dim, (out, in).
    pub pointwise: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub preproc_w: Array2<f64>, // input_dim x hidden_dim
    pub preproc_b: Array1<f64>,
    pub blocks: Vec<BlockParams>,
    pub head_w: Array2<f64>, // num_keywords x hidden_dim
    pub head_b: Array1<f64>,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        config.validate();
        ModelParams {
            preproc_w: Array2::zeros((config.input_dim, config.hidden_dim)),
            preproc_b: Array1::zeros(config.hidden_dim),
            blocks: (0..config.num_blocks)
                .map(|_| BlockParams {
                    depthwise: Array2::zeros((config.hidden_dim, config.kernel_size)),
                    pointwise: Array2::zeros((config.hidden_dim, config.hidden_dim)),
                    bias: Array1::zeros(config.hidden_dim),
                })
                .collect(),
            head_w: Array2::zeros((config.num_keywords, config.hidden_dim)),
            head_b: Array1::zeros(config.num_keywords),
        }
    }

    /// All parameter tensors flattened, in a fixed order.
    pub fn flat_mut(&mut self) -> Vec<&mut f64> {
        let mut out: Vec<&mut f64> = Vec::new();
        out.extend(self.preproc_w.iter_mut());
        out.extend(self.preproc_b.iter_mut());
        for block in &mut self.blocks {
            out.extend(block.depthwise.iter_mut());
            out.extend(block.pointwise.iter_mut());
            out.extend(block.bias.iter_mut());
        }
        out.extend(self.head_w.iter_mut());
        out.extend(self.head_b.iter_mut());
        out
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.preproc_w.iter());
        out.extend(self.preproc_b.iter());
        for block in &self.blocks {
            out.extend(block.depthwise.iter());
            out.extend(block.pointwise.iter());
            out.extend(block.bias.iter());
        }
        out.extend(self.head_w.iter());
        out.extend(self.head_b.iter());
        out
    }

    pub fn num_params(&self) -> usize {
        self.flat().len()
    }
}

/// Gradients share the parameter layout.
pub type ParamGrads = ModelParams;

/// Xavier-uniform weights (biases zero), quantized to f32 precision so
/// checkpoints round-trip losslessly.
pub fn init_params(config: &ModelConfig, seed: u64) -> ModelParams {
    config.validate();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::zeros(config);

    let fill = |m: &mut Array2<f64>, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng| {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        // Stay a hair inside the bound so f32 rounding cannot cross it.
        let lim = a * (1.0 - 1e-6);
        for w in m.iter_mut() {
            *w = rng.random_range(-lim..lim) as f32 as f64;
        }
    };

    fill(
        &mut params.preproc_w,
        config.input_dim,
        config.hidden_dim,
        &mut rng,
    );
    for block in &mut params.blocks {
        fill(&mut block.depthwise, config.kernel_size, config.kernel_size, &mut rng);
        fill(
            &mut block.pointwise,
            config.hidden_dim,
            config.hidden_dim,
            &mut rng,
        );
    }
    fill(&mut params.head_w, config.hidden_dim, 1, &mut rng);
    params
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Intermediate activations cached for the backward pass.
pub struct ForwardTrace {
    input: Array2<f64>,                 // T x input_dim
    block_inputs: Vec<Array2<f64>>,     // per block, T x hidden
    depthwise_outs: Vec<Array2<f64>>,   // per block, T x hidden
    pre_relu: Vec<Array2<f64>>,         // per block, T x hidden
    backbone_out: Array2<f64>,          // T x hidden
    posteriors: Array2<f64>,            // T x K
}

fn depthwise_conv(
    input: &Array2<f64>,
    kernel: &Array2<f64>,
    dilation: usize,
) -> Array2<f64> {
    let (t_len, channels) = input.dim();
    let taps = kernel.ncols();
    let mut out = Array2::zeros((t_len, channels));
    for t in 0..t_len {
        for c in 0..channels {
            let mut acc = 0.0;
            for j in 0..taps {
                let offset = j * dilation;
                if offset <= t {
                    acc += kernel[[c, j]] * input[[t - offset, c]];
                }
            }
            out[[t, c]] = acc;
        }
    }
    out
}

pub fn forward_trace(
    params: &ModelParams,
    config: &ModelConfig,
    features: &FeatureMatrix,
) -> Result<ForwardTrace, NnetError> {
    if features.num_bins() != config.input_dim {
        return Err(NnetError::DimensionMismatch {
            got: features.num_bins(),
            expected: config.input_dim,
        });
    }
    let input = features.frames.clone();
    let mut hidden = input.dot(&params.preproc_w) + &params.preproc_b;

    let mut block_inputs = Vec::with_capacity(config.num_blocks);
    let mut depthwise_outs = Vec::with_capacity(config.num_blocks);
    let mut pre_relu = Vec::with_capacity(config.num_blocks);
    for (block, &dilation) in params.blocks.iter().zip(&config.dilations) {
        let dw = depthwise_conv(&hidden, &block.depthwise, dilation);
        let pre = dw.dot(&block.pointwise.t()) + &block.bias;
        let activated = pre.mapv(|v| v.max(0.0));
        let next = activated + &hidden;
        block_inputs.push(hidden);
        depthwise_outs.push(dw);
        pre_relu.push(pre);
        hidden = next;
    }

    let logits = hidden.dot(&params.head_w.t()) + &params.head_b;
    let posteriors = logits.mapv(sigmoid);
    Ok(ForwardTrace {
        input,
        block_inputs,
        depthwise_outs,
        pre_relu,
        backbone_out: hidden,
        posteriors,
    })
}

/// T x K per-frame keyword posteriors.
pub fn forward(
    params: &ModelParams,
    config: &ModelConfig,
    features: &FeatureMatrix,
) -> Result<Array2<f64>, NnetError> {
    Ok(forward_trace(params, config, features)?.posteriors)
}

impl ForwardTrace {
    pub fn posteriors(&self) -> &Array2<f64> {
        &self.posteriors
    }
}

/// Reverse-mode gradients of the forward pass. `grad_posteriors` is
/// dL/dposterior, T x K.
pub fn backward(
    params: &ModelParams,
    config: &ModelConfig,
    trace: &ForwardTrace,
    grad_posteriors: &Array2<f64>,
) -> Result<(ParamGrads, Array2<f64>), NnetError> {
    if grad_posteriors.dim() != trace.posteriors.dim() {
        return Err(NnetError::DimensionMismatch {
            got: grad_posteriors.ncols(),
            expected: trace.posteriors.ncols(),
        });
    }
    let mut grads = ModelParams::zeros(config);

    // Sigmoid heads.
    let grad_logits = grad_posteriors * &trace.posteriors.mapv(|p| p * (1.0 - p));
    grads.head_w = grad_logits.t().dot(&trace.backbone_out);
    grads.head_b = grad_logits.sum_axis(ndarray::Axis(0));
    let mut grad_hidden = grad_logits.dot(&params.head_w);

    // Blocks in reverse.
    for idx in (0..config.num_blocks).rev() {
        let block = &params.blocks[idx];
        let dilation = config.dilations[idx];
        let pre = &trace.pre_relu[idx];
        let dw_out = &trace.depthwise_outs[idx];
        let block_in = &trace.block_inputs[idx];

        // Residual skip feeds the block input directly.
        let mut grad_block_in = grad_hidden.clone();
        let grad_pre = &grad_hidden * &pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });

        grads.blocks[idx].pointwise = grad_pre.t().dot(dw_out);
        grads.blocks[idx].bias = grad_pre.sum_axis(ndarray::Axis(0));
        let grad_dw_out = grad_pre.dot(&block.pointwise);

        let (t_len, channels) = grad_dw_out.dim();
        let taps = block.depthwise.ncols();
        for t in 0..t_len {
            for c in 0..channels {
                let g = grad_dw_out[[t, c]];
                if g == 0.0 {
                    continue;
                }
                for j in 0..taps {
                    let offset = j * dilation;
                    if offset <= t {
                        grads.blocks[idx].depthwise[[c, j]] += g * block_in[[t - offset, c]];
                        grad_block_in[[t - offset, c]] += g * block.depthwise[[c, j]];
                    }
                }
            }
        }
        grad_hidden = grad_block_in;
    }

    // Preprocessing projection.
    grads.preproc_w = trace.input.t().dot(&grad_hidden);
    grads.preproc_b = grad_hidden.sum_axis(ndarray::Axis(0));
    let grad_input = grad_hidden.dot(&params.preproc_w.t());

    Ok((grads, grad_input))
}

pub fn save_checkpoint(
    params: &ModelParams,
    config: &ModelConfig,
    path: &Path,
) -> Result<(), NnetError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let config_json = serde_json::to_vec(config).map_err(std::io::Error::other)?;
    out.write_all(&(config_json.len() as u32).to_le_bytes())?;
    out.write_all(&config_json)?;
    let flat = params.flat();
    out.write_all(&(flat.len() as u32).to_le_bytes())?;
    for v in flat {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, ModelConfig), NnetError> {
    let display = path.display().to_string();
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    if data.len() < 12 || &data[0..4] != CHECKPOINT_MAGIC {
        return Err(NnetError::BadMagic { path: display });
    }
    let version = u32::from_le_bytes(data[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(NnetError::VersionMismatch {
            path: display,
            got: version,
        });
    }
    let config_len = u32::from_le_bytes(data[8..12].try_into().unwrap()) as usize;
    let config_end = 12 + config_len;
    if data.len() < config_end + 4 {
        return Err(NnetError::Truncated { path: display });
    }
    let config: ModelConfig =
        serde_json::from_slice(&data[12..config_end]).map_err(|e| NnetError::BadConfig {
            path: display.clone(),
            reason: e.to_string(),
        })?;
    let count = u32::from_le_bytes(data[config_end..config_end + 4].try_into().unwrap()) as usize;
    let weights_start = config_end + 4;
    if data.len() != weights_start + count * 4 {
        return Err(NnetError::Truncated { path: display });
    }
    let mut params = ModelParams::zeros(&config);
    let expected = params.num_params();
    if count != expected {
        return Err(NnetError::BadConfig {
            path: display,
            reason: format!("weight count {count} does not match config ({expected})"),
        });
    }
    let mut slots = params.flat_mut();
    for (i, slot) in slots.iter_mut().enumerate() {
        let at = weights_start + i * 4;
        **slot = f32::from_le_bytes(data[at..at + 4].try_into().unwrap()) as f64;
    }
    Ok((params, config))
}
