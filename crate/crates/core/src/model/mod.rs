//! Four-view classifier: a convolutional trunk applied to each view, global
//! average pooling, concatenation in SAS/4CH/VLA/LVOT order and a one-hidden-
//! layer MLP ending in a sigmoid.

mod checkpoint;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::data::ViewSet;
use crate::nn::{Tape, Tensor, Var};
use crate::{rng, Error, Result};

pub const CONV_LAYERS: usize = 4;
pub const POOL_LAYERS: usize = 3;
pub const NUM_VIEWS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub conv_channels: Vec<usize>,
    pub kernel_size: usize,
    /// Conv layer indices followed by 2x2 max pooling.
    pub pool_after: Vec<usize>,
    pub mlp_hidden: usize,
    pub seed: u64,
    /// One trunk shared by all views (`true`) or one trunk per view.
    pub shared_trunk: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 128,
            conv_channels: vec![8, 16, 32, 32],
            kernel_size: 3,
            pool_after: vec![0, 1, 2],
            mlp_hidden: 128,
            seed: 0,
            shared_trunk: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.len() != CONV_LAYERS {
            return Err(Error::Config(format!(
                "exactly {CONV_LAYERS} conv layers required, got {}",
                self.conv_channels.len()
            )));
        }
        if self.conv_channels.contains(&0) {
            return Err(Error::Config("conv channel counts must be positive".into()));
        }
        if self.pool_after.len() != POOL_LAYERS {
            return Err(Error::Config(format!(
                "exactly {POOL_LAYERS} pooling positions required, got {}",
                self.pool_after.len()
            )));
        }
        let mut pools = self.pool_after.clone();
        pools.sort_unstable();
        pools.dedup();
        if pools.len() != POOL_LAYERS || pools.iter().any(|&p| p >= CONV_LAYERS) {
            return Err(Error::Config(format!(
                "pool_after must name {POOL_LAYERS} distinct conv layers in 0..{CONV_LAYERS}, got {:?}",
                self.pool_after
            )));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel size must be a positive odd integer, got {}",
                self.kernel_size
            )));
        }
        let divisor = 1 << POOL_LAYERS;
        if self.image_size == 0 || !self.image_size.is_multiple_of(divisor) {
            return Err(Error::Config(format!(
                "image size {} must be a positive multiple of {divisor}",
                self.image_size
            )));
        }
        if self.mlp_hidden == 0 {
            return Err(Error::Config("mlp_hidden must be positive".into()));
        }
        Ok(())
    }

    fn trunk_count(&self) -> usize {
        if self.shared_trunk {
            1
        } else {
            NUM_VIEWS
        }
    }

    fn feature_len(&self) -> usize {
        NUM_VIEWS * self.conv_channels[CONV_LAYERS - 1]
    }

    /// Names, shapes and fan-ins of all parameters in declaration order.
    pub fn parameter_layout(&self) -> Vec<ParamSpec> {
        let k = self.kernel_size;
        let mut specs = Vec::new();
        for t in 0..self.trunk_count() {
            let mut c_in = 1;
            for (l, &c_out) in self.conv_channels.iter().enumerate() {
                let fan_in = c_in * k * k;
                specs.push(ParamSpec::new(format!("trunk{t}.conv{l}.weight"), vec![c_out, c_in, k, k], fan_in));
                specs.push(ParamSpec::new(format!("trunk{t}.conv{l}.bias"), vec![c_out], fan_in));
                c_in = c_out;
            }
        }
        let f = self.feature_len();
        let h = self.mlp_hidden;
        specs.push(ParamSpec::new("mlp.hidden.weight".into(), vec![h, f], f));
        specs.push(ParamSpec::new("mlp.hidden.bias".into(), vec![h], f));
        specs.push(ParamSpec::new("mlp.out.weight".into(), vec![1, h], h));
        specs.push(ParamSpec::new("mlp.out.bias".into(), vec![1], h));
        specs
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_layout().iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

impl ParamSpec {
    fn new(name: String, shape: Vec<usize>, fan_in: usize) -> Self {
        ParamSpec { name, shape, fan_in }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewModel {
    config: ModelConfig,
    params: Vec<Tensor>,
}

impl MultiViewModel {
    /// Initialises every parameter uniformly in `±1/sqrt(fan_in)` from
    /// `config.seed`.
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::Rng::seed_from_u64(config.seed);
        let params = config
            .parameter_layout()
            .into_iter()
            .map(|spec| {
                let bound = 1.0 / (spec.fan_in as f64).sqrt();
                let n = spec.shape.iter().product();
                let values = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
                Tensor::param(spec.shape, values).expect("layout shapes are consistent")
            })
            .collect();
        Ok(MultiViewModel { config, params })
    }

    pub(crate) fn from_parts(config: ModelConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = config.parameter_layout();
        if layout.len() != params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                params.len()
            )));
        }
        for (spec, p) in layout.iter().zip(&params) {
            if spec.shape != p.shape() {
                return Err(Error::Shape(format!(
                    "{}: expected shape {:?}, got {:?}",
                    spec.name,
                    spec.shape,
                    p.shape()
                )));
            }
        }
        Ok(MultiViewModel { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// All parameter values concatenated in declaration order.
    pub fn flat_parameters(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.values().iter().copied()).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }

    /// Records every parameter on `tape`; the returned handles are passed to
    /// [`Self::forward_on_tape`] and [`Self::absorb_grads`].
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p)).collect()
    }

    fn check_sample(&self, sample: &ViewSet) -> Result<()> {
        let n = self.config.image_size;
        for (i, img) in sample.views.iter().enumerate() {
            if img.width() != n || img.height() != n {
                return Err(Error::Shape(format!(
                    "view {} of patient {:?} is {}x{}, model expects {n}x{n}",
                    crate::data::View::ALL[i].name(),
                    sample.patient_id,
                    img.width(),
                    img.height()
                )));
            }
        }
        Ok(())
    }

    /// Records the forward pass for one sample and returns its `[1]`
    /// probability.
    pub fn forward_on_tape(&self, tape: &mut Tape, bound: &[Var], sample: &ViewSet) -> Result<Var> {
        self.check_sample(sample)?;
        let n = self.config.image_size;
        let pad = self.config.kernel_size / 2;
        let per_trunk = 2 * CONV_LAYERS;
        let mut features = Vec::with_capacity(NUM_VIEWS);
        for (v, img) in sample.views.iter().enumerate() {
            let trunk = if self.config.shared_trunk { 0 } else { v };
            let p = &bound[trunk * per_trunk..(trunk + 1) * per_trunk];
            let mut x = tape.constant(vec![1, n, n], img.pixels().to_vec())?;
            for l in 0..CONV_LAYERS {
                x = tape.conv2d(x, p[2 * l], p[2 * l + 1], 1, pad)?;
                x = tape.relu(x);
                if self.config.pool_after.contains(&l) {
                    x = tape.maxpool2d(x, 2)?;
                }
            }
            features.push(tape.global_avg_pool(x)?);
        }
        let head = &bound[self.config.trunk_count() * per_trunk..];
        let joined = tape.concat(&features)?;
        let hidden = tape.dense(joined, head[0], head[1])?;
        let hidden = tape.relu(hidden);
        let logit = tape.dense(hidden, head[2], head[3])?;
        Ok(tape.sigmoid(logit))
    }

    /// CHIP probability for one view set.
    pub fn forward(&self, sample: &ViewSet) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let out = self.forward_on_tape(&mut tape, &bound, sample)?;
        Ok(tape.value(out)[0])
    }

    pub fn predict_batch(&self, samples: &[ViewSet]) -> Result<Vec<f64>> {
        samples.iter().map(|s| self.forward(s)).collect()
    }

    /// Adds the tape's accumulated leaf gradients into the parameters.
    pub fn absorb_grads(&mut self, tape: &Tape, bound: &[Var]) -> Result<()> {
        for (p, &v) in self.params.iter_mut().zip(bound) {
            if let Some(g) = tape.grad(v) {
                p.accumulate_grad(g)?;
            } else if p.requires_grad() {
                // unreachable from the loss: contributes an exact zero
                let zeros = vec![0.0; p.numel()];
                p.accumulate_grad(&zeros)?;
            }
        }
        Ok(())
    }

    /// Mean BCE over `samples`, with gradients accumulated into the
    /// parameters. Returns the loss.
    pub fn accumulate_batch_gradients(&mut self, samples: &[&ViewSet]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let probs = samples
            .iter()
            .map(|s| self.forward_on_tape(&mut tape, &bound, s))
            .collect::<Result<Vec<_>>>()?;
        let targets: Vec<f64> = samples.iter().map(|s| if s.label { 1.0 } else { 0.0 }).collect();
        let joined = tape.concat(&probs)?;
        let loss = tape.bce_loss(joined, &targets)?;
        tape.backward(loss)?;
        self.absorb_grads(&tape, &bound)?;
        Ok(tape.value(loss)[0])
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, encode_checkpoint(self)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_checkpoint(&bytes).map_err(|e| Error::format(path, e.to_string()))
    }
}
