//! Brain-signal encoder families mapping a `C × T` epoch to a `d`-vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Layer layout of an encoder. Serialized with a `family` tag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    /// Temporal conv → spatial conv over all (filter, channel) rows →
    /// average pool → linear projection.
    NiceConv {
        temporal_filters: usize,
        temporal_kernel: usize,
        spatial_filters: usize,
        pool_width: usize,
    },
    /// Temporal conv → depthwise spatial conv (each temporal filter gets
    /// `depth_multiplier` channel projections) → average pool → projection.
    EegnetConv {
        temporal_filters: usize,
        temporal_kernel: usize,
        depth_multiplier: usize,
        pool_width: usize,
    },
    /// Flattened input → hidden layer → residual blocks → projection.
    ResidualMlp { hidden: usize, depth: usize },
}

impl Architecture {
    /// 25-sample temporal kernel (100 ms at 250 Hz), 40 temporal filters,
    /// 40 spatial maps, pool width 5.
    pub fn nice_default() -> Self {
        Architecture::NiceConv {
            temporal_filters: 40,
            temporal_kernel: 25,
            spatial_filters: 40,
            pool_width: 5,
        }
    }

    pub fn eegnet_default() -> Self {
        Architecture::EegnetConv {
            temporal_filters: 8,
            temporal_kernel: 32,
            depth_multiplier: 2,
            pool_width: 4,
        }
    }

    pub fn mlp_default() -> Self {
        Architecture::ResidualMlp {
            hidden: 256,
            depth: 2,
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Architecture::NiceConv { .. } => "nice_conv",
            Architecture::EegnetConv { .. } => "eegnet_conv",
            Architecture::ResidualMlp { .. } => "residual_mlp",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub architecture: Architecture,
    pub input_channels: usize,
    pub input_samples: usize,
    pub embed_dim: usize,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn new(
        architecture: Architecture,
        input_channels: usize,
        input_samples: usize,
        embed_dim: usize,
        seed: u64,
    ) -> Self {
        Self {
            architecture,
            input_channels,
            input_samples,
            embed_dim,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (c, t) = (self.input_channels, self.input_samples);
        if c == 0 || t == 0 || self.embed_dim == 0 {
            return Err(Error::Config(format!(
                "channels {c}, samples {t} and embed_dim {} must all be positive",
                self.embed_dim
            )));
        }
        match self.architecture {
            Architecture::NiceConv {
                temporal_filters,
                temporal_kernel,
                spatial_filters,
                pool_width,
            } => {
                conv_checks(t, temporal_filters, temporal_kernel, pool_width)?;
                if spatial_filters == 0 {
                    return Err(Error::Config("spatial_filters must be positive".into()));
                }
            }
            Architecture::EegnetConv {
                temporal_filters,
                temporal_kernel,
                depth_multiplier,
                pool_width,
            } => {
                conv_checks(t, temporal_filters, temporal_kernel, pool_width)?;
                if depth_multiplier == 0 {
                    return Err(Error::Config("depth_multiplier must be positive".into()));
                }
            }
            Architecture::ResidualMlp { hidden, .. } => {
                if hidden == 0 {
                    return Err(Error::Config("hidden width must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Shape and time placement of the projection layer input.
    pub fn projection_geometry(&self) -> ProjectionGeometry {
        let t = self.input_samples;
        let temporal = |features: usize, kernel: usize, pool: usize| {
            let steps = (t - kernel + 1) / pool;
            // centre of the input span covered by pooled step p
            let centres = (0..steps)
                .map(|p| (p * pool) as f64 + (pool - 1) as f64 / 2.0 + (kernel - 1) as f64 / 2.0)
                .collect();
            ProjectionGeometry::Temporal {
                features,
                steps,
                time_centres: centres,
            }
        };
        match self.architecture {
            Architecture::NiceConv {
                temporal_kernel,
                spatial_filters,
                pool_width,
                ..
            } => temporal(spatial_filters, temporal_kernel, pool_width),
            Architecture::EegnetConv {
                temporal_filters,
                temporal_kernel,
                depth_multiplier,
                pool_width,
            } => temporal(temporal_filters * depth_multiplier, temporal_kernel, pool_width),
            Architecture::ResidualMlp { hidden, .. } => ProjectionGeometry::Flat { width: hidden },
        }
    }
}

fn conv_checks(t: usize, filters: usize, kernel: usize, pool: usize) -> Result<()> {
    if filters == 0 || kernel == 0 || pool == 0 {
        return Err(Error::Config(
            "filter count, kernel width and pool width must be positive".into(),
        ));
    }
    if kernel > t {
        return Err(Error::Config(format!(
            "temporal kernel of {kernel} samples is wider than the {t}-sample input"
        )));
    }
    if pool > t - kernel + 1 {
        return Err(Error::Config(format!(
            "pool width {pool} exceeds the {} conv outputs",
            t - kernel + 1
        )));
    }
    Ok(())
}

/// Layout of the activations feeding the final linear projection.
#[derive(Clone, Debug, PartialEq)]
pub enum ProjectionGeometry {
    /// `features × steps`; `time_centres[p]` is the input sample index at the
    /// centre of step `p`'s receptive field.
    Temporal {
        features: usize,
        steps: usize,
        time_centres: Vec<f64>,
    },
    /// No time axis survives (fully connected encoders).
    Flat { width: usize },
}

impl ProjectionGeometry {
    pub fn len(&self) -> usize {
        match self {
            ProjectionGeometry::Temporal {
                features, steps, ..
            } => features * steps,
            ProjectionGeometry::Flat { width } => *width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Learnable parameters of an encoder, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<S> {
    pub config: EncoderConfig,
    pub params: Vec<(String, Tensor<S>)>,
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// `[n, d]` brain embeddings.
    pub embedding: Var,
    /// `[n, …]` input of the final linear layer.
    pub projection: Var,
    /// One handle per entry of [`EncoderParams::params`].
    pub params: Vec<Var>,
}

struct Init<'a> {
    rng: &'a mut ChaCha8Rng,
    params: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Init<'_> {
    /// Uniform on `±sqrt(6 / fan_in)`, i.e. standard deviation `sqrt(2 / fan_in)`.
    fn kaiming(&mut self, name: &str, dims: &[usize], fan_in: usize) {
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.params.push((name.to_string(), dims.to_vec(), data));
    }

    fn fill(&mut self, name: &str, len: usize, value: f64) {
        self.params.push((name.to_string(), vec![len], vec![value; len]));
    }
}

/// Seeded initialization: fan-in scaled uniform weights, unit gains, zero biases.
pub fn init_params<S: Scalar>(config: &EncoderConfig) -> Result<EncoderParams<S>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut init = Init {
        rng: &mut rng,
        params: Vec::new(),
    };
    let (c, t, d) = (config.input_channels, config.input_samples, config.embed_dim);
    let proj_in = config.projection_geometry().len();
    match config.architecture {
        Architecture::NiceConv {
            temporal_filters: f,
            temporal_kernel: k,
            spatial_filters: f2,
            ..
        } => {
            init.kaiming("temporal.weight", &[f, 1, k], k);
            init.fill("temporal.gain", f, 1.0);
            init.fill("temporal.bias", f, 0.0);
            init.kaiming("spatial.weight", &[f2, f * c, 1], f * c);
            init.fill("spatial.gain", f2, 1.0);
            init.fill("spatial.bias", f2, 0.0);
        }
        Architecture::EegnetConv {
            temporal_filters: f,
            temporal_kernel: k,
            depth_multiplier: m,
            ..
        } => {
            init.kaiming("temporal.weight", &[f, 1, k], k);
            init.fill("temporal.gain", f, 1.0);
            init.fill("temporal.bias", f, 0.0);
            init.kaiming("depthwise.weight", &[f * m, c, 1], c);
            init.fill("depthwise.gain", f * m, 1.0);
            init.fill("depthwise.bias", f * m, 0.0);
        }
        Architecture::ResidualMlp { hidden, depth } => {
            init.kaiming("input.weight", &[hidden, c * t], c * t);
            init.fill("input.bias", hidden, 0.0);
            for l in 0..depth {
                init.kaiming(&format!("block{l}.weight"), &[hidden, hidden], hidden);
                init.fill(&format!("block{l}.gain"), hidden, 1.0);
                init.fill(&format!("block{l}.bias"), hidden, 0.0);
            }
        }
    }
    init.kaiming("projection.weight", &[d, proj_in], proj_in);
    init.fill("projection.bias", d, 0.0);

    let params = init
        .params
        .into_iter()
        .map(|(name, dims, data)| {
            let data = data.into_iter().map(S::of).collect();
            Ok((name, Tensor::new(dims, data)?))
        })
        .collect::<Result<_>>()?;
    Ok(EncoderParams {
        config: config.clone(),
        params,
    })
}

impl<S: Scalar> EncoderParams<S> {
    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.params.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Rebuilds params from named tensors, checking them against the
    /// shapes `config` implies.
    pub fn from_named(config: EncoderConfig, named: Vec<(String, Tensor<S>)>) -> Result<Self> {
        let reference = init_params::<S>(&config)?;
        if reference.params.len() != named.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                reference.params.len(),
                named.len()
            )));
        }
        for ((rn, rt), (n, t)) in reference.params.iter().zip(&named) {
            if rn != n || rt.dims() != t.dims() {
                return Err(Error::Config(format!(
                    "parameter {n} {:?} does not match expected {rn} {:?}",
                    t.dims(),
                    rt.dims()
                )));
            }
            if !t.is_finite() {
                return Err(Error::Config(format!("parameter {n} has non-finite values")));
            }
        }
        Ok(Self {
            config,
            params: named,
        })
    }

    fn check_input(&self, dims: &[usize]) -> Result<()> {
        let (c, t) = (self.config.input_channels, self.config.input_samples);
        match *dims {
            [n, dc, dt] if dc == c && dt == t && n > 0 => Ok(()),
            _ => Err(Error::shape(format!(
                "encoder expects [n, {c}, {t}] input, got {dims:?}"
            ))),
        }
    }

    /// Records the forward pass of a `[n, C, T]` batch on `tape`.
    pub fn forward(&self, tape: &mut Tape<S>, input: Var, trainable: bool) -> Result<Forward> {
        self.check_input(tape.dims(input))?;
        let n = tape.dims(input)[0];
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|(_, t)| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        let p = |name: &str| -> Var {
            let i = self
                .params
                .iter()
                .position(|(n, _)| n == name)
                .expect("parameter list built by init_params");
            vars[i]
        };
        let c = self.config.input_channels;

        let projection = match self.config.architecture {
            Architecture::NiceConv {
                temporal_filters: f,
                pool_width,
                ..
            } => {
                let h = tape.conv_temporal(input, p("temporal.weight"), 1)?;
                let h = per_filter_affine(tape, h, f, c, p("temporal.gain"), p("temporal.bias"))?;
                let h = tape.elu(h);
                let h = tape.conv_spatial(h, p("spatial.weight"))?;
                let h = tape.channel_affine(h, p("spatial.gain"), p("spatial.bias"), 1)?;
                let h = tape.elu(h);
                tape.avg_pool_time(h, pool_width)?
            }
            Architecture::EegnetConv {
                temporal_filters: f,
                pool_width,
                ..
            } => {
                let h = tape.conv_temporal(input, p("temporal.weight"), 1)?;
                let h = per_filter_affine(tape, h, f, c, p("temporal.gain"), p("temporal.bias"))?;
                let h = tape.conv_spatial_grouped(h, p("depthwise.weight"), f)?;
                let h = tape.channel_affine(h, p("depthwise.gain"), p("depthwise.bias"), 1)?;
                let h = tape.elu(h);
                tape.avg_pool_time(h, pool_width)?
            }
            Architecture::ResidualMlp { depth, .. } => {
                let flat = tape.reshape(input, &[n, c * self.config.input_samples])?;
                let h = linear(tape, flat, p("input.weight"), Some(p("input.bias")))?;
                let mut h = tape.elu(h);
                for l in 0..depth {
                    let z = linear(tape, h, p(&format!("block{l}.weight")), None)?;
                    let z = tape.channel_affine(
                        z,
                        p(&format!("block{l}.gain")),
                        p(&format!("block{l}.bias")),
                        1,
                    )?;
                    let z = tape.elu(z);
                    h = tape.add(h, z)?;
                }
                h
            }
        };
        let width = tape.value(projection).numel() / n;
        let flat = tape.reshape(projection, &[n, width])?;
        let embedding = linear(tape, flat, p("projection.weight"), Some(p("projection.bias")))?;
        Ok(Forward {
            embedding,
            projection,
            params: vars,
        })
    }
}

/// `x · Wᵀ (+ b)` for `x: [n, in]`, `W: [out, in]`.
fn linear<S: Scalar>(tape: &mut Tape<S>, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let wt = tape.transpose(w)?;
    let y = tape.matmul(x, wt)?;
    match b {
        Some(b) => tape.add_bias(y, b, 1),
        None => Ok(y),
    }
}

/// Gain and bias shared by the `C` rows each temporal filter produces.
fn per_filter_affine<S: Scalar>(
    tape: &mut Tape<S>,
    h: Var,
    filters: usize,
    channels: usize,
    gain: Var,
    bias: Var,
) -> Result<Var> {
    let dims = tape.dims(h).to_vec();
    let (n, t) = (dims[0], dims[2]);
    let grouped = tape.reshape(h, &[n, filters, channels * t])?;
    let scaled = tape.channel_affine(grouped, gain, bias, 1)?;
    tape.reshape(scaled, &[n, filters * channels, t])
}

/// Embeds a single `[C, T]` epoch.
pub fn encode<S: Scalar>(params: &EncoderParams<S>, epoch: &Tensor<S>) -> Result<Tensor<S>> {
    let &[c, t] = epoch.dims() else {
        return Err(Error::shape(format!(
            "encode expects a [C, T] epoch, got {:?}",
            epoch.dims()
        )));
    };
    let batch = epoch.clone().reshape([1, c, t])?;
    let out = encode_batch(params, &batch)?;
    let d = out.numel();
    out.reshape([d])
}

/// Embeds a `[n, C, T]` batch; row `i` equals `encode` of epoch `i` bitwise.
pub fn encode_batch<S: Scalar>(params: &EncoderParams<S>, epochs: &Tensor<S>) -> Result<Tensor<S>> {
    let mut tape = Tape::new();
    let input = tape.constant(epochs.clone());
    let fwd = params.forward(&mut tape, input, false)?;
    let mut out = tape.value(fwd.embedding).clone();
    out = out.with_requires_grad(false);
    Ok(out)
}

/// Records a single-epoch forward pass whose projection-layer input is
/// tape-connected, so gradients of any function of the embedding reach it.
///
/// Returns `(projection activations [1, …], embedding [1, d])`.
pub fn projection_activations<S: Scalar>(
    params: &EncoderParams<S>,
    tape: &mut Tape<S>,
    epoch: &Tensor<S>,
) -> Result<(Var, Var)> {
    let &[c, t] = epoch.dims() else {
        return Err(Error::shape(format!(
            "expected a [C, T] epoch, got {:?}",
            epoch.dims()
        )));
    };
    let input = tape.param(epoch.clone().reshape([1, c, t])?);
    let fwd = params.forward(tape, input, false)?;
    Ok((fwd.projection, fwd.embedding))
}
