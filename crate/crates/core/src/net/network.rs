//! Parameterized networks built from a [`NetworkConfig`].

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{check_structure, layer_specs, LayerKind, LayerSpec, NetworkConfig, Preset};
use crate::error::{Error, Result};
use crate::ops::{BatchNormParams, BatchStats, ConvParams, Mode, Padding};
use crate::tape::{Eager, Graph, Tape, Var};
use crate::tensor::Tensor;

/// A convolution followed by batch norm and ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBnUnit {
    pub name: String,
    pub conv: ConvParams,
    pub bn: BatchNormParams,
    pub depthwise: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockUnit {
    pub layer: usize,
    /// Pointwise expansion.
    pub expand: ConvBnUnit,
    /// 3x3 depthwise; carries the block's stride.
    pub spatial: ConvBnUnit,
    /// Pointwise projection to the block's output width.
    pub project: ConvBnUnit,
}

/// 1x1 projection of a hub's output onto one target's input.
#[derive(Clone, Debug, PartialEq)]
pub struct HubProjection {
    pub name: String,
    pub target: usize,
    pub conv: ConvParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HubUnit {
    pub layer: usize,
    pub conv: ConvBnUnit,
    pub projections: Vec<HubProjection>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadUnit {
    pub weights: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorRole {
    Trainable,
    RunningStat,
}

/// Output of a recorded forward pass.
pub struct TapedForward {
    pub tape: Tape,
    pub logits: Var,
    pub probs: Var,
    pub bn_stats: Vec<(String, BatchStats)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub preset: Preset,
    pub layers: Vec<LayerSpec>,
    pub stem: ConvBnUnit,
    pub blocks: Vec<BlockUnit>,
    pub hubs: Vec<HubUnit>,
    pub head: HeadUnit,
}

/// Uniform initializer with bound `sqrt(gain / fan_in)`.
fn fan_in_uniform(shape: &[usize], fan_in: usize, gain: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (gain / fan_in as f64).sqrt() as f32;
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

/// Gain for convolutions followed by batch norm. Their scale does not reach
/// the output, and a small weight norm means a larger effective step.
const BN_CONV_GAIN: f64 = 0.25;
/// He gain for layers whose output scale matters (hub projections, head).
const HE_GAIN: f64 = 6.0;

fn conv_unit(
    name: String,
    in_c: usize,
    out_c: usize,
    kernel: usize,
    stride: usize,
    depthwise: bool,
    rng: &mut ChaCha8Rng,
) -> ConvBnUnit {
    let (shape, fan_in) = if depthwise {
        ([out_c, 1, kernel, kernel], kernel * kernel)
    } else {
        ([out_c, in_c, kernel, kernel], in_c * kernel * kernel)
    };
    let conv = ConvParams::new(
        fan_in_uniform(&shape, fan_in, BN_CONV_GAIN, rng),
        Tensor::zeros(&[out_c]),
        stride,
        Padding::Same,
    )
    .expect("odd kernel and stride 1|2 by construction");
    ConvBnUnit {
        name,
        conv,
        bn: BatchNormParams::new(out_c),
        depthwise,
    }
}

impl Network {
    pub fn build_preset(preset: Preset, input_size: usize, seed: u64) -> Result<Self> {
        let config = NetworkConfig::preset(preset, input_size)?;
        let mut net = Self::build(config, seed)?;
        net.preset = preset;
        Ok(net)
    }

    /// Builds and initializes a network. Weights are drawn in layer order from
    /// a generator seeded by `seed`; biases start at zero, batch-norm scale at
    /// one and shift at zero.
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Self> {
        let layers = layer_specs(&config)?;
        check_structure(&layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stem = None;
        let mut blocks = Vec::new();
        let mut hubs = Vec::new();
        let mut head = None;
        for l in &layers {
            match l.kind {
                LayerKind::StemConv => {
                    stem = Some(conv_unit(
                        "stem".into(),
                        l.channels_in,
                        l.channels_out,
                        l.kernel,
                        l.stride,
                        false,
                        &mut rng,
                    ))
                }
                LayerKind::DwSepBlock => {
                    let mid = l.channels_mid.expect("blocks have a mid width");
                    blocks.push(BlockUnit {
                        layer: l.id,
                        expand: conv_unit(
                            format!("{}.expand", l.name),
                            l.channels_in,
                            mid,
                            1,
                            1,
                            false,
                            &mut rng,
                        ),
                        spatial: conv_unit(
                            format!("{}.depthwise", l.name),
                            mid,
                            mid,
                            l.kernel,
                            l.stride,
                            true,
                            &mut rng,
                        ),
                        project: conv_unit(
                            format!("{}.project", l.name),
                            mid,
                            l.channels_out,
                            1,
                            1,
                            false,
                            &mut rng,
                        ),
                    });
                }
                LayerKind::Hub => {
                    let conv = conv_unit(
                        format!("{}.conv", l.name),
                        l.channels_in,
                        l.channels_out,
                        1,
                        1,
                        false,
                        &mut rng,
                    );
                    let projections = l
                        .hub_targets
                        .iter()
                        .map(|&t| {
                            let target = &layers[t];
                            // The first block of the next stage sees the hub's
                            // resolution; later blocks see half of it.
                            let stride = match target.kind {
                                LayerKind::DwSepBlock
                                    if target.stride == 1 && target.stage != l.stage =>
                                {
                                    2
                                }
                                _ => 1,
                            };
                            let out_c = target.channels_in;
                            HubProjection {
                                name: format!("{}.to.{}", l.name, target.name),
                                target: t,
                                conv: ConvParams::new(
                                    fan_in_uniform(&[out_c, l.channels_out, 1, 1], l.channels_out, HE_GAIN, &mut rng),
                                    Tensor::zeros(&[out_c]),
                                    stride,
                                    Padding::Same,
                                )
                                .expect("1x1 kernel"),
                            }
                        })
                        .collect();
                    hubs.push(HubUnit {
                        layer: l.id,
                        conv,
                        projections,
                    });
                }
                LayerKind::Head => {
                    head = Some(HeadUnit {
                        weights: fan_in_uniform(&[l.channels_out, l.channels_in], l.channels_in, HE_GAIN, &mut rng),
                        bias: Tensor::zeros(&[l.channels_out]),
                    })
                }
            }
        }
        Ok(Network {
            config,
            preset: Preset::Custom,
            layers,
            stem: stem.expect("stem is always present"),
            blocks,
            hubs,
            head: head.expect("head is always present"),
        })
    }

    pub fn input_size(&self) -> usize {
        self.config.input_size
    }

    /// Runs the network on `batch` (`[N, 1, H, W]`) through any graph backend.
    /// Returns `(logits, probabilities, batch statistics per batch-norm)`.
    pub fn forward_graph<G: Graph>(
        &self,
        g: &mut G,
        batch: Tensor,
        mode: Mode,
    ) -> Result<(G::Value, G::Value, Vec<(String, BatchStats)>)> {
        let (_, c, h, w) = batch.dims4()?;
        let size = self.config.input_size;
        if c != 1 || h != size || w != size {
            return Err(Error::shape(format!(
                "network expects [N, 1, {size}, {size}], got {:?}",
                batch.shape()
            )));
        }
        let mut stats = Vec::new();
        let x = g.input(batch);
        let mut x = apply_unit(g, &self.stem, &x, mode, &mut stats)?;

        let mut hub_outputs: HashMap<usize, G::Value> = HashMap::new();
        let mut incoming: HashMap<usize, Vec<(usize, &HubProjection)>> = HashMap::new();
        for hub in &self.hubs {
            for p in &hub.projections {
                incoming.entry(p.target).or_default().push((hub.layer, p));
            }
        }

        let mut block_iter = self.blocks.iter();
        let mut hub_iter = self.hubs.iter();
        for layer in &self.layers[1..] {
            if let Some(sources) = incoming.get(&layer.id) {
                for (hub_layer, proj) in sources {
                    let h = &hub_outputs[hub_layer];
                    let k = g.param(&format!("{}.weight", proj.name), &proj.conv.kernel);
                    let b = g.param(&format!("{}.bias", proj.name), &proj.conv.bias);
                    let p = g.conv2d(h, &k, &b, proj.conv.stride, proj.conv.padding)?;
                    x = g.add(&x, &p)?;
                }
            }
            match layer.kind {
                LayerKind::DwSepBlock => {
                    let block = block_iter.next().expect("one unit per block layer");
                    debug_assert_eq!(block.layer, layer.id);
                    let y = apply_unit(g, &block.expand, &x, mode, &mut stats)?;
                    let y = apply_unit(g, &block.spatial, &y, mode, &mut stats)?;
                    x = apply_unit(g, &block.project, &y, mode, &mut stats)?;
                }
                LayerKind::Hub => {
                    let hub = hub_iter.next().expect("one unit per hub layer");
                    let h = apply_unit(g, &hub.conv, &x, mode, &mut stats)?;
                    hub_outputs.insert(hub.layer, h);
                }
                LayerKind::Head => {
                    let pooled = g.global_avg_pool(&x)?;
                    let wt = g.param("head.weight", &self.head.weights);
                    let b = g.param("head.bias", &self.head.bias);
                    let logits = g.dense(&pooled, &wt, &b)?;
                    let probs = g.softmax(&logits)?;
                    return Ok((logits, probs, stats));
                }
                LayerKind::StemConv => unreachable!("stem is layer 0"),
            }
        }
        unreachable!("layer list ends with the head")
    }

    /// Class probabilities `[N, 3]` without recording a tape. Train mode
    /// updates the running statistics.
    pub fn forward(&mut self, batch: Tensor, mode: Mode) -> Result<Tensor> {
        let (_, probs, stats) = self.forward_graph(&mut Eager, batch, mode)?;
        self.apply_bn_stats(&stats)?;
        Ok(probs)
    }

    /// Eval-mode class probabilities; never mutates the network.
    pub fn predict(&self, batch: Tensor) -> Result<Tensor> {
        Ok(self.forward_graph(&mut Eager, batch, Mode::Eval)?.1)
    }

    /// Forward pass recorded on a fresh tape, for training.
    pub fn forward_taped(&self, batch: Tensor, mode: Mode) -> Result<TapedForward> {
        let mut tape = Tape::new();
        let (logits, probs, bn_stats) = self.forward_graph(&mut tape, batch, mode)?;
        Ok(TapedForward {
            tape,
            logits,
            probs,
            bn_stats,
        })
    }

    /// Folds train-mode batch statistics into the running estimates.
    pub fn apply_bn_stats(&mut self, stats: &[(String, BatchStats)]) -> Result<()> {
        if stats.is_empty() {
            return Ok(());
        }
        let mut units: HashMap<String, &mut ConvBnUnit> = self
            .conv_bn_units_mut()
            .into_iter()
            .map(|u| (u.name.clone(), u))
            .collect();
        for (name, s) in stats {
            let unit = units
                .get_mut(name)
                .ok_or_else(|| Error::Usage(format!("no batch-norm unit named {name}")))?;
            unit.bn.update_running(s);
        }
        Ok(())
    }

    /// Replaces every running estimate with the batch-size weighted average
    /// of train-mode statistics over `batches`, computed with the current
    /// weights. Parameters are not touched.
    pub fn recalibrate_bn<I: IntoIterator<Item = Tensor>>(&mut self, batches: I) -> Result<()> {
        let mut sums: HashMap<String, (Vec<f64>, Vec<f64>)> = HashMap::new();
        let mut total = 0usize;
        for batch in batches {
            let n = batch.shape().first().copied().unwrap_or(0);
            let (_, _, stats) = self.forward_graph(&mut Eager, batch, Mode::Train)?;
            for (name, s) in stats {
                let entry = sums
                    .entry(name)
                    .or_insert_with(|| (vec![0.0; s.mean.len()], vec![0.0; s.var.len()]));
                for (acc, &m) in entry.0.iter_mut().zip(&s.mean) {
                    *acc += n as f64 * m as f64;
                }
                for (acc, &v) in entry.1.iter_mut().zip(&s.var) {
                    *acc += n as f64 * v as f64;
                }
            }
            total += n;
        }
        if total == 0 {
            return Err(Error::Usage("batch-norm recalibration needs data".to_string()));
        }
        for unit in self.conv_bn_units_mut() {
            if let Some((mean, var)) = sums.get(&unit.name) {
                let bn = &mut unit.bn;
                for (r, &m) in bn.running_mean.data_mut().iter_mut().zip(mean) {
                    *r = (m / total as f64) as f32;
                }
                for (r, &v) in bn.running_var.data_mut().iter_mut().zip(var) {
                    *r = (v / total as f64) as f32;
                }
                bn.initialized = true;
            }
        }
        Ok(())
    }

    pub fn conv_bn_units(&self) -> Vec<&ConvBnUnit> {
        let mut units = vec![&self.stem];
        for b in &self.blocks {
            units.extend([&b.expand, &b.spatial, &b.project]);
        }
        units.extend(self.hubs.iter().map(|h| &h.conv));
        units
    }

    pub fn conv_bn_units_mut(&mut self) -> Vec<&mut ConvBnUnit> {
        let mut units = vec![&mut self.stem];
        for b in &mut self.blocks {
            units.extend([&mut b.expand, &mut b.spatial, &mut b.project]);
        }
        units.extend(self.hubs.iter_mut().map(|h| &mut h.conv));
        units
    }

    /// Every parameter and running-statistic tensor with its stable name.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor, TensorRole)> {
        use TensorRole::*;
        let mut out = Vec::new();
        for u in self.conv_bn_units() {
            out.push((format!("{}.weight", u.name), &u.conv.kernel, Trainable));
            out.push((format!("{}.bias", u.name), &u.conv.bias, Trainable));
            out.push((format!("{}.bn.gamma", u.name), &u.bn.gamma, Trainable));
            out.push((format!("{}.bn.beta", u.name), &u.bn.beta, Trainable));
            out.push((format!("{}.bn.running_mean", u.name), &u.bn.running_mean, RunningStat));
            out.push((format!("{}.bn.running_var", u.name), &u.bn.running_var, RunningStat));
        }
        for h in &self.hubs {
            for p in &h.projections {
                out.push((format!("{}.weight", p.name), &p.conv.kernel, Trainable));
                out.push((format!("{}.bias", p.name), &p.conv.bias, Trainable));
            }
        }
        out.push(("head.weight".into(), &self.head.weights, Trainable));
        out.push(("head.bias".into(), &self.head.bias, Trainable));
        out
    }

    /// Names of the trainable tensors, in optimizer order.
    pub fn trainable_names(&self) -> Vec<String> {
        self.trainable_tensors_named().into_iter().map(|(n, _)| n).collect()
    }

    /// Trainable tensors, in optimizer order.
    pub fn trainable_tensors(&self) -> Vec<&Tensor> {
        self.trainable_tensors_named().into_iter().map(|(_, t)| t).collect()
    }

    fn trainable_tensors_named(&self) -> Vec<(String, &Tensor)> {
        self.named_tensors()
            .into_iter()
            .filter(|(_, _, role)| *role == TensorRole::Trainable)
            .map(|(n, t, _)| (n, t))
            .collect()
    }

    /// Trainable tensors, in the same order as [`Network::named_tensors`].
    pub fn trainable_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        let mut units = vec![&mut self.stem];
        for b in &mut self.blocks {
            units.extend([&mut b.expand, &mut b.spatial, &mut b.project]);
        }
        let mut projections = Vec::new();
        for h in &mut self.hubs {
            units.push(&mut h.conv);
            projections.extend(h.projections.iter_mut());
        }
        for u in units {
            out.push((format!("{}.weight", u.name), &mut u.conv.kernel));
            out.push((format!("{}.bias", u.name), &mut u.conv.bias));
            out.push((format!("{}.bn.gamma", u.name), &mut u.bn.gamma));
            out.push((format!("{}.bn.beta", u.name), &mut u.bn.beta));
        }
        for p in projections {
            out.push((format!("{}.weight", p.name), &mut p.conv.kernel));
            out.push((format!("{}.bias", p.name), &mut p.conv.bias));
        }
        out.push(("head.weight".into(), &mut self.head.weights));
        out.push(("head.bias".into(), &mut self.head.bias));
        out
    }

    /// Owned snapshot of all stateful tensors, including one `[1]` flag per
    /// batch norm recording whether its running statistics are initialized.
    pub fn state(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .named_tensors()
            .into_iter()
            .map(|(n, t, _)| (n, t.clone()))
            .collect();
        for u in self.conv_bn_units() {
            out.push((
                format!("{}.bn.initialized", u.name),
                Tensor::scalar(if u.bn.initialized { 1.0 } else { 0.0 }),
            ));
        }
        out
    }

    /// Restores tensors produced by [`Network::state`]. Every name must be
    /// present with its exact shape.
    pub fn load_state(&mut self, state: &[(String, Tensor)]) -> Result<()> {
        let lookup: HashMap<&str, &Tensor> =
            state.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let fetch = |name: &str, like: &Tensor| -> Result<Tensor> {
            let t = lookup
                .get(name)
                .ok_or_else(|| Error::Config(format!("state is missing tensor {name}")))?;
            if t.shape() != like.shape() {
                return Err(Error::shape(format!(
                    "tensor {name} has shape {:?}, network expects {:?}",
                    t.shape(),
                    like.shape()
                )));
            }
            Ok((*t).clone())
        };
        let mut staged = self.clone();
        for (name, t) in staged.trainable_mut() {
            *t = fetch(&name, t)?;
        }
        for u in staged.conv_bn_units_mut() {
            u.bn.running_mean = fetch(&format!("{}.bn.running_mean", u.name), &u.bn.running_mean)?;
            u.bn.running_var = fetch(&format!("{}.bn.running_var", u.name), &u.bn.running_var)?;
            let flag = fetch(&format!("{}.bn.initialized", u.name), &Tensor::scalar(0.0))?;
            u.bn.initialized = flag.data()[0] != 0.0;
        }
        *self = staged;
        Ok(())
    }
}

fn apply_unit<G: Graph>(
    g: &mut G,
    unit: &ConvBnUnit,
    x: &G::Value,
    mode: Mode,
    stats: &mut Vec<(String, BatchStats)>,
) -> Result<G::Value> {
    let k = g.param(&format!("{}.weight", unit.name), &unit.conv.kernel);
    let b = g.param(&format!("{}.bias", unit.name), &unit.conv.bias);
    let y = if unit.depthwise {
        g.depthwise_conv2d(x, &k, &b, unit.conv.stride, unit.conv.padding)?
    } else {
        g.conv2d(x, &k, &b, unit.conv.stride, unit.conv.padding)?
    };
    let gamma = g.param(&format!("{}.bn.gamma", unit.name), &unit.bn.gamma);
    let beta = g.param(&format!("{}.bn.beta", unit.name), &unit.bn.beta);
    let (y, s) = g.batch_norm(&y, &gamma, &beta, &unit.bn, mode)?;
    if let Some(s) = s {
        stats.push((unit.name.clone(), s));
    }
    g.relu(&y)
}
