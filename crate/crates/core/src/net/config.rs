//! Declarative description of the architecture family.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Number of output classes: Normal, CP (common pneumonia) and NCP (novel
/// coronavirus pneumonia).
pub const NUM_CLASSES: usize = 3;
pub const DEFAULT_INPUT_SIZE: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    L,
    S,
    Custom,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::L => "L",
            Preset::S => "S",
            Preset::Custom => "custom",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Preset::Custom => 0,
            Preset::L => 1,
            Preset::S => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Preset::Custom),
            1 => Some(Preset::L),
            2 => Some(Preset::S),
            _ => None,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L" | "l" => Ok(Preset::L),
            "S" | "s" => Ok(Preset::S),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected L or S)"))),
        }
    }
}

/// One stage of depthwise-separable blocks. The first block of every stage
/// downsamples by 2.
#[derive(Clone, Debug, PartialEq)]
pub struct StageConfig {
    pub blocks: usize,
    pub channels: usize,
    /// Width multiplier of the pointwise expansion inside each block.
    pub expansion: f64,
    /// Output width of the stage's pointwise hub, if it has one.
    pub hub_channels: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub input_size: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stages: Vec<StageConfig>,
    pub classes: usize,
}

impl NetworkConfig {
    /// Channel widths for the two presets. They share one macro-structure
    /// (1-2-2-1 blocks, a hub on every stage) and differ only in width.
    pub fn preset(preset: Preset, input_size: usize) -> Result<Self> {
        let (stem, widths, hub_fraction): (usize, [usize; 4], f64) = match preset {
            Preset::L => (24, [40, 80, 160, 320], 1.0),
            Preset::S => (24, [24, 48, 96, 192], 0.5),
            Preset::Custom => {
                return Err(Error::Config("custom networks have no preset widths".into()))
            }
        };
        let blocks = [1, 2, 2, 1];
        let stages = widths
            .iter()
            .zip(blocks)
            .map(|(&channels, blocks)| StageConfig {
                blocks,
                channels,
                expansion: 6.0,
                hub_channels: Some((channels as f64 * hub_fraction).round() as usize),
            })
            .collect();
        let config = NetworkConfig {
            input_size,
            stem_channels: stem,
            stem_kernel: 7,
            stages,
            classes: NUM_CLASSES,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes != NUM_CLASSES {
            return Err(Error::Config(format!(
                "networks classify exactly {NUM_CLASSES} classes, config has {}",
                self.classes
            )));
        }
        if self.input_size == 0 || self.stem_channels == 0 || self.stem_kernel.is_multiple_of(2) {
            return Err(Error::Config(
                "input size and stem width must be positive, stem kernel odd".into(),
            ));
        }
        if self.stages.is_empty() {
            return Err(Error::Config("at least one stage is required".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.blocks == 0 || s.channels == 0 || !(s.expansion > 0.0) {
                return Err(Error::Config(format!(
                    "stage {} needs positive blocks, channels and expansion",
                    i + 1
                )));
            }
            if s.hub_channels == Some(0) {
                return Err(Error::Config(format!("stage {} hub has zero width", i + 1)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    StemConv,
    DwSepBlock,
    Hub,
    Head,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::StemConv => "stem-conv",
            LayerKind::DwSepBlock => "dw-sep-block",
            LayerKind::Hub => "hub",
            LayerKind::Head => "head",
        }
    }
}

/// One entry of the flattened, topologically ordered layer list.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub id: usize,
    pub name: String,
    pub kind: LayerKind,
    /// 0 for the stem and head, otherwise the 1-based stage index.
    pub stage: usize,
    pub channels_in: usize,
    pub channels_out: usize,
    /// Expanded width inside a block (blocks only).
    pub channels_mid: Option<usize>,
    pub expansion: Option<f64>,
    pub stride: usize,
    pub kernel: usize,
    /// Layers whose input receives a projection of this hub's output.
    pub hub_targets: Vec<usize>,
}

/// Expands a config into its layer list. Ids follow execution order, so hub
/// targets always have larger ids than the hub.
pub fn layer_specs(config: &NetworkConfig) -> Result<Vec<LayerSpec>> {
    config.validate()?;
    let mut layers = vec![LayerSpec {
        id: 0,
        name: "stem".into(),
        kind: LayerKind::StemConv,
        stage: 0,
        channels_in: 1,
        channels_out: config.stem_channels,
        channels_mid: None,
        expansion: None,
        stride: 2,
        kernel: config.stem_kernel,
        hub_targets: vec![],
    }];
    let mut channels = config.stem_channels;
    let mut pending_hub: Option<usize> = None;
    for (si, stage) in config.stages.iter().enumerate() {
        let mut stage_block_ids = Vec::new();
        for b in 0..stage.blocks {
            let mid = ((channels as f64 * stage.expansion).round() as usize).max(1);
            let id = layers.len();
            layers.push(LayerSpec {
                id,
                name: format!("stage{}.block{}", si + 1, b),
                kind: LayerKind::DwSepBlock,
                stage: si + 1,
                channels_in: channels,
                channels_out: stage.channels,
                channels_mid: Some(mid),
                expansion: Some(stage.expansion),
                stride: if b == 0 { 2 } else { 1 },
                kernel: 3,
                hub_targets: vec![],
            });
            stage_block_ids.push(id);
            channels = stage.channels;
        }
        if let Some(hub) = pending_hub.take() {
            layers[hub].hub_targets = stage_block_ids;
        }
        if let Some(width) = stage.hub_channels {
            let id = layers.len();
            layers.push(LayerSpec {
                id,
                name: format!("stage{}.hub", si + 1),
                kind: LayerKind::Hub,
                stage: si + 1,
                channels_in: channels,
                channels_out: width,
                channels_mid: None,
                expansion: None,
                stride: 1,
                kernel: 1,
                hub_targets: vec![],
            });
            pending_hub = Some(id);
        }
    }
    let head = layers.len();
    if let Some(hub) = pending_hub {
        layers[hub].hub_targets = vec![head];
    }
    layers.push(LayerSpec {
        id: head,
        name: "head".into(),
        kind: LayerKind::Head,
        stage: 0,
        channels_in: channels,
        channels_out: config.classes,
        channels_mid: None,
        expansion: None,
        stride: 1,
        kernel: 1,
        hub_targets: vec![],
    });
    Ok(layers)
}

/// Checks the structural invariants of a layer list: channel continuity, hub
/// targets pointing strictly forward, stride 2 only on the first block of a
/// stage, and a single trailing head.
pub fn check_structure(layers: &[LayerSpec]) -> Result<()> {
    let fail = |msg: String| Err(Error::Config(msg));
    if layers.last().map(|l| l.kind) != Some(LayerKind::Head)
        || layers.iter().filter(|l| l.kind == LayerKind::Head).count() != 1
    {
        return fail("the head must be the single last layer".into());
    }
    let mut channels = None;
    let mut prev_stage = 0;
    for (i, l) in layers.iter().enumerate() {
        if l.id != i {
            return fail(format!("layer {} has id {}", i, l.id));
        }
        for &t in &l.hub_targets {
            if l.kind != LayerKind::Hub {
                return fail(format!("{} has hub targets but is not a hub", l.name));
            }
            if t <= l.id || t >= layers.len() {
                return fail(format!("{} targets layer {t}, which is not downstream", l.name));
            }
        }
        match l.kind {
            LayerKind::StemConv => channels = Some(l.channels_out),
            LayerKind::DwSepBlock => {
                if channels != Some(l.channels_in) {
                    return fail(format!(
                        "{} expects {} input channels, producer gives {channels:?}",
                        l.name, l.channels_in
                    ));
                }
                let first_of_stage = l.stage != prev_stage;
                if (l.stride == 2) != first_of_stage {
                    return fail(format!("{} has stride {} out of place", l.name, l.stride));
                }
                prev_stage = l.stage;
                channels = Some(l.channels_out);
            }
            LayerKind::Hub => {
                if channels != Some(l.channels_in) {
                    return fail(format!("{} input width mismatch", l.name));
                }
            }
            LayerKind::Head => {
                if channels != Some(l.channels_in) {
                    return fail("head input width mismatch".into());
                }
            }
        }
    }
    Ok(())
}
