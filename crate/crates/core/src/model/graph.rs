//! Symbolic, rank-generic layer graphs.

use serde::Serialize;

use crate::blocks::BlockVariant;
use crate::error::{Error, Result};
use crate::nn::{batchnorm_param_count, conv_param_count};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct LayerId(pub(crate) usize);

impl LayerId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Unet,
    Multiresunet,
    /// Hand-assembled fragment, e.g. a single block.
    Subgraph,
}

impl Architecture {
    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Unet => "unet",
            Architecture::Multiresunet => "multiresunet",
            Architecture::Subgraph => "subgraph",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unet" | "u-net" => Ok(Architecture::Unet),
            "multiresunet" | "multires" => Ok(Architecture::Multiresunet),
            other => Err(Error::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Input,
    Conv { kernel: usize, filters: usize },
    /// 2×…×2 kernel, stride 2.
    ConvTranspose { filters: usize },
    BatchNorm,
    Relu,
    Sigmoid,
    MaxPool,
    Add,
    Concat,
}

impl LayerKind {
    pub fn type_name(&self) -> &'static str {
        match self {
            LayerKind::Input => "input",
            LayerKind::Conv { .. } => "conv",
            LayerKind::ConvTranspose { .. } => "conv_transpose",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::MaxPool => "maxpool",
            LayerKind::Add => "add",
            LayerKind::Concat => "concat",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<LayerId>,
    pub channels: usize,
    pub extents: Vec<usize>,
}

/// Convolutions created inside one named block, in creation order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockRecord {
    pub name: String,
    pub convs: Vec<LayerId>,
    pub output: LayerId,
}

/// An encoder level feeding the decoder concatenation of the same level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SkipConnection {
    pub level: usize,
    pub encoder: LayerId,
    pub concat: LayerId,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelGraph {
    pub architecture: Architecture,
    pub variant: BlockVariant,
    pub rank: usize,
    pub input_extents: Vec<usize>,
    pub in_channels: usize,
    pub ubase: usize,
    pub alpha: f64,
    layers: Vec<Layer>,
    output: LayerId,
    blocks: Vec<BlockRecord>,
    skips: Vec<SkipConnection>,
}

impl ModelGraph {
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, id: LayerId) -> &Layer {
        &self.layers[id.0]
    }

    pub fn output(&self) -> LayerId {
        self.output
    }

    pub fn blocks(&self) -> &[BlockRecord] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&BlockRecord> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn skips(&self) -> &[SkipConnection] {
        &self.skips
    }

    /// `(kernel, filters)` of every convolution in a named block.
    pub fn block_convs(&self, name: &str) -> Option<Vec<(usize, usize)>> {
        self.block(name).map(|b| {
            b.convs
                .iter()
                .filter_map(|&id| match self.layer(id).kind {
                    LayerKind::Conv { kernel, filters } => Some((kernel, filters)),
                    _ => None,
                })
                .collect()
        })
    }

    pub fn output_channels(&self) -> usize {
        self.layer(self.output).channels
    }

    pub fn count_of(&self, pred: impl Fn(&LayerKind) -> bool) -> usize {
        self.layers.iter().filter(|l| pred(&l.kind)).count()
    }

    /// Closed-form trainable parameter count of one layer.
    pub fn layer_params(&self, id: LayerId) -> usize {
        let layer = self.layer(id);
        let cin = || self.layer(layer.inputs[0]).channels;
        match layer.kind {
            LayerKind::Conv { kernel, filters } => conv_param_count(self.rank, kernel, cin(), filters, true),
            LayerKind::ConvTranspose { filters } => conv_param_count(self.rank, 2, cin(), filters, true),
            LayerKind::BatchNorm => batchnorm_param_count(layer.channels),
            _ => 0,
        }
    }
}

/// Incremental construction of a [`ModelGraph`]; every layer's shape is
/// validated as it is added.
#[derive(Debug)]
pub struct GraphBuilder {
    rank: usize,
    input_extents: Vec<usize>,
    in_channels: usize,
    layers: Vec<Layer>,
    blocks: Vec<BlockRecord>,
    skips: Vec<SkipConnection>,
    open: Vec<(String, Vec<LayerId>)>,
}

impl GraphBuilder {
    pub fn new(rank: usize, input_extents: &[usize], in_channels: usize) -> Result<Self> {
        if !(rank == 2 || rank == 3) {
            return Err(Error::Config(format!("spatial rank must be 2 or 3, got {rank}")));
        }
        if input_extents.len() != rank || input_extents.contains(&0) || in_channels == 0 {
            return Err(Error::InvalidShape(format!(
                "input {input_extents:?}x{in_channels} does not describe a rank-{rank} image"
            )));
        }
        Ok(GraphBuilder {
            rank,
            input_extents: input_extents.to_vec(),
            in_channels,
            layers: vec![Layer {
                name: "input".into(),
                kind: LayerKind::Input,
                inputs: vec![],
                channels: in_channels,
                extents: input_extents.to_vec(),
            }],
            blocks: vec![],
            skips: vec![],
            open: vec![],
        })
    }

    pub fn input(&self) -> LayerId {
        LayerId(0)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn channels(&self, id: LayerId) -> usize {
        self.layers[id.0].channels
    }

    pub fn extents(&self, id: LayerId) -> &[usize] {
        &self.layers[id.0].extents
    }

    fn scoped(&self, name: &str) -> String {
        match self.open.last() {
            Some((scope, _)) => format!("{scope}/{name}"),
            None => name.to_string(),
        }
    }

    fn push(&mut self, name: &str, kind: LayerKind, inputs: Vec<LayerId>, channels: usize, extents: Vec<usize>) -> LayerId {
        let id = LayerId(self.layers.len());
        let is_conv = matches!(kind, LayerKind::Conv { .. });
        self.layers.push(Layer {
            name: self.scoped(name),
            kind,
            inputs,
            channels,
            extents,
        });
        if is_conv {
            if let Some((_, convs)) = self.open.last_mut() {
                convs.push(id);
            }
        }
        id
    }

    pub fn conv(&mut self, x: LayerId, kernel: usize, filters: usize, name: &str) -> Result<LayerId> {
        if filters == 0 || kernel == 0 {
            return Err(Error::InvalidWidth(format!("{name}: {kernel}x{kernel} conv with {filters} filters")));
        }
        let ext = self.extents(x).to_vec();
        Ok(self.push(name, LayerKind::Conv { kernel, filters }, vec![x], filters, ext))
    }

    pub fn conv_transpose(&mut self, x: LayerId, filters: usize, name: &str) -> Result<LayerId> {
        if filters == 0 {
            return Err(Error::InvalidWidth(format!("{name}: zero filters")));
        }
        let ext = self.extents(x).iter().map(|e| e * 2).collect();
        Ok(self.push(name, LayerKind::ConvTranspose { filters }, vec![x], filters, ext))
    }

    pub fn batchnorm(&mut self, x: LayerId, name: &str) -> LayerId {
        let (c, ext) = (self.channels(x), self.extents(x).to_vec());
        self.push(name, LayerKind::BatchNorm, vec![x], c, ext)
    }

    pub fn relu(&mut self, x: LayerId, name: &str) -> LayerId {
        let (c, ext) = (self.channels(x), self.extents(x).to_vec());
        self.push(name, LayerKind::Relu, vec![x], c, ext)
    }

    pub fn sigmoid(&mut self, x: LayerId, name: &str) -> LayerId {
        let (c, ext) = (self.channels(x), self.extents(x).to_vec());
        self.push(name, LayerKind::Sigmoid, vec![x], c, ext)
    }

    pub fn maxpool(&mut self, x: LayerId, name: &str) -> Result<LayerId> {
        let ext = self.extents(x).to_vec();
        if ext.iter().any(|e| e % 2 != 0) {
            return Err(Error::shape("maxpool", format!("{name}: extents {ext:?} are not even")));
        }
        let c = self.channels(x);
        Ok(self.push(name, LayerKind::MaxPool, vec![x], c, ext.iter().map(|e| e / 2).collect()))
    }

    /// Residual sum; both operands must agree exactly.
    pub fn add(&mut self, a: LayerId, b: LayerId, name: &str) -> Result<LayerId> {
        if self.channels(a) != self.channels(b) || self.extents(a) != self.extents(b) {
            return Err(Error::shape(
                "add",
                format!(
                    "{name}: {:?}x{} vs {:?}x{}",
                    self.extents(a),
                    self.channels(a),
                    self.extents(b),
                    self.channels(b)
                ),
            ));
        }
        let (c, ext) = (self.channels(a), self.extents(a).to_vec());
        Ok(self.push(name, LayerKind::Add, vec![a, b], c, ext))
    }

    pub fn concat(&mut self, a: LayerId, b: LayerId, name: &str) -> Result<LayerId> {
        if self.extents(a) != self.extents(b) {
            return Err(Error::shape(
                "concat_channels",
                format!("{name}: {:?} vs {:?}", self.extents(a), self.extents(b)),
            ));
        }
        let (c, ext) = (self.channels(a) + self.channels(b), self.extents(a).to_vec());
        Ok(self.push(name, LayerKind::Concat, vec![a, b], c, ext))
    }

    /// conv → batchnorm → optional ReLU.
    pub fn conv_bn(&mut self, x: LayerId, kernel: usize, filters: usize, relu: bool, name: &str) -> Result<LayerId> {
        let c = self.conv(x, kernel, filters, name)?;
        let mut y = self.batchnorm(c, &format!("{name}_bn"));
        if relu {
            y = self.relu(y, &format!("{name}_relu"));
        }
        Ok(y)
    }

    pub fn begin_block(&mut self, name: &str) {
        let full = self.scoped(name);
        self.open.push((full, vec![]));
    }

    pub fn end_block(&mut self, output: LayerId) {
        let (name, convs) = self.open.pop().expect("end_block without begin_block");
        self.blocks.push(BlockRecord { name, convs, output });
    }

    pub fn connect_skip(&mut self, level: usize, encoder: LayerId, concat: LayerId) {
        self.skips.push(SkipConnection { level, encoder, concat });
    }

    pub fn finish(
        self,
        output: LayerId,
        architecture: Architecture,
        variant: BlockVariant,
        ubase: usize,
        alpha: f64,
    ) -> ModelGraph {
        assert!(self.open.is_empty(), "unterminated block scope");
        ModelGraph {
            architecture,
            variant,
            rank: self.rank,
            input_extents: self.input_extents,
            in_channels: self.in_channels,
            ubase,
            alpha,
            layers: self.layers,
            output,
            blocks: self.blocks,
            skips: self.skips,
        }
    }
}
