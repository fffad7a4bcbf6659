//! Full MultiResUNet and U-Net assemblies.

use crate::blocks::{build_multires_block, build_res_path, compute_block_widths, BlockVariant, DEFAULT_ALPHA};
use crate::error::{Error, Result};
use crate::model::graph::{Architecture, GraphBuilder, LayerId, ModelGraph};

pub const DEFAULT_UBASE: usize = 32;

/// Options shared by both architecture builders.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub rank: usize,
    pub input_extents: Vec<usize>,
    pub in_channels: usize,
    pub ubase: usize,
    pub alpha: f64,
    pub variant: BlockVariant,
}

impl ModelConfig {
    pub fn new(rank: usize, input_extents: &[usize], in_channels: usize) -> Self {
        ModelConfig {
            rank,
            input_extents: input_extents.to_vec(),
            in_channels,
            ubase: DEFAULT_UBASE,
            alpha: DEFAULT_ALPHA,
            variant: BlockVariant::Multires,
        }
    }

    pub fn with_ubase(mut self, ubase: usize) -> Self {
        self.ubase = ubase;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_variant(mut self, variant: BlockVariant) -> Self {
        self.variant = variant;
        self
    }
}

fn check_divisible(extents: &[usize], by: usize) -> Result<()> {
    if extents.iter().any(|e| e % by != 0) {
        return Err(Error::shape(
            "model input",
            format!("extents {extents:?} must be divisible by {by}"),
        ));
    }
    Ok(())
}

/// Four MultiRes encoder levels, a MultiRes centre, four decoder levels fed
/// through Res paths, and a 1×1 sigmoid head.
pub fn build_multiresunet(cfg: &ModelConfig) -> Result<ModelGraph> {
    check_divisible(&cfg.input_extents, 16)?;
    let mut b = GraphBuilder::new(cfg.rank, &cfg.input_extents, cfg.in_channels)?;
    let level_u = |level: usize| cfg.ubase << (level - 1);

    let mut x = b.input();
    let mut encoder: Vec<LayerId> = Vec::with_capacity(4);
    for level in 1..=4 {
        let w = compute_block_widths(level_u(level), cfg.alpha)?;
        let m = build_multires_block(&mut b, x, &w, cfg.variant, &format!("mres{level}"))?;
        encoder.push(m);
        x = b.maxpool(m, &format!("pool{level}"))?;
    }
    let w = compute_block_widths(level_u(5), cfg.alpha)?;
    x = build_multires_block(&mut b, x, &w, cfg.variant, "mres5")?;

    for level in (1..=4).rev() {
        let u = level_u(level);
        let up = b.conv_transpose(x, u, &format!("up{level}"))?;
        let rp = build_res_path(&mut b, level, cfg.ubase, encoder[level - 1], &format!("respath{level}"))?;
        let cat = b.concat(up, rp, &format!("concat{level}"))?;
        b.connect_skip(level, encoder[level - 1], cat);
        let w = compute_block_widths(u, cfg.alpha)?;
        x = build_multires_block(&mut b, cat, &w, cfg.variant, &format!("mres{}", 10 - level))?;
    }
    let head = b.conv(x, 1, 1, "head")?;
    let out = b.sigmoid(head, "head_sigmoid");
    Ok(b.finish(out, Architecture::Multiresunet, cfg.variant, cfg.ubase, cfg.alpha))
}

fn unet_conv(b: &mut GraphBuilder, x: LayerId, filters: usize, bn: bool, name: &str) -> Result<LayerId> {
    if bn {
        b.conv_bn(x, 3, filters, true, name)
    } else {
        let c = b.conv(x, 3, filters, name)?;
        Ok(b.relu(c, &format!("{name}_relu")))
    }
}

/// Baseline U-Net.
///
/// Rank 2: five levels with `ubase·[1,2,4,8,16]` filters, two 3×3 convs per
/// level, transposed convs halving the width, no batch normalization.
/// Rank 3: one level shallower, filters doubled before each pooling, the
/// transposed convs keep their width, every conv batch-normalized.
pub fn build_unet_baseline(cfg: &ModelConfig) -> Result<ModelGraph> {
    let mut b = GraphBuilder::new(cfg.rank, &cfg.input_extents, cfg.in_channels)?;
    let f = cfg.ubase;
    let mut x = b.input();
    let mut encoder = Vec::new();
    let out = if cfg.rank == 2 {
        check_divisible(&cfg.input_extents, 16)?;
        for level in 1..=4 {
            let w = f << (level - 1);
            let c = unet_conv(&mut b, x, w, false, &format!("enc{level}_conv1"))?;
            let c = unet_conv(&mut b, c, w, false, &format!("enc{level}_conv2"))?;
            encoder.push(c);
            x = b.maxpool(c, &format!("pool{level}"))?;
        }
        x = unet_conv(&mut b, x, 16 * f, false, "center_conv1")?;
        x = unet_conv(&mut b, x, 16 * f, false, "center_conv2")?;
        for level in (1..=4).rev() {
            let w = f << (level - 1);
            let up = b.conv_transpose(x, w, &format!("up{level}"))?;
            let cat = b.concat(up, encoder[level - 1], &format!("concat{level}"))?;
            b.connect_skip(level, encoder[level - 1], cat);
            x = unet_conv(&mut b, cat, w, false, &format!("dec{level}_conv1"))?;
            x = unet_conv(&mut b, x, w, false, &format!("dec{level}_conv2"))?;
        }
        x
    } else {
        check_divisible(&cfg.input_extents, 8)?;
        for level in 1..=3 {
            let w = f << (level - 1);
            let c = unet_conv(&mut b, x, w, true, &format!("enc{level}_conv1"))?;
            let c = unet_conv(&mut b, c, 2 * w, true, &format!("enc{level}_conv2"))?;
            encoder.push(c);
            x = b.maxpool(c, &format!("pool{level}"))?;
        }
        x = unet_conv(&mut b, x, 8 * f, true, "center_conv1")?;
        x = unet_conv(&mut b, x, 16 * f, true, "center_conv2")?;
        for level in (1..=3).rev() {
            let skip = b.channels(encoder[level - 1]);
            let up = b.conv_transpose(x, b.channels(x), &format!("up{level}"))?;
            let cat = b.concat(up, encoder[level - 1], &format!("concat{level}"))?;
            b.connect_skip(level, encoder[level - 1], cat);
            x = unet_conv(&mut b, cat, skip, true, &format!("dec{level}_conv1"))?;
            x = unet_conv(&mut b, x, skip, true, &format!("dec{level}_conv2"))?;
        }
        x
    };
    let head = b.conv(out, 1, 1, "head")?;
    let out = b.sigmoid(head, "head_sigmoid");
    Ok(b.finish(out, Architecture::Unet, BlockVariant::Multires, cfg.ubase, 1.0))
}

pub fn build_model(arch: Architecture, cfg: &ModelConfig) -> Result<ModelGraph> {
    match arch {
        Architecture::Unet => build_unet_baseline(cfg),
        Architecture::Multiresunet => build_multiresunet(cfg),
        Architecture::Subgraph => Err(Error::Config("subgraphs are assembled by hand".into())),
    }
}
