//! MultiRes blocks, Res paths and the block width rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::graph::{GraphBuilder, LayerId};

pub const DEFAULT_ALPHA: f64 = 1.67;

/// Share of `W` given to each of the three chained 3×3 convolutions.
///
/// These are the rounded fractions 1/6, 1/3, 1/2 as decimal multipliers;
/// `⌊855.04 / 3⌋ = 285` but the reference widths use 284.
const WIDTH_SHARES: [f64; 3] = [0.167, 0.333, 0.5];

/// Filter counts inside one MultiRes block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockWidths {
    pub base: usize,
    pub alpha: f64,
    pub w1: usize,
    pub w2: usize,
    pub w3: usize,
    pub w_res: usize,
}

impl BlockWidths {
    pub fn as_array(&self) -> [usize; 4] {
        [self.w1, self.w2, self.w3, self.w_res]
    }

    /// Per-branch width of the inception-style ablation variants.
    pub fn branch_width(&self) -> usize {
        self.w_res / 3
    }
}

/// `W = α·U`, then `⌊0.167·W⌋, ⌊0.333·W⌋, ⌊0.5·W⌋` and their sum.
pub fn compute_block_widths(base: usize, alpha: f64) -> Result<BlockWidths> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidWidth(format!("alpha must be positive, got {alpha}")));
    }
    let w = alpha * base as f64;
    let [w1, w2, w3] = WIDTH_SHARES.map(|s| (w * s).floor() as usize);
    if w1 == 0 || w2 == 0 || w3 == 0 {
        return Err(Error::InvalidWidth(format!(
            "U={base}, alpha={alpha} gives widths ({w1}, {w2}, {w3})"
        )));
    }
    Ok(BlockWidths {
        base,
        alpha,
        w1,
        w2,
        w3,
        w_res: w1 + w2 + w3,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BlockVariant {
    /// Parallel 3×3, 5×5 and 7×7 convolutions, concatenated.
    InceptionParallel,
    /// Three chained 3×3 convolutions of equal width, all taps concatenated.
    FactorizedSequence,
    /// Chained 3×3 convolutions of increasing width plus a 1×1 residual.
    #[default]
    Multires,
}

impl BlockVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            BlockVariant::InceptionParallel => "inception_parallel",
            BlockVariant::FactorizedSequence => "factorized_sequence",
            BlockVariant::Multires => "multires",
        }
    }
}

impl std::str::FromStr for BlockVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inception_parallel" | "inception" => Ok(BlockVariant::InceptionParallel),
            "factorized_sequence" | "factorized" => Ok(BlockVariant::FactorizedSequence),
            "multires" => Ok(BlockVariant::Multires),
            other => Err(Error::Config(format!("unknown block variant `{other}`"))),
        }
    }
}

/// Appends one block to `b`, returning its output layer.
pub fn build_multires_block(
    b: &mut GraphBuilder,
    input: LayerId,
    widths: &BlockWidths,
    variant: BlockVariant,
    name: &str,
) -> Result<LayerId> {
    b.begin_block(name);
    let out = match variant {
        BlockVariant::Multires => {
            let c1 = b.conv_bn(input, 3, widths.w1, true, "conv3x3_1")?;
            let c2 = b.conv_bn(c1, 3, widths.w2, true, "conv3x3_2")?;
            let c3 = b.conv_bn(c2, 3, widths.w3, true, "conv3x3_3")?;
            let cat = b.concat(c1, c2, "concat_12")?;
            let cat = b.concat(cat, c3, "concat_123")?;
            let shortcut = b.conv_bn(input, 1, widths.w_res, false, "residual1x1")?;
            let sum = b.add(cat, shortcut, "add")?;
            let bn = b.batchnorm(sum, "out_bn");
            b.relu(bn, "out_relu")
        }
        BlockVariant::InceptionParallel => {
            let f = widths.branch_width();
            let c3 = b.conv_bn(input, 3, f, true, "conv3x3")?;
            let c5 = b.conv_bn(input, 5, f, true, "conv5x5")?;
            let c7 = b.conv_bn(input, 7, f, true, "conv7x7")?;
            let cat = b.concat(c3, c5, "concat_35")?;
            b.concat(cat, c7, "concat_357")?
        }
        BlockVariant::FactorizedSequence => {
            let f = widths.branch_width();
            let c1 = b.conv_bn(input, 3, f, true, "conv3x3_1")?;
            let c2 = b.conv_bn(c1, 3, f, true, "conv3x3_2")?;
            let c3 = b.conv_bn(c2, 3, f, true, "conv3x3_3")?;
            let cat = b.concat(c1, c2, "concat_12")?;
            b.concat(cat, c3, "concat_123")?
        }
    };
    b.end_block(out);
    Ok(out)
}

/// Number of residual sub-blocks on the Res path of `level`.
pub fn res_path_length(level: usize) -> Result<usize> {
    if !(1..=4).contains(&level) {
        return Err(Error::InvalidLevel(level));
    }
    Ok(5 - level)
}

/// Filters on the Res path of `level`: `base · 2^(level−1)`.
pub fn res_path_filters(level: usize, base: usize) -> Result<usize> {
    res_path_length(level)?;
    Ok(base << (level - 1))
}

/// Chain of `relu(bn(bn(relu(conv3x3)) + bn(conv1x1)))` sub-blocks.
pub fn build_res_path(
    b: &mut GraphBuilder,
    level: usize,
    base: usize,
    input: LayerId,
    name: &str,
) -> Result<LayerId> {
    let len = res_path_length(level)?;
    let filters = res_path_filters(level, base)?;
    b.begin_block(name);
    let mut x = input;
    for i in 1..=len {
        let conv = b.conv_bn(x, 3, filters, true, &format!("sub{i}_conv3x3"))?;
        let shortcut = b.conv_bn(x, 1, filters, false, &format!("sub{i}_residual1x1"))?;
        let sum = b.add(conv, shortcut, &format!("sub{i}_add"))?;
        let bn = b.batchnorm(sum, &format!("sub{i}_bn"));
        x = b.relu(bn, &format!("sub{i}_relu"));
    }
    b.end_block(x);
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::graph::Architecture;
    use crate::model::params::count_parameters;

    #[test]
    fn reference_widths() {
        let w = compute_block_widths(32, DEFAULT_ALPHA).unwrap();
        assert_eq!(w.as_array(), [8, 17, 26, 51]);
        let w = compute_block_widths(512, DEFAULT_ALPHA).unwrap();
        assert_eq!(w.as_array(), [142, 284, 427, 853]);
        let w = compute_block_widths(256, DEFAULT_ALPHA).unwrap();
        assert_eq!(w.as_array(), [71, 142, 213, 426]);
    }

    #[test]
    fn widths_are_monotone() {
        for u in 6..600 {
            let w = compute_block_widths(u, DEFAULT_ALPHA).unwrap();
            assert!(w.w1 <= w.w2 && w.w2 <= w.w3);
            assert_eq!(w.w_res, w.w1 + w.w2 + w.w3);
        }
    }

    #[test]
    fn zero_widths_are_rejected() {
        assert!(matches!(compute_block_widths(2, 1.0), Err(Error::InvalidWidth(_))));
        assert!(compute_block_widths(32, 0.0).is_err());
        assert!(compute_block_widths(32, f64::NAN).is_err());
    }

    fn block_graph(cin: usize, u: usize, variant: BlockVariant) -> crate::model::ModelGraph {
        let mut b = GraphBuilder::new(2, &[16, 16], cin).unwrap();
        let w = compute_block_widths(u, DEFAULT_ALPHA).unwrap();
        let x = b.input();
        let out = build_multires_block(&mut b, x, &w, variant, "blk").unwrap();
        b.finish(out, Architecture::Subgraph, variant, u, DEFAULT_ALPHA)
    }

    #[test]
    fn block_output_channels() {
        assert_eq!(block_graph(3, 32, BlockVariant::Multires).output_channels(), 51);
        assert_eq!(block_graph(512, 256, BlockVariant::Multires).output_channels(), 426);
        assert_eq!(block_graph(3, 32, BlockVariant::InceptionParallel).output_channels(), 51);
        assert_eq!(block_graph(3, 512, BlockVariant::FactorizedSequence).output_channels(), 852);
    }

    #[test]
    fn block_parameters_match_hand_sum() {
        // 3→(8,17,26) chain, 3→51 shortcut, bias on every conv, γ/β per BN,
        // plus the BN after the residual sum.
        let conv = |k: usize, i: usize, o: usize| k * k * i * o + o;
        let want = conv(3, 3, 8) + 16
            + conv(3, 8, 17) + 34
            + conv(3, 17, 26) + 52
            + conv(1, 3, 51) + 102
            + 102;
        assert_eq!(count_parameters(&block_graph(3, 32, BlockVariant::Multires)).total, want);
    }

    #[test]
    fn res_path_shapes() {
        for (level, cin, subs, f) in [(1, 51, 4, 32), (4, 426, 1, 256), (3, 212, 2, 128)] {
            let mut b = GraphBuilder::new(2, &[16, 16], cin).unwrap();
            let x = b.input();
            let out = build_res_path(&mut b, level, 32, x, "rp").unwrap();
            let g = b.finish(out, Architecture::Subgraph, BlockVariant::Multires, 32, 1.67);
            let convs = g.block_convs("rp").unwrap();
            assert_eq!(convs.len(), 2 * subs);
            assert!(convs.iter().all(|&(_, n)| n == f));
            assert_eq!(g.output_channels(), f);
        }
    }

    #[test]
    fn res_path_level_out_of_range() {
        let mut b = GraphBuilder::new(2, &[16, 16], 3).unwrap();
        let x = b.input();
        assert!(matches!(build_res_path(&mut b, 0, 32, x, "rp"), Err(Error::InvalidLevel(0))));
        assert!(matches!(build_res_path(&mut b, 5, 32, x, "rp"), Err(Error::InvalidLevel(5))));
    }

    #[test]
    fn multires_is_leaner_than_parallel_inception() {
        for u in [32, 64, 128, 256, 512] {
            let m = count_parameters(&block_graph(u, u, BlockVariant::Multires)).total;
            let i = count_parameters(&block_graph(u, u, BlockVariant::InceptionParallel)).total;
            assert!(m < i, "U={u}: multires {m} vs inception {i}");
        }
    }
}
