use crate::error::{Error, Result};
use crate::sparse::KernelShape;

use super::config::{BlockConfig, BlockKind, NetworkConfig, Resample, SkipFusion};
use super::exec::Exec;

const S: KernelShape = KernelShape::SPATIAL;
const T: KernelShape = KernelShape::TEMPORAL;
const F: KernelShape = KernelShape::POINTWISE;

/// conv → BatchNorm → ReLU.
fn cbr<E: Exec>(
    e: &mut E,
    name: &str,
    x: &E::Feat,
    shape: KernelShape,
    cout: usize,
) -> Result<E::Feat> {
    let y = e.conv(name, x, shape, cout)?;
    let y = e.batch_norm(&format!("{name}.bn"), &y)?;
    e.relu(&y)
}

/// One residual block. Every conv is followed by BatchNorm and ReLU; the
/// input (projected by a 1x1x1x1 conv when channels change) is added to the
/// branch output before a final ReLU.
///
/// * `Conv4d`: 3x3x3x3 (in→x), 3x3x3x3 (x→y).
/// * `StdbB`: spatial (in→x), temporal (x→x), spatial (x→y), temporal (y→y).
/// * `StdbP`: per set, spatial and temporal on the same input, summed, then a
///   1x1x1x1 fusion; set 1 maps in→x, set 2 x→y.
/// * `StdbD`: spatial→temporal and temporal→spatial paths (in→x→y), summed,
///   then a 1x1x1x1 fusion (y→y).
pub fn block<E: Exec>(e: &mut E, prefix: &str, cfg: &BlockConfig, x: &E::Feat) -> Result<E::Feat> {
    let cin = e.channels(x);
    if cin != cfg.in_ch {
        return Err(Error::shape(
            "block",
            format!(
                "{prefix}: input has {cin} channels, block expects {}",
                cfg.in_ch
            ),
        ));
    }
    let (cx, cy) = (cfg.set1_ch, cfg.set2_ch);
    let n = |s: &str| format!("{prefix}.{s}");
    let out = match cfg.kind {
        BlockKind::Conv4d => {
            let a = cbr(e, &n("c1"), x, KernelShape::FULL, cx)?;
            cbr(e, &n("c2"), &a, KernelShape::FULL, cy)?
        }
        BlockKind::StdbB => {
            let a = cbr(e, &n("s1"), x, S, cx)?;
            let a = cbr(e, &n("t1"), &a, T, cx)?;
            let a = cbr(e, &n("s2"), &a, S, cy)?;
            cbr(e, &n("t2"), &a, T, cy)?
        }
        BlockKind::StdbP => {
            let mut h = x.clone();
            for (set, c) in [("set1", cx), ("set2", cy)] {
                let s = cbr(e, &n(&format!("{set}.s")), &h, S, c)?;
                let t = cbr(e, &n(&format!("{set}.t")), &h, T, c)?;
                let u = e.add(&s, &t)?;
                h = cbr(e, &n(&format!("{set}.f")), &u, F, c)?;
            }
            h
        }
        BlockKind::StdbD => {
            let a = cbr(e, &n("a.s"), x, S, cx)?;
            let a = cbr(e, &n("a.t"), &a, T, cy)?;
            let b = cbr(e, &n("b.t"), x, T, cx)?;
            let b = cbr(e, &n("b.s"), &b, S, cy)?;
            let u = e.add(&a, &b)?;
            cbr(e, &n("f"), &u, F, cy)?
        }
    };
    let residual = if cin != cy {
        e.conv(&n("proj"), x, F, cy)?
    } else {
        x.clone()
    };
    let y = e.add(&out, &residual)?;
    e.relu(&y)
}

/// Runs every stage of the hourglass on `input` (16 channels at level 0).
pub fn network<E: Exec>(e: &mut E, cfg: &NetworkConfig, input: &E::Feat) -> Result<E::Feat> {
    let k = cfg.num_encoder_stages();
    let plan = cfg.block_plan();
    let mut blocks = plan.iter();
    let mut x = input.clone();
    let mut skips = Vec::new();
    for (i, stage) in cfg.stages.iter().enumerate() {
        let num = i + 1;
        e.begin(num, None);
        if i > k {
            let skip: E::Feat = skips
                .pop()
                .ok_or_else(|| Error::Config(format!("stage {num} has no encoder skip")))?;
            x = match NetworkConfig::skip_fusion(e.channels(&x), e.channels(&skip)) {
                SkipFusion::Add => e.add(&x, &skip)?,
                SkipFusion::Concat => e.concat(&x, &skip)?,
            };
        }
        for b in 0..stage.blocks.len() {
            let (_, bcfg) = blocks.next().expect("block plan covers every block");
            e.begin(num, Some(b));
            x = block(e, &format!("s{num}.b{b}"), bcfg, &x)?;
        }
        e.begin(num, None);
        match stage.resample {
            Resample::Pool(s) => {
                skips.push(x.clone());
                x = e.pool(&x, s)?;
            }
            Resample::Up(s) => x = e.up(&x, s)?,
            Resample::None => {}
        }
    }
    Ok(x)
}
