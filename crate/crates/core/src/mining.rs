//! Multi-scale temporal and spatial context mining.

use ltvc_tensor::nn::{Conv2d, ResBlock, LEAKY_SLOPE};
use ltvc_tensor::{concat, Float, ParamBuilder, ParamVars, Var};
use rand::Rng;

use crate::error::{Error, Result};

/// Maps at full, half and quarter resolution.
pub type Pyramid<T> = [Var<T>; 3];

/// Bilinear backward warp: `out(p) = src(p + flow(p))`, border clamped.
pub fn warp_bilinear<T: Float>(src: &Var<T>, flow: &Var<T>) -> Result<Var<T>> {
    let [n, _, h, w] = src.shape();
    if flow.shape() != [n, 2, h, w] {
        return Err(Error::dim(format!(
            "warp: source {:?} and flow {:?} are not aligned",
            src.shape(),
            flow.shape()
        )));
    }
    Ok(src.warp(flow))
}

/// Pixel pyramid by 2x2 average pooling.
pub fn build_frame_pyramid<T: Float>(x_hat: &Var<T>) -> Result<Pyramid<T>> {
    let [_, _, h, w] = x_hat.shape();
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::dim(format!("frame {w}x{h} cannot be halved twice")));
    }
    let l2 = x_hat.avg_pool2();
    let l3 = l2.avg_pool2();
    Ok([x_hat.clone(), l2, l3])
}

fn check_levels<T: Float>(what: &str, maps: &Pyramid<T>, flows: &Pyramid<T>) -> Result<()> {
    for l in 0..3 {
        let [n, _, h, w] = maps[l].shape();
        if flows[l].shape() != [n, 2, h, w] {
            return Err(Error::dim(format!(
                "{what}: level {} map {:?} and flow {:?} misaligned",
                l + 1,
                maps[l].shape(),
                flows[l].shape()
            )));
        }
    }
    Ok(())
}

/// Two residual blocks at one level's width.
#[derive(Clone, Debug)]
struct CRefine {
    blocks: [ResBlock; 2],
}

impl CRefine {
    fn new<T: Float, R: Rng>(pb: &mut ParamBuilder<'_, T, R>, name: &str, ch: usize) -> Self {
        let mut s = pb.scope(name);
        CRefine {
            blocks: [ResBlock::new(&mut s, "res0", ch), ResBlock::new(&mut s, "res1", ch)],
        }
    }

    fn forward<T: Float>(&self, p: &ParamVars<T>, x: &Var<T>) -> Var<T> {
        self.blocks[1].forward(p, &self.blocks[0].forward(p, x))
    }
}

/// Concatenates a hidden map, squeezes back with a 1x1 conv, then one
/// residual block.
#[derive(Clone, Debug)]
struct HRefine {
    merge: Conv2d,
    block: ResBlock,
}

impl HRefine {
    fn new<T: Float, R: Rng>(pb: &mut ParamBuilder<'_, T, R>, name: &str, ch: usize, hidden: usize) -> Self {
        let mut s = pb.scope(name);
        HRefine {
            merge: Conv2d::new(&mut s, "merge", ch + hidden, ch, 1, 1),
            block: ResBlock::new(&mut s, "res", ch),
        }
    }

    fn forward<T: Float>(&self, p: &ParamVars<T>, x: &Var<T>, hidden: &Var<T>) -> Var<T> {
        self.block.forward(p, &self.merge.forward(p, &concat(&[x, hidden])))
    }
}

#[derive(Clone, Debug)]
pub struct ContextMining {
    feature_pyramid: [Conv2d; 3],
    hidden_down: [Conv2d; 2],
    temporal_refine: [CRefine; 3],
    temporal_hidden: [HRefine; 3],
    spatial_lift: [Conv2d; 3],
    spatial_refine: [CRefine; 3],
    spatial_hidden: [HRefine; 3],
    pub levels: [usize; 3],
    pub hidden: usize,
    pub feature: usize,
}

impl ContextMining {
    pub fn new<T: Float, R: Rng>(
        pb: &mut ParamBuilder<'_, T, R>,
        name: &str,
        feature: usize,
        hidden: usize,
        levels: [usize; 3],
    ) -> Self {
        let mut s = pb.scope(name);
        let [l1, l2, l3] = levels;
        let per_level = |s: &mut ParamBuilder<'_, T, R>, tag: &str| -> ([CRefine; 3], [HRefine; 3]) {
            let r = [0, 1, 2].map(|l| CRefine::new(s, &format!("{tag}_crefine{l}"), levels[l]));
            let h = [0, 1, 2].map(|l| HRefine::new(s, &format!("{tag}_hrefine{l}"), levels[l], hidden));
            (r, h)
        };
        let (temporal_refine, temporal_hidden) = per_level(&mut s, "temporal");
        let spatial_lift = [0, 1, 2].map(|l| Conv2d::new(&mut s, &format!("spatial_lift{l}"), 3, levels[l], 3, 1));
        let (spatial_refine, spatial_hidden) = per_level(&mut s, "spatial");
        ContextMining {
            feature_pyramid: [
                Conv2d::new(&mut s, "fpyr0", feature, l1, 3, 1),
                Conv2d::new(&mut s, "fpyr1", l1, l2, 3, 2),
                Conv2d::new(&mut s, "fpyr2", l2, l3, 3, 2),
            ],
            hidden_down: [
                Conv2d::new(&mut s, "hdown0", hidden, hidden, 3, 2),
                Conv2d::new(&mut s, "hdown1", hidden, hidden, 3, 2),
            ],
            temporal_refine,
            temporal_hidden,
            spatial_lift,
            spatial_refine,
            spatial_hidden,
            levels,
            hidden,
            feature,
        }
    }

    /// Feature pyramid of `F_{t-1}`: stride-1 conv then two stride-2 convs.
    pub fn build_feature_pyramid<T: Float>(&self, p: &ParamVars<T>, f: &Var<T>) -> Result<Pyramid<T>> {
        let [_, c, h, w] = f.shape();
        if c != self.feature {
            return Err(Error::dim(format!("feature has {c} channels, expected {}", self.feature)));
        }
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::dim(format!("feature {w}x{h} not divisible by 4")));
        }
        let a = self.feature_pyramid[0].forward(p, f);
        let b = self.feature_pyramid[1].forward(p, &a.leaky_relu(LEAKY_SLOPE));
        let c = self.feature_pyramid[2].forward(p, &b.leaky_relu(LEAKY_SLOPE));
        Ok([a, b, c])
    }

    /// Hidden map at the three resolutions; the stride-2 convs are shared by
    /// both branches.
    pub fn hidden_pyramid<T: Float>(&self, p: &ParamVars<T>, h: &Var<T>) -> Result<Pyramid<T>> {
        if h.shape()[1] != self.hidden {
            return Err(Error::dim(format!(
                "hidden map has {} channels, expected {}",
                h.shape()[1],
                self.hidden
            )));
        }
        let a = self.hidden_down[0].forward(p, h);
        let b = self.hidden_down[1].forward(p, &a.leaky_relu(LEAKY_SLOPE));
        Ok([h.clone(), a, b])
    }

    /// `CT^l = HRefine(CRefine(warp(F^l, v^l)), HT^l)`; without a hidden
    /// map the HRefine stage is skipped.
    pub fn mine_temporal_context<T: Float>(
        &self,
        p: &ParamVars<T>,
        fpyr: &Pyramid<T>,
        flows: &Pyramid<T>,
        ht: Option<&Var<T>>,
    ) -> Result<Pyramid<T>> {
        check_levels("temporal mining", fpyr, flows)?;
        let hp = ht.map(|h| self.hidden_pyramid(p, h)).transpose()?;
        let mut out = Vec::with_capacity(3);
        for l in 0..3 {
            let warped = warp_bilinear(&fpyr[l], &flows[l])?;
            let c = self.temporal_refine[l].forward(p, &warped);
            out.push(match &hp {
                Some(hp) => {
                    check_hidden(&c, &hp[l], l)?;
                    self.temporal_hidden[l].forward(p, &c, &hp[l])
                }
                None => c,
            });
        }
        Ok(out.try_into().expect("three levels"))
    }

    /// Warped pixels at each level, before feature lifting.
    pub fn spatial_warp<T: Float>(&self, xpyr: &Pyramid<T>, flows: &Pyramid<T>) -> Result<Pyramid<T>> {
        check_levels("spatial mining", xpyr, flows)?;
        let w: Vec<Var<T>> = (0..3)
            .map(|l| warp_bilinear(&xpyr[l], &flows[l]))
            .collect::<Result<_>>()?;
        Ok(w.try_into().expect("three levels"))
    }

    /// `CS^l = HRefine(CRefine(lift(warp(x^l, v^l))), HS^l)`.
    pub fn mine_spatial_context<T: Float>(
        &self,
        p: &ParamVars<T>,
        xpyr: &Pyramid<T>,
        flows: &Pyramid<T>,
        hs: &Var<T>,
    ) -> Result<Pyramid<T>> {
        let warped = self.spatial_warp(xpyr, flows)?;
        let hp = self.hidden_pyramid(p, hs)?;
        let mut out = Vec::with_capacity(3);
        for l in 0..3 {
            let lifted = self.spatial_lift[l].forward(p, &warped[l]);
            let c = self.spatial_refine[l].forward(p, &lifted);
            check_hidden(&c, &hp[l], l)?;
            out.push(self.spatial_hidden[l].forward(p, &c, &hp[l]));
        }
        Ok(out.try_into().expect("three levels"))
    }
}

fn check_hidden<T: Float>(c: &Var<T>, h: &Var<T>, l: usize) -> Result<()> {
    let [n, _, hh, ww] = c.shape();
    let [hn, _, h2, w2] = h.shape();
    if (n, hh, ww) != (hn, h2, w2) {
        return Err(Error::dim(format!(
            "level {} hidden map {:?} does not match context {:?}",
            l + 1,
            h.shape(),
            c.shape()
        )));
    }
    Ok(())
}
