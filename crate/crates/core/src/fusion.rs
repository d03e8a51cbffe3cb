//! Inception-style fusion of spatial and temporal contexts.

use ltvc_tensor::nn::{Conv2d, LEAKY_SLOPE};
use ltvc_tensor::{concat, Float, ParamBuilder, ParamVars, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::mining::Pyramid;

/// Parallel 1x1, 3x3, stacked 3x3 and max-pool branches over `[CS, CT]`,
/// merged by a 1x1 conv and added to `CT`.
#[derive(Clone, Debug)]
struct InceptionLevel {
    point: Conv2d,
    square: Conv2d,
    wide: [Conv2d; 2],
    pool_proj: Conv2d,
    merge: Conv2d,
}

impl InceptionLevel {
    fn new<T: Float, R: Rng>(pb: &mut ParamBuilder<'_, T, R>, name: &str, ch: usize) -> Self {
        let mut s = pb.scope(name);
        let b = ch.div_ceil(2);
        InceptionLevel {
            point: Conv2d::new(&mut s, "point", 2 * ch, b, 1, 1),
            square: Conv2d::new(&mut s, "square", 2 * ch, b, 3, 1),
            wide: [
                Conv2d::new(&mut s, "wide0", 2 * ch, b, 3, 1),
                Conv2d::new(&mut s, "wide1", b, b, 3, 1),
            ],
            pool_proj: Conv2d::new(&mut s, "pool", 2 * ch, b, 1, 1),
            merge: Conv2d::new(&mut s, "merge", 4 * b, ch, 1, 1),
        }
    }

    fn forward<T: Float>(&self, p: &ParamVars<T>, cs: &Var<T>, ct: &Var<T>) -> Var<T> {
        let x = concat(&[cs, ct]);
        let b1 = self.point.forward(p, &x);
        let b2 = self.square.forward(p, &x);
        let b3 = self.wide[1].forward(p, &self.wide[0].forward(p, &x).leaky_relu(LEAKY_SLOPE));
        let b4 = self.pool_proj.forward(p, &x.max_pool3());
        let branches = concat(&[&b1, &b2, &b3, &b4]).leaky_relu(LEAKY_SLOPE);
        ct.add(&self.merge.forward(p, &branches))
    }
}

#[derive(Clone, Debug)]
pub struct ContextFusion {
    levels: [InceptionLevel; 3],
    pub widths: [usize; 3],
}

impl ContextFusion {
    pub fn new<T: Float, R: Rng>(pb: &mut ParamBuilder<'_, T, R>, name: &str, widths: [usize; 3]) -> Self {
        let mut s = pb.scope(name);
        ContextFusion {
            levels: [0, 1, 2].map(|l| InceptionLevel::new(&mut s, &format!("level{l}"), widths[l])),
            widths,
        }
    }

    /// Enhanced contexts `C^{1,2,3}`, shaped like `ct`.
    pub fn fuse_contexts<T: Float>(&self, p: &ParamVars<T>, cs: &Pyramid<T>, ct: &Pyramid<T>) -> Result<Pyramid<T>> {
        for l in 0..3 {
            let [_, c, _, _] = ct[l].shape();
            if cs[l].shape() != ct[l].shape() || c != self.widths[l] {
                return Err(Error::dim(format!(
                    "fusion level {}: CS {:?} / CT {:?}, expected {} channels",
                    l + 1,
                    cs[l].shape(),
                    ct[l].shape(),
                    self.widths[l]
                )));
            }
        }
        Ok([0, 1, 2].map(|l| self.levels[l].forward(p, &cs[l], &ct[l])))
    }
}
