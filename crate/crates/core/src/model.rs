//! Whole-codec assembly: the sub-networks, the reconstruction buffer and the
//! differentiable P-frame pass used by training.

use ltvc_tensor::nn::{Conv2d, LEAKY_SLOPE};
use ltvc_tensor::{Float, ParamBuilder, ParamStore, ParamVars, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::{init_state, ChainState, ReferenceChain};
use crate::config::ModelConfig;
use crate::context::ContextCodec;
use crate::entropy::gaussian_bits;
use crate::error::{Error, Result};
use crate::fusion::ContextFusion;
use crate::latent::{split_mean_scale, Quantizer};
use crate::mining::{build_frame_pyramid, warp_bilinear, ContextMining, Pyramid};
use crate::motion::{flow_pyramid, FlowNet, MotionCodec};

/// Parameter-free description of every sub-network; the weights live in a
/// separate [`ParamStore`] so the same layout runs in `f32` and `f64`.
#[derive(Clone, Debug)]
pub struct Networks {
    pub config: ModelConfig,
    pub flow: FlowNet,
    pub motion: MotionCodec,
    pub chain: ReferenceChain,
    pub mining: ContextMining,
    pub fusion: ContextFusion,
    pub context: ContextCodec,
    intra_feature: [Conv2d; 2],
}

/// Previous reconstruction, its feature and the chain state.
#[derive(Clone, Debug)]
pub struct ReconstructionBuffer<T: Float> {
    pub x_hat: Var<T>,
    pub feature: Var<T>,
    pub chain: ChainState<T>,
}

impl<T: Float> ReconstructionBuffer<T> {
    /// Same values, cut from any tape.
    pub fn detach(&self) -> Self {
        ReconstructionBuffer {
            x_hat: self.x_hat.detach(),
            feature: self.feature.detach(),
            chain: self.chain.detach(),
        }
    }

    pub fn height(&self) -> usize {
        self.x_hat.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.x_hat.shape()[3]
    }
}

/// Result of one differentiable P-frame pass.
pub struct PFrameOutput<T: Float> {
    pub x_hat: Var<T>,
    /// `None` when only the motion path ran.
    pub feature: Option<Var<T>>,
    pub v_hat: Var<T>,
    /// Motion hyper, motion, context hyper, context; each a scalar in bits.
    pub bits: [Var<T>; 4],
}

impl<T: Float> PFrameOutput<T> {
    pub fn total_bits(&self) -> Var<T> {
        ltvc_tensor::sum_all(&[&self.bits[0], &self.bits[1], &self.bits[2], &self.bits[3]])
    }
}

impl Networks {
    pub fn build<T: Float, R: Rng>(config: &ModelConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config;
        let mut pb = ParamBuilder::new(store, rng);
        Ok(Networks {
            flow: FlowNet::new(&mut pb, "flow", c.flow_width),
            motion: MotionCodec::new(&mut pb, "motion", c.motion_width, c.motion_latent, c.hyper),
            chain: ReferenceChain::new(&mut pb, "chain", c.hidden, c.feature),
            mining: ContextMining::new(&mut pb, "mining", c.feature, c.hidden, c.levels),
            fusion: ContextFusion::new(&mut pb, "fusion", c.levels),
            context: ContextCodec::new(&mut pb, "context", c.levels, c.codec_width, c.latent, c.hyper, c.feature),
            intra_feature: [
                Conv2d::new(&mut pb, "intra_feature0", 3, c.feature, 3, 1),
                Conv2d::new(&mut pb, "intra_feature1", c.feature, c.feature, 3, 1),
            ],
            config: c.clone(),
        })
    }

    /// Feature `F` of an intra reconstruction.
    pub fn intra_feature<T: Float>(&self, p: &ParamVars<T>, x_hat: &Var<T>) -> Var<T> {
        let h = self.intra_feature[0].forward(p, x_hat).leaky_relu(LEAKY_SLOPE);
        self.intra_feature[1].forward(p, &h)
    }

    /// Buffer after an I-frame: zero chain advanced once with the intra
    /// reconstruction and its feature.
    pub fn start_gop<T: Float>(&self, p: &ParamVars<T>, x_hat: &Var<T>) -> Result<ReconstructionBuffer<T>> {
        let [_, c, h, w] = x_hat.shape();
        if c != 3 || h % 16 != 0 || w % 16 != 0 {
            return Err(Error::dim(format!("intra frame {:?} is not a padded RGB frame", x_hat.shape())));
        }
        let feature = self.intra_feature(p, x_hat);
        let state = init_state(self.config.hidden, h, w);
        let chain = self.chain.advance(p, x_hat, &feature, &state, self.config.variant)?;
        Ok(ReconstructionBuffer {
            x_hat: x_hat.clone(),
            feature,
            chain,
        })
    }

    /// New buffer holding `(x_hat, feature)` with the chain advanced on them;
    /// `buf` is left as it was.
    pub fn update_buffer<T: Float>(
        &self,
        p: &ParamVars<T>,
        buf: &ReconstructionBuffer<T>,
        x_hat: &Var<T>,
        feature: &Var<T>,
    ) -> Result<ReconstructionBuffer<T>> {
        let chain = self.chain.advance(p, x_hat, feature, &buf.chain, self.config.variant)?;
        Ok(ReconstructionBuffer {
            x_hat: x_hat.clone(),
            feature: feature.clone(),
            chain,
        })
    }

    /// Enhanced contexts `C^{1,2,3}` for the current frame from the buffer and
    /// the decoded flow.
    pub fn contexts<T: Float>(&self, p: &ParamVars<T>, buf: &ReconstructionBuffer<T>, v_hat: &Var<T>) -> Result<Pyramid<T>> {
        let variant = self.config.variant;
        let flows = flow_pyramid(v_hat)?;
        let fpyr = self.mining.build_feature_pyramid(p, &buf.feature)?;
        let ht = variant.uses_chain().then_some(&buf.chain.ht);
        let ct = self.mining.mine_temporal_context(p, &fpyr, &flows, ht)?;
        if !variant.uses_spatial() {
            return Ok(ct);
        }
        let xpyr = build_frame_pyramid(&buf.x_hat)?;
        let cs = self.mining.mine_spatial_context(p, &xpyr, &flows, &buf.chain.hs)?;
        self.fusion.fuse_contexts(p, &cs, &ct)
    }

    /// Differentiable P-frame pass. With `motion_only` the context path is
    /// skipped and `x_hat` is the previous reconstruction warped by `v_hat`.
    pub fn p_frame<T: Float, R: Rng>(
        &self,
        p: &ParamVars<T>,
        x: &Var<T>,
        buf: &ReconstructionBuffer<T>,
        quant: &mut Quantizer<'_, R>,
        motion_only: bool,
    ) -> Result<PFrameOutput<T>> {
        if x.shape() != buf.x_hat.shape() {
            return Err(Error::dim(format!(
                "frame {:?} does not match buffer {:?}",
                x.shape(),
                buf.x_hat.shape()
            )));
        }
        let [_, _, h, w] = x.shape();
        let v = self.flow.forward(p, x, &buf.x_hat)?;
        let m = self.motion.analyze(p, &v);
        let zm = self.motion.hyper.analyze(p, &m);
        let (zm_hat, zm_rate) = quant.plain(&zm);
        let zm_bits = self.motion.hyper.prior.bits(p, &zm_rate).sum();
        let (mu_m, sigma_m) = split_mean_scale(&self.motion.hyper.synthesize(p, &zm_hat, h / 16, w / 16));
        let (m_hat, m_rate) = quant.centered(&m, &mu_m);
        let m_bits = gaussian_bits(&m_rate, &sigma_m).sum();
        let v_hat = self.motion.synthesize(p, &m_hat);

        if motion_only {
            let x_hat = warp_bilinear(&buf.x_hat, &v_hat)?;
            let zero = Var::constant(ltvc_tensor::Tensor::scalar(T::cast_from(0.0)));
            return Ok(PFrameOutput {
                x_hat,
                feature: None,
                v_hat,
                bits: [zm_bits, m_bits, zero.clone(), zero],
            });
        }

        let ctx = self.contexts(p, buf, &v_hat)?;
        let y = self.context.analyze(p, x, &ctx)?;
        let z = self.context.hyper.analyze(p, &y);
        let (z_hat, z_rate) = quant.plain(&z);
        let z_bits = self.context.hyper.prior.bits(p, &z_rate).sum();
        let (mu, sigma) = self.context.prior(p, &z_hat, &ctx);
        let (y_hat, y_rate) = quant.centered(&y, &mu);
        let y_bits = gaussian_bits(&y_rate, &sigma).sum();
        let (x_hat, feature) = self.context.synthesize(p, &y_hat, &ctx)?;
        Ok(PFrameOutput {
            x_hat,
            feature: Some(feature),
            v_hat,
            bits: [zm_bits, m_bits, z_bits, y_bits],
        })
    }
}

/// Networks plus their `f32` weights.
#[derive(Clone, Debug)]
pub struct Model {
    pub nets: Networks,
    pub params: ParamStore<f32>,
}

impl Model {
    /// Fresh model with weights drawn from a seeded generator.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let nets = Networks::build(config, &mut params, &mut rng)?;
        Ok(Model { nets, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.nets.config
    }

    /// Weights as tape-free constants.
    pub fn constants(&self) -> ParamVars<f32> {
        self.params.constants()
    }
}
