use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_STAGES: usize = 4;
/// Height bands used by part pooling (head, upper torso, lower torso, feet).
pub const N_PARTS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Toy,
    PaperDims,
}

/// Shape contract of the four-stage encoder and its exits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub channel_dims: [usize; N_STAGES],
    /// Input extent as `[H, W, C]`.
    pub input: [usize; 3],
    /// Downsampling applied by stage 1 (the stem).
    pub stem_stride: usize,
    /// Downsampling applied by stages 2–4.
    pub stage_stride: usize,
    /// Stage-1 code length `c`; exits emit `[c, c, 4c, 8c]` bits.
    pub code_len: usize,
    /// Width of the first FC/BN pair in the stage-1 and stage-2 exits.
    pub hidden_dim: usize,
    /// Identities seen by the training classifiers.
    pub num_classes: usize,
}

impl EncoderConfig {
    pub fn preset(preset: Preset, num_classes: usize) -> Self {
        match preset {
            Preset::Toy => Self {
                channel_dims: [32, 64, 128, 256],
                input: [32, 16, 3],
                stem_stride: 4,
                stage_stride: 2,
                code_len: 32,
                hidden_dim: 64,
                num_classes,
            },
            Preset::PaperDims => Self {
                channel_dims: [256, 512, 1024, 2048],
                input: [256, 128, 3],
                stem_stride: 4,
                stage_stride: 2,
                code_len: 256,
                hidden_dim: 512,
                num_classes,
            },
        }
    }

    /// Ratio of this configuration's widest stage to the 2048-wide reference.
    pub fn dim_scale(&self) -> f64 {
        self.channel_dims[N_STAGES - 1] as f64 / 2048.0
    }

    pub fn code_lens(&self) -> [usize; N_STAGES] {
        let c = self.code_len;
        [c, c, 4 * c, 8 * c]
    }

    /// Dimension of the pooled feature feeding exit `stage` (1-based).
    pub fn exit_input_dim(&self, stage: usize) -> usize {
        if stage == 1 {
            N_PARTS * self.channel_dims[0]
        } else {
            self.channel_dims[stage - 1]
        }
    }

    /// Per-stage `(stride_h, stride_w)`; a stride never exceeds the extent it divides.
    pub fn strides(&self) -> [(usize, usize); N_STAGES] {
        let mut out = [(1, 1); N_STAGES];
        let (mut h, mut w) = (self.input[0], self.input[1]);
        for (k, s) in out.iter_mut().enumerate() {
            let f = if k == 0 { self.stem_stride } else { self.stage_stride };
            *s = (f.min(h), f.min(w));
            h /= s.0;
            w /= s.1;
        }
        out
    }

    /// Output extent `(H, W, C)` of each stage.
    pub fn stage_shapes(&self) -> [(usize, usize, usize); N_STAGES] {
        let mut out = [(0, 0, 0); N_STAGES];
        let (mut h, mut w) = (self.input[0], self.input[1]);
        for (k, (sh, sw)) in self.strides().into_iter().enumerate() {
            h /= sh;
            w /= sw;
            out[k] = (h, w, self.channel_dims[k]);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channel_dims.contains(&0) || self.channel_dims.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("channel dims {:?} must be positive and strictly increasing", self.channel_dims));
        }
        if self.input.contains(&0) || self.stem_stride == 0 || self.stage_stride == 0 {
            return bad("input extent and strides must be positive".into());
        }
        let (mut h, mut w) = (self.input[0], self.input[1]);
        for (k, (sh, sw)) in self.strides().into_iter().enumerate() {
            if h % sh != 0 || w % sw != 0 {
                return bad(format!("stage {} stride {sh}x{sw} does not divide {h}x{w}", k + 1));
            }
            h /= sh;
            w /= sw;
            if k == 0 && h % N_PARTS != 0 {
                return bad(format!("stage-1 height {h} is not divisible into {N_PARTS} parts"));
            }
        }
        if self.code_len == 0 || self.hidden_dim == 0 {
            return bad("code length and hidden width must be positive".into());
        }
        if self.num_classes < 2 {
            return bad("classifier heads need at least two identities".into());
        }
        Ok(())
    }
}
