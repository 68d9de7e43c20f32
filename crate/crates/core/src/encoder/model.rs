use rand::Rng;

use super::config::{EncoderConfig, N_STAGES};
use super::exit::{ExitOutput, HashExit};
use super::pool::{global_avg_pool, global_avg_pool_backward, part_pool, part_pool_backward};
use super::stage::PatchMix;
use crate::error::{Error, Result};
use crate::hamming::HashCode;
use crate::numerics::{Mode, Module, Tensor};

/// Activation grid flowing between stages; stage 0 is the raw input.
#[derive(Clone, Debug)]
pub struct FeatureMap {
    pub tensor: Tensor,
    pub stage: u8,
}

/// Everything the training objective needs from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub exits: Vec<ExitOutput>,
    /// Continuous exit inputs: part-pooled stage 1, globally pooled stages 2–4.
    pub pooled: Vec<Tensor>,
}

/// Upstream gradients for one exit; absent terms count as zero.
#[derive(Clone, Debug, Default)]
pub struct ExitGrads {
    pub d_pooled: Option<Tensor>,
    pub d_hash: Option<Tensor>,
    pub d_logits: Option<Tensor>,
}

/// Inference encoding of a batch.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// `codes[k][i]`: stage-(k+1) code of sample `i`.
    pub codes: Vec<Vec<HashCode>>,
    /// Continuous pooled features per stage (index 0 is the part-pooled map).
    pub pooled: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    stages: Vec<PatchMix>,
    exits: Vec<HashExit>,
    map_shapes: Vec<Vec<usize>>,
}

impl Encoder {
    pub fn new(config: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let strides = config.strides();
        let lens = config.code_lens();
        let mut in_c = config.input[2];
        let mut stages = Vec::with_capacity(N_STAGES);
        let mut exits = Vec::with_capacity(N_STAGES);
        for k in 0..N_STAGES {
            let (sh, sw) = strides[k];
            stages.push(PatchMix::new(sh, sw, in_c, config.channel_dims[k], rng));
            in_c = config.channel_dims[k];
        }
        for k in 0..N_STAGES {
            let stage = (k + 1) as u8;
            exits.push(HashExit::new(
                stage,
                config.exit_input_dim(k + 1),
                config.hidden_dim,
                lens[k],
                config.num_classes,
                rng,
            ));
        }
        Ok(Self { config, stages, exits, map_shapes: Vec::new() })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        if s.len() != 4 || s[1..] != self.config.input {
            return Err(Error::Dimension(format!(
                "encoder expects N×{:?} input, got {:?}",
                self.config.input, s
            )));
        }
        x.ensure_finite("encoder input")
    }

    /// Applies stage `k` (1-based) to the output of stage `k − 1`.
    pub fn run_stage(&self, k: usize, input: &FeatureMap) -> Result<FeatureMap> {
        if !(1..=N_STAGES).contains(&k) || usize::from(input.stage) != k - 1 {
            return Err(Error::Pipeline(format!("stage {k} cannot consume a stage-{} map", input.stage)));
        }
        if k == 1 {
            self.check_input(&input.tensor)?;
        }
        Ok(FeatureMap { tensor: self.stages[k - 1].forward_infer(&input.tensor)?, stage: k as u8 })
    }

    pub fn forward_all(&mut self, x: &Tensor, mode: Mode) -> Result<ForwardOutput> {
        self.check_input(x)?;
        let mut h = x.clone();
        let mut pooled = Vec::with_capacity(N_STAGES);
        let mut exits = Vec::with_capacity(N_STAGES);
        self.map_shapes.clear();
        for k in 0..N_STAGES {
            h = self.stages[k].forward(&h)?;
            self.map_shapes.push(h.shape().to_vec());
            let p = if k == 0 { part_pool(&h)? } else { global_avg_pool(&h)? };
            exits.push(self.exits[k].forward(&p, mode)?);
            pooled.push(p);
        }
        Ok(ForwardOutput { exits, pooled })
    }

    /// Pure inference pass.
    pub fn forward_infer(&self, x: &Tensor) -> Result<ForwardOutput> {
        self.check_input(x)?;
        let mut map = FeatureMap { tensor: x.clone(), stage: 0 };
        let mut pooled = Vec::with_capacity(N_STAGES);
        let mut exits = Vec::with_capacity(N_STAGES);
        for k in 0..N_STAGES {
            map = self.run_stage(k + 1, &map)?;
            let p = if k == 0 { part_pool(&map.tensor)? } else { global_avg_pool(&map.tensor)? };
            exits.push(self.exits[k].forward_infer(&p)?);
            pooled.push(p);
        }
        Ok(ForwardOutput { exits, pooled })
    }

    pub fn encode(&self, x: &Tensor) -> Result<Encoded> {
        let out = self.forward_infer(x)?;
        let codes = out.exits.iter().map(ExitOutput::codes).collect::<Result<Vec<_>>>()?;
        Ok(Encoded { codes, pooled: out.pooled })
    }

    /// Back-propagates through all exits and stages, accumulating parameter gradients.
    pub fn backward(&mut self, grads: &[ExitGrads]) -> Result<()> {
        if grads.len() != N_STAGES || self.map_shapes.len() != N_STAGES {
            return Err(Error::Pipeline("backward needs a preceding train forward and four exit gradients".into()));
        }
        let mut d_map: Option<Tensor> = None;
        for k in (0..N_STAGES).rev() {
            let g = &grads[k];
            let mut d_pool = self.exits[k].backward(g.d_hash.as_ref(), g.d_logits.as_ref())?;
            if let Some(d) = &g.d_pooled {
                d_pool.add_assign(d)?;
            }
            let shape = &self.map_shapes[k];
            let mut d = if k == 0 { part_pool_backward(&d_pool, shape)? } else { global_avg_pool_backward(&d_pool, shape)? };
            if let Some(from_next) = d_map.take() {
                d.add_assign(&from_next)?;
            }
            d_map = Some(self.stages[k].backward(&d)?);
        }
        Ok(())
    }
}

impl Module for Encoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        for (k, s) in self.stages.iter().enumerate() {
            s.visit(&format!("{prefix}stage{}.mix", k + 1), f);
        }
        for (k, e) in self.exits.iter().enumerate() {
            e.visit(&format!("{prefix}exit{}", k + 1), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (k, s) in self.stages.iter_mut().enumerate() {
            s.visit_mut(&format!("{prefix}stage{}.mix", k + 1), f);
        }
        for (k, e) in self.exits.iter_mut().enumerate() {
            e.visit_mut(&format!("{prefix}exit{}", k + 1), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::config::Preset;
    use crate::rng::substream;

    fn toy_input(n: usize, seed: u64) -> Tensor {
        let mut rng = substream(seed, "input");
        Tensor::new(vec![n, 32, 16, 3], (0..n * 32 * 16 * 3).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn toy_stage_shapes_and_code_lengths() {
        let enc = Encoder::new(EncoderConfig::preset(Preset::Toy, 5), &mut substream(1, "init")).unwrap();
        let s1 = enc.run_stage(1, &FeatureMap { tensor: toy_input(2, 1), stage: 0 }).unwrap();
        assert_eq!(s1.tensor.shape(), &[2, 8, 4, 32]);
        let out = enc.forward_infer(&toy_input(2, 1)).unwrap();
        let lens: Vec<usize> = out.exits.iter().map(ExitOutput::code_len).collect();
        assert_eq!(lens, vec![32, 32, 128, 256]);
        assert_eq!(out.pooled[0].shape(), &[2, 128]);
    }

    #[test]
    fn stages_must_run_in_order() {
        let enc = Encoder::new(EncoderConfig::preset(Preset::Toy, 5), &mut substream(1, "init")).unwrap();
        let raw = FeatureMap { tensor: toy_input(1, 1), stage: 0 };
        assert!(matches!(enc.run_stage(2, &raw), Err(Error::Pipeline(_))));
    }

    #[test]
    fn paper_dims_stage_one() {
        let mut cfg = EncoderConfig::preset(Preset::PaperDims, 5);
        // keep the test light: only stage 1 is exercised
        cfg.code_len = 8;
        cfg.hidden_dim = 8;
        let enc = Encoder::new(cfg, &mut substream(1, "init")).unwrap();
        let x = Tensor::filled(&[1, 256, 128, 3], 0.1);
        let s1 = enc.run_stage(1, &FeatureMap { tensor: x, stage: 0 }).unwrap();
        assert_eq!(s1.tensor.shape(), &[1, 64, 32, 256]);
        assert_eq!(part_pool(&s1.tensor).unwrap().shape(), &[1, 1024]);
    }

    #[test]
    fn deterministic_forward() {
        let make = || Encoder::new(EncoderConfig::preset(Preset::Toy, 5), &mut substream(9, "init")).unwrap();
        let x = toy_input(3, 2);
        let a = make().encode(&x).unwrap();
        let b = make().encode(&x).unwrap();
        assert_eq!(a.codes, b.codes);
        let bits = |e: &Encoded| e.pooled.iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn infer_codes_are_signs_of_embeddings() {
        let enc = Encoder::new(EncoderConfig::preset(Preset::Toy, 5), &mut substream(3, "init")).unwrap();
        let out = enc.forward_infer(&toy_input(4, 3)).unwrap();
        for e in &out.exits {
            for (i, code) in e.codes().unwrap().iter().enumerate() {
                let expect: Vec<f64> = e.embedding.row(i).iter().map(|&v| if v > 0.0 { 1.0 } else { -1.0 }).collect();
                assert_eq!(code.unpack(), expect);
            }
        }
    }

    #[test]
    fn wrong_input_shape() {
        let enc = Encoder::new(EncoderConfig::preset(Preset::Toy, 5), &mut substream(3, "init")).unwrap();
        assert!(enc.forward_infer(&Tensor::zeros(&[1, 16, 16, 3])).is_err());
    }
}
