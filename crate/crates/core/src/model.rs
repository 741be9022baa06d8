//! Encoder + pooling + head, and the [`Classifier`] interface shared with
//! the baseline so both go through the same training loop.

use serde::{Deserialize, Serialize};

use crate::encoder::{pool, pool_backward, Encoder, EncoderCache, EncoderConfig, PoolingMode};
use crate::error::ModelError;
use crate::head::{Head, HeadCache, HeadConfig, VulnPrediction};
use crate::nn::{Mode, Parameter, Parameters, RngState};
use crate::tensor::Scalar;
use crate::tokenizer::TokenizedSample;

/// A binary classifier over tokenized functions with a hand-written
/// backward pass.
pub trait Classifier<T: Scalar>: Parameters<T> + Send + Sync {
    type Cache;

    /// Returns the `[non_vulnerable, vulnerable]` logits.
    fn forward(
        &self,
        sample: &TokenizedSample,
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<([T; 2], Self::Cache), ModelError>;

    /// Accumulates parameter gradients given `∂L/∂logits`.
    fn backward(&mut self, cache: &Self::Cache, d_logits: [T; 2]) -> Result<(), ModelError>;

    /// Eval-mode prediction; no randomness is consumed.
    fn predict(&self, id: &str, sample: &TokenizedSample) -> Result<VulnPrediction, ModelError> {
        let (l, _) = self.forward(sample, Mode::Eval, &mut RngState::new(0))?;
        Ok(VulnPrediction::from_logits(id, [l[0].as_f64(), l[1].as_f64()]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub encoder: EncoderConfig,
    pub pooling: PoolingMode,
    pub head: HeadConfig,
}

impl DetectorConfig {
    /// Head sized for `pooling`, with the default dropout and width.
    pub fn new(encoder: EncoderConfig, pooling: PoolingMode) -> Self {
        let input = pooling.feature_dim(encoder.hidden_dim, encoder.num_layers);
        Self {
            encoder,
            pooling,
            head: HeadConfig::new(input),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.encoder.validate()?;
        self.head.validate()?;
        let want = self
            .pooling
            .feature_dim(self.encoder.hidden_dim, self.encoder.num_layers);
        if self.head.input_dim != want {
            return Err(ModelError::Config(format!(
                "{} pooling yields {want} features but the head takes {}",
                self.pooling, self.head.input_dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VulnDetector<T> {
    pub pooling: PoolingMode,
    pub encoder: Encoder<T>,
    pub head: Head<T>,
}

#[derive(Debug, Clone)]
pub struct DetectorCache<T> {
    encoder: EncoderCache<T>,
    head: HeadCache<T>,
    seq: usize,
}

impl<T: Scalar> VulnDetector<T> {
    pub fn init(config: &DetectorConfig, rng: &mut RngState) -> Result<Self, ModelError> {
        config.validate()?;
        let encoder = Encoder::init(config.encoder.clone(), rng)?;
        let head = Head::init(config.head, rng)?;
        Ok(Self {
            pooling: config.pooling,
            encoder,
            head,
        })
    }

    pub fn config(&self) -> DetectorConfig {
        DetectorConfig {
            encoder: self.encoder.config.clone(),
            pooling: self.pooling,
            head: self.head.config,
        }
    }
}

impl<T: Scalar> Classifier<T> for VulnDetector<T> {
    type Cache = DetectorCache<T>;

    /// Runs only the unpadded prefix. Masked keys contribute exactly zero
    /// attention weight, so the result matches a full padded pass.
    fn forward(
        &self,
        sample: &TokenizedSample,
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<([T; 2], DetectorCache<T>), ModelError> {
        let n = sample.true_length;
        let (acts, encoder) = self.encoder.forward(
            &sample.token_ids[..n],
            &sample.attention_mask[..n],
            mode,
            rng,
        )?;
        let feature = pool(&acts, self.pooling)?;
        let (logits, head) = self.head.forward(&feature, mode, rng)?;
        Ok((logits, DetectorCache { encoder, head, seq: n }))
    }

    fn backward(&mut self, cache: &DetectorCache<T>, d_logits: [T; 2]) -> Result<(), ModelError> {
        let d_feature = self.head.backward(&cache.head, d_logits)?;
        let grads = pool_backward(
            &d_feature,
            self.pooling,
            self.encoder.layers.len() + 1,
            cache.seq,
            self.encoder.config.hidden_dim,
        );
        self.encoder.backward(&cache.encoder, &grads)?;
        Ok(())
    }
}

impl<T: Scalar> Parameters<T> for VulnDetector<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        self.encoder.visit_params(f);
        self.head.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.encoder.visit_params_mut(f);
        self.head.visit_params_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::pool;
    use crate::head::training_loss;
    use crate::nn::gradcheck::{check_parameters, GradCheckOptions};
    use proptest::prelude::*;
    use crate::tokenizer::{FallbackTokenizer, Tokenizer};

    fn small_config(pooling: PoolingMode) -> DetectorConfig {
        let encoder = EncoderConfig {
            vocab_size: 1024,
            hidden_dim: 8,
            num_layers: 2,
            num_heads: 2,
            ffn_dim: 16,
            max_positions: 16,
            dropout_p: 0.0,
        };
        let mut c = DetectorConfig::new(encoder, pooling);
        c.head.dense_dim = 12;
        c.head.dropout_p = 0.0;
        c
    }

    fn sample(text: &str, max_length: usize) -> TokenizedSample {
        Tokenizer::Fallback(FallbackTokenizer::c_default(1024).unwrap()).encode(text, max_length)
    }

    #[test]
    fn prefix_forward_matches_padded_encode() {
        let config = DetectorConfig::new(EncoderConfig::tiny(), PoolingMode::MeanLayersCls);
        let m = VulnDetector::<f32>::init(&config, &mut RngState::new(1)).unwrap();
        let s = sample("int f ( int * p ) { return * p ; }", 64);
        assert!(s.true_length < 64);
        let (logits, _) = m.forward(&s, Mode::Eval, &mut RngState::new(0)).unwrap();

        let acts = m.encoder.encode(&s, Mode::Eval, &mut RngState::new(0)).unwrap();
        let feature = pool(&acts, PoolingMode::MeanLayersCls).unwrap();
        let (full, _) = m.head.forward(&feature, Mode::Eval, &mut RngState::new(0)).unwrap();
        assert_eq!(logits, full);
    }

    #[test]
    fn eval_predictions_are_deterministic() {
        let config = DetectorConfig::new(EncoderConfig::tiny(), PoolingMode::FinalCls);
        let a = VulnDetector::<f32>::init(&config, &mut RngState::new(7)).unwrap();
        let b = VulnDetector::<f32>::init(&config, &mut RngState::new(7)).unwrap();
        let s = sample("void g ( ) { char * q = NULL ; * q = 0 ; }", 64);
        assert_eq!(a.predict("g", &s).unwrap(), b.predict("g", &s).unwrap());
        assert_eq!(a.predict("g", &s).unwrap(), a.predict("g", &s).unwrap());
    }

    #[test]
    fn head_width_follows_pooling() {
        for mode in PoolingMode::ALL {
            let c = DetectorConfig::new(EncoderConfig::tiny(), mode);
            let want = if mode == PoolingMode::ConcatLayersCls { 3 * 64 } else { 64 };
            assert_eq!(c.head.input_dim, want);
            assert_eq!(c.head.dense_dim, 512);
            assert_eq!(c.head.dropout_p, 0.3);
        }
        let mut bad = DetectorConfig::new(EncoderConfig::tiny(), PoolingMode::FinalCls);
        bad.pooling = PoolingMode::ConcatLayersCls;
        assert!(matches!(bad.validate(), Err(ModelError::Config(_))));
    }

    #[test]
    fn out_of_vocabulary_id_is_an_error() {
        let m = VulnDetector::<f32>::init(&small_config(PoolingMode::FinalCls), &mut RngState::new(0)).unwrap();
        let mut s = sample("a b", 8);
        s.token_ids[1] = 5000;
        assert!(matches!(
            m.forward(&s, Mode::Eval, &mut RngState::new(0)),
            Err(ModelError::TokenOutOfRange { id: 5000, .. })
        ));
    }

    #[test]
    fn gradient_check_end_to_end() {
        for mode in PoolingMode::ALL {
            let mut m = VulnDetector::<f64>::init(&small_config(mode), &mut RngState::new(11)).unwrap();
            m.visit_params_mut(&mut |p| {
                if p.value.shape().len() == 2 {
                    p.value = p.value.scale(10.0);
                }
            });
            let s = sample("if ( p == NULL ) return ; x = p -> next ;", 12);
            let label = 1;
            m.zero_grad();
            let (l, cache) = m.forward(&s, Mode::Train, &mut RngState::new(0)).unwrap();
            let (_, dl) = training_loss(l, label).unwrap();
            m.backward(&cache, dl).unwrap();
            let r = check_parameters(
                &mut m,
                |m| {
                    let (l, _) = m.forward(&s, Mode::Eval, &mut RngState::new(0)).unwrap();
                    training_loss(l, label).unwrap().0
                },
                &GradCheckOptions::sampled(6, 3),
            );
            assert!(r.checked > 100, "{mode}: {r:?}");
            assert!(r.max_rel_error < 1e-4, "{mode}: {r:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn pad_region_ids_do_not_reach_the_output(
            content in prop::collection::vec(5u32..1024, 0..10),
            junk in prop::collection::vec(0u32..1024, 14),
            seed in 0u64..1000,
        ) {
            for mode in PoolingMode::ALL {
                let m = VulnDetector::<f32>::init(&small_config(mode), &mut RngState::new(seed)).unwrap();
                let specials = Tokenizer::Fallback(FallbackTokenizer::c_default(1024).unwrap()).specials();
                let clean = TokenizedSample::assemble(&content, &specials, 16);
                let mut dirty = clean.clone();
                for i in clean.true_length..16 {
                    dirty.token_ids[i] = junk[i - 2];
                }
                let feature = |s: &TokenizedSample| {
                    let acts = m.encoder.encode(s, Mode::Eval, &mut RngState::new(0)).unwrap();
                    pool(&acts, mode).unwrap()
                };
                let (a, b) = (feature(&clean), feature(&dirty));
                prop_assert!((a.norm() - b.norm()).abs() < 1e-6);
                prop_assert_eq!(
                    m.predict("x", &clean).unwrap().verdict,
                    m.predict("x", &dirty).unwrap().verdict
                );
            }
        }
    }
}
