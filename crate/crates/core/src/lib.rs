pub mod baselines;
pub mod checkpoint;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod head;
pub mod model;
pub mod nn;
pub mod synth;
pub mod tensor;
pub mod tokenizer;
pub mod train_eval;
