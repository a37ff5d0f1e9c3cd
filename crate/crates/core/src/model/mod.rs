//! The Siamese similarity network: two BLSTM encoders, two attention-pooling
//! heads and a feed-forward scorer over `[s1; s2; |s2 - s1|]`.

mod forward;
mod io;
mod params;

pub use forward::{
    attention_pool, attention_traced, blstm_forward, blstm_forward_traced, ffn_forward, lstm_step,
    similarity, similarity_forward, AttentionTrace, BlstmTrace, BranchTrace, FfnTrace,
    ForwardTrace, StepTrace,
};
pub use io::{format_model, load_model, parse_model, save_model};
pub use params::{
    Architecture, AttentionParams, BlstmParams, DenseLayer, FfnParams, Gate, Gradient,
    LstmDirectionParams, ModelParams, ParamVector,
};
