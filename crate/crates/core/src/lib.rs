//! Core algorithms for augmenting imbalanced network-traffic datasets.
//!
//! Minority-class flows are synthesized by pairing LSTM-generated packet
//! direction and TCP window sequences with per-feature Gaussian KDE draws for
//! ports, inter-arrival times and payload lengths. A convolutional-recurrent
//! classifier and one-vs-rest metrics measure the effect against the untouched
//! and randomly oversampled training sets.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, configuration
//! and the command line live in the `flowaug` crate.

#![no_std]

extern crate alloc;

pub mod augment;
pub mod classifier;
pub mod density;
pub mod eval;
pub mod flows;
pub(crate) mod math;
pub mod neural;
pub mod seed;
pub mod seqgen;

pub use augment::{BalancePlan, BalanceStrategy, ClassSynthesizer, SynthConfig};
pub use classifier::{CrnnConfig, CrnnModel};
pub use density::{Bandwidth, KdeModel};
pub use eval::{ConfusionMatrix, EvalReport, Variant};
pub use flows::{
    ClassIndex, ClassStats, Dataset, FiveTuple, FlowRecord, PacketFeatures, Transport,
};
pub use seqgen::{LstmGenerator, SequenceCorpus, Vocabulary};
