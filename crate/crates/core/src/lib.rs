//! Entropy-based attention temperature scaling (EAT) on a toy transformer
//! classifier: synthetic shortcut corpora, manual-gradient training,
//! attention entropy measurement, fairness metrics and post-training
//! temperature search.

pub mod cli;
pub mod corpus;
pub mod entropy;
pub mod intra;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod train;
