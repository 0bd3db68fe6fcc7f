pub mod bench;
pub mod cli;
pub mod codec;
pub mod config;
pub mod datasets;
pub mod eval;
pub mod model;
pub mod sampler;
pub mod store;
pub mod table;
pub mod tokenizer;
