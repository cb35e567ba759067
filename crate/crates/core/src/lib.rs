pub mod canon;
pub mod cli;
pub mod corpus;
pub mod dict;
pub mod embed;
pub mod eval;
pub mod fuzz;
pub mod llm;
pub mod nn;
pub mod pipeline;
pub mod python;
pub mod skeleton;
pub mod train;
