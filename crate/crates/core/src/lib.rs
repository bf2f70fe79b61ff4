pub mod bench;
pub mod codegen;
pub mod cost;
pub mod dfg;
pub mod dsl;
pub mod optimizer;
pub mod pipeline;
pub mod schedule;
pub mod sim;
pub mod templates;
pub mod tensor;
