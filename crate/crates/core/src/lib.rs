pub mod builtin;
pub mod chunk;
pub mod error;
pub mod harness;
pub mod motw;
pub mod oracle;
pub mod processor;
pub mod rng;
pub mod scenario;
pub mod scheduler;
pub mod stm;
pub mod trace;
pub mod uptree;
pub mod world;
