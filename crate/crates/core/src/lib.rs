pub mod decision;
pub mod policy;
pub mod prompt;
pub mod state;
pub mod tokenizer;
pub mod memory;
pub mod web;
pub mod file;
pub mod events;
pub mod kernel;
