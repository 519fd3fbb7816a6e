//! HTTP gateway: authenticated chat sessions over the task kernel, with
//! live event streaming, uploads, feedback capture and durable memory.

pub mod app;
pub mod config;
pub mod store;

pub use app::{router, AppState, GatewayConfig};
pub use config::Settings;
pub use store::Store;
