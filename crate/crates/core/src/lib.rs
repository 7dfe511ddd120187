pub mod analytics;
pub mod bridge;
pub mod clock;
pub mod config;
pub mod error;
pub mod gateway;
pub mod model;
pub mod runtime;
pub mod server;
pub mod services;
pub mod sim;
pub mod tour;
