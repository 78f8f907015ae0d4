pub mod cli;
pub mod config;
pub mod engine;
pub mod geocache;
pub mod httpd;
pub mod harvest;
pub mod mock;
pub mod qa;
pub mod store;
pub mod xml;
