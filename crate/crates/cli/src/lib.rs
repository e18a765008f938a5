pub mod commands;
pub mod container;
