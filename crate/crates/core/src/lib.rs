pub mod analysis;
pub mod cli;
pub mod config;
pub mod dynamics;
pub mod io;
pub mod model;
pub mod plot;
pub mod stability;
pub mod steady;
