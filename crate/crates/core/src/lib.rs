pub mod autodiff;
pub mod cli;
pub mod dataset;
pub mod eval;
pub mod mixing;
pub mod models;
pub mod trainer;
