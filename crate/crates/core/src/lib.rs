pub mod continuation;
pub mod error;
pub mod harness;
pub mod integrate;
pub mod linalg;
pub mod models;
pub mod orbits;
pub mod sensitivity;
