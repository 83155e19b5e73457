pub mod analysis;
pub mod autodiff;
pub mod data;
pub mod nn;
pub mod pde;
pub mod training;
