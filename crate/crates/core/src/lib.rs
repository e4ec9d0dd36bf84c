//! Infeasibility localization for combined transmission and distribution
//! networks, solved centrally or by Gauss-Jacobi-Newton / ADMM decomposition.

pub mod admm;
pub mod coupling;
pub mod ecf;
pub mod gjn;
pub mod netmodel;
pub mod pdip;
pub mod report;
