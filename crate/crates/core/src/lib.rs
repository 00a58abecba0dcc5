pub mod cli;
pub mod dual;
pub mod error;
pub mod gw;
pub mod linalg;
pub mod measure;
pub mod numeric;
pub mod ot;
pub mod poly;
pub mod polytope;
pub mod rate;
