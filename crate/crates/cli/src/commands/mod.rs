pub mod cache;
pub mod calibrate;
pub mod eval;
pub mod gen_data;
pub mod report;
