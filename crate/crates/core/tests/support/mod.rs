#![allow(dead_code)]

pub mod friedman_oracle;
pub mod gradcheck;
pub mod matching_oracle;
pub mod sandwich;
pub mod stats_oracle;
pub mod table1_oracle;
