#![allow(dead_code)]

#[path = "../../src/testutil.rs"]
mod testutil;

pub use testutil::*;
