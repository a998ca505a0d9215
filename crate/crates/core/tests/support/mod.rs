#![allow(dead_code)]
pub mod autoregressive;
pub mod gradcheck;
