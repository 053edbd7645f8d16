//! Generators, independent oracles and authored fixture corpora shared by
//! the integration tests.

#![allow(dead_code)]

pub mod ast;
pub mod corpus;
pub mod reference;
