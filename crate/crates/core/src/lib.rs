//! Toolchain for IoT-LySa: parsing, a reference interpreter with provenance
//! tracking, the control flow analysis over regular tree grammars, and
//! propagation policy checks.

pub mod ast;
pub mod cfa;
pub mod cli;
pub mod parser;
pub mod policy;
pub mod pretty;
pub mod semantics;
pub mod treegram;
