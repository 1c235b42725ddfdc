//! Consistent query answering (CQA) over primary-key repairs.
//!
//! The pipeline goes from a conjunctive-query AST ([`query`]) through join-tree
//! construction ([`hypergraph`]) and attack-graph analysis ([`attack`]) to a
//! non-recursive Datalog / ANSI SQL rewriting ([`rewrite`]) that computes the
//! consistent answers in linear time when the query admits a pair-pruning join
//! tree. The [`engine`] evaluates rewritings in-process over CSV-loaded data and
//! cross-checks them against a brute-force all-repairs oracle; [`workbench`]
//! holds the data generators, the fixed query suite and the benchmark harness.

pub mod attack;
pub mod engine;
pub mod hypergraph;
pub mod query;
pub mod rewrite;
pub mod workbench;
