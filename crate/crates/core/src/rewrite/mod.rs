//! Generation of the non-recursive Datalog rewriting from a PPJT certificate,
//! its extension to non-Boolean queries, and rendering as Datalog text or one
//! ANSI-SQL statement.
//!
//! For every atom R the program uses two predicates: `fkey_R` collects the
//! primary-key values of blocks that cannot contribute to a consistent answer,
//! and `R_join` the surviving values of the variables joining R with its
//! parent. The goal is the root's `R_join`; Boolean goals are nullary.

mod datalog;
mod gen;
mod sql;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::query::Term;

pub use datalog::render_datalog;
pub use gen::{rewrite_boolean, rewrite_nonboolean};
pub use sql::render_sql;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RewriteError {
    #[error("certificate does not verify for this query")]
    InvalidCertificate,
    #[error("rewriting requires a non-Boolean query here")]
    ExpectedNonBoolean,
    #[error("rewriting requires a Boolean query here")]
    ExpectedBoolean,
}

/// Which rule template produced a rewrite rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Self-pruning on a constant or repeated-variable position.
    Rule1,
    /// Self-pruning on a non-key variable shared with the parent.
    Rule2,
    /// Pair-pruning against a child's join predicate.
    Rule3,
    /// Exit rule projecting the surviving join values.
    Rule4,
    /// Free-variable grounding over the full query body.
    Ground,
    /// Grounding that additionally keeps the key variables of all atoms.
    GroundStar,
}

/// Whether the non-Boolean rewriting guards unsafe rules with the plain
/// `ground` predicate or the keyed `ground_star` variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroundMode {
    #[default]
    Star,
    Naive,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Literal {
    /// Positive occurrence of a stored relation.
    Atom { relation: String, terms: Vec<Term> },
    /// Occurrence of a generated predicate, possibly negated.
    Pred {
        name: String,
        terms: Vec<Term>,
        negated: bool,
    },
    /// Disequality between two terms.
    NotEq(Term, Term),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewriteRule {
    pub head_name: String,
    pub head_terms: Vec<Term>,
    pub body: Vec<Literal>,
    pub provenance: Provenance,
    /// Index of the atom this rule was generated for; `None` for ground rules.
    pub node: Option<usize>,
}

impl RewriteRule {
    /// Every variable of the rule occurs in a positive body literal.
    pub fn is_safe(&self) -> bool {
        self.unsafe_vars().is_empty()
    }

    pub(crate) fn unsafe_vars(&self) -> Vec<String> {
        let mut bound: Vec<&str> = Vec::new();
        for lit in &self.body {
            match lit {
                Literal::Atom { terms, .. } => {
                    bound.extend(terms.iter().filter_map(Term::as_var))
                }
                Literal::Pred {
                    terms,
                    negated: false,
                    ..
                } => bound.extend(terms.iter().filter_map(Term::as_var)),
                _ => {}
            }
        }
        let mut needed: Vec<&str> = self.head_terms.iter().filter_map(Term::as_var).collect();
        for lit in &self.body {
            match lit {
                Literal::Pred {
                    terms,
                    negated: true,
                    ..
                } => needed.extend(terms.iter().filter_map(Term::as_var)),
                Literal::NotEq(a, b) => {
                    needed.extend(a.as_var());
                    needed.extend(b.as_var());
                }
                _ => {}
            }
        }
        let mut out: Vec<String> = needed
            .into_iter()
            .filter(|v| !bound.contains(v))
            .map(|v| v.to_string())
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

/// An ordered, stratified rewriting. Negated predicates always refer to
/// strictly earlier strata; the final consistent answers are the contents of
/// the goal predicate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewriteProgram {
    pub strata: Vec<Vec<RewriteRule>>,
    /// Name of the root's join predicate.
    pub goal: String,
    /// Output column names (the query's head variables; empty for Boolean).
    pub goal_vars: Vec<String>,
    /// Appended free-variable list ū_T per generated predicate.
    pub free_var_layout: BTreeMap<String, Vec<String>>,
    pub ground_mode: Option<GroundMode>,
}

impl RewriteProgram {
    pub fn rules(&self) -> impl Iterator<Item = &RewriteRule> {
        self.strata.iter().flatten()
    }

    pub fn rule_count(&self) -> usize {
        self.strata.iter().map(Vec::len).sum()
    }

    /// Checks rule safety and the stratification condition syntactically.
    pub fn check_stratified(&self) -> bool {
        let mut defined: Vec<&str> = Vec::new();
        for stratum in &self.strata {
            let heads: Vec<&str> = stratum.iter().map(|r| r.head_name.as_str()).collect();
            for rule in stratum {
                if !rule.is_safe() {
                    return false;
                }
                for lit in &rule.body {
                    if let Literal::Pred { name, negated, .. } = lit {
                        let earlier = defined.contains(&name.as_str());
                        if *negated {
                            if !earlier {
                                return false;
                            }
                        } else if !earlier && !heads.contains(&name.as_str()) {
                            return false;
                        }
                    }
                }
            }
            defined.extend(heads);
        }
        defined.contains(&self.goal.as_str())
    }
}
