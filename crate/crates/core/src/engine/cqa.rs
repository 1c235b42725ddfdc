//! Consistent-answer dispatch. Boolean queries run the rewriting per
//! variable-sharing component and conjoin the goals; full queries evaluate on
//! the consistent sub-instance; other queries run the grounding rewriting, or
//! a per-answer Boolean loop over the possible answers.

use std::collections::{BTreeMap, BTreeSet};

use crate::attack::{find_ppjt, PpjtCertificate};
use crate::query::{ConjunctiveQuery, Term};
use crate::rewrite::{rewrite_boolean, rewrite_nonboolean, GroundMode};

use super::eval::eval_program_tables;
use super::{eval_program, eval_query, AnswerSet, DatabaseInstance, EngineError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    /// Evaluate the generated program directly.
    #[default]
    Program,
    /// Compute the possible answers, then run the Boolean program per answer.
    PerAnswer,
}

pub fn consistent_answers(
    q: &ConjunctiveQuery,
    db: &DatabaseInstance,
) -> Result<AnswerSet, EngineError> {
    consistent_answers_with(q, db, Strategy::Program, GroundMode::Star)
}

pub fn consistent_answers_with(
    q: &ConjunctiveQuery,
    db: &DatabaseInstance,
    strategy: Strategy,
    mode: GroundMode,
) -> Result<AnswerSet, EngineError> {
    if q.is_boolean() {
        return boolean_certain(q, db).map(AnswerSet::from_bool);
    }
    if !q.is_connected() {
        return Err(EngineError::DisconnectedNonBoolean);
    }
    if q.is_full() {
        // every block with two or more tuples is removed, then the query runs
        // over what remains
        return eval_query(q, &db.consistent_subinstance());
    }
    let (frozen, _) = q.freeze_head();
    if strategy == Strategy::Program && frozen.is_connected() {
        let cert = certificate_for(&frozen)?;
        let program = rewrite_nonboolean(q, &cert, mode)?;
        return eval_program(&program, db);
    }
    per_answer(q, db)
}

/// CERTAINTY for a Boolean query: conjunction over the variable-sharing
/// components.
fn boolean_certain(q: &ConjunctiveQuery, db: &DatabaseInstance) -> Result<bool, EngineError> {
    for component in q.connected_components() {
        let cert = certificate_for(&component)?;
        let program = rewrite_boolean(&component, &cert)?;
        if !eval_program(&program, db)?.as_bool() {
            return Ok(false);
        }
    }
    Ok(true)
}

fn certificate_for(q: &ConjunctiveQuery) -> Result<PpjtCertificate, EngineError> {
    find_ppjt(q)?.ok_or(EngineError::NoPpjt)
}

/// Keys of the certificate root's nonempty blocks that survive the generated
/// fkey pruning (restricted to keys matching the atom's key pattern). By the
/// pair-pruning characterization these are exactly the root's good keys, which
/// the repair oracle recomputes independently in tests.
pub fn surviving_block_keys(
    q: &ConjunctiveQuery,
    cert: &PpjtCertificate,
    db: &DatabaseInstance,
) -> Result<BTreeSet<Vec<String>>, EngineError> {
    let program = rewrite_boolean(q, cert)?;
    let tables = eval_program_tables(&program, db)?;
    let atom = &q.body[cert.root()];
    let fkey: BTreeSet<Vec<String>> = tables
        .get(&format!("fkey_{}", atom.relation))
        .map(|rows| rows.iter().cloned().collect())
        .unwrap_or_default();
    let rel = db
        .relation(&atom.relation)
        .ok_or_else(|| EngineError::UnboundPredicate(atom.relation.clone()))?;
    let mut out = BTreeSet::new();
    'keys: for key in rel.blocks().keys() {
        let values = db.externalize(key);
        // key must instantiate the atom's key pattern
        let mut bound: BTreeMap<&str, &str> = BTreeMap::new();
        for (slot, &pos) in atom.key_positions.iter().enumerate() {
            match &atom.terms[pos] {
                Term::Const(c) => {
                    if *c != values[slot] {
                        continue 'keys;
                    }
                }
                Term::Var(v) => match bound.get(v.as_str()) {
                    Some(prev) => {
                        if *prev != values[slot] {
                            continue 'keys;
                        }
                    }
                    None => {
                        bound.insert(v, &values[slot]);
                    }
                },
            }
        }
        if !fkey.contains(&values) {
            out.insert(values);
        }
    }
    Ok(out)
}

/// Possible answers filtered by a Boolean certainty check per tuple. The
/// certificates are found once on the fresh-frozen query; substituting the
/// actual constants preserves the variable structure they certify.
fn per_answer(q: &ConjunctiveQuery, db: &DatabaseInstance) -> Result<AnswerSet, EngineError> {
    let possible = eval_query(q, db)?;
    let (frozen, _) = q.freeze_head();
    let components = frozen.connected_components();
    let mut certs = Vec::with_capacity(components.len());
    for component in &components {
        certs.push(certificate_for(component)?);
    }

    let mut out = AnswerSet::empty(q.head.clone());
    'answers: for tuple in possible.iter() {
        let assignment: BTreeMap<String, String> = q
            .head
            .iter()
            .cloned()
            .zip(tuple.iter().cloned())
            .collect();
        let bound = q.substitute(&assignment)?;
        let bound_components = bound.connected_components();
        debug_assert_eq!(bound_components.len(), components.len());
        for (component, cert) in bound_components.iter().zip(&certs) {
            let program = rewrite_boolean(component, cert)?;
            if !eval_program(&program, db)?.as_bool() {
                continue 'answers;
            }
        }
        out.insert(tuple.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::tests::company_db;
    use super::*;
    use crate::engine::oracle_consistent_answers;
    use crate::query::{parse_query, parse_schema};

    #[test]
    fn example_consistent_answers() {
        let (schema, db) = company_db();
        let q = parse_query("q(x) :- Employee(x, y, z), Manager(y, w, '2020').", &schema)
            .unwrap()
            .query;
        let ans = consistent_answers(&q, &db).unwrap();
        let got: Vec<String> = ans.tuples.iter().map(|t| t[0].clone()).collect();
        assert_eq!(got, vec!["0022"]);

        let possible = eval_query(&q, &db).unwrap();
        assert!(ans.is_subset_of(&possible));
        assert_eq!(possible.len(), 3);
    }

    #[test]
    fn boolean_example_is_certain() {
        let (schema, db) = company_db();
        let qex = parse_query(
            "q() :- Employee(x, y, z), Manager(y, x, '2020'), Contact(y, x).",
            &schema,
        )
        .unwrap()
        .query;
        let ans = consistent_answers(&qex, &db).unwrap();
        assert!(ans.as_bool());
    }

    #[test]
    fn strategies_agree_on_the_example() {
        let (schema, db) = company_db();
        let qnex = parse_query(
            "q(w) :- Employee(x, y, z), Manager(y, x, w), Contact(y, x).",
            &schema,
        )
        .unwrap()
        .query;
        let by_program =
            consistent_answers_with(&qnex, &db, Strategy::Program, GroundMode::Star).unwrap();
        let by_answer =
            consistent_answers_with(&qnex, &db, Strategy::PerAnswer, GroundMode::Star).unwrap();
        assert_eq!(by_program, by_answer);
        assert_eq!(by_program, oracle_consistent_answers(&qnex, &db).unwrap());
    }

    #[test]
    fn full_query_fast_path_keeps_consistent_blocks() {
        let schema = parse_schema("R(a*, b)\n").unwrap();
        let mut db = DatabaseInstance::new(&schema);
        db.insert("R", &["1", "x"]);
        db.insert("R", &["1", "y"]);
        db.insert("R", &["2", "z"]);
        let q = parse_query("q(x, y) :- R(x, y).", &schema).unwrap().query;
        let ans = consistent_answers(&q, &db).unwrap();
        assert_eq!(ans.tuples.len(), 1);
        assert!(ans.tuples.contains(&vec!["2".to_string(), "z".to_string()]));
        assert_eq!(ans, oracle_consistent_answers(&q, &db).unwrap());
    }

    #[test]
    fn disconnected_boolean_conjunction() {
        let schema = parse_schema("R(a*, b)\nS(a*, b)\n").unwrap();
        let mut db = DatabaseInstance::new(&schema);
        db.insert("R", &["1", "x"]);
        let q = parse_query("q() :- R(x, y), S(u, v).", &schema).unwrap().query;
        assert!(!consistent_answers(&q, &db).unwrap().as_bool());
        db.insert("S", &["9", "w"]);
        assert!(consistent_answers(&q, &db).unwrap().as_bool());
    }

    #[test]
    fn disconnected_nonboolean_rejected() {
        let schema = parse_schema("R(a*, b)\nS(a*, b)\n").unwrap();
        let db = DatabaseInstance::new(&schema);
        let q = parse_query("q(x) :- R(x, y), S(u, v).", &schema).unwrap().query;
        assert!(matches!(
            consistent_answers(&q, &db),
            Err(EngineError::DisconnectedNonBoolean)
        ));
    }

    #[test]
    fn no_ppjt_is_reported() {
        let schema = parse_schema("R(a*, b*, c)\nS(a*, b*, c)\nT(a*, b)\n").unwrap();
        let db = DatabaseInstance::new(&schema);
        let q = parse_query("q() :- R(x, w, y), S(y, w, z), T(w, z).", &schema)
            .unwrap()
            .query;
        assert!(matches!(
            consistent_answers(&q, &db),
            Err(EngineError::NoPpjt)
        ));
    }

    #[test]
    fn frozen_disconnection_falls_back_to_per_answer() {
        let schema = parse_schema("R(a*, b)\nS(a*, b)\n").unwrap();
        let mut db = DatabaseInstance::new(&schema);
        db.insert("R", &["1", "p"]);
        db.insert("S", &["1", "q"]);
        db.insert("S", &["2", "q"]);
        db.insert("S", &["2", "r"]);
        // connected through the head variable only; freezing disconnects it
        let q = parse_query("q(x) :- R(x, y), S(x, v).", &schema).unwrap().query;
        let ans = consistent_answers(&q, &db).unwrap();
        assert_eq!(ans, oracle_consistent_answers(&q, &db).unwrap());
    }
}
