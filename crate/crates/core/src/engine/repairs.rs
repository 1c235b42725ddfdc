//! Brute-force ground truth: enumerate every repair (one tuple per block),
//! evaluate the query by naive backtracking join, and intersect the answers.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::query::{ConjunctiveQuery, Term};

use super::{AnswerSet, DatabaseInstance, EngineError, Row, Sym};

/// Repair enumeration refuses instances with more repairs than this.
pub const REPAIR_GUARD: u128 = 1 << 20;

/// Odometer over the blocks of an instance; yields one row-id selection per
/// repair, exactly `∏ block-sizes` of them.
pub struct RepairIterator<'a> {
    db: &'a DatabaseInstance,
    /// (relation name, rows of one block), in deterministic order
    blocks: Vec<(&'a str, &'a [u32])>,
    cursors: Vec<usize>,
    done: bool,
}

impl<'a> RepairIterator<'a> {
    pub fn new(db: &'a DatabaseInstance) -> Result<Self, EngineError> {
        if db.repair_count() > REPAIR_GUARD {
            return Err(EngineError::TooManyRepairs);
        }
        let mut blocks: Vec<(&str, &[u32])> = Vec::new();
        for rel in db.relations.values() {
            let mut keys: Vec<&Row> = rel.blocks().keys().collect();
            keys.sort();
            for k in keys {
                blocks.push((rel.name.as_str(), rel.block(k)));
            }
        }
        Ok(RepairIterator {
            db,
            cursors: vec![0; blocks.len()],
            blocks,
            done: false,
        })
    }

    /// Per-relation selected rows for the current repair.
    fn current(&self) -> HashMap<&'a str, Vec<&'a [Sym]>> {
        let mut out: HashMap<&str, Vec<&[Sym]>> = HashMap::new();
        for rel in self.db.relations.values() {
            out.entry(rel.name.as_str()).or_default();
        }
        for (i, (rel, rows)) in self.blocks.iter().enumerate() {
            let row = &self.db.relations[*rel].rows[rows[self.cursors[i]] as usize];
            out.get_mut(rel).unwrap().push(row);
        }
        out
    }
}

impl<'a> Iterator for RepairIterator<'a> {
    type Item = HashMap<&'a str, Vec<&'a [Sym]>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let repair = self.current();
        // advance the odometer
        let mut i = 0;
        loop {
            if i == self.blocks.len() {
                self.done = true;
                break;
            }
            self.cursors[i] += 1;
            if self.cursors[i] < self.blocks[i].1.len() {
                break;
            }
            self.cursors[i] = 0;
            i += 1;
        }
        Some(repair)
    }
}

/// Backtracking evaluation of `q` over an explicit set of rows per relation;
/// independent of the join-tree machinery on purpose.
fn naive_answers(
    q: &ConjunctiveQuery,
    rows: &HashMap<&str, Vec<&[Sym]>>,
    db: &DatabaseInstance,
) -> BTreeSet<Vec<Sym>> {
    fn go(
        q: &ConjunctiveQuery,
        rows: &HashMap<&str, Vec<&[Sym]>>,
        db: &DatabaseInstance,
        atom: usize,
        binding: &mut BTreeMap<String, Sym>,
        out: &mut BTreeSet<Vec<Sym>>,
    ) {
        if atom == q.body.len() {
            let tuple: Vec<Sym> = q.head.iter().map(|v| binding[v]).collect();
            out.insert(tuple);
            return;
        }
        let a = &q.body[atom];
        let Some(candidates) = rows.get(a.relation.as_str()) else {
            return;
        };
        'rows: for row in candidates {
            let mut added: Vec<String> = Vec::new();
            for (i, t) in a.terms.iter().enumerate() {
                match t {
                    Term::Const(c) => {
                        if db.symbols.lookup(c) != Some(row[i]) {
                            for v in added.drain(..) {
                                binding.remove(&v);
                            }
                            continue 'rows;
                        }
                    }
                    Term::Var(v) => match binding.get(v) {
                        Some(&bound) => {
                            if bound != row[i] {
                                for v in added.drain(..) {
                                    binding.remove(&v);
                                }
                                continue 'rows;
                            }
                        }
                        None => {
                            binding.insert(v.clone(), row[i]);
                            added.push(v.clone());
                        }
                    },
                }
            }
            go(q, rows, db, atom + 1, binding, out);
            for v in added {
                binding.remove(&v);
            }
        }
    }

    let mut out = BTreeSet::new();
    let mut binding = BTreeMap::new();
    go(q, rows, db, 0, &mut binding, &mut out);
    out
}

/// Intersection of the query answers over every repair.
pub fn oracle_consistent_answers(
    q: &ConjunctiveQuery,
    db: &DatabaseInstance,
) -> Result<AnswerSet, EngineError> {
    let mut result: Option<BTreeSet<Vec<Sym>>> = None;
    for repair in RepairIterator::new(db)? {
        let answers = naive_answers(q, &repair, db);
        result = Some(match result {
            None => answers,
            Some(acc) => acc.intersection(&answers).cloned().collect(),
        });
        if result.as_ref().is_some_and(BTreeSet::is_empty) {
            break;
        }
    }
    let rows: Vec<Vec<String>> = result
        .unwrap_or_default()
        .iter()
        .map(|t| db.externalize(t))
        .collect();
    Ok(AnswerSet::from_tuples(q.head.clone(), rows))
}

/// Good keys of the atom `target` in a Boolean query: primary-key values c̄
/// whose substitution turns the instance into a yes-instance. Computed with
/// the repair oracle; used to cross-check the pruning predicates.
pub fn good_keys(
    q: &ConjunctiveQuery,
    db: &DatabaseInstance,
    target: usize,
) -> Result<BTreeSet<Vec<String>>, EngineError> {
    assert!(q.is_boolean(), "good keys are defined for Boolean queries");
    let atom = &q.body[target];
    let rel = db
        .relation(&atom.relation)
        .ok_or_else(|| EngineError::UnboundPredicate(atom.relation.clone()))?;
    let mut keys: Vec<&Row> = rel.blocks().keys().collect();
    keys.sort();
    let mut out = BTreeSet::new();
    'keys: for key in keys {
        // substitution of the key variables, consistent with the atom pattern
        let mut assignment: BTreeMap<String, String> = BTreeMap::new();
        for (slot, &pos) in atom.key_positions.iter().enumerate() {
            let value = db.symbols.name(key[slot]).to_string();
            match &atom.terms[pos] {
                Term::Const(c) => {
                    if *c != value {
                        continue 'keys;
                    }
                }
                Term::Var(v) => match assignment.get(v) {
                    Some(prev) => {
                        if *prev != value {
                            continue 'keys;
                        }
                    }
                    None => {
                        assignment.insert(v.clone(), value);
                    }
                },
            }
        }
        let substituted = q.substitute(&assignment)?;
        if oracle_consistent_answers(&substituted, db)?.as_bool() {
            out.insert(db.externalize(key));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::tests::company_db;
    use super::*;
    use crate::query::parse_query;

    #[test]
    fn company_has_96_repairs() {
        let (_, db) = company_db();
        assert_eq!(RepairIterator::new(&db).unwrap().count(), 96);
    }

    #[test]
    fn oracle_on_the_example_queries() {
        let (schema, db) = company_db();
        let qex = parse_query(
            "q() :- Employee(x, y, z), Manager(y, x, '2020'), Contact(y, x).",
            &schema,
        )
        .unwrap()
        .query;
        assert!(oracle_consistent_answers(&qex, &db).unwrap().as_bool());

        let q = parse_query("q(x) :- Employee(x, y, z), Manager(y, w, '2020').", &schema)
            .unwrap()
            .query;
        let ans = oracle_consistent_answers(&q, &db).unwrap();
        let got: Vec<String> = ans.tuples.iter().map(|t| t[0].clone()).collect();
        assert_eq!(got, vec!["0022"]);
    }

    #[test]
    fn consistent_database_oracle_equals_single_evaluation() {
        let (schema, db) = company_db();
        let sub = db.consistent_subinstance();
        let q = parse_query("q(x) :- Employee(x, y, z), Manager(y, w, '2020').", &schema)
            .unwrap()
            .query;
        let oracle = oracle_consistent_answers(&q, &sub).unwrap();
        let plain = super::super::eval_query(&q, &sub).unwrap();
        assert_eq!(oracle, plain);
    }

    #[test]
    fn good_keys_of_the_example_root() {
        let (schema, db) = company_db();
        let qex = parse_query(
            "q() :- Employee(x, y, z), Manager(y, x, '2020'), Contact(y, x).",
            &schema,
        )
        .unwrap()
        .query;
        let gk = good_keys(&qex, &db, 0).unwrap();
        assert_eq!(
            gk,
            BTreeSet::from([vec!["0022".to_string()]])
        );
    }

    #[test]
    fn guard_rejects_huge_instances() {
        let schema = crate::query::parse_schema("R(a*, b)\n").unwrap();
        let mut db = DatabaseInstance::new(&schema);
        for i in 0..21 {
            db.insert("R", &[&format!("k{i}"), "0"]);
            db.insert("R", &[&format!("k{i}"), "1"]);
        }
        let q = parse_query("q() :- R(x, y).", &schema).unwrap().query;
        assert!(matches!(
            oracle_consistent_answers(&q, &db),
            Err(EngineError::TooManyRepairs)
        ));
    }
}
