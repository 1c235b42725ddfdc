//! Semi-join evaluation of acyclic queries: bottom-up and top-down reducer
//! passes over a join tree, then bottom-up assembly of the projected output.
//! Both phases run as sort-merge passes over column projections. Computes
//! possible answers; the consistent-answer paths reuse the assembly for
//! grounding rules.

use std::collections::BTreeSet;

use smallvec::SmallVec;

use crate::hypergraph::gyo_join_tree;
use crate::query::{Atom, ConjunctiveQuery, Term};

use super::{AnswerSet, DatabaseInstance, EngineError, Row, Sym};

type WideRow = SmallVec<[Sym; 8]>;

/// Possible answers q(db).
pub fn eval_query(q: &ConjunctiveQuery, db: &DatabaseInstance) -> Result<AnswerSet, EngineError> {
    let out_terms: Vec<Term> = q.head.iter().cloned().map(Term::Var).collect();
    let tuples = join_project(&q.body, db, &out_terms)?;
    let rows: Vec<Vec<String>> = tuples.iter().map(|t| db.externalize(t)).collect();
    Ok(AnswerSet::from_tuples(q.head.clone(), rows))
}

fn sorted_projection(rows: &[&[Sym]], cols: &[usize]) -> Vec<Row> {
    let mut out: Vec<Row> = rows
        .iter()
        .map(|r| cols.iter().map(|&i| r[i]).collect())
        .collect();
    if !out.is_sorted() {
        out.sort_unstable();
    }
    out.dedup();
    out
}

/// Keeps the rows of `target` whose `cols` projection occurs in the sorted
/// `keys` list.
fn semi_join(target: &mut Vec<&[Sym]>, cols: &[usize], keys: &[Row]) {
    let mut keyed: Vec<(Row, &[Sym])> = target
        .drain(..)
        .map(|r| (cols.iter().map(|&i| r[i]).collect(), r))
        .collect();
    if !keyed.is_sorted_by(|a, b| a.0 <= b.0) {
        keyed.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    }
    let mut ki = 0usize;
    for (key, row) in keyed {
        while ki < keys.len() && keys[ki] < key {
            ki += 1;
        }
        if ki < keys.len() && keys[ki] == key {
            target.push(row);
        }
    }
}

/// Joins `atoms` over `db` and projects onto `out_terms` (variables of the
/// body, or constants), deduplicating along the join tree; the result is a
/// set, in no particular order.
pub(crate) fn join_project(
    atoms: &[Atom],
    db: &DatabaseInstance,
    out_terms: &[Term],
) -> Result<Vec<Row>, EngineError> {
    let q = ConjunctiveQuery {
        name: "body".to_string(),
        head: Vec::new(),
        body: atoms.to_vec(),
    };
    let tree = gyo_join_tree(&q).map_err(|_| EngineError::NotAcyclicQuery)?;
    let n = atoms.len();

    // pattern-filtered rows per atom, with (variable -> column) views
    let mut var_cols: Vec<Vec<(String, usize)>> = Vec::with_capacity(n);
    let mut rows: Vec<Vec<&[Sym]>> = Vec::with_capacity(n);
    for atom in atoms {
        let rel = db
            .relation(&atom.relation)
            .ok_or_else(|| EngineError::UnboundPredicate(atom.relation.clone()))?;
        let consts: Vec<(usize, Option<Sym>)> = atom
            .terms
            .iter()
            .enumerate()
            .filter_map(|(i, t)| match t {
                Term::Const(c) => Some((i, db.symbols.lookup(c))),
                Term::Var(_) => None,
            })
            .collect();
        let mut repeats: Vec<(usize, usize)> = Vec::new();
        let mut vc: Vec<(String, usize)> = Vec::new();
        for (i, t) in atom.terms.iter().enumerate() {
            if let Term::Var(v) = t {
                match vc.iter().find(|(name, _)| name == v) {
                    Some(&(_, first)) => repeats.push((i, first)),
                    None => vc.push((v.clone(), i)),
                }
            }
        }
        let filtered: Vec<&[Sym]> = rel
            .rows
            .iter()
            .map(Row::as_slice)
            .filter(|row| {
                consts.iter().all(|&(i, c)| Some(row[i]) == c)
                    && repeats.iter().all(|&(i, j)| row[i] == row[j])
            })
            .collect();
        var_cols.push(vc);
        rows.push(filtered);
    }

    let rooted = tree.root_at(0);
    let shared = |a: usize, b: usize| -> Vec<String> {
        var_cols[a]
            .iter()
            .filter(|(v, _)| var_cols[b].iter().any(|(w, _)| w == v))
            .map(|(v, _)| v.clone())
            .collect()
    };
    let cols_of = |a: usize, vars: &[String]| -> Vec<usize> {
        vars.iter()
            .map(|v| {
                var_cols[a]
                    .iter()
                    .find(|(name, _)| name == v)
                    .map(|&(_, c)| c)
                    .expect("shared variable occurs in atom")
            })
            .collect()
    };

    // bottom-up semi-join pass
    for &v in rooted.postorder() {
        for &c in rooted.children(v) {
            let j = shared(v, c);
            let keys = sorted_projection(&rows[c], &cols_of(c, &j));
            let own_cols = cols_of(v, &j);
            semi_join(&mut rows[v], &own_cols, &keys);
        }
    }

    // top-down pass
    let mut preorder: Vec<usize> = rooted.postorder().to_vec();
    preorder.reverse();
    for &v in &preorder {
        for &c in rooted.children(v) {
            let j = shared(v, c);
            let keys = sorted_projection(&rows[v], &cols_of(v, &j));
            let child_cols = cols_of(c, &j);
            semi_join(&mut rows[c], &child_cols, &keys);
        }
    }

    let out_vars: BTreeSet<&str> = out_terms.iter().filter_map(Term::as_var).collect();
    if rows.iter().any(|r| r.is_empty()) {
        return Ok(Vec::new());
    }

    // bottom-up assembly: tuples over the variables each subtree must export
    let mut results: Vec<Option<(Vec<String>, Vec<WideRow>)>> = vec![None; n];
    for &v in rooted.postorder() {
        // variables to export: needed by the output or by the parent link
        let mut export: Vec<String> = var_cols[v]
            .iter()
            .map(|(name, _)| name.clone())
            .filter(|name| out_vars.contains(name.as_str()))
            .collect();
        if let Some(p) = rooted.parent(v) {
            for name in shared(v, p) {
                if !export.contains(&name) {
                    export.push(name);
                }
            }
        }
        for &c in rooted.children(v) {
            let (cvars, _) = results[c].as_ref().unwrap();
            for name in cvars {
                let passes_up = out_vars.contains(name.as_str())
                    && !var_cols[v].iter().any(|(w, _)| w == name);
                if passes_up && !export.contains(name) {
                    export.push(name.clone());
                }
            }
        }

        // start from the node's own rows projected to its local variables;
        // a projection keeping every column of a stored relation stays
        // duplicate-free
        let local: Vec<String> = var_cols[v].iter().map(|(name, _)| name.clone()).collect();
        let local_cols: Vec<usize> = var_cols[v].iter().map(|&(_, c)| c).collect();
        let mut acc_vars = local;
        let mut acc: Vec<WideRow> = rows[v]
            .iter()
            .map(|r| local_cols.iter().map(|&i| r[i]).collect())
            .collect();
        let mut distinct = local_cols.len() == atoms[v].terms.len();
        if !distinct {
            acc.sort_unstable();
            acc.dedup();
            distinct = true;
        }

        for &c in rooted.children(v) {
            let (cvars, ctuples) = results[c].take().unwrap();
            let join_on: Vec<String> = cvars
                .iter()
                .filter(|w| acc_vars.contains(w))
                .cloned()
                .collect();
            let c_join_idx: Vec<usize> = join_on
                .iter()
                .map(|w| cvars.iter().position(|x| x == w).unwrap())
                .collect();
            let c_rest_idx: Vec<usize> = (0..cvars.len())
                .filter(|i| !c_join_idx.contains(i))
                .collect();
            if c_rest_idx.is_empty() {
                // the reducer passes already guarantee every accumulated row
                // matches the child, and it contributes no new columns
                continue;
            }
            // sort-merge multiply: both sides ordered by the join columns
            let mut right: Vec<(Row, WideRow)> = ctuples
                .into_iter()
                .map(|t| {
                    let k: Row = c_join_idx.iter().map(|&i| t[i]).collect();
                    let rest: WideRow = c_rest_idx.iter().map(|&i| t[i]).collect();
                    (k, rest)
                })
                .collect();
            right.sort_unstable();
            let a_join_idx: Vec<usize> = join_on
                .iter()
                .map(|w| acc_vars.iter().position(|x| x == w).unwrap())
                .collect();
            let mut left: Vec<(Row, WideRow)> = acc
                .drain(..)
                .map(|t| {
                    let k: Row = a_join_idx.iter().map(|&i| t[i]).collect();
                    (k, t)
                })
                .collect();
            left.sort_unstable();

            let mut next: Vec<WideRow> = Vec::with_capacity(left.len());
            let mut ri = 0usize;
            let mut li = 0usize;
            while li < left.len() && ri < right.len() {
                match left[li].0.cmp(&right[ri].0) {
                    std::cmp::Ordering::Less => li += 1,
                    std::cmp::Ordering::Greater => ri += 1,
                    std::cmp::Ordering::Equal => {
                        let key = left[li].0.clone();
                        let l_end = left[li..]
                            .iter()
                            .position(|(k, _)| *k != key)
                            .map_or(left.len(), |off| li + off);
                        let r_end = right[ri..]
                            .iter()
                            .position(|(k, _)| *k != key)
                            .map_or(right.len(), |off| ri + off);
                        for (_, l) in &left[li..l_end] {
                            for (_, r) in &right[ri..r_end] {
                                let mut row = l.clone();
                                row.extend_from_slice(r);
                                next.push(row);
                            }
                        }
                        li = l_end;
                        ri = r_end;
                    }
                }
            }
            for i in &c_rest_idx {
                acc_vars.push(cvars[*i].clone());
            }
            // keep intermediates narrow: project to export + remaining links
            let mut keep: Vec<String> = export.clone();
            for &c2 in rooted.children(v) {
                if results[c2].is_some() {
                    for w in shared(v, c2) {
                        if !keep.contains(&w) {
                            keep.push(w);
                        }
                    }
                }
            }
            let keep_idx: Vec<usize> = keep
                .iter()
                .filter_map(|w| acc_vars.iter().position(|x| x == w))
                .collect();
            // joining two duplicate-free sides on equal keys stays
            // duplicate-free; only a narrowing projection can introduce
            // duplicates
            distinct = distinct && keep_idx.len() == acc_vars.len();
            acc_vars = keep_idx.iter().map(|&i| acc_vars[i].clone()).collect();
            acc = next
                .into_iter()
                .map(|t| keep_idx.iter().map(|&i| t[i]).collect())
                .collect();
            if !distinct {
                acc.sort_unstable();
                acc.dedup();
                distinct = true;
            }
        }

        // final projection to the export list
        let idx: Vec<usize> = export
            .iter()
            .map(|w| acc_vars.iter().position(|x| x == w).unwrap())
            .collect();
        let mut tuples: Vec<WideRow> = acc
            .into_iter()
            .map(|t| idx.iter().map(|&i| t[i]).collect())
            .collect();
        if idx.len() != acc_vars.len() {
            tuples.sort_unstable();
            tuples.dedup();
        }
        results[v] = Some((export, tuples));
    }

    let (root_vars, root_tuples) = results[rooted.root].take().unwrap();
    let mut out: Vec<Row> = Vec::with_capacity(root_tuples.len());
    'tuples: for t in &root_tuples {
        let mut row = Row::with_capacity(out_terms.len());
        for term in out_terms {
            match term {
                Term::Var(v) => {
                    let i = root_vars
                        .iter()
                        .position(|x| x == v)
                        .expect("output variable occurs in the body");
                    row.push(t[i]);
                }
                Term::Const(c) => match db.symbols.lookup(c) {
                    Some(s) => row.push(s),
                    None => continue 'tuples,
                },
            }
        }
        out.push(row);
    }
    // distinct output variables re-order a duplicate-free tuple set
    let mut seen_vars: Vec<&str> = out_terms.iter().filter_map(Term::as_var).collect();
    seen_vars.sort_unstable();
    seen_vars.dedup();
    if seen_vars.len() != root_vars.len() || out_terms.iter().any(|t| t.as_var().is_none()) {
        out.sort_unstable();
        out.dedup();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::tests::company_db;
    use super::*;
    use crate::query::parse_query;

    #[test]
    fn possible_answers_of_the_manager_example() {
        let (schema, db) = company_db();
        let q = parse_query("q(x) :- Employee(x, y, z), Manager(y, w, '2020').", &schema)
            .unwrap()
            .query;
        let ans = eval_query(&q, &db).unwrap();
        let got: Vec<String> = ans.iter().map(|t| t[0].clone()).collect();
        assert_eq!(got, vec!["0011", "0022", "0034"]);
    }

    #[test]
    fn boolean_example_query_is_possible() {
        let (schema, db) = company_db();
        let q = parse_query(
            "q() :- Employee(x, y, z), Manager(y, x, '2020'), Contact(y, x).",
            &schema,
        )
        .unwrap()
        .query;
        let ans = eval_query(&q, &db).unwrap();
        assert!(ans.as_bool());
    }

    #[test]
    fn empty_database_empty_answers() {
        let (schema, _) = company_db();
        let db = DatabaseInstance::new(&schema);
        let q = parse_query("q(x) :- Employee(x, y, z), Manager(y, w, '2020').", &schema)
            .unwrap()
            .query;
        assert!(eval_query(&q, &db).unwrap().is_empty());
    }

    #[test]
    fn cyclic_query_rejected() {
        let (schema, db) = company_db();
        let q = parse_query(
            "q() :- Employee(x, y, u), Manager(y, z, v), Contact(z, x).",
            &schema,
        )
        .unwrap()
        .query;
        assert!(matches!(
            eval_query(&q, &db),
            Err(EngineError::NotAcyclicQuery)
        ));
    }
}
