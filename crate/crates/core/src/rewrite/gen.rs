//! Rule generation: per PPJT node, self-pruning rules for constant and
//! repeated-variable positions (Rule 1) and for non-key variables shared with
//! the parent (Rule 2), one pair-pruning rule per child edge (Rule 3), and one
//! exit rule (Rule 4); strata follow the post-order of the rooted tree. The
//! non-Boolean extension freezes the head, re-opens the frozen constants as
//! variables, appends the free variables of each subtree to its predicates,
//! and guards unsafe rules with the grounding predicate.

use std::collections::{BTreeMap, BTreeSet};

use crate::attack::PpjtCertificate;
use crate::query::{Atom, ConjunctiveQuery, Term};

use super::{GroundMode, Literal, Provenance, RewriteError, RewriteProgram, RewriteRule};

pub(crate) fn fkey_name(relation: &str) -> String {
    format!("fkey_{relation}")
}

pub(crate) fn join_name(relation: &str) -> String {
    format!("{relation}_join")
}

pub(crate) const GROUND: &str = "ground";
pub(crate) const GROUND_STAR: &str = "ground_star";

/// Fresh-variable source: z1, z2, … skipping names already used by the query.
struct FreshVars<'a> {
    reserved: &'a BTreeSet<String>,
    next: usize,
}

impl<'a> FreshVars<'a> {
    fn new(reserved: &'a BTreeSet<String>) -> Self {
        FreshVars { reserved, next: 1 }
    }

    fn next(&mut self) -> String {
        loop {
            let name = format!("z{}", self.next);
            self.next += 1;
            if !self.reserved.contains(&name) {
                return name;
            }
        }
    }
}

/// Join variables of `child` with `parent`, ordered by first occurrence in the
/// child atom. Both the child's exit rule and the parent's pair-pruning rule
/// use this sequence.
fn join_vars(child: &Atom, parent: &Atom) -> Vec<String> {
    let parent_vars = parent.vars();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for t in &child.terms {
        if let Some(v) = t.as_var() {
            if parent_vars.contains(v) && seen.insert(v) {
                out.push(v.to_string());
            }
        }
    }
    out
}

/// Generates the Boolean program for a query with PPJT certificate `cert`.
pub fn rewrite_boolean(
    q: &ConjunctiveQuery,
    cert: &PpjtCertificate,
) -> Result<RewriteProgram, RewriteError> {
    if !q.is_boolean() {
        return Err(RewriteError::ExpectedBoolean);
    }
    if !cert.verify(q) {
        return Err(RewriteError::InvalidCertificate);
    }
    let strata = boolean_strata(q, cert);
    let root_atom = &q.body[cert.root()];
    Ok(RewriteProgram {
        strata,
        goal: join_name(&root_atom.relation),
        goal_vars: Vec::new(),
        free_var_layout: BTreeMap::new(),
        ground_mode: None,
    })
}

fn boolean_strata(q: &ConjunctiveQuery, cert: &PpjtCertificate) -> Vec<Vec<RewriteRule>> {
    let rooted = &cert.rooted;
    let reserved: BTreeSet<String> = q.vars().iter().map(|v| v.to_string()).collect();
    let mut strata = Vec::new();

    for &v in rooted.postorder() {
        let atom = &q.body[v];
        let mut fkey_rules = Vec::new();

        // Rule 1: one rule per constant position and per repeated-variable
        // position, over a fully fresh copy of the atom.
        for i in 0..atom.terms.len() {
            let diseq_rhs = match &atom.terms[i] {
                Term::Const(c) => Some(Rhs::Const(c.clone())),
                Term::Var(x) => atom.terms[..i]
                    .iter()
                    .position(|t| t.as_var() == Some(x))
                    .map(Rhs::Position),
            };
            let Some(rhs) = diseq_rhs else { continue };
            let mut fresh = FreshVars::new(&reserved);
            let zs: Vec<Term> = atom.terms.iter().map(|_| Term::Var(fresh.next())).collect();
            let head_terms: Vec<Term> = atom.key_positions.iter().map(|&p| zs[p].clone()).collect();
            let rhs_term = match rhs {
                Rhs::Const(c) => Term::Const(c),
                Rhs::Position(j) => zs[j].clone(),
            };
            fkey_rules.push(RewriteRule {
                head_name: fkey_name(&atom.relation),
                head_terms,
                body: vec![
                    Literal::Atom {
                        relation: atom.relation.clone(),
                        terms: zs.clone(),
                    },
                    Literal::NotEq(zs[i].clone(), rhs_term),
                ],
                provenance: Provenance::Rule1,
                node: Some(v),
            });
        }

        // Rule 2: per non-key position holding a variable shared with the
        // parent; the second atom copy has fresh non-key positions.
        if let Some(p) = rooted.parent(v) {
            let parent_vars = q.body[p].vars();
            for i in 0..atom.terms.len() {
                if atom.key_positions.contains(&i) {
                    continue;
                }
                let Some(x) = atom.terms[i].as_var() else { continue };
                if !parent_vars.contains(x) {
                    continue;
                }
                let mut fresh = FreshVars::new(&reserved);
                let second_terms: Vec<Term> = atom
                    .terms
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        if atom.key_positions.contains(&j) {
                            t.clone()
                        } else {
                            Term::Var(fresh.next())
                        }
                    })
                    .collect();
                fkey_rules.push(RewriteRule {
                    head_name: fkey_name(&atom.relation),
                    head_terms: atom.key_terms().into_iter().cloned().collect(),
                    body: vec![
                        Literal::Atom {
                            relation: atom.relation.clone(),
                            terms: atom.terms.clone(),
                        },
                        Literal::Atom {
                            relation: atom.relation.clone(),
                            terms: second_terms.clone(),
                        },
                        Literal::NotEq(second_terms[i].clone(), atom.terms[i].clone()),
                    ],
                    provenance: Provenance::Rule2,
                    node: Some(v),
                });
            }
        }

        // Rule 3: one pair-pruning rule per child edge.
        for &c in rooted.children(v) {
            let w = join_vars(&q.body[c], atom);
            fkey_rules.push(RewriteRule {
                head_name: fkey_name(&atom.relation),
                head_terms: atom.key_terms().into_iter().cloned().collect(),
                body: vec![
                    Literal::Atom {
                        relation: atom.relation.clone(),
                        terms: atom.terms.clone(),
                    },
                    Literal::Pred {
                        name: join_name(&q.body[c].relation),
                        terms: w.into_iter().map(Term::Var).collect(),
                        negated: true,
                    },
                ],
                provenance: Provenance::Rule3,
                node: Some(v),
            });
        }

        let has_fkey = !fkey_rules.is_empty();
        if has_fkey {
            strata.push(fkey_rules);
        }

        // Rule 4: the exit rule; the negated-fkey variant only when fkey_R has
        // defining rules.
        let w = match rooted.parent(v) {
            Some(p) => join_vars(atom, &q.body[p]),
            None => Vec::new(),
        };
        let mut body = vec![Literal::Atom {
            relation: atom.relation.clone(),
            terms: atom.terms.clone(),
        }];
        if has_fkey {
            body.push(Literal::Pred {
                name: fkey_name(&atom.relation),
                terms: atom.key_terms().into_iter().cloned().collect(),
                negated: true,
            });
        }
        strata.push(vec![RewriteRule {
            head_name: join_name(&atom.relation),
            head_terms: w.into_iter().map(Term::Var).collect(),
            body,
            provenance: Provenance::Rule4,
            node: Some(v),
        }]);
    }
    strata
}

enum Rhs {
    Const(String),
    Position(usize),
}

/// Generates the program for a non-Boolean query: the Boolean program of the
/// head-frozen query, with frozen constants re-opened as free variables, ū_T
/// appended to every subtree predicate, a grounding rule, and grounding guards
/// on unsafe rules.
pub fn rewrite_nonboolean(
    q: &ConjunctiveQuery,
    cert: &PpjtCertificate,
    mode: GroundMode,
) -> Result<RewriteProgram, RewriteError> {
    if q.is_boolean() {
        return Err(RewriteError::ExpectedNonBoolean);
    }
    let (frozen, mapping) = q.freeze_head();
    if !cert.verify(&frozen) {
        return Err(RewriteError::InvalidCertificate);
    }
    let mut strata = boolean_strata(&frozen, cert);

    // frozen constant value -> head variable
    let reopen: BTreeMap<String, String> =
        mapping.iter().map(|(v, c)| (c.clone(), v.clone())).collect();
    let reopen_term = |t: &Term| match t {
        Term::Const(c) => match reopen.get(c) {
            Some(v) => Term::Var(v.clone()),
            None => t.clone(),
        },
        Term::Var(_) => t.clone(),
    };
    for rule in strata.iter_mut().flatten() {
        rule.head_terms = rule.head_terms.iter().map(reopen_term).collect();
        for lit in &mut rule.body {
            match lit {
                Literal::Atom { terms, .. } | Literal::Pred { terms, .. } => {
                    *terms = terms.iter().map(reopen_term).collect();
                }
                Literal::NotEq(a, b) => {
                    *lit = Literal::NotEq(reopen_term(a), reopen_term(b));
                }
            }
        }
    }

    // ū_T: head variables occurring in the subtree rooted at each atom, in
    // head order.
    let rooted = &cert.rooted;
    let mut appended: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut free_var_layout = BTreeMap::new();
    for v in 0..q.body.len() {
        let members = rooted.subtree(v);
        let subtree_vars: BTreeSet<&str> = members
            .iter()
            .flat_map(|&m| q.body[m].vars())
            .collect();
        let u_t: Vec<String> = q
            .head
            .iter()
            .filter(|u| subtree_vars.contains(u.as_str()))
            .cloned()
            .collect();
        let rel = &q.body[v].relation;
        free_var_layout.insert(fkey_name(rel), u_t.clone());
        free_var_layout.insert(join_name(rel), u_t.clone());
        appended.insert(fkey_name(rel), u_t.clone());
        appended.insert(join_name(rel), u_t);
    }
    for rule in strata.iter_mut().flatten() {
        if let Some(u_t) = appended.get(&rule.head_name) {
            rule.head_terms
                .extend(u_t.iter().cloned().map(Term::Var));
        }
        for lit in &mut rule.body {
            if let Literal::Pred { name, terms, .. } = lit {
                if let Some(u_t) = appended.get(name) {
                    terms.extend(u_t.iter().cloned().map(Term::Var));
                }
            }
        }
    }

    // grounding rule over the original body
    let ground_name = match mode {
        GroundMode::Naive => GROUND,
        GroundMode::Star => GROUND_STAR,
    };
    let mut ground_head: Vec<Term> = Vec::new();
    if mode == GroundMode::Star {
        for atom in &q.body {
            ground_head.extend(atom.key_terms().into_iter().cloned());
        }
    }
    ground_head.extend(q.head.iter().cloned().map(Term::Var));
    let ground_rule = RewriteRule {
        head_name: ground_name.to_string(),
        head_terms: ground_head,
        body: q
            .body
            .iter()
            .map(|a| Literal::Atom {
                relation: a.relation.clone(),
                terms: a.terms.clone(),
            })
            .collect(),
        provenance: match mode {
            GroundMode::Naive => Provenance::Ground,
            GroundMode::Star => Provenance::GroundStar,
        },
        node: None,
    };

    // guard unsafe rules
    for rule in strata.iter_mut().flatten() {
        if rule.is_safe() {
            continue;
        }
        let mut reserved: BTreeSet<String> = q.vars().iter().map(|v| v.to_string()).collect();
        for lit in &rule.body {
            if let Literal::Atom { terms, .. } | Literal::Pred { terms, .. } = lit {
                reserved.extend(terms.iter().filter_map(Term::as_var).map(str::to_string));
            }
        }
        let guard_terms = match mode {
            GroundMode::Naive => q.head.iter().cloned().map(Term::Var).collect(),
            GroundMode::Star => {
                let node = rule.node.expect("node rules carry their atom index");
                let driver_keys: Vec<Term> = match &rule.body[0] {
                    Literal::Atom { terms, .. } => q.body[node]
                        .key_positions
                        .iter()
                        .map(|&p| terms[p].clone())
                        .collect(),
                    _ => unreachable!("generated rules start with their atom"),
                };
                let mut fresh = FreshVars::new(&reserved);
                let mut out = Vec::new();
                for (a, atom) in q.body.iter().enumerate() {
                    if a == node {
                        out.extend(driver_keys.iter().cloned());
                    } else {
                        out.extend(
                            atom.key_positions
                                .iter()
                                .map(|_| Term::Var(fresh.next())),
                        );
                    }
                }
                out.extend(q.head.iter().cloned().map(Term::Var));
                out
            }
        };
        rule.body.push(Literal::Pred {
            name: ground_name.to_string(),
            terms: guard_terms,
            negated: false,
        });
        debug_assert!(rule.is_safe());
    }

    let mut all_strata = vec![vec![ground_rule]];
    all_strata.extend(strata);
    let root_atom = &q.body[cert.root()];
    Ok(RewriteProgram {
        strata: all_strata,
        goal: join_name(&root_atom.relation),
        goal_vars: q.head.clone(),
        free_var_layout,
        ground_mode: Some(mode),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::find_ppjt;
    use crate::query::{parse_query, parse_schema, Schema};

    fn company() -> Schema {
        parse_schema(
            "Employee(employee_id*, office_city, wfh_city)\n\
             Manager(office_city*, manager_id, start_year)\n\
             Contact(office_city*, contact_id)\n",
        )
        .unwrap()
    }

    fn q(text: &str, s: &Schema) -> ConjunctiveQuery {
        parse_query(text, s).unwrap().query
    }

    fn path_cert(query: &ConjunctiveQuery) -> PpjtCertificate {
        use crate::hypergraph::JoinTree;
        crate::attack::certify_rooted(query, JoinTree::new(3, vec![(0, 1), (1, 2)]), 0).unwrap()
    }

    #[test]
    fn example_program_has_eight_rules() {
        let s = company();
        let qex = q(
            "q() :- Employee(x, y, z), Manager(y, x, '2020'), Contact(y, x).",
            &s,
        );
        let prog = rewrite_boolean(&qex, &path_cert(&qex)).unwrap();
        assert_eq!(prog.rule_count(), 8);
        assert_eq!(prog.goal, "Employee_join");
        assert!(prog.check_stratified());

        let count = |p: Provenance, rel: &str| {
            prog.rules()
                .filter(|r| {
                    r.provenance == p && r.node.map(|n| qex.body[n].relation == rel) == Some(true)
                })
                .count()
        };
        // Manager: one constant position, one shared non-key variable, one child
        assert_eq!(count(Provenance::Rule1, "Manager"), 1);
        assert_eq!(count(Provenance::Rule2, "Manager"), 1);
        assert_eq!(count(Provenance::Rule3, "Manager"), 1);
        assert_eq!(count(Provenance::Rule4, "Manager"), 1);
        // Contact: leaf, no constants, one shared non-key variable
        assert_eq!(count(Provenance::Rule1, "Contact"), 0);
        assert_eq!(count(Provenance::Rule2, "Contact"), 1);
        assert_eq!(count(Provenance::Rule4, "Contact"), 1);
        // Employee: root, one child
        assert_eq!(count(Provenance::Rule3, "Employee"), 1);
        assert_eq!(count(Provenance::Rule4, "Employee"), 1);
        // the root's exit rule is nullary
        let goal_rule = prog.rules().find(|r| r.head_name == "Employee_join").unwrap();
        assert!(goal_rule.head_terms.is_empty());
    }

    #[test]
    fn single_atom_plain_exit_rule() {
        let s = parse_schema("R(a*, b)\n").unwrap();
        let query = q("q() :- R(x, y).", &s);
        let cert = find_ppjt(&query).unwrap().unwrap();
        let prog = rewrite_boolean(&query, &cert).unwrap();
        assert_eq!(prog.rule_count(), 1);
        let rule = prog.rules().next().unwrap();
        assert_eq!(rule.provenance, Provenance::Rule4);
        assert_eq!(rule.body.len(), 1);
    }

    #[test]
    fn constant_position_produces_rule1_and_negated_exit() {
        let s = parse_schema("R(a*, b)\n").unwrap();
        let query = q("q() :- R(x, 'a').", &s);
        let cert = find_ppjt(&query).unwrap().unwrap();
        let prog = rewrite_boolean(&query, &cert).unwrap();
        assert_eq!(prog.rule_count(), 2);
        let r1 = prog.rules().find(|r| r.provenance == Provenance::Rule1).unwrap();
        assert_eq!(r1.head_name, "fkey_R");
        assert!(matches!(
            &r1.body[1],
            Literal::NotEq(Term::Var(_), Term::Const(c)) if c == "a"
        ));
        let r4 = prog.rules().find(|r| r.provenance == Provenance::Rule4).unwrap();
        assert_eq!(r4.body.len(), 2);
    }

    #[test]
    fn rule_count_formula_on_example() {
        // per node: #Rule1 = constants + repeats, #Rule2 = shared non-key vars,
        // #Rule3 = children, #Rule4 = 1
        let s = company();
        let qex = q(
            "q() :- Employee(x, y, z), Manager(y, x, '2020'), Contact(y, x).",
            &s,
        );
        let prog = rewrite_boolean(&qex, &path_cert(&qex)).unwrap();
        for (p, want) in [
            (Provenance::Rule1, 1),
            (Provenance::Rule2, 2),
            (Provenance::Rule3, 2),
            (Provenance::Rule4, 3),
        ] {
            assert_eq!(prog.rules().filter(|r| r.provenance == p).count(), want);
        }
    }

    #[test]
    fn nonboolean_example_layout() {
        let s = company();
        let qnex = q(
            "q(w) :- Employee(x, y, z), Manager(y, x, w), Contact(y, x).",
            &s,
        );
        let (frozen, _) = qnex.freeze_head();
        let cert = path_cert(&frozen);
        let prog = rewrite_nonboolean(&qnex, &cert, GroundMode::Star).unwrap();
        assert!(prog.check_stratified());
        assert_eq!(prog.goal_vars, vec!["w"]);
        // w is a free variable of the Employee and Manager subtrees, not Contact's
        assert_eq!(prog.free_var_layout["fkey_Manager"], vec!["w"]);
        assert_eq!(prog.free_var_layout["Employee_join"], vec!["w"]);
        assert!(prog.free_var_layout["fkey_Contact"].is_empty());
        // Contact rules are unchanged: no grounding guard anywhere
        for rule in prog.rules().filter(|r| {
            r.node.map(|n| qnex.body[n].relation == "Contact") == Some(true)
        }) {
            assert!(!rule
                .body
                .iter()
                .any(|l| matches!(l, Literal::Pred { name, .. } if name == GROUND_STAR)));
        }
        // Manager's Rule 1 is unsafe and carries the keyed guard
        let m1 = prog
            .rules()
            .find(|r| {
                r.provenance == Provenance::Rule1
                    && r.node.map(|n| qnex.body[n].relation == "Manager") == Some(true)
            })
            .unwrap();
        assert!(m1
            .body
            .iter()
            .any(|l| matches!(l, Literal::Pred { name, negated: false, .. } if name == GROUND_STAR)));
        // ground_star keeps the key variables of all atoms plus ū
        let g = prog.rules().find(|r| r.provenance == Provenance::GroundStar).unwrap();
        assert_eq!(
            g.head_terms,
            vec![
                Term::Var("x".into()),
                Term::Var("y".into()),
                Term::Var("y".into()),
                Term::Var("w".into())
            ]
        );
    }

    #[test]
    fn single_atom_key_head_variable() {
        let s = parse_schema("R(a*, b)\n").unwrap();
        let query = q("q(x) :- R(x, y).", &s);
        let (frozen, _) = query.freeze_head();
        let cert = find_ppjt(&frozen).unwrap().unwrap();
        let prog = rewrite_nonboolean(&query, &cert, GroundMode::Star).unwrap();
        assert_eq!(prog.goal, "R_join");
        assert_eq!(prog.goal_vars, vec!["x"]);
        assert!(prog.rules().all(|r| r.provenance != Provenance::Rule2));
        let goal_rule = prog.rules().find(|r| r.head_name == "R_join").unwrap();
        assert_eq!(goal_rule.head_terms, vec![Term::Var("x".into())]);
    }

    #[test]
    fn naive_mode_uses_plain_ground_guard() {
        let s = company();
        let qnex = q(
            "q(w) :- Employee(x, y, z), Manager(y, x, w), Contact(y, x).",
            &s,
        );
        let (frozen, _) = qnex.freeze_head();
        let cert = path_cert(&frozen);
        let prog = rewrite_nonboolean(&qnex, &cert, GroundMode::Naive).unwrap();
        assert!(prog.check_stratified());
        let g = prog.rules().find(|r| r.provenance == Provenance::Ground).unwrap();
        assert_eq!(g.head_terms, vec![Term::Var("w".into())]);
        let m1 = prog
            .rules()
            .find(|r| {
                r.provenance == Provenance::Rule1
                    && r.node.map(|n| qnex.body[n].relation == "Manager") == Some(true)
            })
            .unwrap();
        assert!(m1
            .body
            .iter()
            .any(|l| matches!(l, Literal::Pred { name, terms, negated: false } if name == GROUND && terms.len() == 1)));
    }
}
