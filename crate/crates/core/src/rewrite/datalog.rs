//! Deterministic textual form of a rewriting, one rule per line in stratum
//! order: `head(t, …) :- lit, …, lit.` with `not p(…)` for negation and
//! `a != b` for disequalities.

use std::fmt::Write as _;

use crate::query::Term;

use super::{Literal, RewriteProgram, RewriteRule};

pub fn render_datalog(p: &RewriteProgram) -> String {
    let mut out = String::new();
    for rule in p.rules() {
        render_rule(rule, &mut out);
    }
    out
}

fn render_terms(terms: &[Term], out: &mut String) {
    for (i, t) in terms.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "{t}");
    }
}

fn render_rule(rule: &RewriteRule, out: &mut String) {
    let _ = write!(out, "{}(", rule.head_name);
    render_terms(&rule.head_terms, out);
    out.push_str(") :- ");
    for (i, lit) in rule.body.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        match lit {
            Literal::Atom { relation, terms } => {
                let _ = write!(out, "{relation}(");
                render_terms(terms, out);
                out.push(')');
            }
            Literal::Pred {
                name,
                terms,
                negated,
            } => {
                if *negated {
                    out.push_str("not ");
                }
                let _ = write!(out, "{name}(");
                render_terms(terms, out);
                out.push(')');
            }
            Literal::NotEq(a, b) => {
                let _ = write!(out, "{a} != {b}");
            }
        }
    }
    out.push_str(".\n");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::certify_rooted;
    use crate::hypergraph::JoinTree;
    use crate::query::{parse_query, parse_schema};
    use crate::rewrite::{rewrite_boolean, rewrite_nonboolean, GroundMode};

    /// Minimal reader for the printed form, used only to check the round trip.
    /// Predicates whose name matches a schema relation read back as atoms.
    fn read_program(text: &str, relations: &[&str]) -> Vec<(String, Vec<Term>, Vec<Literal>)> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|line| read_rule(line, relations))
            .collect()
    }

    fn read_rule(line: &str, relations: &[&str]) -> (String, Vec<Term>, Vec<Literal>) {
        let line = line.trim().strip_suffix('.').expect("rule ends with '.'");
        let (head, body) = line.split_once(":-").expect("rule has ':-'");
        let (head_name, head_terms) = read_pred(head.trim());
        let mut body_lits = Vec::new();
        for piece in split_top_level(body.trim()) {
            let piece = piece.trim();
            if let Some((a, b)) = piece.split_once("!=") {
                body_lits.push(Literal::NotEq(read_term(a.trim()), read_term(b.trim())));
            } else if let Some(rest) = piece.strip_prefix("not ") {
                let (name, terms) = read_pred(rest.trim());
                body_lits.push(Literal::Pred {
                    name,
                    terms,
                    negated: true,
                });
            } else {
                let (name, terms) = read_pred(piece);
                if relations.contains(&name.as_str()) {
                    body_lits.push(Literal::Atom {
                        relation: name,
                        terms,
                    });
                } else {
                    body_lits.push(Literal::Pred {
                        name,
                        terms,
                        negated: false,
                    });
                }
            }
        }
        (head_name, head_terms, body_lits)
    }

    fn split_top_level(s: &str) -> Vec<String> {
        let mut depth = 0;
        let mut quoted = false;
        let mut out = Vec::new();
        let mut cur = String::new();
        for c in s.chars() {
            match c {
                '\'' => {
                    quoted = !quoted;
                    cur.push(c);
                }
                '(' if !quoted => {
                    depth += 1;
                    cur.push(c);
                }
                ')' if !quoted => {
                    depth -= 1;
                    cur.push(c);
                }
                ',' if depth == 0 && !quoted => {
                    out.push(std::mem::take(&mut cur));
                }
                _ => cur.push(c),
            }
        }
        out.push(cur);
        out
    }

    fn read_pred(s: &str) -> (String, Vec<Term>) {
        let open = s.find('(').expect("predicate has '('");
        let name = s[..open].trim().to_string();
        let inner = s[open + 1..].strip_suffix(')').expect("predicate has ')'");
        let terms = if inner.trim().is_empty() {
            Vec::new()
        } else {
            split_top_level(inner)
                .iter()
                .map(|t| read_term(t.trim()))
                .collect()
        };
        (name, terms)
    }

    fn read_term(s: &str) -> Term {
        if let Some(inner) = s.strip_prefix('\'') {
            Term::Const(inner.strip_suffix('\'').expect("closing quote").replace("''", "'"))
        } else if s.chars().next().is_some_and(|c| c.is_ascii_digit()) {
            Term::Const(s.to_string())
        } else {
            Term::Var(s.to_string())
        }
    }

    #[test]
    fn print_read_round_trip() {
        let s = parse_schema(
            "Employee(employee_id*, office_city, wfh_city)\n\
             Manager(office_city*, manager_id, start_year)\n\
             Contact(office_city*, contact_id)\n",
        )
        .unwrap();
        let qnex = parse_query(
            "q(w) :- Employee(x, y, z), Manager(y, x, w), Contact(y, x).",
            &s,
        )
        .unwrap()
        .query;
        let (frozen, _) = qnex.freeze_head();
        let cert = certify_rooted(&frozen, JoinTree::new(3, vec![(0, 1), (1, 2)]), 0).unwrap();
        let prog = rewrite_nonboolean(&qnex, &cert, GroundMode::Star).unwrap();
        let text = render_datalog(&prog);
        let read = read_program(&text, &["Employee", "Manager", "Contact"]);
        let expected: Vec<(String, Vec<Term>, Vec<Literal>)> = prog
            .rules()
            .map(|r| (r.head_name.clone(), r.head_terms.clone(), r.body.clone()))
            .collect();
        assert_eq!(read, expected);
    }

    #[test]
    fn single_rule_program_prints_one_line() {
        let s = parse_schema("R(a*, b)\n").unwrap();
        let q = parse_query("q() :- R(x, y).", &s).unwrap().query;
        let cert = crate::attack::find_ppjt(&q).unwrap().unwrap();
        let prog = rewrite_boolean(&q, &cert).unwrap();
        let text = render_datalog(&prog);
        assert_eq!(text.lines().count(), 1);
        assert_eq!(text.trim(), "R_join() :- R(x, y).");
    }

    #[test]
    fn figure_style_listing_for_the_example() {
        let s = parse_schema(
            "Employee(employee_id*, office_city, wfh_city)\n\
             Manager(office_city*, manager_id, start_year)\n\
             Contact(office_city*, contact_id)\n",
        )
        .unwrap();
        let qex = parse_query(
            "q() :- Employee(x, y, z), Manager(y, x, '2020'), Contact(y, x).",
            &s,
        )
        .unwrap()
        .query;
        let cert = certify_rooted(&qex, JoinTree::new(3, vec![(0, 1), (1, 2)]), 0).unwrap();
        let prog = rewrite_boolean(&qex, &cert).unwrap();
        let text = render_datalog(&prog);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines,
            vec![
                "fkey_Contact(y) :- Contact(y, x), Contact(y, z1), z1 != x.",
                "Contact_join(y, x) :- Contact(y, x), not fkey_Contact(y).",
                "fkey_Manager(z1) :- Manager(z1, z2, z3), z3 != '2020'.",
                "fkey_Manager(y) :- Manager(y, x, '2020'), Manager(y, z1, z2), z1 != x.",
                "fkey_Manager(y) :- Manager(y, x, '2020'), not Contact_join(y, x).",
                "Manager_join(y, x) :- Manager(y, x, '2020'), not fkey_Manager(y).",
                "fkey_Employee(x) :- Employee(x, y, z), not Manager_join(y, x).",
                "Employee_join() :- Employee(x, y, z), not fkey_Employee(x).",
            ]
        );
    }
}
