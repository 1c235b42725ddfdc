//! Conjunctive-query AST: schemas with primary keys, terms, atoms, and the
//! structural predicates (Boolean, full, self-join-free, connected) the rest of
//! the pipeline dispatches on.
//!
//! Values are untyped strings compared by exact equality; primary keys are
//! declared in the schema (`*`-marked attributes), not in the query text.

mod parse;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

pub use parse::{parse_query, parse_schema, ParseWarning, QueryError};

/// Declared relations: name, attribute names, and which positions form the key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Schema {
    relations: BTreeMap<String, RelationSchema>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationSchema {
    pub name: String,
    pub attributes: Vec<String>,
    /// Strictly increasing, nonempty, all < arity.
    pub key_positions: Vec<usize>,
}

impl RelationSchema {
    pub fn arity(&self) -> usize {
        self.attributes.len()
    }

    pub fn key_attributes(&self) -> Vec<&str> {
        self.key_positions
            .iter()
            .map(|&p| self.attributes[p].as_str())
            .collect()
    }
}

impl Schema {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a relation declaration, validating the key/attribute invariants.
    pub fn add_relation(
        &mut self,
        name: &str,
        attributes: &[&str],
        key_positions: &[usize],
    ) -> Result<(), QueryError> {
        let decl = RelationSchema {
            name: name.to_string(),
            attributes: attributes.iter().map(|a| a.to_string()).collect(),
            key_positions: key_positions.to_vec(),
        };
        if decl.key_positions.is_empty()
            || !decl.key_positions.windows(2).all(|w| w[0] < w[1])
            || decl.key_positions.iter().any(|&p| p >= decl.arity())
        {
            return Err(QueryError::Syntax(format!(
                "relation {name}: key positions must be nonempty, strictly increasing and < arity"
            )));
        }
        let mut seen = BTreeSet::new();
        if !decl.attributes.iter().all(|a| seen.insert(a.clone())) {
            return Err(QueryError::Syntax(format!(
                "relation {name}: duplicate attribute name"
            )));
        }
        if self.relations.insert(name.to_string(), decl).is_some() {
            return Err(QueryError::Syntax(format!(
                "relation {name} declared twice"
            )));
        }
        Ok(())
    }

    pub fn relation(&self, name: &str) -> Option<&RelationSchema> {
        self.relations.get(name)
    }

    pub fn relations(&self) -> impl Iterator<Item = &RelationSchema> {
        self.relations.values()
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for rel in self.relations.values() {
            write!(f, "{}(", rel.name)?;
            for (i, attr) in rel.attributes.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{attr}")?;
                if rel.key_positions.contains(&i) {
                    write!(f, "*")?;
                }
            }
            writeln!(f, ")")?;
        }
        Ok(())
    }
}

/// A variable or an opaque string constant.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Var(String),
    Const(String),
}

impl Term {
    pub fn as_var(&self) -> Option<&str> {
        match self {
            Term::Var(v) => Some(v),
            Term::Const(_) => None,
        }
    }

    pub fn is_var(&self) -> bool {
        matches!(self, Term::Var(_))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "{v}"),
            Term::Const(c) => write!(f, "'{}'", c.replace('\'', "''")),
        }
    }
}

/// One body atom; `key_positions` is copied from the schema at parse time so
/// atoms (and subqueries built from them) stay self-contained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    pub relation: String,
    pub terms: Vec<Term>,
    pub key_positions: Vec<usize>,
}

impl Atom {
    /// Variables occurring anywhere in the atom.
    pub fn vars(&self) -> BTreeSet<&str> {
        self.terms.iter().filter_map(Term::as_var).collect()
    }

    /// key(F): the set of variables among the key-position terms. Constants in
    /// key positions are allowed and simply do not contribute.
    pub fn key_vars(&self) -> BTreeSet<&str> {
        self.key_positions
            .iter()
            .filter_map(|&p| self.terms[p].as_var())
            .collect()
    }

    /// Variables occurring in at least one non-key position.
    pub fn nonkey_vars(&self) -> BTreeSet<&str> {
        self.terms
            .iter()
            .enumerate()
            .filter(|(p, _)| !self.key_positions.contains(p))
            .filter_map(|(_, t)| t.as_var())
            .collect()
    }

    pub fn key_terms(&self) -> Vec<&Term> {
        self.key_positions.iter().map(|&p| &self.terms[p]).collect()
    }

    pub fn shares_var_with(&self, other: &Atom) -> bool {
        let mine = self.vars();
        other.vars().iter().any(|v| mine.contains(v))
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.relation)?;
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{t}")?;
        }
        write!(f, ")")
    }
}

/// A conjunctive query `name(u1, …, uk) :- atom, …, atom.`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConjunctiveQuery {
    pub name: String,
    /// The free (head) variables, in head order; pairwise distinct.
    pub head: Vec<String>,
    pub body: Vec<Atom>,
}

impl ConjunctiveQuery {
    pub fn is_boolean(&self) -> bool {
        self.head.is_empty()
    }

    /// True when every variable of the body is free.
    pub fn is_full(&self) -> bool {
        let head: BTreeSet<&str> = self.head.iter().map(String::as_str).collect();
        self.vars().iter().all(|v| head.contains(v))
    }

    pub fn is_self_join_free(&self) -> bool {
        let mut seen = BTreeSet::new();
        self.body.iter().all(|a| seen.insert(a.relation.as_str()))
    }

    /// True when the variable-sharing graph over the body atoms is connected.
    pub fn is_connected(&self) -> bool {
        self.component_ids().iter().all(|&c| c == 0)
    }

    pub fn vars(&self) -> BTreeSet<&str> {
        self.body.iter().flat_map(|a| a.vars()).collect()
    }

    /// Replaces variables by constants. Head variables in the assignment are
    /// removed from the head, so a full-head assignment yields a Boolean query.
    pub fn substitute(&self, assignment: &BTreeMap<String, String>) -> Result<Self, QueryError> {
        let vars = self.vars();
        for v in assignment.keys() {
            if !vars.contains(v.as_str()) && !self.head.contains(v) {
                return Err(QueryError::UnknownVariable(v.clone()));
            }
        }
        let body = self
            .body
            .iter()
            .map(|a| Atom {
                relation: a.relation.clone(),
                terms: a
                    .terms
                    .iter()
                    .map(|t| match t {
                        Term::Var(v) => match assignment.get(v) {
                            Some(c) => Term::Const(c.clone()),
                            None => t.clone(),
                        },
                        Term::Const(_) => t.clone(),
                    })
                    .collect(),
                key_positions: a.key_positions.clone(),
            })
            .collect();
        let head = self
            .head
            .iter()
            .filter(|v| !assignment.contains_key(*v))
            .cloned()
            .collect();
        Ok(ConjunctiveQuery {
            name: self.name.clone(),
            head,
            body,
        })
    }

    /// Freezes every head variable to a fresh constant outside the data
    /// alphabet, yielding the Boolean query `q[ū→c̄]` plus the mapping used.
    pub fn freeze_head(&self) -> (Self, Vec<(String, String)>) {
        let mapping: Vec<(String, String)> = self
            .head
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), format!("\u{0}frozen{i}")))
            .collect();
        let assignment: BTreeMap<String, String> = mapping.iter().cloned().collect();
        let frozen = self
            .substitute(&assignment)
            .expect("head variables are variables of the query");
        (frozen, mapping)
    }

    /// Partitions a Boolean query's atoms into maximal variable-sharing
    /// components, each returned as a Boolean sub-query.
    pub fn connected_components(&self) -> Vec<ConjunctiveQuery> {
        assert!(self.is_boolean(), "component decomposition is for Boolean queries");
        let ids = self.component_ids();
        let count = ids.iter().copied().max().map_or(0, |m| m + 1);
        (0..count)
            .map(|c| ConjunctiveQuery {
                name: if count == 1 {
                    self.name.clone()
                } else {
                    format!("{}_{}", self.name, c + 1)
                },
                head: Vec::new(),
                body: self
                    .body
                    .iter()
                    .zip(&ids)
                    .filter(|(_, &id)| id == c)
                    .map(|(a, _)| a.clone())
                    .collect(),
            })
            .collect()
    }

    /// Component id per body atom, numbered in first-appearance order.
    fn component_ids(&self) -> Vec<usize> {
        let n = self.body.len();
        let mut id = vec![usize::MAX; n];
        let mut next = 0;
        for start in 0..n {
            if id[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            id[start] = next;
            while let Some(i) = stack.pop() {
                for j in 0..n {
                    if id[j] == usize::MAX && self.body[i].shares_var_with(&self.body[j]) {
                        id[j] = next;
                        stack.push(j);
                    }
                }
            }
            next += 1;
        }
        id
    }
}

impl fmt::Display for ConjunctiveQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.name, self.head.join(", "))?;
        write!(f, " :- ")?;
        for (i, atom) in self.body.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{atom}")?;
        }
        write!(f, ".")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn company_schema() -> Schema {
        let mut s = Schema::new();
        s.add_relation("Employee", &["employee_id", "office_city", "wfh_city"], &[0])
            .unwrap();
        s.add_relation("Manager", &["office_city", "manager_id", "start_year"], &[0])
            .unwrap();
        s.add_relation("Contact", &["office_city", "contact_id"], &[0])
            .unwrap();
        s
    }

    #[test]
    fn example_query_flags() {
        let schema = company_schema();
        let q = parse_query(
            "q() :- Employee(x, y, z), Manager(y, x, '2020'), Contact(y, x).",
            &schema,
        )
        .unwrap()
        .query;
        assert!(q.is_boolean());
        assert!(q.is_self_join_free());
        assert!(q.is_connected());
        assert!(!q.is_full());
        assert_eq!(q.body.len(), 3);
        assert_eq!(q.body[1].terms[2], Term::Const("2020".into()));
    }

    #[test]
    fn head_projection_flags() {
        let mut schema = Schema::new();
        schema.add_relation("R", &["a", "b"], &[0]).unwrap();
        let q = parse_query("q(x) :- R(x, y).", &schema).unwrap().query;
        assert_eq!(q.head, vec!["x"]);
        assert!(!q.is_full());
        let full = parse_query("q(x, y) :- R(x, y).", &schema).unwrap().query;
        assert!(full.is_full());
    }

    #[test]
    fn disconnected_query() {
        let mut schema = Schema::new();
        schema.add_relation("R", &["a", "b"], &[0]).unwrap();
        schema.add_relation("S", &["a", "b"], &[0]).unwrap();
        let q = parse_query("q() :- R(x, y), S(u, v).", &schema).unwrap().query;
        assert!(!q.is_connected());
        let comps = q.connected_components();
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0].body[0].relation, "R");
        assert_eq!(comps[1].body[0].relation, "S");
    }

    #[test]
    fn components_partition_by_shared_vars() {
        let mut schema = Schema::new();
        schema.add_relation("R", &["a", "b"], &[0]).unwrap();
        schema.add_relation("S", &["a", "b"], &[0]).unwrap();
        schema.add_relation("T", &["a", "b"], &[0]).unwrap();
        let q = parse_query("q() :- R(x, y), S(y, z), T(u, u).", &schema)
            .unwrap()
            .query;
        let comps = q.connected_components();
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0].body.len(), 2);
        assert_eq!(comps[1].body.len(), 1);
        let connected = parse_query("q() :- R(x, y), S(y, z).", &schema).unwrap().query;
        assert_eq!(connected.connected_components().len(), 1);
    }

    #[test]
    fn substitute_replaces_and_drops_head_vars() {
        let schema = company_schema();
        let q = parse_query("q(x) :- Employee(x, y, z), Manager(y, w, '2020').", &schema)
            .unwrap()
            .query;
        let mut assignment = BTreeMap::new();
        assignment.insert("x".to_string(), "0011".to_string());
        let q2 = q.substitute(&assignment).unwrap();
        assert!(q2.is_boolean());
        assert_eq!(q2.body[0].terms[0], Term::Const("0011".into()));

        // empty assignment is the identity
        assert_eq!(q.substitute(&BTreeMap::new()).unwrap(), q);

        // unknown variables are rejected, not ignored
        let mut bad = BTreeMap::new();
        bad.insert("nope".to_string(), "1".to_string());
        assert!(matches!(
            q.substitute(&bad),
            Err(QueryError::UnknownVariable(_))
        ));
    }

    #[test]
    fn substitute_idempotent_for_fixed_assignment() {
        let schema = company_schema();
        let q = parse_query("q(x, w) :- Employee(x, y, z), Manager(y, w, u).", &schema)
            .unwrap()
            .query;
        let mut a = BTreeMap::new();
        a.insert("x".to_string(), "a".to_string());
        a.insert("w".to_string(), "b".to_string());
        let once = q.substitute(&a).unwrap();
        assert!(once.is_boolean());
        let twice = once.substitute(&BTreeMap::new()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn freeze_head_yields_boolean() {
        let schema = company_schema();
        let q = parse_query("q(x) :- Employee(x, y, z), Manager(y, w, '2020').", &schema)
            .unwrap()
            .query;
        let (frozen, mapping) = q.freeze_head();
        assert!(frozen.is_boolean());
        assert_eq!(mapping.len(), 1);
        assert_eq!(mapping[0].0, "x");
    }
}
