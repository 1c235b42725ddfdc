//! Acyclicity testing and join trees.
//!
//! A join tree is an undirected tree over the query's atoms in which, for any
//! two atoms, their shared variables occur in every atom on the unique
//! connecting path (the running-intersection property). A query is acyclic
//! exactly when it has one. [`gyo_join_tree`] builds a join tree by ear
//! removal; [`enumerate_join_trees`] lazily yields every join tree in a fixed
//! deterministic order, which the PPJT search depends on for reproducibility.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::query::{Atom, ConjunctiveQuery};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HypergraphError {
    #[error("query is not acyclic (ear removal stalled)")]
    NotAcyclic,
    #[error("join-tree enumeration supports at most {limit} atoms, query has {got}")]
    TooManyAtoms { limit: usize, got: usize },
}

/// Undirected tree over atom indices `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinTree {
    n: usize,
    /// Edges `(i, j)` with `i < j`, sorted.
    edges: Vec<(usize, usize)>,
}

impl JoinTree {
    pub fn new(n: usize, mut edges: Vec<(usize, usize)>) -> Self {
        for e in &mut edges {
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
        }
        edges.sort_unstable();
        let tree = JoinTree { n, edges };
        debug_assert!(tree.is_tree());
        tree
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter_map(move |&(a, b)| {
            if a == v {
                Some(b)
            } else if b == v {
                Some(a)
            } else {
                None
            }
        })
    }

    fn is_tree(&self) -> bool {
        if self.n == 0 {
            return false;
        }
        self.edges.len() == self.n - 1 && {
            let mut seen = vec![false; self.n];
            let mut stack = vec![0];
            seen[0] = true;
            while let Some(v) = stack.pop() {
                for w in self.neighbors(v) {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        }
    }

    /// Nodes on the unique path from `a` to `b`, inclusive.
    pub fn path(&self, a: usize, b: usize) -> Vec<usize> {
        let mut parent = vec![usize::MAX; self.n];
        let mut stack = vec![a];
        parent[a] = a;
        while let Some(v) = stack.pop() {
            if v == b {
                break;
            }
            for w in self.neighbors(v) {
                if parent[w] == usize::MAX {
                    parent[w] = v;
                    stack.push(w);
                }
            }
        }
        let mut path = vec![b];
        let mut v = b;
        while v != a {
            v = parent[v];
            path.push(v);
        }
        path.reverse();
        path
    }

    /// Checks the running-intersection property against the given atoms by
    /// direct path enumeration over all atom pairs.
    pub fn has_running_intersection(&self, atoms: &[Atom]) -> bool {
        debug_assert_eq!(atoms.len(), self.n);
        for a in 0..self.n {
            for b in a + 1..self.n {
                let shared: Vec<&str> = atoms[a]
                    .vars()
                    .intersection(&atoms[b].vars())
                    .copied()
                    .collect();
                if shared.is_empty() {
                    continue;
                }
                for &v in &self.path(a, b) {
                    let vars = atoms[v].vars();
                    if !shared.iter().all(|s| vars.contains(s)) {
                        return false;
                    }
                }
            }
        }
        true
    }

    pub fn root_at(&self, root: usize) -> RootedJoinTree {
        assert!(root < self.n);
        let mut parent = vec![None; self.n];
        let mut children = vec![Vec::new(); self.n];
        let mut order = vec![root];
        let mut seen = vec![false; self.n];
        seen[root] = true;
        let mut i = 0;
        while i < order.len() {
            let v = order[i];
            i += 1;
            let mut kids: Vec<usize> = self.neighbors(v).filter(|&w| !seen[w]).collect();
            kids.sort_unstable();
            for &w in &kids {
                seen[w] = true;
                parent[w] = Some(v);
                order.push(w);
            }
            children[v] = kids;
        }
        let mut postorder = order;
        postorder.reverse();
        RootedJoinTree {
            tree: self.clone(),
            root,
            parent,
            children,
            postorder,
        }
    }

    /// Graphviz rendering; node labels are the atoms.
    pub fn to_dot(&self, atoms: &[Atom]) -> String {
        let mut out = String::from("graph join_tree {\n");
        for (i, atom) in atoms.iter().enumerate() {
            let _ = writeln!(out, "  n{i} [label=\"{atom}\"];");
        }
        for &(a, b) in &self.edges {
            let _ = writeln!(out, "  n{a} -- n{b};");
        }
        out.push_str("}\n");
        out
    }
}

/// A join tree with a chosen root; children are ordered by atom index and the
/// post-order listing visits children before parents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RootedJoinTree {
    pub tree: JoinTree,
    pub root: usize,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    postorder: Vec<usize>,
}

impl RootedJoinTree {
    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn postorder(&self) -> &[usize] {
        &self.postorder
    }

    /// Atom indices in the subtree rooted at `v`, sorted.
    pub fn subtree(&self, v: usize) -> Vec<usize> {
        let mut nodes = vec![v];
        let mut i = 0;
        while i < nodes.len() {
            let u = nodes[i];
            i += 1;
            nodes.extend_from_slice(&self.children[u]);
        }
        nodes.sort_unstable();
        nodes
    }

    pub fn render_indented(&self, atoms: &[Atom]) -> String {
        let mut out = String::new();
        self.render_node(self.root, 0, atoms, &mut out);
        out
    }

    fn render_node(&self, v: usize, depth: usize, atoms: &[Atom], out: &mut String) {
        let _ = writeln!(out, "{}{}", "  ".repeat(depth), atoms[v]);
        for &c in &self.children[v] {
            self.render_node(c, depth + 1, atoms, out);
        }
    }
}

/// Builds a join tree by ear removal, or reports `NotAcyclic` when removal
/// stalls before exhausting the atoms. Ties break to the lowest-index ear and
/// the lowest-index witness, so the output is deterministic.
pub fn gyo_join_tree(q: &ConjunctiveQuery) -> Result<JoinTree, HypergraphError> {
    assert!(!q.body.is_empty(), "query must have at least one atom");
    let n = q.body.len();
    let vars: Vec<BTreeSet<&str>> = q.body.iter().map(|a| a.vars()).collect();
    let mut alive: Vec<bool> = vec![true; n];
    let mut alive_count = n;
    let mut edges = Vec::new();

    while alive_count > 1 {
        let mut removed = None;
        'search: for f in 0..n {
            if !alive[f] {
                continue;
            }
            // variables of f shared with some other alive atom
            let shared: BTreeSet<&str> = vars[f]
                .iter()
                .filter(|v| {
                    (0..n).any(|g| g != f && alive[g] && vars[g].contains(**v))
                })
                .copied()
                .collect();
            for g in 0..n {
                if g == f || !alive[g] {
                    continue;
                }
                if shared.iter().all(|v| vars[g].contains(v)) {
                    removed = Some((f, g));
                    break 'search;
                }
            }
        }
        match removed {
            Some((f, g)) => {
                alive[f] = false;
                alive_count -= 1;
                edges.push((f, g));
            }
            None => return Err(HypergraphError::NotAcyclic),
        }
    }
    Ok(JoinTree::new(n, edges))
}

pub const ENUMERATION_ATOM_LIMIT: usize = 10;

/// Lazily enumerates every join tree of `q`: spanning trees of the candidate
/// atom graph, filtered by the running-intersection check, in lexicographic
/// order of their sorted edge lists.
pub fn enumerate_join_trees(
    q: &ConjunctiveQuery,
) -> Result<JoinTreeIter<'_>, HypergraphError> {
    let n = q.body.len();
    assert!(n >= 1, "query must have at least one atom");
    if n > ENUMERATION_ATOM_LIMIT {
        return Err(HypergraphError::TooManyAtoms {
            limit: ENUMERATION_ATOM_LIMIT,
            got: n,
        });
    }
    // Candidate edges: variable-sharing pairs, plus unconstrained pairs across
    // variable-disjoint components (a join tree of a disconnected query must
    // bridge its components somewhere).
    let comp = component_ids(&q.body);
    let mut cand = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if q.body[i].shares_var_with(&q.body[j]) || comp[i] != comp[j] {
                cand.push((i, j));
            }
        }
    }
    let mut stack = Vec::new();
    stack.push(Frame {
        next: 0,
        chosen: Vec::new(),
    });
    Ok(JoinTreeIter {
        atoms: &q.body,
        n,
        cand,
        stack,
    })
}

fn component_ids(atoms: &[Atom]) -> Vec<usize> {
    let n = atoms.len();
    let mut id = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if id[s] != usize::MAX {
            continue;
        }
        id[s] = next;
        let mut stack = vec![s];
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if id[j] == usize::MAX && atoms[i].shares_var_with(&atoms[j]) {
                    id[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    id
}

struct Frame {
    next: usize,
    chosen: Vec<(usize, usize)>,
}

pub struct JoinTreeIter<'a> {
    atoms: &'a [Atom],
    n: usize,
    cand: Vec<(usize, usize)>,
    stack: Vec<Frame>,
}

impl JoinTreeIter<'_> {
    fn creates_cycle(&self, chosen: &[(usize, usize)], edge: (usize, usize)) -> bool {
        // connectivity over at most 10 nodes, recomputed per probe
        let mut comp: Vec<usize> = (0..self.n).collect();
        for &(a, b) in chosen {
            let (ca, cb) = (comp[a], comp[b]);
            if ca != cb {
                for c in comp.iter_mut() {
                    if *c == cb {
                        *c = ca;
                    }
                }
            }
        }
        comp[edge.0] == comp[edge.1]
    }
}

impl Iterator for JoinTreeIter<'_> {
    type Item = JoinTree;

    fn next(&mut self) -> Option<JoinTree> {
        while let Some(frame) = self.stack.pop() {
            if frame.chosen.len() == self.n - 1 {
                let tree = JoinTree::new(self.n, frame.chosen);
                if tree.has_running_intersection(self.atoms) {
                    return Some(tree);
                }
                continue;
            }
            if frame.next >= self.cand.len() {
                continue;
            }
            // feasibility: enough candidate edges left to complete a tree
            let remaining = self.cand.len() - frame.next;
            if frame.chosen.len() + remaining < self.n - 1 {
                continue;
            }
            let edge = self.cand[frame.next];
            // explore "skip edge" after "take edge" so trees come out in
            // lexicographic order of their edge lists
            self.stack.push(Frame {
                next: frame.next + 1,
                chosen: frame.chosen.clone(),
            });
            if !self.creates_cycle(&frame.chosen, edge) {
                let mut chosen = frame.chosen;
                chosen.push(edge);
                self.stack.push(Frame {
                    next: frame.next + 1,
                    chosen,
                });
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
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

    #[test]
    fn gyo_builds_the_example_path() {
        let s = company();
        let qex = q(
            "q() :- Employee(x, y, z), Manager(y, x, '2020'), Contact(y, x).",
            &s,
        );
        let tree = gyo_join_tree(&qex).unwrap();
        assert_eq!(tree.edges(), &[(0, 1), (1, 2)]);
        assert!(tree.has_running_intersection(&qex.body));
    }

    #[test]
    fn triangle_is_cyclic() {
        let s = parse_schema("R(a*, b)\nS(a*, b)\nT(a*, b)\n").unwrap();
        let tri = q("q() :- R(x, y), S(y, z), T(z, x).", &s);
        assert_eq!(gyo_join_tree(&tri), Err(HypergraphError::NotAcyclic));
        assert_eq!(enumerate_join_trees(&tri).unwrap().count(), 0);
    }

    #[test]
    fn single_atom_tree() {
        let s = parse_schema("R(a*, b)\n").unwrap();
        let one = q("q() :- R(x, y).", &s);
        let tree = gyo_join_tree(&one).unwrap();
        assert_eq!(tree.node_count(), 1);
        assert!(tree.edges().is_empty());
        let trees: Vec<_> = enumerate_join_trees(&one).unwrap().collect();
        assert_eq!(trees.len(), 1);
    }

    #[test]
    fn unique_tree_for_composite_key_path() {
        // R(x,w,y), S(y,w,z), T(w,z) admits exactly one join tree: R - S - T
        let s = parse_schema("R(a*, b*, c)\nS(a*, b*, c)\nT(a*, b)\n").unwrap();
        let query = q("q() :- R(x, w, y), S(y, w, z), T(w, z).", &s);
        let trees: Vec<_> = enumerate_join_trees(&query).unwrap().collect();
        assert_eq!(trees.len(), 1);
        assert_eq!(trees[0].edges(), &[(0, 1), (1, 2)]);
        assert_eq!(gyo_join_tree(&query).unwrap(), trees[0]);
    }

    #[test]
    fn example_query_has_three_trees_including_the_path() {
        let s = company();
        let qex = q(
            "q() :- Employee(x, y, z), Manager(y, x, '2020'), Contact(y, x).",
            &s,
        );
        let trees: Vec<_> = enumerate_join_trees(&qex).unwrap().collect();
        assert_eq!(trees.len(), 3);
        assert!(trees
            .iter()
            .any(|t| t.edges() == [(0, 1), (1, 2)]));
        // lexicographic order by edge list
        let mut sorted = trees.clone();
        sorted.sort_by(|a, b| a.edges().cmp(b.edges()));
        assert_eq!(trees, sorted);
    }

    #[test]
    fn two_atom_query_has_one_tree() {
        let s = parse_schema("R(a*, b)\nS(a*, b)\n").unwrap();
        let query = q("q() :- R(x, y), S(y, z).", &s);
        let trees: Vec<_> = enumerate_join_trees(&query).unwrap().collect();
        assert_eq!(trees.len(), 1);
    }

    #[test]
    fn disconnected_query_still_has_a_join_tree() {
        let s = parse_schema("R(a*, b)\nS(a*, b)\n").unwrap();
        let query = q("q() :- R(x, y), S(u, v).", &s);
        assert!(gyo_join_tree(&query).is_ok());
        let trees: Vec<_> = enumerate_join_trees(&query).unwrap().collect();
        assert_eq!(trees.len(), 1);
    }

    #[test]
    fn rooting_is_a_bijection() {
        let s = company();
        let qex = q(
            "q() :- Employee(x, y, z), Manager(y, x, '2020'), Contact(y, x).",
            &s,
        );
        for tree in enumerate_join_trees(&qex).unwrap() {
            let rooted: Vec<_> = (0..tree.node_count()).map(|r| tree.root_at(r)).collect();
            assert_eq!(rooted.len(), tree.node_count());
            for (r, rt) in rooted.iter().enumerate() {
                assert_eq!(rt.root, r);
                assert_eq!(rt.parent(r), None);
                assert_eq!(*rt.postorder().last().unwrap(), r);
            }
        }
    }

    #[test]
    fn guard_kicks_in_above_limit() {
        let mut text = String::from("q() :- ");
        let mut schema_text = String::new();
        for i in 0..11 {
            schema_text.push_str(&format!("R{i}(a*, b)\n"));
            if i > 0 {
                text.push_str(", ");
            }
            text.push_str(&format!("R{i}(x{i}, x{})", i + 1));
        }
        text.push('.');
        let s = parse_schema(&schema_text).unwrap();
        let query = q(&text, &s);
        assert!(matches!(
            enumerate_join_trees(&query),
            Err(HypergraphError::TooManyAtoms { .. })
        ));
    }
}
