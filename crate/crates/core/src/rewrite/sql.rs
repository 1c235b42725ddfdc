//! ANSI-SQL rendering: one statement, one WITH-clause common table expression
//! per intermediate predicate. Self-pruning on comparisons renders as a
//! negated-comparison selection; self-pruning on join variables as a DISTINCT
//! projection with GROUP BY/HAVING; pair-pruning as chained LEFT OUTER JOINs
//! with an IS NULL disjunction (one fused statement per node); exit rules as
//! NOT EXISTS anti-joins. A predicate's branches combine with UNION ALL.
//! Boolean goals render as SELECT DISTINCT 1.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::query::{Schema, Term};

use super::gen::{GROUND, GROUND_STAR};
use super::{Literal, Provenance, RewriteProgram, RewriteRule};

pub fn render_sql(p: &RewriteProgram, schema: &Schema) -> String {
    let cols = predicate_columns(p, schema);
    let mut ctes: Vec<(String, String)> = Vec::new();
    let mut goal_sql = String::new();
    for stratum in &p.strata {
        for (pred, rules) in group_by_head(stratum) {
            let body = render_predicate(&rules, p, schema, &cols);
            if pred == p.goal {
                goal_sql = body;
            } else {
                let header = format!("{pred} ({})", cols[&pred].join(", "));
                ctes.push((header, body));
            }
        }
    }
    let mut out = String::new();
    if !ctes.is_empty() {
        out.push_str("WITH\n");
        for (i, (header, body)) in ctes.iter().enumerate() {
            let _ = write!(out, "{header} AS (\n{}\n)", indent(body, 2));
            out.push_str(if i + 1 < ctes.len() { ",\n" } else { "\n" });
        }
    }
    out.push_str(&goal_sql);
    out.push('\n');
    out
}

fn indent(s: &str, by: usize) -> String {
    let pad = " ".repeat(by);
    s.lines()
        .map(|l| format!("{pad}{l}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn group_by_head(stratum: &[RewriteRule]) -> Vec<(String, Vec<&RewriteRule>)> {
    let mut out: Vec<(String, Vec<&RewriteRule>)> = Vec::new();
    for rule in stratum {
        match out.iter_mut().find(|(name, _)| *name == rule.head_name) {
            Some((_, rules)) => rules.push(rule),
            None => out.push((rule.head_name.clone(), vec![rule])),
        }
    }
    out
}

fn sql_str(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

fn uniquify(names: Vec<String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for name in names {
        if out.contains(&name) {
            let mut i = 2;
            while out.contains(&format!("{name}_{i}")) {
                i += 1;
            }
            out.push(format!("{name}_{i}"));
        } else {
            out.push(name);
        }
    }
    out
}

/// Column names per generated predicate, in term order: key/join attribute
/// names from the schema, then one column per appended free variable.
fn predicate_columns(p: &RewriteProgram, schema: &Schema) -> BTreeMap<String, Vec<String>> {
    let mut cols = BTreeMap::new();
    for rule in p.rules() {
        if cols.contains_key(&rule.head_name) {
            continue;
        }
        let names = match rule.provenance {
            Provenance::Ground => p.goal_vars.clone(),
            Provenance::GroundStar => {
                let mut names = Vec::new();
                for (i, lit) in rule.body.iter().enumerate() {
                    if let Literal::Atom { relation, .. } = lit {
                        let decl = schema.relation(relation).expect("schema covers the query");
                        for &kp in &decl.key_positions {
                            names.push(format!("k{}_{}", i + 1, decl.attributes[kp]));
                        }
                    }
                }
                names.extend(p.goal_vars.iter().cloned());
                names
            }
            _ => {
                let driver = driver_atom(rule);
                let decl = schema.relation(driver.0).expect("schema covers the query");
                let frees = p
                    .free_var_layout
                    .get(&rule.head_name)
                    .cloned()
                    .unwrap_or_default();
                let base_len = rule.head_terms.len() - frees.len();
                let mut names: Vec<String> = Vec::new();
                if rule.head_name.starts_with("fkey_") {
                    for &kp in &decl.key_positions {
                        names.push(decl.attributes[kp].clone());
                    }
                    debug_assert_eq!(names.len(), base_len);
                } else {
                    // join predicate: first column of the driver holding each
                    // head variable
                    for t in &rule.head_terms[..base_len] {
                        let v = t.as_var().expect("join heads carry variables");
                        let pos = driver
                            .1
                            .iter()
                            .position(|dt| dt.as_var() == Some(v))
                            .expect("join variables occur in the atom");
                        names.push(decl.attributes[pos].clone());
                    }
                }
                names.extend(frees);
                names
            }
        };
        cols.insert(rule.head_name.clone(), uniquify(names));
    }
    cols
}

fn driver_atom(rule: &RewriteRule) -> (&str, &[Term]) {
    match &rule.body[0] {
        Literal::Atom { relation, terms } => (relation, terms),
        _ => unreachable!("generated rules start with their atom"),
    }
}

fn guard_of(rule: &RewriteRule) -> Option<(&str, &[Term])> {
    rule.body.iter().find_map(|l| match l {
        Literal::Pred {
            name,
            terms,
            negated: false,
        } if name == GROUND || name == GROUND_STAR => Some((name.as_str(), terms.as_slice())),
        _ => None,
    })
}

struct Ctx<'a> {
    schema: &'a Schema,
    cols: &'a BTreeMap<String, Vec<String>>,
}

impl Ctx<'_> {
    fn attr(&self, rel: &str, pos: usize) -> String {
        let decl = self.schema.relation(rel).expect("schema covers the query");
        format!("{rel}.{}", decl.attributes[pos])
    }

    /// SQL value source for a term: the driver column of its first occurrence,
    /// else the guard column, else a literal.
    fn src(
        &self,
        term: &Term,
        driver: (&str, &[Term]),
        guard: Option<(&str, &[Term])>,
    ) -> String {
        match term {
            Term::Const(c) => sql_str(c),
            Term::Var(v) => {
                if let Some(pos) = driver.1.iter().position(|t| t.as_var() == Some(v)) {
                    return self.attr(driver.0, pos);
                }
                if let Some((gname, gterms)) = guard {
                    if let Some(pos) = gterms.iter().position(|t| t.as_var() == Some(v)) {
                        return format!("{gname}.{}", self.cols[gname][pos]);
                    }
                }
                unreachable!("safe rules bind every variable")
            }
        }
    }

    /// `JOIN ground… ON …` for a guarded statement: equate every guard column
    /// whose term is driver-bound (or constant) with its driver source.
    fn guard_join(&self, driver: (&str, &[Term]), guard: (&str, &[Term])) -> String {
        let (gname, gterms) = guard;
        let mut conds = Vec::new();
        for (pos, t) in gterms.iter().enumerate() {
            let gcol = format!("{gname}.{}", self.cols[gname][pos]);
            match t {
                Term::Const(c) => conds.push(format!("{gcol} = {}", sql_str(c))),
                Term::Var(v) => {
                    if let Some(dpos) = driver.1.iter().position(|dt| dt.as_var() == Some(v)) {
                        conds.push(format!("{gcol} = {}", self.attr(driver.0, dpos)));
                    } else if let Some(first) =
                        gterms[..pos].iter().position(|gt| gt.as_var() == Some(v))
                    {
                        // repeated guard variable
                        conds.push(format!(
                            "{gcol} = {gname}.{}",
                            self.cols[gname][first]
                        ));
                    }
                }
            }
        }
        format!("JOIN {gname} ON {}", conds.join(" AND "))
    }

    /// Comparison predicates imposed entirely on the driver atom: constant
    /// selections and repeated-variable equalities.
    fn comp(&self, driver: (&str, &[Term])) -> Vec<String> {
        let mut conds = Vec::new();
        for (i, t) in driver.1.iter().enumerate() {
            match t {
                Term::Const(c) => conds.push(format!(
                    "{} = {}",
                    self.attr(driver.0, i),
                    sql_str(c)
                )),
                Term::Var(v) => {
                    if let Some(j) = driver.1[..i].iter().position(|p| p.as_var() == Some(v)) {
                        conds.push(format!(
                            "{} = {}",
                            self.attr(driver.0, i),
                            self.attr(driver.0, j)
                        ));
                    }
                }
            }
        }
        conds
    }

    fn head_select(
        &self,
        rule: &RewriteRule,
        driver: (&str, &[Term]),
        guard: Option<(&str, &[Term])>,
    ) -> String {
        rule.head_terms
            .iter()
            .map(|t| self.src(t, driver, guard))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

fn render_predicate(
    rules: &[&RewriteRule],
    p: &RewriteProgram,
    schema: &Schema,
    cols: &BTreeMap<String, Vec<String>>,
) -> String {
    let ctx = Ctx { schema, cols };
    let mut segments = Vec::new();
    let rule1s: Vec<&&RewriteRule> = rules.iter().filter(|r| r.provenance == Provenance::Rule1).collect();
    if !rule1s.is_empty() {
        segments.push(render_rule1(&rule1s, &ctx));
    }
    let rule2s: Vec<&&RewriteRule> = rules.iter().filter(|r| r.provenance == Provenance::Rule2).collect();
    if !rule2s.is_empty() {
        segments.push(render_rule2(&rule2s, &ctx));
    }
    let rule3s: Vec<&&RewriteRule> = rules.iter().filter(|r| r.provenance == Provenance::Rule3).collect();
    if !rule3s.is_empty() {
        segments.push(render_rule3(&rule3s, &ctx, !p.goal_vars.is_empty()));
    }
    for rule in rules {
        match rule.provenance {
            Provenance::Rule4 => segments.push(render_rule4(rule, rule.head_name == p.goal, p, &ctx)),
            Provenance::Ground | Provenance::GroundStar => segments.push(render_ground(rule, &ctx)),
            _ => {}
        }
    }
    segments.join("\nUNION ALL\n")
}

/// All constant and repeated-variable prunings of one atom, as a single
/// selection with the negated comparisons OR-ed together.
fn render_rule1(rules: &[&&RewriteRule], ctx: &Ctx) -> String {
    let first = rules[0];
    let driver = driver_atom(first);
    let guard = guard_of(first);
    let mut negcomp = Vec::new();
    for rule in rules {
        let d = driver_atom(rule);
        let g = guard_of(rule);
        let (a, b) = match rule
            .body
            .iter()
            .find_map(|l| match l {
                Literal::NotEq(a, b) => Some((a, b)),
                _ => None,
            }) {
            Some(pair) => pair,
            None => continue,
        };
        // resolve against this rule's own fresh naming, render against the
        // shared driver table
        let lhs = ctx.src(a, d, g);
        let rhs = match b {
            Term::Const(c) => sql_str(c),
            Term::Var(v) => {
                if let Some(pos) = d.1.iter().position(|t| t.as_var() == Some(v)) {
                    ctx.attr(d.0, pos)
                } else {
                    let (gname, gterms) = g.expect("unsafe comparison uses the guard");
                    let pos = gterms
                        .iter()
                        .position(|t| t.as_var() == Some(v))
                        .expect("guard binds free variables");
                    format!("{gname}.{}", ctx.cols[gname][pos])
                }
            }
        };
        negcomp.push(format!("{lhs} <> {rhs}"));
    }
    let select = ctx.head_select(first, driver, guard);
    let mut sql = format!("SELECT {select}\nFROM {}", driver.0);
    if let Some(g) = guard {
        let _ = write!(sql, "\n{}", ctx.guard_join(driver, g));
    }
    let _ = write!(sql, "\nWHERE {}", negcomp.join(" OR "));
    sql
}

/// Blocks disagreeing on a join attribute with the parent: a DISTINCT
/// projection grouped by key, keeping blocks with more than one combination.
/// With appended free variables the bad keys join back to the base table.
fn render_rule2(rules: &[&&RewriteRule], ctx: &Ctx) -> String {
    let first = rules[0];
    let driver = driver_atom(first);
    let guard = guard_of(first);
    let decl = ctx.schema.relation(driver.0).expect("schema covers the query");
    let key_cols: Vec<String> = decl
        .key_positions
        .iter()
        .map(|&kp| decl.attributes[kp].clone())
        .collect();
    // join columns: the disequality positions of the fused rules, in order
    let mut join_cols: Vec<String> = Vec::new();
    for rule in rules {
        if let Some(Literal::Atom { terms, .. }) = rule.body.get(1) {
            for (i, t) in terms.iter().enumerate() {
                if decl.key_positions.contains(&i) {
                    continue;
                }
                let is_diseq_col = rule.body.iter().any(|l| {
                    matches!(l, Literal::NotEq(a, _) if a == t)
                });
                if is_diseq_col && !join_cols.contains(&decl.attributes[i]) {
                    join_cols.push(decl.attributes[i].clone());
                }
            }
        }
    }
    let key_list = key_cols.join(", ");
    let distinct_list: Vec<String> = key_cols.iter().chain(&join_cols).cloned().collect();
    let bad_keys = format!(
        "SELECT {key_list}\nFROM (SELECT DISTINCT {} FROM {}) t\nGROUP BY {key_list}\nHAVING COUNT(*) > 1",
        distinct_list.join(", "),
        driver.0
    );
    if first.head_terms.len() == key_cols.len() && guard.is_none() {
        return bad_keys;
    }
    // free variables appended: project them from the base table (and guard)
    let select = ctx.head_select(first, driver, guard);
    let mut sql = format!("SELECT {select}\nFROM {}", driver.0);
    if let Some(g) = guard {
        let _ = write!(sql, "\n{}", ctx.guard_join(driver, g));
    }
    let on: Vec<String> = key_cols
        .iter()
        .map(|k| format!("{}.{k} = bad.{k}", driver.0))
        .collect();
    let _ = write!(
        sql,
        "\nJOIN (\n{}\n) bad ON {}",
        indent(&bad_keys, 2),
        on.join(" AND ")
    );
    let comp = ctx.comp(driver);
    if !comp.is_empty() {
        let _ = write!(sql, "\nWHERE {}", comp.join(" AND "));
    }
    sql
}

/// Blocks containing a tuple that cannot join with a surviving child tuple:
/// one LEFT OUTER JOIN per child, keys kept when any joined column IS NULL.
fn render_rule3(rules: &[&&RewriteRule], ctx: &Ctx, nonboolean: bool) -> String {
    let first = rules[0];
    let driver = driver_atom(first);
    let guard = guard_of(first);
    let select = ctx.head_select(first, driver, guard);
    let mut sql = format!("SELECT {select}\nFROM {}", driver.0);
    if let Some(g) = guard {
        let _ = write!(sql, "\n{}", ctx.guard_join(driver, g));
    }
    let mut null_checks = Vec::new();
    for rule in rules {
        let (child, cterms) = rule
            .body
            .iter()
            .find_map(|l| match l {
                Literal::Pred {
                    name,
                    terms,
                    negated: true,
                } => Some((name.as_str(), terms.as_slice())),
                _ => None,
            })
            .expect("pair-pruning negates the child's join predicate");
        let ccols = &ctx.cols[child];
        let mut on = Vec::new();
        for (pos, t) in cterms.iter().enumerate() {
            let ccol = format!("{child}.{}", ccols[pos]);
            on.push(format!("{ccol} = {}", ctx.src(t, driver, guard_of(rule))));
            null_checks.push(format!("{ccol} IS NULL"));
        }
        let _ = write!(sql, "\nLEFT OUTER JOIN {child} ON {}", on.join(" AND "));
    }
    let comp = if nonboolean { ctx.comp(driver) } else { Vec::new() };
    if comp.is_empty() {
        let _ = write!(sql, "\nWHERE {}", null_checks.join(" OR "));
    } else {
        let _ = write!(
            sql,
            "\nWHERE ({}) AND {}",
            null_checks.join(" OR "),
            comp.join(" AND ")
        );
    }
    sql
}

/// Exit rule: surviving join values via a NOT EXISTS anti-join on the pruned
/// keys.
fn render_rule4(rule: &RewriteRule, is_goal: bool, p: &RewriteProgram, ctx: &Ctx) -> String {
    let driver = driver_atom(rule);
    let guard = guard_of(rule);
    let select = if is_goal && p.goal_vars.is_empty() {
        "DISTINCT 1".to_string()
    } else {
        let srcs: Vec<String> = rule
            .head_terms
            .iter()
            .map(|t| ctx.src(t, driver, guard))
            .collect();
        if is_goal {
            let named: Vec<String> = srcs
                .iter()
                .zip(&p.goal_vars)
                .map(|(s, v)| format!("{s} AS {v}"))
                .collect();
            format!("DISTINCT {}", named.join(", "))
        } else {
            srcs.join(", ")
        }
    };
    let mut sql = format!("SELECT {select}\nFROM {}", driver.0);
    if let Some(g) = guard {
        let _ = write!(sql, "\n{}", ctx.guard_join(driver, g));
    }
    let mut where_parts = Vec::new();
    if let Some((fkey, fterms)) = rule.body.iter().find_map(|l| match l {
        Literal::Pred {
            name,
            terms,
            negated: true,
        } => Some((name.as_str(), terms.as_slice())),
        _ => None,
    }) {
        let fcols = &ctx.cols[fkey];
        let conds: Vec<String> = fterms
            .iter()
            .enumerate()
            .map(|(pos, t)| format!("{fkey}.{} = {}", fcols[pos], ctx.src(t, driver, guard)))
            .collect();
        where_parts.push(format!(
            "NOT EXISTS (\n  SELECT * FROM {fkey}\n  WHERE {}\n)",
            conds.join(" AND ")
        ));
    }
    let comp = ctx.comp(driver);
    if !comp.is_empty() && !p.goal_vars.is_empty() {
        where_parts.extend(comp);
    }
    if !where_parts.is_empty() {
        let _ = write!(sql, "\nWHERE {}", where_parts.join(" AND "));
    }
    sql
}

/// The grounding rule: project key attributes of every atom plus the free
/// variables from the comma-joined body under its join/selection predicate.
fn render_ground(rule: &RewriteRule, ctx: &Ctx) -> String {
    let atoms: Vec<(&str, &[Term])> = rule
        .body
        .iter()
        .filter_map(|l| match l {
            Literal::Atom { relation, terms } => Some((relation.as_str(), terms.as_slice())),
            _ => None,
        })
        .collect();
    // first occurrence of each variable across the body
    let occurrence = |v: &str| -> Option<String> {
        for (rel, terms) in &atoms {
            if let Some(pos) = terms.iter().position(|t| t.as_var() == Some(v)) {
                return Some(ctx.attr(rel, pos));
            }
        }
        None
    };
    let select: Vec<String> = rule
        .head_terms
        .iter()
        .map(|t| match t {
            Term::Const(c) => sql_str(c),
            Term::Var(v) => occurrence(v).expect("ground head variables occur in the body"),
        })
        .collect();
    let mut conds = Vec::new();
    let mut seen: BTreeMap<&str, String> = BTreeMap::new();
    for (rel, terms) in &atoms {
        for (pos, t) in terms.iter().enumerate() {
            match t {
                Term::Const(c) => conds.push(format!("{} = {}", ctx.attr(rel, pos), sql_str(c))),
                Term::Var(v) => match seen.get(v.as_str()) {
                    Some(firstcol) => {
                        conds.push(format!("{} = {firstcol}", ctx.attr(rel, pos)))
                    }
                    None => {
                        seen.insert(v, ctx.attr(rel, pos));
                    }
                },
            }
        }
    }
    let tables: Vec<&str> = atoms.iter().map(|(r, _)| *r).collect();
    let mut sql = format!(
        "SELECT DISTINCT {}\nFROM {}",
        select.join(", "),
        tables.join(", ")
    );
    if !conds.is_empty() {
        let _ = write!(sql, "\nWHERE {}", conds.join(" AND "));
    }
    sql
}
