//! Executes a rewriting bottom-up, one stratum at a time, with per-rule plans
//! keyed on the rule's provenance: comparison prunings scan once; join-variable
//! prunings scan each block once and test whether the compared values are
//! uniform; pair-pruning and exit rules are anti-joins; grounding rules run
//! the semi-join assembly. Joins against the grounding predicate and the
//! negated predicates run as sort-merge passes over projections, keeping the
//! access pattern sequential, so every row contributes a constant number of
//! scan-and-sort steps per rule plus one per matching grounding entry.

use std::collections::HashMap;

use smallvec::SmallVec;

use crate::query::Term;
use crate::rewrite::{Literal, Provenance, RewriteProgram, RewriteRule};

use super::yannakakis::join_project;
use super::{AnswerSet, DatabaseInstance, EngineError, Row, Sym};

/// Intermediate pipeline tuple: a driver projection, possibly extended by a
/// grounding row.
type WorkRow = SmallVec<[Sym; 8]>;

pub fn eval_program(
    p: &RewriteProgram,
    db: &DatabaseInstance,
) -> Result<AnswerSet, EngineError> {
    let idb = eval_all(p, db)?;
    let goal = idb
        .get(&p.goal)
        .ok_or_else(|| EngineError::UnboundPredicate(p.goal.clone()))?;
    let rows: Vec<Vec<String>> = goal.rows.iter().map(|t| db.externalize(t)).collect();
    Ok(AnswerSet::from_tuples(p.goal_vars.clone(), rows))
}

/// Contents of every generated predicate after evaluation, externalized and
/// sorted; for reports and tests that inspect the intermediate tables.
pub fn eval_program_tables(
    p: &RewriteProgram,
    db: &DatabaseInstance,
) -> Result<std::collections::BTreeMap<String, Vec<Vec<String>>>, EngineError> {
    let idb = eval_all(p, db)?;
    Ok(idb
        .into_iter()
        .map(|(name, rel)| {
            let mut rows: Vec<Vec<String>> =
                rel.rows.iter().map(|r| db.externalize(r)).collect();
            rows.sort();
            (name, rows)
        })
        .collect())
}

fn eval_all(
    p: &RewriteProgram,
    db: &DatabaseInstance,
) -> Result<HashMap<String, IdbRel>, EngineError> {
    let mut idb: HashMap<String, IdbRel> = HashMap::new();
    for stratum in &p.strata {
        // all heads of a stratum exist before any of them is read downstream
        for rule in stratum {
            idb.entry(rule.head_name.clone()).or_default();
        }
        // scan-kind rules over the same relation and pattern share one pass
        let mut scan_groups: Vec<(String, Pattern, Vec<(usize, Plan)>)> = Vec::new();
        for (i, rule) in stratum.iter().enumerate() {
            match rule.provenance {
                Provenance::Ground | Provenance::GroundStar => {
                    let _t = std::time::Instant::now();
                    let derived = eval_ground(rule, db)?;
                    if std::env::var("LINCQA_TRACE").is_ok() {
                        eprintln!("  ground -> {} in {:?}", derived.len(), _t.elapsed());
                    }
                    idb.get_mut(&rule.head_name)
                        .expect("inserted above")
                        .rows
                        .extend(derived);
                }
                Provenance::Rule2 => {
                    let plan = compile(rule, db)?;
                    let derived = eval_block_agree(&plan, db, &idb)?;
                    idb.get_mut(&rule.head_name)
                        .expect("inserted above")
                        .rows
                        .extend(derived);
                }
                _ => {
                    let plan = compile(rule, db)?;
                    match scan_groups.iter_mut().find(|(rel, pat, _)| {
                        *rel == plan.relation && *pat == plan.pattern
                    }) {
                        Some((_, _, members)) => members.push((i, plan)),
                        None => scan_groups.push((
                            plan.relation.clone(),
                            plan.pattern.clone(),
                            vec![(i, plan)],
                        )),
                    }
                }
            }
        }
        for (relation, pattern, members) in scan_groups {
            let rel = db
                .relation(&relation)
                .ok_or_else(|| EngineError::UnboundPredicate(relation.clone()))?;
            let mut drvs: Vec<Vec<Row>> = members
                .iter()
                .map(|_| Vec::with_capacity(rel.rows.len()))
                .collect();
            for row in &rel.rows {
                if pattern.matches(row) {
                    for ((_, plan), drv) in members.iter().zip(&mut drvs) {
                        drv.push(plan.used_cols.iter().map(|&c| row[c]).collect());
                    }
                }
            }
            for ((rule_idx, plan), drv) in members.into_iter().zip(drvs) {
                let _t = std::time::Instant::now();
                let derived = finish_pipeline(&plan, drv, &idb)?;
                if std::env::var("LINCQA_TRACE").is_ok() {
                    eprintln!(
                        "  {:?} {} -> {} in {:?}",
                        stratum[rule_idx].provenance,
                        stratum[rule_idx].head_name,
                        derived.len(),
                        _t.elapsed()
                    );
                }
                idb.get_mut(&stratum[rule_idx].head_name)
                    .expect("inserted above")
                    .rows
                    .extend(derived);
            }
        }
        // predicates become readable (sorted, deduplicated) at stratum end;
        // no rule reads a predicate defined in its own stratum
        for rule in stratum {
            idb.get_mut(&rule.head_name).unwrap().finalize();
        }
    }
    Ok(idb)
}

#[derive(Default)]
struct IdbRel {
    /// sorted and deduplicated once the defining stratum completes
    rows: Vec<Row>,
}

impl IdbRel {
    fn finalize(&mut self) {
        if !self.rows.is_sorted() {
            self.rows.sort_unstable();
        }
        self.rows.dedup();
    }
}

/// Where a term's value comes from at runtime.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Src {
    DriverCol(usize),
    GuardPos(usize),
    Const(Option<Sym>, String),
}

#[derive(Debug)]
struct GuardPlan {
    pred: String,
    /// guard positions matched against driver-side values
    lookup: Vec<(usize, Src)>,
    /// positions within a guard row that must agree (repeated guard variables)
    row_eq: Vec<(usize, usize)>,
}

#[derive(Debug)]
struct Plan {
    relation: String,
    pattern: Pattern,
    head: Vec<Src>,
    diseqs: Vec<(Src, Src)>,
    negs: Vec<(String, Vec<Src>)>,
    guard: Option<GuardPlan>,
    /// driver columns whose values feed anything downstream, sorted
    used_cols: Vec<usize>,
    /// length of the driver projection within a work row
    drv_len: usize,
    driver_arity: usize,
    /// for block-agreement rules: the compared non-key column
    agree_col: Option<usize>,
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
struct Pattern {
    consts: Vec<(usize, Option<Sym>)>,
    repeats: Vec<(usize, usize)>,
}

impl Pattern {
    fn matches(&self, row: &[Sym]) -> bool {
        self.consts.iter().all(|&(i, c)| Some(row[i]) == c)
            && self.repeats.iter().all(|&(i, j)| row[i] == row[j])
    }
}

fn compile(rule: &RewriteRule, db: &DatabaseInstance) -> Result<Plan, EngineError> {
    let (relation, driver_terms) = match &rule.body[0] {
        Literal::Atom { relation, terms } => (relation.clone(), terms.clone()),
        _ => {
            return Err(EngineError::UnboundPredicate(
                "rule does not start with a stored relation".to_string(),
            ))
        }
    };
    let mut pattern = Pattern::default();
    let mut bind: Vec<(String, usize)> = Vec::new();
    for (i, t) in driver_terms.iter().enumerate() {
        match t {
            Term::Const(c) => pattern.consts.push((i, db.symbols.lookup(c))),
            Term::Var(v) => match bind.iter().find(|(name, _)| name == v) {
                Some(&(_, first)) => pattern.repeats.push((i, first)),
                None => bind.push((v.clone(), i)),
            },
        }
    }

    // guard literal: the only positive predicate occurrence
    let guard_lit = rule.body.iter().find_map(|l| match l {
        Literal::Pred {
            name,
            terms,
            negated: false,
        } => Some((name.clone(), terms.clone())),
        _ => None,
    });
    let mut guard = None;
    let mut guard_bind: Vec<(String, usize)> = Vec::new();
    if let Some((pred, terms)) = &guard_lit {
        let mut lookup = Vec::new();
        let mut row_eq = Vec::new();
        for (pos, t) in terms.iter().enumerate() {
            match t {
                Term::Const(c) => {
                    lookup.push((pos, Src::Const(db.symbols.lookup(c), c.clone())))
                }
                Term::Var(v) => {
                    if let Some(&(_, col)) = bind.iter().find(|(name, _)| name == v) {
                        lookup.push((pos, Src::DriverCol(col)));
                    } else if let Some(&(_, first)) =
                        guard_bind.iter().find(|(name, _)| name == v)
                    {
                        row_eq.push((pos, first));
                    } else {
                        guard_bind.push((v.clone(), pos));
                    }
                }
            }
        }
        guard = Some(GuardPlan {
            pred: pred.clone(),
            lookup,
            row_eq,
        });
    }

    let resolve = |t: &Term| -> Result<Src, EngineError> {
        match t {
            Term::Const(c) => Ok(Src::Const(db.symbols.lookup(c), c.clone())),
            Term::Var(v) => {
                if let Some(&(_, col)) = bind.iter().find(|(name, _)| name == v) {
                    Ok(Src::DriverCol(col))
                } else if let Some(&(_, pos)) = guard_bind.iter().find(|(name, _)| name == v) {
                    Ok(Src::GuardPos(pos))
                } else {
                    Err(EngineError::UnboundPredicate(format!(
                        "variable {v} is not bound in rule for {}",
                        rule.head_name
                    )))
                }
            }
        }
    };

    let head = rule
        .head_terms
        .iter()
        .map(&resolve)
        .collect::<Result<Vec<_>, _>>()?;
    let mut negs = Vec::new();
    let mut diseqs = Vec::new();
    let mut agree_col = None;
    for lit in &rule.body[1..] {
        match lit {
            Literal::Pred {
                name,
                terms,
                negated: true,
            } => negs.push((
                name.clone(),
                terms.iter().map(&resolve).collect::<Result<Vec<_>, _>>()?,
            )),
            Literal::NotEq(a, b) => {
                if rule.provenance == Provenance::Rule2 {
                    // z_i != x_i over the two atom copies: locate the compared
                    // column via the fresh variable in the second occurrence
                    let z = a.as_var().expect("fresh comparison variable");
                    if let Some(Literal::Atom { terms, .. }) = rule.body.get(1) {
                        agree_col = terms.iter().position(|t| t.as_var() == Some(z));
                    }
                } else {
                    diseqs.push((resolve(a)?, resolve(b)?));
                }
            }
            _ => {}
        }
    }
    if rule.provenance == Provenance::Rule2 && agree_col.is_none() {
        return Err(EngineError::UnboundPredicate(
            "block-agreement rule without a compared column".to_string(),
        ));
    }

    let mut used_cols: Vec<usize> = Vec::new();
    {
        let mut note = |src: &Src| {
            if let Src::DriverCol(c) = src {
                if !used_cols.contains(c) {
                    used_cols.push(*c);
                }
            }
        };
        head.iter().for_each(&mut note);
        for (a, b) in &diseqs {
            note(a);
            note(b);
        }
        for (_, args) in &negs {
            args.iter().for_each(&mut note);
        }
        if let Some(g) = &guard {
            for (_, src) in &g.lookup {
                note(src);
            }
        }
    }
    used_cols.sort_unstable();

    // translate relation columns to projection indices once, so value access
    // is a direct load
    let translate = |src: Src| -> Src {
        match src {
            Src::DriverCol(c) => Src::DriverCol(
                used_cols.binary_search(&c).expect("used column"),
            ),
            other => other,
        }
    };
    let head: Vec<Src> = head.into_iter().map(translate).collect();
    let diseqs: Vec<(Src, Src)> = diseqs
        .into_iter()
        .map(|(a, b)| (translate(a), translate(b)))
        .collect();
    let negs: Vec<(String, Vec<Src>)> = negs
        .into_iter()
        .map(|(name, args)| (name, args.into_iter().map(translate).collect()))
        .collect();
    let guard = guard.map(|g| GuardPlan {
        pred: g.pred,
        lookup: g
            .lookup
            .into_iter()
            .map(|(pos, src)| (pos, translate(src)))
            .collect(),
        row_eq: g.row_eq,
    });

    Ok(Plan {
        relation,
        pattern,
        head,
        diseqs,
        negs,
        guard,
        drv_len: used_cols.len(),
        driver_arity: driver_terms.len(),
        used_cols,
        agree_col,
    })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Val<'a> {
    Sym(Sym),
    Missing(&'a str),
}

impl Plan {
    /// Resolves a source against a work row (driver projection, then the
    /// appended guard row).
    fn value<'a>(&self, src: &'a Src, row: &[Sym]) -> Val<'a> {
        match src {
            Src::DriverCol(idx) => Val::Sym(row[*idx]),
            Src::GuardPos(p) => Val::Sym(row[self.drv_len + p]),
            Src::Const(Some(s), _) => Val::Sym(*s),
            Src::Const(None, text) => Val::Missing(text),
        }
    }

    /// Assembles the tuple for a predicate lookup; None when a constant is
    /// absent from the data (the lookup can never match).
    fn tuple(&self, srcs: &[Src], row: &[Sym]) -> Option<Row> {
        let mut out = Row::with_capacity(srcs.len());
        for src in srcs {
            match self.value(src, row) {
                Val::Sym(s) => out.push(s),
                Val::Missing(_) => return None,
            }
        }
        Some(out)
    }
}

/// Rule 2: one pass per block; a block qualifies when the compared column
/// takes at least two distinct values, and then every pattern-matching tuple
/// in it feeds the head.
fn eval_block_agree(
    plan: &Plan,
    db: &DatabaseInstance,
    idb: &HashMap<String, IdbRel>,
) -> Result<Vec<Row>, EngineError> {
    let col = plan.agree_col.expect("checked during compilation");
    let rel = db
        .relation(&plan.relation)
        .ok_or_else(|| EngineError::UnboundPredicate(plan.relation.clone()))?;
    let mut drv: Vec<Row> = Vec::new();
    for block in rel.blocks().values() {
        if block.len() < 2 {
            continue;
        }
        let first = rel.rows[block[0] as usize][col];
        if block[1..].iter().all(|&r| rel.rows[r as usize][col] == first) {
            continue;
        }
        for &r in block {
            let row = &rel.rows[r as usize];
            if plan.pattern.matches(row) {
                drv.push(plan.used_cols.iter().map(|&c| row[c]).collect());
            }
        }
    }
    finish_pipeline(plan, drv, idb)
}

/// Shared tail of the rule pipeline: deduplicate the driver projections,
/// expand through the grounding predicate, filter disequalities, subtract the
/// negated predicates by sort-merge, and project the head.
fn finish_pipeline(
    plan: &Plan,
    drv: Vec<Row>,
    idb: &HashMap<String, IdbRel>,
) -> Result<Vec<Row>, EngineError> {
    // duplicate driver projections are harmless below: unguarded rules touch
    // each row O(1) times and the head output is deduplicated at finalize;
    // guarded rules deduplicate after the probe sort they need anyway

    // guard expansion: merge driver rows against the grounding rows on the
    // driver-bound guard positions
    let mut work: Vec<WorkRow> = match &plan.guard {
        None => drv
            .into_iter()
            .map(|r| WorkRow::from_slice(&r))
            .collect(),
        Some(g) => {
            let ground = idb
                .get(&g.pred)
                .ok_or_else(|| EngineError::UnboundPredicate(g.pred.clone()))?;
            // probe key per driver row; a row probing an absent constant can
            // never match
            let mut probes: Vec<(Row, Row)> = Vec::with_capacity(drv.len());
            'rows: for row in drv {
                let mut key = Row::with_capacity(g.lookup.len());
                for (_, src) in &g.lookup {
                    match plan.value(src, &row) {
                        Val::Sym(s) => key.push(s),
                        Val::Missing(_) => continue 'rows,
                    }
                }
                probes.push((key, row));
            }
            let lookup_pos: Vec<usize> = g.lookup.iter().map(|&(pos, _)| pos).collect();
            let mut keyed: Vec<(Row, u32)> = ground
                .rows
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    (
                        lookup_pos.iter().map(|&p| row[p]).collect::<Row>(),
                        i as u32,
                    )
                })
                .collect();
            if !keyed.is_sorted() {
                keyed.sort_unstable();
            }

            let mut out: Vec<WorkRow> = Vec::new();
            if keyed.len() <= MERGE_THRESHOLD {
                // cache-resident grounding side: binary-search run per probe,
                // no probe sort needed
                for (key, row) in &probes {
                    let start = keyed.partition_point(|(k, _)| k < key);
                    for (k, gidx) in &keyed[start..] {
                        if k != key {
                            break;
                        }
                        let grow = &ground.rows[*gidx as usize];
                        if g.row_eq.iter().all(|&(a, b)| grow[a] == grow[b]) {
                            let mut w = WorkRow::from_slice(row);
                            w.extend_from_slice(grow);
                            out.push(w);
                        }
                    }
                }
            } else {
                if !probes.is_sorted() {
                    probes.sort_unstable();
                }
                probes.dedup();
                let mut gi = 0usize;
                let mut pi = 0usize;
                while pi < probes.len() && gi < keyed.len() {
                    match probes[pi].0.cmp(&keyed[gi].0) {
                        std::cmp::Ordering::Less => pi += 1,
                        std::cmp::Ordering::Greater => gi += 1,
                        std::cmp::Ordering::Equal => {
                            // one run of equal keys on each side
                            let key = probes[pi].0.clone();
                            let p_end = probes[pi..]
                                .iter()
                                .position(|(k, _)| *k != key)
                                .map_or(probes.len(), |off| pi + off);
                            let g_end = keyed[gi..]
                                .iter()
                                .position(|(k, _)| *k != key)
                                .map_or(keyed.len(), |off| gi + off);
                            for (_, row) in &probes[pi..p_end] {
                                for &(_, gidx) in &keyed[gi..g_end] {
                                    let grow = &ground.rows[gidx as usize];
                                    if g.row_eq.iter().all(|&(a, b)| grow[a] == grow[b]) {
                                        let mut w = WorkRow::from_slice(row);
                                        w.extend_from_slice(grow);
                                        out.push(w);
                                    }
                                }
                            }
                            pi = p_end;
                            gi = g_end;
                        }
                    }
                }
            }
            out
        }
    };

    // disequalities
    work.retain(|row| {
        plan.diseqs
            .iter()
            .all(|(a, b)| plan.value(a, row) != plan.value(b, row))
    });

    // anti-joins against the negated predicates; small targets are probed by
    // binary search, large ones by a sort-merge pass
    const MERGE_THRESHOLD: usize = 1 << 17;
    for (pred, args) in &plan.negs {
        let rel = idb
            .get(pred)
            .ok_or_else(|| EngineError::UnboundPredicate(pred.clone()))?;
        if rel.rows.is_empty() {
            continue; // nothing to subtract
        }
        if rel.rows.len() <= MERGE_THRESHOLD {
            work.retain(|row| match plan.tuple(args, row) {
                None => true, // absent constant never matches
                Some(k) => rel.rows.binary_search(&k).is_err(),
            });
            continue;
        }
        let mut keyed: Vec<(Option<Row>, WorkRow)> = work
            .drain(..)
            .map(|row| (plan.tuple(args, &row), row))
            .collect();
        if !keyed.is_sorted_by(|a, b| a.0 <= b.0) {
            keyed.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        }
        let mut kept: Vec<WorkRow> = Vec::with_capacity(keyed.len());
        let mut ni = 0usize;
        for (key, row) in keyed {
            match key {
                None => kept.push(row), // absent constant never matches
                Some(k) => {
                    while ni < rel.rows.len() && rel.rows[ni] < k {
                        ni += 1;
                    }
                    if ni >= rel.rows.len() || rel.rows[ni] != k {
                        kept.push(row);
                    }
                }
            }
        }
        work = kept;
    }

    // head projection
    let mut out = Vec::with_capacity(work.len());
    'emit: for row in &work {
        let mut tuple = Row::with_capacity(plan.head.len());
        for src in &plan.head {
            match plan.value(src, row) {
                Val::Sym(s) => tuple.push(s),
                Val::Missing(_) => continue 'emit, // head constant absent from the data
            }
        }
        out.push(tuple);
    }
    Ok(out)
}

/// Grounding rules: join the whole body and project the head.
fn eval_ground(rule: &RewriteRule, db: &DatabaseInstance) -> Result<Vec<Row>, EngineError> {
    let atoms: Vec<crate::query::Atom> = rule
        .body
        .iter()
        .filter_map(|l| match l {
            Literal::Atom { relation, terms } => Some(crate::query::Atom {
                relation: relation.clone(),
                terms: terms.clone(),
                key_positions: vec![0],
            }),
            _ => None,
        })
        .collect();
    join_project(&atoms, db, &rule.head_terms)
}
