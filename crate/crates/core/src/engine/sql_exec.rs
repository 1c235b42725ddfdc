//! Interpreter for the SQL subset the rewriting emits: WITH-clause common
//! table expressions, SELECT [DISTINCT] with qualified columns and literals,
//! comma FROM lists, INNER/LEFT OUTER JOIN … ON, WHERE with =, <>, IS NULL,
//! AND/OR, correlated NOT EXISTS, GROUP BY … HAVING COUNT(*) > n, derived
//! tables and UNION ALL. Parsing is done by the `sqlparser` crate; this module
//! only evaluates the tree. NULLs arise from LEFT JOIN misses; comparisons
//! with NULL are false.

use std::collections::HashMap;

use sqlparser::ast::{
    BinaryOperator, Expr, FunctionArg, FunctionArgExpr, FunctionArguments, GroupByExpr, Join,
    JoinConstraint, JoinOperator, Query, Select, SelectItem, SetExpr, SetQuantifier, SetOperator,
    Statement, TableFactor, TableWithJoins, Value,
};
use sqlparser::dialect::GenericDialect;
use sqlparser::parser::Parser;

use super::{DatabaseInstance, EngineError};

type Row = Vec<Option<String>>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SqlResult {
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

pub fn execute_sql(sql: &str, db: &DatabaseInstance) -> Result<SqlResult, EngineError> {
    let statements = Parser::parse_sql(&GenericDialect {}, sql)
        .map_err(|e| EngineError::Sql(e.to_string()))?;
    let [statement] = statements.as_slice() else {
        return Err(EngineError::Sql(format!(
            "expected one statement, found {}",
            statements.len()
        )));
    };
    let Statement::Query(query) = statement else {
        return Err(EngineError::Sql("expected a query".to_string()));
    };
    let mut env = Env {
        db,
        ctes: HashMap::new(),
    };
    eval_query(query, &mut env, None)
}

struct Env<'a> {
    db: &'a DatabaseInstance,
    ctes: HashMap<String, SqlResult>,
}

/// One named tuple source visible to expressions; scopes chain outward for
/// correlated subqueries.
struct Scope<'a> {
    parts: Vec<(String, &'a [String], &'a Row)>,
    outer: Option<&'a Scope<'a>>,
}

impl Scope<'_> {
    fn resolve(&self, qualifier: Option<&str>, column: &str) -> Option<Option<String>> {
        for (name, cols, row) in &self.parts {
            if qualifier.is_some_and(|q| q != name) {
                continue;
            }
            if let Some(i) = cols.iter().position(|c| c == column) {
                return Some(row[i].clone());
            }
        }
        self.outer.and_then(|o| o.resolve(qualifier, column))
    }
}

fn eval_query(
    query: &Query,
    env: &mut Env,
    outer: Option<&Scope>,
) -> Result<SqlResult, EngineError> {
    if let Some(with) = &query.with {
        for cte in &with.cte_tables {
            let mut result = eval_query(&cte.query, env, outer)?;
            let declared: Vec<String> = cte
                .alias
                .columns
                .iter()
                .map(|c| c.value.clone())
                .collect();
            if !declared.is_empty() {
                if declared.len() != result.columns.len() {
                    return Err(EngineError::Sql(format!(
                        "CTE {} declares {} columns, query yields {}",
                        cte.alias.name.value,
                        declared.len(),
                        result.columns.len()
                    )));
                }
                result.columns = declared;
            }
            env.ctes.insert(cte.alias.name.value.clone(), result);
        }
    }
    eval_set_expr(&query.body, env, outer)
}

fn eval_set_expr(
    body: &SetExpr,
    env: &mut Env,
    outer: Option<&Scope>,
) -> Result<SqlResult, EngineError> {
    match body {
        SetExpr::Select(select) => eval_select(select, env, outer),
        SetExpr::Query(query) => eval_query(query, env, outer),
        SetExpr::SetOperation {
            op: SetOperator::Union,
            set_quantifier: SetQuantifier::All,
            left,
            right,
        } => {
            let mut l = eval_set_expr(left, env, outer)?;
            let r = eval_set_expr(right, env, outer)?;
            if l.columns.len() != r.columns.len() {
                return Err(EngineError::Sql("UNION ALL arity mismatch".to_string()));
            }
            l.rows.extend(r.rows);
            Ok(l)
        }
        other => Err(EngineError::Sql(format!("unsupported set expression: {other}"))),
    }
}

/// A source bound in FROM: its visible name and materialized rows.
struct Source {
    name: String,
    columns: Vec<String>,
    rows: Vec<Row>,
}

fn factor_source(
    factor: &TableFactor,
    env: &mut Env,
    outer: Option<&Scope>,
) -> Result<Source, EngineError> {
    match factor {
        TableFactor::Table { name, alias, .. } => {
            let table = name.to_string();
            let (columns, rows) = if let Some(cte) = env.ctes.get(&table) {
                (cte.columns.clone(), cte.rows.clone())
            } else if let Some(rel) = env.db.relation(&table) {
                let rows = rel
                    .rows
                    .iter()
                    .map(|r| {
                        env.db
                            .externalize(r)
                            .into_iter()
                            .map(Some)
                            .collect::<Row>()
                    })
                    .collect();
                (rel.columns.clone(), rows)
            } else {
                return Err(EngineError::Sql(format!("unknown table {table}")));
            };
            let visible = alias
                .as_ref()
                .map(|a| a.name.value.clone())
                .unwrap_or(table);
            Ok(Source {
                name: visible,
                columns,
                rows,
            })
        }
        TableFactor::Derived {
            subquery, alias, ..
        } => {
            let result = eval_query(subquery, env, outer)?;
            let name = alias
                .as_ref()
                .map(|a| a.name.value.clone())
                .ok_or_else(|| EngineError::Sql("derived table needs an alias".to_string()))?;
            Ok(Source {
                name,
                columns: result.columns,
                rows: result.rows,
            })
        }
        other => Err(EngineError::Sql(format!("unsupported table factor: {other}"))),
    }
}

/// Combined FROM state: named parts and the cross/joined row combinations.
struct FromRows {
    parts: Vec<(String, Vec<String>)>,
    rows: Vec<Vec<Row>>,
}

fn eval_from(
    from: &[TableWithJoins],
    env: &mut Env,
    outer: Option<&Scope>,
) -> Result<FromRows, EngineError> {
    let mut acc = FromRows {
        parts: Vec::new(),
        rows: vec![Vec::new()],
    };
    for twj in from {
        let base = factor_source(&twj.relation, env, outer)?;
        // cross join with what we have so far
        let mut rows: Vec<Vec<Row>> = Vec::new();
        for combo in &acc.rows {
            for row in &base.rows {
                let mut next = combo.clone();
                next.push(row.clone());
                rows.push(next);
            }
        }
        acc.parts.push((base.name, base.columns));
        acc.rows = rows;
        for join in &twj.joins {
            join_in_place(&mut acc, join, env, outer)?;
        }
    }
    Ok(acc)
}

fn join_in_place(
    acc: &mut FromRows,
    join: &Join,
    env: &mut Env,
    outer: Option<&Scope>,
) -> Result<(), EngineError> {
    let (constraint, left_outer) = match &join.join_operator {
        JoinOperator::Inner(c) => (c, false),
        JoinOperator::LeftOuter(c) => (c, true),
        other => {
            return Err(EngineError::Sql(format!("unsupported join: {other:?}")));
        }
    };
    let JoinConstraint::On(on) = constraint else {
        return Err(EngineError::Sql("joins must use ON".to_string()));
    };
    let right = factor_source(&join.relation, env, outer)?;
    acc.parts.push((right.name, right.columns.clone()));
    let mut rows: Vec<Vec<Row>> = Vec::new();
    let null_row: Row = vec![None; right.columns.len()];
    for combo in &acc.rows {
        let mut matched = false;
        for row in &right.rows {
            let mut candidate = combo.clone();
            candidate.push(row.clone());
            let scope = scope_of(&acc.parts, &candidate, outer);
            if eval_pred(on, &scope, env, None)? {
                rows.push(candidate);
                matched = true;
            }
        }
        if left_outer && !matched {
            let mut candidate = combo.clone();
            candidate.push(null_row.clone());
            rows.push(candidate);
        }
    }
    acc.rows = rows;
    Ok(())
}

fn scope_of<'a>(
    parts: &'a [(String, Vec<String>)],
    combo: &'a [Row],
    outer: Option<&'a Scope<'a>>,
) -> Scope<'a> {
    Scope {
        parts: parts
            .iter()
            .zip(combo)
            .map(|((name, cols), row)| (name.clone(), cols.as_slice(), row))
            .collect(),
        outer,
    }
}

fn eval_select(
    select: &Select,
    env: &mut Env,
    outer: Option<&Scope>,
) -> Result<SqlResult, EngineError> {
    let from = eval_from(&select.from, env, outer)?;

    let mut filtered: Vec<&Vec<Row>> = Vec::new();
    for combo in &from.rows {
        let keep = match &select.selection {
            Some(cond) => {
                let scope = scope_of(&from.parts, combo, outer);
                eval_pred(cond, &scope, env, None)?
            }
            None => true,
        };
        if keep {
            filtered.push(combo);
        }
    }

    let group_exprs: &[Expr] = match &select.group_by {
        GroupByExpr::Expressions(exprs, _) => exprs,
        GroupByExpr::All(_) => {
            return Err(EngineError::Sql("GROUP BY ALL unsupported".to_string()))
        }
    };

    // expand `*` to one qualified identifier per visible column
    let mut items: Vec<(String, Expr)> = Vec::new();
    for item in &select.projection {
        match item {
            SelectItem::UnnamedExpr(Expr::Identifier(id)) => {
                items.push((id.value.clone(), Expr::Identifier(id.clone())));
            }
            SelectItem::UnnamedExpr(Expr::CompoundIdentifier(ids)) => {
                let name = ids.last().map(|i| i.value.clone()).unwrap_or_default();
                items.push((name, Expr::CompoundIdentifier(ids.clone())));
            }
            SelectItem::UnnamedExpr(e) => items.push(("value".to_string(), e.clone())),
            SelectItem::ExprWithAlias { expr, alias } => {
                items.push((alias.value.clone(), expr.clone()));
            }
            SelectItem::Wildcard(_) => {
                for (part, cols) in &from.parts {
                    for col in cols {
                        items.push((
                            col.clone(),
                            Expr::CompoundIdentifier(vec![
                                sqlparser::ast::Ident::new(part.clone()),
                                sqlparser::ast::Ident::new(col.clone()),
                            ]),
                        ));
                    }
                }
            }
            other => {
                return Err(EngineError::Sql(format!(
                    "unsupported select item: {other}"
                )))
            }
        }
    }
    let columns: Vec<String> = items.iter().map(|(name, _)| name.clone()).collect();

    let mut rows: Vec<Row> = Vec::new();
    if group_exprs.is_empty() {
        for combo in &filtered {
            let scope = scope_of(&from.parts, combo, outer);
            let mut row = Vec::with_capacity(items.len());
            for (_, expr) in &items {
                row.push(eval_value(expr, &scope, env)?);
            }
            rows.push(row);
        }
    } else {
        // group rows by the GROUP BY values, then filter groups with HAVING
        let mut groups: HashMap<Vec<Option<String>>, (usize, &Vec<Row>)> = HashMap::new();
        let mut order: Vec<Vec<Option<String>>> = Vec::new();
        for combo in &filtered {
            let scope = scope_of(&from.parts, combo, outer);
            let mut key = Vec::with_capacity(group_exprs.len());
            for e in group_exprs {
                key.push(eval_value(e, &scope, env)?);
            }
            match groups.get_mut(&key) {
                Some((count, _)) => *count += 1,
                None => {
                    groups.insert(key.clone(), (1, combo));
                    order.push(key);
                }
            }
        }
        for key in order {
            let (count, representative) = &groups[&key];
            let scope = scope_of(&from.parts, representative, outer);
            if let Some(having) = &select.having {
                if !eval_pred(having, &scope, env, Some(*count))? {
                    continue;
                }
            }
            let mut row = Vec::with_capacity(items.len());
            for (_, expr) in &items {
                row.push(eval_value(expr, &scope, env)?);
            }
            rows.push(row);
        }
    }

    if select.distinct.is_some() {
        let mut seen = std::collections::HashSet::new();
        rows.retain(|r| seen.insert(r.clone()));
    }
    Ok(SqlResult { columns, rows })
}

fn eval_pred(
    expr: &Expr,
    scope: &Scope,
    env: &mut Env,
    group_count: Option<usize>,
) -> Result<bool, EngineError> {
    match expr {
        Expr::Nested(inner) => eval_pred(inner, scope, env, group_count),
        Expr::BinaryOp { left, op, right } => match op {
            BinaryOperator::And => Ok(eval_pred(left, scope, env, group_count)?
                && eval_pred(right, scope, env, group_count)?),
            BinaryOperator::Or => Ok(eval_pred(left, scope, env, group_count)?
                || eval_pred(right, scope, env, group_count)?),
            BinaryOperator::Eq | BinaryOperator::NotEq => {
                let l = eval_value(left, scope, env)?;
                let r = eval_value(right, scope, env)?;
                Ok(match (l, r) {
                    (Some(a), Some(b)) => {
                        if *op == BinaryOperator::Eq {
                            a == b
                        } else {
                            a != b
                        }
                    }
                    _ => false, // comparisons with NULL do not hold
                })
            }
            BinaryOperator::Gt => {
                let l = eval_count_or_value(left, scope, env, group_count)?;
                let r = eval_count_or_value(right, scope, env, group_count)?;
                match (l, r) {
                    (Some(a), Some(b)) => {
                        let (a, b) = (
                            a.parse::<i64>().map_err(|_| non_numeric(&a))?,
                            b.parse::<i64>().map_err(|_| non_numeric(&b))?,
                        );
                        Ok(a > b)
                    }
                    _ => Ok(false),
                }
            }
            other => Err(EngineError::Sql(format!("unsupported operator {other}"))),
        },
        Expr::IsNull(inner) => Ok(eval_value(inner, scope, env)?.is_none()),
        Expr::IsNotNull(inner) => Ok(eval_value(inner, scope, env)?.is_some()),
        Expr::Exists { subquery, negated } => {
            let result = eval_query(subquery, env, Some(scope))?;
            Ok(result.rows.is_empty() == *negated)
        }
        other => Err(EngineError::Sql(format!("unsupported predicate {other}"))),
    }
}

fn non_numeric(v: &str) -> EngineError {
    EngineError::Sql(format!("non-numeric comparison operand {v:?}"))
}

fn eval_count_or_value(
    expr: &Expr,
    scope: &Scope,
    env: &mut Env,
    group_count: Option<usize>,
) -> Result<Option<String>, EngineError> {
    if let Expr::Function(f) = expr {
        let is_count = f.name.to_string().eq_ignore_ascii_case("count");
        let is_star = matches!(
            &f.args,
            FunctionArguments::List(list)
                if matches!(
                    list.args.as_slice(),
                    [FunctionArg::Unnamed(FunctionArgExpr::Wildcard)]
                )
        );
        if is_count && is_star {
            let count = group_count
                .ok_or_else(|| EngineError::Sql("COUNT(*) outside HAVING".to_string()))?;
            return Ok(Some(count.to_string()));
        }
        return Err(EngineError::Sql(format!("unsupported function {}", f.name)));
    }
    eval_value(expr, scope, env)
}

fn eval_value(
    expr: &Expr,
    scope: &Scope,
    _env: &mut Env,
) -> Result<Option<String>, EngineError> {
    match expr {
        Expr::Identifier(id) => scope
            .resolve(None, &id.value)
            .ok_or_else(|| EngineError::Sql(format!("unknown column {}", id.value))),
        Expr::CompoundIdentifier(ids) => {
            let [table, column] = ids.as_slice() else {
                return Err(EngineError::Sql(format!(
                    "unsupported identifier {expr}"
                )));
            };
            scope
                .resolve(Some(&table.value), &column.value)
                .ok_or_else(|| {
                    EngineError::Sql(format!("unknown column {}.{}", table.value, column.value))
                })
        }
        Expr::Value(Value::SingleQuotedString(s)) => Ok(Some(s.clone())),
        Expr::Value(Value::Number(n, _)) => Ok(Some(n.clone())),
        Expr::Nested(inner) => eval_value(inner, scope, _env),
        other => Err(EngineError::Sql(format!("unsupported expression {other}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::company_db;
    use super::*;

    #[test]
    fn basic_select_where() {
        let (_, db) = company_db();
        let r = execute_sql(
            "SELECT Manager.office_city FROM Manager WHERE Manager.start_year <> '2020'",
            &db,
        )
        .unwrap();
        assert_eq!(r.rows, vec![vec![Some("Boston".to_string())]]);
    }

    #[test]
    fn group_by_having_over_distinct_projection() {
        let (_, db) = company_db();
        let r = execute_sql(
            "SELECT office_city FROM (SELECT DISTINCT office_city, contact_id FROM Contact) t \
             GROUP BY office_city HAVING COUNT(*) > 1",
            &db,
        )
        .unwrap();
        let mut got: Vec<String> = r.rows.iter().map(|r| r[0].clone().unwrap()).collect();
        got.sort();
        assert_eq!(got, vec!["Boston", "LA"]);
    }

    #[test]
    fn left_join_null_and_not_exists() {
        let (_, db) = company_db();
        let r = execute_sql(
            "WITH bad (office_city) AS (\
               SELECT office_city FROM Manager WHERE Manager.start_year <> '2020'\
             )\
             SELECT Contact.office_city FROM Contact \
             LEFT OUTER JOIN bad ON bad.office_city = Contact.office_city \
             WHERE bad.office_city IS NULL AND NOT EXISTS (\
               SELECT * FROM Manager WHERE Manager.office_city = Contact.office_city \
               AND Manager.start_year = '2021')",
            &db,
        )
        .unwrap();
        // offices without a pre-2020 manager entry and without a 2021 start
        let mut got: Vec<String> = r.rows.iter().map(|r| r[0].clone().unwrap()).collect();
        got.sort();
        got.dedup();
        assert_eq!(got, vec!["Chicago", "LA", "New York"]);
    }

    #[test]
    fn union_all_and_distinct_literal() {
        let (_, db) = company_db();
        let r = execute_sql(
            "SELECT DISTINCT 1 FROM Contact UNION ALL SELECT DISTINCT 1 FROM Manager",
            &db,
        )
        .unwrap();
        assert_eq!(r.rows.len(), 2);
    }
}
