//! Worst-case path-query instances. Each binary relation expands
//! `([x] × [y]) ∪ {(u, u) | xy+1 ≤ u ≤ N}`: `x` inconsistent blocks of size
//! `y` joined against the next relation's inconsistent part, plus a consistent
//! diagonal tail padding the relation to exactly `N` tuples.

use serde::{Deserialize, Serialize};

use crate::engine::DatabaseInstance;
use crate::query::parse_schema;

use super::WorkbenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathQuery {
    TwoPath,
    ThreePath,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorstCaseSpec {
    pub query: PathQuery,
    pub a: usize,
    pub b: usize,
    pub c: usize,
    /// Only for the three-atom path.
    pub d: Option<usize>,
    pub n: usize,
}

impl WorstCaseSpec {
    /// Fraction of tuples in inconsistent blocks across the instance.
    pub fn inconsistency_ratio(&self) -> f64 {
        let (a, b, c, n) = (self.a as f64, self.b as f64, self.c as f64, self.n as f64);
        match self.query {
            PathQuery::TwoPath => (a * b + b * c) / (2.0 * n),
            PathQuery::ThreePath => {
                let d = self.d.unwrap_or(0) as f64;
                (a * b + b * c + c * d) / (3.0 * n)
            }
        }
    }
}

/// Rows of `([x] × [y]) ∪ {(u, u) | xy+1 ≤ u ≤ N}`.
pub fn expand_block_relation(x: usize, y: usize, n: usize) -> Vec<(usize, usize)> {
    let mut rows = Vec::with_capacity(n);
    for i in 1..=x {
        for j in 1..=y {
            rows.push((i, j));
        }
    }
    for u in x * y + 1..=n {
        rows.push((u, u));
    }
    rows
}

pub fn gen_worst_case(spec: &WorstCaseSpec) -> Result<DatabaseInstance, WorkbenchError> {
    let mut pairs = vec![("R", spec.a, spec.b), ("S", spec.b, spec.c)];
    match spec.query {
        PathQuery::TwoPath => {
            if spec.d.is_some() {
                return Err(WorkbenchError::InvalidSpec(
                    "parameter d applies to the three-atom path only".into(),
                ));
            }
        }
        PathQuery::ThreePath => {
            let d = spec.d.ok_or_else(|| {
                WorkbenchError::InvalidSpec("three-atom path needs parameter d".into())
            })?;
            pairs.push(("T", spec.c, d));
        }
    }
    for &(rel, x, y) in &pairs {
        if x == 0 || y == 0 {
            return Err(WorkbenchError::InvalidSpec(format!(
                "{rel}: block parameters must be positive"
            )));
        }
        if x * y > spec.n {
            return Err(WorkbenchError::InvalidSpec(format!(
                "{rel}: {x}·{y} exceeds N = {}",
                spec.n
            )));
        }
    }
    let schema_text = match spec.query {
        PathQuery::TwoPath => "R(k*, v)\nS(k*, v)\n",
        PathQuery::ThreePath => "R(k*, v)\nS(k*, v)\nT(k*, v)\n",
    };
    let schema = parse_schema(schema_text).expect("static schema parses");
    let mut db = DatabaseInstance::new(&schema);
    for (rel, x, y) in pairs {
        for (k, v) in expand_block_relation(x, y, spec.n) {
            db.insert(rel, &[&k.to_string(), &v.to_string()]);
        }
        debug_assert_eq!(db.relation(rel).unwrap().row_count(), spec.n);
    }
    db.canonicalize();
    Ok(db)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_expansion_matches_the_formula() {
        let rows = expand_block_relation(2, 2, 5);
        assert_eq!(rows, vec![(1, 1), (1, 2), (2, 1), (2, 2), (5, 5)]);
    }

    #[test]
    fn ratio_of_the_reference_point() {
        let spec = WorstCaseSpec {
            query: PathQuery::TwoPath,
            a: 120,
            b: 800,
            c: 800,
            d: None,
            n: 1_000_000,
        };
        assert!((spec.inconsistency_ratio() - 0.368).abs() < 1e-9);
    }

    #[test]
    fn block_shape_of_the_generated_instance() {
        let spec = WorstCaseSpec {
            query: PathQuery::TwoPath,
            a: 3,
            b: 4,
            c: 2,
            d: None,
            n: 20,
        };
        let db = gen_worst_case(&spec).unwrap();
        let r = db.relation("R").unwrap();
        assert_eq!(r.row_count(), 20);
        // keys 1..3 have 4 tuples each, the diagonal tail is consistent
        let mut widths: Vec<usize> = r.blocks().values().map(Vec::len).collect();
        widths.sort_unstable();
        assert_eq!(widths.iter().filter(|&&w| w == 4).count(), 3);
        assert_eq!(widths.iter().filter(|&&w| w == 1).count(), 8);
        let s = db.relation("S").unwrap();
        assert_eq!(s.blocks().values().filter(|b| b.len() == 2).count(), 4);
    }

    #[test]
    fn shape_violations_rejected() {
        let spec = WorstCaseSpec {
            query: PathQuery::TwoPath,
            a: 10,
            b: 10,
            c: 1,
            d: None,
            n: 50,
        };
        assert!(matches!(
            gen_worst_case(&spec),
            Err(WorkbenchError::InvalidSpec(_))
        ));
        let spec = WorstCaseSpec {
            query: PathQuery::ThreePath,
            a: 2,
            b: 2,
            c: 2,
            d: None,
            n: 50,
        };
        assert!(matches!(
            gen_worst_case(&spec),
            Err(WorkbenchError::InvalidSpec(_))
        ));
    }
}
