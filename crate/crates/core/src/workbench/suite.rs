//! The fixed query suite: the seven synthetic-workload queries (composite key
//! on R8), the worked Boolean and non-Boolean examples over the Company
//! schema, the two-atom projection example, the acyclic query without a
//! pair-pruning join tree, and the two path queries used by the worst-case
//! study.

use crate::query::{parse_query, parse_schema, ConjunctiveQuery, Schema};

#[derive(Debug, Clone)]
pub struct Fixture {
    pub id: &'static str,
    pub query_text: &'static str,
    pub query: ConjunctiveQuery,
    pub schema: Schema,
    pub schema_text: &'static str,
}

pub const COMPANY_SCHEMA: &str = "\
Employee(employee_id*, office_city, wfh_city)
Manager(office_city*, manager_id, start_year)
Contact(office_city*, contact_id)
";

pub const SYNTHETIC_SCHEMA: &str = "\
R1(c1*, c2, c3)
R2(c1*, c2, c3)
R3(c1*, c2, c3)
R4(c1*, c2, c3)
R6(c1*, c2, c3)
R7(c1*, c2, c3)
R8(c1*, c2*, c3)
R9(c1*, c2, c3)
R10(c1*, c2, c3)
";

pub const COMPOSITE_SCHEMA: &str = "\
R(k1*, k2*, v)
S(k1*, k2*, v)
T(k1*, v)
";

pub const PATH_SCHEMA: &str = "\
R(k*, v)
S(k*, v)
T(k*, v)
";

const FIXTURES: &[(&str, &str, &str)] = &[
    ("q1", "q1(z) :- R1(x, y, z), R3(y, v, w).", SYNTHETIC_SCHEMA),
    ("q2", "q2(z, w) :- R1(x, y, z), R2(y, v, w).", SYNTHETIC_SCHEMA),
    (
        "q3",
        "q3(z) :- R1(x, y, z), R2(y, v, w), R7(v, u, d).",
        SYNTHETIC_SCHEMA,
    ),
    (
        "q4",
        "q4(z, d) :- R1(x, y, z), R2(y, v, w), R7(v, u, d).",
        SYNTHETIC_SCHEMA,
    ),
    ("q5", "q5(z) :- R1(x, y, z), R8(y, v, w).", SYNTHETIC_SCHEMA),
    (
        "q6",
        "q6(z) :- R1(x, y, z), R6(t, y, w), R9(x, y, d).",
        SYNTHETIC_SCHEMA,
    ),
    (
        "q7",
        "q7(z) :- R3(x, y, z), R4(y, x, w), R10(x, y, d).",
        SYNTHETIC_SCHEMA,
    ),
    (
        "qex",
        "q() :- Employee(x, y, z), Manager(y, x, '2020'), Contact(y, x).",
        COMPANY_SCHEMA,
    ),
    (
        "qnex",
        "q(w) :- Employee(x, y, z), Manager(y, x, w), Contact(y, x).",
        COMPANY_SCHEMA,
    ),
    (
        "ex3",
        "q(x) :- Employee(x, y, z), Manager(y, w, '2020').",
        COMPANY_SCHEMA,
    ),
    (
        "noppjt",
        "q() :- R(x, w, y), S(y, w, z), T(w, z).",
        COMPOSITE_SCHEMA,
    ),
    ("2path", "q(x) :- R(x, y), S(y, z).", PATH_SCHEMA),
    ("3path", "q(x) :- R(x, y), S(y, z), T(z, w).", PATH_SCHEMA),
];

/// All thirteen fixtures, parsed and schema-bound.
pub fn suite() -> Vec<Fixture> {
    FIXTURES
        .iter()
        .map(|&(id, query_text, schema_text)| {
            let schema = parse_schema(schema_text).expect("fixture schemas parse");
            let query = parse_query(query_text, &schema)
                .expect("fixture queries parse")
                .query;
            Fixture {
                id,
                query_text,
                query,
                schema,
                schema_text,
            }
        })
        .collect()
}

pub fn fixture(id: &str) -> Option<Fixture> {
    suite().into_iter().find(|f| f.id == id)
}
