//! Shared generators for the integration suites: random self-join-free
//! queries over small schemas and random small instances with bounded block
//! sizes, all deterministic under explicit seeds.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use lincqa::engine::DatabaseInstance;
use lincqa::hypergraph::gyo_join_tree;
use lincqa::query::{parse_query, parse_schema, ConjunctiveQuery, Schema};

pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Small value alphabet shared by all columns so joins hit often; includes the
/// constant used by the Company-schema fixtures.
pub const ALPHABET: [&str; 4] = ["1", "2", "3", "2020"];

/// A random self-join-free Boolean query over relations A..D with arities
/// 2..=3 and a random key prefix. May be cyclic or disconnected.
pub fn random_boolean_query(rng: &mut ChaCha12Rng, max_atoms: usize) -> (Schema, ConjunctiveQuery) {
    let names = ["A", "B", "C", "D", "E", "F"];
    let vars = ["v0", "v1", "v2", "v3", "v4", "v5"];
    let n = rng.gen_range(1..=max_atoms);
    let mut schema_text = String::new();
    let mut body = Vec::new();
    for name in names.iter().take(n) {
        let arity = rng.gen_range(2..=3);
        let key_len = rng.gen_range(1..=arity.min(2));
        let mut line = format!("{name}(");
        for i in 0..arity {
            if i > 0 {
                line.push_str(", ");
            }
            line.push_str(&format!("a{i}"));
            if i < key_len {
                line.push('*');
            }
        }
        line.push_str(")\n");
        schema_text.push_str(&line);
        let terms: Vec<&str> = (0..arity)
            .map(|_| vars[rng.gen_range(0..vars.len())])
            .collect();
        body.push(format!("{name}({})", terms.join(", ")));
    }
    let text = format!("q() :- {}.", body.join(", "));
    let schema = parse_schema(&schema_text).expect("generated schema parses");
    let query = parse_query(&text, &schema).expect("generated query parses").query;
    (schema, query)
}

/// Random acyclic connected self-join-free Boolean query, by rejection.
pub fn random_acyclic_query(rng: &mut ChaCha12Rng, max_atoms: usize) -> (Schema, ConjunctiveQuery) {
    loop {
        let (schema, q) = random_boolean_query(rng, max_atoms);
        if q.is_connected() && gyo_join_tree(&q).is_ok() {
            return (schema, q);
        }
    }
}

/// Random instance over the relations a query uses: a handful of blocks per
/// relation, block sizes at most three, values from the shared alphabet.
pub fn random_instance(
    rng: &mut ChaCha12Rng,
    schema: &Schema,
    q: &ConjunctiveQuery,
) -> DatabaseInstance {
    let mut db = DatabaseInstance::new(schema);
    let mut relations: Vec<&str> = q.body.iter().map(|a| a.relation.as_str()).collect();
    relations.sort_unstable();
    relations.dedup();
    for name in relations {
        let decl = schema.relation(name).expect("schema covers the query");
        let arity = decl.arity();
        let base_rows = rng.gen_range(0..=5);
        let mut keys: Vec<Vec<&str>> = Vec::new();
        for _ in 0..base_rows {
            let row: Vec<&str> = (0..arity)
                .map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())])
                .collect();
            let key: Vec<&str> = decl.key_positions.iter().map(|&p| row[p]).collect();
            if db.insert(name, &row) {
                keys.push(key);
            }
        }
        // widen a couple of random blocks up to size three
        if !keys.is_empty() {
            for _ in 0..rng.gen_range(0..=2) {
                let key = keys.choose(rng).unwrap();
                for _ in 0..rng.gen_range(1..=2) {
                    let mut row: Vec<&str> = (0..arity)
                        .map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())])
                        .collect();
                    for (slot, &p) in decl.key_positions.iter().enumerate() {
                        row[p] = key[slot];
                    }
                    let key_syms: Vec<u32> = key
                        .iter()
                        .map(|v| db.symbols.lookup(v).expect("interned at insert"))
                        .collect();
                    if db.relation(name).unwrap().block(&key_syms).len() >= 3 {
                        break;
                    }
                    db.insert(name, &row);
                }
            }
        }
    }
    db
}
