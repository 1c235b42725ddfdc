//! Query-specific synthetic instances: a consistent core whose joined columns
//! draw from a shared pool sized four times the per-relation distinct count
//! (so either side of a join matches roughly a quarter of the time), plus
//! inconsistency injected into `inBlockNum = inRatio·rSize/bSize` randomly
//! chosen blocks, `bSize − 1` extra tuples each. Deterministic under the seed.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::engine::DatabaseInstance;
use crate::query::{ConjunctiveQuery, Schema};

use super::{fixture, WorkbenchError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// One of the suite query ids (q1 … q7).
    pub query_id: String,
    /// Tuples per relation in the generated instance.
    pub rsize: usize,
    /// Fraction of tuples living in inconsistent blocks.
    pub inratio: f64,
    /// Tuples per inconsistent block.
    pub bsize: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelationStats {
    pub relation: String,
    pub rows: usize,
    pub blocks: usize,
    pub inconsistent_blocks: usize,
    pub max_block_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticManifest {
    pub spec: SyntheticSpec,
    pub relations: Vec<RelationStats>,
}

struct ColumnKind {
    /// Join variable name when the column's variable occurs in another atom.
    pool: Option<String>,
    key: bool,
}

pub fn gen_synthetic(
    spec: &SyntheticSpec,
) -> Result<(DatabaseInstance, SyntheticManifest), WorkbenchError> {
    let fixture = fixture(&spec.query_id)
        .ok_or_else(|| WorkbenchError::InvalidSpec(format!("unknown query {}", spec.query_id)))?;
    if spec.rsize == 0 {
        return Err(WorkbenchError::InvalidSpec("rSize must be positive".into()));
    }
    if spec.bsize < 2 {
        return Err(WorkbenchError::InvalidSpec("bSize must be at least 2".into()));
    }
    if !(0.0..=1.0).contains(&spec.inratio) {
        return Err(WorkbenchError::InvalidSpec(
            "inRatio must lie in [0, 1]".into(),
        ));
    }
    let exact = spec.inratio * spec.rsize as f64 / spec.bsize as f64;
    let in_block_num = exact.round() as usize;
    if (exact - in_block_num as f64).abs() > 1e-6 {
        return Err(WorkbenchError::InvalidSpec(format!(
            "inRatio·rSize/bSize = {exact} is not integral"
        )));
    }
    let core_size = spec
        .rsize
        .checked_sub(in_block_num * (spec.bsize - 1))
        .filter(|&c| c >= in_block_num && c > 0)
        .ok_or_else(|| {
            WorkbenchError::InvalidSpec(
                "inconsistency parameters leave no room for the consistent core".into(),
            )
        })?;

    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let mut db = generated_instance_schema(&fixture.schema, &fixture.query);
    let pool_size = 4 * core_size;

    // count variable occurrences across atoms to find join variables
    let mut occurrences: BTreeMap<&str, usize> = BTreeMap::new();
    for atom in &fixture.query.body {
        for v in atom.vars() {
            *occurrences.entry(v).or_default() += 1;
        }
    }

    for atom in &fixture.query.body {
        let kinds: Vec<ColumnKind> = atom
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| ColumnKind {
                pool: t.as_var().filter(|v| occurrences[v] > 1).map(str::to_string),
                key: atom.key_positions.contains(&i),
            })
            .collect();
        let rows = generate_relation(&kinds, core_size, pool_size, spec, &mut rng)?;
        let in_rows = inject_inconsistency(&rows, &kinds, in_block_num, spec, pool_size, core_size, &mut rng)?;
        for row in rows.iter().chain(&in_rows) {
            let values: Vec<&str> = row.iter().map(String::as_str).collect();
            db.insert(&atom.relation, &values);
        }
        let stored = db.relation(&atom.relation).unwrap();
        debug_assert_eq!(stored.row_count(), spec.rsize);
    }

    db.canonicalize();
    let relations = fixture
        .query
        .body
        .iter()
        .map(|atom| {
            let rel = db.relation(&atom.relation).unwrap();
            RelationStats {
                relation: atom.relation.clone(),
                rows: rel.row_count(),
                blocks: rel.block_count(),
                inconsistent_blocks: rel.blocks().values().filter(|b| b.len() > 1).count(),
                max_block_size: rel.blocks().values().map(Vec::len).max().unwrap_or(0),
            }
        })
        .collect();
    Ok((
        db,
        SyntheticManifest {
            spec: spec.clone(),
            relations,
        },
    ))
}

/// Instance containing only the relations the query uses.
fn generated_instance_schema(schema: &Schema, q: &ConjunctiveQuery) -> DatabaseInstance {
    let mut pruned = Schema::new();
    for atom in &q.body {
        let decl = schema.relation(&atom.relation).expect("schema covers query");
        let attrs: Vec<&str> = decl.attributes.iter().map(String::as_str).collect();
        pruned
            .add_relation(&decl.name, &attrs, &decl.key_positions)
            .expect("declarations are valid");
    }
    DatabaseInstance::new(&pruned)
}

fn generate_relation(
    kinds: &[ColumnKind],
    core_size: usize,
    pool_size: usize,
    spec: &SyntheticSpec,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<Vec<String>>, WorkbenchError> {
    let key_cols: Vec<usize> = kinds
        .iter()
        .enumerate()
        .filter(|(_, k)| k.key)
        .map(|(i, _)| i)
        .collect();
    let joined_keys = key_cols.iter().filter(|&&i| kinds[i].pool.is_some()).count();

    // a single joined key column samples the pool without replacement; serial
    // columns make the key unique on their own
    let mut single_joined_key: Vec<String> = Vec::new();
    if joined_keys == key_cols.len() && key_cols.len() == 1 {
        let mut pool: Vec<usize> = (1..=pool_size).collect();
        pool.shuffle(rng);
        single_joined_key = pool[..core_size].iter().map(|v| v.to_string()).collect();
    }

    let mut rows: Vec<Vec<String>> = Vec::with_capacity(core_size);
    let mut seen_keys: HashSet<Vec<String>> = HashSet::new();
    let mut attempts = 0usize;
    while rows.len() < core_size {
        attempts += 1;
        if attempts > 100 * core_size + 1000 {
            return Err(WorkbenchError::InvalidSpec(
                "could not draw enough distinct keys".into(),
            ));
        }
        let serial = rows.len() + 1;
        let row: Vec<String> = kinds
            .iter()
            .enumerate()
            .map(|(i, kind)| draw_value(kind, i, serial, &single_joined_key, pool_size, spec, rng))
            .collect();
        let key: Vec<String> = key_cols.iter().map(|&c| row[c].clone()).collect();
        if !seen_keys.insert(key) {
            continue;
        }
        rows.push(row);
    }
    Ok(rows)
}

fn draw_value(
    kind: &ColumnKind,
    col: usize,
    serial: usize,
    single_joined_key: &[String],
    pool_size: usize,
    spec: &SyntheticSpec,
    rng: &mut ChaCha12Rng,
) -> String {
    let _ = col;
    match (&kind.pool, kind.key) {
        (Some(_), true) if !single_joined_key.is_empty() => {
            single_joined_key[serial - 1].clone()
        }
        (Some(_), _) => rng.gen_range(1..=pool_size).to_string(),
        (None, true) => serial.to_string(),
        (None, false) => {
            let top = (spec.rsize / 10).max(1);
            rng.gen_range(1..=top).to_string()
        }
    }
}

fn inject_inconsistency(
    core: &[Vec<String>],
    kinds: &[ColumnKind],
    in_block_num: usize,
    spec: &SyntheticSpec,
    pool_size: usize,
    core_size: usize,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<Vec<String>>, WorkbenchError> {
    if in_block_num == 0 {
        return Ok(Vec::new());
    }
    let mut indices: Vec<usize> = (0..core.len()).collect();
    indices.shuffle(rng);
    let chosen = &indices[..in_block_num];
    let mut extra = Vec::with_capacity(in_block_num * (spec.bsize - 1));
    for &idx in chosen {
        let base = &core[idx];
        let mut block: BTreeSet<Vec<String>> = BTreeSet::new();
        block.insert(base.clone());
        let mut attempts = 0usize;
        while block.len() < spec.bsize {
            attempts += 1;
            if attempts > 1000 * spec.bsize {
                return Err(WorkbenchError::InvalidSpec(
                    "value space too small to fill inconsistent blocks".into(),
                ));
            }
            let row: Vec<String> = kinds
                .iter()
                .enumerate()
                .map(|(i, kind)| {
                    if kind.key {
                        base[i].clone()
                    } else {
                        draw_value(kind, i, core_size + 1, &[], pool_size, spec, rng)
                    }
                })
                .collect();
            if block.insert(row.clone()) {
                extra.push(row);
            }
        }
    }
    Ok(extra)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_block_statistics_match_the_formula() {
        let spec = SyntheticSpec {
            query_id: "q1".into(),
            rsize: 1000,
            inratio: 0.1,
            bsize: 2,
            seed: 7,
        };
        let (db, manifest) = gen_synthetic(&spec).unwrap();
        for stats in &manifest.relations {
            assert_eq!(stats.rows, 1000);
            assert_eq!(stats.inconsistent_blocks, 50);
            assert_eq!(stats.max_block_size, 2);
            assert_eq!(stats.blocks, 950);
        }
        assert!(!db.is_consistent());
    }

    #[test]
    fn zero_inconsistency_is_consistent() {
        let spec = SyntheticSpec {
            query_id: "q5".into(),
            rsize: 200,
            inratio: 0.0,
            bsize: 2,
            seed: 3,
        };
        let (db, _) = gen_synthetic(&spec).unwrap();
        assert!(db.is_consistent());
        assert_eq!(db.relation("R8").unwrap().row_count(), 200);
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = SyntheticSpec {
            query_id: "q6".into(),
            rsize: 120,
            inratio: 0.2,
            bsize: 3,
            seed: 99,
        };
        let (a, _) = gen_synthetic(&spec).unwrap();
        let (b, _) = gen_synthetic(&spec).unwrap();
        for rel in ["R1", "R6", "R9"] {
            let ra = a.relation(rel).unwrap();
            let rb = b.relation(rel).unwrap();
            let rows_a: Vec<Vec<String>> = ra.rows.iter().map(|r| a.externalize(r)).collect();
            let rows_b: Vec<Vec<String>> = rb.rows.iter().map(|r| b.externalize(r)).collect();
            assert_eq!(rows_a, rows_b);
        }
    }

    #[test]
    fn non_integral_block_count_rejected() {
        let spec = SyntheticSpec {
            query_id: "q1".into(),
            rsize: 1000,
            inratio: 0.1,
            bsize: 3,
            seed: 7,
        };
        assert!(matches!(
            gen_synthetic(&spec),
            Err(WorkbenchError::InvalidSpec(_))
        ));
    }

    #[test]
    fn oracle_scale_instances_stay_small() {
        let spec = SyntheticSpec {
            query_id: "q1".into(),
            rsize: 30,
            inratio: 0.2,
            bsize: 3,
            seed: 11,
        };
        let (db, _) = gen_synthetic(&spec).unwrap();
        assert_eq!(db.relation("R1").unwrap().row_count(), 30);
        assert!(db.repair_count() <= crate::engine::REPAIR_GUARD);
    }
}
