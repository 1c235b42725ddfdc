//! In-memory relational store and evaluation.
//!
//! Relations hold string tuples interned to 32-bit symbols, partitioned into
//! primary-key blocks at load time. [`eval_program`] runs a rewriting with
//! hash-based rule plans; [`eval_query`] is the semi-join baseline computing
//! possible answers; [`consistent_answers`] dispatches between the Boolean,
//! full-query and general paths; [`oracle_consistent_answers`] enumerates
//! every repair as the ground truth.

mod csv_io;
mod cqa;
mod eval;
mod repairs;
mod sql_exec;
mod yannakakis;

use std::collections::BTreeMap;

use rustc_hash::{FxHashMap, FxHashSet};
use smallvec::SmallVec;

use thiserror::Error;

use crate::attack::AttackError;
use crate::query::{QueryError, RelationSchema, Schema};
use crate::rewrite::RewriteError;

pub use cqa::{consistent_answers, consistent_answers_with, surviving_block_keys, Strategy};
pub use csv_io::{load_csv, write_csv};
pub use eval::{eval_program, eval_program_tables};
pub use repairs::{good_keys, oracle_consistent_answers, RepairIterator, REPAIR_GUARD};
pub use sql_exec::execute_sql;
pub use yannakakis::eval_query;

pub type Sym = u32;

/// One stored tuple; tuples up to arity four live inline.
pub type Row = SmallVec<[Sym; 4]>;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("missing data file for relation {relation}: {path}")]
    MissingFile { relation: String, path: String },
    #[error("relation {relation}: header {got:?} does not match schema attributes {expected:?}")]
    HeaderMismatch {
        relation: String,
        expected: Vec<String>,
        got: Vec<String>,
    },
    #[error("relation {relation}: row {row} has {got} fields, expected {expected}")]
    RaggedRow {
        relation: String,
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("query is not acyclic")]
    NotAcyclicQuery,
    #[error("query admits no pair-pruning join tree")]
    NoPpjt,
    #[error("too many repairs to enumerate (more than 2^20)")]
    TooManyRepairs,
    #[error("program references undefined predicate {0}")]
    UnboundPredicate(String),
    #[error("disconnected non-Boolean queries are not supported")]
    DisconnectedNonBoolean,
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("csv: {0}")]
    Csv(#[from] ::csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("sql: {0}")]
    Sql(String),
}

#[derive(Debug, Clone, Default)]
pub struct SymbolTable {
    names: Vec<String>,
    map: FxHashMap<String, Sym>,
}

impl SymbolTable {
    pub fn intern(&mut self, value: &str) -> Sym {
        if let Some(&s) = self.map.get(value) {
            return s;
        }
        let s = self.names.len() as Sym;
        self.names.push(value.to_string());
        self.map.insert(value.to_string(), s);
        s
    }

    pub fn lookup(&self, value: &str) -> Option<Sym> {
        self.map.get(value).copied()
    }

    pub fn name(&self, s: Sym) -> &str {
        &self.names[s as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Rows of one relation plus the block index over its key columns. Rows are a
/// set: duplicate tuples collapse at insert.
#[derive(Debug, Clone)]
pub struct StoredRelation {
    pub name: String,
    pub columns: Vec<String>,
    pub key_cols: Vec<usize>,
    pub rows: Vec<Row>,
    blocks: FxHashMap<Row, Vec<u32>>,
    dedup: FxHashSet<Row>,
}

impl StoredRelation {
    fn new(decl: &RelationSchema) -> Self {
        StoredRelation {
            name: decl.name.clone(),
            columns: decl.attributes.clone(),
            key_cols: decl.key_positions.clone(),
            rows: Vec::new(),
            blocks: FxHashMap::default(),
            dedup: FxHashSet::default(),
        }
    }

    pub fn key_of(&self, row: &[Sym]) -> Row {
        self.key_cols.iter().map(|&c| row[c]).collect()
    }

    /// Inserts a tuple; returns false when it was already present.
    pub fn insert(&mut self, row: Row) -> bool {
        debug_assert_eq!(row.len(), self.columns.len());
        if !self.dedup.insert(row.clone()) {
            return false;
        }
        let id = self.rows.len() as u32;
        let key = self.key_of(&row);
        self.blocks.entry(key).or_default().push(id);
        self.rows.push(row);
        true
    }

    pub fn contains(&self, row: &[Sym]) -> bool {
        self.dedup.contains(row)
    }

    pub fn blocks(&self) -> &FxHashMap<Row, Vec<u32>> {
        &self.blocks
    }

    pub fn block(&self, key: &[Sym]) -> &[u32] {
        self.blocks
            .get(&Row::from_slice(key))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_consistent(&self) -> bool {
        self.blocks.values().all(|b| b.len() == 1)
    }

    /// Sorts the stored rows and rebuilds the block index. Scans over a
    /// canonicalized relation emit ordered projections, which the evaluation
    /// pipelines detect and exploit.
    pub fn canonicalize(&mut self) {
        if self.rows.is_sorted() {
            return;
        }
        self.rows.sort_unstable();
        self.blocks.clear();
        for (id, row) in self.rows.iter().enumerate() {
            let key = self.key_cols.iter().map(|&c| row[c]).collect();
            self.blocks.entry(key).or_default().push(id as u32);
        }
    }
}

/// Named relations over a shared symbol table.
#[derive(Debug, Clone, Default)]
pub struct DatabaseInstance {
    pub symbols: SymbolTable,
    pub relations: BTreeMap<String, StoredRelation>,
}

impl DatabaseInstance {
    pub fn new(schema: &Schema) -> Self {
        let mut db = DatabaseInstance::default();
        for decl in schema.relations() {
            db.relations
                .insert(decl.name.clone(), StoredRelation::new(decl));
        }
        db
    }

    pub fn insert(&mut self, relation: &str, values: &[&str]) -> bool {
        let row: Row = values.iter().map(|v| self.symbols.intern(v)).collect();
        self.relations
            .get_mut(relation)
            .unwrap_or_else(|| panic!("relation {relation} not declared"))
            .insert(row)
    }

    pub fn relation(&self, name: &str) -> Option<&StoredRelation> {
        self.relations.get(name)
    }

    /// Total number of tuples across relations.
    pub fn total_rows(&self) -> usize {
        self.relations.values().map(StoredRelation::row_count).sum()
    }

    pub fn is_consistent(&self) -> bool {
        self.relations.values().all(StoredRelation::is_consistent)
    }

    /// Number of repairs: the product of all block sizes (saturating).
    pub fn repair_count(&self) -> u128 {
        let mut count: u128 = 1;
        for rel in self.relations.values() {
            for block in rel.blocks.values() {
                count = count.saturating_mul(block.len() as u128);
            }
        }
        count
    }

    /// Sorts every relation's storage; see [`StoredRelation::canonicalize`].
    pub fn canonicalize(&mut self) {
        for rel in self.relations.values_mut() {
            rel.canonicalize();
        }
    }

    /// The consistent sub-instance: every block with two or more tuples
    /// removed.
    pub fn consistent_subinstance(&self) -> DatabaseInstance {
        let mut out = DatabaseInstance {
            symbols: self.symbols.clone(),
            relations: BTreeMap::new(),
        };
        for (name, rel) in &self.relations {
            let mut copy = StoredRelation {
                name: rel.name.clone(),
                columns: rel.columns.clone(),
                key_cols: rel.key_cols.clone(),
                rows: Vec::new(),
                blocks: FxHashMap::default(),
                dedup: FxHashSet::default(),
            };
            for block in rel.blocks.values() {
                if block.len() == 1 {
                    copy.insert(rel.rows[block[0] as usize].clone());
                }
            }
            out.relations.insert(name.clone(), copy);
        }
        out
    }

    pub fn externalize(&self, row: &[Sym]) -> Vec<String> {
        row.iter().map(|&s| self.symbols.name(s).to_string()).collect()
    }
}

/// Set-semantics answers held as a sorted, deduplicated tuple list; arity 0
/// encodes Boolean results (empty = false, the singleton empty tuple = true).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerSet {
    pub columns: Vec<String>,
    tuples: Vec<Vec<String>>,
}

impl AnswerSet {
    pub fn empty(columns: Vec<String>) -> Self {
        AnswerSet {
            columns,
            tuples: Vec::new(),
        }
    }

    pub fn from_tuples(columns: Vec<String>, mut tuples: Vec<Vec<String>>) -> Self {
        tuples.sort_unstable();
        tuples.dedup();
        AnswerSet { columns, tuples }
    }

    pub fn from_bool(value: bool) -> Self {
        let mut a = AnswerSet::empty(Vec::new());
        if value {
            a.tuples.push(Vec::new());
        }
        a
    }

    pub fn arity(&self) -> usize {
        self.columns.len()
    }

    pub fn is_boolean(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn as_bool(&self) -> bool {
        !self.tuples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn contains(&self, tuple: &[String]) -> bool {
        self.tuples.binary_search_by(|t| t.as_slice().cmp(tuple)).is_ok()
    }

    pub fn insert(&mut self, tuple: Vec<String>) {
        if let Err(pos) = self.tuples.binary_search(&tuple) {
            self.tuples.insert(pos, tuple);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<String>> {
        self.tuples.iter()
    }

    pub fn is_subset_of(&self, other: &AnswerSet) -> bool {
        self.tuples.iter().all(|t| other.contains(t))
    }

    /// CSV text: header row of column names, then one row per tuple; Boolean
    /// answers render as `true`/`false`.
    pub fn render(&self) -> String {
        if self.is_boolean() {
            return format!("{}\n", self.as_bool());
        }
        let mut out = self.columns.join(",");
        out.push('\n');
        for t in &self.tuples {
            out.push_str(&t.join(","));
            out.push('\n');
        }
        out
    }
}
