//! Complete categorical datasets and the sufficient statistics the scores need.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bits::{self, VarSet, MAX_VARS};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CsvOptions {
    pub has_header: bool,
    pub delimiter: u8,
    /// Accept columns with a single observed value. Off by default because such
    /// a column carries no structure; held-out files for prediction need it.
    pub allow_constant: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            has_header: true,
            delimiter: b',',
            allow_constant: false,
        }
    }
}

/// A complete discrete dataset.
///
/// Cells are dense category codes `0..arity`. Each column keeps the original
/// labels so that files can be written back and merged by value.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    names: Vec<String>,
    labels: Vec<Vec<String>>,
    /// Row-major, `len() * n()` codes.
    cells: Vec<u16>,
}

impl Dataset {
    /// Builds a dataset from per-column label lists and coded rows.
    pub fn new(names: Vec<String>, labels: Vec<Vec<String>>, rows: &[Vec<usize>]) -> Result<Self> {
        let n = names.len();
        if labels.len() != n {
            return Err(Error::Validation(format!(
                "{} names but {} label lists",
                n,
                labels.len()
            )));
        }
        let mut cells = Vec::with_capacity(rows.len() * n);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Parse {
                    row: r + 1,
                    msg: format!("expected {n} fields, found {}", row.len()),
                });
            }
            for (c, &v) in row.iter().enumerate() {
                if v >= labels[c].len() {
                    return Err(Error::Validation(format!(
                        "row {}: value {v} out of range for column '{}' with arity {}",
                        r + 1,
                        names[c],
                        labels[c].len()
                    )));
                }
                cells.push(v as u16);
            }
        }
        let data = Dataset {
            names,
            labels,
            cells,
        };
        data.validate_schema(false)?;
        Ok(data)
    }

    /// Builds a dataset whose labels are the decimal codes `"0".."arity-1"`.
    pub fn from_codes(names: Vec<String>, arities: &[usize], rows: &[Vec<usize>]) -> Result<Self> {
        let labels = arities
            .iter()
            .map(|&r| (0..r).map(|v| v.to_string()).collect())
            .collect();
        Dataset::new(names, labels, rows)
    }

    /// Same schema, no rows.
    pub fn empty_like(&self) -> Dataset {
        Dataset {
            names: self.names.clone(),
            labels: self.labels.clone(),
            cells: Vec::new(),
        }
    }

    fn validate_schema(&self, allow_constant: bool) -> Result<()> {
        let n = self.names.len();
        if n == 0 {
            return Err(Error::Validation("dataset has no variables".into()));
        }
        if n > MAX_VARS {
            return Err(Error::Validation(format!(
                "{n} variables exceeds the supported maximum of {MAX_VARS}"
            )));
        }
        let mut seen = HashMap::new();
        for (i, name) in self.names.iter().enumerate() {
            if let Some(j) = seen.insert(name.as_str(), i) {
                return Err(Error::Validation(format!(
                    "duplicate variable name '{name}' in columns {} and {}",
                    j + 1,
                    i + 1
                )));
            }
        }
        for (name, labels) in self.names.iter().zip(&self.labels) {
            if labels.len() < 2 && !allow_constant {
                return Err(Error::Validation(format!(
                    "column '{name}' has {} distinct value(s); at least 2 are required",
                    labels.len()
                )));
            }
            if labels.len() > u16::MAX as usize {
                return Err(Error::Validation(format!(
                    "column '{name}' has too many categories"
                )));
            }
        }
        Ok(())
    }

    pub fn load_csv(path: impl AsRef<Path>, options: CsvOptions) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Dataset::from_csv_reader(file, options)
    }

    /// Parses CSV text. Categories are coded in first-occurrence order per column.
    pub fn from_csv_reader<R: Read>(reader: R, options: CsvOptions) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .delimiter(options.delimiter)
            .flexible(true)
            .from_reader(reader);
        let mut records = rdr.records();

        let mut names: Option<Vec<String>> = None;
        if options.has_header {
            match records.next() {
                Some(rec) => {
                    let rec = rec?;
                    names = Some(rec.iter().map(|s| s.trim().to_string()).collect());
                }
                None => return Err(Error::Validation("empty file".into())),
            }
        }

        let mut labels: Vec<Vec<String>> = Vec::new();
        let mut lookup: Vec<HashMap<String, u16>> = Vec::new();
        let mut cells = Vec::new();
        let mut width = names.as_ref().map(|n| n.len());
        let mut rows = 0usize;
        let first_data_line = if options.has_header { 2 } else { 1 };

        for (idx, rec) in records.enumerate() {
            let rec = rec?;
            let line = rec
                .position()
                .map(|p| p.line() as usize)
                .unwrap_or(idx + first_data_line);
            if rec.len() == 1 && rec.get(0).is_some_and(|s| s.trim().is_empty()) {
                continue;
            }
            let w = *width.get_or_insert(rec.len());
            if rec.len() != w {
                return Err(Error::Parse {
                    row: line,
                    msg: format!("expected {w} fields, found {}", rec.len()),
                });
            }
            if labels.is_empty() {
                labels = vec![Vec::new(); w];
                lookup = vec![HashMap::new(); w];
            }
            for (c, field) in rec.iter().enumerate() {
                let field = field.trim();
                if field.is_empty() {
                    return Err(Error::Parse {
                        row: line,
                        msg: format!("missing value in column {}", c + 1),
                    });
                }
                let code = match lookup[c].get(field) {
                    Some(&code) => code,
                    None => {
                        if labels[c].len() >= u16::MAX as usize {
                            return Err(Error::Validation(format!(
                                "column {} has too many categories",
                                c + 1
                            )));
                        }
                        let code = labels[c].len() as u16;
                        labels[c].push(field.to_string());
                        lookup[c].insert(field.to_string(), code);
                        code
                    }
                };
                cells.push(code);
            }
            rows += 1;
        }
        if rows == 0 {
            return Err(Error::Validation("file contains no data rows".into()));
        }
        let w = width.unwrap_or(0);
        let names = names.unwrap_or_else(|| (0..w).map(|i| format!("X{i}")).collect());
        let data = Dataset {
            names,
            labels,
            cells,
        };
        data.validate_schema(options.allow_constant)?;
        Ok(data)
    }

    /// Writes the dataset back as CSV using the original labels.
    pub fn write_csv<W: Write>(&self, writer: W, options: CsvOptions) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .delimiter(options.delimiter)
            .from_writer(writer);
        if options.has_header {
            wtr.write_record(&self.names)?;
        }
        for r in 0..self.len() {
            wtr.write_record(
                self.row(r)
                    .iter()
                    .enumerate()
                    .map(|(c, &v)| self.labels[c][v as usize].as_str()),
            )?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.names.len()
    }

    /// Number of records.
    pub fn len(&self) -> usize {
        self.cells.len() / self.n()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn arity(&self, var: usize) -> usize {
        self.labels[var].len()
    }

    pub fn arities(&self) -> Vec<usize> {
        self.labels.iter().map(Vec::len).collect()
    }

    pub fn labels(&self, var: usize) -> &[String] {
        &self.labels[var]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[u16] {
        let n = self.n();
        &self.cells[r * n..(r + 1) * n]
    }

    #[inline]
    pub fn value(&self, r: usize, var: usize) -> usize {
        self.cells[r * self.n() + var] as usize
    }

    /// SHA-256 over the schema and every cell; used to key score caches.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.n() as u64).to_le_bytes());
        for (name, labels) in self.names.iter().zip(&self.labels) {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update((labels.len() as u64).to_le_bytes());
        }
        h.update((self.len() as u64).to_le_bytes());
        for &c in &self.cells {
            h.update(c.to_le_bytes());
        }
        let digest = h.finalize();
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        out
    }

    /// Appends `other`'s rows after `self`'s.
    ///
    /// Columns are matched by name and categories by label, so a value that
    /// only occurs in `other` extends that column's category list.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.n() != other.n() {
            return Err(Error::SchemaMismatch(format!(
                "{} variables vs {}",
                self.n(),
                other.n()
            )));
        }
        let column_map: Vec<usize> = self
            .names
            .iter()
            .map(|name| {
                other.index_of(name).ok_or_else(|| {
                    Error::SchemaMismatch(format!("variable '{name}' missing from second dataset"))
                })
            })
            .collect::<Result<_>>()?;

        let mut labels = self.labels.clone();
        // recode[c][other_code] = merged code in column c
        let mut recode: Vec<Vec<u16>> = Vec::with_capacity(self.n());
        for (c, &oc) in column_map.iter().enumerate() {
            let mut map = Vec::with_capacity(other.labels[oc].len());
            for label in &other.labels[oc] {
                let code = match labels[c].iter().position(|l| l == label) {
                    Some(code) => code,
                    None => {
                        labels[c].push(label.clone());
                        labels[c].len() - 1
                    }
                };
                map.push(code as u16);
            }
            recode.push(map);
        }

        let mut cells = Vec::with_capacity(self.cells.len() + other.cells.len());
        cells.extend_from_slice(&self.cells);
        for r in 0..other.len() {
            let row = other.row(r);
            for (c, &oc) in column_map.iter().enumerate() {
                cells.push(recode[c][row[oc] as usize]);
            }
        }
        let data = Dataset {
            names: self.names.clone(),
            labels,
            cells,
        };
        // labels only grow, so no column can become constant here
        data.validate_schema(true)?;
        Ok(data)
    }

    /// Re-expresses this dataset under a wider schema with the same column names,
    /// where `schema`'s label lists extend this dataset's.
    pub fn recode_into(&self, schema: &Dataset) -> Result<Dataset> {
        schema.empty_like().concat(self).and_then(|d| {
            if d.labels != schema.labels {
                Err(Error::SchemaMismatch(
                    "dataset has categories the target schema lacks".into(),
                ))
            } else {
                Ok(d)
            }
        })
    }

    /// Sufficient statistics of `child` given the parent set `parents`.
    pub fn count_table(&self, child: usize, parents: VarSet) -> Result<ContingencyTable> {
        self.check_family(child, parents)?;
        let parent_vars: Vec<usize> = bits::members(parents).collect();
        let mut configs: Vec<ConfigCounts> = Vec::new();
        let mut representative: Vec<usize> = Vec::new();
        self.for_each_config(child, parents, |counts, row| {
            representative.push(row);
            configs.push(ConfigCounts {
                parent_values: Vec::new(),
                total: counts.iter().map(|&c| c as u64).sum(),
                counts: counts.iter().map(|&c| c as u64).collect(),
            });
        });
        for (cfg, row) in configs.iter_mut().zip(representative) {
            cfg.parent_values = parent_vars
                .iter()
                .map(|&p| self.value(row, p) as u16)
                .collect();
        }
        Ok(ContingencyTable {
            child,
            parent_mask: parents,
            child_arity: self.arity(child),
            configs,
        })
    }

    pub(crate) fn check_family(&self, child: usize, parents: VarSet) -> Result<()> {
        if child >= self.n() {
            return Err(Error::contract(format!("child {child} out of range")));
        }
        if bits::contains(parents, child) {
            return Err(Error::contract(format!(
                "child {child} is in its own parent set {parents:#b}"
            )));
        }
        if parents >> self.n() != 0 {
            return Err(Error::contract(format!(
                "parent set {parents:#b} references variables beyond {}",
                self.n()
            )));
        }
        Ok(())
    }

    /// Mixed-radix parent configuration keys, one per row, plus an exclusive
    /// upper bound on the keys. Keys order configurations lexicographically by
    /// parent values in ascending variable order.
    fn config_keys(&self, parents: VarSet) -> (Vec<u64>, u64) {
        let mut keys = vec![0u64; self.len()];
        let mut bound = 1u64;
        for p in bits::members(parents) {
            let r = self.arity(p) as u64;
            if bound.checked_mul(r).is_none() {
                bound = densify(&mut keys);
            }
            for (row, key) in keys.iter_mut().enumerate() {
                *key = *key * r + self.value(row, p) as u64;
            }
            bound *= r;
        }
        (keys, bound)
    }

    /// Calls `f(counts, representative_row)` for each parent configuration present in
    /// the data, in ascending configuration order. `counts[k]` is the number of
    /// rows in that configuration with child state `k`.
    pub(crate) fn for_each_config<F>(&self, child: usize, parents: VarSet, mut f: F)
    where
        F: FnMut(&[u32], usize),
    {
        let rows = self.len();
        if rows == 0 {
            return;
        }
        let r = self.arity(child);
        let (mut keys, mut bound) = self.config_keys(parents);
        let dense_limit = (4 * rows as u64).max(1024);

        if bound.saturating_mul(r as u64) <= dense_limit {
            let mut counts = vec![0u32; bound as usize * r];
            let mut first_row = vec![usize::MAX; bound as usize];
            for (row, &key) in keys.iter().enumerate() {
                counts[key as usize * r + self.value(row, child)] += 1;
                if first_row[key as usize] == usize::MAX {
                    first_row[key as usize] = row;
                }
            }
            for (key, &row) in first_row.iter().enumerate() {
                if row != usize::MAX {
                    f(&counts[key * r..(key + 1) * r], row);
                }
            }
            return;
        }

        if bound.checked_mul(r as u64).is_none() {
            bound = densify(&mut keys);
        }
        debug_assert!(bound.checked_mul(r as u64).is_some());
        let mut compound: Vec<(u64, u32)> = keys
            .iter()
            .enumerate()
            .map(|(row, &key)| (key * r as u64 + self.value(row, child) as u64, row as u32))
            .collect();
        compound.sort_unstable();
        let mut counts = vec![0u32; r];
        let mut i = 0;
        while i < compound.len() {
            let key = compound[i].0 / r as u64;
            let row = compound[i].1 as usize;
            counts.iter_mut().for_each(|c| *c = 0);
            while i < compound.len() && compound[i].0 / r as u64 == key {
                counts[(compound[i].0 % r as u64) as usize] += 1;
                i += 1;
            }
            f(&counts, row);
        }
    }
}

/// Replaces keys by their rank among the distinct keys; returns the new bound.
fn densify(keys: &mut [u64]) -> u64 {
    let mut distinct: Vec<u64> = keys.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    for key in keys.iter_mut() {
        *key = distinct.binary_search(key).unwrap() as u64;
    }
    distinct.len() as u64
}

/// Counts for one observed parent configuration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfigCounts {
    /// Parent values in ascending variable order.
    pub parent_values: Vec<u16>,
    /// `counts[k]` = N_ijk.
    pub counts: Vec<u64>,
    /// N_ij.
    pub total: u64,
}

/// Sparse contingency table: only parent configurations that occur in the data.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ContingencyTable {
    pub child: usize,
    pub parent_mask: VarSet,
    pub child_arity: usize,
    /// Sorted by `parent_values`.
    pub configs: Vec<ConfigCounts>,
}

impl ContingencyTable {
    /// Observed parent configurations.
    pub fn q(&self) -> usize {
        self.configs.len()
    }

    pub fn total(&self) -> u64 {
        self.configs.iter().map(|c| c.total).sum()
    }

    pub fn count(&self, parent_values: &[u16], child_state: usize) -> u64 {
        self.configs
            .binary_search_by(|c| c.parent_values.as_slice().cmp(parent_values))
            .map(|i| self.configs[i].counts[child_state])
            .unwrap_or(0)
    }
}
