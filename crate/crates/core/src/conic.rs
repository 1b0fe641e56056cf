//! Canonical cone program:
//!
//! ```text
//!     minimize    c'x + offset
//!     subject to  A x = b
//!                 x in  Free^f x Nonneg^p x SOC(d1) x ... x SOC(dk)
//! ```
//!
//! Variables are partitioned into ordered cone segments; a second-order cone
//! of dimension d constrains `x0 >= ||(x1..x_{d-1})||_2`. Inequalities are
//! expressed upstream by adding nonnegative slack variables. A name map
//! records what each column means so solutions can be recovered.

use std::collections::HashMap;
use std::fmt::Write as _;

/// One segment of the variable partition, in column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeSeg {
    Free(usize),
    Nonneg(usize),
    SecondOrder(usize),
}

impl ConeSeg {
    pub fn dim(&self) -> usize {
        match *self {
            ConeSeg::Free(d) | ConeSeg::Nonneg(d) | ConeSeg::SecondOrder(d) => d,
        }
    }
}

/// Sparse equality rows in triplet form, kept row-major for readability.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    /// (row, col, value), sorted by (row, col), one entry per coordinate.
    pub entries: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicProblem {
    /// Linear objective coefficients, one per column.
    pub objective: Vec<f64>,
    /// Constant added to the objective value (fixed costs).
    pub offset: f64,
    pub equalities: Triplets,
    pub rhs: Vec<f64>,
    pub segments: Vec<ConeSeg>,
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl ConicProblem {
    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rhs.len()
    }

    /// Column index of a named variable.
    pub fn var(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn var_name(&self, col: usize) -> &str {
        &self.names[col]
    }

    /// Checks the structural invariants: segment dims sum to the column
    /// count, SOC segments have dim >= 2, entries are sorted and in range.
    pub fn check(&self) -> Result<(), String> {
        let n: usize = self.segments.iter().map(|s| s.dim()).sum();
        if n != self.n_vars() {
            return Err(format!(
                "segment dims sum to {n} but there are {} columns",
                self.n_vars()
            ));
        }
        for s in &self.segments {
            if s.dim() == 0 {
                return Err("empty cone segment".into());
            }
            if let ConeSeg::SecondOrder(d) = s {
                if *d < 2 {
                    return Err(format!("second-order segment of dim {d} < 2"));
                }
            }
        }
        if self.names.len() != self.n_vars() {
            return Err("one name per column required".into());
        }
        let mut prev = None;
        for &(r, c, v) in &self.equalities.entries {
            if r >= self.n_rows() || c >= self.n_vars() {
                return Err(format!("entry ({r},{c}) out of range"));
            }
            if !v.is_finite() {
                return Err(format!("entry ({r},{c}) is not finite"));
            }
            if let Some(p) = prev {
                if (r, c) <= p {
                    return Err("entries must be strictly sorted by (row, col)".into());
                }
            }
            prev = Some((r, c));
        }
        Ok(())
    }

    /// Human-readable dump: objective, cone layout, then one line per
    /// equality row. Stable format, suitable for snapshotting.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "conic problem: {} vars, {} rows", self.n_vars(), self.n_rows());
        let _ = writeln!(out, "offset {}", self.offset);
        for s in &self.segments {
            let _ = match s {
                ConeSeg::Free(d) => writeln!(out, "segment free {d}"),
                ConeSeg::Nonneg(d) => writeln!(out, "segment nonneg {d}"),
                ConeSeg::SecondOrder(d) => writeln!(out, "segment soc {d}"),
            };
        }
        let _ = writeln!(out, "minimize:");
        for (j, c) in self.objective.iter().enumerate() {
            if *c != 0.0 {
                let _ = writeln!(out, "  {:+} {}", c, self.names[j]);
            }
        }
        let mut row_start = 0;
        for r in 0..self.n_rows() {
            let _ = write!(out, "row {r}:");
            while row_start < self.equalities.entries.len()
                && self.equalities.entries[row_start].0 == r
            {
                let (_, c, v) = self.equalities.entries[row_start];
                let _ = write!(out, " {:+}*{}", v, self.names[c]);
                row_start += 1;
            }
            let _ = writeln!(out, " = {}", self.rhs[r]);
        }
        out
    }
}

/// Column tag used while a problem is under construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tag {
    Free,
    Nonneg,
    /// (block ordinal, position inside the block)
    Soc(usize, usize),
}

/// Handle to a variable being built. Opaque to callers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

/// Incremental builder. Variables may be declared in any order; on `finish`
/// columns are arranged Free, then Nonneg, then the SOC blocks in creation
/// order, which yields the canonical segment layout.
#[derive(Debug, Default)]
pub struct ProblemBuilder {
    tags: Vec<Tag>,
    names: Vec<String>,
    n_soc_blocks: usize,
    rows: Vec<(Vec<(VarId, f64)>, f64)>,
    obj: Vec<(VarId, f64)>,
    offset: f64,
}

impl ProblemBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn free(&mut self, name: impl Into<String>) -> VarId {
        self.push_var(name.into(), Tag::Free)
    }

    pub fn nonneg(&mut self, name: impl Into<String>) -> VarId {
        self.push_var(name.into(), Tag::Nonneg)
    }

    /// Declares a second-order cone block; `names[0]` is the head.
    pub fn soc(&mut self, names: Vec<String>) -> Vec<VarId> {
        assert!(names.len() >= 2, "second-order block needs dim >= 2");
        let block = self.n_soc_blocks;
        self.n_soc_blocks += 1;
        names
            .into_iter()
            .enumerate()
            .map(|(pos, n)| self.push_var(n, Tag::Soc(block, pos)))
            .collect()
    }

    fn push_var(&mut self, name: String, tag: Tag) -> VarId {
        let id = VarId(self.tags.len());
        self.tags.push(tag);
        self.names.push(name);
        id
    }

    /// Adds an equality row `sum coeff * var = rhs`. Repeated variables in
    /// one row are summed.
    pub fn eq(&mut self, coeffs: Vec<(VarId, f64)>, rhs: f64) {
        self.rows.push((coeffs, rhs));
    }

    /// Adds to the objective coefficient of `var`.
    pub fn obj(&mut self, var: VarId, coeff: f64) {
        self.obj.push((var, coeff));
    }

    pub fn add_offset(&mut self, value: f64) {
        self.offset += value;
    }

    pub fn finish(self) -> ConicProblem {
        let n = self.tags.len();
        // Final column order: free, nonneg, then SOC blocks by ordinal.
        let mut cols: Vec<usize> = (0..n).collect();
        cols.sort_by_key(|&v| match self.tags[v] {
            Tag::Free => (0usize, 0usize, v),
            Tag::Nonneg => (1, 0, v),
            Tag::Soc(b, p) => (2, b, p),
        });
        let mut col_of = vec![0usize; n];
        for (new, &old) in cols.iter().enumerate() {
            col_of[old] = new;
        }

        let mut segments = Vec::new();
        let n_free = self.tags.iter().filter(|t| **t == Tag::Free).count();
        let n_nonneg = self.tags.iter().filter(|t| **t == Tag::Nonneg).count();
        if n_free > 0 {
            segments.push(ConeSeg::Free(n_free));
        }
        if n_nonneg > 0 {
            segments.push(ConeSeg::Nonneg(n_nonneg));
        }
        let mut soc_dims = vec![0usize; self.n_soc_blocks];
        for t in &self.tags {
            if let Tag::Soc(b, _) = t {
                soc_dims[*b] += 1;
            }
        }
        for d in soc_dims {
            segments.push(ConeSeg::SecondOrder(d));
        }

        let mut objective = vec![0.0; n];
        for (v, c) in self.obj {
            objective[col_of[v.0]] += c;
        }

        let mut entries = Vec::new();
        let mut rhs = Vec::with_capacity(self.rows.len());
        for (r, (coeffs, b)) in self.rows.into_iter().enumerate() {
            let mut this_row: Vec<(usize, f64)> = coeffs
                .into_iter()
                .map(|(v, c)| (col_of[v.0], c))
                .collect();
            this_row.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(this_row.len());
            for (c, v) in this_row {
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => merged.push((c, v)),
                }
            }
            for (c, v) in merged {
                if v != 0.0 {
                    entries.push((r, c, v));
                }
            }
            rhs.push(b);
        }

        let mut names = vec![String::new(); n];
        for (old, name) in self.names.into_iter().enumerate() {
            names[col_of[old]] = name;
        }
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();

        let problem = ConicProblem {
            objective,
            offset: self.offset,
            equalities: Triplets {
                nrows: rhs.len(),
                ncols: n,
                entries,
            },
            rhs,
            segments,
            names,
            index,
        };
        debug_assert_eq!(problem.check(), Ok(()));
        problem
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_orders_segments_and_remaps_rows() {
        let mut b = ProblemBuilder::new();
        // Declared out of order on purpose.
        let s = b.nonneg("s");
        let x = b.free("x");
        let soc = b.soc(vec!["h".into(), "t".into()]);
        b.eq(vec![(x, 1.0), (s, 2.0), (soc[0], -1.0)], 3.0);
        b.obj(x, 1.0);
        b.obj(x, 0.5);
        let p = b.finish();
        assert_eq!(
            p.segments,
            vec![
                ConeSeg::Free(1),
                ConeSeg::Nonneg(1),
                ConeSeg::SecondOrder(2)
            ]
        );
        assert_eq!(p.var("x"), Some(0));
        assert_eq!(p.var("s"), Some(1));
        assert_eq!(p.var("h"), Some(2));
        assert_eq!(p.objective[0], 1.5);
        assert_eq!(
            p.equalities.entries,
            vec![(0, 0, 1.0), (0, 1, 2.0), (0, 2, -1.0)]
        );
        assert_eq!(p.check(), Ok(()));
    }

    #[test]
    fn duplicate_coefficients_merge_and_zeros_drop() {
        let mut b = ProblemBuilder::new();
        let x = b.free("x");
        let y = b.free("y");
        b.eq(vec![(x, 1.0), (x, -1.0), (y, 2.0)], 0.0);
        let p = b.finish();
        assert_eq!(p.equalities.entries, vec![(0, 1, 2.0)]);
    }

    #[test]
    fn dump_is_stable_and_named() {
        let mut b = ProblemBuilder::new();
        let x = b.free("x");
        let s = b.nonneg("slack");
        b.eq(vec![(x, 1.0), (s, 1.0)], 4.0);
        b.obj(x, 2.0);
        b.add_offset(1.0);
        let p = b.finish();
        let d = p.dump();
        assert!(d.contains("segment free 1"));
        assert!(d.contains("segment nonneg 1"));
        assert!(d.contains("+2 x"));
        assert!(d.contains("row 0: +1*x +1*slack = 4"));
        assert!(d.contains("offset 1"));
    }
}
