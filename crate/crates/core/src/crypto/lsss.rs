//! Linear secret sharing from monotone formulas (Lewko–Waters construction).
//!
//! Every matrix entry is in `{-1, 0, 1}`. A satisfying attribute set always
//! has a reconstruction vector with all coefficients equal to one, found by
//! walking the formula tree, so no linear solve is needed at decryption.

use std::collections::BTreeSet;

use super::policy::Formula;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShareMatrix {
    rows: Vec<Vec<i8>>,
    labels: Vec<String>,
    cols: usize,
}

impl ShareMatrix {
    pub fn from_formula(f: &Formula) -> Self {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut counter = 1usize;
        build(f, vec![1], &mut counter, &mut rows, &mut labels);
        for r in rows.iter_mut() {
            r.resize(counter, 0);
        }
        ShareMatrix {
            rows,
            labels,
            cols: counter,
        }
    }

    pub fn rows(&self) -> &[Vec<i8>] {
        &self.rows
    }

    /// Attribute mapped to each row.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn build(
    f: &Formula,
    v: Vec<i8>,
    counter: &mut usize,
    rows: &mut Vec<Vec<i8>>,
    labels: &mut Vec<String>,
) {
    match f {
        Formula::Attr(a) => {
            rows.push(v);
            labels.push(a.clone());
        }
        Formula::Or(cs) => {
            for c in cs {
                build(c, v.clone(), counter, rows, labels);
            }
        }
        Formula::And(cs) => {
            // AND(c1, c2, ..., ck) is split as AND(c1, AND(c2, ..., ck)).
            let mut cur = v;
            for (k, c) in cs.iter().enumerate() {
                if k + 1 == cs.len() {
                    build(c, cur, counter, rows, labels);
                    break;
                }
                *counter += 1;
                let mut left = cur;
                left.resize(*counter, 0);
                left[*counter - 1] = 1;
                let mut right = vec![0i8; *counter];
                right[*counter - 1] = -1;
                build(c, left, counter, rows, labels);
                cur = right;
            }
        }
    }
}

/// Rows whose sum is `(1, 0, ..., 0)`, using only rows labelled with
/// attributes in `attrs`; `None` iff the formula is not satisfied.
///
/// Under an OR gate the satisfied child with the fewest rows is chosen,
/// earlier children winning ties.
pub fn reconstruction_rows(f: &Formula, attrs: &BTreeSet<String>) -> Option<Vec<usize>> {
    fn go(f: &Formula, attrs: &BTreeSet<String>, offset: usize) -> Option<Vec<usize>> {
        match f {
            Formula::Attr(a) => attrs.contains(a).then(|| vec![offset]),
            Formula::Or(cs) => {
                let mut best: Option<Vec<usize>> = None;
                let mut off = offset;
                for c in cs {
                    if let Some(rows) = go(c, attrs, off) {
                        if best.as_ref().is_none_or(|b| rows.len() < b.len()) {
                            best = Some(rows);
                        }
                    }
                    off += c.leaf_count();
                }
                best
            }
            Formula::And(cs) => {
                let mut out = Vec::new();
                let mut off = offset;
                for c in cs {
                    out.extend(go(c, attrs, off)?);
                    off += c.leaf_count();
                }
                Some(out)
            }
        }
    }
    go(f, attrs, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ark_bls12_381::Fr;
    use ark_ff::{Field, One, Zero};

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn to_fr(x: i8) -> Fr {
        if x < 0 {
            -Fr::from((-x) as u64)
        } else {
            Fr::from(x as u64)
        }
    }

    /// Independent check: is (1,0,..,0) in the row span of the selected
    /// rows? Plain Gaussian elimination over the scalar field.
    fn target_in_span(rows: &[Vec<i8>], cols: usize) -> bool {
        // Solve M^T w = e1 by eliminating the augmented matrix [M^T | e1].
        let m = rows.len();
        let mut a: Vec<Vec<Fr>> = (0..cols)
            .map(|c| {
                let mut r: Vec<Fr> = rows.iter().map(|row| to_fr(row[c])).collect();
                r.push(if c == 0 { Fr::one() } else { Fr::zero() });
                r
            })
            .collect();
        let mut pivot_row = 0;
        for col in 0..m {
            let Some(p) = (pivot_row..cols).find(|&r| !a[r][col].is_zero()) else {
                continue;
            };
            a.swap(pivot_row, p);
            let inv = a[pivot_row][col].inverse().unwrap();
            for x in a[pivot_row].iter_mut() {
                *x *= inv;
            }
            for r in 0..cols {
                if r != pivot_row && !a[r][col].is_zero() {
                    let factor = a[r][col];
                    let pr = a[pivot_row].clone();
                    for (x, y) in a[r].iter_mut().zip(pr) {
                        *x -= factor * y;
                    }
                }
            }
            pivot_row += 1;
        }
        // Inconsistent iff some zero row has a non-zero right-hand side.
        a.iter()
            .all(|r| !(r[..m].iter().all(Fr::is_zero) && !r[m].is_zero()))
    }

    #[test]
    fn and_or_shapes() {
        let f = Formula::parse("A AND B").unwrap();
        let m = ShareMatrix::from_formula(&f);
        assert_eq!(m.rows(), &[vec![1, 1], vec![0, -1]]);
        assert_eq!(m.labels(), &["A".to_string(), "B".to_string()]);

        let f = Formula::parse("A OR B").unwrap();
        let m = ShareMatrix::from_formula(&f);
        assert_eq!(m.rows(), &[vec![1], vec![1]]);
    }

    #[test]
    fn reconstruction_agrees_with_span_oracle_exhaustively() {
        let formulas = [
            "(A AND B) OR (C AND D AND E)",
            "A AND (B OR C) AND (D OR (E AND F))",
            "(A OR B) AND (A OR C)",
            "A OR B OR C",
            "A AND B AND C AND D",
        ];
        let universe = ["A", "B", "C", "D", "E", "F"];
        for s in formulas {
            let f = Formula::parse(s).unwrap();
            let m = ShareMatrix::from_formula(&f);
            for mask in 0u32..64 {
                let attrs: BTreeSet<String> = universe
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, a)| a.to_string())
                    .collect();
                let owned: Vec<Vec<i8>> = m
                    .rows()
                    .iter()
                    .zip(m.labels())
                    .filter(|(_, l)| attrs.contains(*l))
                    .map(|(r, _)| r.clone())
                    .collect();
                let expected = f.evaluate(&attrs);
                assert_eq!(
                    target_in_span(&owned, m.cols()),
                    expected,
                    "{s} / {attrs:?}"
                );
                match reconstruction_rows(&f, &attrs) {
                    Some(sel) => {
                        assert!(expected);
                        let mut sum = vec![0i32; m.cols()];
                        for &r in &sel {
                            assert!(attrs.contains(&m.labels()[r]));
                            for (acc, x) in sum.iter_mut().zip(&m.rows()[r]) {
                                *acc += *x as i32;
                            }
                        }
                        let mut e1 = vec![0; m.cols()];
                        e1[0] = 1;
                        assert_eq!(sum, e1, "{s} / {attrs:?}");
                    }
                    None => assert!(!expected),
                }
            }
        }
    }

    #[test]
    fn or_prefers_smaller_branch() {
        let f = Formula::parse("(A AND B AND C) OR D").unwrap();
        let rows = reconstruction_rows(&f, &set(&["A", "B", "C", "D"])).unwrap();
        assert_eq!(rows.len(), 1);
    }
}
