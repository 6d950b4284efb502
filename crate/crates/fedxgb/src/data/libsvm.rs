//! Text parser for the sparse `label idx:val idx:val ...` format.
//!
//! Labels `-1`/`+1` map to classes 0/1; non-negative integer labels pass
//! through unchanged for multiclass data. Feature indices are 1-based in
//! the text and 0-based in memory.

use super::DataError;
use crate::gbt::Instance;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    pub instances: Vec<Instance>,
    pub labels: Vec<u32>,
    /// Highest feature index seen, plus one.
    pub n_features: u32,
}

pub fn parse(text: &str) -> Result<SparseRows, DataError> {
    let mut instances = Vec::new();
    let mut labels = Vec::new();
    let mut n_features = 0u32;

    for (lineno, raw_line) in text.lines().enumerate() {
        let line = lineno + 1;
        // Strip trailing comments, as some distributions carry them.
        let row = raw_line.split('#').next().unwrap_or("").trim();
        if row.is_empty() {
            continue;
        }
        let mut parts = row.split_ascii_whitespace();
        let label_tok = parts.next().expect("non-empty row has a first token");
        labels.push(parse_label(label_tok, line)?);

        let mut feats: Vec<(u32, f64)> = Vec::new();
        let mut last_idx: Option<u32> = None;
        for tok in parts {
            let (idx_s, val_s) = tok.split_once(':').ok_or_else(|| DataError::Malformed {
                line,
                reason: format!("expected idx:value, got {tok:?}"),
            })?;
            let one_based: u32 = idx_s.parse().map_err(|_| DataError::Malformed {
                line,
                reason: format!("bad feature index {idx_s:?}"),
            })?;
            if one_based == 0 {
                return Err(DataError::Malformed {
                    line,
                    reason: "feature indices start at 1".into(),
                });
            }
            let idx = one_based - 1;
            if last_idx.is_some_and(|prev| idx <= prev) {
                return Err(DataError::Malformed {
                    line,
                    reason: format!("feature index {one_based} out of order"),
                });
            }
            last_idx = Some(idx);
            let val: f64 = val_s.parse().map_err(|_| DataError::Malformed {
                line,
                reason: format!("bad feature value {val_s:?}"),
            })?;
            n_features = n_features.max(idx + 1);
            feats.push((idx, val));
        }
        instances.push(Instance { features: feats });
    }
    Ok(SparseRows {
        instances,
        labels,
        n_features,
    })
}

fn parse_label(tok: &str, line: usize) -> Result<u32, DataError> {
    let v: f64 = tok.parse().map_err(|_| DataError::Malformed {
        line,
        reason: format!("bad label {tok:?}"),
    })?;
    if v.fract() != 0.0 {
        return Err(DataError::Malformed {
            line,
            reason: format!("non-integer label {tok:?}"),
        });
    }
    if v == -1.0 {
        Ok(0)
    } else if (0.0..=u32::MAX as f64).contains(&v) {
        Ok(v as u32)
    } else {
        Err(DataError::Malformed {
            line,
            reason: format!("label {tok:?} out of range"),
        })
    }
}

/// Render rows back to text (1-based indices, `+1`/`-1` for binary labels).
pub fn render(rows: &SparseRows, binary: bool) -> String {
    let mut out = String::new();
    for (inst, &y) in rows.instances.iter().zip(&rows.labels) {
        let label = if binary {
            if y == 1 { "+1".to_string() } else { "-1".to_string() }
        } else {
            y.to_string()
        };
        out.push_str(&label);
        for &(f, v) in &inst.features {
            out.push_str(&format!(" {}:{}", f + 1, v));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_row_parses_to_shifted_indices() {
        let rows = parse("+1 3:1 11:1\n").unwrap();
        assert_eq!(rows.labels, vec![1]);
        assert_eq!(rows.instances[0].features, vec![(2, 1.0), (10, 1.0)]);
        assert_eq!(rows.n_features, 11);
    }

    #[test]
    fn negative_one_label_becomes_class_zero() {
        let rows = parse("-1 1:0.5\n+1 2:2.25\n").unwrap();
        assert_eq!(rows.labels, vec![0, 1]);
    }

    #[test]
    fn multiclass_integer_labels_pass_through() {
        let rows = parse("7 1:1\n0 2:1\n").unwrap();
        assert_eq!(rows.labels, vec![7, 0]);
    }

    #[test]
    fn blank_lines_and_comments_are_skipped() {
        let rows = parse("\n+1 1:1 # tail comment\n\n-1 1:0\n").unwrap();
        assert_eq!(rows.labels.len(), 2);
        assert_eq!(rows.instances[0].features, vec![(0, 1.0)]);
    }

    #[test]
    fn malformed_rows_report_their_line() {
        let err = parse("+1 1:1\n+1 oops\n").unwrap_err();
        match err {
            DataError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse("+1 0:1\n").is_err(), "zero index rejected");
        assert!(parse("+1 2:1 1:1\n").is_err(), "order enforced");
        assert!(parse("1.5 1:1\n").is_err(), "fractional label rejected");
    }

    #[test]
    fn render_round_trips() {
        let src = "+1 3:1 11:0.5\n-1 1:2\n";
        let rows = parse(src).unwrap();
        assert_eq!(render(&rows, true), src);
        let again = parse(&render(&rows, true)).unwrap();
        assert_eq!(again, rows);
    }
}
