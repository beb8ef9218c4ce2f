//! Hierarchy files: one line per finest class, `fine_id,...,coarse_id,name`.
//!
//! Blank lines and lines starting with `#` are ignored, as is a header line
//! whose first field is not an integer. Ids at each level must form a dense
//! range starting at 0.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::DataError;
use crate::hierarchy::{ClassId, HierarchyError, LabelHierarchy};

pub fn load_hierarchy(path: &Path) -> Result<LabelHierarchy, DataError> {
    let text = fs::read_to_string(path).map_err(DataError::io(path))?;
    parse_hierarchy(&text)
}

pub fn parse_hierarchy(text: &str) -> Result<LabelHierarchy, DataError> {
    let mut rows: Vec<(usize, Vec<ClassId>, String)> = Vec::new();
    let mut levels: Option<usize> = None;
    let mut seen_data = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if !seen_data && fields[0].parse::<u64>().is_err() {
            // header
            seen_data = true;
            continue;
        }
        seen_data = true;
        if fields.len() < 2 {
            return Err(DataError::Parse {
                line: line_no,
                msg: "expected at least one class id and a name".into(),
            });
        }
        let n = fields.len() - 1;
        match levels {
            None => levels = Some(n),
            Some(l) if l != n => {
                return Err(DataError::Parse {
                    line: line_no,
                    msg: format!("{n} class ids, previous lines have {l}"),
                })
            }
            _ => {}
        }
        let mut ids = Vec::with_capacity(n);
        for f in &fields[..n] {
            let id: ClassId = f.parse().ok().filter(|&v: &ClassId| v != ClassId::MAX).ok_or_else(|| DataError::Parse {
                line: line_no,
                msg: format!("invalid class id `{f}`"),
            })?;
            ids.push(id);
        }
        if let Some((prev, _, _)) = rows.iter().find(|(_, r, _)| r[0] == ids[0]) {
            return Err(DataError::Parse {
                line: line_no,
                msg: format!("duplicate fine id {} (first defined on line {prev})", ids[0]),
            });
        }
        rows.push((line_no, ids, fields[n].to_string()));
    }
    let Some(n) = levels else {
        return Err(HierarchyError::Empty.into());
    };
    // ids per row run finest -> coarsest; level index l (1-based) is ids[n - l]
    let fine = rows.len();
    let mut counts = vec![0usize; n];
    for l in 1..=n {
        let distinct: std::collections::BTreeSet<ClassId> = rows.iter().map(|(_, ids, _)| ids[n - l]).collect();
        let max = *distinct.iter().next_back().expect("non-empty") as usize;
        if max + 1 != distinct.len() {
            return Err(DataError::Invalid(format!(
                "level {l} ids are not a dense range 0..{}",
                distinct.len()
            )));
        }
        counts[l - 1] = distinct.len();
    }
    debug_assert_eq!(counts[n - 1], fine);
    let mut parents = Vec::with_capacity(n.saturating_sub(1));
    for l in 2..=n {
        let mut map: BTreeMap<ClassId, (ClassId, usize)> = BTreeMap::new();
        for (line_no, ids, _) in &rows {
            let child = ids[n - l];
            let parent = ids[n - l + 1];
            match map.get(&child) {
                Some(&(p, first)) if p != parent => {
                    return Err(DataError::Parse {
                        line: *line_no,
                        msg: format!(
                            "level {l} class {child} has parent {parent}, but line {first} gives {p}"
                        ),
                    })
                }
                Some(_) => {}
                None => {
                    map.insert(child, (parent, *line_no));
                }
            }
        }
        parents.push(map.values().map(|&(p, _)| p).collect());
    }
    let mut names = vec![String::new(); fine];
    for (_, ids, name) in rows {
        names[ids[0] as usize] = name;
    }
    Ok(LabelHierarchy::new(counts, parents, names)?)
}

/// Writes `h`, preceded by `echo` as `# key = value` comment lines.
pub fn write_hierarchy(path: &Path, h: &LabelHierarchy, echo: &[(String, String)]) -> Result<(), DataError> {
    let n = h.levels();
    let mut out = String::new();
    for (k, v) in echo {
        let _ = writeln!(out, "# {k} = {v}");
    }
    let header: Vec<String> = (1..=n).rev().map(|l| format!("level{l}_id")).collect();
    let _ = writeln!(out, "{},name", header.join(","));
    for fine in 0..h.finest_classes() {
        let lineage = h.lineage(fine as ClassId);
        let ids: Vec<String> = lineage.iter().rev().map(ToString::to_string).collect();
        let _ = writeln!(out, "{},{}", ids.join(","), h.names()[fine]);
    }
    fs::write(path, out).map_err(DataError::io(path))
}
